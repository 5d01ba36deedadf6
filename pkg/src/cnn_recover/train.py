"""Gradient descent on the empirical risk and the full recovery pipeline."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, NumericalError
from .model import ProblemConfig, SampleSet, _check_weights
from .risk import gradient, loss_and_gradient, nominal_bounds
from .rng import substream
from .tensor_init import TensorInitOptions, tensor_initialize

DENSE_TRACE_ITERS = 1000
SPARSE_TRACE_EVERY = 10
TAIL_POINTS = 50
TAIL_FLOOR = 1e-12


@dataclass
class TrainConfig:
    """``step_size`` is a positive float or ``"auto"`` (``1 / (t r^2 s1^{2p})``
    with ``s1`` the top singular value of the initial iterate)."""

    step_size: object = "auto"
    max_iters: int = 1000
    tol: float = 1e-12
    resample: bool = False
    seed: int = 0
    init: str = "tensor"  # "tensor" | "gaussian"
    init_scale: float = 1.0
    tensor_options: TensorInitOptions = None

    def __post_init__(self):
        if self.step_size != "auto" and not (isinstance(self.step_size, (int, float)) and self.step_size > 0):
            raise ConfigError(f"step_size must be positive or 'auto', got {self.step_size!r}")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.tol < 0:
            raise ConfigError("tol must be >= 0")
        if self.init not in ("tensor", "gaussian"):
            raise ConfigError(f"init must be 'tensor' or 'gaussian', got {self.init!r}")


@dataclass
class TraceRecord:
    iter: int
    loss: float
    dist: float
    grad_norm: float


@dataclass
class TrainReport:
    trace: list
    final_W: np.ndarray
    converged: bool
    rate_estimate: float
    tail_r2: float
    samples_consumed: int
    step_size: float
    init_W: np.ndarray = None
    resample: bool = False
    iterations: int = 0

    @property
    def losses(self) -> np.ndarray:
        return np.array([rec.loss for rec in self.trace])

    @property
    def iters(self) -> np.ndarray:
        return np.array([rec.iter for rec in self.trace])


def gd_step(W, S: SampleSet, eta: float, cfg: ProblemConfig = None) -> np.ndarray:
    """``W - eta * grad``; raises ``NumericalError`` on a non-finite gradient."""
    if eta < 0:
        raise ConfigError("eta must be non-negative")
    W = np.asarray(W, dtype=float)
    if eta == 0:
        return W.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        g = gradient(W, S, cfg)
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite gradient")
    return W - eta * g


def partition_indices(n: int, m: int, seed: int = 0) -> list:
    if m < 1:
        raise ConfigError("m must be >= 1")
    if n < m:
        raise ConfigError(f"cannot split {n} samples into {m} parts")
    if m == 1:
        return [np.arange(n)]
    size = n // m
    perm = substream(seed, "partition").permutation(n)
    return [np.sort(perm[i * size:(i + 1) * size]) for i in range(m)]


def partition(S: SampleSet, m: int, seed: int = 0) -> list:
    """``m`` disjoint random subsets of size ``len(S) // m`` (remainder dropped)."""
    return [S.subset(idx) for idx in partition_indices(len(S), m, seed)]


def auto_step_size(W, cfg: ProblemConfig) -> float:
    s1 = np.linalg.norm(np.asarray(W, dtype=float), 2)
    return 1.0 / (cfg.t * cfg.r**2 * s1 ** (2 * cfg.activation.p))


def tail_fit(iters, losses, n_points: int = TAIL_POINTS, floor: float = TAIL_FLOOR):
    """Least-squares line through ``log(loss)`` over the last points above ``floor``.

    Returns ``(per-iteration contraction exp(slope), R^2)``; ``(nan, nan)``
    with fewer than three usable points.
    """
    iters = np.asarray(iters, dtype=float)
    losses = np.asarray(losses, dtype=float)
    keep = losses > floor
    x, y = iters[keep][-n_points:], np.log(losses[keep][-n_points:])
    if len(x) < 3:
        return float("nan"), float("nan")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    fit = A @ coef
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - ((y - fit) ** 2).sum() / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(coef[0])), float(r2)


def _record(q: int, T: int) -> bool:
    return q <= DENSE_TRACE_ITERS or q % SPARSE_TRACE_EVERY == 0 or q == T


def learn_cnn(S: SampleSet, T: int, cfg: ProblemConfig = None, train_cfg: TrainConfig = None,
              Wstar=None, W0=None) -> TrainReport:
    """Initialize, then run ``T`` plain gradient-descent steps.

    With ``resample=True`` the data are split into ``T + 1`` disjoint parts:
    part 0 feeds the tensor initialization and part ``q + 1`` the gradient of
    step ``q``.  Without resampling, part 0 still feeds the initialization
    and every step uses the remaining pool (all of ``S`` when ``W0`` is given
    or the initialization is Gaussian).  Recording is dense for the first
    1000 iterations and every 10th after that.
    """
    cfg = S.cfg if cfg is None else cfg
    train_cfg = TrainConfig(max_iters=T) if train_cfg is None else train_cfg
    if T < 1:
        raise ConfigError("T must be >= 1")
    need_tensor = W0 is None and train_cfg.init == "tensor"

    if train_cfg.resample:
        parts = partition(S, T + 1, train_cfg.seed)
        S0, step_sets = parts[0], parts[1:]
    elif need_tensor:
        idx0 = partition_indices(len(S), T + 1, train_cfg.seed)[0]
        S0 = S.subset(idx0)
        step_sets = [S.subset(np.setdiff1d(np.arange(len(S)), idx0))]
    else:
        S0, step_sets = None, [S]

    if W0 is not None:
        W = _check_weights(W0, cfg).copy()
    elif need_tensor:
        opts = train_cfg.tensor_options or TensorInitOptions(seed=train_cfg.seed)
        W = tensor_initialize(S0, cfg, opts)
    else:
        gen = substream(train_cfg.seed, "gaussian_init")
        W = train_cfg.init_scale * gen.standard_normal((cfg.k, cfg.t))
    W_init = W.copy()

    eta = auto_step_size(W, cfg) if train_cfg.step_size == "auto" else float(train_cfg.step_size)
    consumed = (len(S0) if need_tensor else 0)
    consumed += sum(len(s) for s in step_sets) if train_cfg.resample else len(step_sets[0])

    def dist(W):
        return float(np.linalg.norm(W - Wstar)) if Wstar is not None else float("nan")

    trace = []
    converged = False
    q = 0
    while True:
        Sq = step_sets[min(q, len(step_sets) - 1)] if train_cfg.resample else step_sets[0]
        with np.errstate(over="ignore", invalid="ignore"):
            loss, g = loss_and_gradient(W, Sq, cfg)
        if not (np.isfinite(loss) and np.all(np.isfinite(g))):
            report = _report(trace, W, False, eta, consumed, W_init, train_cfg, q)
            raise DivergenceError(f"non-finite loss at iteration {q}", report)
        if _record(q, T) or loss < train_cfg.tol:
            trace.append(TraceRecord(q, loss, dist(W), float(np.linalg.norm(g))))
        if loss < train_cfg.tol:
            converged = True
            break
        if q == T:
            break
        W = W - eta * g
        q += 1
    return _report(trace, W, converged, eta, consumed, W_init, train_cfg, q)


def _report(trace, W, converged, eta, consumed, W_init, train_cfg, q):
    rate, r2 = tail_fit([r.iter for r in trace], [r.loss for r in trace])
    return TrainReport(trace, W, converged, rate, r2, consumed, eta, W_init,
                       train_cfg.resample, q)


def contraction_check(Wnear, Wstar, S: SampleSet, cfg: ProblemConfig = None):
    """One step of size ``1/M0`` from ``Wnear``: returns ``(ratio, 1 - m0/M0)``.

    ``ratio = |W' - W*|_F^2 / |Wnear - W*|_F^2`` (0 when ``Wnear == W*``).
    """
    cfg = S.cfg if cfg is None else cfg
    Wnear = _check_weights(Wnear, cfg)
    Wstar = _check_weights(Wstar, cfg)
    m0, M0 = nominal_bounds(Wstar, cfg.activation, cfg.r)
    before = np.linalg.norm(Wnear - Wstar) ** 2
    if before == 0:
        return 0.0, 1.0 - m0 / M0
    after = np.linalg.norm(gd_step(Wnear, S, 1.0 / M0, cfg) - Wstar) ** 2
    return float(after / before), 1.0 - m0 / M0
