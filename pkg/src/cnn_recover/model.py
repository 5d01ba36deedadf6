"""The planted non-overlapping CNN: patches, forward pass, ground truth and data.

An input ``x`` of dimension ``d = r * k`` is cut into ``r`` contiguous,
disjoint patches of length ``k``; each of the ``t`` kernels (columns of the
``k x t`` weight matrix) is applied to every patch and all activations are
summed into a scalar output.
"""

from dataclasses import dataclass, field
import hashlib
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .activation import Activation, get_activation, moment_profile
from .errors import ConfigError
from .rng import blocked_normals, substream


@dataclass(frozen=True)
class ProblemConfig:
    k: int
    r: int
    t: int
    activation: Activation = field(default_factory=lambda: get_activation("relu"))
    seed: int = 0
    d: int = None

    def __post_init__(self):
        object.__setattr__(self, "activation", get_activation(self.activation))
        for name in ("k", "r", "t"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.t > self.k:
            raise ConfigError(f"number of kernels t={self.t} exceeds patch size k={self.k}")
        if self.d is None:
            object.__setattr__(self, "d", self.r * self.k)
        elif self.d != self.r * self.k:
            raise ConfigError(f"d={self.d} must equal r*k={self.r * self.k}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def n_params(self) -> int:
        return self.k * self.t

    def fingerprint(self) -> str:
        text = f"d={self.d};k={self.k};r={self.r};t={self.t};act={self.activation.kind};" \
               f"slope={self.activation.slope!r};seed={self.seed}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ConditioningReport:
    sigma1: float
    sigmat: float
    kappa: float
    lam: float
    tau: float
    rho_min: float

    @property
    def lambda_(self) -> float:
        return self.lam


@dataclass(frozen=True, eq=False)
class SampleSet:
    """``n`` inputs (rows of ``inputs``) with their noiseless labels."""

    inputs: np.ndarray
    labels: np.ndarray
    cfg: ProblemConfig
    seed: int = 0

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[1] != self.cfg.d:
            raise ConfigError(f"inputs must have shape (n, {self.cfg.d}), got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ConfigError("labels must be a vector with one entry per input")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return len(self)

    @property
    def fingerprint(self) -> str:
        return self.cfg.fingerprint()

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.inputs[idx], self.labels[idx], self.cfg, self.seed)


def _check_weights(W, cfg: ProblemConfig) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim == 1 and cfg.t == 1:
        W = W[:, None]
    if W.shape != (cfg.k, cfg.t):
        raise ConfigError(f"weights must have shape ({cfg.k}, {cfg.t}), got {W.shape}")
    return W


def patch(x, i: int, cfg: ProblemConfig) -> np.ndarray:
    """The ``i``-th patch (1-based) of ``x``: entries ``(i-1)k .. ik-1``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != cfg.d:
        raise ConfigError(f"input has dimension {x.shape[-1]}, expected {cfg.d}")
    if not 1 <= i <= cfg.r:
        raise IndexError(f"patch index {i} outside 1..{cfg.r}")
    return x[..., (i - 1) * cfg.k: i * cfg.k]


def patches(X, cfg: ProblemConfig) -> np.ndarray:
    """All patches at once: ``(n, d) -> (n, r, k)`` (a view, no copy)."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != cfg.d:
        raise ConfigError(f"input has dimension {X.shape[-1]}, expected {cfg.d}")
    return X.reshape(X.shape[:-1] + (cfg.r, cfg.k))


def preactivations(W, X, cfg: ProblemConfig) -> np.ndarray:
    """``w_j . x_i`` for every sample, patch and kernel, shape ``(n, r, t)``."""
    return patches(X, cfg) @ _check_weights(W, cfg)


def forward(W, x, cfg: ProblemConfig):
    """Network output for one input (returns a float) or a batch of rows."""
    z = preactivations(W, x, cfg)
    y = cfg.activation.phi(z).sum(axis=(-2, -1))
    return float(y) if np.ndim(y) == 0 else y


def make_ground_truth(k: int, t: int, kappa_target: float, seed: int = 0) -> np.ndarray:
    """Planted weights ``U diag(1, ..., kappa) V^T`` with equispaced singular values.

    ``U`` (k x t) and ``V`` (t x t) are the Q factors of Gaussian matrices.
    Columns are not renormalized afterwards.
    """
    if kappa_target < 1:
        raise ConfigError(f"kappa must be >= 1, got {kappa_target}")
    if t < 1 or t > k:
        raise ConfigError(f"need 1 <= t <= k, got t={t}, k={k}")
    if t == 1 and kappa_target != 1:
        raise ConfigError("a single kernel has condition number 1")
    gen = substream(seed, "ground_truth")
    U, _ = np.linalg.qr(gen.standard_normal((k, t)))
    V, _ = np.linalg.qr(gen.standard_normal((t, t)))
    sv = np.linspace(1.0, kappa_target, t)
    return (U * sv) @ V.T


def conditioning(W, act, n_grid: int = 64) -> ConditioningReport:
    """Condition numbers ``kappa``, ``lambda`` and ``tau`` of a weight matrix."""
    act = get_activation(act)
    W = np.asarray(W, dtype=float)
    sv = np.linalg.svd(W, compute_uv=False)
    t = W.shape[1]
    if len(sv) < t or not np.all(np.isfinite(sv)) or sv[t - 1] <= 1e-12 * sv[0]:
        raise ConfigError("weight matrix is not of full column rank")
    s1, st = sv[0], sv[t - 1]
    kappa = s1 / st
    lam = float(np.prod(sv[:t] / st))
    grid = np.linspace(st / 2, 1.5 * s1, n_grid + 2)
    rho_min = min(moment_profile(act, s).rho for s in grid)
    tau = (1.5 * s1) ** (4 * act.p) / rho_min**2 if rho_min > 0 else math.inf
    return ConditioningReport(float(s1), float(st), float(kappa), lam, float(tau), float(rho_min))


def sample_dataset(Wstar, cfg: ProblemConfig, n: int, seed: int = None) -> SampleSet:
    """Draw ``n`` i.i.d. standard Gaussian inputs and label them with ``Wstar``.

    Rows are generated in fixed blocks of the ``"data"`` substream, so the
    first ``m`` rows of a larger draw equal a draw of size ``m``.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    seed = cfg.seed if seed is None else seed
    X = blocked_normals(seed, "data", n, cfg.d)
    return SampleSet(X, forward(Wstar, X, cfg), cfg, seed)


def match_columns(W, Wstar):
    """Column permutation of ``W`` closest to ``Wstar`` in Frobenius norm.

    Returns ``(W[:, perm], perm)``.
    """
    W = np.asarray(W, dtype=float)
    Wstar = np.asarray(Wstar, dtype=float)
    cost = ((W[:, :, None] - Wstar[:, None, :]) ** 2).sum(axis=0)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(W.shape[1], dtype=int)
    perm[cols] = rows
    return W[:, perm], perm


def matching_error(W, Wstar) -> float:
    """``min_P ||W P - W*||_F / ||W*||_F`` over column permutations ``P``."""
    Wp, _ = match_columns(W, Wstar)
    return float(np.linalg.norm(Wp - Wstar) / np.linalg.norm(Wstar))
