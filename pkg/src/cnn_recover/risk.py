"""Squared loss of the planted CNN with its exact gradient and Hessian.

Parameters are stacked kernel by kernel, ``vec(W) = [w_1; w_2; ...; w_t]``,
so Hessian block ``(j, l)`` is ``H[j*k:(j+1)*k, l*k:(l+1)*k]``.
"""

from dataclasses import dataclass

import numpy as np

from .activation import get_activation, moment_profile
from .errors import ConfigError, NumericalError
from .model import ProblemConfig, SampleSet, _check_weights, patches, preactivations, sample_dataset
from .rng import derive_seed, normal_blocks

MAX_EIG_DIM = 2048


def _setup(W, S: SampleSet, cfg):
    cfg = S.cfg if cfg is None else cfg
    if len(S) == 0:
        raise ConfigError("empty sample set")
    return _check_weights(W, cfg), cfg


def residuals(W, S: SampleSet, cfg: ProblemConfig = None) -> np.ndarray:
    W, cfg = _setup(W, S, cfg)
    z = preactivations(W, S.inputs, cfg)
    return cfg.activation.phi(z).sum(axis=(1, 2)) - S.labels


def empirical_risk(W, S: SampleSet, cfg: ProblemConfig = None) -> float:
    """``(1 / 2n) sum (f(x) - y)^2``."""
    res = residuals(W, S, cfg)
    return float(res @ res / (2 * len(res)))


def _patch_sum(A, P) -> np.ndarray:
    """``sum_i A[s, i, j] P[s, i, :]`` as a batched matmul, shape ``(n, t, k)``."""
    return np.matmul(A.transpose(0, 2, 1), P)


def gradient_factors(W, X, cfg: ProblemConfig) -> np.ndarray:
    """``sum_i phi'(w_j . x_i) x_i`` per sample and kernel, shape ``(n, t, k)``."""
    P = patches(X, cfg)
    return _patch_sum(cfg.activation.dphi(P @ W), P)


def loss_and_gradient(W, S: SampleSet, cfg: ProblemConfig = None):
    """Empirical risk and its ``k x t`` gradient from a single pass."""
    W, cfg = _setup(W, S, cfg)
    P = patches(S.inputs, cfg)
    z = P @ W
    act = cfg.activation
    res = act.phi(z).sum(axis=(1, 2)) - S.labels
    n = len(res)
    A = (res[:, None, None] * act.dphi(z)).reshape(-1, cfg.t)
    grad = P.reshape(-1, cfg.k).T @ A / n
    return float(res @ res / (2 * n)), grad


def gradient(W, S: SampleSet, cfg: ProblemConfig = None) -> np.ndarray:
    return loss_and_gradient(W, S, cfg)[1]


def _residual_blocks(res, z, P, act) -> np.ndarray:
    """Summed ``res * sum_i phi''(z_ij) x_i x_i^T`` per kernel, shape ``(t, k, k)``."""
    k = P.shape[-1]
    c = (res[:, None, None] * act.d2phi(z)).reshape(-1, z.shape[-1])
    flat = P.reshape(-1, k)
    return np.stack([(flat * c[:, j:j + 1]).T @ flat for j in range(c.shape[1])])


def hessian(W, S: SampleSet, cfg: ProblemConfig = None) -> np.ndarray:
    """Exact ``(tk) x (tk)`` Hessian of the empirical risk.

    The residual-curvature term on the diagonal blocks is dropped for
    piecewise-linear activations, whose second derivative vanishes almost
    surely (kink hits included).
    """
    W, cfg = _setup(W, S, cfg)
    act = cfg.activation
    k, t = cfg.k, cfg.t
    P = patches(S.inputs, cfg)
    z = P @ W
    n = len(S)
    V = _patch_sum(act.dphi(z), P).reshape(n, t * k)
    H = V.T @ V / n
    if act.is_smooth:
        res = act.phi(z).sum(axis=(1, 2)) - S.labels
        D = _residual_blocks(res, z, P, act) / n
        for j in range(t):
            H[j * k:(j + 1) * k, j * k:(j + 1) * k] += D[j]
    return 0.5 * (H + H.T)


def population_hessian_mc(W, cfg: ProblemConfig, n_mc: int = 10**6, seed: int = 0,
                          Wstar=None, block: int = 8192):
    """Monte-Carlo estimate of the population Hessian at ``W``.

    Labels come from ``Wstar`` (``W`` itself when omitted, i.e. the Hessian
    at the ground truth).  Returns ``(H, stderr)`` where ``stderr`` is the
    largest entrywise standard error of the estimate.
    """
    if n_mc < 100:
        raise ConfigError("n_mc must be at least 100")
    W = _check_weights(W, cfg)
    Wstar = W if Wstar is None else _check_weights(Wstar, cfg)
    act = cfg.activation
    k, t = cfg.k, cfg.t
    m = t * k
    total = np.zeros((m, m))
    total_sq = np.zeros((m, m))
    with_residual = act.is_smooth and Wstar is not W
    for _, X in normal_blocks(seed, "population_mc", n_mc, cfg.d, block):
        P = patches(X, cfg)
        z = P @ W
        V = _patch_sum(act.dphi(z), P).reshape(len(X), m)
        h = V[:, :, None] * V[:, None, :]
        if with_residual:
            res = act.phi(z).sum(axis=(1, 2)) - act.phi(P @ Wstar).sum(axis=(1, 2))
            c = np.einsum("s,sij,sia,sib->sjab", res, act.d2phi(z), P, P)
            for j in range(t):
                h[:, j * k:(j + 1) * k, j * k:(j + 1) * k] += c[:, j]
        total += h.sum(axis=0)
        total_sq += (h * h).sum(axis=0)
    mean = total / n_mc
    var = np.maximum(total_sq / n_mc - mean**2, 0.0)
    stderr = float(np.sqrt(var.max() / (n_mc - 1)))
    return 0.5 * (mean + mean.T), stderr


@dataclass
class SpectrumReport:
    lambda_min: float
    lambda_max: float
    eigenvalues: np.ndarray
    m0_nominal: float
    M0_nominal: float
    mc_stderr: float = 0.0


def nominal_bounds(Wstar, act, r: int):
    """``(m0, M0) = (r rho(s_t) / (kappa^2 lambda), t r^2 s_1^{2p})`` with unit constants."""
    act = get_activation(act)
    sv = np.linalg.svd(np.asarray(Wstar, dtype=float), compute_uv=False)
    t = np.asarray(Wstar).shape[1]
    s1, st = sv[0], sv[t - 1]
    kappa = s1 / st
    lam = float(np.prod(sv[:t] / st))
    m0 = r * moment_profile(act, st).rho / (kappa**2 * lam)
    M0 = t * r**2 * s1 ** (2 * act.p)
    return float(m0), float(M0)


def spectrum(H, Wstar, act, r: int = 1, mc_stderr: float = 0.0) -> SpectrumReport:
    """Sorted eigenvalues of a symmetric Hessian plus the nominal bounds."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ConfigError("Hessian must be square")
    if H.shape[0] > MAX_EIG_DIM:
        raise ConfigError(f"dense eigensolver limited to dimension {MAX_EIG_DIM}")
    if np.abs(H - H.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(H).max(initial=0.0)):
        raise ConfigError("Hessian is not symmetric")
    try:
        ev = np.linalg.eigvalsh(H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    m0, M0 = nominal_bounds(Wstar, act, r)
    return SpectrumReport(float(ev[0]), float(ev[-1]), ev, m0, M0, float(mc_stderr))


def hessian_deviation_curve(Wstar, cfg: ProblemConfig, n_grid, seed: int = 0,
                            n_mc: int = 10**6, reference=None):
    """Spectral norm of (empirical - population) Hessian at ``Wstar`` per sample size.

    ``reference`` may carry a precomputed population Hessian; otherwise one
    is estimated with ``n_mc`` Monte-Carlo samples.
    """
    n_grid = [int(n) for n in n_grid]
    if any(b < a for a, b in zip(n_grid, n_grid[1:])):
        raise ConfigError("n_grid must be ascending")
    if reference is None:
        reference, _ = population_hessian_mc(Wstar, cfg, n_mc, derive_seed(seed, "reference"))
    out = []
    for i, n in enumerate(n_grid):
        S = sample_dataset(Wstar, cfg, n, derive_seed(seed, "deviation", i))
        out.append((n, float(np.linalg.norm(hessian(Wstar, S, cfg) - reference, 2))))
    return out


# ---------------------------------------------------------------------------
# finite-difference checks

GRAD_FD_STEP = 1e-5
GRAD_FD_TOL = 1e-5
HESS_FD_STEP = 1e-4
HESS_FD_TOL = 1e-4


def _rel_err(fd, an) -> float:
    scale = np.abs(an).max()
    return float(np.abs(fd - an).max() / scale) if scale > 0 else float(np.abs(fd).max())


def fd_gradient_error(W, S: SampleSet, cfg: ProblemConfig = None, h: float = GRAD_FD_STEP) -> float:
    """``max|fd - grad| / max|grad|`` with central differences of the risk."""
    W, cfg = _setup(W, S, cfg)
    fd = np.zeros_like(W)
    for idx in np.ndindex(*W.shape):
        E = np.zeros_like(W)
        E[idx] = h
        fd[idx] = (empirical_risk(W + E, S, cfg) - empirical_risk(W - E, S, cfg)) / (2 * h)
    return _rel_err(fd, gradient(W, S, cfg))


def fd_hessian_error(W, S: SampleSet, cfg: ProblemConfig = None, h: float = HESS_FD_STEP) -> float:
    """Central differences of the gradient against ``hessian``, same error measure."""
    W, cfg = _setup(W, S, cfg)
    k, t = W.shape
    fd = np.zeros((t * k, t * k))
    for j in range(t):
        for a in range(k):
            E = np.zeros_like(W)
            E[a, j] = h
            col = (gradient(W + E, S, cfg) - gradient(W - E, S, cfg)) / (2 * h)
            fd[:, j * k + a] = col.T.reshape(-1)
    return _rel_err(0.5 * (fd + fd.T), hessian(W, S, cfg))


def away_from_kinks(W, S: SampleSet, cfg: ProblemConfig = None, margin: float = 1e-3) -> SampleSet:
    """Samples whose every pre-activation stays at least ``margin`` from zero.

    Finite differences of a piecewise-linear risk are exact only when no
    step crosses a kink.
    """
    W, cfg = _setup(W, S, cfg)
    z = preactivations(W, S.inputs, cfg)
    keep = np.abs(z).min(axis=(1, 2)) > margin
    return S.subset(np.flatnonzero(keep))
