"""Method-of-moments initialization from patch score moments.

For Gaussian inputs the label-weighted Hermite moments of every patch are

    M2 = E[y (x_i x_i^T - I)]           = sum_j (gamma2 - gamma0)(|w_j|) wbar_j wbar_j^T
    M3 = E[y (x_i^{(3)} - x_i ~(x) I)]  = sum_j (gamma3 - 3 gamma1)(|w_j|) wbar_j^{(3)}

with ``wbar_j = w_j / |w_j|``.  We whiten with ``M2``, run the robust tensor
power method on the whitened ``t x t x t`` tensor, un-whiten the recovered
components and finally invert the gamma-coefficients for the kernel norms.
"""

from dataclasses import dataclass
import itertools
import warnings

import numpy as np

from .activation import get_activation, moment_profile
from .errors import (
    ConfigError, DecompositionError, MagnitudeRecoveryError, NumericalError, RankDeficiencyError,
)
from .model import ProblemConfig, SampleSet, patches
from .rng import substream

MAX_K = 64


@dataclass
class MomentEstimates:
    m2: np.ndarray
    m3: np.ndarray
    n_used: int


@dataclass
class DecompositionResult:
    directions: np.ndarray  # k x t, unit columns
    coeffs3: np.ndarray
    coeffs2: np.ndarray
    residual: float
    eigenvalues: np.ndarray = None  # whitened-tensor weights
    converged: np.ndarray = None


@dataclass
class TensorInitOptions:
    n_restarts: int = None  # default 10 * t
    n_iters: int = 100
    seed: int = 0


def tilde_outer(v) -> np.ndarray:
    """``T_abc = v_a d_bc + v_b d_ac + v_c d_ab`` (the debiasing term of the third moment)."""
    v = np.asarray(v, dtype=float)
    I = np.eye(len(v))
    return (np.einsum("a,bc->abc", v, I) + np.einsum("b,ac->abc", v, I)
            + np.einsum("c,ab->abc", v, I))


def symmetrize3(T) -> np.ndarray:
    """Average of a 3-tensor over all six index permutations."""
    return sum(np.transpose(T, p) for p in itertools.permutations(range(3))) / 6.0


def rank_one3(v) -> np.ndarray:
    return np.einsum("a,b,c->abc", v, v, v)


def multilinear(T, A, B=None, C=None) -> np.ndarray:
    """``T(A, B, C)``, contracting mode ``m`` of ``T`` with the rows of each factor."""
    B = A if B is None else B
    C = A if C is None else C
    return np.einsum("abc,ai,bj,ck->ijk", T, A, B, C)


def estimate_moments(S: SampleSet, cfg: ProblemConfig = None) -> MomentEstimates:
    """Patch-averaged empirical ``M2`` and ``M3``."""
    cfg = S.cfg if cfg is None else cfg
    k, r = cfg.k, cfg.r
    if k > MAX_K:
        raise ConfigError(f"dense third moments are limited to k <= {MAX_K}")
    n = len(S)
    if n * r < k:
        raise RankDeficiencyError(f"{n} samples give {n * r} patches, fewer than k={k}; "
                                  "the second moment cannot be whitened")
    P = patches(S.inputs, cfg)
    y = S.labels
    norm = 1.0 / (n * r)
    flat = P.reshape(-1, k)
    yy = np.repeat(y, r)
    yflat = flat * yy[:, None]
    yx = yflat.sum(axis=0) * norm
    m2 = (yflat.T @ flat) * norm - y.mean() * np.eye(k)
    pairs = (flat[:, :, None] * flat[:, None, :]).reshape(len(flat), k * k)
    m3 = (yflat.T @ pairs).reshape(k, k, k) * norm - tilde_outer(yx)
    return MomentEstimates(0.5 * (m2 + m2.T), symmetrize3(m3), n)


def _top_eigs(m2, t):
    m2 = np.asarray(m2, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (m2 + m2.T))
    order = np.argsort(-np.abs(vals))[:t]
    return vals[order], vecs[:, order]


def m2_sign(m2, t: int) -> float:
    """Common sign of the ``t`` largest-magnitude eigenvalues of ``m2``."""
    vals, _ = _top_eigs(m2, t)
    return 1.0 if vals.sum() >= 0 else -1.0


def whiten(m2, t: int):
    """Whitening matrix for the top-``t`` eigenspace of ``m2``.

    Returns ``(whitener, basis)`` with ``whitener^T (s m2) whitener = I_t``,
    where ``s = m2_sign(m2, t)`` flips an all-negative spectrum.
    """
    vals, vecs = _top_eigs(m2, t)
    s = 1.0 if vals.sum() >= 0 else -1.0
    vals = s * vals
    if len(vals) < t or vals.min() <= 1e-10 * np.abs(vals).max():
        raise RankDeficiencyError(
            f"second moment has fewer than t={t} same-signed eigenvalues above 1e-10 of the "
            f"largest (eigenvalues {np.round(s * vals, 12).tolist()}); gamma2 - gamma0 may vanish"
        )
    return vecs / np.sqrt(vals), vecs


def power_iteration(T, n_restarts: int, n_iters: int, gen, tol: float = 1e-10):
    """Best of ``n_restarts`` tensor power iterations on a symmetric 3-tensor.

    Returns ``(weight, vector, converged)`` for the restart with the largest
    ``|T(v, v, v)|``, sign-normalised so that the weight is non-negative.
    """
    m = T.shape[0]
    best = None
    for _ in range(n_restarts):
        v = gen.standard_normal(m)
        v /= np.linalg.norm(v)
        ok = False
        for _ in range(n_iters):
            u = np.einsum("abc,b,c->a", T, v, v)
            nu = np.linalg.norm(u)
            if nu == 0:
                break
            u /= nu
            if abs(u @ v) > 1 - tol:
                v = u
                ok = True
                break
            v = u
        lam = float(np.einsum("abc,a,b,c->", T, v, v, v))
        if best is None or (ok, abs(lam)) > (best[2], abs(best[0])):
            best = (lam, v, ok)
    lam, v, ok = best
    if lam < 0:
        lam, v = -lam, -v
    return lam, v, ok


def decompose(m3, whitener, t: int, n_restarts: int = None, n_iters: int = 100, seed: int = 0,
              sign: float = 1.0) -> DecompositionResult:
    """Symmetric CP decomposition of ``m3`` through whitening and deflation.

    ``sign`` is the whitening sign of the second moment (see ``m2_sign``);
    ``coeffs2`` are the implied second-moment weights of each direction,
    ``coeffs3`` the third-moment weights (non-negative by construction, the
    direction carrying the sign).
    """
    m3 = np.asarray(m3, dtype=float)
    Wh = np.asarray(whitener, dtype=float)
    if Wh.ndim != 2 or Wh.shape[1] != t or Wh.shape[0] != m3.shape[0]:
        raise ConfigError(f"whitener must have shape ({m3.shape[0]}, {t})")
    n_restarts = 10 * t if n_restarts is None else n_restarts
    gen = substream(seed, "power_method")
    T = multilinear(m3, Wh)
    unwhiten = np.linalg.pinv(Wh).T  # k x t, maps whitened unit vectors back
    weights, vectors, flags = [], [], []
    for _ in range(t):
        lam, v, ok = power_iteration(T, n_restarts, n_iters, gen)
        weights.append(lam)
        vectors.append(v)
        flags.append(ok)
        T = T - lam * rank_one3(v)
    if not any(flags):
        raise DecompositionError(
            f"tensor power iteration did not converge in {n_iters} iterations for any component"
        )
    V = np.array(vectors).T
    B = unwhiten @ V
    a = (B**2).sum(axis=0)
    dirs = B / np.sqrt(a)
    coeffs2 = sign * a
    coeffs3 = np.array(weights) * a**1.5
    cos = np.abs(dirs.T @ dirs) - np.eye(t)
    if t > 1 and cos.max() > 0.99:
        warnings.warn("decomposition returned nearly collinear components", RuntimeWarning)
    proj = Wh @ unwhiten.T  # projector onto the whitened subspace
    target = multilinear(m3, proj.T)
    recon = sum(c * rank_one3(d) for c, d in zip(coeffs3, dirs.T))
    denom = np.linalg.norm(target)
    residual = float(np.linalg.norm(target - recon) / denom) if denom > 0 else 0.0
    return DecompositionResult(dirs, coeffs3, coeffs2, residual, np.array(weights), np.array(flags))


def _coeff2(act, sigma):
    m = moment_profile(act, sigma)
    return m.gamma2 - m.gamma0


def _coeff3(act, sigma):
    m = moment_profile(act, sigma)
    return m.gamma3 - 3 * m.gamma1


def invert_coeff2(act, c2: float) -> float:
    """Solve ``gamma2(s) - gamma0(s) = c2`` for the kernel norm ``s > 0``."""
    act = get_activation(act)
    if c2 == 0 or not np.isfinite(c2):
        raise MagnitudeRecoveryError(f"second-moment coefficient {c2} cannot be inverted")
    if act.homogeneous:
        base = _coeff2(act, 1.0)
        ratio = c2 / base if base != 0 else -1.0
        if ratio <= 0:
            raise MagnitudeRecoveryError(
                f"coefficient {c2} has the wrong sign for {act.kind} (unit value {base})"
            )
        return float(ratio ** (1.0 / (act.p + 1)))
    guess = np.sqrt(abs(c2))

    def g(s):
        try:
            return _coeff2(act, s) - c2
        except NumericalError as exc:
            raise MagnitudeRecoveryError(f"cannot invert gamma2 - gamma0 = {c2}: {exc}") from None

    lo, hi = guess, guess
    glo = ghi = g(guess)
    while glo * ghi > 0:
        lo, hi = lo / 2, hi * 2
        if lo < 1e-6 * guess or hi > 1e3 * guess:
            raise MagnitudeRecoveryError(
                f"no root of gamma2 - gamma0 = {c2} for {act.kind} in "
                f"[{1e-6 * guess:.3g}, {1e3 * guess:.3g}]"
            )
        glo, ghi = g(lo), g(hi)
        if glo * g(guess) <= 0:
            hi, ghi = guess, g(guess)
        elif ghi * g(guess) <= 0:
            lo, glo = guess, g(guess)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if gm * glo <= 0:
            hi = mid
        else:
            lo, glo = mid, gm
    return 0.5 * (lo + hi)


def recover_magnitudes(dec: DecompositionResult, act):
    """Kernel norms and direction signs from the decomposition coefficients."""
    act = get_activation(act)
    norms, signs = [], []
    for c2, c3 in zip(dec.coeffs2, dec.coeffs3):
        s = invert_coeff2(act, float(c2))
        expected = _coeff3(act, s)
        if abs(expected) < 1e-8:
            raise MagnitudeRecoveryError(
                f"gamma3 - 3 gamma1 vanishes for {act.kind} at norm {s:.4g}; sign is undetermined"
            )
        norms.append(s)
        signs.append(1 if np.sign(c3) == np.sign(expected) else -1)
    return np.array(norms), np.array(signs)


def tensor_initialize(S0: SampleSet, cfg: ProblemConfig = None, options: TensorInitOptions = None):
    """Estimate the planted weights from one sample set (moments, whiten, decompose, rescale)."""
    cfg = S0.cfg if cfg is None else cfg
    options = TensorInitOptions() if options is None else options
    mom = estimate_moments(S0, cfg)
    Wh, _ = whiten(mom.m2, cfg.t)
    dec = decompose(mom.m3, Wh, cfg.t, options.n_restarts, options.n_iters, options.seed,
                    sign=m2_sign(mom.m2, cfg.t))
    norms, signs = recover_magnitudes(dec, cfg.activation)
    return dec.directions * (norms * signs)
