"""Activation functions, their derivatives and Gaussian moment functionals.

For an activation ``phi`` and scale ``sigma > 0`` with ``z ~ N(0, 1)``::

    alpha_q = E[phi'(sigma z) z^q]      q = 0, 1, 2
    beta_q  = E[phi'(sigma z)^2 z^q]    q = 0, 2
    gamma_j = E[phi(sigma z) z^j]       j = 0, 1, 2, 3
    rho     = min(beta0 - alpha0^2 - alpha1^2, beta2 - alpha1^2 - alpha2^2,
                  alpha0 alpha2 - alpha1^2, alpha0^2)

``rho > 0`` is the positivity condition that makes the population Hessian at
the planted weights positive definite.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math
import threading

import mpmath as mp
import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import erf as _erf, expit

from .errors import ConfigError, NumericalError

KINDS = ("relu", "leaky_relu", "squared_relu", "sigmoid", "tanh", "erf", "quadratic", "linear")
PIECEWISE_LINEAR = ("relu", "leaky_relu")
HOMOGENEOUS = ("relu", "leaky_relu", "squared_relu", "quadratic", "linear")

SQRT2 = math.sqrt(2.0)
SQRT_PI = math.sqrt(math.pi)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

DEFAULT_NODES = 200
MAX_NODES = 3200
QUAD_RTOL = 1e-10
QUAD_ATOL = 1e-14
RHO_TOL = 1e-10


@dataclass(frozen=True)
class Activation:
    """An activation kind plus the constants of the activation properties.

    ``p`` and ``L1`` bound the first derivative, ``0 <= phi'(z) <= L1 |z|^p``;
    ``L2`` bounds ``|phi''|`` for smooth kinds and is ``None`` for the
    piecewise-linear ones.
    """

    kind: str
    slope: float = 0.01

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown activation kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "leaky_relu" and not 0.0 <= self.slope < 1.0:
            raise ConfigError(f"leaky_relu slope must lie in [0, 1), got {self.slope}")

    @property
    def name(self) -> str:
        return self.kind

    @property
    def p(self) -> int:
        return 1 if self.kind in ("squared_relu", "quadratic") else 0

    @property
    def smoothness(self) -> str:
        return "piecewise_linear" if self.kind in PIECEWISE_LINEAR else "smooth"

    @property
    def is_smooth(self) -> bool:
        return self.smoothness == "smooth"

    @property
    def kinks(self) -> tuple:
        return (0.0,) if self.kind in PIECEWISE_LINEAR else ()

    @property
    def homogeneous(self) -> bool:
        return self.kind in HOMOGENEOUS

    @property
    def L1(self) -> float:
        return {
            "relu": 1.0,
            "leaky_relu": 1.0,
            "squared_relu": 2.0,
            "sigmoid": 0.25,
            "tanh": 1.0,
            "erf": 1.0,
            "quadratic": 2.0,
            "linear": 1.0,
        }[self.kind]

    @property
    def L2(self):
        # maxima of |phi''| in closed form for the smooth kinds
        return {
            "relu": None,
            "leaky_relu": None,
            "squared_relu": 2.0,
            "sigmoid": 1.0 / (6.0 * math.sqrt(3.0)),
            "tanh": 4.0 / (3.0 * math.sqrt(3.0)),
            "erf": math.sqrt(2.0 / math.e),
            "quadratic": 2.0,
            "linear": 0.0,
        }[self.kind]

    def phi(self, z):
        z = np.asarray(z, dtype=float)
        k = self.kind
        if k == "relu":
            return np.maximum(z, 0.0)
        if k == "leaky_relu":
            return np.where(z > 0, z, self.slope * z)
        if k == "squared_relu":
            return np.maximum(z, 0.0) ** 2
        if k == "sigmoid":
            return expit(z)
        if k == "tanh":
            return np.tanh(z)
        if k == "erf":
            return 0.5 * SQRT_PI * _erf(z)
        if k == "quadratic":
            return z * z
        return z.copy()

    def dphi(self, z):
        z = np.asarray(z, dtype=float)
        k = self.kind
        if k == "relu":
            return (z > 0).astype(float)
        if k == "leaky_relu":
            return np.where(z > 0, 1.0, self.slope)
        if k == "squared_relu":
            return 2.0 * np.maximum(z, 0.0)
        if k == "sigmoid":
            s = expit(z)
            return s * (1.0 - s)
        if k == "tanh":
            return 1.0 - np.tanh(z) ** 2
        if k == "erf":
            return np.exp(-z * z)
        if k == "quadratic":
            return 2.0 * z
        return np.ones_like(z)

    def d2phi(self, z):
        """Second derivative; zero everywhere (kinks included) for piecewise-linear kinds."""
        z = np.asarray(z, dtype=float)
        k = self.kind
        if k in PIECEWISE_LINEAR or k == "linear":
            return np.zeros_like(z)
        if k == "squared_relu":
            return 2.0 * (z > 0)
        if k == "sigmoid":
            s = expit(z)
            return s * (1.0 - s) * (1.0 - 2.0 * s)
        if k == "tanh":
            th = np.tanh(z)
            return -2.0 * th * (1.0 - th * th)
        if k == "erf":
            return -2.0 * z * np.exp(-z * z)
        return np.full_like(z, 2.0)

    def eval(self, z, order: int = 0):
        if order == 0:
            return self.phi(z)
        if order == 1:
            return self.dphi(z)
        if order == 2:
            return self.d2phi(z)
        raise ConfigError(f"derivative order must be 0, 1 or 2, got {order}")


def get_activation(name, slope: float = 0.01) -> Activation:
    """Look up an activation by its stable lowercase name."""
    if isinstance(name, Activation):
        return name
    return Activation(str(name).strip().lower(), slope)


def evaluate(act, z, order: int = 0):
    """``phi``, ``phi'`` or ``phi''`` of ``act`` at ``z`` (scalar in, float out)."""
    act = get_activation(act)
    out = act.eval(z, order)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=None)
def full_hermite_rule(n: int):
    """Nodes/weights for the integral of ``exp(-u^2) f(u)`` over the real line.

    Golub-Welsch on the Hermite recurrence; unlike ``hermgauss`` this stays
    finite for several hundred nodes (far-tail weights underflow to zero).
    """
    nodes, vecs = eigh_tridiagonal(np.zeros(n), np.sqrt(np.arange(1, n) / 2.0))
    weights = SQRT_PI * vecs[0] ** 2
    # exact mirror symmetry so odd integrands cancel to zero
    return 0.5 * (nodes - nodes[::-1]), 0.5 * (weights + weights[::-1])


_MP_LOCK = threading.Lock()  # mpmath precision is process-global


@lru_cache(maxsize=None)
def half_hermite_rule(n: int):
    """Nodes/weights for the integral of ``exp(-u^2) f(u)`` over ``[0, inf)``.

    Recurrence coefficients come from the moments ``Gamma((m+1)/2)/2`` via
    the Chebyshev algorithm in extended precision; nodes and weights then
    follow from the Jacobi matrix (Golub-Welsch) in double precision.
    """
    with _MP_LOCK, mp.workdps(3 * n + 30):
        mom = [mp.gamma(mp.mpf(m + 1) / 2) / 2 for m in range(2 * n)]
        a = [mp.mpf(0)] * n
        b = [mp.mpf(0)] * n
        a[0] = mom[1] / mom[0]
        b[0] = mom[0]
        prev = [mp.mpf(0)] * (2 * n)
        cur = list(mom)
        for k in range(1, n):
            new = [mp.mpf(0)] * (2 * n)
            for l in range(k, 2 * n - k):
                new[l] = cur[l + 1] - a[k - 1] * cur[l] - b[k - 1] * prev[l]
            a[k] = new[k + 1] / new[k] - cur[k] / cur[k - 1]
            b[k] = new[k] / cur[k - 1]
            prev, cur = cur, new
        diag = np.array([float(x) for x in a])
        off = np.sqrt(np.array([float(x) for x in b[1:]]))
        mass = float(b[0])
    nodes, vecs = eigh_tridiagonal(diag, off)
    return nodes, mass * vecs[0] ** 2


def gaussian_expectation(f, split: bool = False, n_nodes: int = DEFAULT_NODES) -> float:
    """``E[f(z)]`` for ``z ~ N(0, 1)`` by Gauss-Hermite quadrature.

    With ``split=True`` the integral is taken separately over the two
    half-lines, so a kink of ``f`` at zero never lies inside a panel.
    """
    if split:
        u, w = half_hermite_rule(n_nodes // 2)
        z = SQRT2 * u
        return float((w @ f(z) + w @ f(-z)) / SQRT_PI)
    u, w = full_hermite_rule(n_nodes)
    return float(w @ f(SQRT2 * u) / SQRT_PI)


# ---------------------------------------------------------------------------
# moment profiles

ALPHA_BETA = ("alpha0", "alpha1", "alpha2", "beta0", "beta2")
GAMMAS = ("gamma0", "gamma1", "gamma2", "gamma3")
MOMENT_NAMES = ALPHA_BETA + GAMMAS


def rho_terms(alpha0, alpha1, alpha2, beta0, beta2):
    return (
        beta0 - alpha0**2 - alpha1**2,
        beta2 - alpha1**2 - alpha2**2,
        alpha0 * alpha2 - alpha1**2,
        alpha0**2,
    )


@dataclass(frozen=True)
class MomentProfile:
    sigma: float
    alpha0: float
    alpha1: float
    alpha2: float
    beta0: float
    beta2: float
    gamma0: float
    gamma1: float
    gamma2: float
    gamma3: float
    closed_form: tuple = field(default=(), compare=False)

    @property
    def rho_terms(self):
        return rho_terms(self.alpha0, self.alpha1, self.alpha2, self.beta0, self.beta2)

    @property
    def rho(self) -> float:
        return min(self.rho_terms)

    @property
    def rho_hat(self) -> float:
        """The two-term minimum used by the orthogonal-case lower bound."""
        return min(self.rho_terms[:2])

    def as_dict(self) -> dict:
        d = {name: getattr(self, name) for name in ("sigma",) + MOMENT_NAMES}
        d["rho"] = self.rho
        return d


def table_closed_form(act, sigma: float):
    """Closed-form alpha/beta values from the reference table, or ``None``.

    Only ReLU, leaky ReLU, squared ReLU and erf have exact entries.
    """
    act = get_activation(act)
    s = float(sigma)
    k = act.kind
    if k == "relu":
        return dict(alpha0=0.5, alpha1=INV_SQRT_2PI, alpha2=0.5, beta0=0.5, beta2=0.5)
    if k == "leaky_relu":
        c = act.slope
        return dict(
            alpha0=(1 + c) / 2,
            alpha1=(1 - c) * INV_SQRT_2PI,
            alpha2=(1 + c) / 2,
            beta0=(1 + c * c) / 2,
            beta2=(1 + c * c) / 2,
        )
    if k == "squared_relu":
        r = math.sqrt(2 / math.pi)
        return dict(alpha0=s * r, alpha1=s, alpha2=2 * s * r, beta0=2 * s * s, beta2=6 * s * s)
    if k == "erf":
        a = 2 * s * s + 1
        b = 4 * s * s + 1
        return dict(alpha0=a**-0.5, alpha1=0.0, alpha2=a**-1.5, beta0=b**-0.5, beta2=b**-1.5)
    return None


def rho_erf(sigma: float) -> float:
    a = 2 * sigma**2 + 1
    b = 4 * sigma**2 + 1
    return min(b**-0.5 - a**-1, b**-1.5 - a**-3, a**-2)


def _integrands(act: Activation, sigma: float):
    d1 = act.dphi
    f0 = act.phi
    return {
        "alpha0": lambda z: d1(sigma * z),
        "alpha1": lambda z: d1(sigma * z) * z,
        "alpha2": lambda z: d1(sigma * z) * z**2,
        "beta0": lambda z: d1(sigma * z) ** 2,
        "beta2": lambda z: d1(sigma * z) ** 2 * z**2,
        "gamma0": lambda z: f0(sigma * z),
        "gamma1": lambda z: f0(sigma * z) * z,
        "gamma2": lambda z: f0(sigma * z) * z**2,
        "gamma3": lambda z: f0(sigma * z) * z**3,
    }


def converged_expectation(f, split: bool = False, n_nodes: int = DEFAULT_NODES,
                          max_nodes: int = MAX_NODES) -> float:
    """Gaussian expectation with node doubling until two rules agree.

    Agreement is judged relative to ``E|f|`` so that integrals which cancel
    to zero are handled.  Returns the finer of the first agreeing pair;
    raises ``NumericalError`` with both values when ``max_nodes`` is reached.
    """
    n = n_nodes
    coarse = gaussian_expectation(f, split, n)
    scale = gaussian_expectation(lambda z: np.abs(f(z)), split, n)
    while True:
        fine = gaussian_expectation(f, split, 2 * n)
        if abs(fine - coarse) <= QUAD_ATOL + QUAD_RTOL * scale:
            return fine
        if 2 * n >= max_nodes:
            raise NumericalError(
                f"quadrature did not converge: {n} nodes -> {coarse!r}, {2 * n} nodes -> {fine!r}"
            )
        n, coarse = 2 * n, fine


def quadrature_moments(act, sigma: float, n_nodes: int = DEFAULT_NODES) -> dict:
    """All nine moments by quadrature.

    Kinked kinds (and squared ReLU, whose second derivative jumps at zero)
    use the split half-line rule, which is exact on each polynomial piece.
    """
    act = get_activation(act)
    split = not act.is_smooth or act.kind == "squared_relu"
    out = {}
    for name, f in _integrands(act, float(sigma)).items():
        try:
            out[name] = converged_expectation(f, split, n_nodes, 2 * n_nodes if split else MAX_NODES)
        except NumericalError as exc:
            raise NumericalError(f"{name} of {act.kind} at sigma={sigma}: {exc}") from None
    return out


def moment_profile(act, sigma: float, n_nodes: int = DEFAULT_NODES) -> MomentProfile:
    """Moment functionals of ``act`` at scale ``sigma``.

    Table closed forms replace the quadrature values wherever they exist;
    both routes must agree to 1e-6 (relative) or a ``NumericalError`` is raised.
    """
    act = get_activation(act)
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    vals = quadrature_moments(act, sigma, n_nodes)
    exact = table_closed_form(act, sigma) or {}
    for name, v in exact.items():
        if abs(vals[name] - v) > 1e-6 * max(1.0, abs(v)):
            raise NumericalError(
                f"{act.kind} {name}(sigma={sigma}): quadrature {vals[name]!r} vs closed form {v!r}"
            )
        vals[name] = v
    return MomentProfile(sigma=float(sigma), closed_form=tuple(sorted(exact)), **vals)


def rho(act, sigma: float) -> float:
    return moment_profile(act, sigma).rho


# ---------------------------------------------------------------------------
# property checks


@dataclass
class PropertyReport:
    activation: str
    property1: bool
    property2: bool
    property3: bool
    branch: str
    rho: dict
    failures: list

    @property
    def all_pass(self) -> bool:
        return self.property1 and self.property2 and self.property3


def check_properties(act, sigma_grid, z_grid=None) -> PropertyReport:
    """Grid checks of the three activation properties.

    Failures are collected in the report rather than raised.
    """
    act = get_activation(act)
    sigma_grid = [float(s) for s in sigma_grid]
    if not sigma_grid:
        raise ConfigError("sigma_grid must be non-empty")
    z = np.linspace(-10.0, 10.0, 2001) if z_grid is None else np.asarray(z_grid, float)
    failures = []

    d1 = act.dphi(z)
    bound = act.L1 * np.abs(z) ** act.p
    p1 = bool(np.all(d1 >= 0) and np.all(d1 <= bound + 1e-12))
    if not p1:
        failures.append("property1: phi' not within [0, L1 |z|^p] on the grid")

    rhos = {}
    for s in sigma_grid:
        try:
            rhos[s] = moment_profile(act, s).rho
        except NumericalError as exc:
            rhos[s] = float("nan")
            failures.append(f"property2: {exc}")
    # rho of linear is 0 analytically but ~1e-15 after rounding
    p2 = all(r > RHO_TOL for r in rhos.values())
    if not p2:
        bad = [s for s, r in rhos.items() if not r > RHO_TOL]
        failures.append(f"property2: rho <= 0 at sigma in {bad}")

    d2 = act.d2phi(z)
    if act.is_smooth:
        branch = "a"
        p3 = bool(np.all(np.abs(d2) <= act.L2 + 1e-12))
    else:
        branch = "b"
        away = np.all(np.abs(z[:, None] - np.array(act.kinks)[None, :]) > 0, axis=1)
        p3 = bool(np.all(d2[away] == 0))
    if not p3:
        failures.append(f"property3({branch}) violated on the grid")

    return PropertyReport(act.kind, p1, p2, p3, branch, rhos, failures)
