import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cnn_recover.activation import (
    KINDS, Activation, check_properties, converged_expectation, evaluate, full_hermite_rule,
    gaussian_expectation, get_activation, half_hermite_rule, moment_profile, quadrature_moments, rho,
    rho_erf, table_closed_form,
)
from cnn_recover.errors import ConfigError, NumericalError

SMOOTH = ("squared_relu", "sigmoid", "tanh", "erf", "quadratic", "linear")
RHO_RELU = 0.25 - 1 / (2 * math.pi)

# independent oracle: scipy.integrate.quad against the normal density, split at 0
SCIPY_QUAD = {
    ("sigmoid", 0.5): dict(alpha0=0.23604442243987966, alpha2=0.21100350316053634,
                           beta0=0.056034683259542195, beta2=0.04524595298240881,
                           rho=0.0003177138945658284, gamma1=0.11802221121993989,
                           gamma3=0.3415461740201478),
    ("sigmoid", 1.0): dict(alpha0=0.2066209641419071, alpha2=0.14422448018264789,
                           beta0=0.04483624135019437, beta2=0.023706831815477156,
                           rho=0.0021440185272631196, gamma1=0.20662096414190712,
                           gamma3=0.557466408466462),
    ("sigmoid", 2.0): dict(alpha0=0.1514263774005397, alpha2=0.060527533330296174,
                           beta0=0.029025181403016766, beta2=0.006738147042258271,
                           rho=0.003074564751208157, gamma1=0.3028527548010794,
                           gamma3=0.7267605762627514),
    ("tanh", 0.5): dict(alpha0=0.8264838565676283, alpha2=0.5768979207305915,
                        beta0=0.71737986160311, beta2=0.37930930904763455,
                        rho=0.03430429643620991, gamma1=0.4132419282838141,
                        gamma3=1.1149328169329238),
    ("tanh", 1.0): dict(alpha0=0.6057055096021589, alpha2=0.2421101333211847,
                        beta0=0.4644029024482683, beta2=0.10781035267613236,
                        rho=0.049193036019330526, gamma1=0.6057055096021589,
                        gamma3=1.4535211525255025),
    ("tanh", 2.0): dict(alpha0=0.36473876574306013, alpha2=0.05774838022700741,
                        beta0=0.255950443225209, beta2=0.01872356217264349,
                        rho=0.015388686753800469, gamma1=0.7294775314861204,
                        gamma3=1.5744518234262552),
}


def gammas_closed(kind, s):
    c = 1 / math.sqrt(2 * math.pi)
    if kind == "relu":
        return (s * c, s / 2, 2 * s * c, 1.5 * s)
    if kind == "squared_relu":
        r = math.sqrt(2 / math.pi)
        return (s * s / 2, s * s * r, 1.5 * s * s, 4 * s * s * r)
    if kind == "quadratic":
        return (s * s, 0.0, 3 * s * s, 0.0)
    if kind == "linear":
        return (0.0, s, 0.0, 3 * s)


def test_unknown_kind_and_bad_slope():
    with pytest.raises(ConfigError):
        get_activation("softplus")
    with pytest.raises(ConfigError):
        Activation("leaky_relu", slope=1.5)


def test_name_lookup_normalizes_case():
    assert get_activation(" ReLU ").kind == "relu"
    act = get_activation("tanh")
    assert get_activation(act) is act


@pytest.mark.parametrize("kind", KINDS)
def test_smoothness_tags(kind):
    act = get_activation(kind)
    assert act.is_smooth == (kind not in ("relu", "leaky_relu"))
    assert act.kinks == (() if act.is_smooth else (0.0,))
    assert (act.L2 is None) == (not act.is_smooth)


def test_eval_orders():
    assert evaluate("relu", 2.0) == 2.0
    assert evaluate("relu", -1.0, 1) == 0.0
    assert evaluate("relu", 0.0, 1) == 0.0
    assert evaluate("squared_relu", 3.0, 2) == 2.0
    assert evaluate("erf", 0.0, 1) == 1.0
    assert isinstance(evaluate("tanh", 0.3), float)
    with pytest.raises(ConfigError):
        evaluate("relu", 1.0, 3)


@pytest.mark.parametrize("kind", SMOOTH)
@given(z=st.floats(-6, 6))
def test_derivatives_match_finite_differences(kind, z):
    act = get_activation(kind)
    if kind == "squared_relu" and abs(z) < 1e-3:
        return  # second derivative jumps at 0
    h = 1e-6
    d1 = (act.phi(z + h) - act.phi(z - h)) / (2 * h)
    d2 = (act.dphi(z + h) - act.dphi(z - h)) / (2 * h)
    assert abs(d1 - act.dphi(z)) < 1e-6 * max(1, abs(d1))
    assert abs(d2 - act.d2phi(z)) < 1e-6 * max(1, abs(d2))


@pytest.mark.parametrize("kind", ("relu", "leaky_relu"))
@given(z=st.floats(-6, 6).filter(lambda v: abs(v) > 1e-4))
def test_piecewise_derivatives_away_from_kink(kind, z):
    act = get_activation(kind)
    h = 1e-6
    assert abs((act.phi(z + h) - act.phi(z - h)) / (2 * h) - act.dphi(z)) < 1e-8
    assert act.d2phi(z) == 0.0


@pytest.mark.parametrize("kind", [k for k in KINDS if k != "quadratic"])
@given(z=st.floats(-50, 50))
def test_property1_derivative_bound(kind, z):
    act = get_activation(kind)
    d = float(act.dphi(z))
    assert 0.0 <= d <= act.L1 * abs(z) ** act.p + 1e-12


@pytest.mark.parametrize("kind", ("sigmoid", "tanh", "erf"))
def test_L2_is_the_max_second_derivative(kind):
    act = get_activation(kind)
    z = np.linspace(-5, 5, 200001)
    assert abs(np.abs(act.d2phi(z)).max() - act.L2) < 1e-8


@given(m=st.integers(0, 20))
def test_full_rule_integrates_even_monomials(m):
    exact = float(math.prod(range(2 * m - 1, 0, -2)))
    assert gaussian_expectation(lambda z: z ** (2 * m)) == pytest.approx(exact, rel=1e-10)
    assert abs(gaussian_expectation(lambda z: z ** (2 * m + 1))) < 1e-12 * exact


@given(m=st.integers(0, 30))
def test_half_rule_moments(m):
    u, w = half_hermite_rule(40)
    assert (w * u**m).sum() == pytest.approx(math.gamma((m + 1) / 2) / 2, rel=1e-11)


def test_full_rule_is_mirror_symmetric():
    u, w = full_hermite_rule(401)
    assert np.array_equal(u, -u[::-1]) and np.array_equal(w, w[::-1])


def test_split_expectation_exact_on_kinked_integrand():
    # E|z| = sqrt(2/pi), E[relu(z)^3] = 2/sqrt(2 pi)
    assert gaussian_expectation(np.abs, split=True, n_nodes=20) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-13)
    val = converged_expectation(lambda z: np.maximum(z, 0) ** 3, split=True)
    assert val == pytest.approx(2 / math.sqrt(2 * math.pi), rel=1e-12)


def test_relu_rho_constant():
    for s in (0.3, 1.0, 4.0):
        assert rho("relu", s) == pytest.approx(RHO_RELU, abs=1e-14)


def test_leaky_rho_scales_with_slope():
    for c in (0.0, 0.01, 0.2):
        prof = moment_profile(Activation("leaky_relu", c), 1.0)
        assert prof.rho == pytest.approx((1 - c) ** 2 * RHO_RELU, abs=1e-13)


@given(s=st.floats(0.1, 5))
def test_squared_relu_rho_closed_form(s):
    assert rho("squared_relu", s) == pytest.approx((4 / math.pi - 1) * s * s, rel=1e-12)


@pytest.mark.parametrize("s", (0.25, 0.5, 1.0, 2.0, 3.0))
def test_erf_quadrature_agrees_with_closed_form(s):
    quad = quadrature_moments("erf", s)
    for name, v in table_closed_form("erf", s).items():
        assert abs(quad[name] - v) < 1e-6
    assert moment_profile("erf", s).rho == pytest.approx(rho_erf(s), abs=1e-12)


def test_rho_erf_at_one():
    expected = min(5**-0.5 - 1 / 3, 5**-1.5 - 3**-3, 3**-2)
    assert rho_erf(1.0) == pytest.approx(expected, abs=1e-15)
    assert rho_erf(1.0) == pytest.approx(0.05240568206295455, abs=1e-15)


@pytest.mark.parametrize("kind", ("relu", "squared_relu", "quadratic", "linear"))
@given(s=st.floats(0.1, 5))
def test_gamma_closed_forms(kind, s):
    prof = moment_profile(kind, s)
    got = (prof.gamma0, prof.gamma1, prof.gamma2, prof.gamma3)
    for g, e in zip(got, gammas_closed(kind, s)):
        assert g == pytest.approx(e, rel=1e-10, abs=1e-12)


@given(s=st.floats(0.1, 5))
def test_quadratic_moments(s):
    prof = moment_profile("quadratic", s)
    assert prof.alpha1 == pytest.approx(2 * s, rel=1e-12)
    assert prof.beta0 == pytest.approx(4 * s * s, rel=1e-12)
    assert prof.beta2 == pytest.approx(12 * s * s, rel=1e-12)
    assert abs(prof.alpha0) < 1e-12 and abs(prof.alpha2) < 1e-12
    assert prof.rho == pytest.approx(-4 * s * s, rel=1e-10)


@pytest.mark.parametrize("key", sorted(SCIPY_QUAD))
def test_smooth_moments_against_adaptive_quadrature(key):
    kind, s = key
    prof = moment_profile(kind, s)
    for name, v in SCIPY_QUAD[key].items():
        assert getattr(prof, name) == pytest.approx(v, rel=1e-9, abs=1e-13), name


def test_moment_profile_rejects_bad_sigma():
    with pytest.raises(ConfigError):
        moment_profile("relu", 0.0)


@pytest.mark.parametrize("kind,s", [("sigmoid", 10.0), ("erf", 10.0)])
def test_unresolved_quadrature_raises(kind, s):
    with pytest.raises(NumericalError):
        moment_profile(kind, s)


def test_closed_form_cells_are_marked():
    assert moment_profile("relu", 1.0).closed_form == ("alpha0", "alpha1", "alpha2", "beta0", "beta2")
    assert moment_profile("sigmoid", 1.0).closed_form == ()
    assert "rho" in moment_profile("tanh", 1.0).as_dict()


@pytest.mark.parametrize("kind,branch", [("relu", "b"), ("leaky_relu", "b"), ("squared_relu", "a"),
                                         ("sigmoid", "a"), ("tanh", "a"), ("erf", "a")])
def test_check_properties_passes(kind, branch):
    rep = check_properties(kind, [0.5, 1.0, 2.0])
    assert rep.all_pass, rep.failures
    assert rep.branch == branch


def test_check_properties_flags_quadratic_and_linear():
    quad = check_properties("quadratic", [1.0])
    assert not quad.property1 and not quad.property2
    lin = check_properties("linear", [1.0])
    assert lin.property1 and not lin.property2 and lin.property3


def test_check_properties_collects_quadrature_failure():
    rep = check_properties("sigmoid", [1.0, 10.0])
    assert not rep.property2
    assert math.isnan(rep.rho[10.0])
    with pytest.raises(ConfigError):
        check_properties("relu", [])
