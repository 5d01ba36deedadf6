import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cnn_recover.errors import ConfigError, DivergenceError, NumericalError
from cnn_recover.model import ProblemConfig, matching_error, sample_dataset
from cnn_recover.risk import empirical_risk, gradient, nominal_bounds
from cnn_recover.train import (
    DENSE_TRACE_ITERS, TrainConfig, auto_step_size, contraction_check, gd_step, learn_cnn,
    partition, partition_indices, tail_fit,
)


@pytest.fixture
def sq(wstar):
    cfg = ProblemConfig(k=5, r=2, t=2, activation="squared_relu")
    return cfg, sample_dataset(wstar, cfg, 1000, seed=100)


def test_gd_step(sq, wstar):
    cfg, S = sq
    W = wstar + 0.1
    assert np.array_equal(gd_step(W, S, 0.0, cfg), W)
    assert np.allclose(gd_step(W, S, 0.01, cfg), W - 0.01 * gradient(W, S, cfg))
    assert empirical_risk(gd_step(W, S, 0.01, cfg), S, cfg) < empirical_risk(W, S, cfg)
    with pytest.raises(ConfigError):
        gd_step(W, S, -1.0, cfg)
    with pytest.raises(NumericalError):
        gd_step(np.full_like(W, 1e200), S, 0.1, cfg)


@given(n=st.integers(1, 500), m=st.integers(1, 20), seed=st.integers(0, 100))
def test_partition_is_disjoint(n, m, seed):
    if m > n:
        with pytest.raises(ConfigError):
            partition_indices(n, m, seed)
        return
    parts = partition_indices(n, m, seed)
    assert len(parts) == m and all(len(p) == n // m for p in parts)
    flat = np.concatenate(parts)
    assert len(np.unique(flat)) == len(flat) and flat.max() < n
    assert all(np.array_equal(a, b) for a, b in zip(parts, partition_indices(n, m, seed)))


def test_partition_sample_sets(sq):
    cfg, S = sq
    parts = partition(S, 3, seed=1)
    assert [len(p) for p in parts] == [333] * 3
    with pytest.raises(ConfigError):
        partition(S, 0)


def test_auto_step_size(wstar):
    cfg = ProblemConfig(k=5, r=2, t=2, activation="squared_relu")
    assert auto_step_size(wstar, cfg) == pytest.approx(1 / (2 * 4 * 4))
    cfg = ProblemConfig(k=5, r=3, t=2, activation="relu")
    assert auto_step_size(wstar, cfg) == pytest.approx(1 / (2 * 9))


@given(rate=st.floats(0.1, 0.99), scale=st.floats(1e-3, 1e3))
def test_tail_fit_on_geometric_sequence(rate, scale):
    q = np.arange(60)
    losses = scale * rate**q
    est, r2 = tail_fit(q, np.maximum(losses, 1e-300), floor=0.0)
    assert est == pytest.approx(rate, rel=1e-8)
    assert r2 == pytest.approx(1.0, abs=1e-9)


def test_tail_fit_needs_three_points():
    assert all(math.isnan(v) for v in tail_fit([0, 1], [1.0, 0.5]))


@pytest.mark.parametrize("kwargs", [dict(step_size=0), dict(step_size="fast"), dict(max_iters=0),
                                    dict(tol=-1), dict(init="random")])
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_gaussian_init_converges_linearly(sq, wstar):
    cfg, S = sq
    tc = TrainConfig(step_size=0.01, max_iters=10_000, tol=1e-12, init="gaussian", seed=3)
    rep = learn_cnn(S, 10_000, cfg, tc, Wstar=wstar)
    assert rep.converged and rep.trace[-1].loss < 1e-12
    assert rep.tail_r2 > 0.95 and 0 < rep.rate_estimate < 1
    assert matching_error(rep.final_W, wstar) < 1e-4
    assert rep.samples_consumed == 1000 and rep.step_size == 0.01
    iters = rep.iters
    assert np.all(iters[:DENSE_TRACE_ITERS + 1] == np.arange(DENSE_TRACE_ITERS + 1))
    sparse = iters[(iters > DENSE_TRACE_ITERS) & (iters < rep.iterations)]
    assert np.all(sparse % 10 == 0)


def test_given_start_and_distance_trace(sq, wstar):
    cfg, S = sq
    W0 = wstar + 0.05
    rep = learn_cnn(S, 5, cfg, TrainConfig(step_size=0.01, max_iters=5, tol=0.0), Wstar=wstar, W0=W0)
    assert np.array_equal(rep.init_W, W0) and rep.iterations == 5 and not rep.converged
    assert rep.trace[0].dist == pytest.approx(np.linalg.norm(W0 - wstar))
    assert all(b.loss < a.loss for a, b in zip(rep.trace, rep.trace[1:]))


def test_divergence_keeps_partial_trace(sq, wstar):
    cfg, S = sq
    tc = TrainConfig(step_size=50.0, max_iters=200, init="gaussian")
    with pytest.raises(DivergenceError) as info:
        learn_cnn(S, 200, cfg, tc, Wstar=wstar)
    assert info.value.report is not None and len(info.value.report.trace) >= 1


def test_tensor_pipeline_with_resampling(wstar):
    cfg = ProblemConfig(k=5, r=2, t=2, activation="squared_relu")
    S = sample_dataset(wstar, cfg, 60_000, seed=11)
    tc = TrainConfig(max_iters=50, resample=True, seed=3, tol=1e-12)
    rep = learn_cnn(S, 50, cfg, tc, Wstar=wstar)
    assert rep.resample and rep.samples_consumed == 51 * (60_000 // 51)
    assert matching_error(rep.final_W, wstar) < matching_error(rep.init_W, wstar)


def test_contraction(wstar):
    cfg = ProblemConfig(k=5, r=2, t=2, activation="squared_relu")
    S = sample_dataset(wstar, cfg, 10_000, seed=5)
    D = np.random.default_rng(0).standard_normal(wstar.shape)
    ratio, bound = contraction_check(wstar + 1e-3 * D / np.linalg.norm(D), wstar, S, cfg)
    m0, M0 = nominal_bounds(wstar, "squared_relu", 2)
    assert bound == pytest.approx(1 - m0 / M0)
    assert 0 < ratio < 1
    assert contraction_check(wstar, wstar, S, cfg) == (0.0, bound)
