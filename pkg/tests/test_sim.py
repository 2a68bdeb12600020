from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg as la

from jacksongap.generator import build_bd_generator
from jacksongap.network import RateFunction, load_spec
from jacksongap.product_form import MarginalDistribution
from jacksongap.sim import (
    SimConfig,
    dkw_band,
    estimate_tv_decay,
    fit_decay,
    marginal_check,
    simulate_path,
)
from jacksongap.tails import MarginalDist, bd_from_distribution, example_4


def _exact_mm1_tv(times, trunc=80):
    gen = build_bd_generator(1.0, RateFunction.constant(2.0), trunc)
    pi = 0.5 ** np.arange(1, trunc + 2)
    start = np.zeros(trunc + 1)
    start[0] = 1.0
    out = []
    for t in times:
        law = start @ la.expm(gen.Q.toarray() * t)
        out.append(0.5 * (np.abs(law - pi).sum() + 0.5 ** (trunc + 1)))
    return np.array(out)


def test_path_is_deterministic_and_valid(data_dir):
    spec = load_spec(data_dir / "two_node.json")
    a = simulate_path(spec, ((), (0, 0)), 5.0, seed=3)
    b = simulate_path(spec, ((), (0, 0)), 5.0, seed=3)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.queues, b.queues)
    assert np.all(np.diff(a.times) > 0) and np.all(a.queues >= 0)
    # every jump moves one customer
    assert np.all(np.abs(np.diff(a.queues, axis=0)).sum(axis=1) <= 2)
    assert a.state_at(0.0) == (frozenset(), (0, 0))


def test_mm1_tv_matches_matrix_exponential(data_dir):
    spec = load_spec(data_dir / "mm1.json")
    grid = np.array([0.5, 1.0, 2.0, 4.0])
    est = estimate_tv_decay(SimConfig(spec, ((), (0,)), grid, 40_000, seed=11))
    exact = _exact_mm1_tv(grid)
    # sampling bias of the empirical TV is of order sqrt(support / reps)
    np.testing.assert_allclose(est.tv, exact, atol=0.02)
    assert est.reference_exact


def test_reproducible_and_block_split(data_dir):
    spec = load_spec(data_dir / "mm1.json")
    cfg = SimConfig(spec, ((), (0,)), [1.0, 3.0], 25_000, seed=5)
    one = estimate_tv_decay(cfg)
    two = estimate_tv_decay(SimConfig(spec, ((), (0,)), [1.0, 3.0], 25_000, seed=5, workers=3))
    np.testing.assert_array_equal(one.tv, two.tv)


def test_fit_recovers_synthetic_rate():
    t = np.linspace(0, 10, 21)
    tv = 0.8 * np.exp(-0.7 * t)
    alpha, window, r2 = fit_decay(t, tv, 10**6)
    assert alpha == pytest.approx(0.7, rel=1e-10)
    assert window[0] == 0.0 and r2 == pytest.approx(1.0)


def test_fit_absent_when_flat():
    t = np.linspace(0, 10, 11)
    assert fit_decay(t, np.full(11, 0.3), 10**4) is None
    assert fit_decay(t, np.full(11, 1e-4), 10**4) is None


def test_marginals_close_to_product_form(data_dir):
    spec = load_spec(data_dir / "two_node.json")
    checks = marginal_check(SimConfig(spec, ((), (0, 0)), [20.0], 20_000, seed=2))
    band = dkw_band(20_000)
    for c in checks:
        assert c.band == band
        assert c.within, c


def test_birth_death_target():
    bd = bd_from_distribution(MarginalDist(MarginalDistribution(1.0, RateFunction.constant(2.0))), 1.0)
    est = estimate_tv_decay(SimConfig(bd, 0, [1.0, 2.0], 20_000, seed=1))
    np.testing.assert_allclose(est.tv, _exact_mm1_tv([1.0, 2.0]), atol=0.02)


def test_example_4_target_runs():
    bd = bd_from_distribution(example_4(), 1.0)
    est = estimate_tv_decay(SimConfig(bd, 0, [0.0, 10.0, 50.0], 5_000, seed=0))
    assert est.tv[0] == pytest.approx(0.5, abs=1e-6)
    assert est.tv[-1] < 0.1
