"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to see the lines
inline; they are printed outside pytest's capture either way).
"""

from __future__ import annotations

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import DATA, random_spec
from jacksongap.bounds import (
    bd_gap_lower,
    compute_d,
    generator_norm,
    network_gap_lower,
    replay_paper_arithmetic,
)
from jacksongap.generator import (
    CHEEGER_CAP,
    build_bd_generator,
    build_network_generator,
    cheeger_sandwich,
    detailed_balance_check,
    gap_with_doubling,
    generator_from_matrix,
    kronecker_sum,
    numeric_gap,
    stationary_of,
)
from jacksongap.network import AvailabilityModel, NetworkSpec, RateFunction, load_spec, solve_traffic
from jacksongap.product_form import MarginalDistribution, NetworkStationary
from jacksongap.sim import SimConfig, estimate_tv_decay
from jacksongap.tails import (
    STRONGLY_LIGHT,
    MarginalDist,
    PrefixDist,
    bd_from_distribution,
    equilibrium_to_hazard,
    example_4,
    hazard_to_equilibrium,
    strong_light_tail_check,
    total_hazard,
)

STATE_BUDGET = 25_000


@pytest.fixture
def verdict(capsys):
    def emit(criterion: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def fixture_spec():
    return load_spec(DATA / "two_node.json")


def test_c01_traffic(fixture_spec, verdict):
    lam = solve_traffic(fixture_spec)
    err = float(np.abs(lam - [48 / 7, 80 / 7]).max())
    runs = []
    for _ in range(200):
        t0 = time.perf_counter()
        solve_traffic(fixture_spec)
        runs.append(time.perf_counter() - t0)
    elapsed = min(runs)
    verdict("1", err < 1e-12 and elapsed < 1e-3,
            f"traffic error {err:.2e} (< 1e-12), runtime {elapsed * 1e3:.3f} ms (< 1 ms)")


def test_c02_intermediates(fixture_spec, verdict):
    ds, d = compute_d(fixture_spec, solve_traffic(fixture_spec))
    fr = [Fraction(x).limit_denominator(10_000) for x in (*ds, d)]
    exact = fr == [Fraction(35, 12), Fraction(7, 5), Fraction(49, 12)]
    close = max(abs(a - float(b)) for a, b in zip((*ds, d), fr, strict=True)) < 1e-14
    q = generator_norm(fixture_spec)
    verdict("2", exact and close and q == 48.0,
            f"d_1={fr[0]}, d_2={fr[1]}, d={fr[2]}, |Q|={q:g}")


def test_c03_normalizers(fixture_spec, verdict):
    lam = solve_traffic(fixture_spec)
    eps = [MarginalDistribution(float(x), fn).pmf(0) for x, fn in zip(lam, fixture_spec.services, strict=True)]
    errs = [abs(eps[0] - 0.6502), abs(eps[1] - 0.2818)]
    verdict("3", max(errs) <= 5e-4, f"eps_1={eps[0]:.7f}, eps_2={eps[1]:.7f} (targets 0.6502, 0.2818 +/- 5e-4)")


def test_c04_replay(fixture_spec, verdict):
    value = replay_paper_arithmetic(60 / 61, 0.7830, 48.0)
    rel = abs(value - 0.001544667932) / 0.001544667932
    own = network_gap_lower(fixture_spec, solve_traffic(fixture_spec))
    verdict("4", rel < 1e-9,
            f"replayed bound {value:.12g} (rel err {rel:.1e}); certified bound {own.final_bound:.4g}")


def test_c05_bd_oracle(verdict):
    t0 = time.perf_counter()
    gap = numeric_gap(build_bd_generator(1.0, RateFunction.constant(2.0), 400)).gap
    elapsed = time.perf_counter() - t0
    target = (math.sqrt(2) - 1) ** 2
    bound = bd_gap_lower(1.0, 0.5)
    ok = abs(gap - target) < 1e-3 and abs(bound - 1 / 6) < 1e-15 and bound <= gap and elapsed < 5
    verdict("5", ok, f"gap {gap:.6f} vs {target:.6f}, bound {bound:.6f} <= gap, {elapsed:.2f} s")


def _battery(seed: int = 2024, count: int = 54):
    rng = np.random.default_rng(seed)
    for k in range(count):
        m = (1, 2, 3)[k % 3]
        unreliable = (k // 3) % 2 == 1
        yield random_spec(rng, m, unreliable, reversible=(k // 6) % 2 == 0)


def test_c06_bound_safety(verdict):
    slack = 1e-6
    failures, converged, total, worst = [], 0, 0, np.inf
    for k, spec in enumerate(_battery()):
        total += 1
        traffic = solve_traffic(spec)
        report = network_gap_lower(spec, traffic)
        n_sets = len(spec.availability.usable_sets)
        cap = int((STATE_BUDGET / n_sets) ** (1 / spec.m)) - 1
        res, trail = gap_with_doubling(lambda n, s=spec: build_network_generator(s, n), 4, max_trunc=cap)
        converged += len(trail) > 1 and abs(trail[-1][1] - trail[-2][1]) <= 1e-3 * trail[-1][1]
        checks = [("network", report.final_bound, res.gap)]
        for nb, fn in zip(report.nodes, spec.services, strict=True):
            bd, _ = gap_with_doubling(lambda n, lam=nb.lam, f=fn: build_bd_generator(lam, f, n), 64)
            checks += [(f"node{nb.node}", nb.bound_simple, bd.gap), (f"node{nb.node}-sharp", nb.bound_sqrt, bd.gap)]
        for name, bound, gap in checks:
            worst = min(worst, gap - bound)
            if bound > gap + slack:
                failures.append(f"spec {k} {name}: bound {bound:.4g} > gap {gap:.4g}")
    verdict("6", total >= 50 and not failures,
            f"{total} specs, {len(failures)} counterexamples, min(gap - bound) {worst:.3g}; "
            f"N-doubling converged (rtol 1e-3) on {converged}/{total}, rest stopped at {STATE_BUDGET} states"
            + ("; " + "; ".join(failures[:3]) if failures else ""))


def test_c07_kronecker(verdict):
    pairs = [
        ((1.0, RateFunction.constant(2.0)), (2.0, RateFunction.geometric(3, 1, 0.5))),
        ((1.0, RateFunction.table([0.5, 3.0], 1.8)), (0.7, RateFunction.constant(1.0))),
        ((3.0, RateFunction.geometric(5, -2, 0.3)), (1.0, RateFunction.constant(4.0))),
    ]
    worst = 0.0
    for (la, fa), (lb, fb) in pairs:
        a, b = build_bd_generator(la, fa, 100), build_bd_generator(lb, fb, 100)
        expected = min(numeric_gap(a).gap, numeric_gap(b).gap)
        worst = max(worst, abs(numeric_gap(kronecker_sum(a, b)).gap - expected))
    verdict("7", worst < 1e-9, f"max |gap(A+B) - min(gap A, gap B)| = {worst:.2e} over {len(pairs)} pairs, N=100")


def test_c08_product_form(verdict):
    rng = np.random.default_rng(8)
    worst_tv = worst_db = 0.0
    for _ in range(5):
        base = random_spec(rng, 2, unreliable=False)
        psi = rng.uniform(0.3, 2.0, size=3)
        phi = rng.uniform(0.3, 2.0, size=3)
        avail = AvailabilityModel.from_entries([((), 1, 1), ((1,), psi[0], phi[0]), ((2,), psi[1], phi[1]),
                                                ((1, 2), psi[2], phi[2])])
        spec = NetworkSpec(base.arrival_rate, base.routing, base.services, avail)
        gen = build_network_generator(spec, 12)
        assert len(gen.usable) == 4
        pi = stationary_of(gen)
        box = NetworkStationary.from_spec(spec, solve_traffic(spec)).box_vector(gen.usable, 12)
        box /= box.sum()
        worst_tv = max(worst_tv, 0.5 * float(np.abs(pi - box).sum()))
        worst_db = max(worst_db, detailed_balance_check(gen, pi))
    verdict("8", worst_tv < 1e-10 and worst_db < 1e-10,
            f"max TV {worst_tv:.2e}, max detailed-balance residual {worst_db:.2e} (5 instances, 4 sets each)")


def _exact_mode_instances():
    rng = np.random.default_rng(9)
    yield "M/M/1 N=12", build_bd_generator(1.0, RateFunction.constant(2.0), 12)
    yield "Example-4 BD N=19", build_bd_generator(1.0, bd_from_distribution(example_4(), 1.0).deaths(19), 19)
    yield "worked network N=3", build_network_generator(load_spec(DATA / "two_node.json"), 3)
    for k in range(6):
        spec = random_spec(rng, 2, unreliable=k % 2 == 1)
        # 3 usable sets x 2^2 or 1 set x 4^2 states
        yield f"random network {k}", build_network_generator(spec, 1 if k % 2 else 3)
    for n in (3, 5, 8, 12, 16, 20):
        Q = rng.uniform(0, 1, size=(n, n)) * (rng.uniform(size=(n, n)) < 0.5)
        Q[np.arange(n - 1), np.arange(1, n)] += 0.2
        Q[n - 1, 0] += 0.2
        yield f"random chain n={n}", generator_from_matrix(Q)


def test_c09_cheeger(verdict):
    slack = 1e-12
    bad, count = [], 0
    for name, gen in _exact_mode_instances():
        assert gen.size <= CHEEGER_CAP
        sw = cheeger_sandwich(gen)
        count += 1
        if not (sw.exact and sw.lower < sw.gap + slack and sw.gap < sw.upper + slack):
            bad.append(f"{name}: {sw.lower:.4g} <= {sw.gap:.4g} <= {sw.upper:.4g}")
    verdict("9", not bad, f"{count} exact-mode instances, {len(bad)} violations" + ("; " + "; ".join(bad) if bad else ""))


def test_c10a_roundtrip(verdict):
    dists = [PrefixDist([0.3, 0.1, 0.2], 0.6), PrefixDist([0.05, 0.5, 0.1], 0.3),
             MarginalDist(MarginalDistribution(48 / 7, RateFunction.geometric(20, 1, 0.5))),
             MarginalDist(MarginalDistribution(2.0, RateFunction.table([1.0, 5.0, 0.5], 3.0)))]
    worst = 0.0
    for dist in dists:
        h = dist.hazards(200)
        worst = max(worst, float(np.abs(equilibrium_to_hazard(hazard_to_equilibrium(h), dist.e_limit, 200) - h).max()))
    h = example_4().hazards(200)
    worst = max(worst, float(np.abs(equilibrium_to_hazard(hazard_to_equilibrium(h), h_last=h[-1]) - h).max()))
    verdict("10a", worst < 1e-10, f"max round-trip error {worst:.2e} on 200-length sequences ({len(dists) + 1} laws)")


def test_c10b_example_classification(verdict):
    dist = example_4()
    report = strong_light_tail_check(dist, horizon=401)
    inf401 = float(dist.hazards(402).min())
    ok = report.verdict == "not_strongly_light" and abs(inf401 - 1 / 401) < 1e-15
    verdict("10b", ok, f"verdict {report.verdict}, inf_(k<=401) h = {inf401:.10g} (1/401 = {1 / 401:.10g})")


def test_c10c_total_hazard_growth(verdict):
    n = 500
    value = total_hazard(example_4(), 2 * n + 1) / (2 * n + 2)
    err = abs(value - math.log(2) / 2)
    verdict("10c", err < 1e-3, f"H(2n+1)/(2n+2) = {value:.6f} at n={n}, |diff from log(2)/2| = {err:.2e} (tol 1e-3)")


def test_c11_strong_light_implies_light(verdict):
    rng = np.random.default_rng(11)
    dists = []
    for _ in range(40):
        w = rng.uniform(0.05, 1.0, size=rng.integers(1, 10))
        head = rng.uniform(0.1, 0.95)
        dists.append(PrefixDist((head * w / w.sum()).tolist(), float(rng.uniform(0.05, 0.9))))
    for fn in (RateFunction.constant(3.0), RateFunction.geometric(20, 1, 0.5), RateFunction.geometric(16, 1, 0.25),
               RateFunction.geometric(3, -2, 0.5), RateFunction.table([1.0, 5.0, 0.5], 3.0)):
        dists.append(MarginalDist(MarginalDistribution(2.0, fn)))
    horizon, checked, bad = 512, 0, 0
    for dist in dists:
        report = strong_light_tail_check(dist, horizon)
        if report.verdict != STRONGLY_LIGHT:
            continue
        checked += 1
        n = np.arange(horizon + 1)
        log_sf = dist.log_sf_array(horizon + 1)
        bound = (n + 1) * math.log1p(-report.infimum)
        # equality holds for geometric laws, so compare logs at relative precision 1e-12
        bad += int(np.any(log_sf > bound + 1e-12 * np.maximum(1.0, np.abs(bound))))
    verdict("11", checked == len(dists) and bad == 0,
            f"{checked} strongly_light verdicts checked to n={horizon}, {bad} violations")


def test_c12_empirical_decay(verdict):
    t0 = time.perf_counter()
    mm1 = load_spec(DATA / "mm1.json")
    gap = numeric_gap(build_bd_generator(1.0, RateFunction.constant(2.0), 400)).gap
    est = estimate_tv_decay(SimConfig(mm1, ((), (0,)), np.linspace(0, 20, 41), 100_000, seed=12))
    ok_mm1 = est.alpha is not None and gap / 2 <= est.alpha <= 2 * gap
    bd = bd_from_distribution(example_4(), 1.0)
    ex = estimate_tv_decay(SimConfig(bd, 0, np.linspace(0, 200, 41), 100_000, seed=12))
    ok_ex = ex.alpha is None
    elapsed = time.perf_counter() - t0
    verdict("12", ok_mm1 and ok_ex and elapsed < 180,
            f"M/M/1 alpha_hat={est.alpha} window={est.window} vs gap {gap:.4f} "
            f"(band [{gap / 2:.4f}, {2 * gap:.4f}]); Example-4 alpha_hat={ex.alpha}; {elapsed:.1f} s")
