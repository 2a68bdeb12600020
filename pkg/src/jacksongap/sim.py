"""Event-driven simulation and empirical total-variation decay.

Replications are simulated in fixed-size blocks, vectorized over the block.
Block ``b`` draws from ``numpy.random.SeedSequence(seed, spawn_key=(b,))``,
so results do not depend on how blocks are scheduled.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .network import (
    NetworkSpec,
    check_routing_reversible,
    modified_routing,
    solve_traffic,
    validate_spec,
)
from .product_form import NetworkStationary
from .tails import BirthDeath

BLOCK = 10_000
OMITTED_MASS = 1e-6
DKW_DELTA = 0.01
MIN_WINDOW = 4
MIN_R2 = 0.9


class _NetworkKernel:
    """Transition families of the network as a fixed list of moves."""

    def __init__(self, spec: NetworkSpec):
        report = validate_spec(spec)
        if not report.ok:
            raise ValueError("invalid network: " + "; ".join(report.violations))
        m = spec.m
        self.spec = spec
        self.m = m
        self.usable = spec.availability.usable_sets
        nd = len(self.usable)
        self.up = np.ones((nd, m), dtype=bool)
        self.r0 = np.zeros((nd, m))
        self.rint = np.zeros((nd, m, m))
        self.rout = np.zeros((nd, m))
        for k, down in enumerate(self.usable):
            r = modified_routing(spec.routing, down)
            for i in down:
                self.up[k, i - 1] = False
            self.r0[k] = spec.arrival_rate * r[0, 1:] * self.up[k]
            inner = r[1:, 1:] * self.up[k][:, None] * self.up[k][None, :]
            np.fill_diagonal(inner, 0.0)  # self-loops, incl. folded mass, change nothing
            self.rint[k] = inner
            self.rout[k] = r[1:, 0] * self.up[k]
        self.avail = spec.availability.rate_matrix()
        eye = np.eye(m, dtype=np.int64)
        mig = (eye[None, :, :] * 0 - eye[:, None, :] + eye[None, :, :]).reshape(m * m, m)
        self.dn = np.vstack([eye, mig, -eye, np.zeros((nd, m), dtype=np.int64)])
        self.dd = np.concatenate([np.full(2 * m + m * m, -1), np.arange(nd)])

    def rates(self, d: np.ndarray, n: np.ndarray) -> np.ndarray:
        mu = np.stack([fn(n[:, i]) for i, fn in enumerate(self.spec.services)], axis=1)
        mig = (mu[:, :, None] * self.rint[d]).reshape(len(d), -1)
        return np.hstack([self.r0[d], mig, mu * self.rout[d], self.avail[d]])

    def apply(self, d, n, choice):
        n += self.dn[choice]
        target = self.dd[choice]
        return np.where(target >= 0, target, d), n

    def encode_start(self, x0) -> tuple[int, np.ndarray]:
        down, ns = x0
        return self.usable.index(frozenset(down)), np.asarray(ns, dtype=np.int64)


class _BDKernel:
    def __init__(self, bd: BirthDeath, table: int = 1 << 12):
        self.bd = bd
        self.m = 1
        self.usable = [frozenset()]
        self._grow(table)

    def _grow(self, size: int) -> None:
        self.mu = np.concatenate(([0.0], self.bd.deaths(size)))

    def rates(self, d, n):
        top = int(n.max(initial=0))
        if top >= len(self.mu) - 1:
            self._grow(2 * top + 2)
        k = n[:, 0]
        return np.stack([np.full(len(k), self.bd.lam), self.mu[k]], axis=1)

    def apply(self, d, n, choice):
        n[:, 0] += np.where(choice == 0, 1, -1)
        return d, n

    def encode_start(self, x0) -> tuple[int, np.ndarray]:
        return 0, np.array([int(x0)], dtype=np.int64)


def _kernel(target):
    if isinstance(target, NetworkSpec):
        return _NetworkKernel(target)
    if isinstance(target, BirthDeath):
        return _BDKernel(target)
    raise TypeError("target must be a NetworkSpec or BirthDeath")


def _hold(kernel, rng, t, d, n, idx):
    """Add exponential holding times at the current states of ``idx``."""
    total = kernel.rates(d[idx], n[idx]).sum(axis=1)
    if np.any(total <= 0):
        raise ValueError("absorbing state reached")
    t[idx] += rng.exponential(1.0, len(idx)) / total


def _jump(kernel, rng, d, n, idx):
    """Pick and apply one transition for each replication in ``idx``."""
    rates = kernel.rates(d[idx], n[idx])
    cum = np.cumsum(rates, axis=1)
    u = rng.random(len(idx)) * cum[:, -1]
    choice = np.minimum((cum <= u[:, None]).sum(axis=1), rates.shape[1] - 1)
    dd, nn = kernel.apply(d[idx], n[idx], choice)
    d[idx] = dd
    n[idx] = nn


@dataclass
class Trajectory:
    """Piecewise-constant path: state ``(downs[k], queues[k])`` holds on ``[times[k], times[k+1])``."""

    times: np.ndarray
    downs: list[frozenset[int]]
    queues: np.ndarray

    def state_at(self, t: float):
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.downs[k], tuple(int(x) for x in self.queues[k])


def simulate_path(target, x0, horizon: float, seed: int) -> Trajectory:
    """Single path by competing exponential clocks, deterministic given ``seed``."""
    kernel = _kernel(target)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    d0, n0 = kernel.encode_start(x0)
    d = np.array([d0])
    n = n0[None, :].copy()
    times, downs, queues = [0.0], [kernel.usable[d0]], [n0.copy()]
    idx = np.array([0])
    t = np.zeros(1)
    while True:
        _hold(kernel, rng, t, d, n, idx)
        if t[0] > horizon:
            break
        _jump(kernel, rng, d, n, idx)
        times.append(float(t[0]))
        downs.append(kernel.usable[int(d[0])])
        queues.append(n[0].copy())
    return Trajectory(np.array(times), downs, np.array(queues))


@dataclass
class SimConfig:
    target: NetworkSpec | BirthDeath
    x0: object
    grid: Sequence[float]
    reps: int
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=float)
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if len(self.grid) == 0 or np.any(np.diff(self.grid) <= 0) or self.grid[0] < 0:
            raise ValueError("grid must be nonnegative and strictly increasing")


@dataclass
class _Reference:
    """Stationary law on a box ``usable x {0..trunc}^m`` plus omitted mass."""

    trunc: int
    m: int
    n_avail: int
    pi: np.ndarray
    marginals: list[np.ndarray]
    exact: bool

    @property
    def omitted(self) -> float:
        return max(0.0, 1.0 - float(self.pi.sum()))

    def encode(self, d: np.ndarray, n: np.ndarray) -> np.ndarray:
        side = self.trunc + 1
        inside = np.all(n <= self.trunc, axis=1)
        flat = np.ravel_multi_index(tuple(np.minimum(n, self.trunc).T), (side,) * self.m)
        code = d * side**self.m + flat
        return np.where(inside, code, self.pi.size)


def _reference(target) -> _Reference:
    if isinstance(target, BirthDeath):
        dist = target.dist
        trunc = 16
        while dist.sf(trunc) > OMITTED_MASS:
            trunc *= 2
        pmf = np.exp(dist.log_pmf_array(trunc + 1))
        return _Reference(trunc, 1, 1, pmf, [pmf], True)
    traffic = solve_traffic(target)
    net = NetworkStationary.from_spec(target, traffic)
    trunc = 8
    while sum(mg.sf(trunc) for mg in net.marginals) > OMITTED_MASS:
        trunc *= 2
    usable = target.availability.usable_sets
    pi = net.box_vector(usable, trunc)
    marginals = [mg.pmf(np.arange(trunc + 1)) for mg in net.marginals]
    exact = target.availability.is_trivial or check_routing_reversible(target, traffic)[0]
    return _Reference(trunc, target.m, len(usable), pi, marginals, exact)


def _run_block(kernel, config: SimConfig, ref: _Reference, block: int, size: int):
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(block,)))
    d0, n0 = kernel.encode_start(config.x0)
    d = np.full(size, d0, dtype=np.int64)
    n = np.tile(n0, (size, 1))
    t = np.zeros(size)
    _hold(kernel, rng, t, d, n, np.arange(size))  # t holds each replication's next jump time
    counts = np.zeros((len(config.grid), ref.pi.size + 1), dtype=np.int64)
    for g, tg in enumerate(config.grid):
        idx = np.flatnonzero(t <= tg)
        while idx.size:
            _jump(kernel, rng, d, n, idx)
            _hold(kernel, rng, t, d, n, idx)
            idx = idx[t[idx] <= tg]
        counts[g] = np.bincount(ref.encode(d, n), minlength=ref.pi.size + 1)
    final_n = n.copy()
    return counts, final_n


def _simulate(config: SimConfig):
    kernel = _kernel(config.target)
    ref = _reference(config.target)
    sizes = [min(BLOCK, config.reps - b * BLOCK) for b in range(math.ceil(config.reps / BLOCK))]
    jobs = list(enumerate(sizes))
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(lambda j: _run_block(_kernel(config.target), config, ref, *j), jobs))
    else:
        results = [_run_block(kernel, config, ref, *j) for j in jobs]
    counts = sum(r[0] for r in results)
    finals = np.vstack([r[1] for r in results])
    return ref, counts, finals


def _tv_series(ref: _Reference, counts: np.ndarray, reps: int) -> np.ndarray:
    emp = counts[:, :-1] / reps
    out_emp = counts[:, -1] / reps
    tv = 0.5 * np.abs(emp - ref.pi[None, :]).sum(axis=1) + 0.5 * (out_emp + ref.omitted)
    return np.clip(tv, 0.0, 1.0)


def fit_decay(times: np.ndarray, tv: np.ndarray, reps: int):
    """Least-squares rate on ``log tv`` over the longest qualifying window.

    Points are used up to the first one under the noise floor ``3/sqrt(reps)``;
    the window is the longest suffix of those with ``R^2 >= 0.9`` and at least
    four points. Returns ``(alpha, (t_start, t_end), r2)`` or ``None``.
    """
    floor = 3.0 / math.sqrt(reps)
    below = np.flatnonzero(tv < floor)
    end = int(below[0]) if below.size else len(tv)
    for start in range(0, end - MIN_WINDOW + 1):
        t = times[start:end]
        y = np.log(tv[start:end])
        slope, intercept = np.polyfit(t, y, 1)
        resid = y - (slope * t + intercept)
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
        if slope < 0 and r2 >= MIN_R2:
            return -float(slope), (float(t[0]), float(t[-1])), r2
    return None


@dataclass
class DecayEstimate:
    times: np.ndarray
    tv: np.ndarray
    reps: int
    alpha: float | None
    window: tuple[float, float] | None
    r2: float | None
    noise_floor: float
    omitted_mass: float
    reference_exact: bool
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "tv": self.tv.tolist(),
            "reps": self.reps,
            "alpha": self.alpha,
            "window": list(self.window) if self.window else None,
            "r2": self.r2,
            "noise_floor": self.noise_floor,
            "omitted_mass": self.omitted_mass,
            "reference_exact": self.reference_exact,
            "notes": list(self.notes),
        }

    def to_csv(self) -> str:
        lines = ["t,tv"] + [f"{t!r},{v!r}" for t, v in zip(self.times, self.tv, strict=True)]
        return "\n".join(lines) + "\n"


def estimate_tv_decay(config: SimConfig) -> DecayEstimate:
    ref, counts, _ = _simulate(config)
    tv = _tv_series(ref, counts, config.reps)
    fit = fit_decay(config.grid, tv, config.reps)
    notes = []
    if not ref.exact:
        notes.append("reference is the product form of a non-reversible unreliable network; not stationary")
    if fit is None:
        notes.append("no qualifying log-linear window; alpha absent")
        alpha = window = r2 = None
    else:
        alpha, window, r2 = fit
    return DecayEstimate(config.grid, tv, config.reps, alpha, window, r2,
                         3.0 / math.sqrt(config.reps), ref.omitted, ref.exact, notes)


@dataclass
class MarginalCheck:
    node: int
    tv: float
    band: float

    @property
    def within(self) -> bool:
        return self.tv <= self.band


def dkw_band(reps: int, delta: float = DKW_DELTA) -> float:
    return math.sqrt(math.log(2.0 / delta) / (2.0 * reps))


def marginal_check(config: SimConfig) -> list[MarginalCheck]:
    """Per-node TV between the empirical law at the last grid time and ``pi_i``."""
    ref, _, finals = _simulate(config)
    out = []
    for i, pmf in enumerate(ref.marginals):
        emp = np.bincount(np.minimum(finals[:, i], ref.trunc + 1), minlength=ref.trunc + 2)
        emp = emp / config.reps
        tv = 0.5 * (np.abs(emp[:-1] - pmf).sum() + emp[-1] + max(0.0, 1.0 - pmf.sum()))
        out.append(MarginalCheck(i + 1, float(tv), dkw_band(config.reps)))
    return out
