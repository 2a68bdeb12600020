"""Product-form stationary law of unreliable Jackson networks.

A node with traffic rate ``lam`` and service function ``mu`` has marginal
``pi(n) = lam**n / (C * mu(1) * ... * mu(n))``; the availability coordinate
has law proportional to ``psi(D) / phi(D)``.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .network import AvailabilityModel, NetworkSpec, RateFunction, SpecError

SERIES_RTOL = 1e-14
DEFAULT_CACHE = 1024
_MAX_TERMS = 10_000_000


class NonErgodicError(SpecError):
    """A node's normalizing series diverges (``lam >= lim mu``)."""


def _log_terms(lam: float, rate_fn: RateFunction, n_max: int) -> np.ndarray:
    """``log(lam**n / prod_{k<=n} mu(k))`` for ``n = 0..n_max``."""
    ks = np.arange(1, n_max + 1)
    steps = np.log(lam) - np.log(rate_fn(ks)) if n_max else np.zeros(0)
    return np.concatenate(([0.0], np.cumsum(steps)))


def _log_normalizer(lam: float, rate_fn: RateFunction) -> tuple[float, int]:
    """``log C`` with certified relative truncation error below ``SERIES_RTOL``.

    Beyond index ``n`` every term ratio is at most ``q = lam / inf_{k>n} mu(k)``,
    so the omitted tail is at most ``term(n) * q / (1 - q)``.
    """
    if lam / rate_fn.limit >= 1.0:
        raise NonErgodicError(f"non-ergodic node: tail ratio {lam / rate_fn.limit:.12g} >= 1")
    n_max = 64
    while True:
        logs = _log_terms(lam, rate_fn, n_max)
        log_sum = logsumexp(logs)
        q = lam / rate_fn.inf_from(n_max + 1)
        if q < 1.0:
            log_tail = logs[-1] + np.log(q) - np.log1p(-q)
            if log_tail - log_sum < np.log(SERIES_RTOL):
                return float(log_sum), n_max
        if n_max > _MAX_TERMS:
            raise NonErgodicError("normalizing series did not reach its certified tolerance")
        n_max *= 2


def normalizer(lam: float, rate_fn: RateFunction) -> float:
    """``C = sum_n lam**n / prod mu``; raises :class:`NonErgodicError` if infinite."""
    return float(np.exp(_log_normalizer(lam, rate_fn)[0]))


@dataclass(frozen=True, eq=False)
class MarginalDistribution:
    """Stationary marginal of one node; the pmf cache is filled at construction."""

    lam: float
    rate_fn: RateFunction
    n_cache: int = DEFAULT_CACHE
    log_C: float = field(init=False)
    pmf_cache: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        log_c, _ = _log_normalizer(self.lam, self.rate_fn)
        object.__setattr__(self, "log_C", log_c)
        cache = np.exp(_log_terms(self.lam, self.rate_fn, self.n_cache) - log_c)
        cache.setflags(write=False)
        object.__setattr__(self, "pmf_cache", cache)

    @property
    def C(self) -> float:
        return float(np.exp(self.log_C))

    @property
    def tail_ratio(self) -> float:
        return self.lam / self.rate_fn.limit

    def pmf(self, n):
        """``pi(n)``; integer or integer array, zero for negative ``n``."""
        n_arr = np.asarray(n, dtype=np.int64)
        top = int(n_arr.max(initial=0))
        table = self.pmf_cache
        if top > self.n_cache:
            table = np.exp(_log_terms(self.lam, self.rate_fn, top) - self.log_C)
        out = np.where(n_arr < 0, 0.0, table[np.clip(n_arr, 0, None)])
        return float(out) if out.ndim == 0 else out

    def log_pmf(self, n: int) -> float:
        if n < 0:
            return -np.inf
        return float(_log_terms(self.lam, self.rate_fn, n)[-1] - self.log_C)

    def sf(self, n: int) -> float:
        """``P(X > n)`` summed from the tail side."""
        if n < 0:
            return 1.0
        return float(np.exp(self.log_tail_mass(n + 1)))

    def log_tail_mass(self, n: int) -> float:
        """``log sum_{j >= n} pi(j)`` with certified truncation."""
        n = max(int(n), 0)
        span = 64
        while True:
            logs = _log_terms(self.lam, self.rate_fn, n + span)[n:]
            log_sum = logsumexp(logs)
            q = self.lam / self.rate_fn.inf_from(n + span + 1)
            if q < 1.0 and logs[-1] + np.log(q) - np.log1p(-q) - log_sum < np.log(SERIES_RTOL):
                return float(log_sum - self.log_C)
            span *= 2

    def equilibrium_rate(self, k):
        """``e(k) = pi(k-1)/pi(k) = mu(k)/lam`` for ``k >= 1``; ``e(0) = 0``."""
        return self.rate_fn(k) / self.lam


def marginal_pmf(marginal: MarginalDistribution, n):
    return marginal.pmf(n)


def availability_dist(avail: AvailabilityModel) -> dict[frozenset[int], float]:
    """``pi_0(D) = (psi(D)/phi(D)) / C`` over usable down-sets."""
    usable = avail.usable_sets
    weights = np.array([avail.psi(d) / avail.phi(d) for d in usable])
    probs = weights / weights.sum()
    return dict(zip(usable, probs.tolist(), strict=True))


@dataclass(frozen=True, eq=False)
class NetworkStationary:
    marginals: tuple[MarginalDistribution, ...]
    availability: dict[frozenset[int], float]

    @classmethod
    def from_spec(
        cls, spec: NetworkSpec, traffic: Sequence[float], n_cache: int = DEFAULT_CACHE
    ) -> NetworkStationary:
        marginals = tuple(
            MarginalDistribution(float(lam), fn, n_cache)
            for lam, fn in zip(traffic, spec.services, strict=True)
        )
        return cls(marginals, availability_dist(spec.availability))

    @property
    def m(self) -> int:
        return len(self.marginals)

    def pmf(self, down, ns: Sequence[int]) -> float:
        down = frozenset(down)
        if down not in self.availability:
            raise ValueError(f"down-set {sorted(down)} is not usable")
        out = self.availability[down]
        for marg, n in zip(self.marginals, ns, strict=True):
            out *= marg.pmf(int(n))
        return float(out)

    def box_vector(self, usable: Sequence[frozenset[int]], trunc: int) -> np.ndarray:
        """Unnormalized ``pi`` on the box, ordered like the truncated generator."""
        vec = np.ones(1)
        for marg in self.marginals:
            vec = np.multiply.outer(vec, marg.pmf(np.arange(trunc + 1))).ravel()
        avail = np.array([self.availability[d] for d in usable])
        return np.multiply.outer(avail, vec).ravel()


def stationary_pmf(net: NetworkStationary, state) -> float:
    """``pi(D, n_1..n_m)`` for ``state = (D, (n_1, ..., n_m))``."""
    down, ns = state
    return net.pmf(down, ns)


@dataclass(frozen=True)
class NodeErgodicity:
    node: int
    tail_ratio: float
    ergodic: bool


def ergodicity_check(spec: NetworkSpec, traffic: Sequence[float]) -> list[NodeErgodicity]:
    """Per node, ergodic iff ``lam_i / lim mu_i < 1`` (exact for the three rate kinds)."""
    out = []
    for i, (lam, fn) in enumerate(zip(traffic, spec.services, strict=True), start=1):
        ratio = float(lam) / fn.limit
        out.append(NodeErgodicity(i, ratio, ratio < 1.0))
    return out


def pi_ratio_check(net: NetworkStationary, state, other, d: float | None = None) -> bool:
    """Check ``pi(x')/d <= pi(x) <= d * pi(x')`` for neighbouring states.

    ``d`` defaults to the product of per-node factors from the marginals' rate
    extrema. Raises ``ValueError`` if the states do not share ``D`` or differ by
    more than one in some queue coordinate.
    """
    (down_a, ns_a), (down_b, ns_b) = state, other
    if frozenset(down_a) != frozenset(down_b):
        raise ValueError("states must share the same down-set")
    if any(abs(int(a) - int(b)) > 1 for a, b in zip(ns_a, ns_b, strict=True)):
        raise ValueError("states must differ by at most one per queue coordinate")
    if d is None:
        from .bounds import node_d

        d = float(np.prod([node_d(mg.lam, mg.rate_fn) for mg in net.marginals]))
    pa = net.pmf(down_a, ns_a)
    pb = net.pmf(down_b, ns_b)
    slack = 1 + 1e-12
    return pb / d <= pa * slack and pa <= d * pb * slack
