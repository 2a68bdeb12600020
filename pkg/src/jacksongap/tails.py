"""Hazard functions, equilibrium rates and strong light-tail detection.

For a pmf ``p`` on the nonnegative integers with ``p(k) > 0``:

* hazard ``h(k) = p(k) / P(X >= k)``
* equilibrium rate ``e(k) = p(k-1) / p(k)`` (``e(0) = 0``)
* total hazard ``H(x) = -log P(X > x)``

A distribution is *strongly light-tailed* when ``inf_k h(k) > 0``.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import SpecError
from .product_form import MarginalDistribution, _log_terms

DEFAULT_HORIZON = 512

STRONGLY_LIGHT = "strongly_light"
NOT_STRONGLY_LIGHT = "not_strongly_light"
INCONCLUSIVE = "inconclusive"


class DiscreteDist:
    """Base class; subclasses provide ``log_pmf_array`` and ``log_sf_array``.

    ``e_limit`` is the exact limit of the equilibrium rate when known,
    ``hazard_infimum`` the exact infimum of the hazard over all ``k`` when
    known, and ``vanishing`` an index map ``j -> k_j`` along which the hazard
    provably tends to zero.
    """

    source = "abstract"
    e_limit: float | None = None
    hazard_infimum: float | None = None
    vanishing: Callable[[int], int] | None = None

    def log_pmf_array(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def log_sf_array(self, n: int) -> np.ndarray:
        """``log P(X > k)`` for ``k = 0..n-1``."""
        raise NotImplementedError

    def pmf(self, k: int) -> float:
        return float(np.exp(self.log_pmf_array(k + 1)[k]))

    def sf(self, k: int) -> float:
        if k < 0:
            return 1.0
        return float(np.exp(self.log_sf_array(k + 1)[k]))

    def hazards(self, n: int) -> np.ndarray:
        """``h(0..n-1)``."""
        logp = self.log_pmf_array(n)
        log_prev = np.concatenate(([0.0], self.log_sf_array(n)[:-1])) if n else np.zeros(0)
        return np.exp(logp - log_prev)

    def equilibrium_rates(self, n: int) -> np.ndarray:
        """``e(0..n-1)``, ``e(0) = 0``."""
        logp = self.log_pmf_array(n)
        out = np.zeros(n)
        out[1:] = np.exp(logp[:-1] - logp[1:])
        return out


class PrefixDist(DiscreteDist):
    """Explicit pmf prefix ``p(0..K-1)`` plus an optional geometric tail.

    With ``tail_ratio = r`` the law continues as ``p(k) = p(K-1) * r**(k-K+1)``;
    the whole thing is normalized. Without a tail rule the prefix is taken as
    complete and nothing is certified about the tail.
    """

    source = "pmf_prefix"

    def __init__(self, prefix: Sequence[float], tail_ratio: float | None = None):
        p = np.asarray(prefix, dtype=float)
        if p.ndim != 1 or len(p) == 0 or np.any(p <= 0):
            raise SpecError("pmf prefix must be a nonempty list of positive numbers")
        if tail_ratio is not None and not 0 < tail_ratio < 1:
            raise SpecError("geometric tail ratio must lie in (0, 1)")
        self.prefix = p
        self.tail_ratio = tail_ratio
        self._tail_mass = 0.0 if tail_ratio is None else p[-1] * tail_ratio / (1 - tail_ratio)
        self._total = p.sum() + self._tail_mass
        if tail_ratio is not None:
            self.e_limit = 1.0 / tail_ratio
            k = len(p)
            self.hazard_infimum = float(min(self.hazards(k + 1).min(), 1.0 - tail_ratio))

    def _k_max(self, n: int) -> None:
        if self.tail_ratio is None and n > len(self.prefix):
            raise ValueError(f"prefix-only distribution has no mass beyond index {len(self.prefix) - 1}")

    def log_pmf_array(self, n: int) -> np.ndarray:
        self._k_max(n)
        k = len(self.prefix)
        out = np.log(self.prefix[: min(n, k)])
        if n > k:
            steps = np.arange(1, n - k + 1)
            out = np.concatenate((out, np.log(self.prefix[-1]) + steps * np.log(self.tail_ratio)))
        return out - np.log(self._total)

    def log_sf_array(self, n: int) -> np.ndarray:
        k = len(self.prefix)
        upto = min(n, k)
        # mass strictly above index j for j < k
        above = self._tail_mass + np.concatenate((np.cumsum(self.prefix[::-1])[::-1][1:], [0.0]))
        with np.errstate(divide="ignore"):
            out = np.log(above[:upto])
        if n > k:
            steps = np.arange(1, n - k + 1)
            out = np.concatenate((out, np.log(self._tail_mass) + steps * np.log(self.tail_ratio)))
        return out - np.log(self._total)


class MarginalDist(DiscreteDist):
    """Stationary marginal of a product-form node as a :class:`DiscreteDist`."""

    source = "product_form_marginal"

    def __init__(self, marginal: MarginalDistribution):
        self.marginal = marginal
        fn = marginal.rate_fn
        self.e_limit = fn.limit / marginal.lam
        if fn.nondecreasing:
            self.hazard_infimum = float(np.exp(-marginal.log_C))
        elif fn.nonincreasing:
            self.hazard_infimum = 1.0 - marginal.tail_ratio
        elif fn.kind == "table_with_tail":
            # beyond the table the tail is exactly geometric
            k = len(fn.values)
            self.hazard_infimum = float(min(self.hazards(k + 1).min(), 1.0 - marginal.tail_ratio))

    def log_pmf_array(self, n: int) -> np.ndarray:
        mg = self.marginal
        return _log_terms(mg.lam, mg.rate_fn, max(n - 1, 0))[:n] - mg.log_C

    def log_sf_array(self, n: int) -> np.ndarray:
        if n == 0:
            return np.zeros(0)
        logp = self.log_pmf_array(n)
        out = np.empty(n)
        acc = self.marginal.log_tail_mass(n)  # log P(X > n-1)
        out[n - 1] = acc
        for k in range(n - 2, -1, -1):
            acc = np.logaddexp(acc, logp[k + 1])
            out[k] = acc
        return out


class HazardDist(DiscreteDist):
    """Distribution specified by its hazard sequence ``h(k) in (0, 1)``."""

    source = "hazard"

    def __init__(self, hazard_fn: Callable[[np.ndarray], np.ndarray], name: str = "custom",
                 vanishing: Callable[[int], int] | None = None,
                 hazard_infimum: float | None = None, e_limit: float | None = None):
        self.hazard_fn = hazard_fn
        self.name = name
        self.vanishing = vanishing
        self.hazard_infimum = hazard_infimum
        self.e_limit = e_limit

    def hazards(self, n: int) -> np.ndarray:
        return np.asarray(self.hazard_fn(np.arange(n)), dtype=float)

    def log_sf_array(self, n: int) -> np.ndarray:
        return np.cumsum(np.log1p(-self.hazards(n)))

    def log_pmf_array(self, n: int) -> np.ndarray:
        log_prev = np.concatenate(([0.0], self.log_sf_array(n)[:-1])) if n else np.zeros(0)
        return np.log(self.hazards(n)) + log_prev


def _example_4_hazard(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k)
    odd_deep = (k % 2 == 1) & (k >= 3)
    return np.where(odd_deep, 1.0 / np.maximum(k, 1), 0.5)


def example_4() -> HazardDist:
    """Light-tailed but not strongly light-tailed law.

    ``h(1) = 1/2``, ``h(2n) = 1/2`` and ``h(2n+1) = 1/(2n+1)`` for ``n >= 1``,
    so ``h`` vanishes along odd indices.
    """
    return HazardDist(_example_4_hazard, name="example_4", vanishing=lambda j: 2 * j + 1)


def load_distribution(path: str | Path) -> DiscreteDist:
    with open(path, encoding="utf-8") as fh:
        return distribution_from_dict(json.load(fh))


def distribution_from_dict(doc: dict) -> DiscreteDist:
    if "hazard" in doc:
        pattern = doc["hazard"].get("pattern")
        if pattern == "example_4":
            return example_4()
        raise SpecError(f"unknown hazard pattern {pattern!r}")
    if "pmf_prefix" in doc:
        tail = doc.get("tail")
        ratio = None
        if tail is not None:
            if tail.get("kind") != "geometric":
                raise SpecError(f"unknown tail kind {tail.get('kind')!r}")
            ratio = float(tail["ratio"])
        return PrefixDist(doc["pmf_prefix"], ratio)
    raise SpecError("distribution document needs 'pmf_prefix' or 'hazard'")


def hazard(dist: DiscreteDist, k: int) -> float:
    return float(dist.hazards(k + 1)[k])


def equilibrium_rate(dist: DiscreteDist, k: int) -> float:
    if k == 0:
        return 0.0
    return float(dist.equilibrium_rates(k + 1)[k])


def hazard_to_equilibrium(h: Sequence[float]) -> np.ndarray:
    """``e(k+1) = h(k) / h(k+1) / (1 - h(k))``; output has ``e(0) = 0``."""
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0) or np.any(h >= 1):
        raise ValueError("hazard values must lie in (0, 1)")
    e = np.zeros(len(h))
    e[1:] = h[:-1] / h[1:] / (1.0 - h[:-1])
    return e


def equilibrium_to_hazard(e: Sequence[float], e_limit: float | None = None, n: int | None = None,
                          h_last: float | None = None) -> np.ndarray:
    """``h(k) = 1 / (1 + sum_{j>k} 1/(e(k+1)...e(j)))`` for ``k = 0..n-1``.

    ``e[k]`` holds ``e(k)`` for ``1 <= k < len(e)`` (``e[0]`` is ignored).
    The tail past the given values comes either from ``e_limit`` (constant
    beyond, summed in closed form as a geometric series) or from a known
    anchor ``h_last = h(len(e) - 1)``, in which case only ``h(0..len(e)-1)``
    are defined.
    """
    e = np.asarray(e, dtype=float)
    if h_last is not None:
        if not 0 < h_last < 1:
            raise ValueError("h_last must lie in (0, 1)")
        top = len(e) - 1
        if n is None:
            n = len(e)
        if n > len(e):
            raise ValueError("anchored inversion only defines h(0..len(e)-1)")
        full = e
        s = 1.0 / h_last - 1.0
    else:
        if e_limit is None or not e_limit > 1.0 or not np.isfinite(e_limit):
            raise SpecError("tail series not summable with certified bound (e_limit <= 1)")
        if n is None:
            n = len(e)
        top = max(len(e), n)
        full = np.full(top + 1, e_limit)
        full[1 : len(e)] = e[1:]
        q = 1.0 / e_limit
        s = q / (1.0 - q)  # sum past index `top`
    if np.any(full[1 : top + 1] <= 0):
        raise ValueError("equilibrium rates must be positive")
    out = np.empty(top + 1)
    out[top] = 1.0 / (1.0 + s)
    for k in range(top - 1, -1, -1):
        s = (1.0 + s) / full[k + 1]
        out[k] = 1.0 / (1.0 + s)
    return out[:n]


def tail_limits(dist: DiscreteDist) -> tuple[float | None, float | None]:
    """``(h_limit, e_limit)``; ``h_limit = 1 - 1/e_limit`` when ``e_limit > 1``."""
    e_lim = dist.e_limit
    if e_lim is None:
        return None, None
    if e_lim <= 1.0:
        return None, e_lim
    return 1.0 - 1.0 / e_lim, e_lim


def total_hazard(dist: DiscreteDist, x: float) -> float:
    """``H(x) = sum_{j <= floor(x)} log(1/(1 - h(j)))``."""
    k = int(np.floor(x))
    return float(-np.sum(np.log1p(-dist.hazards(k + 1))))


def total_hazard_direct(dist: DiscreteDist, x: float) -> float:
    """``H(x) = -log P(X > x)`` from the survival function."""
    k = int(np.floor(x))
    return float(-dist.log_sf_array(k + 1)[k])


@dataclass(frozen=True)
class TailReport:
    verdict: str
    horizon: int
    inf_hazard_observed: float
    argmin_observed: int
    hazard_tail_limit: float | None
    equilibrium_tail_limit: float | None
    infimum: float | None
    note: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def strong_light_tail_check(dist: DiscreteDist, horizon: int = DEFAULT_HORIZON) -> TailReport:
    """Three-valued verdict; definite answers need an exact tail certificate."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    try:
        hs = dist.hazards(horizon + 1)
    except ValueError:
        hs = dist.hazards(len(dist.prefix))  # prefix-only input shorter than horizon
    k_min = int(np.argmin(hs))
    observed = float(hs[k_min])
    h_lim, e_lim = tail_limits(dist)
    if dist.hazard_infimum is not None and dist.hazard_infimum > 0:
        verdict = STRONGLY_LIGHT
        note = "exact hazard infimum from the tail rule"
        infimum = float(dist.hazard_infimum)
    elif dist.vanishing is not None:
        verdict = NOT_STRONGLY_LIGHT
        ks = [dist.vanishing(j) for j in (1, 10, 100)]
        vals = dist.hazards(max(ks) + 1)[ks]
        note = "hazard vanishes along k_j: " + ", ".join(
            f"h({k})={v:.3g}" for k, v in zip(ks, vals, strict=True)
        )
        infimum = 0.0
    else:
        verdict = INCONCLUSIVE
        note = "no certified tail information"
        infimum = None
    return TailReport(verdict, int(horizon), observed, k_min, h_lim, e_lim, infimum, note)


@dataclass(frozen=True)
class BirthDeath:
    """Birth-death process with constant birth rate ``lam``.

    Death rates are either ``lam * e(k)`` of ``dist`` or a direct callable.
    """

    lam: float
    dist: DiscreteDist | None = None
    death_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def deaths(self, n_max: int) -> np.ndarray:
        """``mu(1..n_max)``."""
        if self.death_fn is not None:
            return np.asarray(self.death_fn(np.arange(1, n_max + 1)), dtype=float)
        return self.lam * self.dist.equilibrium_rates(n_max + 1)[1:]


def bd_from_distribution(dist: DiscreteDist, lam: float) -> BirthDeath:
    """Birth-death process with birth ``lam`` and death ``lam * e(k)``; its stationary law is ``dist``."""
    if not lam > 0:
        raise ValueError("birth rate must be > 0")
    return BirthDeath(float(lam), dist=dist)
