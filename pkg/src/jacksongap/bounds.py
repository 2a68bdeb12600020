"""Analytic spectral-gap lower bounds.

Pipeline for a network: per-node birth-death bounds from a hazard lower bound
``eps``, the neighbour ratio factor ``d``, the comparison constant ``v1`` and
the Cheeger-type bound ``v1**2 / (8 |Q|) * (min_i bd_i)**2``.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import (
    NetworkSpec,
    RateFunction,
    check_regular,
    check_routing_reversible,
    modified_routing,
)
from .product_form import MarginalDistribution
from .tails import MarginalDist

EPS_CLAMP = 1.0 - 1e-9

# Intermediates printed in the worked two-node example.
PAPER_V1 = 60 / 61
PAPER_MIN_BD = 0.7830
PAPER_Q_NORM = 48.0


def liggett_bound(b: float, c: float) -> tuple[float, float]:
    """``((sqrt(b+1) - sqrt(b))**2 / c, 1 / (2 c (1 + 2b)))``."""
    if not (b > 0 and c > 0):
        raise ValueError("b and c must be positive")
    # (sqrt(b+1) - sqrt(b))**2 == 1 / (sqrt(b+1) + sqrt(b))**2, stable for large b
    sharp = 1.0 / (c * (math.sqrt(b + 1.0) + math.sqrt(b)) ** 2)
    simple = 1.0 / (2.0 * c * (1.0 + 2.0 * b))
    return sharp, simple


def liggett_constants(lam: float, eps: float) -> tuple[float, float]:
    """``(b, c)`` implied by a hazard lower bound ``eps``."""
    b = (1.0 - eps) / eps
    return b, b / lam


def bd_gap_lower(lam: float, eps: float) -> float:
    """``lam eps^2 / (2 (1 - eps)(2 - eps))``; ``eps`` is clamped below 1."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    if not 0 < eps:
        raise ValueError("eps must be positive")
    eps = min(eps, EPS_CLAMP)
    return lam * eps * eps / (2.0 * (1.0 - eps) * (2.0 - eps))


def eps_from_pi0(marginal: MarginalDistribution) -> float:
    """``pi(0) = 1/C``, a hazard infimum when the service rate is nondecreasing."""
    if not marginal.rate_fn.nondecreasing:
        raise ValueError("pi(0) not certified as hazard infimum (rates not nondecreasing)")
    return float(math.exp(-marginal.log_C))


def hazard_infimum(marginal: MarginalDistribution) -> float:
    """Exact ``inf_k h(k)`` of a product-form marginal."""
    inf = MarginalDist(marginal).hazard_infimum
    if inf is None:
        raise ValueError("hazard infimum not available for this rate function")
    return inf


def product_gap(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ValueError("need at least one gap")
    return float(min(values))


def node_d(lam: float, rate_fn: RateFunction) -> float:
    ratios = (lam / rate_fn.upper, lam / rate_fn.lower)
    return max(max(r, 1.0 / r) for r in ratios)


def compute_d(spec: NetworkSpec, traffic: Sequence[float]) -> tuple[list[float], float]:
    """Per-node ratio factors ``d_i`` and their product ``d``."""
    ds = [node_d(float(lam), fn) for lam, fn in zip(traffic, spec.services, strict=True)]
    return ds, float(np.prod(ds))


def _availability_rates(spec: NetworkSpec) -> np.ndarray:
    rates = spec.availability.rate_matrix()
    return rates[rates > 0]


def transition_extrema(spec: NetworkSpec, traffic: Sequence[float]) -> tuple[float, float]:
    """``(q_tilde_min, q_hat_max)`` over single-transition intensities.

    ``q_tilde_min`` is the smallest positive network transition rate across
    usable down-sets (service rates taken at their infimum); ``q_hat_max`` the
    largest rate of the independent comparison process.
    """
    lam = spec.arrival_rate
    avail = spec.availability
    lows = np.array([fn.lower for fn in spec.services])
    candidates = []
    for down in avail.usable_sets:
        r = modified_routing(spec.routing, down)
        up = [i for i in range(1, spec.m + 1) if i not in down]
        for j in up:
            candidates.append(lam * r[0, j])
        for i in up:
            candidates.append(lows[i - 1] * r[i, 0])
            candidates.extend(lows[i - 1] * r[i, j] for j in up if j != i)
    av = _availability_rates(spec)
    candidates.extend(av.tolist())
    candidates = [c for c in candidates if c > 0]
    q_min = float(min(candidates))
    hat = [*np.asarray(traffic, dtype=float).tolist(), *(fn.upper for fn in spec.services)]
    hat.extend(av.tolist())
    return q_min, float(max(hat))


def generator_norm(spec: NetworkSpec) -> float:
    """``lam + sum_i sup mu_i + max_D (total availability exit rate)``."""
    total = spec.arrival_rate + sum(fn.upper for fn in spec.services)
    rates = spec.availability.rate_matrix()
    if rates.size:
        total += float(rates.sum(axis=1).max())
    return total


def cheeger_bound(v1: float, q_norm: float, min_bd: float) -> float:
    return v1 * v1 / (8.0 * q_norm) * min_bd * min_bd


def replay_paper_arithmetic(v1: float = PAPER_V1, min_bd: float = PAPER_MIN_BD,
                            q_norm: float = PAPER_Q_NORM) -> float:
    """Final bound from the worked example's printed intermediates (not certified)."""
    return cheeger_bound(v1, q_norm, min_bd)


@dataclass
class NodeBound:
    node: int
    lam: float
    eps: float
    eps_method: str
    b: float
    c: float
    bound_simple: float
    bound_sqrt: float
    d_i: float


@dataclass
class GapBoundReport:
    traffic: list[float]
    nodes: list[NodeBound]
    d: float
    q_tilde_min: float
    q_hat_max: float
    v1: float
    q_norm: float
    min_bd_bound: float
    final_bound: float
    reversible: bool
    regular: bool
    hypotheses_met: bool
    notes: list[str] = field(default_factory=list)
    paper_replay: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def node_bound(node: int, marginal: MarginalDistribution, d_i: float) -> NodeBound:
    if marginal.rate_fn.nondecreasing:
        eps, how = eps_from_pi0(marginal), "pi0"
    else:
        eps, how = hazard_infimum(marginal), "hazard_infimum"
    b, c = liggett_constants(marginal.lam, min(eps, EPS_CLAMP))
    sharp, _ = liggett_bound(b, c)
    return NodeBound(node, marginal.lam, eps, how, b, c, bd_gap_lower(marginal.lam, eps), sharp, d_i)


def network_gap_lower(spec: NetworkSpec, traffic: Sequence[float],
                      replay_paper: bool = False) -> GapBoundReport:
    """Assemble the full lower-bound pipeline; every intermediate is reported."""
    traffic = [float(x) for x in traffic]
    marginals = [MarginalDistribution(lam, fn) for lam, fn in zip(traffic, spec.services, strict=True)]
    ds, d = compute_d(spec, traffic)
    nodes = [node_bound(i, mg, di) for i, (mg, di) in enumerate(zip(marginals, ds, strict=True), start=1)]
    q_min, q_max = transition_extrema(spec, traffic)
    v1 = q_min / q_max / (d + 1.0)
    q_norm = generator_norm(spec)
    min_bd = product_gap([nb.bound_simple for nb in nodes])
    reversible, _ = check_routing_reversible(spec, traffic)
    regular = check_regular(spec.routing)
    notes = [
        "q_tilde_min/q_hat_max are single-transition extrema over usable down-sets",
        "per-node bounds use lam*eps^2/(2(1-eps)(2-eps)); bound_sqrt is the sharper Liggett form",
    ]
    trivial = spec.availability.is_trivial
    hypotheses = regular and (reversible or trivial)
    if not regular:
        notes.append("hypothesis unmet: routing is not regular")
    if not reversible and not trivial:
        notes.append("hypothesis unmet: routing not reversible for an unreliable network")
    if any(nb.eps >= EPS_CLAMP for nb in nodes):
        notes.append("eps clamped at 1 - 1e-9")
    report = GapBoundReport(
        traffic=traffic, nodes=nodes, d=d, q_tilde_min=q_min, q_hat_max=q_max, v1=v1,
        q_norm=q_norm, min_bd_bound=min_bd, final_bound=cheeger_bound(v1, q_norm, min_bd),
        reversible=reversible, regular=regular, hypotheses_met=hypotheses, notes=notes,
    )
    if replay_paper:
        report.paper_replay = {
            "certified": False,
            "v1_printed": PAPER_V1,
            "v1_from_printed_formula": (4 / 20) / (1 + 49 / 12),
            "min_bd_printed": PAPER_MIN_BD,
            "node1_bd_printed": 4.7220,
            "node2_bd_printed": 0.7839,
            "q_norm": PAPER_Q_NORM,
            "final_bound": replay_paper_arithmetic(),
        }
    return report
