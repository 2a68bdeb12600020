"""Unreliable Jackson networks: rate functions, routing, availability, traffic.

Routing is carried as a single ``(m+1) x (m+1)`` array where index 0 is the
outside node, so ``routing[0, j]`` is the external routing probability into
node ``j`` and ``routing[i, 0]`` the departure probability from node ``i``.
"""

from __future__ import annotations

import itertools
import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

ROW_TOL = 1e-12
SOLVE_TOL = 1e-10


class SpecError(ValueError):
    """Raised for malformed network descriptions or unusable inputs."""


@dataclass(frozen=True)
class RateFunction:
    """State-dependent service rate ``mu(n)`` in one of three closed forms.

    * ``constant``: ``mu(n) = rate``.
    * ``table_with_tail``: ``mu(n) = values[n-1]`` for ``1 <= n <= K`` and
      ``tail`` beyond.
    * ``geometric_approach``: ``mu(n) = a - b * rho**n`` with ``0 < rho < 1``.

    ``mu(0) = 0`` by convention. Extrema and the tail limit are exact.
    """

    kind: str
    rate: float = 0.0
    values: tuple[float, ...] = ()
    tail: float = 0.0
    a: float = 0.0
    b: float = 0.0
    rho: float = 0.0

    def __post_init__(self) -> None:
        problems = self.violations()
        if problems:
            raise SpecError("; ".join(problems))

    @classmethod
    def constant(cls, rate: float) -> RateFunction:
        return cls("constant", rate=float(rate))

    @classmethod
    def table(cls, values: Sequence[float], tail: float) -> RateFunction:
        return cls("table_with_tail", values=tuple(float(v) for v in values), tail=float(tail))

    @classmethod
    def geometric(cls, a: float, b: float, rho: float) -> RateFunction:
        return cls("geometric_approach", a=float(a), b=float(b), rho=float(rho))

    def violations(self) -> list[str]:
        out = []
        if self.kind == "constant":
            if not self.rate > 0:
                out.append("constant rate must be > 0")
        elif self.kind == "table_with_tail":
            if any(not v > 0 for v in self.values):
                out.append("table rates must be > 0")
            if not self.tail > 0:
                out.append("tail rate must be > 0")
        elif self.kind == "geometric_approach":
            if not 0 < self.rho < 1:
                out.append("rho must lie in (0, 1)")
            elif not self.a - self.b * self.rho > 0 or not self.a > 0:
                out.append("geometric_approach rates must stay > 0")
        else:
            out.append(f"unknown rate kind {self.kind!r}")
        for v in (self.rate, self.tail, self.a, self.b, self.rho, *self.values):
            if not np.isfinite(v):
                out.append("rate parameters must be finite")
                break
        return out

    def __call__(self, n):
        """Evaluate ``mu(n)``; accepts ints or integer arrays."""
        n_arr = np.asarray(n)
        if self.kind == "constant":
            out = np.full(n_arr.shape, self.rate, dtype=float)
        elif self.kind == "table_with_tail":
            table = np.array((0.0, *self.values, self.tail))
            out = table[np.clip(n_arr, 0, len(self.values) + 1)]
        else:
            out = self.a - self.b * np.power(self.rho, n_arr.astype(float))
        out = np.where(n_arr <= 0, 0.0, out)
        return float(out) if out.ndim == 0 else out

    @property
    def limit(self) -> float:
        """``lim_{n -> inf} mu(n)``."""
        if self.kind == "constant":
            return self.rate
        if self.kind == "table_with_tail":
            return self.tail
        return self.a

    @property
    def lower(self) -> float:
        """``inf_{n >= 1} mu(n)``."""
        return self.inf_from(1)

    @property
    def upper(self) -> float:
        """``sup_{n >= 1} mu(n)``."""
        if self.kind == "constant":
            return self.rate
        if self.kind == "table_with_tail":
            return max((*self.values, self.tail))
        return max(self.a, self.a - self.b * self.rho)

    def inf_from(self, n: int) -> float:
        """Exact ``inf_{k >= n} mu(k)`` for ``n >= 1``."""
        n = max(int(n), 1)
        if self.kind == "constant":
            return self.rate
        if self.kind == "table_with_tail":
            return min((*self.values[n - 1 :], self.tail))
        if self.b > 0:
            return self.a - self.b * self.rho**n
        return self.a

    @property
    def nondecreasing(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "table_with_tail":
            seq = (*self.values, self.tail)
            return all(x <= y for x, y in itertools.pairwise(seq))
        return self.b >= 0

    @property
    def nonincreasing(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "table_with_tail":
            seq = (*self.values, self.tail)
            return all(x >= y for x, y in itertools.pairwise(seq))
        return self.b <= 0

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "rate": self.rate}
        if self.kind == "table_with_tail":
            return {"kind": "table_with_tail", "values": list(self.values), "tail": self.tail}
        return {"kind": "geometric_approach", "a": self.a, "b": self.b, "rho": self.rho}

    @classmethod
    def from_dict(cls, d: Mapping) -> RateFunction:
        kind = d.get("kind")
        if kind == "constant":
            return cls.constant(d["rate"])
        if kind == "table_with_tail":
            return cls.table(d["values"], d["tail"])
        if kind == "geometric_approach":
            return cls.geometric(d["a"], d["b"], d["rho"])
        raise SpecError(f"unknown rate kind {kind!r}")


@dataclass(frozen=True)
class AvailabilityModel:
    """Breakdown/repair weights ``psi(D)`` and ``phi(D)`` over down-sets ``D``.

    Sets missing from ``weights`` have ``psi = phi = 0``. Only *usable* sets
    (both weights positive) are part of the state space.
    """

    weights: Mapping[frozenset[int], tuple[float, float]] = field(
        default_factory=lambda: {frozenset(): (1.0, 1.0)}
    )

    @classmethod
    def reliable(cls) -> AvailabilityModel:
        return cls({frozenset(): (1.0, 1.0)})

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[Iterable[int], float, float]]) -> AvailabilityModel:
        weights: dict[frozenset[int], tuple[float, float]] = {}
        for down, psi, phi in entries:
            key = frozenset(int(i) for i in down)
            if key in weights:
                raise SpecError(f"duplicate availability entry {sorted(key)}")
            weights[key] = (float(psi), float(phi))
        return cls(weights)

    def psi(self, down: frozenset[int]) -> float:
        return self.weights.get(down, (0.0, 0.0))[0]

    def phi(self, down: frozenset[int]) -> float:
        return self.weights.get(down, (0.0, 0.0))[1]

    @property
    def usable_sets(self) -> list[frozenset[int]]:
        """Usable down-sets, ordered by size then lexicographically."""
        sets = [d for d, (psi, phi) in self.weights.items() if psi > 0 and phi > 0]
        return sorted(sets, key=lambda s: (len(s), sorted(s)))

    @property
    def is_trivial(self) -> bool:
        return self.usable_sets == [frozenset()]

    def transition_rate(self, src: frozenset[int], dst: frozenset[int]) -> float:
        """Rate of the availability move ``src -> dst`` (0 if not a single move)."""
        if src == dst:
            return 0.0
        usable = self.usable_sets
        if src not in usable or dst not in usable:
            return 0.0
        if src < dst:
            return self.psi(dst) / self.psi(src)
        if dst < src:
            return self.phi(src) / self.phi(dst)
        return 0.0

    def rate_matrix(self) -> np.ndarray:
        """Off-diagonal availability rates between usable sets (zero diagonal)."""
        usable = self.usable_sets
        k = len(usable)
        out = np.zeros((k, k))
        for a, b in itertools.product(range(k), repeat=2):
            out[a, b] = self.transition_rate(usable[a], usable[b])
        return out

    def violations(self, m: int) -> list[str]:
        out = []
        for down, (psi, phi) in self.weights.items():
            if any(i < 1 or i > m for i in down):
                out.append(f"availability set {sorted(down)} names unknown nodes")
            if psi < 0 or phi < 0 or not (np.isfinite(psi) and np.isfinite(phi)):
                out.append(f"availability set {sorted(down)} has invalid weights")
            elif (psi > 0) != (phi > 0):
                out.append(f"availability set unusable: {sorted(down)} has psi*phi = 0")
        if not (self.psi(frozenset()) > 0 and self.phi(frozenset()) > 0):
            out.append("availability must contain the empty set with psi > 0 and phi > 0")
            return out
        usable = self.usable_sets
        graph = nx.Graph()
        graph.add_nodes_from(range(len(usable)))
        for a, b in itertools.combinations(range(len(usable)), 2):
            if usable[a] < usable[b] or usable[b] < usable[a]:
                graph.add_edge(a, b)
        if not nx.is_connected(graph):
            out.append("usable availability sets are not connected by breakdown/repair moves")
        return out


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Full description of an unreliable Jackson network.

    ``routing`` is ``(m+1) x (m+1)`` with index 0 the outside node.
    ``services[i-1]`` is the rate function of node ``i``.
    """

    arrival_rate: float
    routing: np.ndarray
    services: tuple[RateFunction, ...]
    availability: AvailabilityModel = field(default_factory=AvailabilityModel.reliable)

    def __post_init__(self) -> None:
        routing = np.array(self.routing, dtype=float)
        routing.setflags(write=False)
        object.__setattr__(self, "routing", routing)
        object.__setattr__(self, "services", tuple(self.services))
        object.__setattr__(self, "arrival_rate", float(self.arrival_rate))

    @property
    def m(self) -> int:
        return len(self.services)

    def to_dict(self) -> dict:
        avail = [
            {"down": sorted(d), "psi": psi, "phi": phi}
            for d, (psi, phi) in sorted(
                self.availability.weights.items(), key=lambda kv: (len(kv[0]), sorted(kv[0]))
            )
        ]
        return {
            "arrival_rate": self.arrival_rate,
            "routing": self.routing.tolist(),
            "nodes": [{"id": i + 1, "service": s.to_dict()} for i, s in enumerate(self.services)],
            "availability": avail,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> NetworkSpec:
        try:
            nodes = sorted(doc["nodes"], key=lambda node: int(node["id"]))
            if [int(node["id"]) for node in nodes] != list(range(1, len(nodes) + 1)):
                raise SpecError("node ids must be 1..m")
            services = tuple(RateFunction.from_dict(node["service"]) for node in nodes)
            avail_doc = doc.get("availability", [{"down": [], "psi": 1, "phi": 1}])
            availability = AvailabilityModel.from_entries(
                (e.get("down", []), e["psi"], e["phi"]) for e in avail_doc
            )
            return cls(
                arrival_rate=float(doc["arrival_rate"]),
                routing=np.array(doc["routing"], dtype=float),
                services=services,
                availability=availability,
            )
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed network document: {exc!r}") from exc


def load_spec(path: str | Path) -> NetworkSpec:
    with open(path, encoding="utf-8") as fh:
        return NetworkSpec.from_dict(json.load(fh))


def dump_spec(spec: NetworkSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2), encoding="utf-8")


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def _routing_graph(routing: np.ndarray) -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_nodes_from(range(routing.shape[0]))
    rows, cols = np.nonzero(routing > 0)
    graph.add_edges_from(zip(rows.tolist(), cols.tolist(), strict=True))
    return graph


def validate_spec(spec: NetworkSpec) -> ValidationReport:
    """Collect every invariant violation of ``spec``; never raises."""
    out: list[str] = []
    m = spec.m
    if m < 1:
        out.append("network needs at least one node")
    if not (spec.arrival_rate > 0 and np.isfinite(spec.arrival_rate)):
        out.append("arrival rate must be > 0")
    r = spec.routing
    if r.shape != (m + 1, m + 1):
        out.append(f"routing must be {m + 1}x{m + 1}, got {r.shape}")
        return ValidationReport(tuple(out))
    if not np.all(np.isfinite(r)) or np.any(r < 0) or np.any(r > 1):
        out.append("routing entries must lie in [0, 1]")
    sums = r.sum(axis=1)
    for i in range(1, m + 1):
        if abs(sums[i] - 1.0) > ROW_TOL:
            out.append(f"row not stochastic: row {i} sums to {sums[i]:.12g}")
    if sums[0] > 1.0 + ROW_TOL:
        out.append(f"row 0 sums to {sums[0]:.12g} > 1")
    if not nx.is_strongly_connected(_routing_graph(r)):
        out.append("routing is not irreducible over nodes plus outside")
    for i, svc in enumerate(spec.services, start=1):
        out.extend(f"node {i}: {msg}" for msg in svc.violations())
    out.extend(spec.availability.violations(m))
    return ValidationReport(tuple(out))


def solve_traffic(spec: NetworkSpec) -> np.ndarray:
    """Per-node arrival intensities ``lambda_i`` (length ``m``, node ``i`` at ``i-1``)."""
    m = spec.m
    r = spec.routing
    lhs = np.eye(m) - r[1:, 1:].T
    rhs = spec.arrival_rate * r[0, 1:]
    if np.linalg.cond(lhs) > 1e12:
        raise SpecError("no unique traffic solution")
    lam = np.linalg.solve(lhs, rhs)
    resid = np.max(np.abs(lhs @ lam - rhs)) / max(np.max(np.abs(lam)), 1e-300)
    if not np.all(np.isfinite(lam)) or resid > SOLVE_TOL:
        raise SpecError("no unique traffic solution")
    return lam


def check_routing_reversible(spec: NetworkSpec, traffic: np.ndarray) -> tuple[bool, float]:
    """Detailed balance of routing flows ``lambda_i r_ij`` over nodes plus outside."""
    lam = np.concatenate(([spec.arrival_rate], np.asarray(traffic, dtype=float)))
    flows = lam[:, None] * spec.routing
    violation = float(np.max(np.abs(flows - flows.T)))
    return violation < 1e-10 * float(np.max(lam)), violation


def modified_routing(routing: np.ndarray, down: Iterable[int]) -> np.ndarray:
    """RS-RD blocking routing for down-set ``down``.

    Returned matrix keeps the full ``(m+1) x (m+1)`` indexing; rows and columns
    of down nodes are zero, and mass aimed at them is folded onto the diagonal.
    The outside row therefore carries zero arrival probability into down nodes.
    """
    r = np.array(routing, dtype=float)
    down_idx = sorted(set(int(i) for i in down))
    if not down_idx:
        return r
    up = np.ones(r.shape[0], dtype=bool)
    up[down_idx] = False
    out = np.where(up[:, None] & up[None, :], r, 0.0)
    folded = r[:, down_idx].sum(axis=1)
    out[np.flatnonzero(up), np.flatnonzero(up)] += folded[up]
    return out


def check_regular(routing: np.ndarray) -> bool:
    """``R^k > 0`` for some ``k``: strong connectivity plus aperiodicity."""
    graph = _routing_graph(np.asarray(routing))
    return nx.is_strongly_connected(graph) and nx.is_aperiodic(graph)
