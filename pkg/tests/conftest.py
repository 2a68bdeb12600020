from __future__ import annotations

from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from jacksongap.network import AvailabilityModel, NetworkSpec, RateFunction, load_spec, solve_traffic

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def two_node():
    return load_spec(DATA / "two_node.json")


def fraction_solve(a, b):
    """Exact Gauss-Jordan over ``Fraction``; ``a`` is a list of rows."""
    n = len(a)
    m = [[Fraction(x) for x in row] + [Fraction(y)] for row, y in zip(a, b, strict=True)]
    for col in range(n):
        piv = next(r for r in range(col, n) if m[r][col] != 0)
        m[col], m[piv] = m[piv], m[col]
        p = m[col][col]
        m[col] = [x / p for x in m[col]]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col]
                m[r] = [x - f * y for x, y in zip(m[r], m[col], strict=True)]
    return [row[-1] for row in m]


def random_rate(rng: np.random.Generator, lam: float) -> RateFunction:
    """A service rate function whose limit comfortably exceeds ``lam``."""
    kind = rng.integers(3)
    top = lam * rng.uniform(1.3, 3.0)
    if kind == 0:
        return RateFunction.constant(top)
    if kind == 1:
        vals = rng.uniform(0.5 * top, 1.5 * top, size=rng.integers(1, 4))
        return RateFunction.table(vals.tolist(), top)
    return RateFunction.geometric(top, rng.uniform(-0.5, 0.5) * top, rng.uniform(0.1, 0.8))


def reversible_routing(rng: np.random.Generator, m: int) -> np.ndarray:
    """Routing from symmetric positive weights ``w``: ``r_ij = w_ij / sum_j w_ij``.

    Node self-loops are kept so that the routing chain is aperiodic even for
    ``m = 1``.
    """
    w = rng.uniform(0.2, 1.0, size=(m + 1, m + 1))
    w = w + w.T
    w[0, 0] = 0.0
    return w / w.sum(axis=1, keepdims=True)


def random_spec(rng: np.random.Generator, m: int, unreliable: bool, reversible: bool = True) -> NetworkSpec:
    """Random ergodic spec; unreliable variants always get reversible routing."""
    if reversible or unreliable:
        routing = reversible_routing(rng, m)
    else:
        routing = rng.dirichlet(np.ones(m + 1), size=m + 1)
        routing[:, 0] += 0.2  # keep every node able to leave
        routing /= routing.sum(axis=1, keepdims=True)
    lam0 = float(rng.uniform(0.5, 2.0))
    probe = NetworkSpec(lam0, routing, tuple(RateFunction.constant(1.0) for _ in range(m)),
                        AvailabilityModel.reliable())
    traffic = solve_traffic(probe)
    services = tuple(random_rate(rng, float(x)) for x in traffic)
    if unreliable:
        entries = [((), 1.0, 1.0)]
        for i in range(1, m + 1):
            entries.append(((i,), float(rng.uniform(0.3, 2.0)), float(rng.uniform(0.3, 2.0))))
        avail = AvailabilityModel.from_entries(entries)
    else:
        avail = AvailabilityModel.reliable()
    return NetworkSpec(lam0, routing, services, avail)
