"""Truncated generators, stationary vectors, spectral gaps and Cheeger constants.

Truncation is reflecting: transitions that would leave the box are dropped.
The spectral gap is the second-smallest eigenvalue of the pi-symmetrized
negative generator, which matches the Dirichlet-form definition even for
non-reversible chains.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh

from .network import NetworkSpec, RateFunction, modified_routing

MAX_STATES = 200_000
DENSE_LIMIT = 3000
CHEEGER_CAP = 20


class StateSpaceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TruncatedGenerator:
    """Sparse rate matrix on a finite box.

    ``states`` is an ``(S, m+1)`` integer array: column 0 is the index of the
    down-set in ``usable`` (always 0 for birth-death chains), the remaining
    columns are queue lengths.
    """

    Q: sp.csr_matrix
    states: np.ndarray
    trunc: int
    usable: tuple[frozenset[int], ...] = (frozenset(),)
    kind: str = "network"

    @property
    def size(self) -> int:
        return self.Q.shape[0]

    def index(self, down, ns: Sequence[int]) -> int:
        d_idx = self.usable.index(frozenset(down))
        flat = np.ravel_multi_index(tuple(int(n) for n in ns), (self.trunc + 1,) * len(ns))
        return int(d_idx * (self.trunc + 1) ** len(ns) + flat)

    def exit_rates(self) -> np.ndarray:
        return -self.Q.diagonal()

    def write_triplets(self, fh: TextIO) -> None:
        """``row col rate`` per off-diagonal entry."""
        coo = self.Q.tocoo()
        for r, c, v in zip(coo.row, coo.col, coo.data, strict=True):
            if r != c and v != 0:
                fh.write(f"{r} {c} {float(v)!r}\n")


def _assemble(rows, cols, vals, size: int) -> sp.csr_matrix:
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    keep = (vals > 0) & (rows != cols)
    off = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(size, size)).tocsr()
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def build_network_generator(spec: NetworkSpec, trunc: int) -> TruncatedGenerator:
    """Generator of the network on ``usable down-sets x {0..trunc}^m``."""
    m = spec.m
    usable = tuple(spec.availability.usable_sets)
    side = trunc + 1
    per_d = side**m
    size = len(usable) * per_d
    if size > MAX_STATES:
        raise StateSpaceError(f"state space of {size} states exceeds {MAX_STATES}")
    grid = np.indices((side,) * m).reshape(m, -1).T  # (per_d, m)
    local = np.arange(per_d)
    strides = side ** np.arange(m - 1, -1, -1)
    mu = np.stack([fn(grid[:, i]) for i, fn in enumerate(spec.services)], axis=1) if m else grid
    rows, cols, vals = [], [], []

    for d_idx, down in enumerate(usable):
        base = d_idx * per_d
        r = modified_routing(spec.routing, down)
        up = [i for i in range(1, m + 1) if i not in down]
        for j in up:
            ok = grid[:, j - 1] < trunc
            rows.append(base + local[ok])
            cols.append(base + local[ok] + strides[j - 1])
            vals.append(np.full(ok.sum(), spec.arrival_rate * r[0, j]))
        for i in up:
            busy = grid[:, i - 1] >= 1
            rows.append(base + local[busy])
            cols.append(base + local[busy] - strides[i - 1])
            vals.append(mu[busy, i - 1] * r[i, 0])
            for j in up:
                if j == i or r[i, j] == 0:
                    continue
                ok = busy & (grid[:, j - 1] < trunc)
                rows.append(base + local[ok])
                cols.append(base + local[ok] - strides[i - 1] + strides[j - 1])
                vals.append(mu[ok, i - 1] * r[i, j])

    avail = spec.availability.rate_matrix()
    for a, b in zip(*np.nonzero(avail), strict=True):
        rows.append(a * per_d + local)
        cols.append(b * per_d + local)
        vals.append(np.full(per_d, avail[a, b]))

    Q = _assemble(rows, cols, vals, size)
    d_col = np.repeat(np.arange(len(usable)), per_d)[:, None]
    states = np.hstack([d_col, np.tile(grid, (len(usable), 1))])
    return TruncatedGenerator(Q, states, trunc, usable, "network")


def build_bd_generator(lam: float, deaths: RateFunction | Callable | Sequence[float],
                       trunc: int) -> TruncatedGenerator:
    """Tridiagonal generator on ``{0..trunc}``: birth ``lam``, death ``mu(n)``.

    ``deaths`` is a rate function, a vectorized callable of ``n``, or the
    sequence ``mu(1..trunc)``.
    """
    if trunc < 1:
        raise ValueError("trunc must be >= 1")
    ns = np.arange(1, trunc + 1)
    if callable(deaths):
        mu = np.asarray(deaths(ns), dtype=float)
    else:
        mu = np.asarray(deaths, dtype=float)[:trunc]
    if mu.shape != (trunc,) or np.any(mu <= 0):
        raise ValueError("need positive death rates mu(1..trunc)")
    up = np.full(trunc, float(lam))
    diag = -np.concatenate((up, [0.0])) - np.concatenate(([0.0], mu))
    Q = sp.diags([mu, diag, up], offsets=[-1, 0, 1], format="csr")
    states = np.stack([np.zeros(trunc + 1, dtype=np.int64), np.arange(trunc + 1)], axis=1)
    return TruncatedGenerator(Q, states, trunc, (frozenset(),), "birth_death")


def generator_from_matrix(Q) -> TruncatedGenerator:
    """Wrap an arbitrary rate matrix (diagonal recomputed from off-diagonals)."""
    Q = sp.csr_matrix(Q, dtype=float)
    off = Q - sp.diags(Q.diagonal())
    diag = -np.asarray(off.sum(axis=1)).ravel()
    n = Q.shape[0]
    states = np.stack([np.zeros(n, dtype=np.int64), np.arange(n)], axis=1)
    return TruncatedGenerator((off + sp.diags(diag)).tocsr(), states, n - 1, (frozenset(),), "matrix")


def stationary_of(gen: TruncatedGenerator, tol: float = 1e-11) -> np.ndarray:
    """Solve ``pi Q = 0``, ``sum(pi) = 1``."""
    n = gen.size
    if n == 1:
        return np.ones(1)
    if gen.kind == "birth_death":
        up = gen.Q.diagonal(1)
        down = gen.Q.diagonal(-1)
        logs = np.concatenate(([0.0], np.cumsum(np.log(up) - np.log(down))))
        pi = np.exp(logs - logs.max())
        return pi / pi.sum()
    # replace one balance equation by pi[k] = 1 (a unit row keeps the LU sparse)
    k = int(np.argmax(gen.exit_rates() > 0))
    A = gen.Q.T.tolil()
    A[k, :] = 0.0
    A[k, k] = 1.0
    lu = spla.splu(A.tocsc())
    rhs = np.zeros(n)
    rhs[k] = 1.0
    pi = lu.solve(rhs)
    pi /= pi.sum()
    resid = gen.Q.T @ pi
    if np.abs(resid).max() > tol:
        # one step of iterative refinement
        resid[k] = 0.0
        pi = pi - lu.solve(resid)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    resid = np.abs(gen.Q.T @ pi).max()
    if resid > tol * max(1.0, np.abs(gen.Q.diagonal()).max()):
        raise ArithmeticError(f"stationary residual {resid:.3g} above tolerance")
    return pi


@dataclass
class SpectralResult:
    gap: float
    stationary: np.ndarray = field(repr=False)
    detailed_balance_residual: float
    trunc: int
    n_states: int
    method: str = "symmetric_eigensolve"
    lambda0: float = 0.0


def symmetrized(gen: TruncatedGenerator, pi: np.ndarray, db_tol: float = 1e-10) -> sp.csr_matrix:
    """``(S + S^T)/2`` with ``S = Pi^{1/2} (-Q) Pi^{-1/2}``.

    Under detailed balance ``S`` has off-diagonal ``-sqrt(q(x,y) q(y,x))``,
    which avoids ``pi`` altogether and stays finite when ``pi`` underflows.
    """
    if detailed_balance_check(gen, pi) < db_tol:
        off = gen.Q - sp.diags(gen.Q.diagonal())
        geo = off.multiply(off.T).sqrt()
        return (sp.diags(gen.exit_rates()) - geo).tocsr()
    root = np.sqrt(pi)
    if np.any(root == 0):
        raise ArithmeticError("stationary mass underflows; cannot symmetrize a non-reversible chain")
    S = sp.diags(root) @ (-gen.Q) @ sp.diags(1.0 / root)
    return ((S + S.T) * 0.5).tocsr()


def numeric_gap(gen: TruncatedGenerator, pi: np.ndarray | None = None) -> SpectralResult:
    if pi is None:
        pi = stationary_of(gen)
    sym = symmetrized(gen, pi)
    n = gen.size
    scale = float(np.abs(sym.diagonal()).max()) or 1.0
    if n == 1:
        vals = np.array([0.0, 0.0])
    elif n <= DENSE_LIMIT:
        vals = eigh(sym.toarray(), eigvals_only=True, subset_by_index=[0, 1])
    else:
        shift = 1e-6 * scale
        try:
            vals = spla.eigsh(sym, k=2, sigma=-shift, which="LM", return_eigenvectors=False,
                              tol=1e-12, maxiter=10_000)
        except spla.ArpackNoConvergence as exc:
            raise ArithmeticError("eigensolve did not converge") from exc
        vals = np.sort(vals)
    if abs(vals[0]) > 1e-9 * scale:
        raise ArithmeticError(f"smallest eigenvalue {vals[0]:.3g} is not zero")
    return SpectralResult(
        gap=float(max(vals[1], 0.0)), stationary=pi,
        detailed_balance_residual=detailed_balance_check(gen, pi), trunc=gen.trunc,
        n_states=n, lambda0=float(vals[0]),
    )


def direct_gap(gen: TruncatedGenerator) -> float:
    """Second-smallest real part of the spectrum of ``-Q`` (reversible chains only)."""
    vals = np.sort(np.linalg.eigvals(-gen.Q.toarray()).real)
    return float(vals[1])


def detailed_balance_check(gen: TruncatedGenerator, pi: np.ndarray) -> float:
    """``max |pi(x)q(x,y) - pi(y)q(y,x)|`` normalized by the largest flow."""
    off = gen.Q - sp.diags(gen.Q.diagonal())
    flow = sp.diags(pi) @ off
    diff = abs(flow - flow.T)
    top = flow.max()
    if top == 0:
        return 0.0
    return float(diff.max() / top)


@dataclass
class CheegerResult:
    kappa: float
    subset: np.ndarray
    n_states: int
    exact: bool


def _subset_kappa(members: np.ndarray, flows: np.ndarray, pi: np.ndarray) -> np.ndarray:
    inside = members.astype(float)
    out = np.einsum("ij,ij->i", inside @ flows, 1.0 - inside)
    mass = inside @ pi
    return out / (mass * (1.0 - mass))


def cheeger_exact(gen: TruncatedGenerator, pi: np.ndarray | None = None,
                  cap: int = CHEEGER_CAP) -> CheegerResult:
    """Minimal ``kappa(A) = flow(A -> A^c) / (pi(A) pi(A^c))`` over proper subsets.

    Exhaustive for at most ``cap`` states; otherwise a sweep cut along the
    second eigenvector (an upper bound on the true minimum, ``exact=False``).
    """
    if pi is None:
        pi = stationary_of(gen)
    n = gen.size
    off = (gen.Q - sp.diags(gen.Q.diagonal())).toarray()
    flows = pi[:, None] * off
    if n <= cap:
        best, best_mask = np.inf, 0
        bits = np.arange(n)
        # complements give equal kappa, so fix the last state outside A
        total = 1 << (n - 1)
        chunk = 1 << 16
        for start in range(1, total, chunk):
            masks = np.arange(start, min(start + chunk, total))
            members = (masks[:, None] >> bits[None, :]) & 1
            kap = _subset_kappa(members, flows, pi)
            k = int(np.argmin(kap))
            if kap[k] < best:
                best, best_mask = float(kap[k]), int(masks[k])
        subset = np.flatnonzero((best_mask >> np.arange(n)) & 1)
        return CheegerResult(best, subset, n, True)
    sym = symmetrized(gen, pi)
    _, vecs = spla.eigsh(sym, k=2, sigma=-1e-6 * np.abs(sym.diagonal()).max(), which="LM")
    fiedler = vecs[:, 1] / np.sqrt(pi)
    order = np.argsort(fiedler)
    members = np.zeros((n - 1, n), dtype=bool)
    for k in range(n - 1):
        members[k, order[: k + 1]] = True
    kap = _subset_kappa(members, flows, pi)
    k = int(np.argmin(kap))
    return CheegerResult(float(kap[k]), np.sort(order[: k + 1]), n, False)


@dataclass
class CheegerSandwich:
    lower: float
    gap: float
    upper: float
    q_norm: float
    exact: bool

    @property
    def holds(self) -> bool:
        return self.lower <= self.gap <= self.upper


def cheeger_sandwich(gen: TruncatedGenerator, cap: int = CHEEGER_CAP) -> CheegerSandwich:
    """``kappa^2 / (8 |Q|) <= gap <= kappa`` with ``|Q|`` the largest exit rate."""
    pi = stationary_of(gen)
    ch = cheeger_exact(gen, pi, cap)
    gap = numeric_gap(gen, pi).gap
    q_norm = float(gen.exit_rates().max())
    return CheegerSandwich(ch.kappa**2 / (8.0 * q_norm), gap, ch.kappa, q_norm, ch.exact)


def kronecker_sum(a: TruncatedGenerator, b: TruncatedGenerator) -> TruncatedGenerator:
    """Generator of two independent chains on the product space."""
    Q = sp.kron(a.Q, sp.identity(b.size)) + sp.kron(sp.identity(a.size), b.Q)
    grid = np.array(list(itertools.product(range(a.size), range(b.size))))
    states = np.hstack([np.zeros((len(grid), 1), dtype=np.int64), grid])
    return TruncatedGenerator(Q.tocsr(), states, max(a.trunc, b.trunc), (frozenset(),), "product")


def gap_with_doubling(build: Callable[[int], TruncatedGenerator], start: int, rtol: float = 1e-3,
                      max_trunc: int | None = None) -> tuple[SpectralResult, list[tuple[int, float]]]:
    """Double the truncation until consecutive gaps agree to ``rtol``.

    Returns the result at the largest truncation reached and the study trail.
    """
    trail = []
    trunc = start
    prev = None
    while True:
        try:
            res = numeric_gap(build(trunc))
        except StateSpaceError:
            if prev is None:
                raise
            return prev, trail
        trail.append((trunc, res.gap))
        if prev is not None and abs(prev.gap - res.gap) <= rtol * res.gap:
            return res, trail
        if max_trunc is not None and 2 * trunc > max_trunc:
            return res, trail
        prev = res
        trunc *= 2
