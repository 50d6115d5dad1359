"""Dense reference solver for the unbalanced transport LP.

Deliberately naive and independent of the flow code: the problem

    min  <C, M> + kappa * (|f0 - g0|_1 + |f1 - g1|_1)
    s.t. M 1 = g0,  M^T 1 = g1,  M >= 0

is written in equality form with slack pairs ``f0 - M 1 = s0+ - s0-`` (and
likewise for f1) and solved by a tableau simplex under Bland's rule. The
positive slacks give a feasible starting basis, so no phase one is needed.
Meant for tests on grids of a handful of pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mkflow.distributions import GroundCost, MassDistribution, QuantizedDistribution
from mkflow.errors import InvalidArgument

MAX_PLAN_ENTRIES = 4096


@dataclass(frozen=True, eq=False)
class OracleResult:
    value: float
    plan: np.ndarray  # dense K0 x K1, mass units
    g0: MassDistribution
    g1: MassDistribution
    pivots: int


def _simplex_bland(A: np.ndarray, b: np.ndarray, c: np.ndarray, basis: list[int], tol: float = 1e-9):
    """Minimise c.x subject to A x = b, x >= 0 from a feasible identity basis."""
    m, n = A.shape
    T = np.hstack([A, b[:, None]]).astype(np.float64)
    basis = list(basis)
    pivots = 0
    scale = max(1.0, float(np.abs(c).max()))
    while True:
        cb = c[basis]
        reduced = c - cb @ T[:, :n]
        entering = -1
        for j in range(n):  # Bland: lowest index with negative reduced cost
            if reduced[j] < -tol * scale:
                entering = j
                break
        if entering < 0:
            break
        column = T[:, entering]
        rows = np.flatnonzero(column > tol)
        if rows.size == 0:
            raise RuntimeError("LP is unbounded")
        ratios = T[rows, n] / column[rows]
        best = ratios.min()
        ties = rows[np.abs(ratios - best) <= tol * max(1.0, abs(best))]
        leave = min(ties, key=lambda r: basis[r])  # Bland: lowest basic index
        T[leave] /= T[leave, entering]
        for r in range(m):
            if r != leave and T[r, entering] != 0:
                T[r] -= T[r, entering] * T[leave]
        basis[leave] = entering
        pivots += 1
    # recompute the basic solution from scratch rather than trusting the tableau
    x = np.zeros(n)
    x[basis] = np.linalg.solve(A[:, basis], b)
    x[np.abs(x) < tol] = 0.0
    return x, pivots


def lp_distance(f0: QuantizedDistribution, f1: QuantizedDistribution, c: GroundCost,
                kappa: float) -> OracleResult:
    if f0.unit_size != f1.unit_size:
        raise InvalidArgument("unit sizes differ; quantize jointly")
    if not kappa > 0:
        raise InvalidArgument("kappa must be positive")
    k0, k1 = f0.grid.size, f1.grid.size
    if k0 * k1 > MAX_PLAN_ENTRIES:
        raise InvalidArgument(f"{k0}x{k1} plan exceeds the oracle limit of {MAX_PLAN_ENTRIES} entries")
    nm = k0 * k1
    n = nm + 2 * k0 + 2 * k1
    A = np.zeros((k0 + k1, n))
    for i in range(k0):
        A[i, i * k1:(i + 1) * k1] = 1.0
    for j in range(k1):
        A[k0 + j, j:nm:k1] = 1.0
    # slack columns: s0+, s0-, s1+, s1-
    off = nm
    A[np.arange(k0), off + np.arange(k0)] = 1.0
    A[np.arange(k0), off + k0 + np.arange(k0)] = -1.0
    off += 2 * k0
    A[k0 + np.arange(k1), off + np.arange(k1)] = 1.0
    A[k0 + np.arange(k1), off + k1 + np.arange(k1)] = -1.0
    b = np.concatenate([f0.units, f1.units]).astype(np.float64)

    cost = np.full(n, float(kappa))
    cost[:nm] = c.matrix().reshape(-1)
    basis = list(range(nm, nm + k0)) + list(range(nm + 2 * k0, nm + 2 * k0 + k1))
    x, pivots = _simplex_bland(A, b, cost, basis)

    unit = f0.unit_size
    plan_units = x[:nm].reshape(k0, k1)
    value = float(cost @ x) * unit
    return OracleResult(
        value=value,
        plan=plan_units * unit,
        g0=MassDistribution(f0.grid, np.clip(plan_units.sum(axis=1), 0, None) * unit),
        g1=MassDistribution(f1.grid, np.clip(plan_units.sum(axis=0), 0, None) * unit),
        pivots=pivots,
    )


def lp_min_cost_flow(net) -> tuple[float, np.ndarray, bool]:
    """Dense LP solution of a small uncapacitated min-cost flow problem.

    Returns (objective, edge flows, feasible). Rows of the node-arc incidence
    matrix get one artificial column each, priced at 1 + sum of all edge costs,
    which exceeds the cost of any simple path; a positive artificial at the
    optimum therefore means no feasible flow exists.
    """
    n, m = net.node_count, net.edge_count
    if n * (m + n) > MAX_PLAN_ENTRIES * 4:
        raise InvalidArgument(f"network with {n} nodes and {m} edges is too large for the dense oracle")
    A = np.zeros((n, m + n))
    A[net.tail, np.arange(m)] += 1.0
    A[net.head, np.arange(m)] -= 1.0
    b = net.supply.astype(np.float64).copy()
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0
    A[np.arange(n), m + np.arange(n)] = 1.0
    big = 1.0 + float(np.sum(net.cost))
    cost = np.concatenate([net.cost, np.full(n, big)])
    x, _ = _simplex_bland(A, b, cost, list(range(m, m + n)))
    feasible = bool(np.all(x[m:] <= 1e-7))
    flow = x[:m]
    return float(flow @ net.cost), flow, feasible


@dataclass(frozen=True)
class OracleComparison:
    trial: int
    shape: tuple[int, int]
    kappa: float
    p: float
    flow_value: float
    lp_value: float
    matched: bool


ORACLE_KAPPAS = (0.25, 1.0, 4.0)
ORACLE_RTOL = 1e-9


def random_pair(rng: np.random.Generator, max_size: int = 4) -> tuple[MassDistribution, MassDistribution]:
    """Two random distributions on a shared grid with sides in [min(3, max_size), max_size].

    About a quarter of the pixels are empty and the totals differ, so both
    transport and creation/destruction are exercised.
    """
    lo = min(3, max_size)
    h, w = (int(v) for v in rng.integers(lo, max_size + 1, size=2))
    out = []
    for _ in range(2):
        values = rng.uniform(0.0, 1.0, size=(h, w)) * (rng.uniform(size=(h, w)) > 0.25)
        out.append(MassDistribution.from_array(values * rng.uniform(0.5, 2.0)))
    return out[0], out[1]


def compare_random(trials: int = 200, max_size: int = 4, seed: int = 0, resolution: int = 10**4,
                   kappas=ORACLE_KAPPAS, ps=(1.0,), rtol: float = ORACLE_RTOL) -> list[OracleComparison]:
    """Solve random small instances with both the flow solver and the LP, recording agreement."""
    from mkflow.distributions import quantize_jointly
    from mkflow.transport import unbalanced_distance

    rng = np.random.default_rng(seed)
    records = []
    for t in range(trials):
        f0, f1 = random_pair(rng, max_size)
        kappa = float(kappas[t % len(kappas)])
        p = float(ps[t % len(ps)])
        c = GroundCost.on(f0.grid, p)
        flow_value = unbalanced_distance(f0, f1, c, kappa, resolution).value
        q0, q1 = quantize_jointly(f0, f1, resolution)
        lp_value = lp_distance(q0, q1, c, kappa).value
        matched = abs(flow_value - lp_value) <= rtol * max(abs(lp_value), 1e-300)
        records.append(OracleComparison(t, f0.grid.shape, kappa, p, flow_value, lp_value, matched))
    return records
