"""Balanced and unbalanced transport distances through a min-cost flow reduction.

Node layout of a transport network with K0 source pixels and K1 sink pixels::

    0 .. K0-1            sources, supply  f0.units
    K0 .. K0+K1-1        sinks,   supply -f1.units
    K0+K1                auxiliary node w, supply |f1| - |f0|

Direct source->sink edges cost ``c(x_i, x_j)``. Every edge touching ``w``
costs ``kappa``: leaving mass at a source (source->w) destroys it and
feeding a sink from w (w->sink) creates it. A direct edge costing more than
``2 * kappa`` never carries flow in an optimum (destroying at the source and
creating at the sink is cheaper), so such edges are not emitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from mkflow.distributions import (
    DEFAULT_RESOLUTION,
    GroundCost,
    MassDistribution,
    QuantizedDistribution,
    quantize_jointly,
    quantize_with_unit,
    total_mass,
)
from mkflow.errors import InvalidArgument, SolverError
from mkflow.flow import FlowNetwork, FlowSolution, solve_min_cost_flow

BALANCE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse plan: ``mass[k]`` moves from source pixel ``source[k]`` to ``target[k]``."""

    source: np.ndarray
    target: np.ndarray
    mass: np.ndarray

    def __len__(self):
        return int(self.mass.shape[0])

    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.source.tolist(), self.target.tolist(), self.mass.tolist()))

    def row_marginal(self, k0: int) -> np.ndarray:
        return np.bincount(self.source, weights=self.mass, minlength=k0)

    def column_marginal(self, k1: int) -> np.ndarray:
        return np.bincount(self.target, weights=self.mass, minlength=k1)

    def to_dense(self, k0: int, k1: int) -> np.ndarray:
        dense = np.zeros((k0, k1))
        np.add.at(dense, (self.source, self.target), self.mass)
        return dense

    def cost(self, c: GroundCost) -> float:
        if len(self) == 0:
            return 0.0
        return math.fsum((c.costs(self.source, self.target) * self.mass).tolist())


@dataclass(frozen=True)
class SolveStats:
    edges_before_prune: int
    edges_after_prune: int
    simplex_iterations: int
    quantization_unit: float
    quantization_error_bound: float


@dataclass(frozen=True, eq=False)
class TransportResult:
    value: float
    plan: TransportPlan
    g0: MassDistribution
    g1: MassDistribution
    destroyed_mass: float
    created_mass: float
    kappa: float
    stats: SolveStats
    # integer-unit view of the same solution, exact for bookkeeping checks
    plan_units: np.ndarray = field(repr=False)
    destroyed_units: np.ndarray = field(repr=False)
    created_units: np.ndarray = field(repr=False)

    def recomputed_value(self, c: GroundCost) -> float:
        penalty = 0.0 if math.isinf(self.kappa) else self.kappa * (self.created_mass + self.destroyed_mass)
        return self.plan.cost(c) + penalty

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "kappa": None if math.isinf(self.kappa) else self.kappa,
            "plan_entries": len(self.plan),
            "destroyed_mass": self.destroyed_mass,
            "created_mass": self.created_mass,
            "edges_before_prune": self.stats.edges_before_prune,
            "edges_after_prune": self.stats.edges_after_prune,
            "simplex_iterations": self.stats.simplex_iterations,
            "quantization_unit": self.stats.quantization_unit,
            "quantization_error_bound": self.stats.quantization_error_bound,
        }


def prune_edges(c: GroundCost, kappa: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Predicate over (source, target) index arrays keeping direct edges with cost <= 2 kappa.

    Edges at the auxiliary node are not subject to it and are always kept.
    """
    if not kappa >= 0:
        raise InvalidArgument(f"kappa must be nonnegative, got {kappa!r}")
    threshold = 2.0 * kappa

    def keep(i, j):
        return c.costs(i, j) <= threshold

    return keep


DENSE_PAIR_LIMIT = 4_000_000


def direct_edges(c: GroundCost, sources: np.ndarray, sinks: np.ndarray,
                 max_cost: float = math.inf) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All (i, j, cost) with i in ``sources``, j in ``sinks`` and cost <= max_cost.

    Sorted by (i, j). Small candidate sets are filtered as one vectorised
    batch; past DENSE_PAIR_LIMIT pairs on a shared grid the candidates are
    enumerated by pixel offset so no K0 x K1 array is built.
    """
    sources = np.asarray(sources, dtype=np.int64)
    sinks = np.asarray(sinks, dtype=np.int64)
    g0, g1 = c.grid0, c.grid1
    threshold = None if math.isinf(max_cost) else max_cost
    pairs = sources.size * sinks.size
    use_offsets = False
    if g0 == g1 and threshold is not None:
        reach = max_cost ** (1.0 / c.p) / g0.spacing
        rx = min(g0.width - 1, int(math.floor(reach)) + 1)
        ry = min(g0.height - 1, int(math.floor(reach)) + 1)
        offsets = (2 * rx + 1) * (2 * ry + 1)
        # one offset pass costs roughly as much as filtering a few hundred pairs
        use_offsets = pairs > DENSE_PAIR_LIMIT or offsets * 400 < pairs
    if not use_offsets:
        block = c.cost_block(sources, sinks)
        if threshold is None:
            a, b = np.divmod(np.arange(block.size), sinks.size)
        else:
            a, b = np.nonzero(block <= threshold)
        return sources[a], sinks[b], block[a, b].astype(np.float64)

    snk_mask = np.zeros(g1.size, dtype=bool)
    snk_mask[sinks] = True
    w, h = g0.width, g0.height
    src_col, src_row = g0.coords(sources)
    parts_i, parts_j = [], []
    for dy in range(-ry, ry + 1):
        for dx in range(-rx, rx + 1):
            col = src_col + dx
            row = src_row + dy
            ok = (col >= 0) & (col < w) & (row >= 0) & (row < h)
            j = row[ok] * w + col[ok]
            ok2 = snk_mask[j]
            parts_i.append(sources[ok][ok2])
            parts_j.append(j[ok2])
    i = np.concatenate(parts_i)
    j = np.concatenate(parts_j)
    cost = c.costs(i, j).astype(np.float64)
    keep = cost <= threshold
    i, j, cost = i[keep], j[keep], cost[keep]
    order = np.argsort(i * g1.size + j, kind="stable")
    return i[order], j[order], cost[order]


@dataclass(frozen=True, eq=False)
class TransportNetwork:
    """A FlowNetwork plus the bookkeeping needed to read a flow back as a plan."""

    network: FlowNetwork
    k0: int
    k1: int
    direct_count: int  # edges [0, direct_count) are source->sink
    candidate_count: int  # source->sink pairs before pruning
    has_aux: bool

    @property
    def aux_node(self) -> int:
        return self.k0 + self.k1


def build_transport_network(f0: QuantizedDistribution, f1: QuantizedDistribution, c: GroundCost,
                            kappa: float, prune: bool = True,
                            bidirectional_aux: bool = False) -> TransportNetwork:
    """Flow network whose optimum equals the unbalanced transport cost in units.

    ``kappa = inf`` omits the auxiliary node and gives the balanced problem.
    With ``bidirectional_aux`` the auxiliary node is joined to every pixel node
    in both directions; the extra directions never lower the optimum.
    Pixels holding no units get no edges since they cannot carry flow.
    """
    if f0.unit_size != f1.unit_size:
        raise InvalidArgument(
            f"unit sizes differ ({f0.unit_size!r} vs {f1.unit_size!r}); quantize jointly"
        )
    if f0.grid != c.grid0 or f1.grid != c.grid1:
        raise InvalidArgument("distributions do not live on the ground-cost grids")
    if not kappa >= 0:
        raise InvalidArgument(f"kappa must be nonnegative, got {kappa!r}")
    k0, k1 = c.grid0.size, c.grid1.size
    sources = np.flatnonzero(f0.units)
    sinks = np.flatnonzero(f1.units)
    has_aux = not math.isinf(kappa)
    limit = 2.0 * kappa if (prune and has_aux) else math.inf
    i, j, cost = direct_edges(c, sources, sinks, limit)
    tail = [i]
    head = [j + k0]
    costs = [cost]

    n = k0 + k1 + (1 if has_aux else 0)
    supply = np.zeros(n, dtype=np.int64)
    supply[:k0] = f0.units
    supply[k0:k0 + k1] = -f1.units
    if has_aux:
        w = k0 + k1
        supply[w] = f1.total_units - f0.total_units
        if bidirectional_aux:
            src_nodes = np.arange(k0)
            snk_nodes = np.arange(k0, k0 + k1)
        else:
            src_nodes = sources
            snk_nodes = sinks + k0
        tail += [src_nodes, np.full(snk_nodes.shape, w)]
        head += [np.full(src_nodes.shape, w), snk_nodes]
        costs += [np.full(src_nodes.shape, float(kappa)), np.full(snk_nodes.shape, float(kappa))]
        if bidirectional_aux:
            tail += [np.full(src_nodes.shape, w), snk_nodes]
            head += [src_nodes, np.full(snk_nodes.shape, w)]
            costs += [np.full(src_nodes.shape, float(kappa)), np.full(snk_nodes.shape, float(kappa))]
    net = FlowNetwork(n, supply, np.concatenate(tail), np.concatenate(head), np.concatenate(costs))
    return TransportNetwork(
        network=net,
        k0=k0,
        k1=k1,
        direct_count=int(i.shape[0]),
        candidate_count=int(sources.shape[0] * sinks.shape[0]),
        has_aux=has_aux,
    )


def _error_bound(c: GroundCost, kappa: float, unit: float) -> float:
    # every pixel is off by less than one unit and each unit costs at most max(cost, 2 kappa)
    per_unit = c.max_cost() if math.isinf(kappa) else min(c.max_cost(), 2.0 * kappa)
    return per_unit * unit * (c.grid0.size + c.grid1.size)


def solve_transport_network(tn: TransportNetwork, f0: QuantizedDistribution,
                            f1: QuantizedDistribution, c: GroundCost, kappa: float,
                            solution: FlowSolution | None = None) -> TransportResult:
    """Solve ``tn`` and express the optimal flow as a transport result in mass units."""
    net = tn.network
    if solution is None:
        solution = solve_min_cost_flow(net)
    if not solution.optimal:
        raise SolverError("transport network reported infeasible; this cannot happen for valid inputs")
    unit = f0.unit_size
    flow = solution.flow
    k0, k1 = tn.k0, tn.k1

    direct = slice(0, tn.direct_count)
    used = np.flatnonzero(flow[direct])
    plan_src = net.tail[used]
    plan_tgt = net.head[used] - k0
    plan_units = flow[used]
    # pixel-level mass balance is read from the plan so both aux-edge layouts agree
    g0_units = np.bincount(plan_src, weights=plan_units, minlength=k0).astype(np.int64)
    g1_units = np.bincount(plan_tgt, weights=plan_units, minlength=k1).astype(np.int64)
    destroyed_units = np.clip(f0.units - g0_units, 0, None)
    created_units = np.clip(f1.units - g1_units, 0, None)
    # mass created at a source or destroyed at a sink (bidirectional layout only)
    extra0 = np.clip(g0_units - f0.units, 0, None)
    extra1 = np.clip(g1_units - f1.units, 0, None)
    destroyed_units = destroyed_units + extra1
    created_units = created_units + extra0

    plan = TransportPlan(plan_src, plan_tgt, plan_units * unit)
    return TransportResult(
        value=solution.objective * unit,
        plan=plan,
        g0=MassDistribution(c.grid0, g0_units * unit),
        g1=MassDistribution(c.grid1, g1_units * unit),
        destroyed_mass=float(destroyed_units.sum()) * unit,
        created_mass=float(created_units.sum()) * unit,
        kappa=float(kappa),
        stats=SolveStats(
            edges_before_prune=tn.candidate_count,
            edges_after_prune=tn.direct_count,
            simplex_iterations=solution.iterations,
            quantization_unit=unit,
            quantization_error_bound=_error_bound(c, kappa, unit),
        ),
        plan_units=np.stack([plan_src, plan_tgt, plan_units], axis=1),
        destroyed_units=destroyed_units,
        created_units=created_units,
    )


def _check_grids(f0: MassDistribution, f1: MassDistribution, c: GroundCost):
    if f0.grid != c.grid0 or f1.grid != c.grid1:
        raise InvalidArgument("distributions do not live on the ground-cost grids")


def can_cancel_shared_mass(c: GroundCost) -> bool:
    """Shared mass may stay in place when the ground cost is a metric on one grid (p <= 1)."""
    return c.grid0 == c.grid1 and c.p <= 1


def _with_shared_mass(result: TransportResult, shared: np.ndarray, f0: QuantizedDistribution,
                      f1: QuantizedDistribution, c: GroundCost) -> TransportResult:
    """Add the cancelled per-pixel mass back as zero-cost diagonal plan entries."""
    unit = f0.unit_size
    stay = np.flatnonzero(shared)
    src, tgt, units = result.plan_units.T
    src = np.concatenate([src, stay])
    tgt = np.concatenate([tgt, stay])
    units = np.concatenate([units, shared[stay]])
    order = np.lexsort((tgt, src))
    src, tgt, units = src[order], tgt[order], units[order]
    g0_units = np.bincount(src, weights=units, minlength=c.grid0.size).astype(np.int64)
    g1_units = np.bincount(tgt, weights=units, minlength=c.grid1.size).astype(np.int64)
    return replace(
        result,
        plan=TransportPlan(src, tgt, units * unit),
        g0=MassDistribution(c.grid0, g0_units * unit),
        g1=MassDistribution(c.grid1, g1_units * unit),
        plan_units=np.stack([src, tgt, units], axis=1),
    )


def unbalanced_transport_quantized(f0: QuantizedDistribution, f1: QuantizedDistribution,
                                   c: GroundCost, kappa: float, prune: bool = True,
                                   cancel_shared: bool = True) -> TransportResult:
    """Unbalanced transport between already-quantized inputs (value in mass units).

    With a metric ground cost only the pixel-wise difference of the inputs
    matters, so the shared mass ``min(f0, f1)`` is left in place and the flow
    problem is solved on the remainder; ``cancel_shared=False`` solves the
    full problem instead. Both give the same optimum.
    """
    if cancel_shared and can_cancel_shared_mass(c):
        shared = np.minimum(f0.units, f1.units)
        r0 = QuantizedDistribution(f0.grid, f0.units - shared, f0.unit_size)
        r1 = QuantizedDistribution(f1.grid, f1.units - shared, f1.unit_size)
        tn = build_transport_network(r0, r1, c, kappa, prune=prune)
        result = solve_transport_network(tn, r0, r1, c, kappa)
        return _with_shared_mass(result, shared, f0, f1, c)
    tn = build_transport_network(f0, f1, c, kappa, prune=prune)
    return solve_transport_network(tn, f0, f1, c, kappa)


def unbalanced_distance(f0: MassDistribution, f1: MassDistribution, c: GroundCost, kappa: float,
                        resolution: int = DEFAULT_RESOLUTION, prune: bool = True,
                        cancel_shared: bool = True) -> TransportResult:
    """Transport cost where mass may also be destroyed or created at ``kappa`` per unit.

    Both inputs are quantized on a shared unit ``(|f0| + |f1|) / (2 resolution)``;
    ``result.stats.quantization_error_bound`` bounds the effect on the value.
    """
    _check_grids(f0, f1, c)
    if not (kappa > 0):
        raise InvalidArgument(f"kappa must be positive, got {kappa!r}")
    q0, q1 = quantize_jointly(f0, f1, resolution)
    return unbalanced_transport_quantized(q0, q1, c, kappa, prune=prune, cancel_shared=cancel_shared)


def balanced_distance(f0: MassDistribution, f1: MassDistribution, c: GroundCost,
                      resolution: int = DEFAULT_RESOLUTION) -> TransportResult:
    """Plain transport cost between two distributions of equal total mass."""
    _check_grids(f0, f1, c)
    t0, t1 = total_mass(f0), total_mass(f1)
    if abs(t0 - t1) > BALANCE_RTOL * max(t0, t1):
        raise InvalidArgument(
            f"total masses differ ({t0!r} vs {t1!r}); use unbalanced_distance for unequal masses"
        )
    if int(resolution) != resolution or resolution < 1:
        raise InvalidArgument(f"resolution must be a positive integer, got {resolution!r}")
    unit = (t0 + t1) / (2 * resolution) if t0 + t1 > 0 else 1.0
    target = int(resolution) if t0 + t1 > 0 else 0
    q0 = quantize_with_unit(f0, unit, target=target)
    q1 = quantize_with_unit(f1, unit, target=target)
    return unbalanced_transport_quantized(q0, q1, c, math.inf, prune=False)


def wasserstein_distance(f0: MassDistribution, f1: MassDistribution, p: float = 1.0,
                         kappa: float | None = None, resolution: int = DEFAULT_RESOLUTION) -> float:
    """``T ** min(1, 1/p)`` for the transport cost T under ground cost ``d ** p``.

    With ``kappa`` None (or infinite) the balanced cost is used and the masses
    must agree; otherwise the unbalanced cost with that penalty.
    """
    if not (p > 0):
        raise InvalidArgument(f"p must be positive, got {p!r}")
    if f0.grid != f1.grid:
        raise InvalidArgument("distributions live on different grids")
    c = GroundCost.on(f0.grid, p)
    if kappa is None or math.isinf(kappa):
        value = balanced_distance(f0, f1, c, resolution).value
    else:
        value = unbalanced_distance(f0, f1, c, kappa, resolution).value
    return value ** min(1.0, 1.0 / p)
