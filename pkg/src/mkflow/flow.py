"""Uncapacitated min-cost flow with integer supplies, solved by network simplex.

Sign convention: ``supply[v] > 0`` means ``v`` ships flow out, and a feasible
flow satisfies ``outflow(v) - inflow(v) == supply[v]`` at every node.

The solver keeps a strongly feasible spanning tree rooted at an artificial
node (every node can push a positive amount of flow up to the root), which
together with the leaving-arc rule below rules out cycling. Entering arcs
are chosen by block search over the arc list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numba
import numpy as np

from mkflow.errors import FormatError, InvalidArgument

_UP = 1  # tree arc points from the node to its parent
_DOWN = -1  # tree arc points from the parent to the node

_OPTIMAL = 0
_INFEASIBLE = 1
_UNBOUNDED = 2
_ITERATION_LIMIT = 3

MIN_BLOCK_SIZE = 10


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class FlowNetwork:
    node_count: int
    supply: np.ndarray
    tail: np.ndarray
    head: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        supply = np.array(self.supply, dtype=np.int64).reshape(-1)
        tail = np.array(self.tail, dtype=np.int64).reshape(-1)
        head = np.array(self.head, dtype=np.int64).reshape(-1)
        cost = np.array(self.cost, dtype=np.float64).reshape(-1)
        n = int(self.node_count)
        if n < 1:
            raise InvalidArgument("a flow network needs at least one node")
        if supply.shape[0] != n:
            raise InvalidArgument(f"supply has {supply.shape[0]} entries for {n} nodes")
        if not (tail.shape == head.shape == cost.shape):
            raise InvalidArgument("tail, head and cost must have equal lengths")
        if tail.size and (tail.min() < 0 or head.min() < 0 or tail.max() >= n or head.max() >= n):
            raise InvalidArgument("edge endpoint out of range")
        if np.any(tail == head):
            raise InvalidArgument("self-loop edges are not allowed")
        if not np.all(np.isfinite(cost)) or np.any(cost < 0):
            raise InvalidArgument("edge costs must be finite and nonnegative")
        for name, a in (("supply", supply), ("tail", tail), ("head", head), ("cost", cost)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "node_count", n)

    @classmethod
    def from_edges(cls, supply, edges: Iterable[tuple[int, int, float]]) -> "FlowNetwork":
        edges = list(edges)
        tail = [e[0] for e in edges]
        head = [e[1] for e in edges]
        cost = [e[2] for e in edges]
        return cls(len(supply), supply, tail, head, cost)

    @property
    def edge_count(self) -> int:
        return int(self.tail.shape[0])

    def is_balanced(self) -> bool:
        return int(self.supply.sum()) == 0


@dataclass(frozen=True, eq=False)
class FlowSolution:
    flow: np.ndarray
    objective: float
    iterations: int
    status: Status
    # node potentials with cost(u, v) - potential[u] + potential[v] >= 0 on every edge
    potentials: np.ndarray = field(repr=False)
    tree: np.ndarray = field(repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@numba.njit(cache=True)
def _network_simplex(n, supply, tail, head, cost, art_cost, eps, block_size, max_iter):
    m = tail.shape[0]
    root = n
    nn = n + 1
    total = m + n

    src = np.empty(total, np.int64)
    tgt = np.empty(total, np.int64)
    c = np.empty(total, np.float64)
    flow = np.zeros(total, np.int64)
    in_tree = np.zeros(total, np.bool_)
    src[:m] = tail
    tgt[:m] = head
    c[:m] = cost

    parent = np.empty(nn, np.int64)
    pred = np.empty(nn, np.int64)
    pdir = np.zeros(nn, np.int64)
    thread = np.empty(nn, np.int64)
    rev_thread = np.empty(nn, np.int64)
    succ_num = np.empty(nn, np.int64)
    last_succ = np.empty(nn, np.int64)
    pi = np.zeros(nn, np.float64)
    path = np.empty(nn, np.int64)

    # initial star tree: every node hangs off the root by an artificial arc
    parent[root] = -1
    pred[root] = -1
    succ_num[root] = nn
    last_succ[root] = n - 1 if n > 0 else root
    thread[root] = 0 if n > 0 else root
    rev_thread[0 if n > 0 else root] = root
    for u in range(n):
        e = m + u
        parent[u] = root
        pred[u] = e
        succ_num[u] = 1
        last_succ[u] = u
        nxt = u + 1 if u + 1 < n else root
        thread[u] = nxt
        rev_thread[nxt] = u
        c[e] = art_cost
        in_tree[e] = True
        if supply[u] >= 0:
            src[e] = u
            tgt[e] = root
            flow[e] = supply[u]
            pdir[u] = _UP
            pi[u] = -art_cost
        else:
            src[e] = root
            tgt[e] = u
            flow[e] = -supply[u]
            pdir[u] = _DOWN
            pi[u] = art_cost

    big = np.iinfo(np.int64).max
    next_arc = 0
    iterations = 0
    status = _OPTIMAL
    while True:
        # block search for an entering arc
        in_arc = -1
        best = -eps
        count = block_size
        for _ in range(m):
            e = next_arc
            next_arc += 1
            if next_arc == m:
                next_arc = 0
            if not in_tree[e]:
                rc = c[e] + pi[src[e]] - pi[tgt[e]]
                if rc < best:
                    best = rc
                    in_arc = e
            count -= 1
            if count == 0:
                if in_arc >= 0:
                    break
                count = block_size
        if in_arc < 0:
            break
        if iterations >= max_iter:
            status = _ITERATION_LIMIT
            break
        iterations += 1

        first = src[in_arc]
        second = tgt[in_arc]
        a = first
        b = second
        while a != b:
            if succ_num[a] < succ_num[b]:
                a = parent[a]
            else:
                b = parent[b]
        join = a

        # leaving arc: last blocking arc met when walking the cycle from the join
        delta = big
        u_out = -1
        side = 0
        x = first
        while x != join:
            if pdir[x] == _UP:
                d = flow[pred[x]]
                if d < delta:
                    delta = d
                    u_out = x
                    side = 1
            x = parent[x]
        x = second
        while x != join:
            if pdir[x] == _DOWN:
                d = flow[pred[x]]
                if d <= delta:
                    delta = d
                    u_out = x
                    side = 2
            x = parent[x]
        if side == 0:
            status = _UNBOUNDED
            break

        if delta > 0:
            flow[in_arc] += delta
            x = first
            while x != join:
                flow[pred[x]] -= pdir[x] * delta
                x = parent[x]
            x = second
            while x != join:
                flow[pred[x]] += pdir[x] * delta
                x = parent[x]

        if side == 1:
            q = first
            p_att = second
            shift = -best
        else:
            q = second
            p_att = first
            shift = best
        in_tree[pred[u_out]] = False
        in_tree[in_arc] = True

        # Subtree sizes above the join never change; the join's last
        # descendant may, and is pushed up to its ancestors at the end.
        join_last = last_succ[join]

        # detach the subtree rooted at u_out
        size = succ_num[u_out]
        lst = last_succ[u_out]
        prev = rev_thread[u_out]
        nxt = thread[lst]
        thread[prev] = nxt
        rev_thread[nxt] = prev
        thread[lst] = u_out
        rev_thread[u_out] = lst
        x = parent[u_out]
        while x != join:
            succ_num[x] -= size
            if last_succ[x] == lst:
                last_succ[x] = prev
            x = parent[x]
        if last_succ[join] == lst:
            last_succ[join] = prev
        parent[u_out] = -1

        # re-root the detached subtree at q
        k = 0
        x = q
        while x != u_out:
            path[k] = x
            k += 1
            x = parent[x]
        path[k] = u_out
        for j in range(k - 1, -1, -1):
            x = path[j]
            p = path[j + 1]
            a1 = last_succ[x]
            c0 = thread[p]
            c1 = rev_thread[x]
            b0 = thread[a1]
            b1 = rev_thread[p]
            thread[a1] = p
            rev_thread[p] = a1
            tail_node = p
            if c0 != x:
                tail_node = c1
            if b0 != p:
                thread[tail_node] = b0
                rev_thread[b0] = tail_node
                tail_node = b1
            thread[tail_node] = x
            rev_thread[x] = tail_node
            last_succ[p] = tail_node
            last_succ[x] = tail_node
            sp = succ_num[p]
            succ_num[p] = sp - succ_num[x]
            succ_num[x] = sp
            parent[p] = x
            pred[p] = pred[x]
            pdir[p] = -pdir[x]
            parent[x] = -1

        # attach q below p_att through the entering arc
        size = succ_num[q]
        a1 = last_succ[q]
        nxt = thread[p_att]
        thread[p_att] = q
        rev_thread[q] = p_att
        thread[a1] = nxt
        rev_thread[nxt] = a1
        x = p_att
        while x != join:
            succ_num[x] += size
            if last_succ[x] == p_att:
                last_succ[x] = a1
            x = parent[x]
        if last_succ[join] == p_att:
            last_succ[join] = a1
        new_last = last_succ[join]
        if new_last != join_last:
            x = parent[join]
            while x != -1 and last_succ[x] == join_last:
                last_succ[x] = new_last
                x = parent[x]
        parent[q] = p_att
        pred[q] = in_arc
        pdir[q] = _UP if src[in_arc] == q else _DOWN

        x = q
        for _ in range(size):
            pi[x] += shift
            x = thread[x]

    if status == _OPTIMAL:
        for u in range(n):
            if flow[m + u] > 0:
                status = _INFEASIBLE
                break
    return flow[:m].copy(), pi[:n].copy(), in_tree[:m].copy(), iterations, status


def default_block_size(edge_count: int) -> int:
    return max(MIN_BLOCK_SIZE, int(math.ceil(math.sqrt(max(edge_count, 1)))))


def solve_min_cost_flow(net: FlowNetwork, block_size: int | None = None,
                        max_iterations: int | None = None) -> FlowSolution:
    """Minimum-cost flow of ``net``.

    Raises InvalidArgument when supplies do not sum to zero; a network with no
    feasible flow comes back with ``status == Status.INFEASIBLE``.
    """
    if not net.is_balanced():
        raise InvalidArgument(f"supplies sum to {int(net.supply.sum())}, not 0")
    m = net.edge_count
    max_cost = float(net.cost.max()) if m else 0.0
    # any simple path costs less than node_count * max_cost
    art_cost = 1.0 + net.node_count * max_cost
    eps = art_cost * 2.0**-40
    if block_size is None:
        block_size = default_block_size(m)
    if max_iterations is None:
        max_iterations = np.iinfo(np.int64).max
    flow, pi, tree, iterations, code = _network_simplex(
        net.node_count, net.supply, net.tail, net.head, net.cost,
        art_cost, eps, int(block_size), int(max_iterations),
    )
    if code == _UNBOUNDED:
        raise RuntimeError("network simplex found an unbounded cycle; costs must be nonnegative")
    if code == _ITERATION_LIMIT:
        raise RuntimeError(f"network simplex hit the iteration limit ({max_iterations})")
    status = Status.OPTIMAL if code == _OPTIMAL else Status.INFEASIBLE
    return FlowSolution(
        flow=flow,
        objective=flow_cost(net, flow),
        iterations=int(iterations),
        status=status,
        potentials=-pi,
        tree=tree,
    )


def flow_cost(net: FlowNetwork, flow: np.ndarray) -> float:
    used = np.flatnonzero(flow)
    return math.fsum((net.cost[used] * flow[used]).tolist())


def node_balance(net: FlowNetwork, flow: np.ndarray) -> np.ndarray:
    """outflow - inflow at every node."""
    out = np.bincount(net.tail, weights=flow, minlength=net.node_count)
    inc = np.bincount(net.head, weights=flow, minlength=net.node_count)
    return np.rint(out - inc).astype(np.int64)


@dataclass(frozen=True)
class FlowViolation:
    kind: str  # "negative" or "conservation"
    index: int  # edge index for "negative", node index for "conservation"
    expected: int
    actual: int

    def __str__(self):
        if self.kind == "negative":
            return f"edge {self.index}: negative flow {self.actual}"
        return f"node {self.index}: out - in = {self.actual}, supply {self.expected}"


def validate_flow(net: FlowNetwork, flow) -> list[FlowViolation]:
    """Every violated nonnegativity or conservation constraint; empty iff feasible."""
    flow = np.asarray(flow)
    if flow.shape != (net.edge_count,):
        raise InvalidArgument(f"flow has shape {flow.shape}, expected ({net.edge_count},)")
    report = [FlowViolation("negative", int(e), 0, int(flow[e])) for e in np.flatnonzero(flow < 0)]
    balance = node_balance(net, flow)
    for v in np.flatnonzero(balance != net.supply):
        report.append(FlowViolation("conservation", int(v), int(net.supply[v]), int(balance[v])))
    return report


# DIMACS min-cost-flow text format, 1-based node ids; costs written with repr precision.

def to_dimacs(net: FlowNetwork, capacity: int | None = None) -> str:
    if capacity is None:
        capacity = int(np.abs(net.supply).sum())
    lines = [f"p min {net.node_count} {net.edge_count}"]
    for v in np.flatnonzero(net.supply):
        lines.append(f"n {v + 1} {int(net.supply[v])}")
    for t, h, c in zip(net.tail.tolist(), net.head.tolist(), net.cost.tolist()):
        lines.append(f"a {t + 1} {h + 1} 0 {capacity} {c!r}")
    return "\n".join(lines) + "\n"


def from_dimacs(text: str) -> FlowNetwork:
    """Parse a DIMACS min-cost-flow problem; capacities and lower bounds are ignored."""
    n = None
    supply = None
    tail, head, cost = [], [], []
    offset = 0
    for raw in text.splitlines(keepends=True):
        line = raw.strip()
        if not line or line.startswith("c"):
            offset += len(raw.encode())
            continue
        parts = line.split()
        try:
            if parts[0] == "p":
                if parts[1] != "min":
                    raise FormatError(f"unsupported problem type {parts[1]!r}", offset)
                n = int(parts[2])
                supply = np.zeros(n, dtype=np.int64)
            elif parts[0] == "n":
                supply[int(parts[1]) - 1] = int(parts[2])
            elif parts[0] == "a":
                tail.append(int(parts[1]) - 1)
                head.append(int(parts[2]) - 1)
                cost.append(float(parts[5]))
            else:
                raise FormatError(f"unknown line type {parts[0]!r}", offset)
        except (IndexError, ValueError, TypeError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed DIMACS line {line!r}", offset) from exc
        offset += len(raw.encode())
    if n is None:
        raise FormatError("missing problem line", 0)
    return FlowNetwork(n, supply, tail, head, cost)
