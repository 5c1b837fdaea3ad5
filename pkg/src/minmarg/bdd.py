"""Reduced layered decision diagrams for single linear rows over binary variables.

A diagram for a row over variables (order[0] .. order[L-1]) is layered: every
root-to-TOP path picks exactly one node per level, so paths correspond 1:1 to
feasible assignments of the row.  Children are encoded as indices into the next
level's node list, or the terminal codes TOP / BOT.  All arcs leaving a level
share that level's (lo, hi) cost pair; this matches the granularity of the
lifted dual variables that will live on the arcs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .model import REL_EQ, REL_LE, InfeasibleError

TOP = -1
BOT = -2

INF = math.inf


@dataclass(frozen=True)
class Bdd:
    order: tuple[int, ...]  # global variable index per level
    lo: tuple[tuple[int, ...], ...]  # per level, lo child per node
    hi: tuple[tuple[int, ...], ...]  # per level, hi child per node

    @property
    def num_levels(self) -> int:
        return len(self.order)

    @property
    def nodes_per_level(self) -> tuple[int, ...]:
        return tuple(len(lv) for lv in self.lo)

    @property
    def num_nodes(self) -> int:
        return sum(len(lv) for lv in self.lo)


@dataclass(frozen=True)
class NodeCosts:
    """Shortest-path sums for one diagram under per-level arc costs.

    from_root[t][k] = cheapest root->node sum; to_top[t][k] = cheapest
    node->TOP sum; +inf marks unreachable.  Carries the (hi, lo) level costs
    it was computed from so consistency is structural.
    """

    from_root: tuple[np.ndarray, ...]
    to_top: tuple[np.ndarray, ...]
    hi: np.ndarray  # per-level hi-arc cost
    lo: np.ndarray  # per-level lo-arc cost

    @property
    def optimum(self) -> float:
        return float(self.to_top[0][0])


def build_bdd(coeffs: Mapping[int, float], relation: str, rhs: float,
              order: Sequence[int]) -> Bdd:
    """Construct the reduced diagram of  sum_t a_t x_t  (<=|=)  rhs.

    Layered DP over residual right-hand sides; states with no feasible
    completion are pruned, and a bottom-up pass merges nodes admitting exactly
    the same completion set.  Raises InfeasibleError when the row has no
    binary solution.
    """
    order = tuple(int(v) for v in order)
    if set(order) != set(coeffs) or len(order) != len(coeffs):
        raise ValueError("order must contain exactly the row's variables")
    if relation not in (REL_LE, REL_EQ):
        raise ValueError(f"unknown relation {relation!r}")
    a = [float(coeffs[v]) for v in order]
    L = len(order)

    if relation == REL_LE:
        smin = [0.0] * (L + 1)
        for t in range(L - 1, -1, -1):
            smin[t] = smin[t + 1] + min(a[t], 0.0)

        def feasible(t: int, r: float) -> bool:
            return r >= smin[t]
    else:
        reach: list[frozenset[float]] = [frozenset({0.0})] * (L + 1)
        for t in range(L - 1, -1, -1):
            prev = reach[t + 1]
            reach[t] = prev | frozenset(a[t] + s for s in prev)

        def feasible(t: int, r: float) -> bool:
            return r in reach[t]

    if not feasible(0, float(rhs)):
        raise InfeasibleError("constraint infeasible over binary assignments")

    # Breadth-first residual DP; node ids per level in first-seen order.
    lo_levels: list[list[int]] = []
    hi_levels: list[list[int]] = []
    states = [float(rhs)]
    for t in range(L):
        next_index: dict[float, int] = {}
        next_states: list[float] = []
        lo_row: list[int] = []
        hi_row: list[int] = []

        def child(r: float) -> int:
            if t == L - 1:
                if relation == REL_LE:
                    return TOP if r >= 0.0 else BOT
                return TOP if r == 0.0 else BOT
            if not feasible(t + 1, r):
                return BOT
            if r not in next_index:
                next_index[r] = len(next_states)
                next_states.append(r)
            return next_index[r]

        for r in states:
            lo_row.append(child(r))
            hi_row.append(child(r - a[t]))
        lo_levels.append(lo_row)
        hi_levels.append(hi_row)
        states = next_states

    raw = Bdd(order=order,
              lo=tuple(tuple(row) for row in lo_levels),
              hi=tuple(tuple(row) for row in hi_levels))
    return reduce(raw)


def reduce(bdd: Bdd) -> Bdd:
    """Merge nodes with identical (lo, hi) children, bottom-up; idempotent."""
    L = bdd.num_levels
    remap: list[list[int]] = [[] for _ in range(L)]
    new_lo: list[list[int]] = [[] for _ in range(L)]
    new_hi: list[list[int]] = [[] for _ in range(L)]
    for t in range(L - 1, -1, -1):
        seen: dict[tuple[int, int], int] = {}
        for k in range(len(bdd.lo[t])):
            lo_c, hi_c = bdd.lo[t][k], bdd.hi[t][k]
            if t < L - 1:
                lo_c = lo_c if lo_c < 0 else remap[t + 1][lo_c]
                hi_c = hi_c if hi_c < 0 else remap[t + 1][hi_c]
            key = (lo_c, hi_c)
            if key not in seen:
                seen[key] = len(new_lo[t])
                new_lo[t].append(lo_c)
                new_hi[t].append(hi_c)
            remap[t].append(seen[key])
    return Bdd(order=bdd.order,
               lo=tuple(tuple(row) for row in new_lo),
               hi=tuple(tuple(row) for row in new_hi))


def build_constraint_bdd(constraint) -> Bdd:
    """Diagram of one model.Constraint with levels in global index order."""
    return build_bdd(dict(zip(constraint.vars, constraint.coeffs)),
                     constraint.rel, constraint.rhs, constraint.vars)


def enumerate_paths(bdd: Bdd) -> Iterator[tuple[int, ...]]:
    """All root-to-TOP paths as assignment tuples over the diagram's levels."""
    L = bdd.num_levels

    def walk(t: int, k: int, prefix: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
        for beta, children in ((0, bdd.lo), (1, bdd.hi)):
            c = children[t][k]
            if c == BOT:
                continue
            if t == L - 1:
                yield prefix + (beta,)
            else:
                yield from walk(t + 1, c, prefix + (beta,))

    yield from walk(0, 0, ())


def compute_shortest_paths(bdd: Bdd, hi: Sequence[float], lo: Sequence[float]) -> NodeCosts:
    """Forward / backward shortest-path DP; arcs into BOT carry +inf."""
    L = bdd.num_levels
    hi = np.asarray(hi, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    if hi.shape != (L,) or lo.shape != (L,):
        raise ValueError("one (hi, lo) cost pair per level required")

    counts = bdd.nodes_per_level
    from_root = [np.full(cnt, INF) for cnt in counts]
    from_root[0][0] = 0.0
    for t in range(L - 1):
        for k in range(counts[t]):
            base = from_root[t][k]
            if base == INF:
                continue
            for cost, child in ((lo[t], bdd.lo[t][k]), (hi[t], bdd.hi[t][k])):
                if child >= 0 and base + cost < from_root[t + 1][child]:
                    from_root[t + 1][child] = base + cost

    to_top = [np.full(cnt, INF) for cnt in counts]
    for t in range(L - 1, -1, -1):
        for k in range(counts[t]):
            best = INF
            for cost, child in ((lo[t], bdd.lo[t][k]), (hi[t], bdd.hi[t][k])):
                if child == BOT:
                    continue
                tail = 0.0 if child == TOP else to_top[t + 1][child]
                if cost + tail < best:
                    best = cost + tail
            to_top[t][k] = best

    return NodeCosts(from_root=tuple(from_root), to_top=tuple(to_top), hi=hi, lo=lo)


def _tail(costs: NodeCosts, t: int, child: int) -> float:
    if child == BOT:
        return INF
    if child == TOP:
        return 0.0
    return float(costs.to_top[t + 1][child])


def min_marginals(bdd: Bdd, costs: NodeCosts, level: int,
                  hi_t: float, lo_t: float) -> tuple[float, float]:
    """(m0, m1): cheapest full path forced through a lo / hi arc at `level`.

    The trial costs (hi_t, lo_t) replace the stored level costs, which is
    exact because from_root below the level and to_top above it do not involve
    them.  +inf marks an infeasible branch; both infinite raises.
    """
    m = [INF, INF]
    for beta, children, cost in ((0, bdd.lo, lo_t), (1, bdd.hi, hi_t)):
        for k in range(len(bdd.lo[level])):
            head = costs.from_root[level][k]
            tail = _tail(costs, level, children[level][k])
            if head == INF or tail == INF:
                continue
            val = head + cost + tail
            if val < m[beta]:
                m[beta] = val
    if m[0] == INF and m[1] == INF:
        raise RuntimeError("both min-marginals infinite: broken diagram")
    return m[0], m[1]


def optimal_assignment(bdd: Bdd, costs: NodeCosts) -> tuple[tuple[int, ...], float]:
    """Trace one shortest root-to-TOP path, preferring the lo arc on ties.

    The value is accumulated in level order along the traced path.
    """
    bits: list[int] = []
    value = 0.0
    k = 0
    for t in range(bdd.num_levels):
        lo_val = costs.lo[t] + _tail(costs, t, bdd.lo[t][k])
        hi_val = costs.hi[t] + _tail(costs, t, bdd.hi[t][k])
        if lo_val <= hi_val:
            bits.append(0)
            value = value + float(costs.lo[t])
            k = bdd.lo[t][k]
        else:
            bits.append(1)
            value = value + float(costs.hi[t])
            k = bdd.hi[t][k]
    return tuple(bits), value


def argmin_restricted(bdd: Bdd, costs: NodeCosts, level: int, beta: int) -> tuple[int, ...]:
    """Shortest path forced through a beta-arc at `level`, lo-preferring ties."""
    L = bdd.num_levels
    counts = bdd.nodes_per_level
    # Restricted completion costs for levels <= `level`; above it the stored
    # to_top applies unchanged.
    rt = [np.full(counts[t], INF) for t in range(level + 1)]
    children = bdd.hi if beta else bdd.lo
    cost_at = float(costs.hi[level]) if beta else float(costs.lo[level])
    for k in range(counts[level]):
        tail = _tail(costs, level, children[level][k])
        if tail < INF:
            rt[level][k] = cost_at + tail
    for t in range(level - 1, -1, -1):
        for k in range(counts[t]):
            best = INF
            for cost, child in ((costs.lo[t], bdd.lo[t][k]), (costs.hi[t], bdd.hi[t][k])):
                if child >= 0 and cost + rt[t + 1][child] < best:
                    best = cost + rt[t + 1][child]
            rt[t][k] = best
    if rt[0][0] == INF:
        raise InfeasibleError(f"branch x={beta} at level {level} is infeasible")

    def tail_restricted(t: int, child: int) -> float:
        if child == BOT:
            return INF
        if t + 1 <= level:
            return float(rt[t + 1][child])
        return _tail(costs, t, child)

    bits: list[int] = []
    k = 0
    for t in range(L):
        if t == level:
            bit = beta
        else:
            lo_val = costs.lo[t] + tail_restricted(t, bdd.lo[t][k])
            hi_val = costs.hi[t] + tail_restricted(t, bdd.hi[t][k])
            bit = 0 if lo_val <= hi_val else 1
        bits.append(bit)
        k = (bdd.hi if bit else bdd.lo)[t][k]
    return tuple(bits)


def to_dot(bdd: Bdd, name: str = "bdd") -> str:
    """Graphviz text dump (debugging aid for the CLI check command)."""
    lines = [f"digraph {name} {{", "  rankdir=TB;"]
    def nid(t, k):
        return f"n{t}_{k}"
    lines.append('  top [shape=box,label="T"]; bot [shape=box,label="F"];')
    for t in range(bdd.num_levels):
        for k in range(len(bdd.lo[t])):
            lines.append(f'  {nid(t, k)} [label="x{bdd.order[t]}@{t}"];')
            for style, child in (("dashed", bdd.lo[t][k]), ("solid", bdd.hi[t][k])):
                target = "top" if child == TOP else "bot" if child == BOT else nid(t + 1, child)
                lines.append(f"  {nid(t, k)} -> {target} [style={style}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
