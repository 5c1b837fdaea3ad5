"""Flattened container for all of an instance's constraint diagrams.

The solver kernels work on plain arrays; this module builds them once per
instance from the per-constraint diagrams.  Numbering contract (relied on by
_kernels): dual variables e are ordered by (subproblem, level position), nodes
by (subproblem, level), so both are contiguous per subproblem and edge e+1 is
the next level of the same subproblem when it exists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bdd as bdd_mod
from .model import Decomposition, IlpInstance
from .segments import offsets_from_sizes


@dataclass(frozen=True, eq=False)
class BddBank:
    num_vars: int
    num_subs: int
    num_edges: int
    num_nodes: int
    objective: np.ndarray      # (n,)
    var_degree: np.ndarray     # (n,) |J_i|, 0 for isolated variables
    constant_offset: float     # contribution of isolated variables to bounds

    edge_var: np.ndarray       # (E,) global variable index
    edge_sub: np.ndarray       # (E,)
    edge_pos: np.ndarray       # (E,) level position within the subproblem
    edge_coeff: np.ndarray     # (E,) constraint matrix entry A[j, i]
    sub_edge_start: np.ndarray  # (m+1,)
    sub_levels: np.ndarray     # (m,)
    sub_node_base: np.ndarray  # (m,) first node id of each subproblem
    sub_rhs: np.ndarray        # (m,)
    sub_is_le: np.ndarray      # (m,) 1.0 for <=, 0.0 for =

    node_start: np.ndarray     # (E+1,)
    node_lo: np.ndarray        # (num_nodes,)
    node_hi: np.ndarray        # (num_nodes,)

    var_edge_start: np.ndarray  # (n+1,) CSR of edges per variable (by (i, j))
    var_edge_list: np.ndarray   # (E,) edge ids sorted by (variable, subproblem)

    num_blocks: int
    block_start: np.ndarray    # (u+1,)
    block_edges: np.ndarray    # edges of block t, ordered by subproblem

    minz_off: np.ndarray       # (E+1,) scatter offsets: edge e owns |I_j| slots
    max_sub_nodes: int

    bdds: tuple                # per-subproblem bdd.Bdd (reference structures)

    @property
    def minz_size(self) -> int:
        return int(self.minz_off[-1])


def build_bank(instance: IlpInstance, dec: Decomposition) -> BddBank:
    """Build every constraint diagram and flatten them for the kernels."""
    n = instance.num_vars
    m = dec.num_subproblems
    bdds = tuple(bdd_mod.build_constraint_bdd(row) for row in instance.constraints)

    sub_levels = np.array([b.num_levels for b in bdds], dtype=np.int64).reshape(m)
    sub_edge_start = offsets_from_sizes(sub_levels)
    num_edges = int(sub_edge_start[-1])

    edge_var = np.zeros(num_edges, dtype=np.int64)
    edge_sub = np.zeros(num_edges, dtype=np.int64)
    edge_pos = np.zeros(num_edges, dtype=np.int64)
    edge_coeff = np.zeros(num_edges, dtype=np.float64)
    for j, row in enumerate(instance.constraints):
        for t, (i, a) in enumerate(zip(row.vars, row.coeffs)):
            e = sub_edge_start[j] + t
            edge_var[e] = i
            edge_sub[e] = j
            edge_pos[e] = t
            edge_coeff[e] = a

    node_counts = np.zeros(num_edges, dtype=np.int64)
    for j, b in enumerate(bdds):
        for t, cnt in enumerate(b.nodes_per_level):
            node_counts[sub_edge_start[j] + t] = cnt
    node_start = offsets_from_sizes(node_counts)
    num_nodes = int(node_start[-1])
    sub_node_base = np.array(
        [node_start[sub_edge_start[j]] for j in range(m)], dtype=np.int64).reshape(m)

    node_lo = np.zeros(num_nodes, dtype=np.int64)
    node_hi = np.zeros(num_nodes, dtype=np.int64)
    for j, b in enumerate(bdds):
        for t in range(b.num_levels):
            e = sub_edge_start[j] + t
            base_next = node_start[e + 1] if t + 1 < b.num_levels else -10
            for k in range(len(b.lo[t])):
                for child, out in ((b.lo[t][k], node_lo), (b.hi[t][k], node_hi)):
                    if child < 0:
                        out[node_start[e] + k] = child
                    else:
                        out[node_start[e] + k] = base_next + child

    order = np.lexsort((edge_sub, edge_var))
    var_edge_list = order.astype(np.int64)
    var_degree = np.zeros(n, dtype=np.int64)
    for i in edge_var:
        var_degree[i] += 1
    var_edge_start = offsets_from_sizes(var_degree)

    u = int(sub_levels.max()) if m else 0
    block_lists: list[list[int]] = [[] for _ in range(u)]
    for e in range(num_edges):
        block_lists[edge_pos[e]].append(e)
    block_edges = np.array([e for blk in block_lists for e in blk], dtype=np.int64)
    block_start = offsets_from_sizes([len(blk) for blk in block_lists])

    minz_off = offsets_from_sizes(sub_levels[edge_sub] if num_edges else [])

    return BddBank(
        num_vars=n,
        num_subs=m,
        num_edges=num_edges,
        num_nodes=num_nodes,
        objective=instance.objective.copy(),
        var_degree=var_degree,
        constant_offset=dec.isolated_offset,
        edge_var=edge_var,
        edge_sub=edge_sub,
        edge_pos=edge_pos,
        edge_coeff=edge_coeff,
        sub_edge_start=sub_edge_start,
        sub_levels=sub_levels,
        sub_node_base=sub_node_base,
        sub_rhs=np.array([row.rhs for row in instance.constraints], dtype=np.float64).reshape(m),
        sub_is_le=np.array([1.0 if row.rel == "le" else 0.0 for row in instance.constraints],
                           dtype=np.float64).reshape(m),
        node_start=node_start,
        node_lo=node_lo,
        node_hi=node_hi,
        var_edge_start=var_edge_start,
        var_edge_list=var_edge_list,
        num_blocks=u,
        block_start=block_start,
        block_edges=block_edges,
        minz_off=minz_off,
        max_sub_nodes=int(max((b.num_nodes for b in bdds), default=0)),
        bdds=bdds,
    )
