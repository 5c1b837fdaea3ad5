"""Deferred min-marginal averaging on the lifted (hi/lo arc cost) duals.

The dual variables live on (variable, subproblem) pairs; each carries a
one-side cost hi and a zero-side cost lo (the arc costs of the subproblem's
diagram) plus a deferred min-marginal difference M.  One sweep runs the block
schedule forward then in reverse; the per-variable snapshot of M is frozen at
the start of each directional pass, which is what makes the feasibility
identities hold exactly per pass and keeps updates order-free within a pass.

Sum of subproblem optima is a valid lower bound at all times: the outstanding
deferred mass is nonnegative on each side, so the current arc costs
underestimate a feasible dual point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .bank import BddBank
from .model import Decomposition
from .segments import segment_normalize, segment_sum


@dataclass
class DualState:
    hi: np.ndarray          # (E,) lifted one-side costs
    lo: np.ndarray          # (E,) lifted zero-side costs
    deferred: np.ndarray    # (E,) deferred min-marginal differences M
    snap_pos: np.ndarray    # (n,) per-variable sum max(M, 0) at pass start
    snap_neg: np.ndarray    # (n,) per-variable sum min(M, 0) at pass start
    from_root: np.ndarray   # (num_nodes,)
    to_top: np.ndarray      # (num_nodes,)
    fresh_root: bool
    fresh_top: bool
    sweep_count: int = 0

    def copy(self) -> "DualState":
        return DualState(
            hi=self.hi.copy(), lo=self.lo.copy(), deferred=self.deferred.copy(),
            snap_pos=self.snap_pos.copy(), snap_neg=self.snap_neg.copy(),
            from_root=self.from_root.copy(), to_top=self.to_top.copy(),
            fresh_root=self.fresh_root, fresh_top=self.fresh_top,
            sweep_count=self.sweep_count,
        )

    def allclose(self, other: "DualState", tol: float = 0.0) -> bool:
        if tol == 0.0:
            return (np.array_equal(self.hi, other.hi)
                    and np.array_equal(self.lo, other.lo)
                    and np.array_equal(self.deferred, other.deferred))
        return (np.allclose(self.hi, other.hi, atol=tol)
                and np.allclose(self.lo, other.lo, atol=tol)
                and np.allclose(self.deferred, other.deferred, atol=tol))


@dataclass(frozen=True)
class SolverParams:
    """Averaging weights and damping factors, one per dual variable.

    alpha is renormalized exactly per variable at construction; omega is
    clamped strictly inside (0, 1).
    """

    alpha: np.ndarray
    omega: np.ndarray

    @staticmethod
    def make(bank: BddBank, alpha: np.ndarray, omega: np.ndarray) -> "SolverParams":
        alpha = np.asarray(alpha, dtype=np.float64)
        omega = np.asarray(omega, dtype=np.float64)
        if alpha.shape != (bank.num_edges,) or omega.shape != (bank.num_edges,):
            raise ValueError("alpha/omega must have one entry per dual variable")
        if np.any(alpha < 0.0):
            raise ValueError("alpha must be nonnegative")
        norm = alpha.copy()
        if bank.num_edges:
            alpha_sorted = alpha[bank.var_edge_list]
            sums = segment_sum(alpha_sorted, bank.var_edge_start)
            live = np.diff(bank.var_edge_start) > 0
            if np.any(np.abs(sums[live] - 1.0) > 1e-6):
                raise ValueError("alpha must sum to 1 over each variable's subproblems")
            norm[bank.var_edge_list] = segment_normalize(alpha_sorted, bank.var_edge_start)
        omega = np.clip(omega, 1e-6, 1.0 - 1e-6)
        return SolverParams(alpha=norm, omega=omega)


def default_params(bank: BddBank) -> SolverParams:
    """Uniform averaging (1/|J_i|) and damping 0.5.

    Computed through the same softmax-of-zero-logits transform the predictor
    uses, so a zero network reproduces these values bit-for-bit.  Constructed
    directly (no re-normalization) to keep that equivalence exact.
    """
    from .net import transform_outputs
    alpha, omega, _ = transform_outputs(bank, np.zeros(bank.num_edges),
                                        np.zeros(bank.num_edges),
                                        np.zeros(bank.num_edges))
    return SolverParams(alpha=alpha, omega=omega)


@dataclass(frozen=True)
class BlockSchedule:
    """Position-t dual variables per block; at most one per subproblem."""

    blocks: tuple[tuple[tuple[int, int], ...], ...]  # ((variable, subproblem), ...)

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)


def build_schedule(dec: Decomposition) -> BlockSchedule:
    u = max((len(vs) for vs in dec.subproblem_vars), default=0)
    blocks = []
    for t in range(u):
        blocks.append(tuple(
            (vs[t], j) for j, vs in enumerate(dec.subproblem_vars) if t < len(vs)))
    return BlockSchedule(blocks=tuple(blocks))


def init_dual(bank: BddBank) -> DualState:
    """hi = c_i / |J_i| on each of the variable's subproblems, lo = M = 0."""
    hi = np.zeros(bank.num_edges, dtype=np.float64)
    if bank.num_edges:
        hi = bank.objective[bank.edge_var] / bank.var_degree[bank.edge_var]
    state = DualState(
        hi=hi,
        lo=np.zeros(bank.num_edges, dtype=np.float64),
        deferred=np.zeros(bank.num_edges, dtype=np.float64),
        snap_pos=np.zeros(bank.num_vars, dtype=np.float64),
        snap_neg=np.zeros(bank.num_vars, dtype=np.float64),
        from_root=np.zeros(bank.num_nodes, dtype=np.float64),
        to_top=np.zeros(bank.num_nodes, dtype=np.float64),
        fresh_root=False,
        fresh_top=False,
    )
    refresh(bank, state)
    return state


def refresh(bank: BddBank, state: DualState) -> None:
    """Recompute both shortest-path sides from the current costs."""
    if bank.num_subs:
        K.full_forward(bank.sub_edge_start, bank.sub_levels, bank.node_start,
                       bank.node_lo, bank.node_hi, state.hi, state.lo, state.from_root)
        K.full_backward(bank.sub_edge_start, bank.sub_levels, bank.node_start,
                        bank.node_lo, bank.node_hi, state.hi, state.lo, state.to_top)
    state.fresh_root = True
    state.fresh_top = True


def ensure_top(bank: BddBank, state: DualState) -> None:
    if not state.fresh_top and bank.num_subs:
        K.full_backward(bank.sub_edge_start, bank.sub_levels, bank.node_start,
                        bank.node_lo, bank.node_hi, state.hi, state.lo, state.to_top)
    state.fresh_top = True


def take_snapshot(bank: BddBank, state: DualState) -> None:
    K.snapshot(state.deferred, bank.var_edge_start, bank.var_edge_list,
               state.snap_pos, state.snap_neg)


def energies(bank: BddBank, state: DualState) -> np.ndarray:
    """Per-subproblem optima from whichever DP side is fresh.

    The root side is preferred: its sums accumulate in level order, which
    matches the enumeration oracle's accumulation exactly.
    """
    out = np.zeros(bank.num_subs, dtype=np.float64)
    if bank.num_subs == 0:
        return out
    if not (state.fresh_root or state.fresh_top):
        refresh(bank, state)
    if state.fresh_root:
        K.energies_from_root(bank.sub_edge_start, bank.sub_levels, bank.node_start,
                             bank.node_lo, bank.node_hi, state.hi, state.lo,
                             state.from_root, out)
    else:
        K.energies_from_top(bank.sub_edge_start, bank.node_start, state.to_top, out)
    return out


def dual_objective(bank: BddBank, state: DualState) -> float:
    """Sum of subproblem optima plus the isolated-variable constant."""
    return float(energies(bank, state).sum()) + bank.constant_offset


def directional_pass(bank: BddBank, state: DualState, params: SolverParams,
                     forward: bool, freeze_snapshot: bool = True) -> None:
    """One snapshot + one block pass; the forward direction maintains
    from_root, the reverse direction maintains to_top."""
    if bank.num_blocks == 0:
        return
    take_snapshot(bank, state)
    if forward:
        t_start, t_stop, step = 0, bank.num_blocks, 1
        ensure_top(bank, state)
    else:
        t_start, t_stop, step = bank.num_blocks - 1, -1, -1
        if not state.fresh_root:
            K.full_forward(bank.sub_edge_start, bank.sub_levels, bank.node_start,
                           bank.node_lo, bank.node_hi, state.hi, state.lo,
                           state.from_root)
            state.fresh_root = True
    err = K.pass_blocks(
        t_start, t_stop, step, forward,
        bank.block_start, bank.block_edges,
        bank.edge_var, bank.edge_sub, bank.edge_pos,
        bank.sub_edge_start, bank.sub_levels,
        bank.node_start, bank.node_lo, bank.node_hi,
        state.hi, state.lo, state.deferred, params.alpha, params.omega,
        state.snap_pos, state.snap_neg,
        state.from_root, state.to_top,
        freeze_snapshot, bank.var_edge_start, bank.var_edge_list)
    if err:
        raise RuntimeError("both min-marginals infinite: corrupt diagram")
    state.fresh_root = forward
    state.fresh_top = not forward


def block_update(bank: BddBank, state: DualState, t: int, params: SolverParams,
                 forward: bool = True) -> None:
    """Run a single block (test granularity).

    Caller is responsible for the snapshot (take_snapshot) and for DP
    freshness appropriate to the direction.
    """
    err = K.pass_blocks(
        t, t + 1, 1, forward,
        bank.block_start, bank.block_edges,
        bank.edge_var, bank.edge_sub, bank.edge_pos,
        bank.sub_edge_start, bank.sub_levels,
        bank.node_start, bank.node_lo, bank.node_hi,
        state.hi, state.lo, state.deferred, params.alpha, params.omega,
        state.snap_pos, state.snap_neg,
        state.from_root, state.to_top,
        True, bank.var_edge_start, bank.var_edge_list)
    if err:
        raise RuntimeError("both min-marginals infinite: corrupt diagram")


def sweep(bank: BddBank, state: DualState, params: SolverParams,
          freeze_snapshot: bool = True) -> None:
    """One full iteration: snapshot + forward pass, snapshot + reverse pass."""
    directional_pass(bank, state, params, forward=True, freeze_snapshot=freeze_snapshot)
    directional_pass(bank, state, params, forward=False, freeze_snapshot=freeze_snapshot)
    state.sweep_count += 1


def nonparam_update(bank: BddBank, state: DualState, theta: np.ndarray) -> None:
    """Mean-centered perturbation of the one-side costs (coupling preserved).

    hi_ij += theta_ij - mean over J_i of theta; the per-variable deltas sum to
    exactly zero, so the feasibility identities are untouched.  The bound may
    move either way; subsequent sweeps are monotone again.
    """
    if bank.num_edges == 0:
        return
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (bank.num_edges,):
        raise ValueError("theta must have one entry per dual variable")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    state.hi += center_per_variable(bank, theta)
    refresh(bank, state)


def center_per_variable(bank: BddBank, values: np.ndarray) -> np.ndarray:
    """values minus the per-variable mean over J_i (exactly zero-sum groups)."""
    if bank.num_edges == 0:
        return values.copy()
    sums = segment_sum(values[bank.var_edge_list], bank.var_edge_start)
    deg = np.diff(bank.var_edge_start)
    means = np.zeros(bank.num_vars, dtype=np.float64)
    live = deg > 0
    means[live] = sums[live] / deg[live]
    return values - means[bank.edge_var]


def feasibility_error(bank: BddBank, state: DualState) -> tuple[float, float]:
    """Max violation of the two lifted feasibility identities.

    For every variable i with |J_i| >= 1:
      sum_j hi_ij + sum_j max(M_ij, 0) = c_i
      sum_j lo_ij - sum_j min(M_ij, 0) = 0
    """
    if bank.num_edges == 0:
        return 0.0, 0.0
    valid = np.diff(bank.var_edge_start) > 0
    srt = bank.var_edge_list
    offs = bank.var_edge_start
    hi_sum = segment_sum(state.hi[srt], offs)
    lo_sum = segment_sum(state.lo[srt], offs)
    mp_sum = segment_sum(np.maximum(state.deferred, 0.0)[srt], offs)
    mn_sum = segment_sum(np.minimum(state.deferred, 0.0)[srt], offs)
    hi_err = np.abs(hi_sum + mp_sum - bank.objective)[valid]
    lo_err = np.abs(lo_sum - mn_sum)[valid]
    return (float(hi_err.max(initial=0.0)), float(lo_err.max(initial=0.0)))


@dataclass
class BoundRecord:
    sweep: int
    vtime: float     # deterministic clock: sweeps completed
    seconds: float   # wall clock, informational only
    bound: float


def run(bank: BddBank, state: DualState, params: SolverParams, num_sweeps: int,
        tol: float = 0.0, check_feasibility: bool = False,
        vtime_offset: float = 0.0, wall_offset: float = 0.0) -> list[BoundRecord]:
    """num_sweeps iterations, recording the bound after each sweep.

    The first record is the entry bound.  With tol > 0, stops early once the
    per-sweep improvement falls below tol * (1 + |bound|).
    """
    t0 = time.perf_counter()
    records = [BoundRecord(sweep=state.sweep_count, vtime=vtime_offset,
                           seconds=wall_offset, bound=dual_objective(bank, state))]
    for k in range(num_sweeps):
        sweep(bank, state, params)
        if check_feasibility:
            hi_err, lo_err = feasibility_error(bank, state)
            scale = 1e-9 * (1.0 + float(np.abs(bank.objective).max(initial=0.0)))
            if hi_err > scale or lo_err > scale:
                raise RuntimeError(
                    f"feasibility identity violated: {hi_err:.3e}, {lo_err:.3e}")
        bound = dual_objective(bank, state)
        records.append(BoundRecord(
            sweep=state.sweep_count, vtime=vtime_offset + k + 1,
            seconds=wall_offset + time.perf_counter() - t0, bound=bound))
        if tol > 0.0 and len(records) >= 2:
            prev = records[-2].bound
            if bound - prev <= tol * (1.0 + abs(prev)):
                break
    return records
