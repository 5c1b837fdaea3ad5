"""Exact reverse-mode differentiation through the dual solver.

The taped forward stores the dual state at every directional-pass boundary
(checkpoints).  Backward replays each pass from its checkpoint to recover the
block internals (min-marginals, their signs, restricted minimizers), then runs
the adjoint in exact reverse block order.  Replay is bit-exact by construction
(same kernel operations), which is asserted in tests.

Gradients follow the subgradient selection of the forward tie-breaks; the
finite-difference oracle resamples points whose minimizers are nearly tied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .bank import BddBank
from .dual import (
    DualState,
    SolverParams,
    center_per_variable,
    directional_pass,
    dual_objective,
    ensure_top,
    nonparam_update,
)


@dataclass
class GradState:
    """Gradients of the loss w.r.t. the round inputs; parameter gradients
    accumulate across every block update of the round."""

    d_hi: np.ndarray
    d_lo: np.ndarray
    d_deferred: np.ndarray
    d_alpha: np.ndarray
    d_omega: np.ndarray
    d_theta: np.ndarray | None = None


@dataclass
class PassCheckpoint:
    forward: bool
    hi: np.ndarray
    lo: np.ndarray
    deferred: np.ndarray


@dataclass
class Tape:
    """Checkpoints for one optimization round (nonparam update + T sweeps)."""

    params: SolverParams
    theta: np.ndarray | None = None
    passes: list[PassCheckpoint] = field(default_factory=list)

    @property
    def num_passes(self) -> int:
        return len(self.passes)


def loss_and_grad(bank: BddBank, state: DualState):
    """Dual objective and its supergradient w.r.t. the lifted costs.

    Per subproblem with minimizer x*: d_hi = x*, d_lo = 1 - x*; ties resolved
    by the lo-preferring trace.
    """
    ensure_top(bank, state)
    bits = np.zeros(bank.num_edges, dtype=np.int64)
    if bank.num_subs:
        K.trace_minimizers(bank.sub_edge_start, bank.sub_levels, bank.node_start,
                           bank.node_lo, bank.node_hi, state.hi, state.lo,
                           state.to_top, bits)
    d_hi = bits.astype(np.float64)
    return dual_objective(bank, state), d_hi, 1.0 - d_hi


def run_round_taped(bank: BddBank, state: DualState, params: SolverParams,
                    num_sweeps: int, theta: np.ndarray | None = None) -> Tape:
    """Forward round (optional perturbation + num_sweeps sweeps) with taping."""
    tape = Tape(params=params)
    if theta is not None:
        tape.theta = np.asarray(theta, dtype=np.float64).copy()
        nonparam_update(bank, state, tape.theta)
    for _ in range(num_sweeps):
        for forward in (True, False):
            tape.passes.append(PassCheckpoint(
                forward=forward, hi=state.hi.copy(), lo=state.lo.copy(),
                deferred=state.deferred.copy()))
            directional_pass(bank, state, params, forward=forward)
        state.sweep_count += 1
    return tape


def replay_pass(bank: BddBank, cp: PassCheckpoint, params: SolverParams):
    """Re-run one pass from its checkpoint, recording block internals.

    Returns (records dict, state arrays after the pass) -- the latter lets
    tests assert bit-exactness against the original forward.
    """
    hi = cp.hi.copy()
    lo = cp.lo.copy()
    deferred = cp.deferred.copy()
    snap_pos = np.zeros(bank.num_vars)
    snap_neg = np.zeros(bank.num_vars)
    K.snapshot(deferred, bank.var_edge_start, bank.var_edge_list, snap_pos, snap_neg)
    from_root = np.zeros(bank.num_nodes)
    to_top = np.zeros(bank.num_nodes)
    if bank.num_subs:
        if cp.forward:
            K.full_forward(bank.sub_edge_start, bank.sub_levels, bank.node_start,
                           bank.node_lo, bank.node_hi, hi, lo, from_root)
            K.full_backward(bank.sub_edge_start, bank.sub_levels, bank.node_start,
                            bank.node_lo, bank.node_hi, hi, lo, to_top)
        else:
            K.full_forward(bank.sub_edge_start, bank.sub_levels, bank.node_start,
                           bank.node_lo, bank.node_hi, hi, lo, from_root)
    rec = {
        "m0": np.zeros(bank.num_edges),
        "m1": np.zeros(bank.num_edges),
        "skip": np.zeros(bank.num_edges, dtype=np.int64),
        "gap": np.full(1, np.inf),
        "minz0": np.zeros(bank.minz_size, dtype=np.int64),
        "minz1": np.zeros(bank.minz_size, dtype=np.int64),
        "snap_pos": snap_pos,
        "snap_neg": snap_neg,
        "m_in": cp.deferred,
    }
    if bank.num_blocks:
        if cp.forward:
            t_start, t_stop, step = 0, bank.num_blocks, 1
        else:
            t_start, t_stop, step = bank.num_blocks - 1, -1, -1
        scratch = np.zeros(max(bank.max_sub_nodes, 1))
        err = K.replay_pass(
            t_start, t_stop, step, cp.forward,
            bank.block_start, bank.block_edges,
            bank.edge_var, bank.edge_sub, bank.edge_pos,
            bank.sub_edge_start, bank.sub_levels,
            bank.node_start, bank.node_lo, bank.node_hi,
            hi, lo, deferred, params.alpha, params.omega,
            snap_pos, snap_neg, from_root, to_top,
            rec["m0"], rec["m1"], rec["skip"], rec["gap"],
            rec["minz0"], rec["minz1"], bank.minz_off, scratch,
            bank.sub_node_base)
        if err:
            raise RuntimeError("both min-marginals infinite during replay")
    rec["m_out"] = deferred
    return rec, (hi, lo, deferred)


def pass_backward(bank: BddBank, cp: PassCheckpoint, params: SolverParams,
                  d_hi, d_lo, d_deferred, d_alpha, d_omega,
                  dm_route_sign: float = 1.0):
    """Adjoint of one directional pass; mutates the gradient arrays in place
    from pass-output to pass-input meaning."""
    rec, _ = replay_pass(bank, cp, params)
    if bank.num_blocks == 0:
        return rec
    if cp.forward:
        t_start, t_stop, step = bank.num_blocks - 1, -1, -1
    else:
        t_start, t_stop, step = 0, bank.num_blocks, 1
    d_snap_pos = np.zeros(bank.num_vars)
    d_snap_neg = np.zeros(bank.num_vars)
    K.adjoint_pass(
        t_start, t_stop, step,
        bank.block_start, bank.block_edges,
        bank.edge_var, bank.edge_sub, bank.edge_pos,
        bank.sub_edge_start, bank.sub_levels,
        params.alpha, params.omega,
        rec["snap_pos"], rec["snap_neg"], rec["m_in"],
        rec["m0"], rec["m1"], rec["skip"], rec["m_out"],
        rec["minz0"], rec["minz1"], bank.minz_off,
        d_hi, d_lo, d_deferred,
        d_alpha, d_omega,
        d_snap_pos, d_snap_neg,
        dm_route_sign)
    return rec


def block_update_backward(bank: BddBank, cp: PassCheckpoint, params: SolverParams,
                          d_hi, d_lo, d_deferred, dm_route_sign: float = 1.0) -> GradState:
    """Adjoint across one checkpointed pass, returning fresh accumulators."""
    d_alpha = np.zeros(bank.num_edges)
    d_omega = np.zeros(bank.num_edges)
    d_hi = d_hi.copy()
    d_lo = d_lo.copy()
    d_deferred = d_deferred.copy()
    pass_backward(bank, cp, params, d_hi, d_lo, d_deferred, d_alpha, d_omega,
                  dm_route_sign)
    return GradState(d_hi=d_hi, d_lo=d_lo, d_deferred=d_deferred,
                     d_alpha=d_alpha, d_omega=d_omega)


def round_backward(bank: BddBank, tape: Tape, d_hi, d_lo,
                   d_deferred=None, dm_route_sign: float = 1.0) -> GradState:
    """Backward through every pass of a round, then through the perturbation.

    alpha/omega gradients accumulate over all passes (the same parameters are
    reused within the round).  Returns gradients at round entry.
    """
    d_hi = np.asarray(d_hi, dtype=np.float64).copy()
    d_lo = np.asarray(d_lo, dtype=np.float64).copy()
    d_deferred = (np.zeros(bank.num_edges) if d_deferred is None
                  else np.asarray(d_deferred, dtype=np.float64).copy())
    d_alpha = np.zeros(bank.num_edges)
    d_omega = np.zeros(bank.num_edges)
    for cp in reversed(tape.passes):
        pass_backward(bank, cp, tape.params, d_hi, d_lo, d_deferred,
                      d_alpha, d_omega, dm_route_sign)
    d_theta = None
    if tape.theta is not None:
        d_theta = nonparam_backward(bank, d_hi)
    return GradState(d_hi=d_hi, d_lo=d_lo, d_deferred=d_deferred,
                     d_alpha=d_alpha, d_omega=d_omega, d_theta=d_theta)


def nonparam_backward(bank: BddBank, d_hi: np.ndarray) -> np.ndarray:
    """Adjoint of the mean-centered perturbation: the map is symmetric, so
    d_theta = d_hi - mean over J_i of d_hi (and d_hi itself passes through)."""
    return center_per_variable(bank, np.asarray(d_hi, dtype=np.float64))


def round_degeneracy_gap(bank: BddBank, tape: Tape, state: DualState) -> float:
    """Smallest min-marginal / trace gap seen across the round.

    Finite-difference checks require this to clear ~10x the probe step;
    otherwise the sampled point sits on a kink and must be resampled.
    """
    gap = np.inf
    for cp in tape.passes:
        rec, _ = replay_pass(bank, cp, tape.params)
        gap = min(gap, float(rec["gap"][0]))
    ensure_top(bank, state)
    if bank.num_subs:
        gap = min(gap, float(K.trace_gap(
            bank.sub_edge_start, bank.sub_levels, bank.node_start,
            bank.node_lo, bank.node_hi, state.hi, state.lo, state.to_top)))
    return gap


def finite_difference_check(func, point: np.ndarray, analytic: np.ndarray,
                            step: float, indices=None) -> float:
    """Max relative error |fd - analytic| / (1 + |fd|) over central differences.

    func must be a deterministic scalar function of a flat vector.  indices
    restricts the probed coordinates (all by default).
    """
    point = np.asarray(point, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != point.shape:
        raise ValueError("analytic gradient shape mismatch")
    idx = range(point.size) if indices is None else indices
    worst = 0.0
    flat = point.ravel()
    for k in idx:
        probe = flat.copy()
        probe[k] = flat[k] + step
        up = func(probe.reshape(point.shape))
        probe[k] = flat[k] - step
        down = func(probe.reshape(point.shape))
        fd = (up - down) / (2.0 * step)
        err = abs(fd - analytic.ravel()[k]) / (1.0 + abs(fd))
        if err > worst:
            worst = err
    return worst
