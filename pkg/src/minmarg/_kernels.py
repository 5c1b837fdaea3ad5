"""Numba kernels for the flattened multi-diagram solver.

Layout contract (see bank.BddBank): dual variables ("edges") are numbered by
(subproblem, level position), so a subproblem's edges are contiguous and edge
e+1 is the next level of the same subproblem whenever one exists.  Decision
nodes are numbered by (subproblem, level); node_start[e] slices the nodes of
edge e's level.  Child codes: >= 0 global node id, -1 the TOP terminal, -2 BOT.

Within one block every entry touches a distinct subproblem, so the per-entry
work is independent; loops are kept in a fixed order to make every floating
point reduction deterministic.
"""

from __future__ import annotations

import numpy as np
from numba import njit

TOP = -1
BOT = -2
INF = np.inf


@njit(cache=True)
def full_forward(sub_edge_start, sub_levels, node_start, node_lo, node_hi,
                 hi, lo, from_root):
    """Recompute root->node shortest paths for every subproblem."""
    for j in range(len(sub_levels)):
        e0 = sub_edge_start[j]
        levels = sub_levels[j]
        from_root[node_start[e0]] = 0.0
        for w in range(node_start[e0] + 1, node_start[e0 + 1]):
            from_root[w] = INF
        for t in range(levels - 1):
            e = e0 + t
            for w in range(node_start[e + 1], node_start[e + 2]):
                from_root[w] = INF
            for v in range(node_start[e], node_start[e + 1]):
                fr = from_root[v]
                if fr == INF:
                    continue
                c = node_lo[v]
                if c >= 0 and fr + lo[e] < from_root[c]:
                    from_root[c] = fr + lo[e]
                c = node_hi[v]
                if c >= 0 and fr + hi[e] < from_root[c]:
                    from_root[c] = fr + hi[e]


@njit(cache=True)
def full_backward(sub_edge_start, sub_levels, node_start, node_lo, node_hi,
                  hi, lo, to_top):
    """Recompute node->TOP shortest paths for every subproblem."""
    for j in range(len(sub_levels)):
        e0 = sub_edge_start[j]
        levels = sub_levels[j]
        for t in range(levels - 1, -1, -1):
            e = e0 + t
            for v in range(node_start[e], node_start[e + 1]):
                best = INF
                c = node_lo[v]
                if c != BOT:
                    tail = 0.0 if c == TOP else to_top[c]
                    if lo[e] + tail < best:
                        best = lo[e] + tail
                c = node_hi[v]
                if c != BOT:
                    tail = 0.0 if c == TOP else to_top[c]
                    if hi[e] + tail < best:
                        best = hi[e] + tail
                to_top[v] = best


@njit(cache=True)
def snapshot(M, var_edge_start, var_edge_list, snap_pos, snap_neg):
    """Per-variable positive / negative parts of the deferred differences."""
    for i in range(len(var_edge_start) - 1):
        sp = 0.0
        sn = 0.0
        for q in range(var_edge_start[i], var_edge_start[i + 1]):
            m = M[var_edge_list[q]]
            if m > 0.0:
                sp += m
            elif m < 0.0:
                sn += m
        snap_pos[i] = sp
        snap_neg[i] = sn


@njit(cache=True, inline="always")
def _tail(code, to_top):
    if code == TOP:
        return 0.0
    if code == BOT:
        return INF
    return to_top[code]


@njit(cache=True)
def pass_blocks(t_start, t_stop, step, is_forward,
                block_start, block_edges,
                edge_var, edge_sub, edge_pos,
                sub_edge_start, sub_levels,
                node_start, node_lo, node_hi,
                hi, lo, M, alpha, omega,
                snap_pos, snap_neg,
                from_root, to_top,
                freeze_snapshot, var_edge_start, var_edge_list):
    """One directional pass over blocks [t_start:t_stop:step].

    For each dual variable: min-marginal difference from the hybrid DP state,
    damped removal from the winning side, deferred-mass distribution from the
    frozen per-variable snapshot, then incremental maintenance of the DP side
    this pass owns (from_root when is_forward, to_top otherwise).

    freeze_snapshot=False deliberately re-snapshots before every block; it
    exists only as a fault-injection seam for tests.

    Returns 0 on success, 1 if some level had both branches infeasible.
    """
    err = 0
    for t in range(t_start, t_stop, step):
        if not freeze_snapshot:
            snapshot(M, var_edge_start, var_edge_list, snap_pos, snap_neg)
        for idx in range(block_start[t], block_start[t + 1]):
            e = block_edges[idx]
            i = edge_var[e]
            m0 = INF
            m1 = INF
            for v in range(node_start[e], node_start[e + 1]):
                fr = from_root[v]
                if fr == INF:
                    continue
                tail = _tail(node_lo[v], to_top)
                if tail != INF and fr + lo[e] + tail < m0:
                    m0 = fr + lo[e] + tail
                tail = _tail(node_hi[v], to_top)
                if tail != INF and fr + hi[e] + tail < m1:
                    m1 = fr + hi[e] + tail
            if m0 == INF and m1 == INF:
                err = 1
                continue
            if m0 == INF or m1 == INF:
                mnew = 0.0  # forced variable: no mass moves, distribution still applies
            else:
                mnew = omega[e] * (m1 - m0)
            if mnew > 0.0:
                hi[e] -= mnew
            elif mnew < 0.0:
                lo[e] += mnew
            hi[e] += alpha[e] * snap_pos[i]
            lo[e] -= alpha[e] * snap_neg[i]
            M[e] = mnew

            if is_forward:
                if edge_pos[e] + 1 < sub_levels[edge_sub[e]]:
                    e2 = e + 1
                    for w in range(node_start[e2], node_start[e2 + 1]):
                        from_root[w] = INF
                    for v in range(node_start[e], node_start[e + 1]):
                        fr = from_root[v]
                        if fr == INF:
                            continue
                        c = node_lo[v]
                        if c >= 0 and fr + lo[e] < from_root[c]:
                            from_root[c] = fr + lo[e]
                        c = node_hi[v]
                        if c >= 0 and fr + hi[e] < from_root[c]:
                            from_root[c] = fr + hi[e]
            else:
                for v in range(node_start[e], node_start[e + 1]):
                    best = INF
                    tail = _tail(node_lo[v], to_top)
                    if lo[e] + tail < best:
                        best = lo[e] + tail
                    tail = _tail(node_hi[v], to_top)
                    if hi[e] + tail < best:
                        best = hi[e] + tail
                    to_top[v] = best
    return err


@njit(cache=True)
def energies_from_root(sub_edge_start, sub_levels, node_start, node_lo, node_hi,
                       hi, lo, from_root, out):
    """Per-subproblem optimum from a fresh root-side DP (level-order sums)."""
    for j in range(len(sub_levels)):
        e = sub_edge_start[j] + sub_levels[j] - 1
        best = INF
        for v in range(node_start[e], node_start[e + 1]):
            fr = from_root[v]
            if fr == INF:
                continue
            if node_lo[v] == TOP and fr + lo[e] < best:
                best = fr + lo[e]
            if node_hi[v] == TOP and fr + hi[e] < best:
                best = fr + hi[e]
        out[j] = best


@njit(cache=True)
def energies_from_top(sub_edge_start, node_start, to_top, out):
    for j in range(len(out)):
        out[j] = to_top[node_start[sub_edge_start[j]]]


@njit(cache=True)
def trace_minimizers(sub_edge_start, sub_levels, node_start, node_lo, node_hi,
                     hi, lo, to_top, bits):
    """Per-subproblem shortest path (lo arc preferred on ties); to_top fresh.

    Writes one bit per dual variable in the edge layout.
    """
    for j in range(len(sub_levels)):
        e0 = sub_edge_start[j]
        v = node_start[e0]
        for t in range(sub_levels[j]):
            e = e0 + t
            lo_val = lo[e] + _tail(node_lo[v], to_top)
            hi_val = hi[e] + _tail(node_hi[v], to_top)
            if lo_val <= hi_val:
                bits[e] = 0
                v = node_lo[v]
            else:
                bits[e] = 1
                v = node_hi[v]


@njit(cache=True)
def trace_gap(sub_edge_start, sub_levels, node_start, node_lo, node_hi,
              hi, lo, to_top):
    """Smallest |lo - hi| branch gap along every traced shortest path.

    Used to detect near-ties before finite-difference checks.
    """
    gap = INF
    for j in range(len(sub_levels)):
        e0 = sub_edge_start[j]
        v = node_start[e0]
        for t in range(sub_levels[j]):
            e = e0 + t
            lo_val = lo[e] + _tail(node_lo[v], to_top)
            hi_val = hi[e] + _tail(node_hi[v], to_top)
            if lo_val != INF and hi_val != INF:
                d = abs(lo_val - hi_val)
                if d < gap:
                    gap = d
            if lo_val <= hi_val:
                v = node_lo[v]
            else:
                v = node_hi[v]
    return gap


@njit(cache=True)
def _restricted_minimizer(e, beta,
                          edge_sub, edge_pos, sub_edge_start, sub_levels,
                          node_start, node_lo, node_hi, hi, lo,
                          bits, off, scratch, node_base):
    """Shortest path forced through the beta-arc at edge e's level.

    Local completion DP over the subproblem's nodes using current raw costs,
    then a root trace preferring the lo arc; mirrors bdd.argmin_restricted.
    scratch must hold at least the subproblem's node count.
    """
    j = edge_sub[e]
    e0 = sub_edge_start[j]
    levels = sub_levels[j]
    tpos = edge_pos[e]
    for t in range(levels - 1, -1, -1):
        ee = e0 + t
        for v in range(node_start[ee], node_start[ee + 1]):
            best = INF
            if t == tpos:
                c = node_hi[v] if beta == 1 else node_lo[v]
                cost = hi[ee] if beta == 1 else lo[ee]
                if c != BOT:
                    tail = 0.0 if c == TOP else scratch[c - node_base]
                    best = cost + tail
            else:
                c = node_lo[v]
                if c != BOT:
                    tail = 0.0 if c == TOP else scratch[c - node_base]
                    if lo[ee] + tail < best:
                        best = lo[ee] + tail
                c = node_hi[v]
                if c != BOT:
                    tail = 0.0 if c == TOP else scratch[c - node_base]
                    if hi[ee] + tail < best:
                        best = hi[ee] + tail
            scratch[v - node_base] = best
    v = node_start[e0]
    for t in range(levels):
        ee = e0 + t
        if t == tpos:
            bit = beta
        else:
            lo_val = INF
            hi_val = INF
            c = node_lo[v]
            if c != BOT:
                lo_val = lo[ee] + (0.0 if c == TOP else scratch[c - node_base])
            c = node_hi[v]
            if c != BOT:
                hi_val = hi[ee] + (0.0 if c == TOP else scratch[c - node_base])
            bit = 0 if lo_val <= hi_val else 1
        bits[off + t] = bit
        v = node_hi[v] if bit == 1 else node_lo[v]


@njit(cache=True)
def replay_pass(t_start, t_stop, step, is_forward,
                block_start, block_edges,
                edge_var, edge_sub, edge_pos,
                sub_edge_start, sub_levels,
                node_start, node_lo, node_hi,
                hi, lo, M, alpha, omega,
                snap_pos, snap_neg,
                from_root, to_top,
                rec_m0, rec_m1, rec_skip, rec_gap,
                minz0, minz1, minz_off, scratch, sub_node_base):
    """pass_blocks plus per-edge records needed by the adjoint.

    Cost and DP updates are written to match pass_blocks operation-for-
    operation so a replay from a checkpoint is bit-exact.  rec_gap collects
    the smallest |m1 - m0| over live branches (tie detector).
    """
    err = 0
    rec_gap[0] = INF
    for t in range(t_start, t_stop, step):
        for idx in range(block_start[t], block_start[t + 1]):
            e = block_edges[idx]
            i = edge_var[e]
            m0 = INF
            m1 = INF
            for v in range(node_start[e], node_start[e + 1]):
                fr = from_root[v]
                if fr == INF:
                    continue
                tail = _tail(node_lo[v], to_top)
                if tail != INF and fr + lo[e] + tail < m0:
                    m0 = fr + lo[e] + tail
                tail = _tail(node_hi[v], to_top)
                if tail != INF and fr + hi[e] + tail < m1:
                    m1 = fr + hi[e] + tail
            rec_m0[e] = m0
            rec_m1[e] = m1
            if m0 == INF and m1 == INF:
                err = 1
                rec_skip[e] = 1
                continue
            if m0 == INF or m1 == INF:
                mnew = 0.0
                rec_skip[e] = 1
            else:
                mnew = omega[e] * (m1 - m0)
                rec_skip[e] = 0
                if abs(m1 - m0) < rec_gap[0]:
                    rec_gap[0] = abs(m1 - m0)
                _restricted_minimizer(e, 0, edge_sub, edge_pos, sub_edge_start,
                                      sub_levels, node_start, node_lo, node_hi,
                                      hi, lo, minz0, minz_off[e], scratch,
                                      sub_node_base[edge_sub[e]])
                _restricted_minimizer(e, 1, edge_sub, edge_pos, sub_edge_start,
                                      sub_levels, node_start, node_lo, node_hi,
                                      hi, lo, minz1, minz_off[e], scratch,
                                      sub_node_base[edge_sub[e]])
            if mnew > 0.0:
                hi[e] -= mnew
            elif mnew < 0.0:
                lo[e] += mnew
            hi[e] += alpha[e] * snap_pos[i]
            lo[e] -= alpha[e] * snap_neg[i]
            M[e] = mnew

            if is_forward:
                if edge_pos[e] + 1 < sub_levels[edge_sub[e]]:
                    e2 = e + 1
                    for w in range(node_start[e2], node_start[e2 + 1]):
                        from_root[w] = INF
                    for v in range(node_start[e], node_start[e + 1]):
                        fr = from_root[v]
                        if fr == INF:
                            continue
                        c = node_lo[v]
                        if c >= 0 and fr + lo[e] < from_root[c]:
                            from_root[c] = fr + lo[e]
                        c = node_hi[v]
                        if c >= 0 and fr + hi[e] < from_root[c]:
                            from_root[c] = fr + hi[e]
            else:
                for v in range(node_start[e], node_start[e + 1]):
                    best = INF
                    tail = _tail(node_lo[v], to_top)
                    if lo[e] + tail < best:
                        best = lo[e] + tail
                    tail = _tail(node_hi[v], to_top)
                    if hi[e] + tail < best:
                        best = hi[e] + tail
                    to_top[v] = best
    return err


@njit(cache=True)
def adjoint_pass(t_start, t_stop, step,
                 block_start, block_edges,
                 edge_var, edge_sub, edge_pos,
                 sub_edge_start, sub_levels,
                 alpha, omega,
                 snap_pos, snap_neg, M_in,
                 rec_m0, rec_m1, rec_skip, M_out,
                 minz0, minz1, minz_off,
                 d_hi, d_lo, d_M,
                 d_alpha, d_omega,
                 d_snap_pos, d_snap_neg,
                 dm_route_sign):
    """Reverse-mode step through one directional pass.

    The caller passes the exact reverse of the forward block order; entries
    within a block run in reverse index order so every accumulation has a
    fixed order.  On entry d_hi/d_lo/d_M hold gradients w.r.t. the pass
    output; on exit they hold gradients w.r.t. the pass input.  d_alpha and
    d_omega accumulate.  d_snap_pos/d_snap_neg are zeroed scratch.

    dm_route_sign must be 1.0; any other value corrupts the deferred-mass
    route (fault-injection seam for the gradient test suite).
    """
    for t in range(t_start, t_stop, step):
        for idx in range(block_start[t + 1] - 1, block_start[t] - 1, -1):
            e = block_edges[idx]
            i = edge_var[e]
            g_hi = d_hi[e]
            g_lo = d_lo[e]
            # distribution term: hi += a*S+ ; lo -= a*S-
            d_alpha[e] += g_hi * snap_pos[i] - g_lo * snap_neg[i]
            d_snap_pos[i] += g_hi * alpha[e]
            d_snap_neg[i] -= g_lo * alpha[e]
            # removal term routes into the stored difference
            g_mout = d_M[e]
            if M_out[e] > 0.0:
                g_mout -= g_hi
            elif M_out[e] < 0.0:
                g_mout += g_lo
            if rec_skip[e] == 0:
                diff = rec_m1[e] - rec_m0[e]
                d_omega[e] += g_mout * diff
                g_d = g_mout * omega[e]
                if g_d != 0.0:
                    j = edge_sub[e]
                    e0 = sub_edge_start[j]
                    off = minz_off[e]
                    for p in range(sub_levels[j]):
                        s1 = minz1[off + p]
                        s0 = minz0[off + p]
                        if s1 != s0:
                            gd = g_d if s1 == 1 else -g_d
                            d_hi[e0 + p] += gd
                            d_lo[e0 + p] -= gd
    for e in range(len(M_in)):
        if M_in[e] > 0.0:
            d_M[e] = dm_route_sign * d_snap_pos[edge_var[e]]
        elif M_in[e] < 0.0:
            d_M[e] = dm_route_sign * d_snap_neg[edge_var[e]]
        else:
            d_M[e] = 0.0
