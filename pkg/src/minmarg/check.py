"""Self-check suites behind the `check` CLI command.

Each suite returns (name, passed, detail).  The same functions back the
acceptance tests, so the command and the test suite cannot drift apart.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import bdd as bdd_mod
from . import dual, grad, net
from .bank import BddBank, build_bank
from .model import (
    IlpInstance,
    decompose,
    enumerate_optimum,
    generate_independent_set,
    ordered_dot,
    tiny_instance,
)
from .segments import segment_normalize
from .train import TrainConfig, compute_metrics, relative_gap


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def _tol_c(bank: BddBank) -> float:
    return 1e-9 * (1.0 + float(np.abs(bank.objective).max(initial=0.0)))


def random_valid_params(bank: BddBank, rng) -> dual.SolverParams:
    raw = rng.uniform(0.05, 1.0, bank.num_edges)
    alpha = raw.copy()
    if bank.num_edges:
        srt = bank.var_edge_list
        alpha[srt] = segment_normalize(raw[srt], bank.var_edge_start)
    omega = rng.uniform(0.05, 0.95, bank.num_edges)
    return dual.SolverParams(alpha=alpha, omega=omega)


def feasibility_suite(instances: list[IlpInstance], sweeps: int = 4,
                      rng=None) -> SuiteResult:
    """Lifted feasibility identities after init, every directional pass, and
    every non-parametric update."""
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for inst in instances:
        bank = build_bank(inst, decompose(inst))
        state = dual.init_dual(bank)
        tol = _tol_c(bank)
        errs = [max(dual.feasibility_error(bank, state))]
        params = dual.default_params(bank)
        for _ in range(sweeps):
            for fwd in (True, False):
                dual.directional_pass(bank, state, params, forward=fwd)
                errs.append(max(dual.feasibility_error(bank, state)))
            theta = rng.normal(0.0, 0.5, bank.num_edges)
            dual.nonparam_update(bank, state, theta)
            errs.append(max(dual.feasibility_error(bank, state)))
        worst = max(worst, max(errs) / tol)
    return SuiteResult("feasibility", worst <= 1.0,
                       f"worst violation {worst:.3e} x tolerance")


def monotonicity_suite(instances: list[IlpInstance], sweeps: int = 4,
                       num_draws: int = 2, rng=None) -> SuiteResult:
    """Bound non-decreasing per directional pass for defaults and random
    valid parameter draws."""
    rng = rng or np.random.default_rng(1)
    worst = -math.inf
    for inst in instances:
        bank = build_bank(inst, decompose(inst))
        param_sets = [dual.default_params(bank)]
        param_sets += [random_valid_params(bank, rng) for _ in range(num_draws)]
        for params in param_sets:
            state = dual.init_dual(bank)
            prev = dual.dual_objective(bank, state)
            for _ in range(sweeps):
                for fwd in (True, False):
                    dual.directional_pass(bank, state, params, forward=fwd)
                    bound = dual.dual_objective(bank, state)
                    drop = prev - bound - 1e-9 * (1.0 + abs(prev))
                    worst = max(worst, drop)
                    prev = bound
    return SuiteResult("monotonicity", worst <= 0.0,
                       f"worst pass decrease beyond tolerance {worst:.3e}")


def bound_validity_suite(instances: list[IlpInstance], sweeps: int = 6,
                         rng=None) -> SuiteResult:
    """Every reported bound is at most the exhaustive optimum (n <= 20)."""
    rng = rng or np.random.default_rng(2)
    worst = -math.inf
    for inst in instances:
        if inst.num_vars > 20:
            continue
        opt = enumerate_optimum(inst).value
        tol = 1e-9 * (1.0 + abs(opt))
        bank = build_bank(inst, decompose(inst))
        state = dual.init_dual(bank)
        params = dual.default_params(bank)
        records = dual.run(bank, state, params, sweeps)
        theta = rng.normal(0.0, 0.5, bank.num_edges)
        dual.nonparam_update(bank, state, theta)
        records += dual.run(bank, state, params, 2)
        for rec in records:
            worst = max(worst, rec.bound - opt - tol)
    return SuiteResult("bound-validity", worst <= 0.0,
                       f"worst bound excess {worst:.3e}")


def convergence_suite() -> SuiteResult:
    inst = tiny_instance()
    bank = build_bank(inst, decompose(inst))
    state = dual.init_dual(bank)
    records = dual.run(bank, state, dual.default_params(bank), 50)
    err = abs(records[-1].bound - (-2.0))
    return SuiteResult("tiny-convergence", err <= 1e-6,
                       f"bound after 50 sweeps {records[-1].bound:.9f}")


def zero_net_suite(instances: list[IlpInstance], rounds: int = 3,
                   sweeps: int = 5) -> SuiteResult:
    """Zero-weight inference equals the plain default solver bit-for-bit."""
    from .train import run_round
    ok = True
    detail = "bit-identical"
    for inst in instances:
        bank = build_bank(inst, decompose(inst))
        state_net = dual.init_dual(bank)
        hist = net.new_history(bank)
        s = net.zero_state(bank)
        w = net.zero_weights()
        state_ref = dual.init_dual(bank)
        params = dual.default_params(bank)
        for _ in range(rounds):
            run_round(bank, state_net, w, s, hist, sweeps)
            dual.nonparam_update(bank, state_ref, np.zeros(bank.num_edges))
            dual.run(bank, state_ref, params, sweeps)
            if not (np.array_equal(state_net.hi, state_ref.hi)
                    and np.array_equal(state_net.lo, state_ref.lo)
                    and np.array_equal(state_net.deferred, state_ref.deferred)):
                ok = False
                detail = f"state diverged on n={inst.num_vars}"
                break
        if not ok:
            break
    return SuiteResult("zero-net-equivalence", ok, detail)


# ---------------------------------------------------------------------------
# Gradient suites
# ---------------------------------------------------------------------------

def _random_point(bank: BddBank, rng):
    E = bank.num_edges
    state = dual.init_dual(bank)
    hi0 = state.hi + rng.normal(0.0, 0.3, E)
    lo0 = rng.normal(0.0, 0.3, E)
    raw = rng.uniform(0.2, 1.0, E)
    alpha = raw.copy()
    srt = bank.var_edge_list
    alpha[srt] = segment_normalize(raw[srt], bank.var_edge_start)
    omega = rng.uniform(0.2, 0.8, E)
    theta = rng.normal(0.0, 0.2, E)
    return hi0, lo0, alpha, omega, theta


def _pre_transform_loss(bank, hi0, lo0, alpha_hat, omega_hat, theta, sweeps):
    from .net import transform_outputs
    alpha, omega, _ = transform_outputs(bank, alpha_hat, omega_hat,
                                        np.zeros(bank.num_edges))
    return _solver_loss(bank, hi0, lo0, alpha, omega, theta, sweeps)


def _solver_loss(bank, hi0, lo0, alpha, omega, theta, sweeps):
    state = dual.init_dual(bank)
    state.hi = hi0.copy()
    state.lo = lo0.copy()
    dual.refresh(bank, state)
    params = dual.SolverParams(alpha=alpha, omega=omega)
    dual.nonparam_update(bank, state, theta)
    for _ in range(sweeps):
        dual.sweep(bank, state, params)
    return dual.dual_objective(bank, state)


def solver_gradient_suite(num_instances: int = 20, sweeps: int = 2,
                          step: float = 1e-6, tol: float = 1e-4,
                          dm_route_sign: float = 1.0,
                          seed: int = 0) -> SuiteResult:
    """Finite-difference check of the solver-round backward (hi, lo, alpha,
    omega, theta) on random tiny instances at non-degenerate points."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    attempts = 0
    while done < num_instances and attempts < num_instances * 12:
        attempts += 1
        inst = generate_independent_set(int(rng.integers(6, 11)),
                                        float(rng.uniform(0.3, 0.6)),
                                        int(rng.integers(0, 2 ** 31)))
        bank = build_bank(inst, decompose(inst))
        if bank.num_edges == 0:
            continue
        hi0, lo0, alpha, omega, theta = _random_point(bank, rng)
        state = dual.init_dual(bank)
        state.hi = hi0.copy()
        state.lo = lo0.copy()
        dual.refresh(bank, state)
        params = dual.SolverParams(alpha=alpha, omega=omega)
        dual.nonparam_update(bank, state, theta)
        tape = grad.run_round_taped(bank, state, params, sweeps, theta=None)
        tape.theta = theta
        if grad.round_degeneracy_gap(bank, tape, state) < 10.0 * step:
            continue
        _, d_hi, d_lo = grad.loss_and_grad(bank, state)
        gs = grad.round_backward(bank, tape, d_hi, d_lo,
                                 dm_route_sign=dm_route_sign)
        checks = [
            (hi0, gs.d_hi, lambda x: _solver_loss(bank, x, lo0, alpha, omega, theta, sweeps)),
            (lo0, gs.d_lo, lambda x: _solver_loss(bank, hi0, x, alpha, omega, theta, sweeps)),
            (alpha, gs.d_alpha, lambda x: _solver_loss(bank, hi0, lo0, x, omega, theta, sweeps)),
            (omega, gs.d_omega, lambda x: _solver_loss(bank, hi0, lo0, alpha, x, theta, sweeps)),
            (theta, gs.d_theta, lambda x: _solver_loss(bank, hi0, lo0, alpha, omega, x, sweeps)),
        ]
        for point, analytic, fn in checks:
            worst = max(worst, grad.finite_difference_check(fn, point, analytic, step))

        # pre-transform parameters: same round through softmax / sigmoid
        from .net import _transform_backward, _transform_forward_cached
        alpha_hat = rng.normal(0.0, 0.5, bank.num_edges)
        omega_hat = rng.normal(0.0, 0.5, bank.num_edges)
        a2, o2, _, t_cache = _transform_forward_cached(
            bank, alpha_hat, omega_hat, np.zeros(bank.num_edges))
        state = dual.init_dual(bank)
        state.hi = hi0.copy()
        state.lo = lo0.copy()
        dual.refresh(bank, state)
        params2 = dual.SolverParams(alpha=a2, omega=o2)
        dual.nonparam_update(bank, state, theta)
        tape2 = grad.run_round_taped(bank, state, params2, sweeps, theta=None)
        tape2.theta = theta
        if grad.round_degeneracy_gap(bank, tape2, state) < 10.0 * step:
            continue
        _, d_hi2, d_lo2 = grad.loss_and_grad(bank, state)
        gs2 = grad.round_backward(bank, tape2, d_hi2, d_lo2)
        d_ah, d_oh, _ = _transform_backward(bank, t_cache, gs2.d_alpha,
                                            gs2.d_omega, np.zeros(bank.num_edges))
        worst = max(worst, grad.finite_difference_check(
            lambda x: _pre_transform_loss(bank, hi0, lo0, x, omega_hat, theta, sweeps),
            alpha_hat, d_ah, step))
        worst = max(worst, grad.finite_difference_check(
            lambda x: _pre_transform_loss(bank, hi0, lo0, alpha_hat, x, theta, sweeps),
            omega_hat, d_oh, step))
        done += 1
    passed = done >= num_instances and worst <= tol
    return SuiteResult("solver-gradients", passed,
                       f"{done} instances (incl. pre-transform), max rel err {worst:.3e}")


def _net_loss(bank, weights, sweeps):
    state = dual.init_dual(bank)
    hist = net.new_history(bank)
    feats = net.compute_features(bank, state, hist)
    out, _ = net.gnn_forward(bank, feats, net.zero_state(bank), weights)
    params = dual.SolverParams(alpha=out.alpha, omega=out.omega)
    dual.nonparam_update(bank, state, out.theta)
    for _ in range(sweeps):
        dual.sweep(bank, state, params)
    return dual.dual_objective(bank, state)


def network_gradient_suite(num_instances: int = 20, sweeps: int = 1,
                           step: float = 1e-6, tol: float = 1e-4,
                           arch: str = "doge", weights_per_array: int = 0,
                           seed: int = 3) -> SuiteResult:
    """End-to-end finite differences of every network weight (loss through
    transforms, perturbation, and solver sweeps).

    weights_per_array = 0 probes every coordinate of every array.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    attempts = 0
    while done < num_instances and attempts < num_instances * 12:
        attempts += 1
        inst = generate_independent_set(int(rng.integers(5, 9)),
                                        float(rng.uniform(0.35, 0.65)),
                                        int(rng.integers(0, 2 ** 31)))
        bank = build_bank(inst, decompose(inst))
        if bank.num_edges == 0:
            continue
        weights = net.init_weights(int(rng.integers(0, 2 ** 31)), arch)
        state = dual.init_dual(bank)
        hist = net.new_history(bank)
        feats = net.compute_features(bank, state, hist)
        out, cache = net.gnn_forward(bank, feats, net.zero_state(bank), weights)
        # resample when any perturbation logit sits near the shrink threshold
        # (the weight probes would straddle the kink)
        raw_theta = cache["t"]["theta_hat"]
        if np.any(np.abs(np.abs(raw_theta) - net.THETA_SHRINK) < 1e3 * step):
            continue
        params = dual.SolverParams(alpha=out.alpha, omega=out.omega)
        dual.nonparam_update(bank, state, out.theta)
        tape = grad.run_round_taped(bank, state, params, sweeps, theta=None)
        tape.theta = out.theta
        if grad.round_degeneracy_gap(bank, tape, state) < 10.0 * step:
            continue
        _, d_hi, d_lo = grad.loss_and_grad(bank, state)
        gs = grad.round_backward(bank, tape, d_hi, d_lo)
        g_w, _ = net.gnn_backward(bank, cache, weights,
                                  gs.d_alpha, gs.d_omega, gs.d_theta)
        for name, arr in weights.arrays.items():
            flat = arr.ravel()
            if weights_per_array and flat.size > weights_per_array:
                idx = rng.choice(flat.size, size=weights_per_array, replace=False)
            else:
                idx = range(flat.size)
            for k in idx:
                orig = flat[k]
                flat[k] = orig + step
                up = _net_loss(bank, weights, sweeps)
                flat[k] = orig - step
                down = _net_loss(bank, weights, sweeps)
                flat[k] = orig
                fd = (up - down) / (2.0 * step)
                err = abs(fd - g_w[name].ravel()[k]) / (1.0 + abs(fd))
                worst = max(worst, err)
        done += 1
    passed = done >= num_instances and worst <= tol
    return SuiteResult("network-gradients", passed,
                       f"{done} instances, max rel err {worst:.3e}")


def metric_suite() -> SuiteResult:
    cases = [
        # (bounds, d_star, d_init, expected g)
        ([-2.0, -2.0], -2.0, -3.0, [0.0, 0.0]),
        ([-2.5], -2.0, -3.0, [0.5]),
        ([-3.5], -2.0, -3.0, [1.0]),  # worse than init clips to 1
        ([-3.0, -2.5, -2.0], -2.0, -3.0, [1.0, 0.5, 0.0]),
    ]
    ok = True
    for bounds, d_star, d_init, expected in cases:
        g = relative_gap(np.array(bounds), d_star, d_init)
        if not np.array_equal(g, np.array(expected)):
            ok = False
    m = compute_metrics([0.0, 1.0, 2.0], [-3.0, -2.5, -2.0], -2.0, -3.0, 0.0)
    ok = ok and m.gap_integral == 1.0 and m.t_best == 2.0
    degenerate = compute_metrics([0.0, 1.0], [-2.0, -2.0], -3.0, -2.0, 0.0)
    ok = ok and degenerate.degenerate and np.array_equal(degenerate.gap, [0.0, 0.0])
    return SuiteResult("metric-arithmetic", ok, "clamp and integral cases")


def bdd_suite(rng=None, num_random: int = 60) -> SuiteResult:
    """Diagram paths equal brute-force feasible sets on random small rows."""
    rng = rng or np.random.default_rng(4)
    ok = True
    detail = "paths == brute force"
    for _ in range(num_random):
        width = int(rng.integers(1, 7))
        coeffs = {i: float(rng.integers(-3, 4)) for i in range(width)}
        rel = "le" if rng.random() < 0.7 else "eq"
        rhs = float(rng.integers(-4, 7))
        order = list(range(width))
        feasible = set()
        for bits in itertools.product((0, 1), repeat=width):
            act = ordered_dot([coeffs[i] for i in order], bits)
            if (act <= rhs if rel == "le" else act == rhs):
                feasible.add(bits)
        try:
            diagram = bdd_mod.build_bdd(coeffs, rel, rhs, order)
        except Exception:
            if feasible:
                ok = False
                detail = f"builder failed on feasible row {coeffs} {rel} {rhs}"
                break
            continue
        if not feasible:
            ok = False
            detail = f"builder accepted infeasible row {coeffs} {rel} {rhs}"
            break
        paths = set(bdd_mod.enumerate_paths(diagram))
        if paths != feasible:
            ok = False
            detail = f"path set mismatch on {coeffs} {rel} {rhs}"
            break
        reduced = bdd_mod.reduce(diagram)
        if reduced != diagram:
            ok = False
            detail = "reduction not idempotent"
            break
    return SuiteResult("bdd-construction", ok, detail)


def default_suites(quick: bool = False) -> list[SuiteResult]:
    rng = np.random.default_rng(99)
    n_inst = 20 if quick else 60
    instances = [tiny_instance()] + [
        generate_independent_set(12, 0.25, 9000 + k) for k in range(n_inst)]
    results = [
        bdd_suite(),
        feasibility_suite(instances),
        monotonicity_suite(instances, num_draws=1 if quick else 3),
        bound_validity_suite(instances[:10] if quick else instances[:30]),
        convergence_suite(),
        zero_net_suite(instances[:3]),
        solver_gradient_suite(num_instances=5 if quick else 20),
        network_gradient_suite(num_instances=2 if quick else 20,
                               weights_per_array=6 if quick else 0),
        metric_suite(),
    ]
    return results
