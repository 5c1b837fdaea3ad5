"""Scratch: net forward/backward validation (zero-equivalence + weight FD)."""
import numpy as np

import minmarg as mm
from minmarg.bank import build_bank
from minmarg import dual, grad, net
from minmarg.train import run_round, TrainConfig


def make(seed, n=6, p=0.5):
    inst = mm.generate_independent_set(n, p, seed)
    return build_bank(inst, mm.decompose(inst))


def test_zero_equivalence(seed=11):
    bank = make(seed, n=8, p=0.4)
    # zero net round
    w = net.zero_weights("doge")
    state_a = dual.init_dual(bank)
    hist = net.new_history(bank)
    s = net.zero_state(bank)
    res = run_round(bank, state_a, w, s, hist, sweeps=5)
    # plain default solver
    state_b = dual.init_dual(bank)
    params = dual.default_params(bank)
    dual.nonparam_update(bank, state_b, np.zeros(bank.num_edges))
    dual.run(bank, state_b, params, 5)
    print("zero-net equivalence bitwise:",
          np.array_equal(state_a.hi, state_b.hi),
          np.array_equal(state_a.lo, state_b.lo),
          np.array_equal(state_a.deferred, state_b.deferred))
    out = res.output
    deg = bank.var_degree[bank.edge_var]
    print("alpha == 1/deg:", np.array_equal(out.alpha, 1.0 / deg))
    print("omega == 0.5:", np.array_equal(out.omega, np.full(bank.num_edges, 0.5)))
    print("theta == 0:", np.array_equal(out.theta, np.zeros(bank.num_edges)))


def end_to_end_loss(bank, weights, sweeps=2):
    state = dual.init_dual(bank)
    hist = net.new_history(bank)
    s = net.zero_state(bank)
    feats = net.compute_features(bank, state, hist)
    out, cache = net.gnn_forward(bank, feats, s, weights)
    params = dual.SolverParams(alpha=out.alpha, omega=out.omega)
    dual.nonparam_update(bank, state, out.theta)
    tape = grad.run_round_taped(bank, state, params, sweeps, theta=None)
    tape.theta = out.theta
    L, d_hi, d_lo = grad.loss_and_grad(bank, state)
    return L, tape, cache, state


def test_weight_fd(seed=5, arch="doge", step=1e-6, n_weights_per_array=4):
    bank = make(seed, n=6, p=0.5)
    weights = net.init_weights(seed + 100, arch)
    L, tape, cache, state = end_to_end_loss(bank, weights)
    gap = grad.round_degeneracy_gap(bank, tape, state)
    if gap < 10 * step:
        print(f"seed {seed}: degenerate ({gap:.2e}), skip")
        return None
    _, d_hi, d_lo = grad.loss_and_grad(bank, state)
    gs = grad.round_backward(bank, tape, d_hi, d_lo)
    g_w, _ = net.gnn_backward(bank, cache, weights, gs.d_alpha, gs.d_omega, gs.d_theta)

    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_name = None
    for name, arr in weights.arrays.items():
        flat = arr.ravel()
        idx = rng.choice(flat.size, size=min(n_weights_per_array, flat.size), replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + step
            up, *_ = end_to_end_loss(bank, weights)
            flat[k] = orig - step
            down, *_ = end_to_end_loss(bank, weights)
            flat[k] = orig
            fd = (up - down) / (2 * step)
            err = abs(fd - g_w[name].ravel()[k]) / (1.0 + abs(fd))
            if err > worst:
                worst, worst_name = err, (name, int(k))
    print(f"arch={arch} seed={seed}: L={L:.6f} worst rel err={worst:.3e} at {worst_name}")
    return worst


if __name__ == "__main__":
    test_zero_equivalence()
    for arch in ("doge", "doge-m"):
        done = 0
        seed = 0
        while done < 3:
            seed += 1
            w = test_weight_fd(seed, arch)
            if w is not None:
                done += 1
