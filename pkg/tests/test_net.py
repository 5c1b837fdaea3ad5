import math

import numpy as np
import pytest

import minmarg as mm
from minmarg import dual, grad, net
from minmarg.bank import build_bank
from minmarg.check import network_gradient_suite


def make_bank(inst):
    return build_bank(inst, mm.decompose(inst))


def fresh_features(bank):
    state = dual.init_dual(bank)
    hist = net.new_history(bank)
    return net.compute_features(bank, state, hist), state, hist


# ---------------------------------------------------------------------------
# Dense reference: independent plain-loop computation of one prediction round.
# ---------------------------------------------------------------------------

def dense_reference_forward(bank, feats, s, weights):
    W = weights.arrays
    n, m, E = bank.num_vars, bank.num_subs, bank.num_edges
    edges = [(int(bank.edge_var[e]), int(bank.edge_sub[e])) for e in range(E)]

    def mp(dst_feats, src_feats, p):
        out = []
        for d in range(len(dst_feats)):
            incident = [e for e, (i, j) in enumerate(edges)
                        if (j if p == "mpj_" else i) == d]
            q = dst_feats[d] @ W[p + "w_q"]
            scores = []
            for e in incident:
                src = edges[e][0] if p == "mpj_" else edges[e][1]
                k_in = np.concatenate([src_feats[src], feats.f_edge[e]])
                scores.append(float(q @ (k_in @ W[p + "w_k"])) / math.sqrt(net.ATTN_DIM))
            acc = dst_feats[d] @ W[p + "w_self"] + W[p + "b_self"]
            if incident:
                mx = max(scores)
                ex = [math.exp(s - mx) for s in scores]
                total = sum(ex)
                for a_raw, e in zip(ex, incident):
                    src = edges[e][0] if p == "mpj_" else edges[e][1]
                    val = (src_feats[src] @ W[p + "w_val_src"]
                           + feats.f_edge[e] @ W[p + "w_val_edge"])
                    acc = acc + (a_raw / total) * val
            mu = acc.mean()
            var = ((acc - mu) ** 2).mean()
            ln = (acc - mu) / math.sqrt(var + net.LN_EPS)
            ln = ln * W[p + "ln_scale"] + W[p + "ln_shift"]
            out.append(np.maximum(ln, 0.0))
        return np.array(out) if out else np.zeros((0, net.NODE_DIM))

    h_sub = mp(feats.f_sub, feats.f_var, "mpj_")
    src2 = np.concatenate([feats.f_sub, h_sub], axis=1) if m else np.zeros((0, 23))
    h_var = mp(feats.f_var, src2, "mpi_")

    if weights.arch == net.ARCH_LSTM:
        h_prev, c_prev = s
        z = np.zeros((n, net.LSTM_DIM))
        for i in range(n):
            gates = (h_var[i] @ W["lstm_w_x"] + h_prev[i] @ W["lstm_w_h"]
                     + W["lstm_b"])
            d = net.LSTM_DIM
            sig = lambda x: 1.0 / (1.0 + np.exp(-x))
            ii, ff = sig(gates[:d]), sig(gates[d:2 * d])
            gg, oo = np.tanh(gates[2 * d:3 * d]), sig(gates[3 * d:])
            c = ff * c_prev[i] + ii * gg
            z[i] = oo * np.tanh(c)
    else:
        z = h_var

    alpha_hat = np.zeros(E)
    omega_hat = np.zeros(E)
    theta = np.zeros(E)
    for e, (i, j) in enumerate(edges):
        x = np.concatenate([feats.f_var[i], h_var[i], z[i],
                            feats.f_sub[j], h_sub[j], feats.f_edge[e]])
        h1 = np.maximum(x @ W["phi_w1"] + W["phi_b1"], 0.0)
        h2 = np.maximum(h1 @ W["phi_w2"] + W["phi_b2"], 0.0)
        h3 = np.maximum(h2 @ W["phi_w3"] + W["phi_b3"], 0.0)
        raw = h3 @ W["phi_w4"] + W["phi_b4"]
        shrunk = np.sign(raw[2]) * max(abs(raw[2]) - net.THETA_SHRINK, 0.0)
        alpha_hat[e], omega_hat[e], theta[e] = raw[0], raw[1], 0.1 * shrunk

    alpha = np.zeros(E)
    for i in range(n):
        incident = [e for e, (iv, _) in enumerate(edges) if iv == i]
        if not incident:
            continue
        logits = np.array([alpha_hat[e] for e in incident])
        ex = np.exp(logits - logits.max())
        sm = ex / ex.sum()
        sm = sm / sm.sum()
        for k, e in enumerate(incident):
            alpha[e] = sm[k]
    omega = np.clip(1.0 / (1.0 + np.exp(-omega_hat)), 1e-6, 1.0 - 1e-6)
    return alpha, omega, theta


class TestFeatures:
    def test_first_round_emas_equal_observation(self, tiny_bank):
        feats, state, hist = fresh_features(tiny_bank)
        assert np.array_equal(hist.ema_d1, np.zeros(2))
        assert np.array_equal(hist.ema_bit, feats.f_edge[:, 0])

    def test_zero_objective_guarded(self):
        inst = mm.IlpInstance(
            num_vars=2, objective=np.zeros(2),
            constraints=(mm.Constraint(vars=(0, 1), coeffs=(1.0, 1.0),
                                       rel="le", rhs=1.0),))
        bank = make_bank(inst)
        feats, _, _ = fresh_features(bank)
        assert np.array_equal(feats.f_var[:, 0], np.zeros(2))

    def test_tiny_minimizer_bits(self, tiny_bank):
        feats, _, _ = fresh_features(tiny_bank)
        # subproblem 1 minimizer (1, 0) -> edges 0, 1
        assert feats.f_edge[0, 0] == 1.0
        assert feats.f_edge[1, 0] == 0.0

    def test_all_finite(self):
        inst = mm.generate_independent_set(9, 0.4, 5)
        bank = make_bank(inst)
        feats, state, hist = fresh_features(bank)
        for arr in (feats.f_var, feats.f_sub, feats.f_edge):
            assert np.all(np.isfinite(arr))

    def test_ema_updates_after_rounds(self, tiny_bank):
        state = dual.init_dual(tiny_bank)
        hist = net.new_history(tiny_bank)
        net.compute_features(tiny_bank, state, hist)
        dual.sweep(tiny_bank, state, dual.default_params(tiny_bank))
        feats2 = net.compute_features(tiny_bank, state, hist)
        assert hist.prev_obj is not None
        assert np.all(np.isfinite(feats2.f_sub))


class TestMpLayer:
    def test_single_edge_attention_is_one(self):
        rng = np.random.default_rng(0)
        w = net.init_weights(1, "doge")
        f_src = rng.normal(size=(1, net.FEAT_VAR))
        f_dst = rng.normal(size=(1, net.FEAT_SUB))
        f_edge = rng.normal(size=(1, net.FEAT_EDGE))
        h = net.mp_layer(f_src, f_dst, f_edge, ([0], [0]), w.arrays, "mpj_")
        # attention over one edge is exactly 1: output equals self + value
        W = w.arrays
        val = f_src[0] @ W["mpj_w_val_src"] + f_edge[0] @ W["mpj_w_val_edge"]
        pre = f_dst[0] @ W["mpj_w_self"] + W["mpj_b_self"] + val
        mu, var = pre.mean(), ((pre - pre.mean()) ** 2).mean()
        expect = np.maximum((pre - mu) / np.sqrt(var + net.LN_EPS)
                            * W["mpj_ln_scale"] + W["mpj_ln_shift"], 0.0)
        assert np.allclose(h[0], expect, atol=1e-12)

    def test_equal_keys_half_attention(self):
        rng = np.random.default_rng(1)
        w = net.init_weights(2, "doge")
        f_src = np.tile(rng.normal(size=(1, net.FEAT_VAR)), (2, 1))
        f_dst = rng.normal(size=(1, net.FEAT_SUB))
        f_edge = np.tile(rng.normal(size=(1, net.FEAT_EDGE)), (2, 1))
        h_two = net.mp_layer(f_src, f_dst, f_edge, ([0, 1], [0, 0]),
                             w.arrays, "mpj_")
        h_one = net.mp_layer(f_src[:1], f_dst, f_edge[:1], ([0], [0]),
                             w.arrays, "mpj_")
        # two identical incident edges a = (1/2, 1/2): same aggregate
        assert np.allclose(h_two, h_one, atol=1e-12)

    def test_isolated_destination_fallback(self):
        rng = np.random.default_rng(2)
        w = net.init_weights(3, "doge")
        f_src = rng.normal(size=(1, net.FEAT_VAR))
        f_dst = rng.normal(size=(2, net.FEAT_SUB))
        f_edge = rng.normal(size=(1, net.FEAT_EDGE))
        h = net.mp_layer(f_src, f_dst, f_edge, ([0], [0]), w.arrays, "mpj_")
        W = w.arrays
        pre = f_dst[1] @ W["mpj_w_self"] + W["mpj_b_self"]
        mu, var = pre.mean(), ((pre - pre.mean()) ** 2).mean()
        expect = np.maximum((pre - mu) / np.sqrt(var + net.LN_EPS)
                            * W["mpj_ln_scale"] + W["mpj_ln_shift"], 0.0)
        assert np.allclose(h[1], expect, atol=1e-12)


class TestForward:
    def test_zero_weights_recover_defaults(self):
        inst = mm.generate_independent_set(7, 0.45, 4)
        bank = make_bank(inst)
        feats, _, _ = fresh_features(bank)
        out, _ = net.gnn_forward(bank, feats, net.zero_state(bank),
                                 net.zero_weights("doge"))
        deg = bank.var_degree[bank.edge_var]
        assert np.array_equal(out.omega, np.full(bank.num_edges, 0.5))
        assert np.array_equal(out.theta, np.zeros(bank.num_edges))
        defaults = dual.default_params(bank)
        assert np.array_equal(out.alpha, defaults.alpha)

    def test_degree_one_alpha_is_one(self, tiny_bank):
        feats, _, _ = fresh_features(tiny_bank)
        out, _ = net.gnn_forward(tiny_bank, feats, net.zero_state(tiny_bank),
                                 net.init_weights(7, "doge"))
        assert out.alpha[0] == 1.0  # x1 appears in one subproblem only
        assert out.alpha[3] == 1.0

    @pytest.mark.parametrize("arch", ["doge", "doge-m"])
    def test_matches_dense_reference(self, arch):
        inst = mm.generate_independent_set(6, 0.5, 9)
        bank = make_bank(inst)
        feats, _, _ = fresh_features(bank)
        weights = net.init_weights(23, arch)
        s = net.zero_state(bank)
        out, _ = net.gnn_forward(bank, feats, s, weights)
        alpha, omega, theta = dense_reference_forward(bank, feats, s, weights)
        assert np.allclose(out.alpha, alpha, atol=1e-10)
        assert np.allclose(out.omega, omega, atol=1e-10)
        assert np.allclose(out.theta, theta, atol=1e-10)

    def test_alpha_simplex_and_omega_range(self):
        inst = mm.generate_independent_set(8, 0.5, 12)
        bank = make_bank(inst)
        feats, _, _ = fresh_features(bank)
        out, _ = net.gnn_forward(bank, feats, net.zero_state(bank),
                                 net.init_weights(3, "doge"))
        sums = np.zeros(bank.num_vars)
        np.add.at(sums, bank.edge_var, out.alpha)
        live = bank.var_degree > 0
        assert np.all(np.abs(sums[live] - 1.0) <= 1e-12)
        assert np.all((out.omega > 0.0) & (out.omega < 1.0))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(31)
        inst = mm.generate_independent_set(7, 0.5, 13)
        perm = rng.permutation(inst.num_vars)
        # relabel variables: constraint (u, v) -> (perm[u], perm[v])
        rows = tuple(
            mm.model.make_constraint([int(perm[i]) for i in row.vars],
                                     row.coeffs, row.rel, row.rhs)
            for row in inst.constraints)
        c2 = np.zeros(inst.num_vars)
        c2[perm] = inst.objective
        inst2 = mm.IlpInstance(num_vars=inst.num_vars, objective=c2,
                               constraints=rows)
        bank1, bank2 = make_bank(inst), make_bank(inst2)
        feats1, _, _ = fresh_features(bank1)
        feats2, _, _ = fresh_features(bank2)
        weights = net.init_weights(5, "doge")
        out1, _ = net.gnn_forward(bank1, feats1, net.zero_state(bank1), weights)
        out2, _ = net.gnn_forward(bank2, feats2, net.zero_state(bank2), weights)

        # match edges by (mapped variable, mapped constraint variable set)
        def key(bank, inst_ref, e):
            i = int(bank.edge_var[e])
            row = inst_ref.constraints[int(bank.edge_sub[e])]
            return (i, tuple(sorted(row.vars)))

        index2 = {key(bank2, inst2, e): e for e in range(bank2.num_edges)}
        for e in range(bank1.num_edges):
            i = int(bank1.edge_var[e])
            row = inst.constraints[int(bank1.edge_sub[e])]
            mapped = (int(perm[i]), tuple(sorted(int(perm[v]) for v in row.vars)))
            e2 = index2[mapped]
            assert out1.alpha[e] == pytest.approx(out2.alpha[e2], abs=1e-9)
            assert out1.omega[e] == pytest.approx(out2.omega[e2], abs=1e-9)
            assert out1.theta[e] == pytest.approx(out2.theta[e2], abs=1e-9)


class TestBackward:
    def test_zero_upstream_zero_grads(self, tiny_bank):
        feats, _, _ = fresh_features(tiny_bank)
        weights = net.init_weights(11, "doge-m")
        out, cache = net.gnn_forward(tiny_bank, feats,
                                     net.zero_state(tiny_bank), weights)
        zeros = np.zeros(tiny_bank.num_edges)
        g, d_s = net.gnn_backward(tiny_bank, cache, weights, zeros, zeros, zeros)
        assert all(np.array_equal(v, np.zeros_like(v)) for v in g.values())

    def test_finite_differences(self):
        result = network_gradient_suite(num_instances=2, weights_per_array=4,
                                        seed=12)
        assert result.passed, result.detail

    def test_dead_relu_zero_gradient(self, tiny_bank):
        feats, _, _ = fresh_features(tiny_bank)
        weights = net.init_weights(19, "doge")
        weights.arrays["phi_b2"][4] = -100.0  # unit 4 of layer 2 never fires
        out, cache = net.gnn_forward(tiny_bank, feats,
                                     net.zero_state(tiny_bank), weights)
        rng = np.random.default_rng(0)
        g, _ = net.gnn_backward(tiny_bank, cache, weights,
                                rng.normal(size=4), rng.normal(size=4),
                                rng.normal(size=4))
        assert np.array_equal(g["phi_w2"][:, 4], np.zeros(net.PHI_HIDDEN))
        # perturbing the dead unit's incoming weight cannot change outputs
        weights2 = weights.copy()
        weights2.arrays["phi_w2"][0, 4] += 0.5
        out2, _ = net.gnn_forward(tiny_bank, feats,
                                  net.zero_state(tiny_bank), weights2)
        assert np.array_equal(out.alpha, out2.alpha)
        assert np.array_equal(out.theta, out2.theta)


class TestWeightsIo:
    def test_same_seed_identical(self):
        assert net.init_weights(42, "doge").equal(net.init_weights(42, "doge"))

    def test_save_load_save_identical_bytes(self, tmp_path):
        early = net.init_weights(1, "doge-m")
        late = net.init_weights(2, "doge-m")
        p1 = tmp_path / "a.bin"
        p2 = tmp_path / "b.bin"
        net.save_weights(str(p1), early, late, meta={"k": 1})
        e2, l2, meta = net.load_weights(str(p1))
        assert e2.equal(early) and l2.equal(late) and meta == {"k": 1}
        net.save_weights(str(p2), e2, l2, meta={"k": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupt_file_rejected(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(ValueError, match="not a weights file"):
            net.load_weights(str(p))

    def test_parameter_count_near_paper_budget(self):
        plain = net.zero_weights("doge").param_count()
        lstm = net.zero_weights("doge-m").param_count()
        assert plain == 5379
        assert lstm == plain + 2112
        # same order of magnitude as the ~10k reported budget
        assert 1_000 <= plain <= 100_000
        assert 1_000 <= lstm <= 100_000
