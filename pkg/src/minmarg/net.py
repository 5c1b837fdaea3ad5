"""Update-parameter predictor: features, bipartite attention message passing,
optional LSTM recurrence, per-edge MLP head, and exact hand-written backward.

The dual problem is encoded on a bipartite graph (variables | subproblems)
whose edges are the dual variables.  One round of prediction:

    h_J = relu(LN(MP(vars+edges -> subproblems)))
    h_I = relu(LN(MP([f_J, h_J]+edges -> variables)))
    z_I, s_I = LSTM(h_I, s_I)            (lstm variant; identity otherwise)
    (alpha_hat, omega_hat, theta_hat) = Phi per edge
    alpha = softmax over each variable's subproblems, omega = sigmoid, theta scaled.

With all-zero weights the outputs are exactly the non-learned defaults
(uniform averaging, damping 0.5, zero perturbation).  Every forward op caches
what its backward needs; gradients are accumulated in a fixed order so results
are reproducible bit-for-bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .bank import BddBank
from .segments import (
    expand,
    segment_normalize,
    segment_normalize_backward,
    segment_softmax,
    segment_softmax_backward,
    segment_sum,
)

ARCH_PLAIN = "doge"
ARCH_LSTM = "doge-m"
ARCHS = (ARCH_PLAIN, ARCH_LSTM)

FEAT_VAR = 2
FEAT_SUB = 7
FEAT_EDGE = 5
NODE_DIM = 16
ATTN_DIM = 8
LSTM_DIM = 16
PHI_HIDDEN = 32
EMA_FACTOR = 0.9
NORM_EPS = 1e-9
OMEGA_CLAMP = 1e-6
THETA_SCALE = 0.1
THETA_SHRINK = 1.0  # soft-threshold: |raw| <= tau emits exactly zero
LN_EPS = 1e-5

_WEIGHTS_MAGIC = b"MMGW"
_WEIGHTS_VERSION = 1


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

def weight_shapes(arch: str) -> dict[str, tuple[int, ...]]:
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}")
    src_i = FEAT_SUB + NODE_DIM  # variable-direction sources carry [f_J, h_J]
    phi_in = (FEAT_VAR + NODE_DIM + LSTM_DIM) + (FEAT_SUB + NODE_DIM) + FEAT_EDGE
    shapes: dict[str, tuple[int, ...]] = {
        "mpj_w_self": (FEAT_SUB, NODE_DIM),
        "mpj_b_self": (NODE_DIM,),
        "mpj_w_val_src": (FEAT_VAR, NODE_DIM),
        "mpj_w_val_edge": (FEAT_EDGE, NODE_DIM),
        "mpj_w_q": (FEAT_SUB, ATTN_DIM),
        "mpj_w_k": (FEAT_VAR + FEAT_EDGE, ATTN_DIM),
        "mpj_ln_scale": (NODE_DIM,),
        "mpj_ln_shift": (NODE_DIM,),
        "mpi_w_self": (FEAT_VAR, NODE_DIM),
        "mpi_b_self": (NODE_DIM,),
        "mpi_w_val_src": (src_i, NODE_DIM),
        "mpi_w_val_edge": (FEAT_EDGE, NODE_DIM),
        "mpi_w_q": (FEAT_VAR, ATTN_DIM),
        "mpi_w_k": (src_i + FEAT_EDGE, ATTN_DIM),
        "mpi_ln_scale": (NODE_DIM,),
        "mpi_ln_shift": (NODE_DIM,),
    }
    if arch == ARCH_LSTM:
        shapes.update({
            "lstm_w_x": (NODE_DIM, 4 * LSTM_DIM),
            "lstm_w_h": (LSTM_DIM, 4 * LSTM_DIM),
            "lstm_b": (4 * LSTM_DIM,),
        })
    shapes.update({
        "phi_w1": (phi_in, PHI_HIDDEN),
        "phi_b1": (PHI_HIDDEN,),
        "phi_w2": (PHI_HIDDEN, PHI_HIDDEN),
        "phi_b2": (PHI_HIDDEN,),
        "phi_w3": (PHI_HIDDEN, PHI_HIDDEN),
        "phi_b3": (PHI_HIDDEN,),
        "phi_w4": (PHI_HIDDEN, 3),
        "phi_b4": (3,),
    })
    return shapes


@dataclass
class GnnWeights:
    arch: str
    arrays: dict[str, np.ndarray]  # fixed key order from weight_shapes

    def copy(self) -> "GnnWeights":
        return GnnWeights(self.arch, {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def param_count(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def equal(self, other: "GnnWeights") -> bool:
        return self.arch == other.arch and all(
            np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays)


def zero_weights(arch: str = ARCH_PLAIN) -> GnnWeights:
    return GnnWeights(arch, {k: np.zeros(s) for k, s in weight_shapes(arch).items()})


def init_weights(seed: int, arch: str = ARCH_PLAIN) -> GnnWeights:
    """Uniform +-sqrt(6/(fan_in+fan_out)) for matrices, zero biases, unit layer
    norm scale, LSTM forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in weight_shapes(arch).items():
        if len(shape) == 2:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    arrays["mpj_ln_scale"][:] = 1.0
    arrays["mpi_ln_scale"][:] = 1.0
    if arch == ARCH_LSTM:
        arrays["lstm_b"][LSTM_DIM:2 * LSTM_DIM] = 1.0  # gate order (i, f, g, o)
    return GnnWeights(arch, arrays)


def save_weights(path: str, early: GnnWeights, late: GnnWeights,
                 meta: dict | None = None) -> None:
    """Versioned container with raw little-endian float64 payload.

    Writing the same weights twice produces identical bytes (no timestamps).
    """
    entries = []
    payload = bytearray()
    for tag, w in (("early", early), ("late", late)):
        for name, arr in w.arrays.items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            entries.append({"key": f"{tag}/{name}", "shape": list(a.shape),
                            "offset": len(payload), "nbytes": a.nbytes})
            payload.extend(a.tobytes())
    header = {
        "version": _WEIGHTS_VERSION,
        "arch": early.arch,
        "arrays": entries,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_WEIGHTS_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_weights(path: str) -> tuple[GnnWeights, GnnWeights, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _WEIGHTS_MAGIC:
            raise ValueError(f"not a weights file: {path}")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        if header.get("version") != _WEIGHTS_VERSION:
            raise ValueError(f"unsupported weights version {header.get('version')}")
        payload = fh.read()
    arch = header["arch"]
    shapes = weight_shapes(arch)
    nets = {"early": zero_weights(arch), "late": zero_weights(arch)}
    seen = set()
    for ent in header["arrays"]:
        tag, name = ent["key"].split("/", 1)
        if name not in shapes or tuple(ent["shape"]) != shapes[name]:
            raise ValueError(f"corrupt weights file: unexpected array {ent['key']}")
        raw = payload[ent["offset"]:ent["offset"] + ent["nbytes"]]
        nets[tag].arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(ent["shape"]).copy()
        seen.add(ent["key"])
    expected = {f"{tag}/{name}" for tag in ("early", "late") for name in shapes}
    if seen != expected:
        raise ValueError("corrupt weights file: missing arrays")
    return nets["early"], nets["late"], header.get("meta", {})


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSet:
    f_var: np.ndarray   # (n, FEAT_VAR)
    f_sub: np.ndarray   # (m, FEAT_SUB)
    f_edge: np.ndarray  # (E, FEAT_EDGE)


@dataclass
class FeatureHistory:
    """Exponential moving averages and previous-round observations."""

    ema_d1: np.ndarray
    ema_d2: np.ndarray
    ema_bit: np.ndarray
    nonparam_change: np.ndarray
    prev_obj: np.ndarray | None = None
    prev_d1: np.ndarray | None = None
    seen_bits: bool = False


def new_history(bank: BddBank) -> FeatureHistory:
    return FeatureHistory(
        ema_d1=np.zeros(bank.num_subs),
        ema_d2=np.zeros(bank.num_subs),
        ema_bit=np.zeros(bank.num_edges),
        nonparam_change=np.zeros(bank.num_subs),
    )


def compute_features(bank: BddBank, state, hist: FeatureHistory) -> FeatureSet:
    """Refresh the dynamic features from the current dual state.

    Moving averages use smoothing 0.9 and are initialized to their first
    observation; objective differences are zero on the first round.
    """
    from . import _kernels as K
    from .dual import energies, ensure_top

    obj = energies(bank, state)
    ensure_top(bank, state)
    bits = np.zeros(bank.num_edges, dtype=np.int64)
    if bank.num_subs:
        K.trace_minimizers(bank.sub_edge_start, bank.sub_levels, bank.node_start,
                           bank.node_lo, bank.node_hi, state.hi, state.lo,
                           state.to_top, bits)
    bits_f = bits.astype(np.float64)

    if hist.prev_obj is None:
        d1 = np.zeros(bank.num_subs)
    else:
        d1 = obj - hist.prev_obj
    d2 = np.zeros(bank.num_subs) if hist.prev_d1 is None else d1 - hist.prev_d1
    if hist.prev_obj is None:
        hist.ema_d1 = d1.copy()
        hist.ema_d2 = d2.copy()
    else:
        hist.ema_d1 = EMA_FACTOR * hist.ema_d1 + (1.0 - EMA_FACTOR) * d1
        hist.ema_d2 = EMA_FACTOR * hist.ema_d2 + (1.0 - EMA_FACTOR) * d2
    if not hist.seen_bits:
        hist.ema_bit = bits_f.copy()
        hist.seen_bits = True
    else:
        hist.ema_bit = EMA_FACTOR * hist.ema_bit + (1.0 - EMA_FACTOR) * bits_f
    hist.prev_obj = obj.copy()
    hist.prev_d1 = d1.copy()

    c = bank.objective
    c_denom = max(float(np.abs(c).max(initial=0.0)), NORM_EPS)
    f_var = np.stack([c / c_denom, bank.var_degree.astype(np.float64)], axis=1)

    f_sub = np.stack([
        bank.sub_levels.astype(np.float64),
        bank.sub_rhs,
        bank.sub_is_le,
        obj,
        hist.ema_d1,
        hist.ema_d2,
        hist.nonparam_change,
    ], axis=1) if bank.num_subs else np.zeros((0, FEAT_SUB))

    lam = state.hi - state.lo
    denom = float(np.abs(lam + state.deferred).max(initial=0.0)) + NORM_EPS
    f_edge = np.stack([
        bits_f,
        hist.ema_bit,
        bank.edge_coeff,
        lam / denom,
        state.deferred / denom,
    ], axis=1) if bank.num_edges else np.zeros((0, FEAT_EDGE))

    return FeatureSet(f_var=f_var, f_sub=f_sub, f_edge=f_edge)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def _layernorm_forward(x, scale, shift):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * scale + shift, (xc, inv, xhat, scale)


def _layernorm_backward(d_y, cache, grads, scale_name, shift_name):
    xc, inv, xhat, scale = cache
    dim = xhat.shape[1]
    grads[scale_name] += (d_y * xhat).sum(axis=0)
    grads[shift_name] += d_y.sum(axis=0)
    d_xhat = d_y * scale
    dot = (d_xhat * xhat).sum(axis=1, keepdims=True)
    mean = d_xhat.sum(axis=1, keepdims=True)
    return inv * (d_xhat - mean / dim - xhat * dot / dim)


def mp_forward(f_dst, f_src, f_edge_seg, src_idx_seg, dst_offsets, W, p):
    """Attention message passing toward the destination side.

    Edge arrays must be given in segment order (grouped by destination).
    Destinations without incident edges get W_self f + b alone.
    """
    q = f_dst @ W[p + "w_q"]
    src_gather = f_src[src_idx_seg]
    k_in = np.concatenate([src_gather, f_edge_seg], axis=1)
    k = k_in @ W[p + "w_k"]
    q_edge = expand(q, dst_offsets)
    score = (q_edge * k).sum(axis=1) / np.sqrt(ATTN_DIM)
    attn = segment_softmax(score, dst_offsets)
    val = src_gather @ W[p + "w_val_src"] + f_edge_seg @ W[p + "w_val_edge"]
    agg = segment_sum(attn[:, None] * val, dst_offsets)
    pre = f_dst @ W[p + "w_self"] + W[p + "b_self"] + agg
    ln, ln_cache = _layernorm_forward(pre, W[p + "ln_scale"], W[p + "ln_shift"])
    h = np.maximum(ln, 0.0)
    cache = {"f_dst": f_dst, "src_gather": src_gather, "k_in": k_in, "k": k,
             "q": q, "q_edge": q_edge, "attn": attn, "val": val, "ln": ln,
             "ln_cache": ln_cache, "src_idx": src_idx_seg, "offsets": dst_offsets,
             "f_edge": f_edge_seg, "n_src": f_src.shape[0]}
    return h, cache


def mp_backward(d_h, cache, W, p, grads):
    """Returns (d_f_dst, d_f_src, d_f_edge_seg) and accumulates weight grads."""
    offs = cache["offsets"]
    d_ln = d_h * (cache["ln"] > 0.0)
    d_pre = _layernorm_backward(d_ln, cache["ln_cache"], grads,
                                p + "ln_scale", p + "ln_shift")
    grads[p + "b_self"] += d_pre.sum(axis=0)
    grads[p + "w_self"] += cache["f_dst"].T @ d_pre
    d_f_dst = d_pre @ W[p + "w_self"].T

    d_edge_term = expand(d_pre, offs)
    d_attn = (d_edge_term * cache["val"]).sum(axis=1)
    d_val = cache["attn"][:, None] * d_edge_term
    grads[p + "w_val_src"] += cache["src_gather"].T @ d_val
    grads[p + "w_val_edge"] += cache["f_edge"].T @ d_val
    d_src_gather = d_val @ W[p + "w_val_src"].T
    d_f_edge = d_val @ W[p + "w_val_edge"].T

    d_score = segment_softmax_backward(cache["attn"], d_attn, offs)
    d_score = d_score / np.sqrt(ATTN_DIM)
    d_q_edge = d_score[:, None] * cache["k"]
    d_k = d_score[:, None] * cache["q_edge"]
    d_q = segment_sum(d_q_edge, offs)
    grads[p + "w_q"] += cache["f_dst"].T @ d_q
    d_f_dst += d_q @ W[p + "w_q"].T
    grads[p + "w_k"] += cache["k_in"].T @ d_k
    d_k_in = d_k @ W[p + "w_k"].T
    n_src_feat = cache["src_gather"].shape[1]
    d_src_gather = d_src_gather + d_k_in[:, :n_src_feat]
    d_f_edge = d_f_edge + d_k_in[:, n_src_feat:]

    d_f_src = np.zeros((cache["n_src"], n_src_feat))
    np.add.at(d_f_src, cache["src_idx"], d_src_gather)
    return d_f_dst, d_f_src, d_f_edge


def mp_layer(f_src, f_dst, f_edge, edges, W, prefix):
    """Spec-level message passing op on an explicit edge list.

    edges: (src_idx, dst_idx) arrays in any order; used by unit tests and the
    dense reference comparison.  Returns embeddings per destination node.
    """
    src_idx = np.asarray(edges[0], dtype=np.int64)
    dst_idx = np.asarray(edges[1], dtype=np.int64)
    order = np.argsort(dst_idx, kind="stable")
    counts = np.bincount(dst_idx, minlength=f_dst.shape[0])
    offsets = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    h, _ = mp_forward(f_dst, f_src, f_edge[order], src_idx[order], offsets, W, prefix)
    return h


def _lstm_forward(x, s, W):
    h_prev, c_prev = s
    z = x @ W["lstm_w_x"] + h_prev @ W["lstm_w_h"] + W["lstm_b"]
    d = LSTM_DIM
    i = _sigmoid(z[:, :d])
    f = _sigmoid(z[:, d:2 * d])
    g = np.tanh(z[:, 2 * d:3 * d])
    o = _sigmoid(z[:, 3 * d:])
    c = f * c_prev + i * g
    hc = np.tanh(c)
    h = o * hc
    cache = {"x": x, "h_prev": h_prev, "c_prev": c_prev, "i": i, "f": f,
             "g": g, "o": o, "c": c, "hc": hc}
    return h, (h, c), cache


def _lstm_backward(d_h, d_s, cache, W, grads):
    d_h_out, d_c_out = d_s
    d_h = d_h + d_h_out
    i, f, g, o, hc = cache["i"], cache["f"], cache["g"], cache["o"], cache["hc"]
    d_o = d_h * hc
    d_c = d_h * o * (1.0 - hc * hc) + d_c_out
    d_f = d_c * cache["c_prev"]
    d_c_prev = d_c * f
    d_i = d_c * g
    d_g = d_c * i
    d_z = np.concatenate([
        d_i * i * (1.0 - i),
        d_f * f * (1.0 - f),
        d_g * (1.0 - g * g),
        d_o * o * (1.0 - o),
    ], axis=1)
    grads["lstm_w_x"] += cache["x"].T @ d_z
    grads["lstm_w_h"] += cache["h_prev"].T @ d_z
    grads["lstm_b"] += d_z.sum(axis=0)
    d_x = d_z @ W["lstm_w_x"].T
    d_h_prev = d_z @ W["lstm_w_h"].T
    return d_x, (d_h_prev, d_c_prev)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _phi_forward(x, W):
    a1 = x @ W["phi_w1"] + W["phi_b1"]
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ W["phi_w2"] + W["phi_b2"]
    h2 = np.maximum(a2, 0.0)
    a3 = h2 @ W["phi_w3"] + W["phi_b3"]
    h3 = np.maximum(a3, 0.0)
    out = h3 @ W["phi_w4"] + W["phi_b4"]
    return out, {"x": x, "a1": a1, "h1": h1, "a2": a2, "h2": h2, "a3": a3, "h3": h3}


def _phi_backward(d_out, cache, W, grads):
    grads["phi_w4"] += cache["h3"].T @ d_out
    grads["phi_b4"] += d_out.sum(axis=0)
    d = (d_out @ W["phi_w4"].T) * (cache["a3"] > 0.0)
    grads["phi_w3"] += cache["h2"].T @ d
    grads["phi_b3"] += d.sum(axis=0)
    d = (d @ W["phi_w3"].T) * (cache["a2"] > 0.0)
    grads["phi_w2"] += cache["h1"].T @ d
    grads["phi_b2"] += d.sum(axis=0)
    d = (d @ W["phi_w2"].T) * (cache["a1"] > 0.0)
    grads["phi_w1"] += cache["x"].T @ d
    grads["phi_b1"] += d.sum(axis=0)
    return d @ W["phi_w1"].T


# ---------------------------------------------------------------------------
# Output transforms
# ---------------------------------------------------------------------------

def _soft_shrink(x, tau):
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def transform_outputs(bank: BddBank, alpha_hat, omega_hat, theta_hat):
    """(softmax over each variable's incident edges, clamped sigmoid,
    soft-thresholded and scaled perturbation).

    The dead zone on the perturbation head means the predictor must accumulate
    consistent evidence before it perturbs the duals at all; below the
    threshold the perturbation is exactly zero, so optimizer noise cannot
    erode the bound.
    """
    alpha, _ = _alpha_transform(bank, alpha_hat)
    omega = np.clip(_sigmoid(omega_hat), OMEGA_CLAMP, 1.0 - OMEGA_CLAMP)
    theta = THETA_SCALE * _soft_shrink(theta_hat, THETA_SHRINK)
    return alpha, omega, theta


def _alpha_transform(bank: BddBank, alpha_hat):
    if bank.num_edges == 0:
        return alpha_hat.copy(), None
    perm = bank.var_edge_list
    sm = segment_softmax(alpha_hat[perm], bank.var_edge_start)
    norm = segment_normalize(sm, bank.var_edge_start)
    out = np.empty_like(norm)
    out[perm] = norm
    return out, (sm, perm)


def _transform_forward_cached(bank, alpha_hat, omega_hat, theta_hat):
    alpha, a_cache = _alpha_transform(bank, alpha_hat)
    sig = _sigmoid(omega_hat)
    omega = np.clip(sig, OMEGA_CLAMP, 1.0 - OMEGA_CLAMP)
    theta = THETA_SCALE * _soft_shrink(theta_hat, THETA_SHRINK)
    return alpha, omega, theta, {"a_cache": a_cache, "sig": sig,
                                 "theta_hat": theta_hat}


def _transform_backward(bank, cache, d_alpha, d_omega, d_theta):
    if bank.num_edges == 0:
        return d_alpha.copy(), d_omega.copy(), d_theta.copy()
    sm, perm = cache["a_cache"]
    d_norm = d_alpha[perm]
    d_sm = segment_normalize_backward(sm, d_norm, bank.var_edge_start)
    d_logits_perm = segment_softmax_backward(sm, d_sm, bank.var_edge_start)
    d_alpha_hat = np.empty_like(d_logits_perm)
    d_alpha_hat[perm] = d_logits_perm
    sig = cache["sig"]
    inside = (sig >= OMEGA_CLAMP) & (sig <= 1.0 - OMEGA_CLAMP)
    d_omega_hat = d_omega * sig * (1.0 - sig) * inside
    awake = np.abs(cache["theta_hat"]) > THETA_SHRINK
    d_theta_hat = THETA_SCALE * d_theta * awake
    return d_alpha_hat, d_omega_hat, d_theta_hat


# ---------------------------------------------------------------------------
# Full forward / backward
# ---------------------------------------------------------------------------

@dataclass
class NetOutput:
    alpha: np.ndarray
    omega: np.ndarray
    theta: np.ndarray
    s: tuple[np.ndarray, np.ndarray] | None


def zero_state(bank: BddBank) -> tuple[np.ndarray, np.ndarray]:
    return (np.zeros((bank.num_vars, LSTM_DIM)), np.zeros((bank.num_vars, LSTM_DIM)))


def gnn_forward(bank: BddBank, feats: FeatureSet, s, weights: GnnWeights):
    """One prediction round; returns (NetOutput, cache for gnn_backward)."""
    W = weights.arrays
    h_sub, cache_j = mp_forward(feats.f_sub, feats.f_var, feats.f_edge,
                                bank.edge_var, bank.sub_edge_start, W, "mpj_")
    src2 = np.concatenate([feats.f_sub, h_sub], axis=1)
    perm = bank.var_edge_list
    h_var, cache_i = mp_forward(feats.f_var, src2, feats.f_edge[perm],
                                bank.edge_sub[perm], bank.var_edge_start, W, "mpi_")
    if weights.arch == ARCH_LSTM:
        z, s_new, cache_l = _lstm_forward(h_var, s, W)
    else:
        z, s_new, cache_l = h_var, s, None
    ev, es = bank.edge_var, bank.edge_sub
    phi_in = np.concatenate([
        feats.f_var[ev], h_var[ev], z[ev],
        feats.f_sub[es], h_sub[es], feats.f_edge,
    ], axis=1)
    raw, cache_p = _phi_forward(phi_in, W)
    alpha, omega, theta, cache_t = _transform_forward_cached(
        bank, raw[:, 0].copy(), raw[:, 1].copy(), raw[:, 2].copy())
    cache = {"j": cache_j, "i": cache_i, "l": cache_l, "p": cache_p, "t": cache_t,
             "arch": weights.arch}
    return NetOutput(alpha=alpha, omega=omega, theta=theta, s=s_new), cache


def gnn_backward(bank: BddBank, cache, weights: GnnWeights,
                 d_alpha, d_omega, d_theta, d_s=None):
    """Exact gradients of all weights plus the incoming-LSTM-state gradient.

    d_alpha/d_omega/d_theta are w.r.t. the post-transform outputs; the
    transform Jacobians (softmax, sigmoid with clamp, theta scale) are applied
    here.  Input features are treated as constants.
    """
    W = weights.arrays
    grads = weights.zeros_like()
    d_alpha_hat, d_omega_hat, d_theta_hat = _transform_backward(
        bank, cache["t"], d_alpha, d_omega, d_theta)
    d_raw = np.stack([d_alpha_hat, d_omega_hat, d_theta_hat], axis=1)
    d_phi_in = _phi_backward(d_raw, cache["p"], W, grads)

    nv, nd, nl = FEAT_VAR, NODE_DIM, LSTM_DIM
    d_h_var_edges = d_phi_in[:, nv:nv + nd]
    d_z_edges = d_phi_in[:, nv + nd:nv + nd + nl]
    ofs = nv + nd + nl
    d_h_sub_edges = d_phi_in[:, ofs + FEAT_SUB:ofs + FEAT_SUB + nd]

    d_h_var = np.zeros((bank.num_vars, nd))
    np.add.at(d_h_var, bank.edge_var, d_h_var_edges)
    d_z = np.zeros((bank.num_vars, nl))
    np.add.at(d_z, bank.edge_var, d_z_edges)
    d_h_sub = np.zeros((bank.num_subs, nd))
    np.add.at(d_h_sub, bank.edge_sub, d_h_sub_edges)

    if cache["arch"] == ARCH_LSTM:
        if d_s is None:
            d_s = (np.zeros((bank.num_vars, nl)), np.zeros((bank.num_vars, nl)))
        d_x, d_s_in = _lstm_backward(d_z, d_s, cache["l"], W, grads)
        d_h_var = d_h_var + d_x
    else:
        d_h_var = d_h_var + d_z
        d_s_in = d_s

    _, d_src2, _ = mp_backward(d_h_var, cache["i"], W, "mpi_", grads)
    d_h_sub = d_h_sub + d_src2[:, FEAT_SUB:]
    mp_backward(d_h_sub, cache["j"], W, "mpj_", grads)
    return grads, d_s_in
