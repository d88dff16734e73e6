"""Attention fusion of patch, explanation, description and instruction embeddings.

The fusion block runs shared multi-head self-attention over each text
modality, single-head cross-attention from the patch onto the updated
explanation, a feed-forward layer per branch, then mean-pools and
concatenates the three branches into one fixed-length vector. Forward
functions return caches consumed by exact reverse-mode backward functions;
no autograd framework is involved.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import arrayio
from .types import EmbeddingMatrix, FusedEmbedding, HyperParams, Modality

PT_CHECKPOINT_MAGIC = "secpatch-ptformer"


@dataclass
class AttentionParams:
    """Per-head projection matrices, each of shape (dim, dim // heads)."""

    w_q: np.ndarray  # (heads, dim, head_dim)
    w_k: np.ndarray
    w_v: np.ndarray

    @property
    def num_heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def dim(self) -> int:
        return self.w_q.shape[1]


@dataclass
class CrossAttentionParams:
    w_q: np.ndarray  # (dim, dim)
    w_k: np.ndarray
    w_v: np.ndarray


@dataclass
class FeedForwardParams:
    w1: np.ndarray  # (dim, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, dim)
    b2: np.ndarray  # (dim,)


@dataclass
class PTFormerState:
    self_attn: AttentionParams        # shared across the three text modalities
    cross_attn: CrossAttentionParams
    ff_pa_ex: FeedForwardParams
    ff_desc: FeedForwardParams
    ff_inst: FeedForwardParams
    dropout_rate: float

    @property
    def dim(self) -> int:
        return self.self_attn.dim


def init_pt_former(hp: HyperParams, rng_seed: int, ff_hidden: int | None = None) -> PTFormerState:
    """Initialize all trainable parameters, deterministically per seed.

    Attention matrices are drawn i.i.d. standard normal. Feed-forward weights
    use He-style scaling (std sqrt(2 / fan_in)) with zero biases; the hidden
    width defaults to dim.
    """
    rng = np.random.default_rng(rng_seed)
    dim = hp.dim
    head_dim = dim // hp.num_heads
    hidden = ff_hidden if ff_hidden is not None else dim

    self_attn = AttentionParams(
        w_q=rng.standard_normal((hp.num_heads, dim, head_dim)),
        w_k=rng.standard_normal((hp.num_heads, dim, head_dim)),
        w_v=rng.standard_normal((hp.num_heads, dim, head_dim)),
    )
    cross_attn = CrossAttentionParams(
        w_q=rng.standard_normal((dim, dim)),
        w_k=rng.standard_normal((dim, dim)),
        w_v=rng.standard_normal((dim, dim)),
    )

    def feed_forward():
        return FeedForwardParams(
            w1=rng.standard_normal((dim, hidden)) * math.sqrt(2.0 / dim),
            b1=np.zeros(hidden),
            w2=rng.standard_normal((hidden, dim)) * math.sqrt(2.0 / hidden),
            b2=np.zeros(dim),
        )

    return PTFormerState(
        self_attn=self_attn,
        cross_attn=cross_attn,
        ff_pa_ex=feed_forward(),
        ff_desc=feed_forward(),
        ff_inst=feed_forward(),
        dropout_rate=hp.dropout,
    )


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = scores - scores.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# self-attention

def _sa_forward(values: np.ndarray, params: AttentionParams):
    dim = params.dim
    q = np.einsum("nd,hdk->hnk", values, params.w_q)
    k = np.einsum("nd,hdk->hnk", values, params.w_k)
    v = np.einsum("nd,hdk->hnk", values, params.w_v)
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(dim)
    attn = softmax(scores, axis=-1)                      # (heads, n, n)
    heads_out = attn @ v                                 # (heads, n, head_dim)
    n = values.shape[0]
    out = heads_out.transpose(1, 0, 2).reshape(n, dim)   # concat heads -> width dim
    cache = (values, q, k, v, attn)
    return out, cache


def _sa_backward(d_out: np.ndarray, cache, params: AttentionParams):
    values, q, k, v, attn = cache
    n, dim = values.shape
    heads, _, head_dim = q.shape
    d_heads = d_out.reshape(n, heads, head_dim).transpose(1, 0, 2)

    d_v = attn.transpose(0, 2, 1) @ d_heads
    d_attn = d_heads @ v.transpose(0, 2, 1)
    d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
    d_scores /= math.sqrt(dim)
    d_q = d_scores @ k
    d_k = d_scores.transpose(0, 2, 1) @ q

    grads = {
        "w_q": np.einsum("nd,hnk->hdk", values, d_q),
        "w_k": np.einsum("nd,hnk->hdk", values, d_k),
        "w_v": np.einsum("nd,hnk->hdk", values, d_v),
    }
    d_values = (
        np.einsum("hnk,hdk->nd", d_q, params.w_q)
        + np.einsum("hnk,hdk->nd", d_k, params.w_k)
        + np.einsum("hnk,hdk->nd", d_v, params.w_v)
    )
    return d_values, grads


def self_attention(E: EmbeddingMatrix, params: AttentionParams, return_weights: bool = False):
    """Multi-head scaled dot-product self-attention; output shape equals input shape."""
    out, cache = _sa_forward(E.values, params)
    result = EmbeddingMatrix(out, E.modality)
    if return_weights:
        return result, cache[4]
    return result


# ---------------------------------------------------------------------------
# cross-attention (single head): queries from the patch, keys/values from the explanation

def _ca_forward(patch_values: np.ndarray, ex_values: np.ndarray, params: CrossAttentionParams):
    dim = patch_values.shape[1]
    q = patch_values @ params.w_q
    k = ex_values @ params.w_k
    v = ex_values @ params.w_v
    scores = q @ k.T / math.sqrt(dim)
    attn = softmax(scores, axis=-1)      # (patch_len, ex_len)
    out = attn @ v
    cache = (patch_values, ex_values, q, k, v, attn)
    return out, cache


def _ca_backward(d_out: np.ndarray, cache, params: CrossAttentionParams):
    patch_values, ex_values, q, k, v, attn = cache
    dim = patch_values.shape[1]

    d_v = attn.T @ d_out
    d_attn = d_out @ v.T
    d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
    d_scores /= math.sqrt(dim)
    d_q = d_scores @ k
    d_k = d_scores.T @ q

    grads = {
        "w_q": patch_values.T @ d_q,
        "w_k": ex_values.T @ d_k,
        "w_v": ex_values.T @ d_v,
    }
    d_patch = d_q @ params.w_q.T
    d_ex = d_k @ params.w_k.T + d_v @ params.w_v.T
    return d_patch, d_ex, grads


def cross_attention(E_pa: EmbeddingMatrix, E_ex: EmbeddingMatrix,
                    params: CrossAttentionParams, return_weights: bool = False):
    """Attend from patch rows onto explanation rows; output shape (patch_seq_len, dim)."""
    if E_pa.dim != E_ex.dim:
        raise ValueError(f"dim mismatch: patch {E_pa.dim} vs explanation {E_ex.dim}")
    out, cache = _ca_forward(E_pa.values, E_ex.values, params)
    result = EmbeddingMatrix(out, Modality.PATCH)
    if return_weights:
        return result, cache[5]
    return result


# ---------------------------------------------------------------------------
# feed-forward: two dense layers with a rectifier, dropout on the hidden units

def _ff_forward(x: np.ndarray, params: FeedForwardParams, dropout_rate: float, rng):
    z = x @ params.w1 + params.b1
    h = np.maximum(z, 0.0)
    mask = None
    if dropout_rate > 0.0:
        if rng is None:
            raise ValueError("dropout requires an rng during training")
        mask = (rng.random(h.shape) >= dropout_rate) / (1.0 - dropout_rate)
        h = h * mask
    y = h @ params.w2 + params.b2
    cache = (x, z, mask, h)
    return y, cache


def _ff_backward(d_y: np.ndarray, cache, params: FeedForwardParams):
    x, z, mask, h = cache
    grads = {
        "w2": h.T @ d_y,
        "b2": d_y.sum(axis=0),
    }
    d_h = d_y @ params.w2.T
    if mask is not None:
        d_h = d_h * mask
    d_z = d_h * (z > 0.0)
    grads["w1"] = x.T @ d_z
    grads["b1"] = d_z.sum(axis=0)
    d_x = d_z @ params.w1.T
    return d_x, grads


# ---------------------------------------------------------------------------
# full fusion pipeline

def fuse_forward(pa: np.ndarray, ex: np.ndarray, desc: np.ndarray, inst: np.ndarray,
                 state: PTFormerState, training: bool = False, rng=None):
    """Raw-array fusion; returns (vector of length 3*dim, cache for the backward pass)."""
    rate = state.dropout_rate if training else 0.0
    ex_hat, c_sa_ex = _sa_forward(ex, state.self_attn)
    desc_hat, c_sa_desc = _sa_forward(desc, state.self_attn)
    inst_hat, c_sa_inst = _sa_forward(inst, state.self_attn)
    pa_ex, c_ca = _ca_forward(pa, ex_hat, state.cross_attn)
    f_pa_ex, c_ff1 = _ff_forward(pa_ex, state.ff_pa_ex, rate, rng)
    f_desc, c_ff2 = _ff_forward(desc_hat, state.ff_desc, rate, rng)
    f_inst, c_ff3 = _ff_forward(inst_hat, state.ff_inst, rate, rng)
    vector = np.concatenate([f_pa_ex.mean(axis=0), f_desc.mean(axis=0), f_inst.mean(axis=0)])
    cache = {
        "sa_ex": c_sa_ex, "sa_desc": c_sa_desc, "sa_inst": c_sa_inst,
        "ca": c_ca, "ff1": c_ff1, "ff2": c_ff2, "ff3": c_ff3,
        "rows": (f_pa_ex.shape[0], f_desc.shape[0], f_inst.shape[0]),
    }
    return vector, cache


def _unpool(d_vec: np.ndarray, rows: int) -> np.ndarray:
    return np.broadcast_to(d_vec / rows, (rows, d_vec.shape[0])).copy()


def fuse_backward(d_vector: np.ndarray, cache, state: PTFormerState) -> dict[str, np.ndarray]:
    """Gradients of every fusion parameter given the gradient on the fused vector."""
    dim = state.dim
    d1, d2, d3 = d_vector[:dim], d_vector[dim:2 * dim], d_vector[2 * dim:]
    n1, n2, n3 = cache["rows"]

    d_pa_ex, g_ff1 = _ff_backward(_unpool(d1, n1), cache["ff1"], state.ff_pa_ex)
    d_desc_hat, g_ff2 = _ff_backward(_unpool(d2, n2), cache["ff2"], state.ff_desc)
    d_inst_hat, g_ff3 = _ff_backward(_unpool(d3, n3), cache["ff3"], state.ff_inst)

    _, d_ex_hat, g_ca = _ca_backward(d_pa_ex, cache["ca"], state.cross_attn)

    _, g_sa_ex = _sa_backward(d_ex_hat, cache["sa_ex"], state.self_attn)
    _, g_sa_desc = _sa_backward(d_desc_hat, cache["sa_desc"], state.self_attn)
    _, g_sa_inst = _sa_backward(d_inst_hat, cache["sa_inst"], state.self_attn)

    grads = {}
    for key in ("w_q", "w_k", "w_v"):
        grads[f"self_attn.{key}"] = g_sa_ex[key] + g_sa_desc[key] + g_sa_inst[key]
        grads[f"cross_attn.{key}"] = g_ca[key]
    for branch, g in (("ff_pa_ex", g_ff1), ("ff_desc", g_ff2), ("ff_inst", g_ff3)):
        for key in ("w1", "b1", "w2", "b2"):
            grads[f"{branch}.{key}"] = g[key]
    return grads


def fuse(E_pa: EmbeddingMatrix, E_ex: EmbeddingMatrix, E_desc: EmbeddingMatrix,
         E_inst: EmbeddingMatrix, state: PTFormerState, training: bool = False,
         rng=None, sample_id: str = "") -> FusedEmbedding:
    """Fuse the four modality matrices into one vector of length 3*dim."""
    mats = (E_pa, E_ex, E_desc, E_inst)
    if len({m.dim for m in mats}) != 1:
        raise ValueError(f"all inputs must share dim, got {[m.dim for m in mats]}")
    if mats[0].dim != state.dim:
        raise ValueError(f"input dim {mats[0].dim} does not match parameters dim {state.dim}")
    vector, _ = fuse_forward(E_pa.values, E_ex.values, E_desc.values, E_inst.values,
                             state, training=training, rng=rng)
    return FusedEmbedding(vector, sample_id)


def pooled_concat(E_pa: EmbeddingMatrix, E_ex: EmbeddingMatrix, E_desc: EmbeddingMatrix,
                  E_inst: EmbeddingMatrix, sample_id: str = "") -> FusedEmbedding:
    """Attention-free fallback fusion: plain pooled concatenation, still 3*dim long.

    The first branch pools the stacked patch and explanation rows jointly so
    the output keeps the same three-part layout as the attention pipeline.
    """
    branch1 = np.vstack([E_pa.values, E_ex.values]).mean(axis=0)
    vector = np.concatenate([branch1, E_desc.values.mean(axis=0), E_inst.values.mean(axis=0)])
    return FusedEmbedding(vector, sample_id)


def pt_former_gradients(batch, state: PTFormerState, upstream, training: bool = False,
                        rng=None) -> dict[str, np.ndarray]:
    """Accumulated parameter gradients over a batch.

    `batch` is a sequence of (E_pa, E_ex, E_desc, E_inst) tuples (EmbeddingMatrix
    or raw arrays); `upstream` supplies one gradient vector of length 3*dim per
    sample.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim == 1:
        upstream = upstream[None, :]
    if len(batch) != upstream.shape[0]:
        raise ValueError(f"batch has {len(batch)} samples but upstream has {upstream.shape[0]} rows")

    total: dict[str, np.ndarray] = {}
    for mats, d_vec in zip(batch, upstream):
        raw = [m.values if isinstance(m, EmbeddingMatrix) else np.asarray(m, dtype=np.float64)
               for m in mats]
        _, cache = fuse_forward(*raw, state, training=training, rng=rng)
        grads = fuse_backward(d_vec, cache, state)
        for name, grad in grads.items():
            if name in total:
                total[name] += grad
            else:
                total[name] = grad
    return total


# ---------------------------------------------------------------------------
# parameter access and checkpointing

def named_parameters(state: PTFormerState) -> dict[str, np.ndarray]:
    """Live references to every trainable array, in a fixed deterministic order."""
    params = {}
    for key in ("w_q", "w_k", "w_v"):
        params[f"self_attn.{key}"] = getattr(state.self_attn, key)
        params[f"cross_attn.{key}"] = getattr(state.cross_attn, key)
    for branch in ("ff_pa_ex", "ff_desc", "ff_inst"):
        block = getattr(state, branch)
        for key in ("w1", "b1", "w2", "b2"):
            params[f"{branch}.{key}"] = getattr(block, key)
    return params


def save_pt_former(path, state: PTFormerState) -> None:
    arrayio.save_arrays(path, named_parameters(state),
                        meta={"format": PT_CHECKPOINT_MAGIC, "dropout_rate": state.dropout_rate})


def load_pt_former(path) -> PTFormerState:
    arrays, meta = load_pt_former_raw(path)
    return _state_from_arrays(arrays, float(meta["dropout_rate"]))


def load_pt_former_raw(path):
    arrays, meta = arrayio.load_arrays(path)
    if meta.get("format") != PT_CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a fusion parameter checkpoint")
    return arrays, meta


def _state_from_arrays(arrays: dict, dropout_rate: float) -> PTFormerState:
    return PTFormerState(
        self_attn=AttentionParams(
            w_q=arrays["self_attn.w_q"], w_k=arrays["self_attn.w_k"], w_v=arrays["self_attn.w_v"]),
        cross_attn=CrossAttentionParams(
            w_q=arrays["cross_attn.w_q"], w_k=arrays["cross_attn.w_k"], w_v=arrays["cross_attn.w_v"]),
        ff_pa_ex=_ff_from_arrays(arrays, "ff_pa_ex"),
        ff_desc=_ff_from_arrays(arrays, "ff_desc"),
        ff_inst=_ff_from_arrays(arrays, "ff_inst"),
        dropout_rate=dropout_rate,
    )


def _ff_from_arrays(arrays: dict, branch: str) -> FeedForwardParams:
    return FeedForwardParams(
        w1=arrays[f"{branch}.w1"], b1=arrays[f"{branch}.b1"],
        w2=arrays[f"{branch}.w2"], b2=arrays[f"{branch}.b2"],
    )
