"""Grouped-query attention, sigmoid output gating, and the encoder stack.

One encoder layer projects its input to Q/K/V, applies rotary encoding,
runs the long-term (block selection) and short-term (power mask) pathways
over the same Q/K/V, fuses the two outputs through a learnable per-entry
sigmoid gate, and finishes with the usual post-norm residual + feed-forward
sandwich. A stack of layers ends with one affine output projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import AttentionConfig
from .embedding import RoPECache, apply_rope
from .errors import ConfigError
from . import ltis as ltis_mod
from .tensor import (
    Tensor,
    affine,
    concat,
    dropout,
    layer_norm,
    masked_softmax,
    matmul,
    parameter,
    reshape,
    sigmoid,
    tanh,
    transpose,
)

__all__ = [
    "BlossomLayerParams",
    "SeqContext",
    "grouped_attention",
    "gqa",
    "gated_fuse",
    "encoder_layer",
    "encode",
    "dense_causal_gqa",
    "split_heads",
]


def split_heads(x: Tensor, num: int) -> Tensor:
    """(B, L, num*d) -> (B, num, L, d)."""
    b, length, total = x.shape
    if total % num != 0:
        raise ConfigError(f"cannot split width {total} into {num} heads")
    return transpose(reshape(x, (b, length, num, total // num)), (0, 2, 1, 3))


def _ensure_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), False
    if x.ndim == 4:
        return x, True
    raise ValueError(f"expected 3-D or 4-D attention input, got shape {x.shape}")


def grouped_attention(q: Tensor, k: Tensor, v: Tensor, cfg: AttentionConfig,
                      mask: np.ndarray | None = None, w_o: Tensor | None = None) -> Tensor:
    """Scaled dot-product attention with K/V shared across head groups.

    q: (B, heads, L, d_head); k, v: (B, kv_groups, Lk, d_head) (the leading
    batch axis may be omitted). ``mask`` is a boolean array broadcastable to
    (B, kv_groups, heads_per_group, L, Lk); queries with nothing visible
    yield zero rows. Heads are concatenated and, when ``w_o`` is given,
    projected back to model width.
    """
    q, batched = _ensure_batched(q)
    k, _ = _ensure_batched(k)
    v, _ = _ensure_batched(v)
    b, h, length, dk = q.shape
    g = k.shape[1]
    if h != cfg.heads or g != cfg.kv_groups:
        raise ConfigError(f"got {h} heads / {g} groups, config says {cfg.heads}/{cfg.kv_groups}")
    hpg = cfg.heads_per_group
    lk = k.shape[2]

    q5 = reshape(q, (b, g, hpg, length, dk))
    k5 = reshape(k, (b, g, 1, lk, dk))
    v5 = reshape(v, (b, g, 1, lk, dk))
    logits = matmul(q5, transpose(k5, (0, 1, 2, 4, 3))) * (1.0 / np.sqrt(dk))
    weights = masked_softmax(logits, mask, axis=-1)
    ctxv = matmul(weights, v5)  # (b, g, hpg, L, dk)
    merged = reshape(transpose(reshape(ctxv, (b, h, length, dk)), (0, 2, 1, 3)), (b, length, h * dk))
    out = merged if w_o is None else matmul(merged, w_o)
    return out if batched else reshape(out, out.shape[1:])


def gqa(q: Tensor, k: Tensor, v: Tensor, cfg: AttentionConfig,
        mask: np.ndarray | None = None, w_o: Tensor | None = None) -> Tensor:
    """Grouped-query attention: head i reads the K/V of group
    i // (heads / kv_groups); heads are concatenated then output-projected."""
    return grouped_attention(q, k, v, cfg, mask=mask, w_o=w_o)


def gated_fuse(o_ltis: Tensor, o_stis: Tensor, gate_w: Tensor, gate_b: Tensor) -> tuple[Tensor, Tensor]:
    """Sigmoid-gated convex combination of the two pathway outputs.

    alpha = sigmoid(affine([o_ltis; o_stis])), elementwise output
    alpha * o_ltis + (1 - alpha) * o_stis. Returns (fused, alpha).
    """
    if o_ltis.shape != o_stis.shape:
        raise ValueError(f"pathway outputs disagree: {o_ltis.shape} vs {o_stis.shape}")
    alpha = sigmoid(affine(concat([o_ltis, o_stis], axis=o_ltis.ndim - 1), gate_w, gate_b))
    fused = alpha * o_ltis + (1.0 - alpha) * o_stis
    return fused, alpha


@dataclass
class BlossomLayerParams:
    """Learnable tensors of one encoder layer."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    gate_w: Tensor
    gate_b: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    cmp_key: ltis_mod.CompressionMLP
    cmp_val: ltis_mod.CompressionMLP

    @classmethod
    def init(cls, cfg: AttentionConfig, rng: np.random.Generator) -> "BlossomLayerParams":
        d, dk = cfg.d_model, cfg.d_head
        return cls(
            w_q=parameter((d, cfg.heads * dk), rng),
            w_k=parameter((d, cfg.kv_groups * dk), rng),
            w_v=parameter((d, cfg.kv_groups * dk), rng),
            w_o=parameter((cfg.heads * dk, d), rng),
            gate_w=parameter((2 * d, d), rng),
            gate_b=Tensor(np.zeros(d), requires_grad=True),
            ffn_w1=parameter((d, 4 * d), rng),
            ffn_b1=Tensor(np.zeros(4 * d), requires_grad=True),
            ffn_w2=parameter((4 * d, d), rng),
            ffn_b2=Tensor(np.zeros(d), requires_grad=True),
            ln1_gamma=Tensor(np.ones(d), requires_grad=True),
            ln1_beta=Tensor(np.zeros(d), requires_grad=True),
            ln2_gamma=Tensor(np.ones(d), requires_grad=True),
            ln2_beta=Tensor(np.zeros(d), requires_grad=True),
            cmp_key=ltis_mod.CompressionMLP(cfg.block_size, dk, rng),
            cmp_val=ltis_mod.CompressionMLP(cfg.block_size, dk, rng),
        )

    def parameters(self) -> dict[str, Tensor]:
        named = {
            "w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "w_o": self.w_o,
            "gate_w": self.gate_w, "gate_b": self.gate_b,
            "ffn_w1": self.ffn_w1, "ffn_b1": self.ffn_b1,
            "ffn_w2": self.ffn_w2, "ffn_b2": self.ffn_b2,
            "ln1_gamma": self.ln1_gamma, "ln1_beta": self.ln1_beta,
            "ln2_gamma": self.ln2_gamma, "ln2_beta": self.ln2_beta,
        }
        for prefix, mlp in (("cmp_key", self.cmp_key), ("cmp_val", self.cmp_val)):
            for name, p in mlp.parameters().items():
                named[f"{prefix}.{name}"] = p
        return named


@dataclass
class SeqContext:
    """Per-batch geometry shared by every layer: real lengths inside the
    left-padded frame and the 0-indexed real position of each slot."""

    lengths: np.ndarray       # (B,)
    positions: np.ndarray     # (B, L), 0 for padding slots
    total_len: int

    @classmethod
    def from_lengths(cls, lengths: np.ndarray, total_len: int) -> "SeqContext":
        lengths = np.asarray(lengths, dtype=np.int64)
        idx = np.arange(total_len, dtype=np.int64)[None, :]
        pad = (total_len - lengths)[:, None]
        positions = np.maximum(idx - pad, 0)
        return cls(lengths=lengths, positions=positions, total_len=total_len)


def encoder_layer(h_prev: Tensor, params: BlossomLayerParams, cfg: AttentionConfig,
                  ctx: SeqContext, stis_mask: np.ndarray, rope: RoPECache,
                  dropout_rate: float = 0.0, training: bool = False,
                  rng: np.random.Generator | None = None, pathway: str = "both") -> Tensor:
    """One post-norm encoder layer with gated dual-pathway attention.

    ``stis_mask`` is the batched power mask, bool (B, 1, 1, L, L). Dropout
    is identity unless ``training`` is set.
    """
    q = split_heads(matmul(h_prev, params.w_q), cfg.heads)
    k = split_heads(matmul(h_prev, params.w_k), cfg.kv_groups)
    v = split_heads(matmul(h_prev, params.w_v), cfg.kv_groups)
    q = apply_rope(q, ctx.positions, rope)
    k = apply_rope(k, ctx.positions, rope)

    need_ltis = pathway in ("both", "ltis")
    need_stis = pathway in ("both", "stis")
    o_ltis = o_stis = None
    if need_ltis:
        ltis_mask = ltis_mod.build_ltis_masks(q.data, k.data, ctx.lengths, cfg, params.cmp_key)
        o_ltis = grouped_attention(q, k, v, cfg, ltis_mask, w_o=params.w_o)
    if need_stis:
        o_stis = grouped_attention(q, k, v, cfg, stis_mask, w_o=params.w_o)

    if pathway == "both":
        fused, _ = gated_fuse(o_ltis, o_stis, params.gate_w, params.gate_b)
    else:
        fused = o_ltis if pathway == "ltis" else o_stis

    mixed = layer_norm(h_prev + dropout(fused, dropout_rate, rng, training),
                       params.ln1_gamma, params.ln1_beta)
    ff = affine(tanh(affine(mixed, params.ffn_w1, params.ffn_b1)), params.ffn_w2, params.ffn_b2)
    return layer_norm(mixed + dropout(ff, dropout_rate, rng, training),
                      params.ln2_gamma, params.ln2_beta)


def encode(embedded: Tensor, layers: list[BlossomLayerParams], w_n: Tensor, b_n: Tensor,
           cfg: AttentionConfig, ctx: SeqContext, stis_mask: np.ndarray, rope: RoPECache,
           dropout_rate: float = 0.0, training: bool = False,
           rng: np.random.Generator | None = None, pathway: str = "both") -> Tensor:
    """Run the layer stack and the final affine projection, (B, L, d) -> (B, L, d)."""
    if not layers:
        raise ConfigError("encode needs at least one layer")
    hidden = embedded
    for params in layers:
        hidden = encoder_layer(hidden, params, cfg, ctx, stis_mask, rope,
                               dropout_rate=dropout_rate, training=training,
                               rng=rng, pathway=pathway)
    return affine(hidden, w_n, b_n)


def dense_causal_gqa(q: np.ndarray, k: np.ndarray, v: np.ndarray, cfg: AttentionConfig,
                     w_o: np.ndarray | None = None) -> np.ndarray:
    """Reference oracle: dense causal grouped attention, head by head.

    Deliberately naive (python loops, explicit per-row softmax) and
    tape-free, so the sparse pathways can be validated against it.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    h, length, dk = q.shape
    out = np.zeros((length, h * dk))
    for head in range(h):
        group = cfg.group_of_head(head)
        for i in range(length):
            logits = k[group, : i + 1] @ q[head, i] / np.sqrt(dk)
            weights = np.exp(logits - logits.max())
            weights /= weights.sum()
            out[i, head * dk: (head + 1) * dk] = weights @ v[group, : i + 1]
    return out if w_o is None else out @ np.asarray(w_o)
