"""Long-term interest pathway: compress key blocks, score them against each
query, and gather only the top-k selection blocks into attention.

Pipeline per sequence and KV group:

  1. split keys into overlapping compression blocks (size block_size,
     stride ``stride``);
  2. compress each block to one vector with a learnable MLP;
  3. softmax importance of each compressed block per query position
     (only blocks lying entirely at or before the query are scored);
  4. remap compression-block scores onto selection-block scores by summing
     the scores of overlapping compression blocks;
  5. sum the per-head selection scores within each KV group so all heads of
     a group share one ranking;
  6. take the top-k causally started selection blocks per query (ties go to
     the lower block index; fewer than k valid blocks means take them all);
  7. attend over the gathered block positions (causal inside the gathered
     set).

Selection is discrete, so gradients reach the compression MLPs only
through step 2's own output, never through the top-k choice.
"""

from __future__ import annotations

import numpy as np

from .config import AttentionConfig
from .tensor import Tensor, concat, masked_softmax, matmul, no_grad, parameter, reshape, tanh

__all__ = [
    "CompressionMLP",
    "CompressedKV",
    "BlockScores",
    "split_blocks",
    "compress_block",
    "compress_sequence",
    "compress_kv",
    "importance_scores",
    "score_blocks",
    "remap_matrix",
    "remap_scores",
    "aggregate_group_scores",
    "select_topk",
    "selection_to_visibility",
    "ltis_attention",
    "build_ltis_masks",
]


class CompressionMLP:
    """Maps an entire (block_size x d_head) block to a single d_head vector.

    A learned intra-block position bias is added before flattening, so the
    compression is sensitive to the order of rows within a block, then a
    single tanh hidden layer of width d_head produces the compressed key.
    """

    def __init__(self, block_size: int, d_head: int, rng: np.random.Generator):
        self.block_size = block_size
        self.d_head = d_head
        self.pos_bias = parameter((block_size, d_head), rng, scale=0.02)
        self.w1 = parameter((block_size * d_head, d_head), rng)
        self.b1 = Tensor(np.zeros(d_head), requires_grad=True)
        self.w2 = parameter((d_head, d_head), rng)
        self.b2 = Tensor(np.zeros(d_head), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {"pos_bias": self.pos_bias, "w1": self.w1, "b1": self.b1,
                "w2": self.w2, "b2": self.b2}

    def apply_stack(self, blocks: Tensor) -> Tensor:
        """Compress a stack of blocks, (M, block_size, d_head) -> (M, d_head)."""
        m = blocks.shape[0]
        biased = blocks + reshape(self.pos_bias, (1, self.block_size, self.d_head))
        flat = reshape(biased, (m, self.block_size * self.d_head))
        hidden = tanh(matmul(flat, self.w1) + self.b1)
        return matmul(hidden, self.w2) + self.b2


class CompressedKV:
    """Compressed keys and values of one sequence, both (M, d_head).

    M follows the block-count law floor((L - block_size) / stride) + 1;
    sequences shorter than one block compress to M = 1.
    """

    def __init__(self, keys: Tensor, values: Tensor):
        if keys.shape != values.shape:
            raise ValueError(f"compressed keys/values disagree: {keys.shape} vs {values.shape}")
        self.keys = keys
        self.values = values

    @property
    def num_blocks(self) -> int:
        return self.keys.shape[0]


def compress_kv(keys: Tensor, values: Tensor, phi_key: "CompressionMLP",
                phi_val: "CompressionMLP", cfg: AttentionConfig) -> CompressedKV:
    """Compress a sequence's keys and values with their separate MLPs."""
    return CompressedKV(compress_sequence(keys, phi_key, cfg),
                        compress_sequence(values, phi_val, cfg))


def split_blocks(keys: Tensor, cfg: AttentionConfig) -> list[Tensor]:
    """Cut (L, d_head) keys into overlapping (block_size, d_head) blocks.

    Block i covers positions [i*stride, i*stride + block_size); consecutive
    blocks overlap by block_size - stride positions. Sequences shorter than
    one block are left-padded with zeros into a single block.
    """
    length = keys.shape[0]
    if length < cfg.block_size:
        pad = Tensor(np.zeros((cfg.block_size - length, keys.shape[1])))
        return [concat([pad, keys], axis=0)]
    count = cfg.num_cmp_blocks(length)
    return [keys[i * cfg.stride: i * cfg.stride + cfg.block_size] for i in range(count)]


def compress_block(block: Tensor, phi: CompressionMLP) -> Tensor:
    """Compress one (block_size, d_head) block to a (d_head,) vector."""
    if block.shape != (phi.block_size, phi.d_head):
        raise ValueError(f"block shape {block.shape} does not match MLP ({phi.block_size}, {phi.d_head})")
    return reshape(phi.apply_stack(reshape(block, (1,) + block.shape)), (phi.d_head,))


def compress_sequence(keys: Tensor, phi: CompressionMLP, cfg: AttentionConfig) -> Tensor:
    """All compression blocks of an (L, d_head) sequence, stacked (M, d_head)."""
    blocks = split_blocks(keys, cfg)
    stacked = concat([reshape(b, (1,) + b.shape) for b in blocks], axis=0)
    return phi.apply_stack(stacked)


def _cmp_block_valid(length: int, num_blocks: int, cfg: AttentionConfig) -> np.ndarray:
    """(L, M) bool: compression block m lies entirely at or before query t."""
    t = np.arange(length)[:, None]
    if length < cfg.block_size:
        # single padded block covering the whole sequence
        last = np.full((1,), length - 1)
    else:
        last = np.arange(num_blocks) * cfg.stride + cfg.block_size - 1
    return last[None, :] <= t


def importance_scores(q: Tensor, cmp_keys: Tensor, cfg: AttentionConfig,
                      seq_len: int | None = None) -> Tensor:
    """Softmax attention of each query over the compressed keys.

    q: (..., L, d_head), cmp_keys: (M, d_head). Scores are scaled by
    1/sqrt(d_head) and normalized over the causally valid blocks only;
    invalid blocks (and rows with no valid block) score exactly zero.
    """
    length = q.shape[-2]
    m = cmp_keys.shape[0]
    valid = _cmp_block_valid(seq_len if seq_len is not None else length, m, cfg)[-length:]
    logits = matmul(q, reshape(cmp_keys, (m, cfg.d_head)).transpose((1, 0))) * (1.0 / np.sqrt(cfg.d_head))
    return masked_softmax(logits, valid, axis=-1)


class BlockScores:
    """Per-query importance over compression blocks and, remapped, over
    selection blocks.

    cmp_scores rows are softmax-normalized over the causally valid blocks
    (all-zero when none is valid); sel_scores entries are nonnegative sums
    of cmp_scores entries.
    """

    def __init__(self, cmp_scores: Tensor, sel_scores: Tensor):
        self.cmp_scores = cmp_scores
        self.sel_scores = sel_scores


def score_blocks(q: Tensor, cmp_keys: Tensor, cfg: AttentionConfig,
                 seq_len: int | None = None, num_sel: int | None = None) -> BlockScores:
    """Importance scoring plus selection-block remapping in one step."""
    cmp_scores = importance_scores(q, cmp_keys, cfg, seq_len=seq_len)
    return BlockScores(cmp_scores, remap_scores(cmp_scores, cfg, num_sel=num_sel))


def remap_matrix(num_cmp: int, num_sel: int, cfg: AttentionConfig) -> np.ndarray:
    """(M, N_sel) linear map from compression-block scores to selection-block
    scores.

    Entry (i, j) counts how many (m, n) offset pairs with
    m < sel_block_size/stride and n < block_size/stride satisfy
    (sel_block_size/stride) * j - m - n == i, i.e. how often compression
    block i overlaps selection block j in the offset sum.
    """
    a = cfg.sel_block_size // cfg.stride
    b = cfg.block_size // cfg.stride
    mat = np.zeros((num_cmp, num_sel))
    for j in range(num_sel):
        for m in range(a):
            for n in range(b):
                i = a * j - m - n
                if 0 <= i < num_cmp:
                    mat[i, j] += 1.0
    return mat


def remap_scores(cmp_scores: Tensor, cfg: AttentionConfig, num_sel: int | None = None) -> Tensor:
    """Convert (..., M) compression-block scores to (..., N_sel) selection-block
    scores; out-of-range compression indices contribute zero."""
    m = cmp_scores.shape[-1]
    if num_sel is None:
        # enough selection blocks to cover every compression block
        span = (m - 1) * cfg.stride + cfg.block_size
        num_sel = cfg.num_sel_blocks(span)
    return matmul(cmp_scores, Tensor(remap_matrix(m, num_sel, cfg)))


def aggregate_group_scores(sel_scores: Tensor, cfg: AttentionConfig) -> Tensor:
    """Sum per-head scores within each KV group.

    sel_scores: (heads, L, N) -> (kv_groups, L, N). Head i belongs to group
    i // (heads / kv_groups).
    """
    h, length, n = sel_scores.shape
    if h != cfg.heads:
        raise ValueError(f"expected {cfg.heads} head score planes, got {h}")
    grouped = reshape(sel_scores, (cfg.kv_groups, cfg.heads_per_group, length, n))
    return grouped.sum(axis=1)


def select_topk(shared_scores, cfg: AttentionConfig, seq_len: int | None = None) -> np.ndarray:
    """Boolean (L, N_sel) selection of the top-k blocks per query.

    A block is a candidate once it has started (first position <= query).
    Ties break toward the lower block index; when fewer than top_k blocks
    are valid, all of them are selected. Selection is discrete, so the
    input may be a Tensor or a plain array; only values are used.
    """
    scores = shared_scores.data if isinstance(shared_scores, Tensor) else np.asarray(shared_scores)
    length, num_sel = scores.shape
    if seq_len is None:
        seq_len = length
    t = np.arange(seq_len)[-length:, None]
    valid = (np.arange(num_sel)[None, :] * cfg.sel_block_size) <= t
    ranked = np.where(valid, scores, -np.inf)
    # stable argsort of descending scores == ties resolved to lower index
    order = np.argsort(-ranked, axis=1, kind="stable")
    n_valid = valid.sum(axis=1)
    take = np.minimum(cfg.top_k, n_valid)
    chosen = np.zeros_like(valid)
    cols = order[:, : cfg.top_k]
    keep = np.arange(min(cfg.top_k, num_sel))[None, :] < take[:, None]
    rows = np.broadcast_to(np.arange(length)[:, None], cols.shape)
    chosen[rows[keep], cols[keep]] = True
    return chosen


def selection_to_visibility(selected: np.ndarray, length: int, cfg: AttentionConfig) -> np.ndarray:
    """Expand (L, N_sel) block choices into a causal (L, L) position mask."""
    per_pos = np.repeat(selected, cfg.sel_block_size, axis=1)[:, :length]
    causal = np.tril(np.ones((length, length), dtype=bool))
    return per_pos & causal


def ltis_attention(q: Tensor, k: Tensor, v: Tensor, selected: np.ndarray,
                   cfg: AttentionConfig, w_o: Tensor | None = None) -> Tensor:
    """Attention restricted to each query's gathered selection blocks.

    q: (heads, L, d_head) or (B, heads, L, d_head); k/v analogous with
    kv_groups planes. ``selected``: bool (kv_groups, L, N_sel) (optionally
    with a leading batch axis) as produced by ``select_topk`` per group.
    Softmax runs over the gathered positions only, causally.
    """
    from .fusion import grouped_attention  # local import to avoid a cycle

    length = q.shape[-2]
    selected = np.asarray(selected, dtype=bool)
    vis_shape = selected.shape[:-2] + (length, length)
    vis = np.zeros(vis_shape, dtype=bool)
    flat = selected.reshape((-1,) + selected.shape[-2:])
    flat_vis = vis.reshape((-1, length, length))
    for plane in range(flat.shape[0]):
        flat_vis[plane] = selection_to_visibility(flat[plane], length, cfg)
    if vis.ndim == 3:  # (g, L, L) -> broadcast over heads-per-group
        mask = vis[None, :, None, :, :]
    else:  # (B, g, L, L)
        mask = vis[:, :, None, :, :]
    return grouped_attention(q, k, v, cfg, mask, w_o=w_o)


def build_ltis_masks(q_data: np.ndarray, k_data: np.ndarray, lengths: np.ndarray,
                     cfg: AttentionConfig, phi_key: CompressionMLP) -> np.ndarray:
    """Run the whole selection pipeline, batched, and return visibility masks.

    q_data: (B, heads, L, d_head) and k_data: (B, kv_groups, L, d_head)
    values (plain arrays; selection carries no gradient). ``lengths`` gives
    each sequence's real length inside its left-padded frame. Returns bool
    (B, kv_groups, 1, L, L).
    """
    batch, _, total_len, _ = q_data.shape
    out = np.zeros((batch, cfg.kv_groups, 1, total_len, total_len), dtype=bool)
    hpg = cfg.heads_per_group
    with no_grad():
        _fill_ltis_masks(out, q_data, k_data, lengths, cfg, phi_key, hpg, total_len)
    return out


def _fill_ltis_masks(out, q_data, k_data, lengths, cfg, phi_key, hpg, total_len):
    batch = out.shape[0]
    for b in range(batch):
        n = int(lengths[b])
        if n == 0:
            continue
        pad = total_len - n
        for g in range(cfg.kv_groups):
            keys = Tensor(k_data[b, g, pad:, :])
            cmp_keys = compress_sequence(keys, phi_key, cfg)
            queries = Tensor(q_data[b, g * hpg: (g + 1) * hpg, pad:, :])
            cmp_scores = importance_scores(queries, cmp_keys, cfg, seq_len=n)
            sel_scores = remap_scores(cmp_scores, cfg, num_sel=cfg.num_sel_blocks(n))
            shared = sel_scores.data.sum(axis=0)
            chosen = select_topk(shared, cfg, seq_len=n)
            out[b, g, 0, pad:, pad:] = selection_to_visibility(chosen, n, cfg)
    return out
