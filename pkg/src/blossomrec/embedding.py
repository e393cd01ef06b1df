"""Item-id embeddings and rotary position encoding.

Id 0 is the padding token: its embedding row is pinned to zero and never
receives gradient. Positions are 0-indexed within each real (unpadded)
sequence, so left padding does not advance position.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError
from .tensor import Tensor, concat, mul, take_rows

__all__ = ["EmbeddingTable", "RoPECache", "embed", "apply_rope"]


class EmbeddingTable:
    """num_items + 1 rows of dimension d; row 0 is reserved for padding."""

    def __init__(self, num_items: int, dim: int, rng: np.random.Generator):
        weights = rng.normal(0.0, 0.02, (num_items + 1, dim))
        weights[0] = 0.0
        self.weights = Tensor(weights, requires_grad=True)
        self.num_items = num_items
        self.dim = dim

    @property
    def rows(self) -> int:
        return self.num_items + 1

    def item_vectors(self) -> Tensor:
        """Rows 1..num_items (padding excluded), used for scoring."""
        return self.weights[1:]

    def clamp_padding(self) -> None:
        """Re-pin the padding row: zero weights, zero pending gradient."""
        self.weights.data[0] = 0.0
        if self.weights.grad is not None:
            self.weights.grad[0] = 0.0


def embed(ids: np.ndarray, table: EmbeddingTable) -> Tensor:
    """Look up a batch of id matrices, shape (..., L) -> (..., L, d)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.rows):
        bad = ids[(ids < 0) | (ids >= table.rows)].flat[0]
        raise DataError(f"item id {int(bad)} outside embedding table with {table.rows} rows")
    return take_rows(table.weights, ids)


class RoPECache:
    """Precomputed cos/sin tables for rotary position encoding.

    The head dimension is split in halves; coordinate pair (j, j + d/2)
    rotates by angle position * base**(-2j/d). Rotations are orthogonal, so
    vector norms are preserved and post-rotation dot products depend only on
    the position difference.
    """

    def __init__(self, d_head: int, max_len: int, base: float = 10000.0):
        if d_head % 2 != 0:
            raise ConfigError(f"rotary encoding needs an even head dimension, got {d_head}")
        self.d_head = d_head
        self.max_len = max_len
        self.base = base
        half = d_head // 2
        inv_freq = base ** (-np.arange(half, dtype=np.float64) * 2.0 / d_head)
        angles = np.arange(max_len, dtype=np.float64)[:, None] * inv_freq[None, :]
        self.cos = np.cos(angles)  # (max_len, d_head/2)
        self.sin = np.sin(angles)


def apply_rope(x: Tensor, positions: np.ndarray, cache: RoPECache) -> Tensor:
    """Rotate query/key vectors by their position-dependent angles.

    x: (..., L, d_head); positions: int array of shape (L,) or (B, L) for a
    4-D (B, heads, L, d_head) input.
    """
    d = x.shape[-1]
    if d != cache.d_head:
        raise ConfigError(f"rope cache built for d_head={cache.d_head}, input has {d}")
    positions = np.asarray(positions, dtype=np.int64)
    if positions.max(initial=0) >= cache.max_len:
        raise ConfigError(f"position {positions.max()} exceeds rope cache length {cache.max_len}")
    cos = cache.cos[positions]
    sin = cache.sin[positions]
    if positions.ndim == 2 and x.ndim == 4:
        # (B, L, d/2) -> (B, 1, L, d/2) so tables broadcast across heads.
        cos = cos[:, None, :, :]
        sin = sin[:, None, :, :]
    half = d // 2
    x1 = x[..., :half]
    x2 = x[..., half:]
    out1 = mul(x1, Tensor(cos)) - mul(x2, Tensor(sin))
    out2 = mul(x1, Tensor(sin)) + mul(x2, Tensor(cos))
    return concat([out1, out2], axis=x.ndim - 1)
