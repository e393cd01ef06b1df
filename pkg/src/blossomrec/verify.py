"""Self-contained verification suites behind the ``verify`` CLI command.

Each check prints one PASS/FAIL line. The oracles here are deliberately
independent of the library's fast paths: brute-force mask evaluation,
naive per-head dense attention, central differences.
"""

from __future__ import annotations

import numpy as np

from .analysis import count_participating
from .config import AttentionConfig
from .data import SeqBatch
from .fusion import dense_causal_gqa, gated_fuse
from .gradcheck import grad_check
from .model import Model, sequence_loss
from .stis import build_power_mask
from .tensor import Tensor

__all__ = ["brute_force_power_mask", "run_verification"]


def brute_force_power_mask(length: int, cfg: AttentionConfig, causal: bool) -> np.ndarray:
    """Evaluate the three mask cases literally for every (i, j) pair."""
    dense = np.zeros((length, length), dtype=bool)
    span = cfg.win * cfg.blk
    for i in range(length):
        for j in range(length):
            if causal and j > i:
                continue
            window = abs(i - j) < span
            bd = abs(i // cfg.blk - j // cfg.blk)
            power = bd >= 1 and (bd & (bd - 1)) == 0
            last = j >= length - cfg.blk
            dense[i, j] = window or power or last
    return dense


def _full_selection_cfg(d_head: int) -> AttentionConfig:
    return AttentionConfig(block_size=8, stride=4, sel_block_size=4, top_k=1 << 16,
                           win=1 << 12, blk=1, heads=4, kv_groups=2,
                           d_model=16, d_head=d_head)


def _check_counts() -> bool:
    cfg = AttentionConfig()
    expected = {256: 103, 512: 120, 1024: 153, 2048: 218}
    got = {length: count_participating(length, cfg).total for length in expected}
    return got == expected


def _check_dense_equivalence(seeds: range, lengths: tuple[int, ...]) -> float:
    """Fused output vs naive dense causal attention, full selection."""
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for length in lengths:
            for d_head in (4, 8):
                cfg = _full_selection_cfg(d_head)
                q = rng.normal(size=(cfg.heads, length, d_head))
                k = rng.normal(size=(cfg.kv_groups, length, d_head))
                v = rng.normal(size=(cfg.kv_groups, length, d_head))
                full_sel = np.ones((cfg.kv_groups, length, cfg.num_sel_blocks(length)), dtype=bool)
                from .ltis import ltis_attention
                from .stis import stis_attention

                o_l = ltis_attention(Tensor(q), Tensor(k), Tensor(v), full_sel, cfg)
                mask = build_power_mask(length, cfg, causal=True)
                o_s = stis_attention(Tensor(q), Tensor(k), Tensor(v), mask, cfg)
                gate_w = Tensor(rng.normal(size=(2 * cfg.heads * d_head, cfg.heads * d_head)))
                gate_b = Tensor(rng.normal(size=cfg.heads * d_head))
                fused, _ = gated_fuse(o_l, o_s, gate_w, gate_b)
                oracle = dense_causal_gqa(q, k, v, cfg)
                worst = max(worst, float(np.abs(fused.data - oracle).max()))
    return worst


def _check_gradients() -> float:
    # Selection block of 2 with top-1 and a width-1 window make the two
    # pathways disagree at loss-bearing positions, so the gate gets signal.
    cfg = AttentionConfig(block_size=4, stride=2, sel_block_size=2, top_k=1,
                          win=1, blk=1, heads=2, kv_groups=1, d_model=6, d_head=4)
    model = Model(num_items=9, cfg=cfg, num_layers=1, seed=5, max_len=16)
    batch = SeqBatch.from_sequences([[1, 4, 2, 7, 3, 5, 9, 6, 4, 8], [2, 2, 8, 1, 7, 5]], max_len=16)
    return grad_check(lambda: sequence_loss(model, batch), model.parameters(), h=1e-5)


def _check_masks(num_cases: int, rng: np.random.Generator) -> bool:
    for _ in range(num_cases):
        length = int(rng.integers(1, 96))
        cfg = AttentionConfig(blk=int(rng.integers(1, 5)), win=int(rng.integers(1, 5)))
        causal = bool(rng.integers(0, 2))
        fast = build_power_mask(length, cfg, causal).to_dense()
        slow = brute_force_power_mask(length, cfg, causal)
        if not np.array_equal(fast, slow):
            return False
    return True


def run_verification(quick: bool = False) -> bool:
    checks: list[tuple[str, bool, str]] = []

    ok = _check_counts()
    checks.append(("participating-interaction totals (103/120/153/218)", ok, ""))

    seeds = range(3) if quick else range(10)
    lengths = (16, 32) if quick else (16, 32, 64)
    err = _check_dense_equivalence(seeds, lengths)
    checks.append(("fused output == dense causal attention (full selection)",
                   err < 1e-8, f"max abs err {err:.3e}"))

    err = _check_gradients()
    checks.append(("tape gradients vs central differences", err < 1e-4, f"max rel err {err:.3e}"))

    rng = np.random.default_rng(0)
    ok = _check_masks(10 if quick else 50, rng)
    checks.append(("power mask matches brute-force case evaluation", ok, ""))

    all_ok = True
    for name, ok, detail in checks:
        status = "PASS" if ok else "FAIL"
        suffix = f" ({detail})" if detail else ""
        print(f"[{status}] {name}{suffix}")
        all_ok &= ok
    return all_ok
