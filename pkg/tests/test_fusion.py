"""GQA, sigmoid gating, the encoder layer, and the full-density collapse."""

import numpy as np
import pytest

from blossomrec.config import AttentionConfig
from blossomrec.embedding import RoPECache
from blossomrec.errors import ConfigError
from blossomrec.fusion import (
    BlossomLayerParams,
    SeqContext,
    dense_causal_gqa,
    encode,
    encoder_layer,
    gated_fuse,
    gqa,
    split_heads,
)
from blossomrec.gradcheck import grad_check
from blossomrec.stis import batch_stis_masks
from blossomrec.tensor import Tensor, layer_norm, parameter


def make_cfg(**kw):
    base = dict(block_size=4, stride=2, sel_block_size=2, top_k=1, win=1, blk=1,
                heads=2, kv_groups=1, d_model=6, d_head=4)
    base.update(kw)
    return AttentionConfig(**base)


def causal_mask(length):
    return np.tril(np.ones((length, length), dtype=bool))


class TestGqa:
    def test_groups_equal_heads_is_multihead(self):
        rng = np.random.default_rng(0)
        cfg = make_cfg(heads=4, kv_groups=4)
        length = 10
        q = rng.normal(size=(4, length, 4))
        k = rng.normal(size=(4, length, 4))
        v = rng.normal(size=(4, length, 4))
        out = gqa(Tensor(q), Tensor(k), Tensor(v), cfg, causal_mask(length))
        # per-head naive attention, each head with its own k/v
        want = dense_causal_gqa(q, k, v, cfg)
        assert np.abs(out.data - want).max() < 1e-12

    def test_single_group_shares_kv(self):
        rng = np.random.default_rng(1)
        cfg = make_cfg(heads=2, kv_groups=1)
        length = 6
        q = rng.normal(size=(2, length, 4))
        kv = rng.normal(size=(1, length, 4))
        out = gqa(Tensor(q), Tensor(kv), Tensor(kv), cfg, causal_mask(length)).data
        # identical queries in both heads -> identical head outputs
        q2 = np.stack([q[0], q[0]])
        out2 = gqa(Tensor(q2), Tensor(kv), Tensor(kv), cfg, causal_mask(length)).data
        assert np.abs(out2[:, :4] - out2[:, 4:]).max() < 1e-14
        assert out.shape == (length, 8)

    def test_random_vs_naive_oracle(self):
        rng = np.random.default_rng(2)
        cfg = make_cfg(heads=4, kv_groups=2)
        length = 13
        q = rng.normal(size=(4, length, 4))
        k = rng.normal(size=(2, length, 4))
        v = rng.normal(size=(2, length, 4))
        w_o = rng.normal(size=(16, cfg.d_model))
        out = gqa(Tensor(q), Tensor(k), Tensor(v), cfg, causal_mask(length), w_o=Tensor(w_o))
        want = dense_causal_gqa(q, k, v, cfg, w_o=w_o)
        assert np.abs(out.data - want).max() < 1e-10

    def test_band_config_rejected(self):
        cfg = make_cfg(heads=4, kv_groups=2)
        q = Tensor(np.zeros((3, 5, 4)))
        kv = Tensor(np.zeros((2, 5, 4)))
        with pytest.raises(ConfigError, match="heads"):
            gqa(q, kv, kv, cfg)


class TestGatedFuse:
    def test_equal_inputs_pass_through(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(5, 6)))
        gate_w = Tensor(rng.normal(size=(12, 6)))
        gate_b = Tensor(rng.normal(size=6))
        fused, alpha = gated_fuse(x, x, gate_w, gate_b)
        assert np.abs(fused.data - x.data).max() < 1e-14
        assert np.all((alpha.data > 0) & (alpha.data < 1))

    def test_saturated_gate_selects_first(self):
        rng = np.random.default_rng(4)
        a = Tensor(rng.normal(size=(4, 3)))
        b = Tensor(rng.normal(size=(4, 3)))
        gate_w = Tensor(np.zeros((6, 3)))
        gate_b = Tensor(np.full(3, 50.0))  # sigmoid(50) ~ 1
        fused, _ = gated_fuse(a, b, gate_w, gate_b)
        assert np.abs(fused.data - a.data).max() < 1e-6

    def test_output_bounded_by_inputs(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(7, 4))
        b = rng.normal(size=(7, 4))
        gate_w = Tensor(rng.normal(size=(8, 4)))
        gate_b = Tensor(rng.normal(size=4))
        fused, _ = gated_fuse(Tensor(a), Tensor(b), gate_w, gate_b)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        assert np.all(fused.data >= lo - 1e-12)
        assert np.all(fused.data <= hi + 1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="disagree"):
            gated_fuse(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))),
                       Tensor(np.zeros((7, 3))), Tensor(np.zeros(3)))

    def test_gate_gradient(self):
        rng = np.random.default_rng(6)
        a = Tensor(rng.normal(size=(3, 4)))
        b = Tensor(rng.normal(size=(3, 4)))
        gate_w = parameter(rng.normal(size=(8, 4)))
        gate_b = parameter(rng.normal(size=4))
        w = rng.normal(size=(3, 4))

        def f():
            fused, _ = gated_fuse(a, b, gate_w, gate_b)
            return (fused * Tensor(w)).sum()

        assert grad_check(f, {"gate_w": gate_w, "gate_b": gate_b}) < 1e-4


def layer_inputs(cfg, lengths, rng, total=None):
    total = total or int(max(lengths))
    ctx = SeqContext.from_lengths(np.array(lengths), total)
    stis_mask = batch_stis_masks(ctx.lengths, total, cfg)
    rope = RoPECache(cfg.d_head, total + 1)
    h = Tensor(rng.normal(size=(len(lengths), total, cfg.d_model)))
    return h, ctx, stis_mask, rope


class TestEncoderLayer:
    def test_zeroed_outputs_reduce_to_double_norm(self):
        rng = np.random.default_rng(7)
        cfg = make_cfg()
        params = BlossomLayerParams.init(cfg, rng)
        params.w_o.data[:] = 0.0          # attention contribution vanishes
        params.ffn_w2.data[:] = 0.0       # feed-forward contribution vanishes
        params.ffn_b2.data[:] = 0.0
        h, ctx, stis_mask, rope = layer_inputs(cfg, [8, 8], rng)
        out = encoder_layer(h, params, cfg, ctx, stis_mask, rope)
        ones, zeros = Tensor(np.ones(cfg.d_model)), Tensor(np.zeros(cfg.d_model))
        want = layer_norm(layer_norm(h, ones, zeros), ones, zeros)
        assert np.abs(out.data - want.data).max() < 1e-12

    def test_evaluation_determinism(self):
        rng = np.random.default_rng(8)
        cfg = make_cfg()
        params = BlossomLayerParams.init(cfg, rng)
        h, ctx, stis_mask, rope = layer_inputs(cfg, [6, 9], rng)
        a = encoder_layer(h, params, cfg, ctx, stis_mask, rope).data
        b = encoder_layer(h, params, cfg, ctx, stis_mask, rope).data
        assert np.array_equal(a, b)

    def test_full_layer_gradient(self):
        rng = np.random.default_rng(9)
        cfg = make_cfg()
        params = BlossomLayerParams.init(cfg, rng)
        h, ctx, stis_mask, rope = layer_inputs(cfg, [7], rng)
        w = rng.normal(size=(1, 7, cfg.d_model))

        def f():
            return (encoder_layer(h, params, cfg, ctx, stis_mask, rope) * Tensor(w)).sum()

        assert grad_check(f, params.parameters(), h=1e-5) < 1e-4

    def test_pathway_ablation_modes(self):
        rng = np.random.default_rng(10)
        cfg = make_cfg()
        params = BlossomLayerParams.init(cfg, rng)
        h, ctx, stis_mask, rope = layer_inputs(cfg, [8], rng)
        outs = {p: encoder_layer(h, params, cfg, ctx, stis_mask, rope, pathway=p).data
                for p in ("both", "ltis", "stis")}
        assert not np.array_equal(outs["ltis"], outs["stis"])
        assert not np.array_equal(outs["both"], outs["ltis"])


class TestEncode:
    def test_single_layer_base_case(self):
        rng = np.random.default_rng(11)
        cfg = make_cfg()
        params = BlossomLayerParams.init(cfg, rng)
        h, ctx, stis_mask, rope = layer_inputs(cfg, [6], rng)
        w_n = Tensor(np.eye(cfg.d_model))
        b_n = Tensor(np.zeros(cfg.d_model))
        full = encode(h, [params], w_n, b_n, cfg, ctx, stis_mask, rope)
        single = encoder_layer(h, params, cfg, ctx, stis_mask, rope)
        assert np.abs(full.data - single.data).max() < 1e-15

    def test_identity_projection(self):
        rng = np.random.default_rng(12)
        cfg = make_cfg()
        layers = [BlossomLayerParams.init(cfg, rng) for _ in range(2)]
        h, ctx, stis_mask, rope = layer_inputs(cfg, [5, 5], rng)
        w_n = Tensor(np.eye(cfg.d_model))
        b_n = Tensor(np.zeros(cfg.d_model))
        out = encode(h, layers, w_n, b_n, cfg, ctx, stis_mask, rope)
        stacked = h
        for lp in layers:
            stacked = encoder_layer(stacked, lp, cfg, ctx, stis_mask, rope)
        assert np.abs(out.data - stacked.data).max() < 1e-15

    def test_output_shape(self):
        rng = np.random.default_rng(13)
        cfg = make_cfg(d_model=8, d_head=4, heads=2)
        layers = [BlossomLayerParams.init(cfg, rng) for _ in range(2)]
        h, ctx, stis_mask, rope = layer_inputs(cfg, [16, 12], rng, total=16)
        out = encode(h, layers, parameter(rng.normal(size=(8, 8))),
                     Tensor(np.zeros(8)), cfg, ctx, stis_mask, rope)
        assert out.shape == (2, 16, 8)

    def test_empty_stack_rejected(self):
        cfg = make_cfg()
        rng = np.random.default_rng(14)
        h, ctx, stis_mask, rope = layer_inputs(cfg, [4], rng)
        with pytest.raises(ConfigError, match="layer"):
            encode(h, [], Tensor(np.eye(cfg.d_model)), Tensor(np.zeros(cfg.d_model)),
                   cfg, ctx, stis_mask, rope)


class TestFullDensityCollapse:
    def test_fused_equals_dense_for_any_gate(self):
        """All selection blocks chosen + saturated window: both pathways are
        dense causal attention, so the gate mixes two equal tensors."""
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            cfg = make_cfg(top_k=1000, win=1000, heads=2, kv_groups=2, d_head=4)
            length = 12
            q = rng.normal(size=(cfg.heads, length, cfg.d_head))
            k = rng.normal(size=(cfg.kv_groups, length, cfg.d_head))
            v = rng.normal(size=(cfg.kv_groups, length, cfg.d_head))
            from blossomrec.ltis import ltis_attention
            from blossomrec.stis import build_power_mask, stis_attention

            full = np.ones((cfg.kv_groups, length, cfg.num_sel_blocks(length)), dtype=bool)
            o_l = ltis_attention(Tensor(q), Tensor(k), Tensor(v), full, cfg)
            o_s = stis_attention(Tensor(q), Tensor(k), Tensor(v),
                                 build_power_mask(length, cfg, causal=True), cfg)
            width = cfg.heads * cfg.d_head
            gate_w = Tensor(rng.normal(scale=3.0, size=(2 * width, width)))
            gate_b = Tensor(rng.normal(size=width))
            fused, _ = gated_fuse(o_l, o_s, gate_w, gate_b)
            oracle = dense_causal_gqa(q, k, v, cfg)
            assert np.abs(fused.data - oracle).max() < 1e-8


def test_split_heads_round_trip():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(2, 5, 12))
    split = split_heads(Tensor(x), 3)
    assert split.shape == (2, 3, 5, 4)
    assert np.array_equal(split.data[:, 1], x[:, :, 4:8])
