"""Attention pathways against naive oracles, plus wiring identities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evit.attention import (
    AttentionConfig,
    ConnectionPattern,
    bfsa_forward,
    dfa_forward,
    init_bfsa_params,
    init_fovea_params,
    sfa_forward,
)
from evit.errors import ConfigError, ShapeError
from evit.tensor import Tensor

from reference import naive_fovea_attention, naive_single_head_attention


class TestConfig:
    def test_head_dim(self):
        cfg = AttentionConfig(dim=32, heads=4, sfa_reduction=2, dfa_reduction=1)
        assert cfg.head_dim == 8

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ConfigError):
            AttentionConfig(dim=30, heads=4, sfa_reduction=1, dfa_reduction=1)

    def test_bad_reduction_rejected(self):
        with pytest.raises(ConfigError):
            AttentionConfig(dim=8, heads=2, sfa_reduction=0, dfa_reduction=1)


class TestOracleEquivalence:
    def test_many_random_cases(self, rng):
        """Production attention equals the loop oracle on 100+ small maps."""
        worst = 0.0
        cases = 0
        for dim, heads in [(4, 1), (6, 2), (8, 4), (12, 3)]:
            for reduction in (1, 2, 4):
                for side in (2, 4, 8):
                    if side % reduction:
                        continue
                    for _ in range(4):
                        params = init_fovea_params(rng, dim, reduction)
                        x = rng.normal(size=(2, dim, side, side))
                        cfg = AttentionConfig(dim, heads, reduction, reduction)
                        ours = sfa_forward(Tensor(x), cfg, params).data
                        theirs = naive_fovea_attention(
                            x, heads, reduction,
                            params.q_weight.data, params.k_weight.data,
                            params.v_weight.data, params.out_weight.data,
                            None if reduction == 1 else params.reduce_weight.data,
                            None if reduction == 1 else params.reduce_bias.data,
                        )
                        worst = max(worst, np.abs(ours - theirs).max())
                        cases += 1
        assert cases >= 100
        assert worst <= 1e-10, f"worst deviation {worst:.2e} over {cases} cases"

    def test_single_head_no_reduction_is_plain_attention(self, rng):
        dim, side = 6, 4
        params = init_fovea_params(rng, dim, 1)
        x = rng.normal(size=(2, dim, side, side))
        cfg = AttentionConfig(dim, 1, 1, 1)
        ours = sfa_forward(Tensor(x), cfg, params).data
        tokens = x.transpose(0, 2, 3, 1).reshape(2, side * side, dim)
        expected = naive_single_head_attention(
            tokens, params.q_weight.data, params.k_weight.data,
            params.v_weight.data, params.out_weight.data,
        )
        expected = expected.reshape(2, side, side, dim).transpose(0, 3, 1, 2)
        assert np.abs(ours - expected).max() <= 1e-10

    def test_single_token_collapses_to_value_path(self, rng):
        """With one query and one key the attention weight is exactly 1."""
        dim = 8
        params = init_fovea_params(rng, dim, 1)
        x = rng.normal(size=(1, dim, 1, 1))
        cfg = AttentionConfig(dim, 2, 1, 1)
        out = sfa_forward(Tensor(x), cfg, params).data
        expected = (x[0, :, 0, 0] @ params.v_weight.data) @ params.out_weight.data
        np.testing.assert_allclose(out[0, :, 0, 0], expected, atol=1e-12)


class TestCaptureAndShapes:
    def test_captured_weights_are_distributions(self, rng):
        cfg = AttentionConfig(dim=8, heads=2, sfa_reduction=2, dfa_reduction=1)
        params = init_bfsa_params(rng, cfg)
        x = Tensor(rng.normal(size=(3, 8, 4, 4)))
        capture = {}
        bfsa_forward(x, cfg, params, ConnectionPattern.BIFOVEA, capture)
        assert set(capture) == {"sfa", "dfa"}
        assert capture["sfa"].shape == (3, 2, 16, 4)
        assert capture["dfa"].shape == (3, 2, 16, 16)
        for weights in capture.values():
            assert (weights >= 0).all()
            assert np.abs(weights.sum(axis=-1) - 1.0).max() <= 1e-9

    def test_output_preserves_map_shape(self, rng):
        cfg = AttentionConfig(dim=12, heads=3, sfa_reduction=2, dfa_reduction=2)
        params = init_bfsa_params(rng, cfg)
        x = Tensor(rng.normal(size=(2, 12, 6, 6)))
        for pattern in ConnectionPattern:
            assert bfsa_forward(x, cfg, params, pattern).shape == (2, 12, 6, 6)

    def test_indivisible_side_rejected(self, rng):
        cfg = AttentionConfig(dim=8, heads=2, sfa_reduction=4, dfa_reduction=1)
        params = init_bfsa_params(rng, cfg)
        with pytest.raises(ConfigError):
            sfa_forward(Tensor(rng.normal(size=(1, 8, 6, 6))), cfg, params.sfa)

    def test_wrong_channels_rejected(self, rng):
        cfg = AttentionConfig(dim=8, heads=2, sfa_reduction=1, dfa_reduction=1)
        params = init_bfsa_params(rng, cfg)
        with pytest.raises(ShapeError):
            sfa_forward(Tensor(rng.normal(size=(1, 6, 4, 4))), cfg, params.sfa)

    @given(
        heads=st.sampled_from([1, 2, 4]),
        head_dim=st.integers(1, 4),
        reduction=st.sampled_from([1, 2]),
        seed=st.integers(0, 1000),
    )
    @settings(max_examples=25, deadline=None)
    def test_property_shape_and_distribution(self, heads, head_dim, reduction, seed):
        local = np.random.default_rng(seed)
        dim = heads * head_dim
        cfg = AttentionConfig(dim, heads, reduction, reduction)
        params = init_fovea_params(local, dim, reduction)
        x = Tensor(local.normal(size=(1, dim, 4, 4)))
        capture = {}
        out = sfa_forward(x, cfg, params, capture)
        assert out.shape == (1, dim, 4, 4)
        assert np.abs(capture["sfa"].sum(axis=-1) - 1.0).max() <= 1e-9


class TestWiring:
    def _setup(self, rng):
        cfg = AttentionConfig(dim=8, heads=2, sfa_reduction=2, dfa_reduction=1)
        params = init_bfsa_params(rng, cfg)
        x = Tensor(rng.normal(size=(2, 8, 4, 4)))
        return cfg, params, x

    def test_bifovea_identity(self, rng):
        cfg, params, x = self._setup(rng)
        combined = bfsa_forward(x, cfg, params, ConnectionPattern.BIFOVEA).data
        shallow = sfa_forward(x, cfg, params.sfa)
        expected = shallow.data + dfa_forward(shallow, cfg, params.dfa).data
        assert np.abs(combined - expected).max() <= 1e-12

    def test_parallel_identity(self, rng):
        cfg, params, x = self._setup(rng)
        combined = bfsa_forward(x, cfg, params, ConnectionPattern.PARALLEL).data
        expected = sfa_forward(x, cfg, params.sfa).data + dfa_forward(x, cfg, params.dfa).data
        assert np.abs(combined - expected).max() <= 1e-12

    def test_cascade_identity(self, rng):
        cfg, params, x = self._setup(rng)
        combined = bfsa_forward(x, cfg, params, ConnectionPattern.CASCADE).data
        expected = dfa_forward(sfa_forward(x, cfg, params.sfa), cfg, params.dfa).data
        assert np.abs(combined - expected).max() <= 1e-12

    def test_zero_deep_projection_reduces_to_shallow(self, rng):
        cfg, params, x = self._setup(rng)
        params.dfa.out_weight.data[:] = 0.0
        combined = bfsa_forward(x, cfg, params, ConnectionPattern.BIFOVEA).data
        shallow = sfa_forward(x, cfg, params.sfa).data
        np.testing.assert_array_equal(combined, shallow)

    def test_zero_input_zero_bias_gives_zero(self, rng):
        cfg, params, x = self._setup(rng)
        zero = Tensor(np.zeros((1, 8, 4, 4)))
        params.sfa.reduce_bias.data[:] = 0.0
        out = dfa_forward(zero, cfg, params.dfa).data
        np.testing.assert_array_equal(out, np.zeros_like(out))


class TestParams:
    def test_projections_carry_no_bias(self, rng):
        params = init_fovea_params(rng, 8, 2)
        names = [name for name, _ in params.named("f")]
        assert names == [
            "f.reduce.weight", "f.reduce.bias",
            "f.q_weight", "f.k_weight", "f.v_weight", "f.out_weight",
        ]

    def test_reduction_one_skips_pooling_conv(self, rng):
        params = init_fovea_params(rng, 8, 1)
        assert params.reduce_weight is None and params.reduce_bias is None
        assert len(params.named("f")) == 4

    def test_init_deterministic(self):
        a = init_fovea_params(np.random.default_rng(5), 8, 2)
        b = init_fovea_params(np.random.default_rng(5), 8, 2)
        for (_, pa), (_, pb) in zip(a.named("x"), b.named("x")):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_trunc_normal_bounded(self):
        params = init_fovea_params(np.random.default_rng(0), 64, 1)
        for name, p in params.named("x"):
            assert np.abs(p.data).max() <= 2 * 0.02 + 1e-12
