"""Feedforward variants: hand-computed oracles and the parameter ordering."""

import numpy as np
import pytest

from evit.errors import ConfigError
from evit.feedforward import (
    FfnConfig,
    FfnKind,
    bffn_forward,
    cffn_forward,
    feedforward_forward,
    ffn_forward,
    init_ffn_params,
)
from evit.tensor import Tensor

from reference import naive_dwconv2d, naive_gelu


def _param_total(params):
    return sum(p.size for _, p in params.named("f"))


class TestConfig:
    @pytest.mark.parametrize(
        "dim,expansion,hidden", [(64, 3.0, 192), (64, 3.5, 224), (72, 4.0, 288), (3, 3.0, 9)]
    )
    def test_hidden_rounding(self, dim, expansion, hidden):
        cfg = FfnConfig(dim, expansion, FfnKind.BFFN)
        assert cfg.hidden == hidden

    def test_odd_hidden_split(self):
        cfg = FfnConfig(3, 3.0, FfnKind.BFFN)  # hidden 9
        assert cfg.shallow_width == 5 and cfg.deep_width == 4

    def test_too_small_hidden_rejected(self):
        with pytest.raises(ConfigError):
            FfnConfig(2, 0.5, FfnKind.BFFN)  # hidden 1, cannot split


class TestForwardOracles:
    def _tokens(self, x):
        n, c, h, w = x.shape
        return x.transpose(0, 2, 3, 1).reshape(n, h * w, c)

    def _maps(self, t, h, w):
        n, _, c = t.shape
        return t.reshape(n, h, w, c).transpose(0, 3, 1, 2)

    def test_ffn_matches_manual(self, rng):
        cfg = FfnConfig(6, 2.0, FfnKind.FFN)
        params = init_ffn_params(rng, cfg)
        x = rng.normal(size=(2, 6, 4, 4))
        ours = ffn_forward(Tensor(x), cfg, params).data

        t = self._tokens(x)
        hidden = naive_gelu(t @ params.fc1_weight.data + params.fc1_bias.data)
        expected = self._maps(hidden @ params.fc2_weight.data + params.fc2_bias.data, 4, 4)
        np.testing.assert_allclose(ours, expected, atol=1e-12)

    def test_cffn_matches_manual(self, rng):
        cfg = FfnConfig(6, 2.0, FfnKind.CFFN)
        params = init_ffn_params(rng, cfg)
        x = rng.normal(size=(2, 6, 4, 4))
        ours = cffn_forward(Tensor(x), cfg, params).data

        t = self._tokens(x)
        hidden = self._maps(t @ params.fc1_weight.data + params.fc1_bias.data, 4, 4)
        local = naive_dwconv2d(hidden, params.dw_weight.data, 1, 1)
        local += params.dw_bias.data[None, :, None, None]
        activated = naive_gelu(hidden + local)
        expected = self._maps(
            self._tokens(activated) @ params.fc2_weight.data + params.fc2_bias.data, 4, 4
        )
        np.testing.assert_allclose(ours, expected, atol=1e-12)

    @pytest.mark.parametrize("dim,expansion", [(6, 2.0), (3, 3.0)])  # even and odd hidden
    def test_bffn_matches_manual(self, dim, expansion, rng):
        cfg = FfnConfig(dim, expansion, FfnKind.BFFN)
        params = init_ffn_params(rng, cfg)
        params.fuse_gate.data[:] = rng.normal(size=cfg.hidden)  # exercise a non-trivial gate
        x = rng.normal(size=(2, dim, 4, 4))
        ours = bffn_forward(Tensor(x), cfg, params).data

        t = self._tokens(x)
        hidden = self._maps(t @ params.fc1_weight.data + params.fc1_bias.data, 4, 4)
        hs, hd = cfg.shallow_width, cfg.deep_width
        shallow_in, deep_in = hidden[:, :hs], hidden[:, hs:]
        shallow_out = naive_dwconv2d(shallow_in, params.shallow_weight.data, 1, 1)
        shallow_out += params.shallow_bias.data[None, :, None, None]
        deep_out = naive_dwconv2d(shallow_out[:, :hd] + deep_in, params.deep_weight.data, 1, 1)
        deep_out += params.deep_bias.data[None, :, None, None]
        merged = np.concatenate([shallow_out, deep_out], axis=1)
        gated = merged * params.fuse_gate.data[None, :, None, None]
        expected = self._maps(
            self._tokens(naive_gelu(gated)) @ params.fc2_weight.data + params.fc2_bias.data, 4, 4
        )
        np.testing.assert_allclose(ours, expected, atol=1e-12)

    def test_zero_gate_leaves_only_bias(self, rng):
        cfg = FfnConfig(4, 2.0, FfnKind.BFFN)
        params = init_ffn_params(rng, cfg)
        params.fuse_gate.data[:] = 0.0
        params.fc2_bias.data[:] = rng.normal(size=4)
        x = rng.normal(size=(1, 4, 4, 4))
        out = bffn_forward(Tensor(x), cfg, params).data
        expected = np.broadcast_to(params.fc2_bias.data[None, :, None, None], out.shape)
        np.testing.assert_allclose(out, expected, atol=1e-12)


class TestShapesAndCounts:
    def test_all_kinds_preserve_shape(self, rng):
        x = Tensor(rng.normal(size=(2, 8, 6, 6)))
        for kind in FfnKind:
            cfg = FfnConfig(8, 3.0, kind)
            out = feedforward_forward(x, cfg, init_ffn_params(rng, cfg))
            assert out.shape == (2, 8, 6, 6)

    def test_param_count_strictly_ordered(self, rng):
        counts = {}
        for kind in FfnKind:
            cfg = FfnConfig(16, 3.5, kind)
            counts[kind] = _param_total(init_ffn_params(rng, cfg))
        assert counts[FfnKind.FFN] < counts[FfnKind.CFFN] < counts[FfnKind.BFFN]

    def test_bffn_exceeds_cffn_by_the_gate(self, rng):
        cfg_c = FfnConfig(16, 3.0, FfnKind.CFFN)
        cfg_b = FfnConfig(16, 3.0, FfnKind.BFFN)
        diff = _param_total(init_ffn_params(rng, cfg_b)) - _param_total(
            init_ffn_params(rng, cfg_c)
        )
        assert diff == cfg_b.hidden

    def test_gate_initialized_to_ones(self, rng):
        params = init_ffn_params(rng, FfnConfig(8, 3.0, FfnKind.BFFN))
        np.testing.assert_array_equal(params.fuse_gate.data, np.ones(24))
