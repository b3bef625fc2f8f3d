"""Forward-value contracts of the tensor kernel, checked against oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import evit.tensor as T
from evit.errors import ShapeError
from evit.tensor import MacCounter, Tensor

from reference import (
    layernorm_twopass,
    naive_conv2d,
    naive_dwconv2d,
    naive_gelu,
    softmax_longdouble,
)


def test_matmul_matches_numpy(rng):
    a = rng.normal(size=(7, 5))
    b = rng.normal(size=(5, 3))
    out = T.matmul(Tensor(a), Tensor(b))
    np.testing.assert_allclose(out.data, a @ b, atol=1e-12)


def test_matmul_identity(rng):
    a = rng.normal(size=(3, 3))
    out = T.matmul(Tensor(np.eye(3)), Tensor(a))
    np.testing.assert_array_equal(out.data, np.eye(3) @ a)


def test_matmul_batched(rng):
    a = rng.normal(size=(2, 4, 3, 5))
    b = rng.normal(size=(2, 4, 5, 6))
    out = T.matmul(Tensor(a), Tensor(b))
    np.testing.assert_allclose(out.data, a @ b, atol=1e-12)


@pytest.mark.parametrize(
    "bad_a,bad_b",
    [
        ((3, 4), (3, 4)),
        ((2, 3, 4), (3, 3, 4, 5)),
        ((2, 3, 4), (3, 4, 5)),
    ],
)
def test_matmul_shape_errors(bad_a, bad_b, rng):
    with pytest.raises(ShapeError):
        T.matmul(Tensor(rng.normal(size=bad_a)), Tensor(rng.normal(size=bad_b)))


class TestConv:
    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (3, 0)])
    def test_conv2d_matches_bruteforce(self, stride, padding, rng):
        x = rng.normal(size=(2, 3, 9, 11))
        w = rng.normal(size=(4, 3, 3, 3))
        out = T.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding)
        expected = naive_conv2d(x, w, stride=stride, padding=padding)
        assert out.shape == expected.shape
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    @pytest.mark.parametrize("stride,padding,kernel", [(1, 1, 3), (2, 0, 2), (4, 0, 4)])
    def test_dwconv2d_matches_bruteforce(self, stride, padding, kernel, rng):
        x = rng.normal(size=(2, 5, 8, 8))
        w = rng.normal(size=(5, 1, kernel, kernel))
        out = T.dwconv2d(Tensor(x), Tensor(w), stride=stride, padding=padding)
        expected = naive_dwconv2d(x, w, stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_stride2_halves_224(self, rng):
        x = rng.normal(size=(1, 3, 224, 224))
        w = rng.normal(size=(8, 3, 3, 3))
        out = T.conv2d(Tensor(x), Tensor(w), stride=2, padding=1)
        assert out.shape == (1, 8, 112, 112)

    def test_depthwise_stride2_halves_56(self, rng):
        x = rng.normal(size=(1, 4, 56, 56))
        w = rng.normal(size=(4, 1, 2, 2))
        out = T.dwconv2d(Tensor(x), Tensor(w), stride=2, padding=0)
        assert out.shape == (1, 4, 28, 28)

    def test_channel_mismatch_raises(self, rng):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(rng.normal(size=(1, 3, 8, 8))), Tensor(rng.normal(size=(4, 2, 3, 3))))
        with pytest.raises(ShapeError):
            T.dwconv2d(Tensor(rng.normal(size=(1, 3, 8, 8))), Tensor(rng.normal(size=(4, 1, 3, 3))))

    def test_kernel_larger_than_input_raises(self, rng):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(rng.normal(size=(1, 2, 4, 4))), Tensor(rng.normal(size=(2, 2, 5, 5))))

    @given(
        size=st.integers(6, 20),
        kernel=st.integers(1, 4),
        stride=st.integers(1, 3),
        padding=st.integers(0, 2),
    )
    @settings(max_examples=40, deadline=None)
    def test_output_size_arithmetic(self, size, kernel, stride, padding):
        if size + 2 * padding < kernel:
            return
        x = Tensor(np.zeros((1, 2, size, size)))
        w = Tensor(np.zeros((3, 2, kernel, kernel)))
        out = T.conv2d(x, w, stride=stride, padding=padding)
        expected = (size + 2 * padding - kernel) // stride + 1
        assert out.shape == (1, 3, expected, expected)


class TestSoftmax:
    def test_matches_extended_precision(self, rng):
        for _ in range(30):
            x = rng.normal(scale=rng.uniform(0.5, 30.0), size=(4, 9))
            out = T.softmax(Tensor(x))
            assert np.abs(out.data - softmax_longdouble(x)).max() <= 1e-12

    def test_handles_large_magnitudes(self):
        x = np.array([[1000.0, 1000.0, -1000.0]])
        out = T.softmax(Tensor(x)).data
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out[0, :2], 0.5, atol=1e-12)

    @given(seed=st.integers(0, 10_000), rows=st.integers(1, 6), cols=st.integers(1, 12))
    @settings(max_examples=60, deadline=None)
    def test_rows_are_distributions(self, seed, rows, cols):
        x = np.random.default_rng(seed).normal(scale=5.0, size=(rows, cols))
        out = T.softmax(Tensor(x)).data
        assert (out >= 0).all()
        assert np.abs(out.sum(axis=-1) - 1.0).max() <= 1e-9


class TestLayernorm:
    def test_matches_twopass(self, rng):
        x = rng.normal(loc=3.0, scale=7.0, size=(4, 5, 16))
        gamma = rng.normal(size=16)
        beta = rng.normal(size=16)
        out = T.layernorm(Tensor(x), Tensor(gamma), Tensor(beta))
        assert np.abs(out.data - layernorm_twopass(x, gamma, beta)).max() <= 1e-10

    def test_constant_rows_collapse_to_shift(self):
        x = np.full((3, 8), 4.2)
        out = T.layernorm(Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    @given(seed=st.integers(0, 10_000), shift=st.floats(-50, 50))
    @settings(max_examples=40, deadline=None)
    def test_shift_invariance(self, seed, shift):
        x = np.random.default_rng(seed).normal(size=(3, 12))
        gamma, beta = Tensor(np.ones(12)), Tensor(np.zeros(12))
        a = T.layernorm(Tensor(x), gamma, beta).data
        b = T.layernorm(Tensor(x + shift), gamma, beta).data
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_normalized_moments(self, rng):
        x = rng.normal(loc=-2.0, scale=3.0, size=(6, 32))
        out = T.layernorm(Tensor(x), Tensor(np.ones(32)), Tensor(np.zeros(32))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)


def test_gelu_values(rng):
    x = rng.normal(scale=2.0, size=(5, 7))
    np.testing.assert_allclose(T.gelu(Tensor(x)).data, naive_gelu(x), atol=1e-12)
    assert T.gelu(Tensor(np.zeros(3))).data.tolist() == [0.0, 0.0, 0.0]


def test_avgpool_global_constant():
    x = np.full((2, 3, 4, 4), 1.5)
    out = T.avgpool_global(Tensor(x))
    assert out.shape == (2, 3)
    np.testing.assert_allclose(out.data, 1.5, atol=0)


def test_cross_entropy_uniform_logits():
    logits = Tensor(np.zeros((4, 2)))
    loss = T.cross_entropy(logits, np.array([0, 1, 0, 1]))
    np.testing.assert_allclose(loss.item(), math.log(2.0), atol=1e-12)


def test_cross_entropy_matches_manual(rng):
    logits = rng.normal(size=(5, 3))
    labels = np.array([0, 2, 1, 1, 0])
    loss = T.cross_entropy(Tensor(logits), labels).item()
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    expected = -np.log(probs[np.arange(5), labels]).mean()
    np.testing.assert_allclose(loss, expected, atol=1e-12)


def test_cross_entropy_rejects_bad_labels(rng):
    logits = Tensor(rng.normal(size=(3, 2)))
    with pytest.raises(ShapeError):
        T.cross_entropy(logits, np.array([0, 1, 2]))
    with pytest.raises(ShapeError):
        T.cross_entropy(logits, np.array([0.0, 1.0, 1.0]))


class TestShapeOps:
    def test_reshape_roundtrip(self, rng):
        x = rng.normal(size=(2, 3, 4))
        back = T.reshape(T.reshape(Tensor(x), (6, 4)), (2, 3, 4))
        np.testing.assert_array_equal(back.data, x)

    def test_reshape_bad_size(self, rng):
        with pytest.raises(ShapeError):
            T.reshape(Tensor(rng.normal(size=(2, 3))), (4, 2))

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_transpose_involution(self, seed):
        x = np.random.default_rng(seed).normal(size=(2, 3, 5))
        axes = tuple(np.random.default_rng(seed + 1).permutation(3))
        inverse = tuple(np.argsort(axes))
        out = T.transpose(T.transpose(Tensor(x), axes), inverse)
        np.testing.assert_array_equal(out.data, x)

    def test_split_concat_roundtrip(self, rng):
        x = rng.normal(size=(2, 10, 3))
        parts = T.split(Tensor(x), [4, 6], axis=1)
        assert parts[0].shape == (2, 4, 3) and parts[1].shape == (2, 6, 3)
        back = T.concat(parts, axis=1)
        np.testing.assert_array_equal(back.data, x)

    def test_split_bad_sizes(self, rng):
        with pytest.raises(ShapeError):
            T.split(Tensor(rng.normal(size=(2, 10))), [4, 5], axis=1)


class TestPurity:
    """Operators never mutate inputs; calls are reproducible bitwise."""

    def test_inputs_unchanged(self, rng):
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        x_copy, w_copy = x.copy(), w.copy()
        xt, wt = Tensor(x), Tensor(w)
        T.gelu(T.conv2d(xt, wt, stride=1, padding=1))
        np.testing.assert_array_equal(xt.data, x_copy)
        np.testing.assert_array_equal(wt.data, w_copy)

    def test_double_call_bitwise_equal(self, rng):
        x = Tensor(rng.normal(size=(3, 4, 6, 6)))
        w = Tensor(rng.normal(size=(4, 1, 3, 3)))
        a = T.dwconv2d(x, w, stride=1, padding=1)
        b = T.dwconv2d(x, w, stride=1, padding=1)
        assert np.array_equal(a.data, b.data)
        s1 = T.softmax(Tensor(x.data[0, 0]))
        s2 = T.softmax(Tensor(x.data[0, 0]))
        assert np.array_equal(s1.data, s2.data)


class TestMacCounter:
    def test_matmul_count(self, rng):
        with MacCounter() as counter:
            T.matmul(Tensor(rng.normal(size=(7, 5))), Tensor(rng.normal(size=(5, 3))))
        assert counter.total == 7 * 5 * 3

    def test_conv_counts(self, rng):
        with MacCounter() as counter:
            T.conv2d(Tensor(rng.normal(size=(2, 3, 8, 8))), Tensor(rng.normal(size=(4, 3, 3, 3))),
                     stride=1, padding=1)
        assert counter.total == 2 * 4 * 3 * 9 * 8 * 8
        with MacCounter() as counter:
            T.dwconv2d(Tensor(rng.normal(size=(1, 6, 8, 8))), Tensor(rng.normal(size=(6, 1, 2, 2))),
                       stride=2)
        assert counter.total == 6 * 4 * 4 * 4

    def test_elementwise_not_counted(self, rng):
        x = Tensor(rng.normal(size=(4, 4)))
        with MacCounter() as counter:
            T.gelu(T.mul(x, x))
            T.softmax(x)
            T.layernorm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        assert counter.total == 0
