import math

import numpy as np
import pytest

from vit_surgeon.tensor_ops import (
    activation,
    bilinear_resize,
    l2_normalize_rows,
    layer_norm,
    linear,
    matmul,
    nearest_resize,
    softmax_rows,
)


def naive_matmul(a, b):
    """Triple-loop float64 oracle."""
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self, rng):
        b = rng.standard_normal((3, 5)).astype(np.float32)
        assert np.array_equal(matmul(np.eye(3, dtype=np.float32), b), b)

    def test_hand_2x2(self):
        a = np.array([[1, 2], [3, 4]], dtype=np.float32)
        b = np.array([[0], [1]], dtype=np.float32)
        assert np.array_equal(matmul(a, b), np.array([[2], [4]], dtype=np.float32))

    def test_matches_triple_loop_oracle(self, rng):
        for _ in range(5):
            a = rng.standard_normal((8, 8)).astype(np.float32)
            b = rng.standard_normal((8, 8)).astype(np.float32)
            expected = naive_matmul(a, b)
            got = matmul(a, b).astype(np.float64)
            assert np.max(np.abs(got - expected) / (np.abs(expected) + 1e-30)) < 1e-6

    def test_oracle_on_random_small_shapes(self, rng):
        for _ in range(10):
            m, k, n = rng.integers(1, 17, size=3)
            a = rng.standard_normal((m, k)).astype(np.float32)
            b = rng.standard_normal((k, n)).astype(np.float32)
            assert np.allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-6, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            matmul(np.zeros((2, 3), np.float32), np.zeros((2, 3), np.float32))

    def test_identity_associativity(self, rng):
        a = rng.standard_normal((4, 4)).astype(np.float32)
        eye = np.eye(4, dtype=np.float32)
        assert np.array_equal(matmul(matmul(a, eye), eye), matmul(a, matmul(eye, eye)))


class TestLinear:
    def test_matches_matmul_transpose(self, rng):
        x = rng.standard_normal((3, 4)).astype(np.float32)
        w = rng.standard_normal((5, 4)).astype(np.float32)
        b = rng.standard_normal(5).astype(np.float32)
        expected = x.astype(np.float64) @ w.astype(np.float64).T + b
        assert np.allclose(linear(x, w, b), expected, atol=1e-6)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            linear(np.zeros((2, 3), np.float32), np.zeros((4, 5), np.float32))


class TestSoftmax:
    def test_symmetric_pair(self):
        out = softmax_rows(np.array([[0.0, 0.0]], dtype=np.float32))
        assert np.allclose(out, [[0.5, 0.5]], atol=1e-7)

    def test_log_two(self):
        out = softmax_rows(np.array([[math.log(2.0), 0.0]], dtype=np.float32))
        assert np.allclose(out, [[2 / 3, 1 / 3]], atol=1e-6)

    def test_no_overflow_on_large_inputs(self):
        out = softmax_rows(np.array([[1000.0, 0.0]], dtype=np.float32))
        assert np.all(np.isfinite(out))
        assert np.allclose(out, [[1.0, 0.0]], atol=1e-12)

    def test_rows_sum_to_one_property(self, rng):
        for _ in range(20):
            x = (rng.standard_normal((6, 9)) * rng.uniform(0.1, 50)).astype(np.float32)
            sums = softmax_rows(x).sum(axis=1)
            assert np.all(np.abs(sums - 1.0) < 1e-6)
            assert np.all(softmax_rows(x) >= 0.0)


class TestLayerNorm:
    def test_already_normalized(self):
        x = np.array([[1.0, -1.0]], dtype=np.float32)
        out = layer_norm(x, np.ones(2, np.float32), np.zeros(2, np.float32), eps=1e-12)
        assert np.allclose(out, x, atol=1e-5)

    def test_constant_row_maps_to_beta(self):
        x = np.full((1, 3), 5.0, dtype=np.float32)
        beta = np.array([0.3, -0.1, 2.0], dtype=np.float32)
        out = layer_norm(x, np.ones(3, np.float32), beta, eps=1e-5)
        assert np.allclose(out, beta[None, :], atol=1e-7)

    def test_matches_direct_formula(self, rng):
        x = rng.standard_normal((4, 16)).astype(np.float32)
        gamma = rng.standard_normal(16).astype(np.float32)
        beta = rng.standard_normal(16).astype(np.float32)
        x64 = x.astype(np.float64)
        mu = x64.mean(axis=1, keepdims=True)
        var = ((x64 - mu) ** 2).mean(axis=1, keepdims=True)
        expected = (x64 - mu) / np.sqrt(var + 1e-5) * gamma + beta
        assert np.max(np.abs(layer_norm(x, gamma, beta) - expected)) < 1e-6

    def test_standardization_invariant(self, rng):
        x = rng.standard_normal((8, 32)).astype(np.float32)
        out = layer_norm(x, np.ones(32, np.float32), np.zeros(32, np.float32)).astype(np.float64)
        assert np.all(np.abs(out.mean(axis=1)) < 1e-5)
        assert np.all(np.abs(out.var(axis=1) - 1.0) < 1e-4)

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError):
            layer_norm(np.zeros((1, 2), np.float32), np.ones(2, np.float32),
                       np.zeros(2, np.float32), eps=0.0)


class TestActivation:
    def test_zero(self):
        for kind in ("quick-gelu", "exact-gelu"):
            assert activation(np.zeros(3, np.float32), kind)[0] == 0.0

    def test_quick_gelu_at_one(self):
        expected = 1.0 / (1.0 + math.exp(-1.702))
        got = activation(np.array([1.0], np.float32), "quick-gelu")[0]
        assert abs(got - expected) < 1e-6

    def test_quick_gelu_saturates(self):
        got = activation(np.array([-10.0, -1000.0], np.float32), "quick-gelu")
        assert np.all(np.abs(got) < 1e-3)
        assert np.all(np.isfinite(got))

    def test_exact_gelu_matches_cdf(self, rng):
        x = rng.standard_normal(32).astype(np.float32)
        expected = 0.5 * x.astype(np.float64) * (
            1.0 + np.vectorize(math.erf)(x.astype(np.float64) / math.sqrt(2.0))
        )
        assert np.allclose(activation(x, "exact-gelu"), expected, atol=1e-6)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            activation(np.zeros(1, np.float32), "relu")


class TestL2Normalize:
    def test_three_four_five(self):
        out = l2_normalize_rows(np.array([[3.0, 4.0]], np.float32))
        assert np.allclose(out, [[0.6, 0.8]], atol=1e-7)

    def test_unit_row_unchanged(self):
        x = np.array([[0.0, 1.0]], np.float32)
        assert np.allclose(l2_normalize_rows(x), x, atol=1e-7)

    def test_zero_row_passthrough(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0]], np.float32)
        out = l2_normalize_rows(x)
        assert np.array_equal(out[0], np.zeros(2, np.float32))
        assert np.allclose(np.linalg.norm(out[1]), 1.0, atol=1e-6)


class TestBilinearResize:
    def test_single_pixel_broadcast(self):
        x = np.full((1, 1, 2), 3.5, np.float32)
        out = bilinear_resize(x, 4, 5)
        assert out.shape == (4, 5, 2)
        assert np.all(out == 3.5)

    def test_hand_1d_case(self):
        x = np.array([[[0.0], [2.0]]], np.float32)  # 1x2 row
        out = bilinear_resize(x, 1, 4)
        assert np.allclose(out[0, :, 0], [0.0, 0.5, 1.5, 2.0], atol=1e-7)

    def test_identity_is_bitwise(self, rng):
        x = rng.standard_normal((5, 7, 3)).astype(np.float32)
        assert np.array_equal(bilinear_resize(x, 5, 7), x)

    def test_constant_input_exact(self, rng):
        x = np.full((3, 4, 2), -1.25, np.float32)
        assert np.all(bilinear_resize(x, 9, 11) == -1.25)

    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            bilinear_resize(np.zeros((2, 2, 1), np.float32), 0, 3)


class TestNearestResize:
    def test_identity(self, rng):
        x = rng.integers(0, 9, size=(4, 6)).astype(np.uint8)
        assert np.array_equal(nearest_resize(x, 4, 6), x)

    def test_upscale_blocks(self):
        x = np.array([[0, 1], [2, 3]], dtype=np.uint8)
        out = nearest_resize(x, 4, 4)
        assert np.array_equal(out, np.array([[0, 0, 1, 1], [0, 0, 1, 1],
                                             [2, 2, 3, 3], [2, 2, 3, 3]], dtype=np.uint8))
