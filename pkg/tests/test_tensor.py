import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slotstream import (
    LayerNormParams,
    LinearMap,
    NumericError,
    ParameterError,
    Rng,
    ShapeError,
    apply_linear,
    layer_norm,
    matmul,
    sample_gaussian,
    sigmoid,
)
from slotstream.tensor import column_sums, standard_normal_matrix

from .oracles import column_sums_loop, layer_norm_rows_loop, matmul_triple_loop, row_moments, sigmoid_scalar


def bits(a):
    return np.asarray(a).tobytes()


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.5, -2.0], [0.25, 7.0]])
        assert bits(matmul(np.eye(2), a)) == bits(a)

    def test_zero(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        z = np.zeros((2, 1))
        assert bits(matmul(a, z)) == bits(np.zeros((2, 1)))

    def test_matches_triple_loop_oracle_exactly(self):
        rng = np.random.default_rng(42)
        a = rng.standard_normal((7, 5))
        b = rng.standard_normal((5, 3))
        assert bits(matmul(a, b)) == bits(matmul_triple_loop(a, b))

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_rejects_nan(self):
        with pytest.raises(NumericError):
            matmul(np.array([[np.nan, 1.0]]), np.ones((2, 1)))

    @pytest.mark.parametrize("seed", range(5))
    def test_associativity_within_tolerance(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((4, 6))
        b = rng.standard_normal((6, 5))
        c = rng.standard_normal((5, 3))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert np.max(np.abs(left - right) / (1.0 + np.abs(right))) < 1e-10


class TestApplyLinear:
    def test_identity_weight(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((5, 3))
        m = LinearMap(np.eye(3))
        assert bits(apply_linear(m, x)) == bits(x)

    def test_zero_input_gives_bias_rows(self):
        bias = np.array([1.0, -2.0, 0.5])
        m = LinearMap(np.zeros((4, 3)), bias)
        out = apply_linear(m, np.zeros((6, 4)))
        assert np.array_equal(out, np.tile(bias, (6, 1)))

    def test_row_locality_is_bitwise(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((8, 4))
        m = LinearMap(rng.standard_normal((4, 5)), rng.standard_normal(5))
        perm = rng.permutation(8)
        assert bits(apply_linear(m, x[perm])) == bits(apply_linear(m, x)[perm])

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            apply_linear(LinearMap(np.ones((3, 2))), np.ones((4, 4)))

    def test_bias_length_checked(self):
        with pytest.raises(ShapeError):
            LinearMap(np.ones((3, 2)), np.ones(3))


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        p = LayerNormParams.identity(4)
        out = layer_norm(p, np.full((2, 4), 3.7))
        assert np.allclose(out, 0.0)

    def test_symmetric_row_small_epsilon(self):
        p = LayerNormParams(np.ones(2), np.zeros(2), epsilon=1e-12)
        out = layer_norm(p, np.array([[-1.0, 1.0]]))
        assert np.allclose(out, [[-1.0, 1.0]], atol=1e-6)

    def test_row_moments_oracle(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 8)) * 3.0 + 1.0
        p = LayerNormParams(np.ones(8), np.zeros(8), epsilon=1e-12)
        out = layer_norm(p, x)
        for row in out:
            mean, var = row_moments(row)
            assert abs(mean) < 1e-10
            assert abs(var - 1.0) < 1e-10

    def test_matches_loop_oracle_exactly(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((5, 6))
        gain = rng.standard_normal(6)
        bias = rng.standard_normal(6)
        p = LayerNormParams(gain, bias)
        assert bits(layer_norm(p, x)) == bits(layer_norm_rows_loop(x, gain, bias, p.epsilon))

    def test_row_locality_is_bitwise(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((7, 5))
        p = LayerNormParams(rng.standard_normal(5), rng.standard_normal(5))
        perm = rng.permutation(7)
        assert bits(layer_norm(p, x[perm])) == bits(layer_norm(p, x)[perm])

    def test_epsilon_must_be_positive(self):
        with pytest.raises(ParameterError):
            LayerNormParams(np.ones(2), np.zeros(2), epsilon=0.0)


class TestSigmoid:
    def test_zero_maps_to_half(self):
        assert sigmoid(np.zeros((1, 1)))[0, 0] == 0.5

    def test_symmetry_identity(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 4)) * 5
        assert np.all(np.abs(sigmoid(-x) - (1.0 - sigmoid(x))) <= 1e-15)

    def test_saturation_is_finite_and_in_range(self):
        out = sigmoid(np.array([[-100.0, 100.0, -1e6, 1e6]]))
        assert np.isfinite(out).all()
        assert ((out >= 0.0) & (out <= 1.0)).all()

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((3, 5)) * 20
        out = sigmoid(x)
        for i in range(3):
            for j in range(5):
                assert out[i, j] == sigmoid_scalar(x[i, j])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-700, 700), min_size=1, max_size=20))
    def test_range_and_monotonicity(self, values):
        x = np.array([sorted(values)])
        out = sigmoid(x)
        assert ((out >= 0.0) & (out <= 1.0)).all()
        assert np.all(np.diff(out[0]) >= 0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=20))
    def test_strictly_open_range_before_saturation(self, values):
        # float64 saturates to exactly 0.0/1.0 past |x| ~ 37; below that the
        # range is strictly open.
        out = sigmoid(np.array([values]))
        assert ((out > 0.0) & (out < 1.0)).all()


class TestColumnSums:
    def test_matches_loop_oracle_exactly(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((50, 7))
        assert bits(column_sums(x)) == bits(column_sums_loop(x))


class TestGaussianSampling:
    def test_degenerate_sigma_returns_mu(self):
        rng = Rng(1)
        mu = np.array([2.0, -3.0, 0.5])
        out = sample_gaussian(rng, 4, 3, mu, np.full(3, 1e-300))
        assert np.allclose(out, np.tile(mu, (4, 1)), atol=1e-290)

    def test_same_seed_bit_exact(self):
        mu, sigma = np.zeros(4), np.ones(4)
        a = sample_gaussian(Rng(99), 6, 4, mu, sigma)
        b = sample_gaussian(Rng(99), 6, 4, mu, sigma)
        assert bits(a) == bits(b)

    def test_sequential_draws_differ(self):
        rng = Rng(99)
        mu, sigma = np.zeros(4), np.ones(4)
        a = sample_gaussian(rng, 2, 4, mu, sigma)
        b = sample_gaussian(rng, 2, 4, mu, sigma)
        assert bits(a) != bits(b)

    def test_monte_carlo_moments(self):
        n = 100_000
        mu, sigma = np.array([0.7]), np.array([1.3])
        out = sample_gaussian(Rng(2024), n, 1, mu, sigma)
        assert abs(out.mean() - 0.7) < 4 * 1.3 / math.sqrt(n)
        assert abs(out.var() - 1.3**2) < 0.05 * 1.3**2

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ParameterError):
            sample_gaussian(Rng(0), 2, 2, np.zeros(2), np.array([1.0, 0.0]))

    def test_keyed_draw_extends_rows(self):
        a = standard_normal_matrix(7, 5, 3)
        b = standard_normal_matrix(7, 9, 3)
        assert bits(a) == bits(b[:5])


class TestRng:
    def test_uint_stream_reproducible(self):
        a = [Rng(5).next_uint64() for _ in range(1)]
        r1, r2 = Rng(5), Rng(5)
        assert [r1.next_uint64() for _ in range(10)] == [r2.next_uint64() for _ in range(10)]
        assert a[0] == Rng(5).next_uint64()

    def test_permutation_is_a_permutation(self):
        perm = Rng(17).permutation(100)
        assert sorted(perm.tolist()) == list(range(100))

    def test_next_below_bounds(self):
        rng = Rng(3)
        draws = [rng.next_below(7) for _ in range(200)]
        assert min(draws) >= 0 and max(draws) < 7
        assert len(set(draws)) == 7

    def test_derive_changes_stream(self):
        base = Rng(5)
        child = base.derive(1)
        assert Rng(5).next_uint64() != child.next_uint64()
