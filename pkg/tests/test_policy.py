import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poms.errors import DimensionMismatch, LengthMismatch, NonFiniteParams
from poms.policy import (PolicyShape, flatten, forward, forward_batch, glorot_layers, init_glorot,
                         init_uniform, unflatten)

shapes = st.builds(PolicyShape, st.integers(1, 5), st.lists(st.integers(1, 6), max_size=3).map(tuple),
                   st.integers(1, 3))


def reference_forward(shape, theta, obs):
    """Plain matrix-vector MLP used as the oracle."""
    x = np.asarray(obs, dtype=np.float64)
    layers = unflatten(shape, theta)
    for i, (w, b) in enumerate(layers):
        x = w @ x + b
        if i < len(layers) - 1:
            x = np.tanh(x)
    return x


class TestShape:
    def test_point_kicker_param_count(self):
        # 6*16+16 + 16*16+16 + 16*1+1
        assert PolicyShape(6, (16, 16), 1).n_params == 401

    def test_no_hidden(self):
        assert PolicyShape(2, (), 1).n_params == 3

    def test_rejects_zero_width(self):
        with pytest.raises(ValueError):
            PolicyShape(2, (0,), 1)

    def test_dict_roundtrip(self):
        s = PolicyShape(3, (4, 5), 2)
        assert PolicyShape.from_dict(s.to_dict()) == s


class TestLayout:
    @given(shapes, st.integers(0, 2**31 - 1))
    def test_flatten_unflatten_roundtrip(self, shape, seed):
        theta = np.random.default_rng(seed).standard_normal(shape.n_params)
        np.testing.assert_array_equal(flatten(shape, unflatten(shape, theta)), theta)

    def test_weight_then_bias_row_major(self):
        shape = PolicyShape(2, (), 2)
        layers = unflatten(shape, np.arange(6.0))
        np.testing.assert_array_equal(layers[0][0], [[0.0, 1.0], [2.0, 3.0]])
        np.testing.assert_array_equal(layers[0][1], [4.0, 5.0])

    def test_wrong_length(self):
        with pytest.raises(LengthMismatch):
            unflatten(PolicyShape(2, (), 1), np.zeros(4))


class TestForward:
    @settings(max_examples=50, deadline=None)
    @given(shapes, st.integers(0, 2**31 - 1))
    def test_matches_reference(self, shape, seed):
        rng = np.random.default_rng(seed)
        theta = rng.standard_normal(shape.n_params)
        obs = rng.standard_normal(shape.input_dim)
        np.testing.assert_allclose(forward(shape, theta, obs), reference_forward(shape, theta, obs),
                                   rtol=1e-12, atol=1e-12)

    def test_batch_rows_independent_of_batch(self):
        shape = PolicyShape(6, (16, 16), 1)
        rng = np.random.default_rng(0)
        thetas = rng.standard_normal((9, shape.n_params))
        obs = rng.standard_normal((9, 6))
        full = forward_batch(shape, thetas, obs)
        for k in range(9):
            single = forward_batch(shape, thetas[k:k + 1], obs[k:k + 1])
            np.testing.assert_array_equal(single[0], full[k])

    def test_non_finite_rejected(self):
        shape = PolicyShape(2, (), 1)
        with pytest.raises(NonFiniteParams):
            forward(shape, np.array([np.nan, 0.0, 0.0]), np.zeros(2))

    def test_observation_shape(self):
        with pytest.raises(DimensionMismatch):
            forward(PolicyShape(2, (), 1), np.zeros(3), np.zeros(3))


class TestInit:
    def test_uniform_bounds(self):
        theta = init_uniform(PolicyShape(6, (16, 16), 1), np.random.default_rng(0))
        assert theta.min() >= -1.0 and theta.max() < 1.0

    def test_glorot_statistics(self):
        rng = np.random.default_rng(1)
        (w, b), = glorot_layers([(300, 200)], rng)
        assert not b.any()
        assert w.var() == pytest.approx(2.0 / 500, rel=0.02)
        assert abs(w.mean()) < 0.002

    def test_glorot_flat_length(self):
        shape = PolicyShape(6, (16, 16), 1)
        assert init_glorot(shape, np.random.default_rng(0)).shape == (shape.n_params,)
