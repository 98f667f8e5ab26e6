import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poms.envs import ArmReacher, PointKicker, ProbeBD, evaluate, evaluate_batch, make_env, write_trace_csv
from poms.errors import ConfigInvalid, ShapeMismatch
from poms.policy import PolicyShape, flatten


def constant_policy(shape, action):
    """All weights zero, output bias = ``action``: the policy ignores its input."""
    layers = [(np.zeros((fo, fi)), np.zeros(fo)) for fi, fo in shape.layer_dims]
    layers[-1] = (layers[-1][0], np.full(shape.output_dim, float(action)))
    return flatten(shape, layers)


class TestPointKicker:
    env = PointKicker()
    shape = env.default_policy_shape()

    def test_policy_size(self):
        assert self.shape.n_params == 401

    def test_no_action_no_kick(self):
        bd, valid = self.env.simulate(self.shape, constant_policy(self.shape, 0.0))
        assert valid[0]
        np.testing.assert_array_equal(bd[0], [self.env.ball_offset, 0.0])

    def test_backwards_never_kicks(self):
        bd, _ = self.env.simulate(self.shape, constant_policy(self.shape, -3.0))
        np.testing.assert_array_equal(bd[0], [self.env.ball_offset, 0.0])

    @pytest.mark.parametrize("accel", [0.5, 1.0, 2.0, 5.0, 50.0])
    def test_constant_push_apex_closed_form(self, accel):
        env = self.env
        a = min(accel, env.action_clip)
        # Euler: p_k = a dt^2 k(k-1)/2, v_k = a dt k; first k within kick radius of the ball
        k = next(k for k in range(1, env.episode_length + 1)
                 if abs(a * env.dt ** 2 * k * (k - 1) / 2 - env.ball_offset) < env.kick_radius)
        v = a * env.dt * k
        vy = env.kick_gain_y * v
        bd, _ = env.simulate(self.shape, constant_policy(self.shape, accel))
        assert bd[0, 1] == pytest.approx(vy * vy / (2 * env.gravity), rel=1e-12)
        # ball moves forward at least over its first flight, at most at launch speed forever
        first_flight = env.kick_gain_x * v * 2 * vy / env.gravity
        assert bd[0, 0] >= env.ball_offset + 0.9 * first_flight - env.kick_gain_x * v * env.dt
        assert bd[0, 0] <= env.ball_offset + env.kick_gain_x * v * env.dt * (env.max_ball_steps + env.episode_length)

    def test_ball_comes_to_rest(self):
        env = self.env
        bd1, _ = env.simulate(self.shape, constant_policy(self.shape, 2.0))
        longer = PointKicker(max_ball_steps=10 * env.max_ball_steps)
        bd2, _ = longer.simulate(self.shape, constant_policy(self.shape, 2.0))
        np.testing.assert_array_equal(bd1, bd2)

    def test_rows_independent_of_batch(self):
        rng = np.random.default_rng(0)
        thetas = rng.uniform(-1, 1, size=(32, self.shape.n_params))
        full, valid = self.env.simulate(self.shape, thetas)
        for k in (0, 7, 31):
            single, _ = self.env.simulate(self.shape, thetas[k])
            np.testing.assert_array_equal(single[0], full[k])
        assert valid.all()

    @pytest.mark.parametrize("workers", [2, 3, 8])
    def test_workers_bit_identical(self, workers):
        thetas = np.random.default_rng(1).uniform(-1, 1, size=(25, self.shape.n_params))
        ref, ref_valid = evaluate_batch(self.env, self.shape, thetas, 1)
        out, out_valid = evaluate_batch(self.env, self.shape, thetas, workers)
        np.testing.assert_array_equal(out, ref)
        np.testing.assert_array_equal(out_valid, ref_valid)

    def test_non_finite_params_invalid(self):
        theta = constant_policy(self.shape, 1.0)
        theta[-1] = np.nan
        _, valid = self.env.simulate(self.shape, theta)
        assert not valid[0]

    def test_wrong_shape(self):
        with pytest.raises(ShapeMismatch):
            self.env.simulate(PolicyShape(5, (4,), 1), np.zeros(PolicyShape(5, (4,), 1).n_params))


class TestArmReacher:
    env = ArmReacher()
    shape = env.default_policy_shape()

    def test_forward_kinematics(self):
        ee = ArmReacher.end_effector(np.array([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(ee, [3.0, 0.0])
        ee = ArmReacher.end_effector(np.array([math.pi / 2, -math.pi / 2, 0.0]))
        np.testing.assert_allclose(ee, [2.0, 1.0], atol=1e-12)

    @given(st.floats(-3.0, 3.0))
    @settings(max_examples=20, deadline=None)
    def test_constant_joint_velocity(self, c):
        env = self.env
        q = env.episode_length * env.dt * np.clip(c, -env.action_clip, env.action_clip)
        expected = [math.cos(q) + math.cos(2 * q) + math.cos(3 * q),
                    math.sin(q) + math.sin(2 * q) + math.sin(3 * q)]
        bd, valid = env.simulate(self.shape, constant_policy(self.shape, c))
        assert valid[0]
        np.testing.assert_allclose(bd[0], expected, atol=1e-9)

    def test_bd_within_reach(self):
        thetas = np.random.default_rng(0).uniform(-1, 1, size=(50, self.shape.n_params))
        bd, _ = self.env.simulate(self.shape, thetas)
        assert np.all(np.linalg.norm(bd, axis=1) <= 3.0 + 1e-12)


class TestProbeBD:
    env = ProbeBD()
    shape = env.default_policy_shape()

    @given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
    def test_linear_policy_closed_form(self, theta):
        w0, w1, b = theta
        bd, valid = self.env.simulate(self.shape, np.array(theta))
        assert valid[0]
        np.testing.assert_allclose(bd[0], [w0 + b, w1 + b])


class TestHelpers:
    def test_make_env_overrides(self):
        env = make_env("point-kicker", action_clip=10.0)
        assert env.action_clip == 10.0

    def test_make_env_grid_dict(self):
        env = make_env("probe-bd", grid=[{"lower": -1.0, "upper": 1.0, "bins": 4},
                                         {"lower": -1.0, "upper": 1.0, "bins": 4}])
        assert env.grid.n_cells == 16

    @pytest.mark.parametrize("name,kw", [("nope", {}), ("arm-reacher", {"gravity": 1.0})])
    def test_make_env_invalid(self, name, kw):
        with pytest.raises(ConfigInvalid):
            make_env(name, **kw)

    def test_evaluate_and_trace(self, tmp_path):
        env = PointKicker(episode_length=10)
        shape = env.default_policy_shape()
        ro = evaluate(env, shape, constant_policy(shape, 1.0))
        assert ro.states.shape == (11, 6) and ro.actions.shape == (10, 1)
        assert ro.valid and ro.cell_index is not None
        write_trace_csv(ro, tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["t", "s0", "s1", "s2", "s3", "s4", "s5", "a0"]
        assert len(rows) == 12

    def test_env_dict(self):
        d = PointKicker().to_dict()
        assert d["name"] == "point-kicker" and d["action_clip"] == 5.0
