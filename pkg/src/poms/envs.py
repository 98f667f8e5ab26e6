"""Deterministic desk-scale environments with behaviour-descriptor extraction.

Each environment simulates a batch of policies at once. Only elementwise
array arithmetic is used, so a rollout's result does not depend on which
other policies share its batch; splitting a batch across workers gives
bit-identical descriptors.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import ClassVar

import numpy as np

from .archive import GridSpec, bd_to_cell
from .errors import ConfigInvalid, ShapeMismatch
from .policy import PolicyShape, forward_batch


@dataclass
class Rollout:
    states: np.ndarray   # (T+1, observation_dim)
    actions: np.ndarray  # (T, action_dim)
    bd_raw: np.ndarray
    cell_index: tuple | None
    valid: bool


@dataclass
class _Trace:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)


class Env:
    name: ClassVar[str]
    observation_dim: ClassVar[int]
    action_dim: ClassVar[int]
    default_hidden: ClassVar[tuple[int, ...]] = (16, 16)

    def default_policy_shape(self, hidden=None) -> PolicyShape:
        hidden = self.default_hidden if hidden is None else hidden
        return PolicyShape(self.observation_dim, tuple(hidden), self.action_dim)

    def check_shape(self, shape: PolicyShape) -> None:
        if shape.input_dim != self.observation_dim or shape.output_dim != self.action_dim:
            raise ShapeMismatch(
                f"{self.name} needs a {self.observation_dim}->{self.action_dim} policy, "
                f"got {shape.input_dim}->{shape.output_dim}")

    def simulate(self, shape, thetas, trace=None):
        """Return raw descriptors ``(B, b)`` and a validity mask ``(B,)``."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        out = {"name": self.name}
        for f in fields(self):
            val = getattr(self, f.name)
            out[f.name] = val.to_dict() if isinstance(val, GridSpec) else val
        return out


@dataclass(frozen=True)
class PointKicker(Env):
    """Point mass on a line that may kick a ball once.

    The agent (position, velocity) is driven by an acceleration action for
    ``episode_length`` steps with explicit Euler, then freezes. The ball
    starts at rest ``ball_offset`` ahead of the agent; while it is still on
    the ground and the moving agent comes within ``kick_radius``, it is
    launched with velocity ``(kick_gain_x*v, kick_gain_y*|v|)``. The flight is
    integrated exactly under constant gravity (apex tracked analytically),
    ground contacts reflect the vertical velocity with ``restitution`` and
    scale the horizontal one by ``bounce_damping``; a ball whose rebound is
    slower than ``gravity*dt`` rests on the ground and rolls with the same
    per-step damping. Simulation ends when the ball speed drops below
    ``stop_speed`` or after ``max_ball_steps`` steps past the agent phase.

    Descriptor: (final ball x, maximum ball height).
    """
    name: ClassVar[str] = "point-kicker"
    observation_dim: ClassVar[int] = 6
    action_dim: ClassVar[int] = 1

    episode_length: int = 100
    action_clip: float = 5.0
    dt: float = 0.05
    ball_offset: float = 0.5
    kick_radius: float = 0.3
    kick_gain_x: float = 1.5
    kick_gain_y: float = 0.75
    gravity: float = 9.81
    restitution: float = 0.5
    bounce_damping: float = 0.9
    stop_speed: float = 0.01
    max_ball_steps: int = 2000
    grid: GridSpec = GridSpec.uniform([(0.0, 50.0), (0.0, 8.0)], [50, 20])

    def _ball_step(self, ball, moving):
        x, y, vx, vy, top = ball
        dt, g = self.dt, self.gravity
        vy_next = vy - g * dt
        y_next = y + vy * dt - 0.5 * g * dt * dt
        apex = np.where((vy > 0) & (vy_next <= 0), y + vy * vy / (2.0 * g), y_next)
        top_next = np.maximum(top, np.maximum(apex, y_next))
        x_next = x + vx * dt
        ground = y_next <= 0.0
        rebound = -self.restitution * vy_next
        rebound = np.where(rebound < g * dt, 0.0, rebound)
        vy_next = np.where(ground, rebound, vy_next)
        vx_next = np.where(ground, vx * self.bounce_damping, vx)
        y_next = np.where(ground, 0.0, y_next)
        new = (x_next, y_next, vx_next, vy_next, top_next)
        return tuple(np.where(moving, n, o) for n, o in zip(new, ball))

    def _moving(self, ball, kicked):
        _, _, vx, vy, _ = ball
        return kicked & (np.sqrt(vx * vx + vy * vy) >= self.stop_speed)

    def simulate(self, shape, thetas, trace=None):
        self.check_shape(shape)
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        bsz = thetas.shape[0]
        p = np.zeros(bsz)
        v = np.zeros(bsz)
        ball = (p + self.ball_offset, np.zeros(bsz), np.zeros(bsz), np.zeros(bsz), np.zeros(bsz))
        kicked = np.zeros(bsz, dtype=bool)
        finite = np.ones(bsz, dtype=bool)

        def observe():
            bx, by, bvx, bvy, _ = ball
            return np.stack([p, v, bx - p, by, bvx, bvy], axis=1)

        obs = observe()
        if trace is not None:
            trace.states.append(obs[0].copy())
        with np.errstate(invalid="ignore", over="ignore"):
            for _ in range(self.episode_length):
                a = np.clip(forward_batch(shape, thetas, obs)[:, 0], -self.action_clip, self.action_clip)
                if trace is not None:
                    trace.actions.append(np.array([a[0]]))
                ball = self._ball_step(ball, self._moving(ball, kicked))
                p, v = p + self.dt * v, v + self.dt * a
                kick = ~kicked & (np.abs(p - ball[0]) < self.kick_radius) & (v != 0.0)
                ball = (ball[0], ball[1],
                        np.where(kick, self.kick_gain_x * v, ball[2]),
                        np.where(kick, self.kick_gain_y * np.abs(v), ball[3]),
                        ball[4])
                kicked |= kick
                obs = observe()
                finite &= np.all(np.isfinite(obs), axis=1)
                if trace is not None:
                    trace.states.append(obs[0].copy())
            for _ in range(self.max_ball_steps):
                moving = self._moving(ball, kicked) & finite
                if not moving.any():
                    break
                ball = self._ball_step(ball, moving)
        bd = np.stack([ball[0], ball[4]], axis=1)
        valid = finite & np.all(np.isfinite(bd), axis=1)
        return bd, valid


@dataclass(frozen=True)
class ArmReacher(Env):
    """Planar 3-link kinematic arm with unit links driven by joint velocities.

    Descriptor: final end-effector position.
    """
    name: ClassVar[str] = "arm-reacher"
    observation_dim: ClassVar[int] = 8
    action_dim: ClassVar[int] = 3

    episode_length: int = 50
    action_clip: float = 1.0
    dt: float = 0.05
    grid: GridSpec = GridSpec.uniform([(-3.0, 3.0), (-3.0, 3.0)], [30, 30])

    @staticmethod
    def end_effector(q):
        """Forward kinematics for unit links; ``q`` has shape ``(..., 3)``."""
        q = np.asarray(q, dtype=np.float64)
        cum = np.cumsum(q, axis=-1)
        return np.stack([np.cos(cum).sum(axis=-1), np.sin(cum).sum(axis=-1)], axis=-1)

    def simulate(self, shape, thetas, trace=None):
        self.check_shape(shape)
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        q = np.zeros((thetas.shape[0], 3))
        finite = np.ones(thetas.shape[0], dtype=bool)

        def observe():
            ee = self.end_effector(q)
            return np.concatenate([np.cos(q), np.sin(q), ee], axis=1)

        obs = observe()
        if trace is not None:
            trace.states.append(obs[0].copy())
        with np.errstate(invalid="ignore", over="ignore"):
            for _ in range(self.episode_length):
                a = np.clip(forward_batch(shape, thetas, obs), -self.action_clip, self.action_clip)
                if trace is not None:
                    trace.actions.append(a[0].copy())
                q = q + self.dt * a
                obs = observe()
                finite &= np.all(np.isfinite(obs), axis=1)
                if trace is not None:
                    trace.states.append(obs[0].copy())
        bd = self.end_effector(q)
        return bd, finite & np.all(np.isfinite(bd), axis=1)


@dataclass(frozen=True)
class ProbeBD(Env):
    """No dynamics: the descriptor is the policy output at fixed probe inputs.

    Probe ``k`` is the ``k``-th unit vector of the observation space. Outputs
    for both probes are concatenated and truncated to the grid's
    dimensionality; no action clipping is applied.
    """
    name: ClassVar[str] = "probe-bd"
    observation_dim: ClassVar[int] = 2
    action_dim: ClassVar[int] = 1
    default_hidden: ClassVar[tuple[int, ...]] = ()

    n_probes: int = 2
    grid: GridSpec = GridSpec.uniform([(-3.0, 3.0), (-3.0, 3.0)], [20, 20])

    @property
    def probes(self) -> np.ndarray:
        return np.eye(self.n_probes, self.observation_dim)

    def simulate(self, shape, thetas, trace=None):
        self.check_shape(shape)
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        bsz = thetas.shape[0]
        outs = []
        for s in self.probes:
            obs = np.broadcast_to(s, (bsz, self.observation_dim))
            with np.errstate(invalid="ignore", over="ignore"):
                outs.append(forward_batch(shape, thetas, obs))
            if trace is not None:
                trace.states.append(s.copy())
                trace.actions.append(outs[-1][0].copy())
        bd = np.concatenate(outs, axis=1)[:, :len(self.grid.dims)]
        return bd, np.all(np.isfinite(bd), axis=1)


ENVS = {cls.name: cls for cls in (PointKicker, ArmReacher, ProbeBD)}


def make_env(name: str, **overrides) -> Env:
    if name not in ENVS:
        raise ConfigInvalid(f"env.name: unknown environment {name!r} (known: {sorted(ENVS)})")
    cls = ENVS[name]
    known = {f.name for f in fields(cls)}
    bad = set(overrides) - known
    if bad:
        raise ConfigInvalid(f"env.overrides: unknown field(s) {sorted(bad)} for {name}")
    if "grid" in overrides and not isinstance(overrides["grid"], GridSpec):
        overrides = {**overrides, "grid": GridSpec.from_dict(overrides["grid"])}
    return replace(cls(), **overrides)


def evaluate_batch(env: Env, shape: PolicyShape, thetas, workers: int = 1):
    """Simulate every row of ``thetas``; returns ``(bd_raw, valid)``.

    With ``workers > 1`` the batch is split into contiguous chunks evaluated
    on a thread pool; results are identical to the single-worker path.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    if workers <= 1 or thetas.shape[0] < 2:
        return env.simulate(shape, thetas)
    chunks = np.array_split(np.arange(thetas.shape[0]), min(workers, thetas.shape[0]))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda idx: env.simulate(shape, thetas[idx]), chunks))
    return np.concatenate([b for b, _ in parts]), np.concatenate([v for _, v in parts])


def evaluate(env: Env, shape: PolicyShape, theta) -> Rollout:
    """Single closed-loop rollout with its state/action trace."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (shape.n_params,):
        raise ShapeMismatch(f"theta has shape {theta.shape}, policy has {shape.n_params} params")
    trace = _Trace()
    bd, valid = env.simulate(shape, theta[None, :], trace=trace)
    cell = bd_to_cell(bd[0], env.grid) if valid[0] else None
    return Rollout(np.array(trace.states), np.array(trace.actions), bd[0], cell, bool(valid[0]))


def write_trace_csv(rollout: Rollout, path) -> None:
    """Dump a rollout as ``t, s0.., a0..`` rows (the final state has no action)."""
    s_dim = rollout.states.shape[1]
    a_dim = rollout.actions.shape[1] if rollout.actions.size else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"s{i}" for i in range(s_dim)] + [f"a{i}" for i in range(a_dim)])
        for t, s in enumerate(rollout.states):
            a = rollout.actions[t] if t < len(rollout.actions) else [math.nan] * a_dim
            w.writerow([t] + [repr(float(x)) for x in s] + [repr(float(x)) for x in a])
