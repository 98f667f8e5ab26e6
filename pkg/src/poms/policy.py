"""Deterministic MLP policies over a flat parameter vector.

Parameter layout: for each layer in order, the weight matrix of shape
``(fan_out, fan_in)`` in row-major order followed by the bias vector.
Hidden layers use tanh, the output layer is affine.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, LengthMismatch, NonFiniteParams


@dataclass(frozen=True)
class PolicyShape:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        dims = (self.input_dim, *self.hidden, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer widths must be >= 1, got {dims}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """``(fan_in, fan_out)`` for every layer."""
        dims = (self.input_dim, *self.hidden, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @cached_property
    def n_params(self) -> int:
        return sum((fi + 1) * fo for fi, fo in self.layer_dims)

    @cached_property
    def _offsets(self) -> list[tuple[int, int, int]]:
        out, off = [], 0
        for fi, fo in self.layer_dims:
            out.append((off, off + fi * fo, off + fi * fo + fo))
            off += (fi + 1) * fo
        return out

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden),
                "output_dim": self.output_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyShape":
        return cls(int(d["input_dim"]), tuple(d.get("hidden", ())), int(d["output_dim"]))


def flatten(shape: PolicyShape, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    if len(layers) != len(shape.layer_dims):
        raise LengthMismatch(f"expected {len(shape.layer_dims)} layers, got {len(layers)}")
    parts = []
    for (w, b), (fi, fo) in zip(layers, shape.layer_dims):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if w.shape != (fo, fi) or b.shape != (fo,):
            raise LengthMismatch(
                f"layer expects W {(fo, fi)} and b {(fo,)}, got {w.shape} and {b.shape}")
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(shape: PolicyShape, params) -> list[tuple[np.ndarray, np.ndarray]]:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (shape.n_params,):
        raise LengthMismatch(f"expected {shape.n_params} parameters, got {params.shape}")
    layers = []
    for (start, mid, end), (fi, fo) in zip(shape._offsets, shape.layer_dims):
        layers.append((params[start:mid].reshape(fo, fi), params[mid:end]))
    return layers


def _affine(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Elementwise accumulation in a fixed order so every row's result is
    # independent of the batch it is evaluated in.
    acc = b.copy()
    for k in range(x.shape[1]):
        acc += w[:, :, k] * x[:, k:k + 1]
    return acc


def forward_batch(shape: PolicyShape, params, observations) -> np.ndarray:
    """Evaluate ``B`` policies on ``B`` observations; returns ``(B, output_dim)``."""
    params = np.asarray(params, dtype=np.float64)
    x = np.asarray(observations, dtype=np.float64)
    if params.ndim != 2 or params.shape[1] != shape.n_params:
        raise LengthMismatch(f"expected (B, {shape.n_params}) parameters, got {params.shape}")
    if x.ndim != 2 or x.shape != (params.shape[0], shape.input_dim):
        raise DimensionMismatch(
            f"expected observations of shape ({params.shape[0]}, {shape.input_dim}), got {x.shape}")
    n_layers = len(shape.layer_dims)
    bsz = params.shape[0]
    for i, ((start, mid, end), (fi, fo)) in enumerate(zip(shape._offsets, shape.layer_dims)):
        w = params[:, start:mid].reshape(bsz, fo, fi)
        x = _affine(w, params[:, mid:end], x)
        if i < n_layers - 1:
            x = np.tanh(x)
    return x


def forward(shape: PolicyShape, params, observation) -> np.ndarray:
    """Action of a single policy for a single observation."""
    params = np.asarray(params, dtype=np.float64)
    observation = np.asarray(observation, dtype=np.float64)
    if params.shape != (shape.n_params,):
        raise LengthMismatch(f"expected {shape.n_params} parameters, got {params.shape}")
    if observation.shape != (shape.input_dim,):
        raise DimensionMismatch(
            f"observation has shape {observation.shape}, policy expects ({shape.input_dim},)")
    if not np.all(np.isfinite(params)):
        raise NonFiniteParams("policy parameters contain non-finite values")
    return forward_batch(shape, params[None, :], observation[None, :])[0]


def init_uniform(shape: PolicyShape, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=shape.n_params)


def glorot_layers(layer_dims, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """Xavier-Glorot normal weights ``N(0, 2/(fan_in+fan_out))`` and zero biases."""
    layers = []
    for fi, fo in layer_dims:
        std = np.sqrt(2.0 / (fi + fo))
        layers.append((rng.normal(0.0, std, size=(fo, fi)), np.zeros(fo)))
    return layers


def init_glorot(shape: PolicyShape, rng: np.random.Generator) -> np.ndarray:
    return flatten(shape, glorot_layers(shape.layer_dims, rng))
