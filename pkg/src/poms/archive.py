"""Grid archive keyed by discretised behaviour descriptors.

Insertion is diversity-only: a vacant cell is always filled, an occupied cell
is taken over by the newcomer on a fair coin flip.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyArchive, NonFiniteDescriptor

SNAPSHOT_FORMAT = "poms-archive"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class ContinuousDim:
    lower: float
    upper: float
    bins: int

    def __post_init__(self):
        if self.bins < 1:
            raise ValueError("bin count must be >= 1")
        if not self.lower < self.upper:
            raise ValueError(f"lower bound {self.lower} must be < upper bound {self.upper}")

    @property
    def size(self) -> int:
        return self.bins

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "bins": self.bins}


@dataclass(frozen=True)
class CategoricalDim:
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("category count must be >= 1")

    @property
    def size(self) -> int:
        return self.count

    def to_dict(self) -> dict:
        return {"categories": self.count}


@dataclass(frozen=True)
class GridSpec:
    dims: tuple

    @classmethod
    def uniform(cls, bounds: Sequence[tuple[float, float]], bins) -> "GridSpec":
        if isinstance(bins, int):
            bins = [bins] * len(bounds)
        return cls(tuple(ContinuousDim(float(lo), float(hi), int(b))
                         for (lo, hi), b in zip(bounds, bins)))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(d.size for d in self.dims)

    @property
    def n_cells(self) -> int:
        return math.prod(self.shape)

    def to_dict(self) -> list:
        return [d.to_dict() for d in self.dims]

    @classmethod
    def from_dict(cls, dims: list) -> "GridSpec":
        out = []
        for d in dims:
            if "categories" in d:
                out.append(CategoricalDim(int(d["categories"])))
            else:
                out.append(ContinuousDim(float(d["lower"]), float(d["upper"]), int(d["bins"])))
        return cls(tuple(out))


def bd_to_cell(bd_raw, spec: GridSpec) -> tuple[int, ...]:
    """Map a raw descriptor to its cell multi-index.

    Continuous dimensions are binned uniformly over ``[lower, upper)``;
    values outside the range saturate into the boundary bins. Categorical
    values are passed through (clipped to the valid range).
    """
    raw = np.asarray(bd_raw, dtype=np.float64).ravel()
    if raw.shape[0] != len(spec.dims):
        raise DimensionMismatch(f"descriptor has {raw.shape[0]} entries, grid has {len(spec.dims)} dims")
    if not np.all(np.isfinite(raw)):
        raise NonFiniteDescriptor(f"descriptor {raw.tolist()} is not finite")
    idx = []
    for value, dim in zip(raw, spec.dims):
        if isinstance(dim, ContinuousDim):
            b = math.floor((value - dim.lower) / (dim.upper - dim.lower) * dim.bins)
            idx.append(min(max(b, 0), dim.bins - 1))
        else:
            idx.append(min(max(int(value), 0), dim.count - 1))
    return tuple(idx)


class InsertOutcome(enum.Enum):
    INSERTED = "inserted"
    REPLACED_BY_COIN_FLIP = "replaced"
    REJECTED_BY_COIN_FLIP = "rejected"


@dataclass
class Cell:
    occupant: np.ndarray
    bd_raw: np.ndarray
    insert_eval_index: int


@dataclass
class Archive:
    spec: GridSpec
    cells: dict = field(default_factory=dict)
    # insertion order of occupied cells; uniform sampling indexes into it
    _keys: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self._keys)

    def insert(self, theta, bd_raw, rng: np.random.Generator, eval_index: int = 0,
               cell_index: tuple[int, ...] | None = None) -> InsertOutcome:
        key = cell_index if cell_index is not None else bd_to_cell(bd_raw, self.spec)
        cell = Cell(np.array(theta, dtype=np.float64),
                    np.array(bd_raw, dtype=np.float64).ravel(), int(eval_index))
        if key not in self.cells:
            self.cells[key] = cell
            self._keys.append(key)
            return InsertOutcome.INSERTED
        if rng.random() < 0.5:
            self.cells[key] = cell
            return InsertOutcome.REPLACED_BY_COIN_FLIP
        return InsertOutcome.REJECTED_BY_COIN_FLIP

    def sample_batch(self, n: int, rng: np.random.Generator) -> list[np.ndarray]:
        """``n`` occupants drawn uniformly with replacement."""
        if n == 0:
            return []
        if not self._keys:
            raise EmptyArchive("cannot sample from an empty archive")
        picks = rng.integers(0, len(self._keys), size=n)
        return [self.cells[self._keys[i]].occupant for i in picks]

    def coverage(self) -> float:
        return len(self._keys) / self.spec.n_cells

    def occupants(self) -> np.ndarray:
        return np.array([self.cells[k].occupant for k in self._keys])

    # -- persistence -----------------------------------------------------
    def to_dict(self, **metadata) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "grid": self.spec.to_dict(),
            **metadata,
            "cells": [
                {
                    "index": list(k),
                    "bd_raw": self.cells[k].bd_raw.tolist(),
                    "eval_index": self.cells[k].insert_eval_index,
                    "theta": self.cells[k].occupant.tolist(),
                }
                for k in self._keys
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Archive":
        if d.get("format") != SNAPSHOT_FORMAT or d.get("version") != SNAPSHOT_VERSION:
            raise ValueError("not a supported archive snapshot")
        archive = cls(GridSpec.from_dict(d["grid"]))
        for c in d["cells"]:
            key = tuple(int(i) for i in c["index"])
            archive.cells[key] = Cell(np.asarray(c["theta"], dtype=np.float64),
                                      np.asarray(c["bd_raw"], dtype=np.float64),
                                      int(c["eval_index"]))
            archive._keys.append(key)
        return archive

    def save(self, path, **metadata) -> None:
        Path(path).write_text(json.dumps(self.to_dict(**metadata)))

    @classmethod
    def load(cls, path) -> "Archive":
        return cls.from_dict(json.loads(Path(path).read_text()))
