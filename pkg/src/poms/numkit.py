"""Small dense linear-algebra and statistics kernel.

Everything here is a pure function of its inputs; random draws come from an
explicitly passed ``numpy.random.Generator``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import (
    DecompositionFailed,
    DimensionMismatch,
    EmptySample,
    InsufficientData,
    NotSymmetric,
    TooFewPoints,
)

JITTER_CAP = 1e-3
EXACT_MAX_N = 12


@dataclass(frozen=True)
class RankTestResult:
    u_statistic: float
    p_value: float
    method: str  # "exact" or "normal-approximation"


def cholesky(a, jitter_start: float = 1e-9) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of a symmetric PSD matrix with jitter escalation.

    Tries ``a + delta*I`` for ``delta`` in ``0, jitter_start, 10*jitter_start,
    ...`` up to ``1e-3`` and returns ``(L, delta)`` for the first success.
    Rows/columns that are exactly zero carry no variance; they get zero
    columns in ``L`` and are excluded from the jitter.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale > 0 and np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise NotSymmetric("matrix is not symmetric within 1e-10 relative")
    if not np.all(np.isfinite(a)):
        raise DecompositionFailed("matrix has non-finite entries")

    n = a.shape[0]
    live = np.flatnonzero(np.any(a != 0.0, axis=1))
    L = np.zeros_like(a)
    if live.size == 0:
        return L, 0.0
    sub = a[np.ix_(live, live)]
    sub = 0.5 * (sub + sub.T)

    deltas = [0.0]
    d = jitter_start
    while d <= JITTER_CAP * (1 + 1e-12):
        deltas.append(d)
        d *= 10.0
    eye = np.eye(live.size)
    for delta in deltas:
        try:
            Ls = np.linalg.cholesky(sub + delta * eye if delta else sub)
        except np.linalg.LinAlgError:
            continue
        if live.size == n:
            return Ls, delta
        L[np.ix_(live, live)] = Ls
        return L, delta
    raise DecompositionFailed(f"no jitter up to {JITTER_CAP:g} makes the matrix positive definite")


def sample_mvn(mean, chol_lower, rng: np.random.Generator) -> np.ndarray:
    """Draw ``mean + L @ u`` with ``u`` standard normal."""
    mean = np.asarray(mean, dtype=np.float64)
    chol_lower = np.asarray(chol_lower, dtype=np.float64)
    if chol_lower.ndim != 2 or chol_lower.shape[0] != mean.shape[0]:
        raise DimensionMismatch(
            f"mean has length {mean.shape[0]} but factor has shape {chol_lower.shape}")
    u = rng.standard_normal(chol_lower.shape[1])
    return mean + chol_lower @ u


def fit_line_slope(ys: Sequence[float]) -> float:
    """Least-squares slope of ``ys`` against ``0..n-1``."""
    y = np.asarray(ys, dtype=np.float64)
    n = y.shape[0]
    if n < 2:
        raise TooFewPoints("need at least two points to fit a line")
    x = np.arange(n, dtype=np.float64)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def midranks(values) -> np.ndarray:
    """1-based ranks with ties given the average of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sorted_v = v[order]
    ranks = np.empty(v.shape[0], dtype=np.float64)
    i = 0
    n = v.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def mann_whitney_u(a, b, alternative: str = "greater") -> RankTestResult:
    """Mann-Whitney U test of ``a`` against ``b``.

    ``u_statistic`` is U for sample ``a``. With ``alternative="greater"`` the
    alternative hypothesis is that values of ``a`` tend to be larger than
    values of ``b``. Exact permutation p-values (ties included) are used when
    ``len(a) + len(b) <= 12``; otherwise a tie-corrected normal approximation
    with continuity correction.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples must be non-empty")
    if alternative not in ("greater", "two-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    n1, n2 = a.size, b.size
    n = n1 + n2
    ranks = midranks(np.concatenate([a, b]))
    offset = n1 * (n1 + 1) / 2.0
    u = float(ranks[:n1].sum() - offset)

    if n <= EXACT_MAX_N:
        idx = np.array(list(combinations(range(n), n1)), dtype=np.intp)
        null_u = ranks[idx].sum(axis=1) - offset
        # rank sums are multiples of 0.5, compare with a half-step guard
        p_ge = float(np.mean(null_u >= u - 1e-9))
        if alternative == "greater":
            p = p_ge
        else:
            p_le = float(np.mean(null_u <= u + 1e-9))
            p = min(1.0, 2.0 * min(p_ge, p_le))
        return RankTestResult(u, p, "exact")

    mu = n1 * n2 / 2.0
    _, counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(counts ** 3 - counts)) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return RankTestResult(u, 1.0, "normal-approximation")
    sd = math.sqrt(var)
    if alternative == "greater":
        z = (u - mu - 0.5) / sd
        p = 0.5 * math.erfc(z / math.sqrt(2.0))
    else:
        z = (abs(u - mu) - 0.5) / sd
        p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return RankTestResult(u, min(max(p, 0.0), 1.0), "normal-approximation")


def pca_fit(data, latent_dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Principal components of ``data`` (rows are samples) via thin SVD.

    Returns ``(mean, components, explained_variance)`` where ``components`` is
    ``P x M`` with orthonormal columns. Column signs are fixed so that the
    largest-magnitude entry of each column is positive.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch("data must be a 2-D array")
    n, p = x.shape
    if n < 2:
        raise InsufficientData("PCA needs at least two samples")
    if latent_dim < 1 or latent_dim > min(n, p):
        raise InsufficientData(f"latent_dim={latent_dim} must lie in [1, min(n, P)={min(n, p)}]")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        raise InsufficientData("data has zero variance")
    comps = vt[:latent_dim].T.copy()
    pivot = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[pivot, np.arange(latent_dim)])
    signs[signs == 0] = 1.0
    comps *= signs
    var = np.zeros(latent_dim)
    k = min(latent_dim, s.size)
    var[:k] = s[:k] ** 2 / (n - 1)
    return mean, comps, var
