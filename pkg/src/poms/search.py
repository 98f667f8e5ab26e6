"""Mutation operators, region-based mixing and the outer search loop.

Variants
--------
``poms``              region-based mixing, AE latent space, Jacobian-scaled noise
``poms-pca``          as ``poms`` with a PCA latent model
``poms-no-jacobian``  as ``poms`` with latent noise scaled by latent ranges
``mape-iso``          MAP-Elites with isotropic Gaussian mutation
``mape-isolinedd``    MAP-Elites with the Iso+LineDD operator
``ps-uniform``        random search, parameters ~ U(-1, 1)
``ps-glorot``         random search, Xavier-Glorot initialised parameters

Random streams are derived from ``(seed, variant, purpose, eval index)`` so
that results do not depend on how rollouts are scheduled, and compared
variants share the same bootstrap archive for a given seed.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autoencoder as ae
from .archive import Archive
from .envs import Env, evaluate_batch
from .errors import ConfigInvalid, DecompositionFailed, DimensionMismatch
from .numkit import cholesky, sample_mvn
from .policy import PolicyShape, init_glorot, init_uniform

logger = logging.getLogger(__name__)

VARIANTS = ("poms", "poms-pca", "poms-no-jacobian", "mape-iso", "mape-isolinedd",
            "ps-uniform", "ps-glorot")
LATENT_VARIANTS = ("poms", "poms-pca", "poms-no-jacobian")
AE_VARIANTS = ("poms", "poms-no-jacobian")
RANDOM_VARIANTS = ("ps-uniform", "ps-glorot")

# stream purposes
_BOOTSTRAP, _SELECT, _MUTATE, _INSERT, _TRAIN, _INIT = range(6)


@dataclass
class Variant:
    kind: str
    sigma: float = 0.1           # variance of the parameter-space noise
    sigma1: float = 0.01         # Iso+LineDD isotropic std
    sigma2: float = 0.2          # Iso+LineDD directional std
    hidden_dim: int = 64
    latent_dim: int = 10
    train: ae.TrainOptions = field(default_factory=ae.TrainOptions)

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ConfigInvalid(f"variant.kind: unknown variant {self.kind!r} (known: {list(VARIANTS)})")
        if not self.sigma > 0:
            raise ConfigInvalid("variant.sigma: must be > 0")
        if self.kind == "mape-isolinedd" and (self.sigma1 < 0 or self.sigma2 < 0):
            raise ConfigInvalid("variant.sigma1/sigma2: must be >= 0")
        if self.kind in LATENT_VARIANTS and (self.latent_dim < 1 or self.hidden_dim < 1):
            raise ConfigInvalid("variant.latent_dim/hidden_dim: must be >= 1")

    @property
    def stream_id(self) -> int:
        return zlib.crc32(self.kind.encode())


@dataclass
class Budget:
    bootstrap: int = 500
    loops: int = 10
    iters: int = 20
    batch: int = 60

    def __post_init__(self):
        for name, least in (("bootstrap", 1), ("loops", 0), ("iters", 0), ("batch", 1)):
            if int(getattr(self, name)) < least:
                raise ConfigInvalid(f"budget.{name}: must be >= {least}")

    @property
    def total(self) -> int:
        return self.bootstrap + self.loops * self.iters * self.batch


# -- mutation operators ------------------------------------------------------

def mutate_iso(theta, sigma_theta: float, rng: np.random.Generator) -> np.ndarray:
    """``theta + N(0, sigma_theta * I)``."""
    theta = np.asarray(theta, dtype=np.float64)
    return theta + np.sqrt(sigma_theta) * rng.standard_normal(theta.shape[0])


def mutate_isolinedd(theta_i, theta_j, sigma1: float, sigma2: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Iso+LineDD: isotropic noise plus a Gaussian step along ``theta_j - theta_i``."""
    theta_i = np.asarray(theta_i, dtype=np.float64)
    theta_j = np.asarray(theta_j, dtype=np.float64)
    if theta_i.shape != theta_j.shape:
        raise DimensionMismatch("Iso+LineDD parents must have the same length")
    eps = rng.standard_normal(theta_i.shape[0])
    delta = rng.standard_normal()
    return theta_i + sigma1 * eps + sigma2 * delta * (theta_j - theta_i)


def mutate_latent(theta, model, sigma_theta: float, rng: np.random.Generator) -> np.ndarray:
    """Perturb in latent space with covariance ``sigma_theta * J^T J`` and decode.

    Raises :class:`DecompositionFailed` when the covariance cannot be factored.
    """
    z = model.encode(theta)
    cov = ae.latent_covariance(model.decoder_jacobian(z), sigma_theta)
    chol, _ = cholesky(cov)
    return model.decode(sample_mvn(z, chol, rng))


def mutate_latent_range(theta, model, range_cov, rng: np.random.Generator) -> np.ndarray:
    """Perturb in latent space with a fixed (range-based) covariance and decode."""
    z = model.encode(theta)
    chol, _ = cholesky(range_cov)
    return model.decode(sample_mvn(z, chol, rng))


@dataclass
class MixResult:
    mutants: list
    n_param: int
    n_total: int

    @property
    def mixing_ratio(self) -> float:
        return self.n_param / self.n_total if self.n_total else 0.0


def _rng_list(rng, n) -> list:
    if isinstance(rng, np.random.Generator):
        return [rng] * n
    rngs = list(rng)
    if len(rngs) != n:
        raise DimensionMismatch(f"need {n} generators, got {len(rngs)}")
    return rngs


def region_based_search(batch: Sequence[np.ndarray], model, eps_recn: float, sigma_theta: float,
                        rng, range_cov=None, coin_flip: bool = False) -> MixResult:
    """Mutate each parent in latent or parameter space depending on how well
    the model reconstructs it.

    A parent whose squared reconstruction error is below ``eps_recn`` is
    mutated in latent space (Jacobian-scaled, or with ``range_cov`` when
    given); otherwise isotropic noise is added in parameter space. With
    ``coin_flip`` the branch is chosen by a fair coin instead. A latent
    covariance that cannot be factored falls back to the parameter branch.
    ``rng`` is a generator or one generator per parent.
    """
    rngs = _rng_list(rng, len(batch))
    mutants, n_param = [], 0
    if len(batch) and not coin_flip:
        errors = ae.recon_errors(model, np.asarray(batch))
    for k, (theta, r) in enumerate(zip(batch, rngs)):
        latent = (r.random() < 0.5) if coin_flip else bool(errors[k] < eps_recn)
        if latent:
            try:
                if range_cov is None:
                    mutants.append(mutate_latent(theta, model, sigma_theta, r))
                else:
                    mutants.append(mutate_latent_range(theta, model, range_cov, r))
                continue
            except DecompositionFailed:
                logger.debug("latent covariance not factorable; using parameter-space noise")
        mutants.append(mutate_iso(theta, sigma_theta, r))
        n_param += 1
    return MixResult(mutants, n_param, len(batch))


# -- outer loop --------------------------------------------------------------

@dataclass
class RunResult:
    variant: str
    seed: int
    coverage_curve: list          # [(cumulative evals, coverage)]
    mixing: list                  # [(loop, ratio)]
    archive: Archive
    eval_count: int
    model: object = None
    train_reports: list = field(default_factory=list)
    invalid_count: int = 0


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *[int(k) for k in key]])


def bootstrap_archive(env: Env, shape: PolicyShape, n: int, seed: int, workers: int = 1):
    """Uniform bootstrap collection; identical for every variant at a given seed."""
    rng = _stream(seed, _BOOTSTRAP)
    thetas = rng.uniform(-1.0, 1.0, size=(n, shape.n_params))
    bds, valid = evaluate_batch(env, shape, thetas, workers)
    archive = Archive(env.grid)
    for k in range(n):
        if valid[k]:
            archive.insert(thetas[k], bds[k], rng, eval_index=k + 1)
    return archive, int(n - valid.sum())


class _Manifold:
    """Latent model state owned by one run."""

    def __init__(self, variant: Variant, shape: PolicyShape, seed: int):
        self.variant = variant
        self.seed = seed
        self.model = None
        self.eps_recn = 0.0
        self.range_cov = None
        self.reports = []
        if variant.kind in AE_VARIANTS:
            self.model = ae.Autoencoder(shape.n_params, variant.hidden_dim, variant.latent_dim,
                                        rng=_stream(seed, variant.stream_id, _INIT))

    def learn(self, collection: np.ndarray, loop: int) -> None:
        kind = self.variant.kind
        if kind == "poms-pca":
            self.model, report = ae.fit_pca_model(collection, self.variant.latent_dim)
        else:
            report = ae.train(self.model, collection, _stream(self.seed, self.variant.stream_id, _TRAIN, loop),
                              self.variant.train)
        self.eps_recn = report.mean_recon_error_over_collection
        if kind == "poms-no-jacobian" and collection.shape[0] >= 2:
            self.range_cov = ae.range_covariance(self.model.encode(collection))
        elif kind == "poms-no-jacobian":
            self.range_cov = np.zeros((self.model.latent_dim, self.model.latent_dim))
        self.reports.append(report)
        logger.info("%s loop %d: manifold learned, eps_recn=%.4g", kind, loop, self.eps_recn)


def run(variant: Variant, env: Env, shape: PolicyShape, budget: Budget, seed: int,
        workers: int = 1, on_loop: Callable | None = None) -> RunResult:
    """One search run: bootstrap, then ``loops`` x ``iters`` batches of
    select -> mutate -> evaluate -> insert, learning the manifold between
    loops for latent variants."""
    env.check_shape(shape)
    archive, invalid = bootstrap_archive(env, shape, budget.bootstrap, seed, workers)
    evals = budget.bootstrap
    curve = [(evals, archive.coverage())]
    mixing = []
    sid = variant.stream_id
    kind = variant.kind

    manifold = None
    if kind in LATENT_VARIANTS and budget.loops > 0:
        manifold = _Manifold(variant, shape, seed)
        manifold.learn(archive.occupants(), 0)

    for loop in range(1, budget.loops + 1):
        n_param = n_total = 0
        for _ in range(budget.iters):
            cand_rngs = [_stream(seed, sid, _MUTATE, evals + k + 1) for k in range(budget.batch)]
            if kind == "ps-uniform":
                children = [init_uniform(shape, r) for r in cand_rngs]
            elif kind == "ps-glorot":
                children = [init_glorot(shape, r) for r in cand_rngs]
            else:
                parents = archive.sample_batch(budget.batch, _stream(seed, sid, _SELECT, evals))
                if kind == "mape-iso":
                    children = [mutate_iso(p, variant.sigma, r) for p, r in zip(parents, cand_rngs)]
                    n_param += len(children)
                elif kind == "mape-isolinedd":
                    children = [mutate_isolinedd(p, archive.sample_batch(1, r)[0],
                                                 variant.sigma1, variant.sigma2, r)
                                for p, r in zip(parents, cand_rngs)]
                    n_param += len(children)
                else:
                    mix = region_based_search(parents, manifold.model, manifold.eps_recn, variant.sigma,
                                              cand_rngs, range_cov=manifold.range_cov, coin_flip=loop == 1)
                    children = mix.mutants
                    n_param += mix.n_param
                n_total += len(children)

            thetas = np.asarray(children)
            bds, valid = evaluate_batch(env, shape, thetas, workers)
            ins_rng = _stream(seed, sid, _INSERT, evals)
            for k in range(len(children)):
                if valid[k]:
                    archive.insert(thetas[k], bds[k], ins_rng, eval_index=evals + k + 1)
                else:
                    invalid += 1
            evals += len(children)
            curve.append((evals, archive.coverage()))

        if kind not in RANDOM_VARIANTS:
            mixing.append((loop, n_param / n_total if n_total else 0.0))
        # the last learning phase would not influence the search, skip it
        if manifold is not None and loop < budget.loops:
            manifold.learn(archive.occupants(), loop)
        logger.info("%s seed %d loop %d: evals=%d coverage=%.4f", kind, seed, loop, evals,
                    archive.coverage())
        if on_loop is not None:
            on_loop(loop, evals, archive)

    return RunResult(kind, seed, curve, mixing, archive, evals,
                     model=manifold.model if manifold else None,
                     train_reports=manifold.reports if manifold else [],
                     invalid_count=invalid)

