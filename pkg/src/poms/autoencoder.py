"""Latent models over policy parameter vectors.

Three models share one duck-typed interface (``encode``, ``decode``,
``decoder_jacobian``, ``latent_dim``, ``input_dim``):

* :class:`Autoencoder` -- symmetric one-hidden-layer ELU autoencoder trained
  with hand-written backpropagation and Adam.
* :class:`PcaModel` -- linear projection onto principal components.
* :class:`IdentityModel` -- ``encode = decode = id``; handy for equivalence
  checks against plain parameter-space search.

Encode/decode accept a single vector or a 2-D batch (rows are samples).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    DivergedLoss,
    EmptyCollection,
    InsufficientData,
)
from .numkit import fit_line_slope, pca_fit
from .policy import glorot_layers

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "poms-latent-model"
CHECKPOINT_VERSION = 1


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    # derivative taken as 1 at x == 0
    return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))


@dataclass
class TrainOptions:
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 20000
    test_fraction: float = 0.3
    slope_window: int = 100
    slope_threshold: float = 1e-5


@dataclass
class TrainReport:
    epochs_run: int
    final_train_loss: float
    final_test_loss: float
    stopped_early: bool
    mean_recon_error_over_collection: float
    initial_recon_error: float = float("nan")


def _as_batch(x, dim: int, what: str):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != dim:
        raise DimensionMismatch(f"{what} has shape {x.shape}, expected trailing dimension {dim}")
    return xb, single


class Autoencoder:
    """P -> HD (ELU) -> M (linear) -> HD (ELU) -> P (linear)."""

    variant = "nonlinear-ae"
    _names = ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4")

    def __init__(self, input_dim: int, hidden_dim: int, latent_dim: int, rng=None):
        if not (1 <= latent_dim < input_dim):
            raise ValueError(f"latent_dim must satisfy 1 <= M < P, got M={latent_dim}, P={input_dim}")
        if hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        self.latent_dim = int(latent_dim)
        dims = [(input_dim, hidden_dim), (hidden_dim, latent_dim),
                (latent_dim, hidden_dim), (hidden_dim, input_dim)]
        if rng is None:
            layers = [(np.zeros((fo, fi)), np.zeros(fo)) for fi, fo in dims]
        else:
            layers = glorot_layers(dims, rng)
        (self.W1, self.b1), (self.W2, self.b2), (self.W3, self.b3), (self.W4, self.b4) = layers

    # -- parameters -------------------------------------------------------
    def params(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self._names]

    def set_params(self, values) -> None:
        for n, v in zip(self._names, values):
            cur = getattr(self, n)
            v = np.asarray(v, dtype=np.float64).reshape(cur.shape)
            setattr(self, n, v.copy())

    def copy(self) -> "Autoencoder":
        other = Autoencoder(self.input_dim, self.hidden_dim, self.latent_dim)
        other.set_params(self.params())
        return other

    # -- maps -------------------------------------------------------------
    def encode(self, theta):
        x, single = _as_batch(theta, self.input_dim, "theta")
        z = elu(x @ self.W1.T + self.b1) @ self.W2.T + self.b2
        return z[0] if single else z

    def decode(self, z):
        zb, single = _as_batch(z, self.latent_dim, "z")
        y = elu(zb @ self.W3.T + self.b3) @ self.W4.T + self.b4
        return y[0] if single else y

    def decoder_jacobian(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.latent_dim,):
            raise DimensionMismatch(f"z has shape {z.shape}, expected ({self.latent_dim},)")
        d = elu_grad(self.W3 @ z + self.b3)
        return (self.W4 * d) @ self.W3

    # -- loss -------------------------------------------------------------
    def loss_and_grads(self, x) -> tuple[float, list[np.ndarray]]:
        """Mean over rows of ``||x - decode(encode(x))||^2`` and its gradient."""
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        a1 = x @ self.W1.T + self.b1
        h1 = elu(a1)
        z = h1 @ self.W2.T + self.b2
        a3 = z @ self.W3.T + self.b3
        h3 = elu(a3)
        y = h3 @ self.W4.T + self.b4
        r = y - x
        loss = float(np.sum(r * r) / n)

        dy = (2.0 / n) * r
        gW4 = dy.T @ h3
        gb4 = dy.sum(axis=0)
        da3 = (dy @ self.W4) * elu_grad(a3)
        gW3 = da3.T @ z
        gb3 = da3.sum(axis=0)
        dz = da3 @ self.W3
        gW2 = dz.T @ h1
        gb2 = dz.sum(axis=0)
        da1 = (dz @ self.W2) * elu_grad(a1)
        gW1 = da1.T @ x
        gb1 = da1.sum(axis=0)
        return loss, [gW1, gb1, gW2, gb2, gW3, gb3, gW4, gb4]

    def loss(self, x) -> float:
        return float(np.mean(recon_errors(self, x)))

    # -- persistence -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "variant": self.variant,
            "dims": {"input_dim": self.input_dim, "hidden_dim": self.hidden_dim,
                     "latent_dim": self.latent_dim},
            "params": {n: getattr(self, n).ravel().tolist() for n in self._names},
        }


class PcaModel:
    variant = "linear-pca"

    def __init__(self, mean, components):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.components = np.asarray(components, dtype=np.float64)
        if self.components.ndim != 2 or self.components.shape[0] != self.mean.shape[0]:
            raise DimensionMismatch("components must be P x M with P = len(mean)")
        self.input_dim, self.latent_dim = self.components.shape

    @classmethod
    def fit(cls, collection, latent_dim: int) -> "PcaModel":
        mean, comps, _ = pca_fit(collection, latent_dim)
        return cls(mean, comps)

    def encode(self, theta):
        x, single = _as_batch(theta, self.input_dim, "theta")
        z = (x - self.mean) @ self.components
        return z[0] if single else z

    def decode(self, z):
        zb, single = _as_batch(z, self.latent_dim, "z")
        y = self.mean + zb @ self.components.T
        return y[0] if single else y

    def decoder_jacobian(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.latent_dim,):
            raise DimensionMismatch(f"z has shape {z.shape}, expected ({self.latent_dim},)")
        return self.components.copy()

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "variant": self.variant,
            "dims": {"input_dim": self.input_dim, "latent_dim": self.latent_dim},
            "params": {"mean": self.mean.tolist(), "components": self.components.ravel().tolist()},
        }


class IdentityModel:
    variant = "identity"

    def __init__(self, dim: int):
        self.input_dim = self.latent_dim = int(dim)

    def encode(self, theta):
        x, single = _as_batch(theta, self.input_dim, "theta")
        return x[0].copy() if single else x.copy()

    def decode(self, z):
        zb, single = _as_batch(z, self.latent_dim, "z")
        return zb[0].copy() if single else zb.copy()

    def decoder_jacobian(self, z) -> np.ndarray:
        return np.eye(self.latent_dim)


def encode(model, theta):
    return model.encode(theta)


def decode(model, z):
    return model.decode(z)


def decoder_jacobian(model, z) -> np.ndarray:
    return model.decoder_jacobian(z)


def recon_errors(model, collection) -> np.ndarray:
    """Squared reconstruction error ``||x - f_D(f_E(x))||^2`` per row."""
    x = np.atleast_2d(np.asarray(collection, dtype=np.float64))
    r = x - model.decode(model.encode(x))
    return np.sum(r * r, axis=1)


def latent_covariance(jacobian, sigma_theta: float) -> np.ndarray:
    """``J^T (sigma_theta I) J``: latent covariance whose pushforward is isotropic."""
    if not sigma_theta > 0:
        raise ValueError("sigma_theta must be > 0")
    j = np.asarray(jacobian, dtype=np.float64)
    if j.ndim != 2:
        raise DimensionMismatch("jacobian must be a 2-D P x M matrix")
    cov = sigma_theta * (j.T @ j)
    return 0.5 * (cov + cov.T)


def range_covariance(latent_points) -> np.ndarray:
    """Diagonal matrix of per-dimension ranges (max - min) of the latents."""
    z = np.asarray(latent_points, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise InsufficientData("range covariance needs at least two latent points")
    return np.diag(z.max(axis=0) - z.min(axis=0))


def train(model: Autoencoder, collection, rng: np.random.Generator,
          options: TrainOptions | None = None) -> TrainReport:
    """Fit ``model`` in place to reconstruct ``collection`` with mini-batch Adam.

    Adam moments are reset on every call. Each epoch the collection is
    reshuffled and split into batches; ``test_fraction`` of the batches are
    held out and only evaluated. Training ends at ``max_epochs`` or as soon as
    the least-squares slope of the last ``slope_window`` test losses exceeds
    ``slope_threshold``. When the collection is too small to hold out a whole
    batch, the test loss is measured on the full collection.
    """
    opts = options or TrainOptions()
    x = np.asarray(collection, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyCollection("cannot train on an empty collection")
    if x.shape[1] != model.input_dim:
        raise DimensionMismatch(f"collection has width {x.shape[1]}, model expects {model.input_dim}")
    n = x.shape[0]
    params = model.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    b1, b2, lr, eps = opts.beta1, opts.beta2, opts.learning_rate, opts.eps

    initial = model.loss(x)
    test_history: list[float] = []
    train_loss = test_loss = initial
    stopped = False
    epoch = 0
    n_batches = -(-n // opts.batch_size)
    n_test = int(np.floor(opts.test_fraction * n_batches))

    def _report():
        return TrainReport(epoch, train_loss, test_loss, stopped,
                           float(np.mean(recon_errors(model, x))), initial)

    for epoch in range(1, opts.max_epochs + 1):
        perm = rng.permutation(n)
        batches = [perm[i:i + opts.batch_size] for i in range(0, n, opts.batch_size)]
        train_batches = batches[:n_batches - n_test]
        test_idx = np.concatenate(batches[n_batches - n_test:]) if n_test else None

        total, count = 0.0, 0
        for idx in train_batches:
            loss, grads = model.loss_and_grads(x[idx])
            if not np.isfinite(loss):
                train_loss = loss
                raise DivergedLoss(f"non-finite training loss at epoch {epoch}", _report())
            step += 1
            c1 = 1.0 - b1 ** step
            c2 = 1.0 - b2 ** step
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= b1
                mi += (1.0 - b1) * g
                vi *= b2
                vi += (1.0 - b2) * (g * g)
                p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
            total += loss * idx.size
            count += idx.size
        train_loss = total / count
        test_loss = model.loss(x[test_idx] if test_idx is not None else x)
        if not np.isfinite(test_loss):
            raise DivergedLoss(f"non-finite test loss at epoch {epoch}", _report())
        test_history.append(test_loss)
        if len(test_history) >= opts.slope_window:
            if fit_line_slope(test_history[-opts.slope_window:]) > opts.slope_threshold:
                stopped = True
                break

    report = _report()
    logger.debug("AE training: %s", report)
    return report


def fit_pca_model(collection, latent_dim: int) -> tuple[PcaModel, TrainReport]:
    """Refit a PCA latent model and report its collection reconstruction error."""
    x = np.asarray(collection, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyCollection("cannot fit PCA on an empty collection")
    model = PcaModel.fit(x, min(latent_dim, x.shape[0], x.shape[1]))
    err = float(np.mean(recon_errors(model, x)))
    return model, TrainReport(0, err, err, False, err, err)


def model_from_dict(d: dict):
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a latent-model checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    dims = d["dims"]
    if d["variant"] == Autoencoder.variant:
        model = Autoencoder(dims["input_dim"], dims["hidden_dim"], dims["latent_dim"])
        model.set_params([d["params"][n] for n in Autoencoder._names])
        return model
    if d["variant"] == PcaModel.variant:
        comps = np.asarray(d["params"]["components"], dtype=np.float64)
        return PcaModel(d["params"]["mean"], comps.reshape(dims["input_dim"], dims["latent_dim"]))
    raise ValueError(f"unknown latent model variant {d['variant']!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))


def report_dict(report: TrainReport) -> dict:
    return asdict(report)
