"""Gaussian-process forward sensory models.

Each modality's map from joint angles to expected sensor readings is a GP
with an isotropic squared-exponential kernel. Output dimensions are
independent GPs sharing one kernel, so a single Cholesky factorization
serves a multi-column set of dual weights. Targets are standardized per
dimension before fitting and predictions are un-standardized on the way
out; predictive variance is reported in kernel (standardized) units.

The predictive mean has an analytic Jacobian, which is what the
free-energy descent in :mod:`corporea.estimator` differentiates through.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericalError, ValidationError

JITTER_START = 1e-10
JITTER_MAX = 1e-4

#: Steepness of the logistic that squashes tactile GP means into [0, 1].
#: At 16, exact 0/1 training targets reproduce to ~3.4e-4.
TACTILE_SQUASH_STEEPNESS = 16.0


@dataclass(frozen=True)
class KernelParams:
    """Isotropic squared-exponential kernel hyperparameters."""

    lengthscale: float = 0.5
    signal_variance: float = 1.0
    noise_variance: float = 1e-4

    def __post_init__(self):
        if self.lengthscale <= 0:
            raise ValidationError(f"lengthscale must be positive, got {self.lengthscale}")
        if self.signal_variance <= 0:
            raise ValidationError(f"signal variance must be positive, got {self.signal_variance}")
        if self.noise_variance < 0:
            raise ValidationError(f"noise variance must be non-negative, got {self.noise_variance}")


@dataclass
class GPModel:
    """Fitted GP: training data, factorization, and dual weights.

    ``alpha`` solves (K + sigma_n^2 I) alpha = Z for the standardized
    targets Z; ``chol`` is the lower-triangular factor of the same matrix
    (including the jitter actually used).
    """

    X: np.ndarray         # (n, d)
    Y: np.ndarray         # (n, m) raw targets
    params: KernelParams
    y_mean: np.ndarray    # (m,)
    y_scale: np.ndarray   # (m,)
    chol: np.ndarray      # (n, n) lower triangular
    alpha: np.ndarray     # (n, m)
    jitter: float

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @property
    def output_dim(self) -> int:
        return self.Y.shape[1]


def kernel_matrix(params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """SE kernel k(a,b) = sf2 * exp(-|a-b|^2 / (2 l^2)) for row sets A, B."""
    d2 = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return params.signal_variance * np.exp(-0.5 * d2 / params.lengthscale**2)


def fit(X, Y, params: KernelParams) -> GPModel:
    """Fit independent-output GPs with a shared kernel.

    The Gram matrix is factorized with an adaptive jitter ladder (1e-10,
    x10 per retry, up to 1e-4); exhaustion raises NumericalError carrying
    the final jitter tried.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ValidationError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    if X.shape[0] < 1:
        raise ValidationError("need at least one training point")

    y_mean = Y.mean(axis=0)
    y_scale = Y.std(axis=0)
    y_scale = np.where(y_scale > 0, y_scale, 1.0)
    Z = (Y - y_mean) / y_scale

    K = kernel_matrix(params, X, X)
    ladder = [10.0**e for e in range(-10, -3)]  # JITTER_START .. JITTER_MAX
    for jitter in ladder:
        try:
            L = np.linalg.cholesky(K + (params.noise_variance + jitter) * np.eye(X.shape[0]))
            break
        except np.linalg.LinAlgError:
            if jitter >= JITTER_MAX:
                raise NumericalError(
                    f"Gram matrix not positive definite even with jitter {jitter:g}"
                ) from None
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, Z))
    return GPModel(X, Y, params, y_mean, y_scale, L, alpha, jitter)


def _as_batch(mu, dim: int) -> tuple[np.ndarray, bool]:
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 1:
        return mu.reshape(1, dim), True
    return mu.reshape(-1, dim), False


def predict_mean(model: GPModel, mu) -> np.ndarray:
    """Predictive mean at one query (m,) or a batch of queries (B, m)."""
    pts, single = _as_batch(mu, model.input_dim)
    k = kernel_matrix(model.params, pts, model.X)
    out = model.y_mean + model.y_scale * (k @ model.alpha)
    return out[0] if single else out


def predict_variance(model: GPModel, mu) -> np.ndarray:
    """Latent predictive variance per output dimension, in kernel units.

    Output dimensions share the kernel, so the value repeats across the m
    entries; it is non-negative and bounded by the signal variance.
    """
    pts, single = _as_batch(mu, model.input_dim)
    k = kernel_matrix(model.params, pts, model.X)
    w = np.linalg.solve(model.chol, k.T)
    var = np.maximum(model.params.signal_variance - np.sum(w * w, axis=0), 0.0)
    out = np.repeat(var[:, None], model.output_dim, axis=1)
    return out[0] if single else out


def predict_gradient(model: GPModel, mu) -> np.ndarray:
    """Jacobian of the (raw-unit) predictive mean, shape (m, d)."""
    mu = np.asarray(mu, dtype=float).reshape(model.input_dim)
    k = kernel_matrix(model.params, mu[None, :], model.X)[0]          # (n,)
    dk = -(mu[None, :] - model.X) / model.params.lengthscale**2 * k[:, None]  # (n, d)
    return model.y_scale[:, None] * (model.alpha.T @ dk)


def log_marginal_likelihood(model: GPModel) -> float:
    """Log evidence of the standardized targets, summed over output dims."""
    Z = (model.Y - model.y_mean) / model.y_scale
    n, m = Z.shape
    fit_term = -0.5 * float(np.sum(Z * model.alpha))
    det_term = -m * float(np.sum(np.log(np.diag(model.chol))))
    return fit_term + det_term - 0.5 * n * m * np.log(2.0 * np.pi)


def grid_search_lengthscale(X, Y, params: KernelParams, grid=None) -> GPModel:
    """Refit over a log-spaced lengthscale grid, keeping the best-evidence model."""
    if grid is None:
        grid = np.geomspace(0.05, 5.0, 13)
    best = None
    best_lml = -np.inf
    for ell in grid:
        model = fit(X, Y, KernelParams(float(ell), params.signal_variance, params.noise_variance))
        lml = log_marginal_likelihood(model)
        if lml > best_lml:
            best, best_lml = model, lml
    return best


def tactile_squash(y):
    """Logistic squashing of raw tactile GP means into [0, 1]."""
    return 1.0 / (1.0 + np.exp(-TACTILE_SQUASH_STEEPNESS * (np.asarray(y, dtype=float) - 0.5)))


def tactile_squash_slope(y):
    p = tactile_squash(y)
    return TACTILE_SQUASH_STEEPNESS * p * (1.0 - p)


MODALITIES = ("proprio", "visual", "tactile")


@dataclass
class ForwardModelSet:
    """One forward model per modality; proprio is the identity map.

    Tactile predictions are squashed into [0, 1] (and the Jacobian is
    chain-ruled through the squash) so the contact channel stays within its
    binary range everywhere the estimator evaluates it.
    """

    visual: GPModel
    tactile: GPModel
    proprio_noise_variance: float = 1e-4

    def __post_init__(self):
        if self.visual.input_dim != self.tactile.input_dim:
            raise ValidationError("visual and tactile models disagree on input dimension")

    @property
    def modalities(self) -> tuple[str, ...]:
        return MODALITIES

    @property
    def input_dim(self) -> int:
        return self.visual.input_dim

    def predict(self, modality: str, mu) -> np.ndarray:
        if modality == "proprio":
            return np.asarray(mu, dtype=float).copy()
        if modality == "visual":
            return predict_mean(self.visual, mu)
        if modality == "tactile":
            return tactile_squash(predict_mean(self.tactile, mu))
        raise ValidationError(f"unknown modality '{modality}'")

    def jacobian(self, modality: str, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if modality == "proprio":
            return np.eye(mu.size)
        if modality == "visual":
            return predict_gradient(self.visual, mu)
        if modality == "tactile":
            raw = predict_mean(self.tactile, mu)
            return tactile_squash_slope(raw)[:, None] * predict_gradient(self.tactile, mu)
        raise ValidationError(f"unknown modality '{modality}'")

    def observation_variance(self, modality: str, mu) -> np.ndarray:
        """Raw-unit predictive variance plus sensor noise, per output dim."""
        mu = np.asarray(mu, dtype=float)
        if modality == "proprio":
            return np.full(mu.size, self.proprio_noise_variance)
        model = self.visual if modality == "visual" else self.tactile
        latent = predict_variance(model, mu) * model.y_scale**2
        return latent + model.params.noise_variance * model.y_scale**2


# --- persistence -----------------------------------------------------------

def model_to_dict(model: GPModel) -> dict:
    return {
        "kernel": {
            "lengthscale": model.params.lengthscale,
            "signal_variance": model.params.signal_variance,
            "noise_variance": model.params.noise_variance,
        },
        "inputs": model.X.tolist(),
        "targets": model.Y.tolist(),
        "target_mean": model.y_mean.tolist(),
        "target_scale": model.y_scale.tolist(),
    }


def model_from_dict(d: dict) -> GPModel:
    """Rebuild a model from its JSON form; factor and weights are recomputed."""
    params = KernelParams(**d["kernel"])
    X = np.asarray(d["inputs"], dtype=float)
    Y = np.asarray(d["targets"], dtype=float)
    model = fit(X, Y, params)
    # Stored standardization constants are authoritative; refitting from the
    # same rows reproduces them, but guard against hand-edited files.
    stored_mean = np.asarray(d["target_mean"], dtype=float)
    stored_scale = np.asarray(d["target_scale"], dtype=float)
    if not (np.allclose(stored_mean, model.y_mean) and np.allclose(stored_scale, model.y_scale)):
        Z = (Y - stored_mean) / stored_scale
        alpha = np.linalg.solve(model.chol.T, np.linalg.solve(model.chol, Z))
        model.y_mean, model.y_scale, model.alpha = stored_mean, stored_scale, alpha
    return model


def save_model(model: GPModel, path) -> Path:
    path = Path(path)
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f, sort_keys=True)
        f.write("\n")
    return path


def load_model(path) -> GPModel:
    with open(path) as f:
        return model_from_dict(json.load(f))


def save_model_set(models: ForwardModelSet, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    return [
        save_model(models.visual, out_dir / "model_visual.json"),
        save_model(models.tactile, out_dir / "model_tactile.json"),
    ]


def load_model_set(model_dir, proprio_noise_variance: float = 1e-4) -> ForwardModelSet:
    model_dir = Path(model_dir)
    visual_path = model_dir / "model_visual.json"
    tactile_path = model_dir / "model_tactile.json"
    for p in (visual_path, tactile_path):
        if not p.exists():
            raise ValidationError(f"missing model file {p}")
    return ForwardModelSet(
        visual=load_model(visual_path),
        tactile=load_model(tactile_path),
        proprio_noise_variance=proprio_noise_variance,
    )
