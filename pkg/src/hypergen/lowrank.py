"""Diffusion for continuous data lying near an unknown K-dimensional linear
subspace: embed by truncated SVD, diffuse the latent coordinates, map back."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .scorediff import DiffusionSchedule, ScoreNet, TrainConfig, sample, train_score


@dataclass
class LowRankFit:
    """``Z_hat`` (n, K) has orthonormal columns; ``X_hat`` (m, K) = U Sigma."""

    Z_hat: np.ndarray
    X_hat: np.ndarray
    singular_values: np.ndarray

    @property
    def K(self) -> int:
        return self.Z_hat.shape[1]

    def reconstruct(self) -> np.ndarray:
        return self.X_hat @ self.Z_hat.T


def svd_embed(Y, K: int) -> LowRankFit:
    """Top-K SVD of ``Y``. Columns of Z_hat are signed so that the entry of
    largest magnitude is positive; U is flipped to match."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise ValidationError(f"Y must be 2-d, got shape {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise ValidationError("Y contains non-finite entries")
    m, n = Y.shape
    if not 1 <= K <= min(m, n):
        raise ConfigError(f"K={K} must lie in [1, min(m, n)={min(m, n)}]")
    U, s, Vt = np.linalg.svd(Y, full_matrices=False)
    U, s, V = U[:, :K], s[:K], Vt[:K].T
    idx = np.argmax(np.abs(V), axis=0)
    sgn = np.where(V[idx, np.arange(K)] < 0, -1.0, 1.0)
    U, V = U * sgn, V * sgn
    return LowRankFit(Z_hat=V, X_hat=U * s, singular_values=s)


def lowrank_generate(fit: LowRankFit, score, sched: DiffusionSchedule, m_tilde: int,
                     rng: np.random.Generator, stepper: str = "exponential") -> np.ndarray:
    """Sample latent vectors with ``score`` and return them as rows Z_hat x."""
    x = sample(score, sched, m_tilde, rng, K=fit.K, stepper=stepper)
    return x @ fit.Z_hat.T


def lowrank_dde(Y, K, sched: DiffusionSchedule, train_cfg: TrainConfig, m_tilde: int,
                rng: np.random.Generator, hidden=(128, 128)):
    """SVD embed, train a score net on the latent rows and generate.
    Returns (generated rows, fit, trained net)."""
    lr_fit = svd_embed(Y, K)
    net = ScoreNet(K, hidden=hidden, rng=rng)
    net = train_score(lr_fit.X_hat, net, sched, train_cfg)
    return lowrank_generate(lr_fit, net, sched, m_tilde, rng), lr_fit, net
