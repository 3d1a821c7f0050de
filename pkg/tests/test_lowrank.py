import numpy as np
import pytest

from hypergen.errors import ConfigError, ValidationError
from hypergen.lowrank import lowrank_dde, lowrank_generate, svd_embed
from hypergen.scorediff import DiffusionSchedule, TrainConfig


def _orthonormal(rng, n, K):
    return np.linalg.qr(rng.normal(size=(n, K)))[0]


def test_exact_rank_recovery(rng):
    Z = _orthonormal(rng, 20, 3)
    Y = rng.normal(size=(40, 3)) @ Z.T
    fit = svd_embed(Y, 3)
    assert np.abs(fit.reconstruct() - Y).max() <= 1e-9
    np.testing.assert_allclose(fit.Z_hat.T @ fit.Z_hat, np.eye(3), atol=1e-10)
    assert np.all(np.diff(fit.singular_values) <= 0)


def test_eckart_young_diagonal():
    Y = np.zeros((3, 4))
    Y[0, 0], Y[1, 1] = 3.0, 1.0
    fit = svd_embed(Y, 1)
    expect = np.zeros((3, 4))
    expect[0, 0] = 3.0
    np.testing.assert_allclose(fit.reconstruct(), expect, atol=1e-14)


def test_noisy_rank_two(rng):
    Y = rng.normal(size=(30, 2)) @ rng.normal(size=(2, 20))
    fit = svd_embed(Y + 1e-8 * rng.normal(size=Y.shape), 2)
    assert np.abs(fit.reconstruct() - Y).max() <= 1e-6


def test_sign_rule(rng):
    fit = svd_embed(rng.normal(size=(10, 8)), 3)
    idx = np.argmax(np.abs(fit.Z_hat), axis=0)
    assert np.all(fit.Z_hat[idx, np.arange(3)] > 0)


def test_errors(rng):
    with pytest.raises(ConfigError):
        svd_embed(rng.normal(size=(4, 3)), 4)
    with pytest.raises(ConfigError):
        svd_embed(rng.normal(size=(4, 3)), 0)
    Y = rng.normal(size=(4, 3))
    Y[1, 1] = np.nan
    with pytest.raises(ValidationError):
        svd_embed(Y, 1)


def test_generated_rows_in_subspace(rng):
    fit = svd_embed(rng.normal(size=(50, 2)) @ _orthonormal(rng, 9, 2).T, 2)
    Y = lowrank_generate(fit, lambda x, t: -x, DiffusionSchedule(N=50), 500, rng)
    P = np.eye(9) - fit.Z_hat @ fit.Z_hat.T
    assert np.linalg.norm(Y @ P, axis=1).max() <= 1e-9


def test_generate_empty(rng):
    fit = svd_embed(rng.normal(size=(5, 4)), 2)
    assert lowrank_generate(fit, lambda x, t: -x, DiffusionSchedule(), 0, rng).shape == (0, 4)


@pytest.fixture(scope="module")
def gaussian_lowrank():
    rng = np.random.default_rng(21)
    Z = _orthonormal(rng, 6, 2)
    X = rng.normal(size=(10_000, 2))
    Y = X @ Z.T
    gen, fit, _ = lowrank_dde(Y, 2, DiffusionSchedule(), TrainConfig(epochs=30, seed=4), 10_000, rng)
    return Z, X, gen, fit


def test_generated_covariance(gaussian_lowrank):
    Z, _, gen, _ = gaussian_lowrank
    assert np.abs(np.cov(gen.T) - Z @ Z.T).max() < 0.1


def test_latent_spectrum_matches(gaussian_lowrank):
    # Cov(X_hat) equals Cov(X) up to an orthogonal change of basis
    _, X, _, fit = gaussian_lowrank
    ev_hat = np.sort(np.linalg.eigvalsh(np.cov(fit.X_hat.T)))
    ev = np.sort(np.linalg.eigvalsh(np.cov(X.T)))
    np.testing.assert_allclose(ev_hat, ev, rtol=0.05)
