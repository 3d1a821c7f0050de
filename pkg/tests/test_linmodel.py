import math

import numpy as np
import pytest

from hypergen.errors import ValidationError
from hypergen.hypercore import Hypergraph
from hypergen.linmodel import (NodeParams, deterministic_hyperlink, expected_order,
                               grad_log_likelihood, link_probs, load_embeddings,
                               load_node_params, log_likelihood, sample_hyperlink,
                               sample_hyperlinks, save_embeddings, save_node_params)

from oracles import all_subsets, bernoulli_loglik, central_diff


def _random_instance(rng, m, n, K):
    X = rng.normal(size=(m, K))
    params = NodeParams(rng.normal(size=(n, K)), rng.normal(size=n))
    B = rng.random((m, n)) < 0.4
    return Hypergraph.from_incidence(B), X, params


def test_alpha_bar_cached():
    p = NodeParams(np.zeros((3, 2)), [1.0, 2.0, 6.0])
    assert abs(p.alpha_bar - 3.0) < 1e-12


def test_link_probs_examples():
    Z = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(link_probs(np.zeros(2), NodeParams(Z, [0.0, 0.0])), 0.5)
    np.testing.assert_allclose(link_probs(np.zeros(2), NodeParams(Z, [-1.0, -1.0])),
                               1 / (1 + math.e), atol=1e-15)
    p = link_probs(np.array([1.0, 1.0]), NodeParams([[1.0, 0.0]], [1.0]))
    assert abs(p[0] - 0.8807970779778823) < 1e-12


def test_link_probs_stay_open_interval():
    p = link_probs(np.array([1.0]), NodeParams([[1.0], [1.0]], [30.0, -30.0]))
    assert 0 < p[1] < p[0] < 1


def test_link_probs_dimension_mismatch():
    with pytest.raises(ValidationError):
        link_probs(np.zeros(3), NodeParams(np.zeros((2, 2)), np.zeros(2)))


def test_sample_saturation(rng):
    n = 6
    full = NodeParams(np.zeros((n, 1)), np.full(n, 50.0))
    empty = NodeParams(np.zeros((n, 1)), np.full(n, -50.0))
    assert sample_hyperlink(np.zeros(1), full, rng) == tuple(range(n))
    assert sample_hyperlink(np.zeros(1), empty, rng) == ()


def test_sample_frequencies_monte_carlo(rng):
    p = np.array([0.3, 0.7])
    params = NodeParams(np.zeros((2, 1)), np.log(p / (1 - p)))
    N = 100_000
    h = sample_hyperlinks(np.zeros((N, 1)), params, rng)
    freq = h.incidence().mean(axis=0)
    assert np.all(np.abs(freq - p) <= 4 * np.sqrt(p * (1 - p) / N))


def test_batch_sampling_matches_single_draws():
    rng_a, rng_b = np.random.default_rng(7), np.random.default_rng(7)
    X = rng_a.normal(size=(5, 2))
    rng_b.normal(size=(5, 2))
    params = NodeParams(np.ones((4, 2)), np.zeros(4))
    batch = sample_hyperlinks(X, params, rng_a)
    single = tuple(sample_hyperlink(x, params, rng_b) for x in X)
    assert batch.links == single


def test_loglik_all_zero():
    m, n = 3, 4
    h = Hypergraph(n, ((0,), (), (1, 2, 3)))
    L = log_likelihood(h, np.zeros((m, 2)), NodeParams(np.zeros((n, 2)), np.zeros(n)))
    assert abs(L + m * n * math.log(2)) < 1e-12


def test_loglik_symmetric_single_node():
    params = NodeParams(np.zeros((1, 1)), [0.0])
    for links in (((0,),), ((),)):
        L = log_likelihood(Hypergraph(1, links), np.zeros((1, 1)), params)
        assert abs(L - math.log(0.5)) < 1e-12


def test_loglik_matches_brute_force(rng):
    h, X, params = _random_instance(rng, 3, 4, 2)
    ref = bernoulli_loglik(h.links, 4, X.tolist(), params.Z.tolist(), params.alpha.tolist())
    assert abs(log_likelihood(h, X, params) - ref) < 1e-10


@pytest.mark.parametrize("n", [1, 5, 12])
def test_likelihood_normalizes_over_all_subsets(rng, n):
    x = rng.normal(size=(1, 2))
    params = NodeParams(rng.normal(size=(n, 2)), rng.normal(size=n))
    total = sum(math.exp(log_likelihood(Hypergraph(n, (e,)), x, params)) for e in all_subsets(n))
    assert abs(total - 1.0) < 1e-9


def test_loglik_stable_for_large_logits():
    params = NodeParams([[1.0]], [0.0])
    L = log_likelihood(Hypergraph(1, ((),)), np.array([[800.0]]), params)
    assert np.isfinite(L) and abs(L + 800.0) < 1e-9


def test_gradient_at_zero():
    h = Hypergraph(3, ((0, 1), (0,), (0, 2), ()))
    m = h.m
    _, _, ga = grad_log_likelihood(h, np.zeros((m, 2)), NodeParams(np.zeros((3, 2)), np.zeros(3)))
    deg = np.array([3, 1, 1])
    np.testing.assert_allclose(ga, deg - m / 2)


def test_gradient_z_at_zero(rng):
    h, X, _ = _random_instance(rng, 4, 3, 2)
    alpha = rng.normal(size=3)
    _, gZ, _ = grad_log_likelihood(h, X, NodeParams(np.zeros((3, 2)), alpha))
    R = h.incidence() - 1 / (1 + np.exp(-alpha))
    np.testing.assert_allclose(gZ, R.T @ X, atol=1e-13)


def test_gradient_finite_differences(rng):
    h, X, params = _random_instance(rng, 4, 5, 2)
    gX, gZ, ga = grad_log_likelihood(h, X, params)
    step = 1e-5
    nX = central_diff(lambda t: log_likelihood(h, t, params), X, step)
    nZ = central_diff(lambda t: log_likelihood(h, X, NodeParams(t, params.alpha)), params.Z, step)
    na = central_diff(lambda t: log_likelihood(h, X, NodeParams(params.Z, t)), params.alpha, step)
    for a, f in ((gX, nX), (gZ, nZ), (ga, na)):
        rel = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)
        assert rel.max() < 1e-6


def test_affine_invariance(rng):
    # X' = (X - mu) A, Z' = Z A^{-T}, alpha' = alpha + Z mu leaves every logit fixed
    h, X, params = _random_instance(rng, 6, 5, 3)
    A = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    mu = rng.normal(size=3)
    X2 = (X - mu) @ A
    p2 = NodeParams(params.Z @ np.linalg.inv(A).T, params.alpha + params.Z @ mu)
    assert abs(log_likelihood(h, X2, p2) - log_likelihood(h, X, params)) < 1e-9


def test_deterministic_hyperlink():
    half = NodeParams(np.zeros((3, 1)), np.zeros(3))
    assert deterministic_hyperlink(np.zeros(1), half, 0.5) == (0, 1, 2)
    p = np.array([0.95, 0.1])
    params = NodeParams(np.zeros((2, 1)), np.log(p / (1 - p)))
    assert deterministic_hyperlink(np.zeros(1), params, 0.9) == (0,)
    assert deterministic_hyperlink(np.zeros(1), params, 1 - 1e-12) == ()
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ValidationError):
            deterministic_hyperlink(np.zeros(1), params, bad)


def test_expected_order_monte_carlo(rng):
    params = NodeParams(rng.normal(size=(20, 2)), rng.normal(size=20) - 1)
    x = rng.normal(size=2)
    N = 100_000
    h = sample_hyperlinks(np.tile(x, (N, 1)), params, rng)
    orders = h.orders()
    assert abs(orders.mean() - expected_order(x, params)) <= 4 * orders.std() / np.sqrt(N)


def test_csv_roundtrip(tmp_path, rng):
    X = rng.normal(size=(5, 3))
    save_embeddings(tmp_path / "X.csv", X)
    assert (tmp_path / "X.csv").read_text().startswith("# K=3 m=5")
    np.testing.assert_array_equal(load_embeddings(tmp_path / "X.csv"), X)
    params = NodeParams(rng.normal(size=(4, 3)), rng.normal(size=4))
    save_node_params(tmp_path, params)
    back = load_node_params(tmp_path)
    np.testing.assert_array_equal(back.Z, params.Z)
    np.testing.assert_array_equal(back.alpha, params.alpha)


def test_empty_embeddings_roundtrip(tmp_path):
    save_embeddings(tmp_path / "X.csv", np.zeros((0, 2)))
    assert load_embeddings(tmp_path / "X.csv").shape == (0, 2)
