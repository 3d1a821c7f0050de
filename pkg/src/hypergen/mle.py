"""Constrained maximum-likelihood estimation of hyperlink embeddings, node
embeddings and degree parameters from one observed hypergraph."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .errors import ConfigError, DegenerateInputError, NumericalFailure, SingularityError
from .hypercore import Hypergraph
from .linmodel import NodeParams, save_embeddings, save_matrix, save_node_params

log = logging.getLogger(__name__)


@dataclass
class MleConfig:
    K: int = 2
    C: float = 3.0
    C_prime: float = 0.5
    C_dprime: float = 1.5
    max_outer_iters: int = 500
    tol: float = 1e-6
    inner_iters: int = 1
    # Armijo sufficient-increase constant, backtracking factor, max halvings
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if not self.C > 0:
            raise ConfigError(f"C must be > 0, got {self.C}")
        if not 0 < self.C_prime < 1:
            raise ConfigError(f"C_prime must lie in (0, 1), got {self.C_prime}")
        if not self.C_dprime > 1:
            raise ConfigError(f"C_dprime must be > 1, got {self.C_dprime}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be > 0, got {self.tol}")
        if not 0 < self.backtrack < 1:
            raise ConfigError(f"backtrack must lie in (0, 1), got {self.backtrack}")


@dataclass
class MleFit:
    X_hat: np.ndarray
    params_hat: NodeParams
    loglik_trace: list[float]
    constraint_residuals: dict[str, float]
    C_mn: float
    converged: bool
    config: MleConfig = field(repr=False)
    final_loglik: float = float("nan")

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_embeddings(directory / "X.csv", self.X_hat)
        save_node_params(directory, self.params_hat)
        save_matrix(directory / "trace.csv", np.asarray(self.loglik_trace)[:, None],
                    iters=len(self.loglik_trace))
        meta = {
            "config": asdict(self.config),
            "C_mn": self.C_mn,
            "converged": self.converged,
            "final_loglik": self.final_loglik,
            "iterations": len(self.loglik_trace) - 1,
            "constraint_residuals": self.constraint_residuals,
        }
        (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def compute_Cmn(h: Hypergraph, C_dprime: float) -> float:
    """Sparsity-adaptive bound -C'' log(sum_j |e_j| / (m n))."""
    total = int(h.orders().sum()) if h.m else 0
    if total == 0:
        raise DegenerateInputError("hypergraph has no node incidences")
    return float(-C_dprime * np.log(total / (h.m * h.n)))


def _sqrtm_psd(S):
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(w)) @ V.T, w


def identifiability_projection(X, Z, alpha):
    """Move (X, Z, alpha) to the representative with zero-mean X and
    Z'Z/n = X'X/m diagonal with descending entries, leaving every logit
    x_j . z_i + alpha_i unchanged.

    With S = Z'Z/n, Sigma the covariance of X, and Gamma, V the eigenvectors
    and (descending) eigenvalues of S^1/2 Sigma S^1/2, the map is
    G = S^1/2 Gamma V^-1/4, X' = (X - mean) G, Z' = Z G^-T, alpha' = alpha + Z mean.
    Column signs are fixed so the largest-magnitude entry of each Z' column is
    positive.
    """
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    m, n = X.shape[0], Z.shape[0]

    mu = X.mean(axis=0)
    Xc = X - mu
    alpha_new = alpha + Z @ mu

    S = Z.T @ Z / n
    S_half, s_eig = _sqrtm_psd(S)
    if s_eig.min() <= 1e-12 * max(s_eig.max(), 1e-300):
        raise SingularityError("node embedding Gram matrix is rank deficient")
    Sigma = Xc.T @ Xc / m
    M = S_half @ Sigma @ S_half
    M = 0.5 * (M + M.T)
    rho2, Gamma = np.linalg.eigh(M)
    order = np.argsort(rho2)[::-1]
    rho2, Gamma = rho2[order], Gamma[:, order]
    if rho2.min() <= 1e-12 * max(rho2.max(), 1e-300):
        raise SingularityError("hyperlink embedding covariance is rank deficient")

    G = S_half @ Gamma * rho2 ** -0.25
    X_new = Xc @ G
    Z_new = np.linalg.solve(G, Z.T).T  # Z G^{-T}

    idx = np.argmax(np.abs(Z_new), axis=0)
    signs = np.sign(Z_new[idx, np.arange(Z_new.shape[1])])
    signs[signs == 0] = 1.0
    return X_new * signs, Z_new * signs, alpha_new


def _project_alpha(alpha, C, lo, hi, sweeps=50):
    """Approximate projection onto {mean(alpha) in [lo, hi], |alpha - mean| <= C}."""
    a = alpha.copy()
    for _ in range(sweeps):
        abar = a.mean()
        target = min(max(abar, lo), hi)
        dev = np.clip(a - abar, -C, C)
        a_new = target + dev
        if np.array_equal(a_new, a):
            break
        a = a_new
    return a


def constraint_residuals(X, Z, alpha, C, C_mn, C_prime) -> dict[str, float]:
    m, n = X.shape[0], Z.shape[0]
    GX = X.T @ X / m
    GZ = Z.T @ Z / n
    off = ~np.eye(X.shape[1], dtype=bool)
    abar = alpha.mean()
    return {
        "x_mean": float(np.abs(X.mean(axis=0)).max()),
        "gram_equality": float(np.abs(GX - GZ).max()),
        "gram_x_offdiag": float(np.abs(GX[off]).max()) if off.any() else 0.0,
        "gram_z_offdiag": float(np.abs(GZ[off]).max()) if off.any() else 0.0,
        "box_x": float(max(np.abs(X).max() - C, 0.0)),
        "box_z": float(max(np.abs(Z).max() - C, 0.0)),
        "box_alpha": float(max(np.abs(alpha - abar).max() - C, 0.0)),
        "alpha_mean": float(max(-C_mn - abar, abar + C_prime * C_mn, 0.0)),
    }


def spectral_init(B: np.ndarray, K: int):
    """Warm start from the top-K SVD of the centered incidence matrix."""
    m, n = B.shape
    freq = B.mean(axis=0)
    U, s, Vt = np.linalg.svd(B - freq, full_matrices=False)
    X0 = np.sqrt(m) * U[:, :K]
    Z0 = Vt[:K].T * s[:K] / np.sqrt(m)
    alpha0 = logit(np.clip(freq, 1.0 / (2 * m), 1.0 - 1.0 / (2 * m)))
    return X0, Z0, alpha0


class _Problem:
    """Log-likelihood pieces over a fixed dense incidence matrix."""

    def __init__(self, B):
        self.B = B

    def terms(self, X, Z, alpha):
        A = X @ Z.T + alpha
        return self.B * A - np.logaddexp(0.0, A), A

    def total(self, X, Z, alpha):
        return float(self.terms(X, Z, alpha)[0].sum())


def _x_step(prob, X, Z, alpha, C, eta, cfg):
    """One projected-gradient ascent step for every row of X, with per-row
    backtracking. Rows are independent subproblems."""
    T, A = prob.terms(X, Z, alpha)
    P = expit(A)
    f_old = T.sum(axis=1)
    g = (prob.B - P) @ Z
    # diagonal curvature bound per row and coordinate
    curv = (P * (1 - P)) @ (Z * Z) + 1e-8
    eta = np.minimum(eta / cfg.backtrack, 1.0)
    pending = np.ones(X.shape[0], dtype=bool)
    X_new = X.copy()
    for _ in range(cfg.max_backtracks):
        rows = np.flatnonzero(pending)
        if rows.size == 0:
            break
        cand = np.clip(X[rows] + eta[rows, None] * g[rows] / curv[rows], -C, C)
        Ac = cand @ Z.T + alpha
        f_new = (prob.B[rows] * Ac - np.logaddexp(0.0, Ac)).sum(axis=1)
        gain = np.maximum(np.einsum("ij,ij->i", g[rows], cand - X[rows]), 0.0)
        ok = f_new >= f_old[rows] + cfg.armijo * gain
        X_new[rows[ok]] = cand[ok]
        pending[rows[ok]] = False
        eta[rows[~ok]] *= cfg.backtrack
    # rows still pending keep their old value
    return X_new, eta


def _za_step(prob, X, Z, alpha, C, a_lo, a_hi, eta, cfg):
    """One projected (diagonally scaled) gradient step on (Z, alpha) with a
    shared step length, since the alpha-mean constraint couples the nodes."""
    T, A = prob.terms(X, Z, alpha)
    P = expit(A)
    f_old = T.sum()
    R = prob.B - P
    W = P * (1 - P)
    gZ = R.T @ X
    ga = R.sum(axis=0)
    cZ = W.T @ (X * X) + 1e-8
    ca = W.sum(axis=0) + 1e-8
    eta = min(eta / cfg.backtrack, 1.0)
    for _ in range(cfg.max_backtracks):
        Zc = np.clip(Z + eta * gZ / cZ, -C, C)
        ac = _project_alpha(alpha + eta * ga / ca, C, a_lo, a_hi)
        f_new = prob.total(X, Zc, ac)
        gain = max(float(np.sum(gZ * (Zc - Z)) + np.sum(ga * (ac - alpha))), 0.0)
        if f_new >= f_old + cfg.armijo * gain:
            return Zc, ac, eta
        eta *= cfg.backtrack
    return Z, alpha, eta


def fit(h: Hypergraph, cfg: MleConfig | None = None, init=None) -> MleFit:
    """Alternating projected-gradient maximization of the log-likelihood
    under the box, alpha-mean and identifiability constraints.

    ``init`` may supply a starting (X, Z, alpha); otherwise a spectral warm
    start is used.
    """
    cfg = MleConfig() if cfg is None else cfg
    m, n, K = h.m, h.n, cfg.K
    if K > min(m, n):
        raise ConfigError(f"K={K} exceeds min(m, n)={min(m, n)}")
    total = int(h.orders().sum())
    if total == 0:
        raise DegenerateInputError("all hyperlinks are empty")
    if total == m * n:
        raise DegenerateInputError("every hyperlink contains every node")

    C = cfg.C
    C_mn = compute_Cmn(h, cfg.C_dprime)
    a_lo, a_hi = -C_mn, -cfg.C_prime * C_mn
    B = h.incidence()
    prob = _Problem(B)

    X, Z, alpha = spectral_init(B, K) if init is None else (np.array(a, dtype=np.float64) for a in init)
    X = np.clip(X, -C, C)
    Z = np.clip(Z, -C, C)
    alpha = _project_alpha(alpha, C, a_lo, a_hi)
    X, Z, alpha = identifiability_projection(X, Z, alpha)

    L = prob.total(X, Z, alpha)
    if not np.isfinite(L):
        raise NumericalFailure("non-finite log-likelihood at initialization", iteration=0)
    trace = [L]
    eta_x = np.ones(m)
    eta_z = 1.0
    converged = False
    for it in range(1, cfg.max_outer_iters + 1):
        for _ in range(cfg.inner_iters):
            X, eta_x = _x_step(prob, X, Z, alpha, C, eta_x, cfg)
        for _ in range(cfg.inner_iters):
            Z, alpha, eta_z = _za_step(prob, X, Z, alpha, C, a_lo, a_hi, eta_z, cfg)
        X, Z, alpha = identifiability_projection(X, Z, alpha)
        L_new = prob.total(X, Z, alpha)
        if not np.isfinite(L_new):
            raise NumericalFailure("non-finite log-likelihood", iteration=it)
        trace.append(L_new)
        rel = (L_new - L) / abs(L)
        L = L_new
        if rel < cfg.tol:
            converged = True
            break
    log.debug("mle stopped after %d iterations, L=%.6f", len(trace) - 1, L)

    X, Z, alpha = restore_feasibility(X, Z, alpha, C, a_lo, a_hi)
    final = prob.total(X, Z, alpha)
    resid = constraint_residuals(X, Z, alpha, C, C_mn, cfg.C_prime)
    return MleFit(X, NodeParams(Z, alpha), trace, resid, C_mn, converged, cfg, final_loglik=final)


def restore_feasibility(X, Z, alpha, C, a_lo, a_hi, sweeps=500, atol=1e-10):
    """Alternate the identifiability projection with box clipping until both
    hold. A no-op (beyond the projection) when the box is inactive."""
    for _ in range(sweeps):
        X, Z, alpha = identifiability_projection(X, Z, alpha)
        alpha = _project_alpha(alpha, C, a_lo, a_hi)
        if np.abs(X).max() <= C and np.abs(Z).max() <= C:
            break
        X = np.clip(X, -C, C)
        Z = np.clip(Z, -C, C)
        mu = X.mean(axis=0)
        if np.abs(mu).max() <= atol and np.abs(X.T @ X / X.shape[0] - Z.T @ Z / Z.shape[0]).max() <= atol:
            break
    return X, Z, alpha


def estimation_errors(X_hat, params_hat: NodeParams, X, params: NodeParams) -> dict[str, float]:
    """Max-norm errors of an estimate against the truth, after moving the
    truth to its identifiable representative and aligning column signs."""
    Xt, Zt, at = identifiability_projection(X, params.Z, params.alpha)
    signs = np.sign(np.sum(params_hat.Z * Zt, axis=0))
    signs[signs == 0] = 1.0
    return {
        "X": float(np.abs(X_hat * signs - Xt).max()),
        "Z": float(np.abs(params_hat.Z * signs - Zt).max()),
        "alpha": float(np.abs(params_hat.alpha - at).max()),
    }
