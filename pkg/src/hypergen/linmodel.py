"""Logistic hyperlink model: node i joins a hyperlink with embedding x with
probability sigmoid(x . z_i + alpha_i), independently across nodes."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import FormatError, ValidationError
from .hypercore import Hypergraph

# rows drawn per block when sampling many hyperlinks; keeps memory bounded
_SAMPLE_BLOCK = 4096


@dataclass
class NodeParams:
    """Node embeddings Z (n x K) and degree parameters alpha (n,)."""

    Z: np.ndarray
    alpha: np.ndarray
    alpha_bar: float = field(init=False)

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=np.float64))
        self.alpha = np.asarray(self.alpha, dtype=np.float64).ravel()
        if self.Z.shape[0] != self.alpha.shape[0]:
            raise ValidationError(
                f"Z has {self.Z.shape[0]} rows but alpha has {self.alpha.shape[0]} entries"
            )
        self.alpha_bar = float(self.alpha.mean()) if self.alpha.size else 0.0

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def K(self) -> int:
        return self.Z.shape[1]


def _check_dim(X, params: NodeParams):
    if X.shape[-1] != params.K:
        raise ValidationError(f"embedding dimension {X.shape[-1]} != K={params.K}")


def logits(X: np.ndarray, params: NodeParams) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    _check_dim(X, params)
    return X @ params.Z.T + params.alpha


def link_probs(x: np.ndarray, params: NodeParams) -> np.ndarray:
    """Inclusion probabilities p_i(x) for every node."""
    return expit(logits(x, params))


def sample_hyperlink(x: np.ndarray, params: NodeParams, rng: np.random.Generator) -> tuple[int, ...]:
    """Draw one hyperlink; uses exactly n uniforms, in node-id order."""
    p = link_probs(np.asarray(x, dtype=np.float64).ravel(), params)
    u = rng.random(params.n)
    return tuple(np.flatnonzero(u < p).tolist())


def sample_hyperlinks(X: np.ndarray, params: NodeParams, rng: np.random.Generator) -> Hypergraph:
    """Draw one hyperlink per row of X.

    Consumes the generator exactly as repeated ``sample_hyperlink`` calls would.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        return Hypergraph(params.n, ())
    _check_dim(X, params)
    links = []
    for start in range(0, X.shape[0], _SAMPLE_BLOCK):
        P = expit(logits(X[start:start + _SAMPLE_BLOCK], params))
        U = rng.random(P.shape)
        hit = U < P
        links.extend(tuple(np.flatnonzero(row).tolist()) for row in hit)
    return Hypergraph(params.n, tuple(links))


def _softplus(a):
    # log(1 + exp(a)) without overflow
    return np.logaddexp(0.0, a)


def log_likelihood(h: Hypergraph | np.ndarray, X: np.ndarray, params: NodeParams) -> float:
    """Sum over links j and nodes i of b_ji * a_ji - log(1 + exp(a_ji)),
    with a_ji = x_j . z_i + alpha_i.

    ``h`` may be a Hypergraph or its dense incidence matrix.
    """
    B = _incidence(h, X, params)
    A = logits(X, params)
    return float(np.sum(B * A - _softplus(A)))


def grad_log_likelihood(h: Hypergraph | np.ndarray, X: np.ndarray, params: NodeParams):
    """Return (dL/dX, dL/dZ, dL/dalpha)."""
    B = _incidence(h, X, params)
    X = np.asarray(X, dtype=np.float64)
    R = B - expit(logits(X, params))
    return R @ params.Z, R.T @ X, R.sum(axis=0)


def _incidence(h, X, params):
    B = h.incidence() if isinstance(h, Hypergraph) else np.asarray(h, dtype=np.float64)
    X = np.atleast_2d(X)
    if B.shape != (X.shape[0], params.n):
        raise ValidationError(
            f"incidence shape {B.shape} does not match (m={X.shape[0]}, n={params.n})"
        )
    return B


def deterministic_hyperlink(x: np.ndarray, params: NodeParams, threshold: float) -> tuple[int, ...]:
    """Nodes whose inclusion probability reaches ``threshold`` (ties included)."""
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    p = link_probs(np.asarray(x, dtype=np.float64).ravel(), params)
    return tuple(np.flatnonzero(p >= threshold).tolist())


def expected_order(x: np.ndarray, params: NodeParams) -> float:
    return float(link_probs(np.asarray(x, dtype=np.float64).ravel(), params).sum())


# --- CSV serialization -----------------------------------------------------

def save_matrix(path, M: np.ndarray, **header) -> None:
    """Write a numeric matrix as CSV with a ``# key=value`` header line."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    head = " ".join(f"{k}={v}" for k, v in header.items())
    np.savetxt(path, M, delimiter=",", fmt="%.17g", header=head, comments="# ")


def load_matrix(path, ncols: int | None = None) -> tuple[np.ndarray, dict]:
    path = Path(path)
    header = {}
    with open(path, encoding="ascii") as fh:
        first = fh.readline()
    if first.startswith("#"):
        for tok in first[1:].split():
            key, _, val = tok.partition("=")
            header[key] = int(val) if val.lstrip("-").isdigit() else val
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # empty matrix is valid
            M = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if M.size == 0 and ncols is not None:
        M = M.reshape(0, ncols)
    elif M.size == 0 and "K" in header:
        M = M.reshape(0, header["K"])
    return M, header


def save_embeddings(path, X: np.ndarray) -> None:
    X = np.atleast_2d(X)
    save_matrix(path, X, K=X.shape[1], m=X.shape[0])


def load_embeddings(path) -> np.ndarray:
    return load_matrix(path)[0]


def save_node_params(directory, params: NodeParams) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(directory / "Z.csv", params.Z, K=params.K, n=params.n)
    save_matrix(directory / "alpha.csv", params.alpha[:, None], n=params.n)


def load_node_params(directory) -> NodeParams:
    directory = Path(directory)
    Z, _ = load_matrix(directory / "Z.csv")
    alpha, _ = load_matrix(directory / "alpha.csv")
    return NodeParams(Z, alpha.ravel())
