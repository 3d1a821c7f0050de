"""Ground-truth simulator: truncated Gaussian-mixture embeddings, uniform
degree parameters, hypergraph drawn from the logistic model."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import truncnorm

from .errors import ConfigError
from .hypercore import Hypergraph
from .linmodel import NodeParams, sample_hyperlinks


@dataclass
class SimConfig:
    K: int = 2
    m: int = 300
    n: int = 300
    alpha_range: tuple[float, float] = (-1.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        self.alpha_range = tuple(float(a) for a in self.alpha_range)
        if self.K < 1 or self.m < 1 or self.n < 1:
            raise ConfigError(f"K, m, n must be positive (got K={self.K}, m={self.m}, n={self.n})")
        if len(self.alpha_range) != 2 or self.alpha_range[0] > self.alpha_range[1]:
            raise ConfigError(f"alpha_range must be [lo, hi] with lo <= hi, got {self.alpha_range}")

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - {"K", "m", "n", "alpha_range", "seed"}
        if unknown:
            raise ConfigError(f"unknown SimConfig fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_range"] = list(self.alpha_range)
        return d

    def streams(self) -> dict[str, np.random.Generator]:
        """Independent generators for each ingredient, derived from ``seed``."""
        names = ("links", "nodes", "alpha", "hypergraph", "reference")
        seqs = np.random.SeedSequence(self.seed).spawn(len(names))
        return {name: np.random.default_rng(s) for name, s in zip(names, seqs)}


def link_component_means(K: int) -> np.ndarray:
    """Row k: 1_K/(K sqrt K) - e_k/sqrt K."""
    return np.ones((K, K)) / (K * np.sqrt(K)) - np.eye(K) / np.sqrt(K)


def node_component_means(K: int) -> np.ndarray:
    """Row k: 1_K/sqrt K + e_k/sqrt K."""
    return np.ones((K, K)) / np.sqrt(K) + np.eye(K) / np.sqrt(K)


def link_support(K: int) -> tuple[float, float]:
    return -2.0 / np.sqrt(K), 0.0


def node_support(K: int) -> tuple[float, float]:
    return 0.0, 2.0 / np.sqrt(K)


def truncated_mixture(size: int, means: np.ndarray, support: tuple[float, float],
                      rng: np.random.Generator, return_labels: bool = False):
    """Uniform mixture of unit-variance normals, each coordinate truncated to
    ``support`` and drawn by inverse CDF."""
    K = means.shape[1]
    lo, hi = support
    labels = rng.integers(means.shape[0], size=size)
    u = rng.random((size, K))
    mu = means[labels]
    x = truncnorm.ppf(u, lo - mu, hi - mu, loc=mu, scale=1.0)
    x = np.clip(x, lo, hi)
    return (x, labels) if return_labels else x


def sample_hyperlink_embeddings(cfg: SimConfig, rng: np.random.Generator | None = None,
                                size: int | None = None) -> np.ndarray:
    rng = cfg.streams()["links"] if rng is None else rng
    return truncated_mixture(cfg.m if size is None else size,
                             link_component_means(cfg.K), link_support(cfg.K), rng)


def sample_node_embeddings(cfg: SimConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    rng = cfg.streams()["nodes"] if rng is None else rng
    return truncated_mixture(cfg.n, node_component_means(cfg.K), node_support(cfg.K), rng)


def sample_alphas(cfg: SimConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    rng = cfg.streams()["alpha"] if rng is None else rng
    lo, hi = cfg.alpha_range
    return lo + (hi - lo) * rng.random(cfg.n)


@dataclass
class GroundTruth:
    hypergraph: Hypergraph
    X: np.ndarray
    params: NodeParams
    config: SimConfig = field(repr=False)

    def __iter__(self):
        return iter((self.hypergraph, self.X, self.params))

    def reference_sample(self, size: int, rng: np.random.Generator | None = None) -> Hypergraph:
        """A fresh hypergraph of ``size`` links from the true generating process."""
        rng = self.config.streams()["reference"] if rng is None else rng
        X = sample_hyperlink_embeddings(self.config, rng, size=size)
        return sample_hyperlinks(X, self.params, rng)


def generate_ground_truth(cfg: SimConfig) -> GroundTruth:
    streams = cfg.streams()
    X = sample_hyperlink_embeddings(cfg, streams["links"])
    Z = sample_node_embeddings(cfg, streams["nodes"])
    alpha = sample_alphas(cfg, streams["alpha"])
    params = NodeParams(Z, alpha)
    h = sample_hyperlinks(X, params, streams["hypergraph"])
    return GroundTruth(h, X, params, cfg)
