"""Two comparison generators that work directly on the n-bit incidence rows.

Gau-Diff runs the continuous diffusion model on the raw 0/1 rows and
binarizes with per-node thresholds that reproduce the training frequencies.
Ber-Diff is a discrete diffusion on bits: each forward step resamples a bit
to a fair coin with probability beta_k, and a network learns the one-step
reverse posterior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, EmptyInputError
from .hypercore import Hypergraph
from .nets import MLP, Adam, _sigmoid, sinusoidal_features
from .scorediff import DEFAULT_FREQS, DiffusionSchedule, ScoreNet, TrainConfig, sample, train_score


def _rows(h: Hypergraph) -> np.ndarray:
    if h.m == 0:
        raise EmptyInputError("hypergraph has no hyperlinks")
    return h.incidence().astype(np.float64)


def _to_hypergraph(B: np.ndarray) -> Hypergraph:
    return Hypergraph.from_incidence(B)


# ---------------------------------------------------------------- Gau-Diff

def calibration_thresholds(G: np.ndarray, freq: np.ndarray) -> np.ndarray:
    """Per-column (1 - freq_i)-quantile of ``G``; +inf where freq is 0 and
    -inf where it is 1, so those nodes are never / always kept."""
    freq = np.asarray(freq, dtype=np.float64)
    tau = np.empty(freq.size)
    inner = (freq > 0) & (freq < 1)
    if np.any(inner):
        cols = np.flatnonzero(inner)
        # quantile per column; 'higher' keeps the selected count within one of freq * m~
        tau[cols] = [np.quantile(G[:, i], 1.0 - freq[i], method="higher") for i in cols]
    tau[freq <= 0] = np.inf
    tau[freq >= 1] = -np.inf
    return tau


@dataclass
class GauDiffModel:
    net: ScoreNet
    thresholds: np.ndarray
    schedule: DiffusionSchedule
    train_freq: np.ndarray = field(repr=False)

    def binarize(self, G: np.ndarray) -> np.ndarray:
        return (G >= self.thresholds).astype(np.int8)


def gau_diff_fit_sample(h: Hypergraph, sched: DiffusionSchedule, cfg: TrainConfig, m_tilde: int,
                        rng: np.random.Generator, hidden=(128, 128)):
    """Returns (generated hypergraph, fitted GauDiffModel)."""
    B = _rows(h)
    freq = B.mean(axis=0)
    net = ScoreNet(h.n, hidden=hidden, rng=rng)
    net = train_score(B, net, sched, cfg)
    G = sample(net, sched, m_tilde, rng)
    tau = calibration_thresholds(G, freq)
    model = GauDiffModel(net, tau, sched, freq)
    if m_tilde == 0:
        return Hypergraph(h.n, ()), model
    return _to_hypergraph(model.binarize(G)), model


# ---------------------------------------------------------------- Ber-Diff

def default_betas(N: int) -> np.ndarray:
    """beta_k = 1/(N - k + 2), k = 1..N; the keep-probability product
    telescopes to (N - k + 1)/(N + 1)."""
    k = np.arange(1, N + 1)
    return 1.0 / (N - k + 2.0)


def forward_step(x: np.ndarray, beta: float, rng: np.random.Generator) -> np.ndarray:
    """One forward step: each bit is replaced by a fair coin with prob ``beta``."""
    resample = rng.random(x.shape) < beta
    coin = rng.random(x.shape) < 0.5
    return np.where(resample, coin, x.astype(bool)).astype(np.int8)


def marginal_keep(betas: np.ndarray) -> np.ndarray:
    """abar_k = prod_{j<=k}(1 - beta_j) for k = 0..N (abar_0 = 1)."""
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


def forward_marginal_bits(x0, k, abar, rng):
    """x_k given x0: keep x0 with prob abar_k, else a fair coin."""
    a = abar[k][:, None]
    keep = rng.random(x0.shape) < a
    coin = rng.random(x0.shape) < 0.5
    return np.where(keep, x0.astype(bool), coin).astype(np.float64)


def posterior_one(x0, xk, k, betas, abar):
    """q(x_{k-1} = 1 | x_k, x_0) for the resample-to-fair-coin kernel."""
    a_prev = abar[k - 1][:, None]
    b = betas[k - 1][:, None]
    p1 = a_prev * x0 + 0.5 * (1.0 - a_prev)          # q(x_{k-1}=1 | x0)
    stay, move = 1.0 - 0.5 * b, 0.5 * b              # q(x_k | x_{k-1}) same / different
    lik1 = np.where(xk > 0.5, stay, move)
    lik0 = np.where(xk > 0.5, move, stay)
    num = p1 * lik1
    return num / (num + (1.0 - p1) * lik0)


@dataclass
class BerDiffModel:
    """Reverse network over (x_k coded +/-1, step features) -> logits of
    q(x_{k-1} = 1 | x_k)."""

    betas: np.ndarray
    mlp: MLP
    freqs: np.ndarray = field(default_factory=lambda: DEFAULT_FREQS.copy())
    loss_trace: list = field(default_factory=list)

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or self.betas.size < 1:
            raise ConfigError("betas must be a non-empty 1-d array")
        if np.any(self.betas < 0) or np.any(self.betas >= 1):
            raise ConfigError("betas must lie in [0, 1)")

    @classmethod
    def create(cls, n, N=100, betas=None, hidden=(128, 128), rng=None):
        betas = default_betas(N) if betas is None else np.asarray(betas, dtype=np.float64)
        widths = (n + 2 * DEFAULT_FREQS.size, *hidden, n)
        return cls(betas, MLP(widths, "silu", rng=rng))

    @property
    def N(self) -> int:
        return self.betas.size

    def _inputs(self, xk, k):
        feats = sinusoidal_features(np.asarray(k, dtype=np.float64) / self.N, self.freqs)
        return np.concatenate([2.0 * xk - 1.0, feats], axis=1)

    def logits(self, xk, k, cache=False):
        return self.mlp.forward(self._inputs(xk, k), cache=cache)

    def probs(self, xk, k):
        return _sigmoid(self.logits(xk, k))


def bce_loss(model: BerDiffModel, x0, k, xk, with_grad=False):
    """Cross-entropy of predicted reverse probabilities against the exact
    forward posterior, summed over bits and averaged over the batch."""
    abar = marginal_keep(model.betas)
    target = posterior_one(x0, xk, k, model.betas, abar)
    z, cache = model.logits(xk, k, cache=True)
    # softplus(z) - target * z == -[t log s(z) + (1 - t) log(1 - s(z))]
    loss = float(np.sum(np.logaddexp(0.0, z) - target * z) / x0.shape[0])
    if not with_grad:
        return loss
    return loss, model.mlp.backward((_sigmoid(z) - target) / x0.shape[0], cache)


def train_ber_diff(h: Hypergraph, model: BerDiffModel, cfg: TrainConfig) -> BerDiffModel:
    B = _rows(h)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.mlp.params, lr=cfg.lr, betas=cfg.betas)
    abar = marginal_keep(model.betas)
    m = B.shape[0]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(m)
        total = 0.0
        for start in range(0, m, cfg.batch_size):
            x0 = B[perm[start:start + cfg.batch_size]]
            k = rng.integers(1, model.N + 1, size=x0.shape[0])
            xk = forward_marginal_bits(x0, k, abar, rng)
            loss, grads = bce_loss(model, x0, k, xk, with_grad=True)
            if not np.isfinite(loss):
                raise DivergenceError("non-finite Ber-Diff loss", epoch=epoch)
            opt.step(model.mlp.params, grads)
            total += loss * x0.shape[0]
        model.loss_trace.append(total / m)
    return model


def ber_diff_sample(model: BerDiffModel, m_tilde: int, rng: np.random.Generator) -> np.ndarray:
    """Start from fair coins and draw x_{k-1} ~ Bernoulli(model) for k = N..1."""
    n = model.mlp.widths[-1]
    fast = model.mlp.astype(np.float32)
    x = (rng.random((m_tilde, n)) < 0.5).astype(np.float64)
    for k in range(model.N, 0, -1):
        inp = model._inputs(x, np.full(m_tilde, k)).astype(np.float32)
        p = _sigmoid(fast.forward(inp).astype(np.float64))
        x = (rng.random(x.shape) < p).astype(np.float64)
    return x.astype(np.int8)


def ber_diff_fit_sample(h: Hypergraph, N: int, cfg: TrainConfig, m_tilde: int,
                        rng: np.random.Generator, betas=None, hidden=(128, 128)):
    """Returns (generated hypergraph, fitted BerDiffModel)."""
    if betas is not None and len(betas) != N:
        raise ConfigError(f"got {len(betas)} betas for N={N}")
    model = BerDiffModel.create(h.n, N, betas, hidden, rng)
    model = train_ber_diff(h, model, cfg)
    if m_tilde == 0:
        return Hypergraph(h.n, ()), model
    return _to_hypergraph(ber_diff_sample(model, m_tilde, rng)), model
