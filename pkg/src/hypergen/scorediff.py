"""Score-based diffusion on low-dimensional embeddings.

Forward process: the Ornstein-Uhlenbeck SDE dX = -X dt + sqrt(2) dW, whose
marginal given x0 is N(e^-t x0, (1 - e^-2t) I). A dense network is trained by
denoising score matching and the reverse SDE is integrated with the score
held fixed over each step.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, DivergenceError, FormatError
from .nets import MLP, Adam, sinusoidal_features

log = logging.getLogger(__name__)

STEPPERS = ("exponential", "euler")
TIME_SAMPLING = ("uniform", "log-uniform")


@dataclass
class DiffusionSchedule:
    T: float = 5.0
    N: int = 500
    t_min: float = 1e-3

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError(f"T must be > 0, got {self.T}")
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if not 0 <= self.t_min < self.h:
            raise ConfigError(f"t_min must lie in [0, h={self.h}), got {self.t_min}")

    @property
    def h(self) -> float:
        return self.T / self.N


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 128
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    time_sampling: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.time_sampling not in TIME_SAMPLING:
            raise ConfigError(f"time_sampling must be one of {TIME_SAMPLING}")


def noise_scale(t):
    """Standard deviation sqrt(1 - e^-2t) of the OU marginal at time t."""
    return np.sqrt(-np.expm1(-2.0 * np.asarray(t, dtype=np.float64)))


def forward_marginal(x0, t, rng: np.random.Generator):
    """Draw x_t given x0 in closed form. Works on a single vector or a batch."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be non-negative")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.standard_normal(x0.shape)
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1 and x0.ndim == 2:
        t = t[:, None]
    return np.exp(-t) * x0 + noise_scale(t) * eps, eps


DEFAULT_FREQS = np.geomspace(0.25, 32.0, 8)


class ScoreNet:
    """Noise-prediction network over (x, t); the score is -output / sqrt(1 - e^-2t).

    Input is x concatenated with sin/cos features of t at ``freqs``.
    """

    def __init__(self, K, hidden=(128, 128), activation="silu", freqs=None, rng=None, mlp=None):
        self.K = int(K)
        self.freqs = np.asarray(DEFAULT_FREQS if freqs is None else freqs, dtype=np.float64)
        self.hidden = tuple(int(w) for w in hidden)
        widths = (self.K + 2 * self.freqs.size, *self.hidden, self.K)
        self.mlp = MLP(widths, activation, rng=rng) if mlp is None else mlp
        if self.mlp.widths != widths:
            raise ValueError(f"network widths {self.mlp.widths} do not match {widths}")
        self.loss_trace: list[float] = []

    @property
    def activation(self):
        return self.mlp.activation

    def _inputs(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        return np.concatenate([x, sinusoidal_features(t, self.freqs)], axis=1)

    def predict_noise(self, x, t):
        return self.mlp.forward(self._inputs(x, t))

    def score(self, x, t):
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (np.atleast_2d(x).shape[0],))
        return -self.predict_noise(x, t) / noise_scale(t_arr)[:, None]

    __call__ = score

    def frozen(self, dtype=np.float32) -> Callable:
        """Inference-only score function with weights cast to ``dtype``."""
        mlp = self.mlp.astype(dtype)
        freqs = self.freqs

        def score(x, t):
            t_arr = np.full(x.shape[0], t, dtype=np.float64)
            inp = np.concatenate([x, sinusoidal_features(t_arr, freqs)], axis=1).astype(dtype)
            out = mlp.forward(inp).astype(np.float64)
            return -out / noise_scale(t_arr)[:, None]

        return score

    def copy(self) -> "ScoreNet":
        net = ScoreNet(self.K, self.hidden, freqs=self.freqs.copy(), mlp=self.mlp.copy())
        net.loss_trace = list(self.loss_trace)
        return net

    # serialization: one JSON header line, then raw little-endian float64 weights
    def save(self, path, schedule: DiffusionSchedule | None = None) -> None:
        header = {
            "kind": "ScoreNet",
            "K": self.K,
            "widths": list(self.mlp.widths),
            "activation": self.activation,
            "freqs": self.freqs.tolist(),
            "schedule": asdict(schedule) if schedule is not None else None,
            "n_params": int(sum(p.size for p in self.mlp.params)),
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
            fh.write(self.mlp.flat().astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        """Return (net, schedule or None)."""
        with open(path, "rb") as fh:
            head = fh.readline()
            body = fh.read()
        try:
            header = json.loads(head)
        except json.JSONDecodeError:
            raise FormatError(f"{path}: bad weight-file header") from None
        widths = header["widths"]
        mlp = MLP(widths, header["activation"], rng=np.random.default_rng(0))
        vec = np.frombuffer(body, dtype="<f8")
        if vec.size != header["n_params"]:
            raise FormatError(f"{path}: expected {header['n_params']} weights, found {vec.size}")
        mlp.set_flat(vec.astype(np.float64))
        net = cls(header["K"], widths[1:-1], freqs=header["freqs"], mlp=mlp)
        sched = DiffusionSchedule(**header["schedule"]) if header.get("schedule") else None
        return net, sched


def dsm_loss(net: ScoreNet, x0, t, eps, with_grad=False):
    """Denoising score matching in noise-prediction form:
    mean over the batch of ||net(x_t, t) - eps||^2, x_t = e^-t x0 + sigma_t eps."""
    t = np.asarray(t, dtype=np.float64)
    xt = np.exp(-t)[:, None] * x0 + noise_scale(t)[:, None] * eps
    out, cache = net.mlp.forward(net._inputs(xt, t), cache=True)
    r = out - eps
    loss = float(np.sum(r * r) / x0.shape[0])
    if not with_grad:
        return loss
    grads = net.mlp.backward(2.0 * r / x0.shape[0], cache)
    return loss, grads


def sample_times(size, sched: DiffusionSchedule, mode: str, rng: np.random.Generator):
    u = rng.random(size)
    lo = max(sched.t_min, 1e-5)
    if mode == "log-uniform":
        return lo * (sched.T / lo) ** u
    # uniform on (t_min, T]
    return sched.T - (sched.T - sched.t_min) * u


def train_score(data, net: ScoreNet, sched: DiffusionSchedule, cfg: TrainConfig | None = None) -> ScoreNet:
    """Fit ``net`` by minibatch Adam on the DSM loss. Returns a trained copy;
    per-epoch mean losses are kept in ``loss_trace``."""
    cfg = TrainConfig() if cfg is None else cfg
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ValueError("training data is empty")
    if data.shape[1] != net.K:
        raise ValueError(f"data dimension {data.shape[1]} != net K={net.K}")
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.mlp.params, lr=cfg.lr, betas=cfg.betas)
    m = data.shape[0]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(m)
        total = 0.0
        for start in range(0, m, cfg.batch_size):
            x0 = data[perm[start:start + cfg.batch_size]]
            t = sample_times(x0.shape[0], sched, cfg.time_sampling, rng)
            eps = rng.standard_normal(x0.shape)
            loss, grads = dsm_loss(net, x0, t, eps, with_grad=True)
            if not np.isfinite(loss):
                raise DivergenceError("non-finite DSM loss", epoch=epoch)
            opt.step(net.mlp.params, grads)
            total += loss * x0.shape[0]
        net.loss_trace.append(total / m)
    return net


def net_backprop_check(net: ScoreNet, x0, t, eps, n_params=200, step=1e-4, rng=None, floor=1e-6):
    """Largest relative discrepancy between backprop gradients of the DSM loss
    and central finite differences, over up to ``n_params`` random parameters.

    Relative error is |a - f| / max(|a|, |f|, floor).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64)
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    _, grads = dsm_loss(net, x0, t, eps, with_grad=True)
    analytic = np.concatenate([g.ravel() for g in grads])
    theta = net.mlp.flat()
    idx = rng.choice(theta.size, size=min(n_params, theta.size), replace=False)
    probe = net.copy()
    worst = 0.0
    for k in idx:
        vals = []
        for sgn in (1.0, -1.0):
            th = theta.copy()
            th[k] += sgn * step
            probe.mlp.set_flat(th)
            vals.append(dsm_loss(probe, x0, t, eps))
        numeric = (vals[0] - vals[1]) / (2 * step)
        denom = max(abs(analytic[k]), abs(numeric), floor)
        worst = max(worst, abs(analytic[k] - numeric) / denom)
    return worst


ScoreFn = Callable[[np.ndarray, float], np.ndarray]


def sample(score: ScoreFn, sched: DiffusionSchedule, m_tilde: int, rng: np.random.Generator,
           K: int | None = None, stepper: str = "exponential") -> np.ndarray:
    """Integrate the reverse SDE from N(0, I) with the score frozen per step.

    ``score(x, t)`` returns the estimated score at forward time t. Step k
    covers reverse time [kh, (k+1)h] using the score at forward time T - kh;
    the final step is shortened so integration stops at forward time t_min.
    """
    if stepper not in STEPPERS:
        raise ValueError(f"stepper must be one of {STEPPERS}")
    if K is None:
        K = getattr(score, "K", None)
        if K is None:
            raise ValueError("K is required when score is a plain callable")
    if m_tilde == 0:
        return np.zeros((0, K))
    if isinstance(score, ScoreNet):
        score = score.frozen()
    h = sched.h
    x = rng.standard_normal((m_tilde, K))
    for k in range(sched.N):
        t_fwd = sched.T - k * h
        dt = h if k < sched.N - 1 else h - sched.t_min
        s = score(x, t_fwd)
        xi = rng.standard_normal(x.shape)
        if stepper == "exponential":
            e = np.exp(dt)
            x = e * x + 2.0 * (e - 1.0) * s + np.sqrt(np.expm1(2.0 * dt)) * xi
        else:
            x = x + dt * (x + 2.0 * s) + np.sqrt(2.0 * dt) * xi
        if not np.all(np.isfinite(x)):
            raise DivergenceError("non-finite sampler state", step=k)
    return x
