"""Small dense networks in plain numpy, with hand-written backprop and Adam.

Kept in float64 so finite-difference checks are meaningful and runs are
bit-reproducible on a given machine.
"""

from __future__ import annotations

import numpy as np

ACTIVATIONS = ("silu", "tanh")


def _sigmoid(u):
    # tanh form: overflow-free and cheaper than exp-based evaluation
    return 0.5 + 0.5 * np.tanh(0.5 * u)


def _act(name, u):
    if name == "silu":
        return u * _sigmoid(u)
    return np.tanh(u)


def _act_grad(name, u):
    if name == "silu":
        s = _sigmoid(u)
        return s * (1.0 + u * (1.0 - s))
    t = np.tanh(u)
    return 1.0 - t * t


def sinusoidal_features(t: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """[sin(f t), cos(f t)] for each frequency; t has shape (batch,)."""
    arg = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


class MLP:
    """Fully connected net: hidden layers use ``activation``, output is linear."""

    def __init__(self, widths, activation="silu", rng=None, params=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.widths = tuple(int(w) for w in widths)
        self.activation = activation
        if params is None:
            rng = np.random.default_rng(0) if rng is None else rng
            params = []
            for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
                W = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out))
                params += [W, np.zeros(fan_out)]
        self.params = [np.asarray(p) for p in params]

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def forward(self, inp, cache=False):
        h = inp
        pre = []
        acts = [inp]
        for layer in range(self.n_layers):
            W, b = self.params[2 * layer], self.params[2 * layer + 1]
            u = h @ W + b
            if layer < self.n_layers - 1:
                pre.append(u)
                h = _act(self.activation, u)
                acts.append(h)
            else:
                h = u
        if cache:
            return h, (pre, acts)
        return h

    def backward(self, grad_out, cache):
        """Gradients of a scalar loss w.r.t. every parameter, given dLoss/dOutput."""
        pre, acts = cache
        grads = [None] * len(self.params)
        g = grad_out
        for layer in reversed(range(self.n_layers)):
            grads[2 * layer] = acts[layer].T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            if layer > 0:
                g = (g @ self.params[2 * layer].T) * _act_grad(self.activation, pre[layer - 1])
        return grads

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        out, pos = [], 0
        for p in self.params:
            out.append(vec[pos:pos + p.size].reshape(p.shape))
            pos += p.size
        self.params = out

    def astype(self, dtype) -> "MLP":
        """Copy with parameters cast to ``dtype`` (for fast inference)."""
        return MLP(self.widths, self.activation, params=[p.astype(dtype) for p in self.params])

    def copy(self) -> "MLP":
        return MLP(self.widths, self.activation, params=[p.copy() for p in self.params])


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
