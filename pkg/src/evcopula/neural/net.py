"""Minimal dense-network core: layers, explicit backprop, Adam.

Everything is float64 numpy.  Layers cache what their backward pass
needs; ``MLP.backward`` fills per-layer gradient buffers aligned with
``parameters()``.  Correctness is pinned by central finite-difference
gradient checks in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class Dense:
    """Affine layer with He-scaled Gaussian init."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int):
        self.w = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out))
        self.b = np.zeros(n_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        return x @ self.w + self.b

    def backward(self, g):
        self.dw[:] = self._x.T @ g
        self.db[:] = g.sum(axis=0)
        return g @ self.w.T

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]


class LeakyReLU:
    def __init__(self, slope: float = 0.2):
        self.slope = slope
        self._mask = None

    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, self.slope * x)

    def backward(self, g):
        return np.where(self._mask, g, self.slope * g)

    def params(self):
        return []

    def grads(self):
        return []


class ReLU(LeakyReLU):
    def __init__(self):
        super().__init__(slope=0.0)


class Sigmoid:
    def __init__(self):
        self._y = None

    def forward(self, x, train=False):
        # split by sign so exp never overflows
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        self._y = y
        return y

    def backward(self, g):
        return g * self._y * (1.0 - self._y)

    def params(self):
        return []

    def grads(self):
        return []


class BatchNorm:
    """Per-feature batch normalization with running inference statistics."""

    def __init__(self, n: int, eps: float = 1e-5, decay: float = 0.9):
        self.gamma = np.ones(n)
        self.beta = np.zeros(n)
        self.dgamma = np.zeros(n)
        self.dbeta = np.zeros(n)
        self.eps = eps
        self.decay = decay
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self._cache = None

    def forward(self, x, train=False):
        if train:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = self.decay * self.running_mean + (1.0 - self.decay) * mu
            self.running_var = self.decay * self.running_var + (1.0 - self.decay) * var
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv, train)
        return self.gamma * xhat + self.beta

    def backward(self, g):
        xhat, inv, train = self._cache
        self.dgamma[:] = (g * xhat).sum(axis=0)
        self.dbeta[:] = g.sum(axis=0)
        if not train:
            # running stats are constants in inference mode
            return g * self.gamma * inv
        # in train mode mu and var depend on the batch itself
        return (
            self.gamma
            * inv
            * (g - g.mean(axis=0) - xhat * (g * xhat).mean(axis=0))
        )

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        return [self.dgamma, self.dbeta]


class MLP:
    """A layer stack with shared forward/backward plumbing."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, g) -> np.ndarray:
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def parameters(self):
        return [p for layer in self.layers for p in layer.params()]

    def gradients(self):
        return [g for layer in self.layers for g in layer.grads()]

    def get_state(self):
        return [p.copy() for p in self.parameters()]

    def set_state(self, state):
        for p, s in zip(self.parameters(), state, strict=True):
            p[:] = s

    def get_buffers(self):
        out = []
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                out.append((layer.running_mean.copy(), layer.running_var.copy()))
        return out

    def set_buffers(self, buffers):
        it = iter(buffers)
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                mean, var = next(it)
                layer.running_mean[:] = mean
                layer.running_var[:] = var


def feedforward(rng, widths, activation="leaky_relu", slope=0.2, batch_norm=False):
    """Dense stack widths[0] -> ... -> widths[-1]; linear final layer."""
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise ValueError("need at least input and output widths, all positive")
    layers = []
    for i in range(len(widths) - 1):
        layers.append(Dense(rng, widths[i], widths[i + 1]))
        if i < len(widths) - 2:
            if batch_norm:
                layers.append(BatchNorm(widths[i + 1]))
            if activation == "leaky_relu":
                layers.append(LeakyReLU(slope))
            elif activation == "relu":
                layers.append(ReLU())
            else:
                raise ValueError(f"unknown activation {activation!r}")
    return MLP(layers)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v, strict=True):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def clip_gradients(grads, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def finite_difference_grads(mlp: MLP, x: np.ndarray, head_grad: np.ndarray, train: bool, step=1e-5):
    """Central-difference gradients of sum(forward(x) * head_grad).

    Independent oracle for the backprop implementation; perturbs every
    parameter entry one at a time, so keep the nets tiny.
    """
    out = []
    for p in mlp.parameters():
        g = np.zeros_like(p)
        flat = p.ravel()
        gflat = g.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            hi = float(np.sum(mlp.forward(x, train=train) * head_grad))
            flat[k] = orig - step
            lo = float(np.sum(mlp.forward(x, train=train) * head_grad))
            flat[k] = orig
            gflat[k] = (hi - lo) / (2.0 * step)
        out.append(g)
    return out


@dataclass
class TrainLog:
    """Per-epoch training trace plus early-stopping bookkeeping."""

    losses: list = field(default_factory=list)
    val_epochs: list = field(default_factory=list)
    val_tau_diff: list = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    @property
    def best_tau_diff(self) -> float:
        if not self.val_tau_diff:
            return float("nan")
        return min(self.val_tau_diff)

    def to_dict(self) -> dict:
        return {
            "losses": [float(x) for x in self.losses],
            "val_epochs": list(self.val_epochs),
            "val_tau_diff": [float(x) for x in self.val_tau_diff],
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
        }
