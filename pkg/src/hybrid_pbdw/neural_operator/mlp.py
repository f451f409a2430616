"""Dense tanh networks with hand-written reverse mode, and Adam."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass
class MlpParams:
    """Weights ``W[l]`` (fan_in x fan_out) and biases ``b[l]``; tanh on hidden layers."""

    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0

    @property
    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(list(self.widths), [W.copy() for W in self.weights],
                         [b.copy() for b in self.biases], self.seed)

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays)


def init_mlp(widths: Sequence[int], seed: int = 0) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError(f"invalid layer widths {widths}")
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MlpParams(widths, Ws, bs, seed)


def mlp_forward(params: MlpParams, x: np.ndarray, keep: bool = False):
    """Affine + tanh per hidden layer, affine output. Rows of ``x`` are samples.

    With ``keep=True`` also returns the activations needed by :func:`mlp_backward`.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.widths[0]:
        raise ValueError(f"expected input of shape (batch, {params.widths[0]}), got {x.shape}")
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W + b
        if l < last:
            h = np.tanh(h)
        acts.append(h)
    return (h, acts) if keep else h


def mlp_backward(params: MlpParams, acts: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
    """Gradients ordered like :attr:`MlpParams.arrays`."""
    grads: list[np.ndarray] = [None] * (2 * len(params.weights))  # type: ignore[list-item]
    g = grad_out
    for l in range(len(params.weights) - 1, -1, -1):
        grads[2 * l] = acts[l].T @ g
        grads[2 * l + 1] = g.sum(axis=0)
        if l > 0:
            g = (g @ params.weights[l].T) * (1.0 - acts[l] ** 2)
    return grads


def mlp_gradient(params: MlpParams, x: np.ndarray,
                 loss: Callable[[np.ndarray], tuple[float, np.ndarray]]) -> tuple[float, list[np.ndarray]]:
    """Loss value and parameter gradients; ``loss(out)`` returns ``(value, dvalue/dout)``."""
    out, acts = mlp_forward(params, x, keep=True)
    value, g = loss(out)
    return value, mlp_backward(params, acts, g)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


@dataclass
class Adam:
    """Adam with ``lr_t = lr * decay ** (epoch / decay_every)``."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.99
    decay_every: int = 1

    def init(self, arrays: Sequence[np.ndarray]) -> AdamState:
        return AdamState([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay ** (epoch / self.decay_every)

    def step(self, arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             state: AdamState, lr: float) -> None:
        """Update ``arrays`` in place."""
        state.t += 1
        bc1 = 1.0 - self.beta1 ** state.t
        bc2 = 1.0 - self.beta2 ** state.t
        for p, g, m, v in zip(arrays, grads, state.m, state.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(arrays, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    Adam(lr, beta1, beta2, eps).step(arrays, grads, state, lr)
