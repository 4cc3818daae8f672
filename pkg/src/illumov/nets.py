"""Minimal dense generative network: forward pass, analytic gradients, Adam.

The decoder maps a small latent vector through two ReLU hidden layers to a
sigmoid output the size of an image.  Everything is float64 numpy; sizes are
tiny (latent 5, hiddens 10/20), so there is no need for a real autodiff
framework and the analytic gradients can be checked against finite
differences exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit


@dataclass
class GfcnParams:
    """Weights and biases of one generative decoder (d -> h1 -> h2 -> m)."""

    w1: np.ndarray  # (h1, d)
    b1: np.ndarray  # (h1,)
    w2: np.ndarray  # (h2, h1)
    b2: np.ndarray  # (h2,)
    w3: np.ndarray  # (m, h2)
    b3: np.ndarray  # (m,)

    def __post_init__(self):
        h1, d = self.w1.shape
        h2 = self.w2.shape[0]
        m = self.w3.shape[0]
        if self.w2.shape != (h2, h1) or self.w3.shape != (m, h2):
            raise ValueError("inconsistent layer shapes")
        if self.b1.shape != (h1,) or self.b2.shape != (h2,) or self.b3.shape != (m,):
            raise ValueError("bias shapes do not match weight shapes")

    @property
    def latent_size(self) -> int:
        return self.w1.shape[1]

    @property
    def output_size(self) -> int:
        return self.w3.shape[0]

    @property
    def hidden_sizes(self) -> tuple[int, int]:
        return (self.w1.shape[0], self.w2.shape[0])

    def flatten(self) -> np.ndarray:
        """Single flat vector in a fixed order (w1, b1, w2, b2, w3, b3)."""
        return np.concatenate(
            [a.ravel() for a in (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)]
        )

    def with_flat(self, flat: np.ndarray) -> "GfcnParams":
        """New params with the same shapes, filled from a flat vector."""
        parts = []
        offset = 0
        for a in (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3):
            parts.append(flat[offset : offset + a.size].reshape(a.shape).copy())
            offset += a.size
        if offset != flat.size:
            raise ValueError(f"flat vector has {flat.size} elements, expected {offset}")
        return GfcnParams(*parts)

    def weight_sq_norm(self) -> float:
        """Sum of squared weights, biases excluded."""
        return float((self.w1 ** 2).sum() + (self.w2 ** 2).sum() + (self.w3 ** 2).sum())

    def copy(self) -> "GfcnParams":
        return GfcnParams(*(a.copy() for a in (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)))


class ForwardCache(NamedTuple):
    """Activations kept from a forward pass for the matching backward pass."""

    u: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    out: np.ndarray


def init_params(latent_size: int, output_size: int, seed: int,
                hidden_sizes: tuple[int, int] = (10, 20)) -> GfcnParams:
    """Glorot-uniform weights, zero biases, deterministic for a given seed."""
    if latent_size < 1 or output_size < 1:
        raise ValueError("latent and output sizes must be >= 1")
    h1, h2 = hidden_sizes
    rng = np.random.default_rng(seed)

    def glorot(fan_out, fan_in):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, size=(fan_out, fan_in))

    return GfcnParams(
        w1=glorot(h1, latent_size), b1=np.zeros(h1),
        w2=glorot(h2, h1), b2=np.zeros(h2),
        w3=glorot(output_size, h2), b3=np.zeros(output_size),
    )


def gfcn_forward(params: GfcnParams, u: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass sigmoid(W3 relu(W2 relu(W1 u + b1) + b2) + b3).

    ``u`` may be a single latent vector (d,) or a batch (n, d); the output has
    the matching shape (m,) or (n, m).
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != params.latent_size:
        raise ValueError(
            f"latent size {u.shape[-1]} does not match params ({params.latent_size})"
        )
    z1 = u @ params.w1.T + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.w2.T + params.b2
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ params.w3.T + params.b3
    out = expit(z3)
    return out, ForwardCache(u, z1, a1, z2, a2, out)


def gfcn_backward(params: GfcnParams, cache: ForwardCache,
                  grad_output: np.ndarray) -> tuple[GfcnParams, np.ndarray]:
    """Analytic gradients of sum(output * grad_output) w.r.t. params and u.

    ReLU subgradient at 0 is taken as 0.  Returns a GfcnParams-shaped gradient
    container and the gradient w.r.t. the latent input (same shape as u).
    Batched caches accumulate parameter gradients over the batch.
    """
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != cache.out.shape:
        raise ValueError("grad_output shape does not match forward output")
    batched = grad_output.ndim == 2
    go = grad_output if batched else grad_output[None, :]
    u = cache.u if batched else cache.u[None, :]
    z1 = cache.z1 if batched else cache.z1[None, :]
    a1 = cache.a1 if batched else cache.a1[None, :]
    z2 = cache.z2 if batched else cache.z2[None, :]
    a2 = cache.a2 if batched else cache.a2[None, :]
    out = cache.out if batched else cache.out[None, :]

    dz3 = go * out * (1.0 - out)
    gw3 = dz3.T @ a2
    gb3 = dz3.sum(axis=0)
    da2 = dz3 @ params.w3
    dz2 = da2 * (z2 > 0.0)
    gw2 = dz2.T @ a1
    gb2 = dz2.sum(axis=0)
    da1 = dz2 @ params.w2
    dz1 = da1 * (z1 > 0.0)
    gw1 = dz1.T @ u
    gb1 = dz1.sum(axis=0)
    gu = dz1 @ params.w1

    grads = GfcnParams(gw1, gb1, gw2, gb2, gw3, gb3)
    return grads, (gu if batched else gu[0])


@dataclass
class AdamState:
    """Adam optimizer state for one flat parameter vector."""

    lr: float
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_size(cls, n: int, lr: float) -> "AdamState":
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        return cls(lr=lr, first_moment=np.zeros(n), second_moment=np.zeros(n))


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One Adam update with bias correction; mutates ``state``, returns new params."""
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ValueError("params/grads/state length mismatch")
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * grads
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * grads ** 2
    m_hat = state.first_moment / (1.0 - state.beta1 ** t)
    v_hat = state.second_moment / (1.0 - state.beta2 ** t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class RowwiseAdam:
    """Adam over a (n, k) array where only some rows receive gradients per step.

    Each row keeps its own step count, so bias correction matches what a
    per-row :func:`adam_step` would do.  Used for per-frame variables under
    minibatch training.
    """

    lr: float
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_counts: np.ndarray  # (n,) int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_shape(cls, shape: tuple[int, ...], lr: float) -> "RowwiseAdam":
        return cls(
            lr=lr,
            first_moment=np.zeros(shape),
            second_moment=np.zeros(shape),
            step_counts=np.zeros(shape[0], dtype=np.int64),
        )

    def step_rows(self, params: np.ndarray, grads: np.ndarray,
                  rows: np.ndarray) -> np.ndarray:
        """Update and return the selected rows of ``params``; mutates state."""
        if params.shape != grads.shape:
            raise ValueError("params/grads shape mismatch")
        self.step_counts[rows] += 1
        t = self.step_counts[rows].reshape((-1,) + (1,) * (params.ndim - 1))
        m = self.first_moment[rows]
        v = self.second_moment[rows]
        m = self.beta1 * m + (1.0 - self.beta1) * grads
        v = self.beta2 * v + (1.0 - self.beta2) * grads ** 2
        self.first_moment[rows] = m
        self.second_moment[rows] = v
        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
