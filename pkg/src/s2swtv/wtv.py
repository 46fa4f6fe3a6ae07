"""Weighted total variation along the trace axis and its ADMM updates.

The state carries one shared auxiliary variable ``v`` and one multiplier
``lam`` (both H x (W-1)), plus the non-negative weight matrix.  All update
functions return a new state; nothing is mutated in place.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .core import NegativeWeight, ShapeMismatch, TooSmall, as_array


@dataclass(frozen=True)
class WtvState:
    v: np.ndarray
    lam: np.ndarray
    weights: np.ndarray
    gamma: float = 0.01
    mu: float = 0.1
    iteration: int = 0
    weight_period: int = 100
    weight_freeze: int = 3000

    @classmethod
    def initial(cls, h: int, w: int, gamma=0.01, mu=0.1, weight_period=100, weight_freeze=3000) -> WtvState:
        shape = (h, w - 1)
        return cls(
            v=np.zeros(shape),
            lam=np.zeros(shape),
            weights=np.ones(shape),
            gamma=gamma,
            mu=mu,
            weight_period=weight_period,
            weight_freeze=weight_freeze,
        )

    @classmethod
    def from_config(cls, h: int, w: int, config) -> WtvState:
        return cls.initial(h, w, config.gamma, config.mu, config.weight_period, config.weight_freeze)

    def replace(self, **changes) -> WtvState:
        return dataclasses.replace(self, **changes)


def _numpy(x) -> np.ndarray:
    if hasattr(x, "detach"):
        return x.detach().cpu().numpy().astype(np.float64)
    return np.asarray(as_array(x), dtype=np.float64)


def horizontal_derivative(x):
    """Forward difference across traces: ``out[i, j] = x[i, j+1] - x[i, j]``.

    Accepts numpy arrays or torch tensors (differentiable); leading batch
    dimensions are allowed.
    """
    if not hasattr(x, "detach"):
        x = as_array(x)
    if x.shape[-1] < 2:
        raise TooSmall("horizontal derivative needs at least two traces")
    return x[..., 1:] - x[..., :-1]


def horizontal_derivative_adjoint(z) -> np.ndarray:
    """Transpose of :func:`horizontal_derivative`, mapping H x (W-1) to H x W."""
    z = np.asarray(z)
    out = np.zeros(z.shape[:-1] + (z.shape[-1] + 1,), dtype=z.dtype)
    out[..., :-1] -= z
    out[..., 1:] += z
    return out


def wtv_norm(x, weights) -> float:
    weights = np.asarray(weights)
    d = horizontal_derivative(_numpy(x))
    if weights.shape != d.shape:
        raise ShapeMismatch(f"weights {weights.shape} do not match derivative {d.shape}")
    if np.any(weights < 0):
        raise NegativeWeight("WTV weights must be non-negative")
    return float(np.abs(weights * d).sum())


def soft_threshold(y, v):
    """``sign(y) * max(|y| - v, 0)``, the minimizer of ``(y - x)**2 + 2 v |x|``."""
    y = np.asarray(y)
    return np.sign(y) * np.maximum(np.abs(y) - v, 0.0)


def _checked_derivative(state: WtvState, net_output) -> np.ndarray:
    # differentiate at the output's own precision so v can match it exactly
    d = _numpy(horizontal_derivative(net_output))
    if d.shape != state.v.shape:
        raise ShapeMismatch(f"net output derivative {d.shape} does not match state {state.v.shape}")
    return d


def update_v(state: WtvState, net_output) -> WtvState:
    """Closed-form V step: elementwise soft threshold at ``gamma * W / mu``."""
    d = _checked_derivative(state, net_output)
    if state.mu == 0:
        return state
    v = soft_threshold(d + state.lam / state.mu, state.gamma * state.weights / state.mu)
    return state.replace(v=v)


def update_lambda(state: WtvState, net_output) -> WtvState:
    d = _checked_derivative(state, net_output)
    return state.replace(lam=state.lam + state.mu * (d - state.v))


def weight_refresh_due(state: WtvState) -> bool:
    return state.iteration % state.weight_period == 0 and state.iteration < state.weight_freeze


def update_weights(state: WtvState, y, net_output, epsilon: float = 1e-8) -> WtvState:
    """Refresh W on schedule: residual energy over derivative magnitude.

    ``W[i, j] = ||y - f||_F^2 / (2 H W (|grad_h f|[i, j] + epsilon))``, applied
    when ``iteration % weight_period == 0`` and ``iteration < weight_freeze``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not weight_refresh_due(state):
        return state
    f = _numpy(net_output)
    y = _numpy(y)
    if y.shape != f.shape:
        raise ShapeMismatch(f"y {y.shape} and net output {f.shape} differ")
    d = _checked_derivative(state, net_output)
    h, w = f.shape
    residual = float(((y - f) ** 2).sum())
    return state.replace(weights=residual / (2.0 * h * w * (np.abs(d) + epsilon)))


def augmented_penalty(state: WtvState, net_output):
    """``(mu / 2) * ||grad_h f + lam / mu - v||_F^2``.

    Returns a differentiable scalar when ``net_output`` is a torch tensor.
    """
    if state.mu == 0:
        return net_output.sum() * 0.0 if hasattr(net_output, "detach") else 0.0
    d = horizontal_derivative(net_output)
    if tuple(d.shape) != state.v.shape:
        raise ShapeMismatch(f"net output derivative {tuple(d.shape)} does not match state {state.v.shape}")
    shift = state.lam / state.mu - state.v
    if hasattr(net_output, "detach"):
        import torch

        shift = torch.as_tensor(shift, dtype=net_output.dtype, device=net_output.device)
        return 0.5 * state.mu * ((d + shift) ** 2).sum()
    return float(0.5 * state.mu * ((d + shift) ** 2).sum())
