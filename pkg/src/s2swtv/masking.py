"""Bernoulli masks and masked training instances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MASK_MODES, Gather, Mask, RedrawExhausted, RngStream, as_array, check_same_shape

MAX_REDRAWS = 1000


@dataclass(frozen=True)
class MaskedInstance:
    """``input = mask * original``; the loss lives on ``1 - mask``."""

    input: np.ndarray
    mask: Mask


def sample_mask(h: int, w: int, mode: str, mask_rate: float, stream: RngStream) -> Mask:
    """Draw a Bernoulli mask hiding each trace/row/element with prob. ``mask_rate``.

    Draws where nothing or everything is hidden are rejected and redrawn.
    """
    if mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mode!r}")
    if not 0 < mask_rate < 1:
        raise ValueError("mask_rate must lie in (0, 1)")
    rng = stream.numpy()
    size = {"trace": (1, w), "row": (h, 1), "element": (h, w)}[mode]
    for _ in range(MAX_REDRAWS):
        keep = rng.random(size) >= mask_rate
        if keep.any() and not keep.all():
            return Mask(np.broadcast_to(keep, (h, w)).astype(np.float64), mode)
    raise RedrawExhausted(f"no non-degenerate {mode} mask after {MAX_REDRAWS} draws")


def make_instance(y, mask: Mask) -> MaskedInstance:
    y = as_array(y)
    check_same_shape(y, mask.data)
    return MaskedInstance(mask.data * y, mask)


def masked_fidelity(y, prediction, mask) -> float:
    """``||(y - prediction) * (1 - mask)||_F^2``.

    Works on numpy arrays and on torch tensors (the result then stays a
    differentiable scalar tensor).
    """
    y, prediction, mask = (as_array(a) if isinstance(a, (Gather, Mask)) else a for a in (y, prediction, mask))
    check_same_shape(y, prediction, mask)
    total = (((y - prediction) * (1 - mask)) ** 2).sum()
    return total if hasattr(total, "requires_grad") else float(total)
