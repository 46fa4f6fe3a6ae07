"""Dropout-ensemble inference: average P masked, dropout-sampled passes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .core import RngStream, as_array, validate_gather
from .masking import make_instance, sample_mask
from .network import apply, instance_tensors


@dataclass(frozen=True)
class EnsembleResult:
    mean: np.ndarray
    per_sample_std: np.ndarray
    p: int


def ordered_mean(samples: np.ndarray) -> np.ndarray:
    """Mean over axis 0 that is bit-identical under any permutation of samples.

    Values are sorted per element before a float64 summation, so the result
    does not depend on the order in which samples were produced.
    """
    stacked = np.sort(np.asarray(samples, dtype=np.float64), axis=0)
    return stacked.sum(axis=0) / stacked.shape[0]


def ensemble_samples(model, y, config, stream: RngStream, samples: int | None = None) -> np.ndarray:
    """The P individual outputs, shape ``(P, H, W)``.

    Member ``p`` draws its mask from ``stream.child(2p)`` and its dropout from
    ``stream.child(2p + 1)``.
    """
    y = np.asarray(as_array(validate_gather(y)))
    h, w = y.shape
    count = samples or config.ensemble_size
    outputs = np.empty((count, h, w))
    with torch.no_grad():
        for p in range(count):
            mask = sample_mask(h, w, config.mask_mode, config.mask_rate, stream.child(2 * p))
            x, m = instance_tensors(model, make_instance(y, mask))
            outputs[p] = apply(model, x, m, stream.child(2 * p + 1).torch()).numpy()
    return outputs


def ensemble_denoise(model, y, config, stream: RngStream, samples: int | None = None) -> EnsembleResult:
    """Average ``samples`` (default ``config.ensemble_size``) stochastic passes."""
    outputs = ensemble_samples(model, y, config, stream, samples)
    return EnsembleResult(ordered_mean(outputs), outputs.std(axis=0), outputs.shape[0])
