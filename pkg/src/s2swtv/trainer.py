"""ADMM-based self-supervised training for one gather and for slice groups.

Per iteration ``t`` of :func:`train_single`:

1. draw a fresh mask and form the masked instance;
2. one forward pass of the network;
3. V update (soft threshold) from that output;
4. masked fidelity + coupling penalty, one Adam step on the network;
5. multiplier update from the same (pre-Adam) output;
6. on schedule, refresh the WTV weights from the same output.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import torch

from .core import DivergenceDetected, RunConfig, ShapeMismatch, as_array, derive_stream, validate_gather
from .inference import EnsembleResult, ensemble_denoise
from .masking import make_instance, masked_fidelity, sample_mask
from .metrics import psnr
from .network import AdamState, Architecture, adam_step, apply, clone_params, init_params, instance_tensors
from .wtv import WtvState, augmented_penalty, update_lambda, update_v, update_weights

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def iteration_index(slice_index: int, t: int) -> int:
    return (slice_index << 32) | t


def inference_stream(seed: int, slice_index: int):
    return derive_stream(seed, "mask", iteration_index(slice_index, 2**32 - 1))


def trace_stream(seed: int, slice_index: int):
    return derive_stream(seed, "dropout", iteration_index(slice_index, 2**32 - 1))


@dataclass
class TrainRun:
    config: RunConfig
    params: torch.nn.Module
    wtv_state: WtvState
    opt_state: AdamState
    iteration: int = 0
    loss_trace: list = field(default_factory=list)
    psnr_trace: list = field(default_factory=list)


def initial_params(config: RunConfig):
    return init_params(Architecture.from_config(config), derive_stream(config.seed, "init", 0), DTYPES[config.precision])


def train_single(
    y,
    config: RunConfig,
    init=None,
    iters: int | None = None,
    *,
    clean=None,
    scale: float = 1.0,
    slice_index: int = 0,
    callback: Callable[[dict], None] | None = None,
    checkpoint: Callable[[int, int, torch.nn.Module], None] | None = None,
    checkpoint_every: int = 0,
) -> TrainRun:
    """Train on one gather for ``iters`` ADMM iterations (default ``config.t1``).

    ``init`` is copied, never modified.  When ``clean`` (same units as ``y``)
    is given, a PSNR trace of a ``trace_samples``-member ensemble is recorded
    every ``trace_every`` iterations and at the end; ``scale`` maps both back
    to the unit-max convention used by PSNR.
    """
    y = np.asarray(as_array(validate_gather(y)), dtype=np.float64)
    h, w = y.shape
    iters = config.t1 if iters is None else iters
    model = clone_params(init if init is not None else initial_params(config))
    dtype = next(model.parameters()).dtype
    y_t = torch.as_tensor(y, dtype=dtype)
    run = TrainRun(config, model, WtvState.from_config(h, w, config), AdamState())
    params = list(model.parameters())
    start = time.perf_counter()

    for t in range(iters):
        idx = iteration_index(slice_index, t)
        mask = sample_mask(h, w, config.mask_mode, config.mask_rate, derive_stream(config.seed, "mask", idx))
        x, m = instance_tensors(model, make_instance(y, mask))
        out = apply(model, x, m, derive_stream(config.seed, "dropout", idx).torch())
        out_np = out.detach()

        state = update_v(run.wtv_state.replace(iteration=t), out_np)
        fidelity = masked_fidelity(y_t, out, m)
        penalty = augmented_penalty(state, out)
        loss = fidelity + penalty
        if not torch.isfinite(loss):
            raise DivergenceDetected(t)
        grads = torch.autograd.grad(loss, params)
        model, run.opt_state = adam_step(model, grads, run.opt_state, config.step_size)

        state = update_lambda(state, out_np)
        if config.adaptive_weights:
            state = update_weights(state, y, out_np, config.epsilon)
        run.wtv_state = state
        run.iteration = t + 1
        entry = (t, fidelity.item(), penalty.item())
        run.loss_trace.append(entry)

        record = {"slice": slice_index, "iter": t, "fidelity": entry[1], "penalty": entry[2]}
        if clean is not None and config.trace_every and ((t + 1) % config.trace_every == 0 or t + 1 == iters):
            est = ensemble_denoise(model, y, config, trace_stream(config.seed, slice_index), config.trace_samples)
            value = psnr(np.asarray(as_array(clean)) * scale, est.mean * scale)
            run.psnr_trace.append((t + 1, value))
            record["psnr"] = value
        if callback is not None:
            record["wall"] = time.perf_counter() - start
            callback(record)
        if checkpoint is not None and checkpoint_every and (t + 1) % checkpoint_every == 0:
            checkpoint(slice_index, t + 1, model)

    run.wtv_state = run.wtv_state.replace(iteration=iters)
    return run


class SliceResult(NamedTuple):
    params: torch.nn.Module
    denoised: np.ndarray
    run: TrainRun
    ensemble: EnsembleResult


def train_group(
    group,
    config: RunConfig,
    *,
    clean=None,
    scale: float = 1.0,
    callback: Callable[[dict], None] | None = None,
    **train_kwargs,
) -> list[SliceResult]:
    """Fine-tuning strategy: slice 1 from scratch for ``t1`` iterations, every
    later slice from a copy of slice 1's weights for ``tk`` iterations."""
    arrays = [np.asarray(as_array(g), dtype=np.float64) for g in group]
    if not arrays:
        raise ShapeMismatch("empty slice group")
    if len({a.shape for a in arrays}) != 1:
        raise ShapeMismatch("all slices of a group must share one shape")
    cleans = clean if clean is not None else [None] * len(arrays)

    results = []
    first = None
    for k, y in enumerate(arrays):
        iters = config.t1 if k == 0 else config.tk
        log.info("slice %d: %d iterations", k, iters)
        run = train_single(
            y, config, init=first, iters=iters, clean=cleans[k], scale=scale, slice_index=k,
            callback=callback, **train_kwargs,
        )
        if k == 0:
            first = run.params
        ens = ensemble_denoise(run.params, y, config, inference_stream(config.seed, k))
        if not np.all(np.isfinite(ens.mean)):
            raise DivergenceDetected(run.iteration, f"non-finite ensemble output on slice {k}")
        results.append(SliceResult(run.params, ens.mean, run, ens))
    return results


def normalize(arrays) -> tuple[list[np.ndarray], float]:
    """Scale a slice group to unit max absolute value; returns the factor."""
    arrays = [np.asarray(as_array(a), dtype=np.float64) for a in arrays]
    peak = max(float(np.abs(a).max()) for a in arrays)
    scale = peak if peak > 0 and math.isfinite(peak) else 1.0
    return [a / scale for a in arrays], scale


def denoise_group(group, config: RunConfig, *, clean=None, **train_kwargs) -> tuple[list[np.ndarray], list[SliceResult]]:
    """Normalize, train with fine-tuning, and return outputs in input units."""
    normed, scale = normalize(group)
    cleans = None if clean is None else [np.asarray(as_array(c), dtype=np.float64) / scale for c in clean]
    results = train_group(normed, config, clean=cleans, scale=scale, **train_kwargs)
    return [r.denoised * scale for r in results], results
