"""Shared domain types, validation and deterministic RNG streams."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

import numpy as np

PURPOSES = ("mask", "noise", "dropout", "init", "events")
MASK_MODES = ("trace", "row", "element")
CONV_VARIANTS = ("standard", "partial", "mgrconv")


class S2SWTVError(Exception):
    """Base class for all errors raised by this package."""


class NonFinite(S2SWTVError):
    pass


class TooSmall(S2SWTVError):
    pass


class ShapeMismatch(S2SWTVError):
    pass


class BadSpec(S2SWTVError):
    pass


class BadConfig(S2SWTVError):
    pass


class NegativeWeight(S2SWTVError):
    pass


class RedrawExhausted(S2SWTVError):
    pass


class DivergenceDetected(S2SWTVError):
    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"loss became non-finite at iteration {iteration}")


@dataclass(frozen=True)
class Gather:
    """A 2-D seismic gather: rows are time samples, columns are traces."""

    data: np.ndarray
    dt: float | None = None
    dx: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass(frozen=True)
class Mask:
    """Binary mask aligned with a gather; 1 keeps an element, 0 hides it."""

    data: np.ndarray
    mode: str = "trace"

    def __post_init__(self):
        if self.mode not in MASK_MODES:
            raise BadSpec(f"unknown mask mode {self.mode!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def as_array(x) -> np.ndarray:
    """Return the matrix behind a Gather/Mask or any 2-D array-like."""
    if isinstance(x, (Gather, Mask)):
        return x.data
    return np.asarray(x)


def validate_gather(g):
    """Check the gather invariants and return ``g`` unchanged.

    Raises ``TooSmall`` for anything smaller than 2x2 and ``NonFinite``
    when NaN or Inf entries are present.
    """
    a = as_array(g)
    if a.ndim != 2:
        raise TooSmall(f"gather must be 2-D, got shape {a.shape}")
    if a.shape[0] < 2 or a.shape[1] < 2:
        raise TooSmall(f"gather must be at least 2x2, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFinite("gather contains NaN or Inf")
    return g


def check_same_shape(*arrays) -> None:
    shapes = {tuple(a.shape) if hasattr(a, "shape") else np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ShapeMismatch(f"shape mismatch: {sorted(shapes)}")


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Every call to :meth:`numpy` or :meth:`torch` returns a fresh generator
    positioned at the start of the same sequence.
    """

    seed: int
    stream_id: int

    def child(self, index: int) -> RngStream:
        """Sub-stream ``index`` of this stream (used for ensemble members)."""
        digest = hashlib.blake2b(f"{self.stream_id}/{int(index)}".encode(), digest_size=8).digest()
        return RngStream(self.seed, int.from_bytes(digest, "little"))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.seed & (2**64 - 1), self.stream_id])

    def numpy(self) -> np.random.Generator:
        return np.random.default_rng(self.seed_sequence())

    def torch(self, device="cpu"):
        import torch

        state = self.seed_sequence().generate_state(1, dtype=np.uint64)[0]
        gen = torch.Generator(device=device)
        gen.manual_seed(int(state) & (2**63 - 1))
        return gen


def derive_stream(seed: int, purpose: str, index: int = 0) -> RngStream:
    """Map ``(seed, purpose, index)`` to an independent stream.

    The stream id is a 64-bit BLAKE2b digest of the purpose label and index,
    so distinct pairs give distinct ids and nothing depends on call order.
    """
    if purpose not in PURPOSES:
        raise ValueError(f"unknown RNG purpose {purpose!r}; expected one of {PURPOSES}")
    digest = hashlib.blake2b(f"{purpose}:{int(index)}".encode(), digest_size=8).digest()
    return RngStream(int(seed), int.from_bytes(digest, "little"))


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the training / inference pipeline.

    ``mask_rate`` is the fraction of traces hidden from the network (the
    probability that a column of the mask is 0).  ``gamma = 0`` gives plain
    masked self-supervised training; ``mu = 0`` disables the ADMM coupling
    entirely.  ``adaptive_weights = False`` keeps the WTV weights at 1 (plain
    anisotropic TV).
    """

    mask_rate: float = 0.4
    mask_mode: str = "trace"
    dropout_rate: float = 0.5
    gamma: float = 0.01
    mu: float = 0.1
    t1: int = 5000
    tk: int = 500
    weight_period: int = 100
    weight_freeze: int = 3000
    adaptive_weights: bool = True
    epsilon: float = 1e-8
    ensemble_size: int = 100
    step_size: float = 1e-4
    seed: int = 0
    depth: int = 5
    width: int = 48
    conv: str = "mgrconv"
    precision: str = "float32"
    trace_every: int = 100
    trace_samples: int = 8

    def __post_init__(self):
        errors = []
        if not 0 < self.mask_rate < 1:
            errors.append("mask_rate must lie in (0, 1)")
        if self.mask_mode not in MASK_MODES:
            errors.append(f"mask_mode must be one of {MASK_MODES}")
        if not 0 < self.dropout_rate < 1:
            errors.append("dropout_rate must lie in (0, 1)")
        if self.gamma < 0 or self.mu < 0:
            errors.append("gamma and mu must be non-negative")
        if self.t1 < 0 or self.tk < 0 or self.tk > self.t1:
            errors.append("need 0 <= tk <= t1")
        if self.weight_period < 1 or self.weight_freeze < self.weight_period:
            errors.append("need weight_period >= 1 and weight_freeze >= weight_period")
        if self.epsilon <= 0:
            errors.append("epsilon must be positive")
        if self.ensemble_size < 1:
            errors.append("ensemble_size must be >= 1")
        if self.step_size <= 0:
            errors.append("step_size must be positive")
        if self.depth < 1 or self.width < 2:
            errors.append("depth must be >= 1 and width >= 2")
        if self.conv not in CONV_VARIANTS:
            errors.append(f"conv must be one of {CONV_VARIANTS}")
        if self.precision not in ("float32", "float64"):
            errors.append("precision must be float32 or float64")
        if self.trace_every < 0 or self.trace_samples < 1:
            errors.append("trace_every must be >= 0 and trace_samples >= 1")
        if errors:
            raise BadConfig("; ".join(errors))

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


# dotted config keys -> RunConfig fields
CONFIG_KEYS = {
    "mask.rate": "mask_rate",
    "mask.mode": "mask_mode",
    "net.dropout": "dropout_rate",
    "net.depth": "depth",
    "net.width": "width",
    "net.conv": "conv",
    "net.precision": "precision",
    "wtv.gamma": "gamma",
    "wtv.mu": "mu",
    "wtv.weight_period": "weight_period",
    "wtv.weight_freeze": "weight_freeze",
    "wtv.adaptive": "adaptive_weights",
    "wtv.epsilon": "epsilon",
    "train.t1": "t1",
    "train.tk": "tk",
    "train.step_size": "step_size",
    "train.seed": "seed",
    "train.trace_every": "trace_every",
    "train.trace_samples": "trace_samples",
    "infer.samples": "ensemble_size",
}


def config_from_mapping(values: dict, base: RunConfig | None = None) -> RunConfig:
    """Build a RunConfig from dotted keys, coercing to each field's type."""
    base = base or RunConfig()
    types = {f.name: type(getattr(base, f.name)) for f in dataclasses.fields(base)}
    changes = {}
    for key, raw in values.items():
        if key not in CONFIG_KEYS:
            raise BadConfig(f"unknown config key {key!r}")
        name = CONFIG_KEYS[key]
        changes[name] = _coerce(raw, types[name], key)
    return base.replace(**changes)


def _coerce(raw, kind, key):
    try:
        if kind is bool:
            if isinstance(raw, str):
                if raw.lower() in ("1", "true", "yes", "on"):
                    return True
                if raw.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(raw)
            return bool(raw)
        if kind is int:
            value = float(raw)
            if value != int(value):
                raise ValueError(raw)
            return int(value)
        return kind(raw)
    except (TypeError, ValueError):
        raise BadConfig(f"bad value {raw!r} for {key}") from None
