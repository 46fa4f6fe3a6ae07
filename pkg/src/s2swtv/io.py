"""On-disk formats for gathers, slice groups and run configurations.

A grid file is a pair: a raw payload of ``H*W`` little-endian float32 values
in row-major order, and a JSON header sidecar named ``<payload>.json``::

    {"height": 64, "width": 64, "dtype": "f32", "order": "row-major",
     "byte_order": "little", "dt": 0.002, "dx": 12.5}

A group manifest is JSON with an ordered list of grid paths, relative to the
manifest's own directory: ``{"slices": ["s1.f32", "s2.f32"]}``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .core import (
    CONFIG_KEYS,
    BadConfig,
    Gather,
    RunConfig,
    S2SWTVError,
    ShapeMismatch,
    config_from_mapping,
    validate_gather,
)

PAYLOAD_DTYPE = np.dtype("<f4")


class IoFailure(S2SWTVError):
    pass


class HeaderMismatch(S2SWTVError):
    pass


class UnsupportedDtype(S2SWTVError):
    pass


def header_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_grid(g, path) -> None:
    """Write ``g`` as a float32 payload plus JSON header."""
    if not isinstance(g, Gather):
        g = Gather(np.asarray(g))
    validate_gather(g)
    data = np.ascontiguousarray(g.data, dtype=PAYLOAD_DTYPE)
    header = {
        "height": int(data.shape[0]),
        "width": int(data.shape[1]),
        "dtype": "f32",
        "order": "row-major",
        "byte_order": "little",
    }
    if g.dt is not None:
        header["dt"] = float(g.dt)
    if g.dx is not None:
        header["dx"] = float(g.dx)
    path = Path(path)
    try:
        path.write_bytes(data.tobytes(order="C"))
        header_path(path).write_text(json.dumps(header, indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_grid(path) -> Gather:
    path = Path(path)
    try:
        header = json.loads(header_path(path).read_text())
        payload = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoFailure(f"malformed header for {path}: {exc}") from exc

    if header.get("dtype") != "f32":
        raise UnsupportedDtype(f"{path}: dtype {header.get('dtype')!r} is not supported")
    if header.get("order", "row-major") != "row-major" or header.get("byte_order", "little") != "little":
        raise UnsupportedDtype(f"{path}: only row-major little-endian payloads are supported")
    try:
        h, w = int(header["height"]), int(header["width"])
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderMismatch(f"{path}: header lacks a valid height/width") from exc
    if len(payload) != PAYLOAD_DTYPE.itemsize * h * w:
        raise HeaderMismatch(
            f"{path}: payload has {len(payload)} bytes, header implies {PAYLOAD_DTYPE.itemsize * h * w}"
        )
    data = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).reshape(h, w).copy()
    return Gather(data, dt=header.get("dt"), dx=header.get("dx"))


def read_csv(path) -> Gather:
    """Read a tiny hand-written fixture: comma-separated rows of decimals."""
    try:
        data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return Gather(data)


def read_gather(path) -> Gather:
    """Dispatch on extension: ``.csv`` fixtures, grid files otherwise."""
    if str(path).lower().endswith(".csv"):
        return read_csv(path)
    return read_grid(path)


def write_manifest(paths, manifest) -> None:
    manifest = Path(manifest)
    base = manifest.parent
    rel = [os.path.relpath(Path(p), base) for p in paths]
    try:
        manifest.write_text(json.dumps({"slices": rel}, indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {manifest}: {exc}") from exc


def read_manifest(manifest) -> list[Path]:
    manifest = Path(manifest)
    try:
        doc = json.loads(manifest.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoFailure(f"cannot read manifest {manifest}: {exc}") from exc
    slices = doc.get("slices") if isinstance(doc, dict) else None
    if not slices:
        raise IoFailure(f"manifest {manifest} lists no slices")
    return [manifest.parent / s for s in slices]


def read_group(manifest) -> list[Gather]:
    """Read every slice of a manifest, in order; all must share one shape."""
    group = [read_grid(p) for p in read_manifest(manifest)]
    shapes = {g.shape for g in group}
    if len(shapes) != 1:
        raise ShapeMismatch(f"manifest {manifest} mixes shapes {sorted(shapes)}")
    return group


def is_manifest(path) -> bool:
    path = Path(path)
    if path.suffix.lower() != ".json":
        return False
    try:
        return isinstance(json.loads(path.read_text()).get("slices"), list)
    except (OSError, json.JSONDecodeError, AttributeError):
        return False


def flatten(mapping: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config with dotted (or nested) keys; overrides win."""
    values = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise BadConfig(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise BadConfig(f"config {path} must be a JSON object")
        values.update(flatten(doc))
    values.update(overrides or {})
    return config_from_mapping(values)


def dump_config(config: RunConfig) -> dict:
    return {key: getattr(config, name) for key, name in CONFIG_KEYS.items()}
