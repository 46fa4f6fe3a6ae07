"""Self-supervised seismic random-noise attenuation (trace-masked dropout U-Net + WTV)."""

from .core import Gather, Mask, RngStream, RunConfig, derive_stream, validate_gather

__all__ = ["Gather", "Mask", "RngStream", "RunConfig", "derive_stream", "validate_gather"]
__version__ = "0.1.0"
