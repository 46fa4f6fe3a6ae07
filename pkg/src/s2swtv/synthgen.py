"""Synthetic clean gathers (Ricker events) and the two additive noise models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BadSpec, Gather, RngStream, S2SWTVError, as_array, validate_gather


class DegenerateSpectrum(S2SWTVError):
    pass


@dataclass(frozen=True)
class EventSpec:
    """One reflection event.

    Linear events arrive at ``intercept + slope * j`` samples on trace ``j``.
    Hyperbolic events arrive at ``sqrt(intercept**2 + ((j - apex) * dx / velocity)**2)``
    with ``dx = 1`` trace, so ``velocity`` is in traces per sample.
    """

    kind: str = "linear"
    intercept: float = 0.0
    slope: float = 0.0
    velocity: float = 1.0
    apex: float = 0.0
    amplitude: float = 1.0
    peak_freq: float = 0.1

    def __post_init__(self):
        if self.kind not in ("linear", "hyperbolic"):
            raise BadSpec(f"unknown event kind {self.kind!r}")
        if not np.isfinite(self.amplitude):
            raise BadSpec("event amplitude must be finite")
        if not 0 < self.peak_freq < 0.5:
            raise BadSpec("peak_freq must lie strictly inside (0, 0.5) cycles/sample")
        if self.kind == "hyperbolic" and self.velocity <= 0:
            raise BadSpec("hyperbolic velocity must be positive")

    def arrival(self, w: int) -> np.ndarray:
        j = np.arange(w, dtype=np.float64)
        if self.kind == "linear":
            return self.intercept + self.slope * j
        return np.sqrt(self.intercept**2 + ((j - self.apex) / self.velocity) ** 2)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"
    sigma: float = 0.1
    band: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "bandpass"):
            raise BadSpec(f"unknown noise kind {self.kind!r}")
        if not self.sigma >= 0:
            raise BadSpec("sigma must be non-negative")
        if self.band is not None:
            low, high = self.band
            if not 0 < low < high < 0.5:
                raise BadSpec("band must satisfy 0 < low < high < 0.5")
        elif self.kind == "bandpass":
            raise BadSpec("bandpass noise needs a band (see estimate_band)")


def ricker(t, peak_freq: float) -> np.ndarray:
    """Ricker wavelet at times ``t`` (samples) for a peak frequency in cycles/sample."""
    arg = (np.pi * peak_freq * np.asarray(t, dtype=np.float64)) ** 2
    return (1.0 - 2.0 * arg) * np.exp(-arg)


def default_events(h: int = 64, w: int = 64) -> list[EventSpec]:
    """Three dipping linear events and one hyperbola, scaled to the grid."""
    s = h / 64.0
    return [
        EventSpec("linear", intercept=8 * s, slope=0.15 * h / w, amplitude=1.0, peak_freq=0.09),
        EventSpec("linear", intercept=30 * s, slope=-0.12 * h / w, amplitude=-0.7, peak_freq=0.08),
        EventSpec("linear", intercept=36 * s, slope=0.3 * h / w, amplitude=0.6, peak_freq=0.1),
        EventSpec("hyperbolic", intercept=18 * s, velocity=1.4 * w / h, apex=w / 2, amplitude=0.8, peak_freq=0.08),
    ]


def random_events(h: int, w: int, n: int, stream: RngStream) -> list[EventSpec]:
    rng = stream.numpy()
    events = []
    for _ in range(n):
        if rng.random() < 0.75:
            events.append(EventSpec(
                "linear",
                intercept=float(rng.uniform(0.1, 0.8) * h),
                slope=float(rng.uniform(-0.4, 0.4) * h / w),
                amplitude=float(rng.choice([-1, 1]) * rng.uniform(0.4, 1.0)),
                peak_freq=float(rng.uniform(0.05, 0.12)),
            ))
        else:
            events.append(EventSpec(
                "hyperbolic",
                intercept=float(rng.uniform(0.1, 0.6) * h),
                velocity=float(rng.uniform(0.8, 2.0) * w / h),
                apex=float(rng.uniform(0.2, 0.8) * w),
                amplitude=float(rng.choice([-1, 1]) * rng.uniform(0.4, 1.0)),
                peak_freq=float(rng.uniform(0.05, 0.12)),
            ))
    return events


def make_synthetic(h: int, w: int, events=None, stream: RngStream | None = None) -> Gather:
    """Sum Ricker wavelets along each event's moveout; normalize to unit max.

    With ``events=None`` four random events are drawn from ``stream``.
    """
    if h < 16 or w < 16:
        raise BadSpec("synthetic gathers must be at least 16x16")
    if events is None:
        if stream is None:
            raise BadSpec("need either an event list or an RNG stream")
        events = random_events(h, w, 4, stream)

    t = np.arange(h, dtype=np.float64)[:, None]
    data = np.zeros((h, w), dtype=np.float64)
    for ev in events:
        arrival = ev.arrival(w)
        # wavelet is negligible beyond ~1.5 periods of the peak frequency
        half = 1.5 / ev.peak_freq
        if np.all((arrival < -half) | (arrival > h - 1 + half)):
            raise BadSpec(f"event {ev} lies entirely outside the {h}x{w} grid")
        data += ev.amplitude * ricker(t - arrival[None, :], ev.peak_freq)

    peak = np.abs(data).max()
    if peak > 0:
        data /= peak
    return Gather(data)


def band_filter(n: int, band: tuple[float, float], taper: int = 4) -> np.ndarray:
    """Frequency response (rfft bins) of a boxcar with raised-cosine edges.

    The taper sits inside the band, so the response is zero outside it.
    """
    freqs = np.fft.rfftfreq(n)
    low, high = band
    inside = np.flatnonzero((freqs >= low) & (freqs <= high))
    if inside.size == 0:
        raise BadSpec(f"band {band} contains no frequency bins for length {n}")
    response = np.zeros(freqs.size)
    response[inside] = 1.0
    m = min(taper, inside.size // 2)
    if m > 0:
        ramp = 0.5 * (1 - np.cos(np.pi * np.arange(1, m + 1) / (m + 1)))
        response[inside[:m]] = ramp
        response[inside[::-1][:m]] = ramp
    return response


def add_noise(x, spec: NoiseSpec, stream: RngStream) -> Gather:
    """Return ``x + N`` with ``N`` drawn according to ``spec``.

    Bandpass noise is white Gaussian noise filtered column-wise along time,
    then rescaled so its empirical standard deviation equals ``sigma``.
    """
    g = x if isinstance(x, Gather) else Gather(np.asarray(x, dtype=np.float64))
    validate_gather(g)
    data = np.asarray(g.data, dtype=np.float64)
    rng = stream.numpy()
    white = rng.standard_normal(data.shape)
    if spec.kind == "gaussian":
        noise = spec.sigma * white
    else:
        response = band_filter(data.shape[0], spec.band)
        colored = np.fft.irfft(np.fft.rfft(white, axis=0) * response[:, None], n=data.shape[0], axis=0)
        noise = colored * (spec.sigma / colored.std())
    return Gather(data + noise, dt=g.dt, dx=g.dx)


def amplitude_spectrum(x) -> tuple[np.ndarray, np.ndarray]:
    """Trace-averaged amplitude spectrum along time: ``(freqs, amplitude)``."""
    a = np.asarray(as_array(x), dtype=np.float64)
    return np.fft.rfftfreq(a.shape[0]), np.abs(np.fft.rfft(a, axis=0)).mean(axis=1)


def estimate_band(x, threshold_fraction: float = 0.05) -> tuple[float, float]:
    """Smallest frequency interval outside which the spectrum stays below
    ``threshold_fraction`` of its peak."""
    if not 0 < threshold_fraction < 1:
        raise ValueError("threshold_fraction must lie in (0, 1)")
    freqs, amp = amplitude_spectrum(x)
    peak = amp.max()
    if not peak > 0:
        raise DegenerateSpectrum("input has an all-zero spectrum")
    above = np.flatnonzero(amp >= threshold_fraction * peak)
    return float(freqs[above[0]]), float(freqs[above[-1]])


def usable_band(band: tuple[float, float], n: int) -> tuple[float, float]:
    """Clip an estimated band to the open interval required by NoiseSpec."""
    low, high = band
    return max(low, 1.0 / n), min(high, 0.5 - 1.0 / n)
