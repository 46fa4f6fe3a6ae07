"""PSNR, SSIM and the reference-free local-similarity (LS) score.

LS here is the mean absolute windowed zero-normalized cross-correlation
between the denoised gather and the removed residual.  It is a transparent
stand-in for shaping-regularized local similarity: absolute values are not
comparable with published LS tables, orderings are.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.metrics import structural_similarity

from .core import as_array, check_same_shape

PSNR_CAP = 300.0
SSIM_RANGE = 2.0


def _pair(a, b):
    a = np.asarray(as_array(a), dtype=np.float64)
    b = np.asarray(as_array(b), dtype=np.float64)
    check_same_shape(a, b)
    return a, b


def psnr(reference, estimate, peak: float = 1.0) -> float:
    """PSNR in dB against a fixed peak of 1 (unit-max convention), capped at 300 dB."""
    ref, est = _pair(reference, estimate)
    mse = np.mean((ref - est) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(peak**2 / mse), PSNR_CAP))


def ssim(reference, estimate) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), data range 2."""
    ref, est = _pair(reference, estimate)
    return float(structural_similarity(
        ref,
        est,
        data_range=SSIM_RANGE,
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
        K1=0.01,
        K2=0.03,
    ))


def local_similarity_map(estimate, residual, window: int = 9) -> np.ndarray:
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    a, b = _pair(estimate, residual)
    mean = lambda t: ndimage.uniform_filter(t, size=window, mode="reflect")  # noqa: E731
    ma, mb = mean(a), mean(b)
    var_a = np.maximum(mean(a * a) - ma * ma, 0.0)
    var_b = np.maximum(mean(b * b) - mb * mb, 0.0)
    cov = mean(a * b) - ma * mb
    # variance below round-off of the local energy counts as a flat window
    flat = (var_a <= 1e-10 * (mean(a * a) + 1e-300)) | (var_b <= 1e-10 * (mean(b * b) + 1e-300))
    denom = np.sqrt(var_a * var_b)
    corr = np.divide(cov, denom, out=np.zeros_like(cov), where=~flat & (denom > 0))
    return np.clip(np.abs(corr), 0.0, 1.0)


def local_similarity(estimate, residual, window: int = 9) -> float:
    return float(local_similarity_map(estimate, residual, window).mean())


@dataclass(frozen=True)
class EvalReport:
    ls: float
    residual: np.ndarray
    psnr: float | None = None
    ssim: float | None = None

    def as_dict(self) -> dict:
        out = {"ls": self.ls}
        if self.psnr is not None:
            out["psnr"] = self.psnr
            out["ssim"] = self.ssim
        return out


def evaluate(noisy, denoised, clean=None, window: int = 9) -> EvalReport:
    """Residual, LS and, only when ground truth is given, PSNR/SSIM."""
    y, x = _pair(noisy, denoised)
    residual = y - x
    report = EvalReport(ls=local_similarity(x, residual, window), residual=residual)
    if clean is None:
        return report
    return EvalReport(report.ls, residual, psnr(clean, x), ssim(clean, x))
