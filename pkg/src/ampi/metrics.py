"""Image-quality metrics and the border-cropped evaluation protocol.

PSNR and SSIM both assume values in [0, 1] (dynamic range 1).  Evaluation
crops a fixed fraction of pixels from every border first, so codec or
warping artifacts that pile up at the frame edge do not dominate the score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .validate import require

__all__ = ["MetricReport", "crop_border", "psnr", "ssim", "evaluate", "PSNR_CAP"]

PSNR_CAP = 99.0

_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    """Scores for one prediction/reference pair.

    Attributes
    ----------
    psnr:
        Peak signal-to-noise ratio in dB, capped at ``PSNR_CAP`` so that
        identical images serialize to a finite number.
    ssim:
        Mean structural similarity in [-1, 1].
    l1:
        Mean absolute error.
    crop_fraction:
        Border fraction removed from each side before scoring.
    """

    psnr: float
    ssim: float
    l1: float
    crop_fraction: float

    def __post_init__(self) -> None:
        require(self.psnr <= PSNR_CAP + 1e-9, "psnr exceeds the serialization cap")
        require(-1.0 - 1e-9 <= self.ssim <= 1.0 + 1e-9, "ssim must lie in [-1, 1]")
        require(self.l1 >= 0.0, "l1 must be non-negative")
        require(0.0 <= self.crop_fraction <= 0.49, "crop_fraction must lie in [0, 0.49]")

    def as_text(self) -> str:
        """Serialize as ``key: value`` lines."""
        return "\n".join(
            f"{key}: {getattr(self, key):.6f}"
            for key in ("psnr", "ssim", "l1", "crop_fraction")
        )


def crop_border(image: np.ndarray, fraction: float) -> np.ndarray:
    """Remove ``floor(fraction * dim)`` pixels from each side of each axis.

    Parameters
    ----------
    image:
        (H, W) or (H, W, C) array.
    fraction:
        Border fraction in [0, 0.49]; each spatial dimension is cropped
        independently.

    Returns
    -------
    numpy.ndarray
        Cropped copy.  ``fraction = 0`` returns an unchanged copy.
    """
    image = np.asarray(image)
    require(image.ndim in (2, 3), f"image: expected 2 or 3 dims, got {image.ndim}")
    require(0.0 <= fraction <= 0.49, "fraction must lie in [0, 0.49]")
    h, w = image.shape[:2]
    # The nudge keeps e.g. 0.29 * 100 from flooring to 28 in binary arithmetic.
    cy = int(np.floor(fraction * h + 1e-9))
    cx = int(np.floor(fraction * w + 1e-9))
    require(h - 2 * cy > 0 and w - 2 * cx > 0, "crop removes the whole image")
    return image[cy : h - cy, cx : w - cx].copy()


def _as_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a)
    b = np.asarray(b)
    require(a.shape == b.shape, f"shape mismatch: {a.shape} vs {b.shape}")
    require(
        np.issubdtype(a.dtype, np.floating) and np.issubdtype(b.dtype, np.floating),
        "expected float arrays with values in [0, 1]",
    )
    return a.astype(np.float64), b.astype(np.float64)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1].

    Identical images (and any pair closer than the cap allows) return
    ``PSNR_CAP``.
    """
    a, b = _as_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gaussian_taps() -> np.ndarray:
    offsets = np.arange(_WINDOW_SIZE, dtype=np.float64) - (_WINDOW_SIZE - 1) / 2.0
    taps = np.exp(-0.5 * (offsets / _WINDOW_SIGMA) ** 2)
    return taps / taps.sum()


def _windowed_mean(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Gaussian-weighted local mean, restricted to fully interior windows."""
    r = _WINDOW_SIZE // 2
    t = correlate1d(x, taps, axis=0, mode="constant")
    t = correlate1d(t, taps, axis=1, mode="constant")
    return t[r:-r, r:-r]


def _ssim_channel(a: np.ndarray, b: np.ndarray, taps: np.ndarray) -> float:
    c1 = _K1 * _K1
    c2 = _K2 * _K2
    mu1 = _windowed_mean(a, taps)
    mu2 = _windowed_mean(b, taps)
    s11 = _windowed_mean(a * a, taps) - mu1 * mu1
    s22 = _windowed_mean(b * b, taps) - mu2 * mu2
    s12 = _windowed_mean(a * b, taps) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Mean structural similarity over interior 11x11 Gaussian windows.

    Parameters
    ----------
    a, b:
        (H, W) or (H, W, C) float arrays in [0, 1] with identical shapes;
        multi-channel input is scored per channel and averaged.

    Returns
    -------
    float
        Value in [-1, 1]; anti-correlated structure can push it negative.

    Notes
    -----
    Window 11x11 with sigma 1.5, stabilizers K1 = 0.01 and K2 = 0.03 at
    dynamic range 1.  Only windows that fit entirely inside the image
    contribute, so inputs smaller than the window are rejected.
    """
    a, b = _as_pair(a, b)
    require(
        a.shape[0] >= _WINDOW_SIZE and a.shape[1] >= _WINDOW_SIZE,
        f"images must be at least {_WINDOW_SIZE}x{_WINDOW_SIZE} for ssim",
    )
    taps = _gaussian_taps()
    if a.ndim == 2:
        return _ssim_channel(a, b, taps)
    values = [_ssim_channel(a[..., c], b[..., c], taps) for c in range(a.shape[2])]
    return float(np.mean(values))


def evaluate(pred, ref, crop_fraction: float = 0.05) -> MetricReport:
    """Score a prediction against a reference after border cropping."""
    pred, ref = _as_pair(pred, ref)
    pred = crop_border(pred, crop_fraction)
    ref = crop_border(ref, crop_fraction)
    return MetricReport(
        psnr=psnr(pred, ref),
        ssim=ssim(pred, ref),
        l1=float(np.mean(np.abs(pred - ref))),
        crop_fraction=crop_fraction,
    )
