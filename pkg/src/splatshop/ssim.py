"""Structural similarity with an analytic gradient.

Matches the common reference configuration: 11x11 Gaussian window
(sigma 1.5, truncated at 3.5 sigma), population covariances, constants
C1 = (0.01 d)^2 and C2 = (0.03 d)^2 for data range d, per-channel scores
averaged. The per-pixel similarity map is cropped by the window half-width
before averaging, which also makes the score independent of the filter's
boundary handling.

The gradient is exact for the cropped mean: every retained window has full
support inside the image, so the filter adjoint is a zero-padded
correlation with the same separable kernel.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ArgumentError

SIGMA = 1.5
TRUNCATE = 3.5
PAD = int(TRUNCATE * SIGMA + 0.5)  # 5 -> 11x11 window
K1 = 0.01
K2 = 0.03


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ArgumentError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3:
        raise ArgumentError(f"expected HxW or HxWxC images, got shape {a.shape}")
    if min(a.shape[0], a.shape[1]) <= 2 * PAD:
        raise ArgumentError(
            f"images must exceed {2 * PAD}x{2 * PAD} for an {2 * PAD + 1}-wide window"
        )
    return a, b


def _filt(x: np.ndarray, mode: str) -> np.ndarray:
    return gaussian_filter(x, sigma=SIGMA, truncate=TRUNCATE, mode=mode)


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM between two images, channels averaged."""
    value, _ = _ssim_impl(a, b, data_range, want_grad=False)
    return value


def ssim_and_grad(
    a: np.ndarray, b: np.ndarray, data_range: float = 1.0
) -> tuple[float, np.ndarray]:
    """Mean SSIM and its gradient with respect to the first image."""
    value, grad = _ssim_impl(a, b, data_range, want_grad=True)
    return value, grad


def _ssim_impl(a, b, data_range, want_grad):
    x, y = _check_pair(a, b)
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    channels = x.shape[2]
    crop = (slice(PAD, -PAD), slice(PAD, -PAD))
    crop_count = (x.shape[0] - 2 * PAD) * (x.shape[1] - 2 * PAD)

    total = 0.0
    grad = np.zeros_like(x) if want_grad else None
    for ch in range(channels):
        xc, yc = x[..., ch], y[..., ch]
        ux = _filt(xc, "reflect")
        uy = _filt(yc, "reflect")
        uxx = _filt(xc * xc, "reflect")
        uyy = _filt(yc * yc, "reflect")
        uxy = _filt(xc * yc, "reflect")
        vx = uxx - ux * ux
        vy = uyy - uy * uy
        vxy = uxy - ux * uy

        a1 = 2.0 * ux * uy + c1
        a2 = 2.0 * vxy + c2
        b1 = ux * ux + uy * uy + c1
        b2 = vx + vy + c2
        d = b1 * b2
        s = (a1 * a2) / d
        total += float(s[crop].mean())

        if want_grad:
            # upstream weight of each retained window in the channel mean
            w = np.zeros_like(s)
            w[crop] = 1.0 / (crop_count * channels)
            # partials of S w.r.t. the filtered moments
            ds_dux = (2.0 * uy * (a2 - a1)) / d - s * (2.0 * ux * (b2 - b1)) / d
            ds_duxx = -s * b1 / d  # = -S / B2, written to reuse d
            ds_duxy = 2.0 * a1 / d
            # adjoint: retained windows have full support, so zero padding is exact
            grad[..., ch] = (
                _filt(w * ds_dux, "constant")
                + 2.0 * xc * _filt(w * ds_duxx, "constant")
                + yc * _filt(w * ds_duxy, "constant")
            )

    value = total / channels
    if want_grad and np.asarray(a).ndim == 2:
        grad = grad[..., 0]
    return value, grad
