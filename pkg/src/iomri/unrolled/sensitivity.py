"""Coil sensitivity estimation from the fully sampled calibration region."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError
from ..volume import center_slices, ifft2c


def raised_cosine(n: int) -> np.ndarray:
    """Symmetric raised-cosine taper of length ``n``, peaking at the center sample."""
    if n <= 0:
        raise InvalidArgumentError("taper length must be positive")
    i = np.arange(n)
    return 0.5 * (1.0 + np.cos(np.pi * (i - n // 2) / (n // 2 + 1)))


def estimate_sensitivities(y, calib_yx, rel_eps=1e-6):
    """Sensitivity maps from the tapered central k-space window of each coil.

    ``y`` has shape ``(coil, ny, nx)``. Maps are normalized by the coil
    root-sum-of-squares, so their sum of squares is at most one.
    """
    y = np.asarray(y)
    cy, cx = (int(c) for c in calib_yx)
    if cy < 1 or cx < 1:
        raise InvalidArgumentError(f"calibration region {calib_yx} is empty")
    ny, nx = y.shape[-2:]
    cy, cx = min(cy, ny), min(cx, nx)
    sy, _ = center_slices(ny, cy)
    sx, _ = center_slices(nx, cx)
    window = np.zeros((ny, nx))
    window[sy, sx] = np.outer(raised_cosine(cy), raised_cosine(cx))
    low = ifft2c(y * window)
    ssq = np.sum(np.abs(low) ** 2, axis=0)
    eps = rel_eps * np.sqrt(ssq.max()) if ssq.max() > 0 else rel_eps
    return low / np.sqrt(ssq + eps ** 2)
