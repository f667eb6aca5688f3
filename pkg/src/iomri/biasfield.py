"""Bias-field correction by a log-domain polynomial fit over an Otsu foreground."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy import ndimage

from .errors import DegenerateFitError, InvalidArgumentError, NoForegroundError
from .volume import ImageVolume

DEFAULT_DEGREE = 4
_EPS_REL = 1e-6
_ROBUST_ITERS = 5
_INLIER_K = 2.5
# in-plane erosion of the fit region, as a fraction of the in-plane extent
_ERODE_FRACTION = 0.03


def otsu_threshold(values, bins=256) -> float:
    """Threshold maximizing the between-class variance of a histogram."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise NoForegroundError("empty image")
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return lo
    hist, edges = np.histogram(v, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    m0 = np.cumsum(hist * centers)
    mu0 = m0 / np.maximum(w0, 1)
    mu1 = (m0[-1] - m0) / np.maximum(w1, 1)
    between = w0 * w1 * (mu0 - mu1) ** 2
    return float(edges[int(np.argmax(between[:-1])) + 1])


def foreground_mask(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    mask = img > otsu_threshold(img)
    if not mask.any():
        raise NoForegroundError("Otsu threshold leaves no foreground voxels")
    return mask


def polynomial_terms(degree: int, extents):
    """Exponent triples of total degree <= ``degree``; an axis of extent n gets powers < n."""
    caps = [min(degree, n - 1) for n in extents]
    return [p for p in product(*(range(c + 1) for c in caps)) if sum(p) <= degree]


def _design(mask, terms):
    coords = np.nonzero(mask)
    axes = [np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1) for n in mask.shape]
    pts = [ax[c] for ax, c in zip(axes, coords)]
    return np.stack([np.prod([p ** e for p, e in zip(pts, exps)], axis=0) for exps in terms], axis=1)


def fit_region(mask) -> np.ndarray:
    """Foreground eroded in-plane so boundary partial-volume voxels do not drive the fit."""
    iters = max(1, int(round(_ERODE_FRACTION * min(mask.shape[-2:]))))
    st = np.zeros((1, 3, 3), dtype=bool)
    st[0, 1, :] = st[0, :, 1] = True
    return ndimage.binary_erosion(mask, st, iterations=iters)


@dataclass(frozen=True)
class BiasFieldResult:
    corrected: ImageVolume
    field: np.ndarray
    mask: np.ndarray


def bias_field_correct(img: ImageVolume, degree: int = DEFAULT_DEGREE, mask=None) -> BiasFieldResult:
    """Divide out a smooth multiplicative field.

    The field is ``exp`` of a polynomial fitted to ``log(img + eps)`` over the
    eroded foreground, refitted a few times on inliers (residual within 2.5 robust
    standard deviations) so that anatomy is not absorbed. It is rescaled to
    mean 1 over the mask; background voxels pass through unchanged.
    """
    if degree < 0:
        raise InvalidArgumentError("degree must be >= 0")
    data = np.asarray(img.data, dtype=np.float64)
    if not np.any(data > 0):
        raise NoForegroundError("image has no positive voxels")
    mask = foreground_mask(data) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise NoForegroundError("foreground mask is empty")
    terms = polynomial_terms(degree, data.shape)
    fit_mask = fit_region(mask)
    if np.count_nonzero(fit_mask) < 4 * len(terms):
        fit_mask = mask
    A = _design(fit_mask, terms)
    if A.shape[0] < A.shape[1] or np.linalg.matrix_rank(A) < A.shape[1]:
        raise DegenerateFitError(
            f"{A.shape[1]} polynomial terms cannot be fitted from {A.shape[0]} foreground voxels")
    logv = np.log(data[fit_mask] + _EPS_REL * data.max())
    inl = np.ones(logv.size, dtype=bool)
    for _ in range(_ROBUST_ITERS):
        coef, *_ = np.linalg.lstsq(A[inl], logv[inl], rcond=None)
        r = logv - A @ coef
        mad = np.median(np.abs(r[inl] - np.median(r[inl])))
        if mad == 0:
            break
        new = np.abs(r - np.median(r[inl])) <= _INLIER_K * 1.4826 * mad
        if new.sum() < A.shape[1] or np.array_equal(new, inl):
            break
        inl = new
    fitted = np.exp(_design(mask, terms) @ coef)
    fitted /= fitted.mean()
    field = np.ones_like(data)
    field[mask] = fitted
    out = data.copy()
    out[mask] = data[mask] / fitted
    return BiasFieldResult(ImageVolume(out, img.spacing_mm), field, mask)
