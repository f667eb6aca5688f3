"""Complex multi-coil volumes and the centered orthonormal Fourier toolkit.

Conventions
-----------
* Arrays are indexed ``(coil, z, y, x)``.
* Zero frequency sits at index ``N // 2`` along every transformed axis
  (``ifftshift`` before the transform, ``fftshift`` after).
* Transforms are orthonormal (``1/sqrt(N)`` per axis), so the forward and
  inverse transforms are adjoints of one another.

Transforms are computed in double precision and cast back to the storage
dtype of the input.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidInputError

KSPACE = "kspace"
IMAGE = "image"
_SPACES = (KSPACE, IMAGE)


def _as_triple(values, name):
    t = tuple(float(v) for v in values)
    if len(t) != 3:
        raise InvalidArgumentError(f"{name} needs three entries (z, y, x), got {len(t)}")
    return t


@dataclass(frozen=True, eq=False)
class ComplexVolume:
    """Multi-coil complex data with its spatial metadata.

    ``spacing_mm`` and ``fov_mm`` are ``(z, y, x)`` triples and always satisfy
    ``fov = spacing * extent``.
    """

    data: np.ndarray
    spacing_mm: tuple
    fov_mm: tuple = None
    space: str = IMAGE
    num_averages: int = 1
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4:
            raise InvalidArgumentError(f"volume data must be 4-D (coil, z, y, x), got shape {data.shape}")
        if min(data.shape) < 1:
            raise InvalidArgumentError(f"every extent must be >= 1, got {data.shape}")
        if not np.iscomplexobj(data):
            data = data.astype(np.complex128)
        object.__setattr__(self, "data", data)
        spacing = _as_triple(self.spacing_mm, "spacing_mm")
        if min(spacing) <= 0:
            raise InvalidArgumentError("spacing must be positive")
        object.__setattr__(self, "spacing_mm", spacing)
        extents = data.shape[1:]
        if self.fov_mm is None:
            fov = tuple(s * n for s, n in zip(spacing, extents))
        else:
            fov = _as_triple(self.fov_mm, "fov_mm")
            for f, s, n in zip(fov, spacing, extents):
                if abs(f - s * n) > 1e-9 * max(abs(f), 1.0):
                    raise InvalidArgumentError(
                        f"fov {fov} inconsistent with spacing {spacing} x extents {extents}")
        object.__setattr__(self, "fov_mm", fov)
        if self.space not in _SPACES:
            raise InvalidArgumentError(f"space must be one of {_SPACES}, got {self.space!r}")
        if int(self.num_averages) < 1:
            raise InvalidArgumentError("num_averages must be a positive integer")
        object.__setattr__(self, "num_averages", int(self.num_averages))

    @property
    def shape(self):
        return self.data.shape

    @property
    def num_coils(self):
        return self.data.shape[0]

    @property
    def extents(self):
        """``(z, y, x)`` extents."""
        return self.data.shape[1:]

    def replace(self, **changes) -> "ComplexVolume":
        return dataclasses.replace(self, **changes)

    def with_data(self, data, space=None, spacing_mm=None) -> "ComplexVolume":
        """New volume with the same field of view and ``data`` on a (possibly) new grid."""
        data = np.asarray(data)
        if spacing_mm is None:
            spacing_mm = tuple(f / n for f, n in zip(self.fov_mm, data.shape[1:]))
        return ComplexVolume(
            data=data,
            spacing_mm=spacing_mm,
            fov_mm=tuple(s * n for s, n in zip(spacing_mm, data.shape[1:])),
            space=self.space if space is None else space,
            num_averages=self.num_averages,
            provenance=dict(self.provenance),
        )


@dataclass(frozen=True, eq=False)
class ImageVolume:
    """Real nonnegative magnitude image indexed ``(z, y, x)``."""

    data: np.ndarray
    spacing_mm: tuple

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise InvalidArgumentError(f"image data must be 3-D (z, y, x), got shape {data.shape}")
        if np.iscomplexobj(data):
            raise InvalidInputError("image volume must be real-valued")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("image volume contains non-finite samples")
        if np.any(data < 0):
            raise InvalidInputError("image volume must be nonnegative")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing_mm", _as_triple(self.spacing_mm, "spacing_mm"))

    @property
    def shape(self):
        return self.data.shape

    @property
    def fov_mm(self):
        return tuple(s * n for s, n in zip(self.spacing_mm, self.data.shape))


# ---------------------------------------------------------------------------
# array-level transforms

def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("input contains non-finite samples")


def fftnc(x, axes):
    """Centered orthonormal forward FFT over ``axes``."""
    x = np.asarray(x)
    out = np.fft.ifftshift(x.astype(np.complex128, copy=False), axes=axes)
    out = np.fft.fftn(out, axes=axes, norm="ortho")
    return np.fft.fftshift(out, axes=axes)


def ifftnc(x, axes):
    """Centered orthonormal inverse FFT over ``axes``."""
    x = np.asarray(x)
    out = np.fft.ifftshift(x.astype(np.complex128, copy=False), axes=axes)
    out = np.fft.ifftn(out, axes=axes, norm="ortho")
    return np.fft.fftshift(out, axes=axes)


def fft2c(x):
    return fftnc(x, (-2, -1))


def ifft2c(x):
    return ifftnc(x, (-2, -1))


def _storage_dtype(data):
    return np.complex64 if data.dtype in (np.complex64, np.float32) else np.complex128


# ---------------------------------------------------------------------------
# volume operations

def fft2_centered(v: ComplexVolume) -> ComplexVolume:
    """Image space -> k-space, slice-wise over ``(y, x)``."""
    if v.space != IMAGE:
        raise InvalidArgumentError("fft2_centered expects an image-space volume")
    _check_finite(v.data)
    out = fft2c(v.data).astype(_storage_dtype(v.data), copy=False)
    return v.replace(data=out, space=KSPACE)


def ifft2_centered(v: ComplexVolume) -> ComplexVolume:
    """k-space -> image space, slice-wise over ``(y, x)``."""
    if v.space != KSPACE:
        raise InvalidArgumentError("ifft2_centered expects a k-space volume")
    _check_finite(v.data)
    out = ifft2c(v.data).astype(_storage_dtype(v.data), copy=False)
    return v.replace(data=out, space=IMAGE)


def ifft_axis(v: ComplexVolume, axis: str = "z") -> ComplexVolume:
    """Centered orthonormal 1-D inverse transform along ``z``.

    The result is a stack of 2-D k-space slices (hybrid space); the space tag
    stays ``kspace`` because the in-plane axes are still frequencies.
    """
    if axis != "z":
        raise InvalidArgumentError(f"only the z axis is supported, got {axis!r}")
    if v.space != KSPACE:
        raise InvalidArgumentError("ifft_axis expects k-space along z")
    _check_finite(v.data)
    if v.data.shape[1] == 1:
        return v.replace(data=v.data.copy())
    out = ifftnc(v.data, (1,)).astype(_storage_dtype(v.data), copy=False)
    return v.replace(data=out)


def fft_axis(v: ComplexVolume, axis: str = "z") -> ComplexVolume:
    """Forward counterpart of :func:`ifft_axis`: encode ``z`` as a frequency axis."""
    if axis != "z":
        raise InvalidArgumentError(f"only the z axis is supported, got {axis!r}")
    if v.space != KSPACE:
        raise InvalidArgumentError("fft_axis expects an in-plane k-space volume")
    _check_finite(v.data)
    if v.data.shape[1] == 1:
        return v.replace(data=v.data.copy())
    out = fftnc(v.data, (1,)).astype(_storage_dtype(v.data), copy=False)
    return v.replace(data=out)


def is_z_encoded(v: ComplexVolume, default=True) -> bool:
    """Whether ``z`` of a k-space volume is still a frequency axis (3-D acquisition)."""
    return bool(v.provenance.get("z_encoded", default))


def rss(data, axis=0):
    """Root-sum-of-squares over ``axis`` of a complex array."""
    data = np.asarray(data)
    return np.sqrt(np.sum(data.real ** 2 + data.imag ** 2, axis=axis, dtype=np.float64))


def rss_combine(v: ComplexVolume) -> ImageVolume:
    if v.space != IMAGE:
        raise InvalidArgumentError("rss_combine expects an image-space volume")
    _check_finite(v.data)
    return ImageVolume(rss(v.data), v.spacing_mm)


def center_slices(n_from, n_to):
    """Index slices mapping the centered window of length ``min`` between grids.

    Returns ``(src, dst)`` such that ``dst_array[dst] = src_array[src]`` keeps
    index ``n_from // 2`` aligned with ``n_to // 2``. When cropping an odd
    excess, the extra retained sample is on the high-index side.
    """
    if n_to <= n_from:
        start = n_from // 2 - n_to // 2
        return slice(start, start + n_to), slice(0, n_to)
    start = n_to // 2 - n_from // 2
    return slice(0, n_from), slice(start, start + n_from)


def resize_array(data, target_yx):
    """Symmetric zero-pad / center-crop of the last two axes."""
    ny, nx = (int(t) for t in target_yx)
    if ny <= 0 or nx <= 0:
        raise InvalidArgumentError(f"target extents must be positive, got {target_yx}")
    data = np.asarray(data)
    out = np.zeros(data.shape[:-2] + (ny, nx), dtype=data.dtype)
    sy, dy = center_slices(data.shape[-2], ny)
    sx, dx = center_slices(data.shape[-1], nx)
    out[..., dy, dx] = data[..., sy, sx]
    return out


def resize_kspace(v: ComplexVolume, target_yx: Sequence[int]) -> ComplexVolume:
    """Zero-pad or center-crop k-space in-plane; FOV fixed, spacing follows."""
    if v.space != KSPACE:
        raise InvalidArgumentError("resize_kspace expects a k-space volume")
    out = resize_array(v.data, target_yx)
    return v.with_data(out)


def average_repeats(repeats: Sequence[ComplexVolume]) -> ComplexVolume:
    """Elementwise complex mean of repeated k-space acquisitions."""
    repeats = list(repeats)
    if not repeats:
        raise InvalidArgumentError("average_repeats needs at least one volume")
    first = repeats[0]
    for r in repeats:
        if r.space != KSPACE:
            raise InvalidArgumentError("repeats must be k-space volumes")
        if r.shape != first.shape or not np.allclose(r.spacing_mm, first.spacing_mm, rtol=1e-12):
            raise InvalidArgumentError("repeats must share extents and spacing")
    if len(repeats) == 1:
        return first.replace(data=first.data.copy())
    acc = np.zeros(first.shape, dtype=np.complex128)
    for r in repeats:
        acc += r.data
    acc /= len(repeats)
    return first.replace(
        data=acc.astype(first.data.dtype, copy=False),
        num_averages=sum(r.num_averages for r in repeats),
    )
