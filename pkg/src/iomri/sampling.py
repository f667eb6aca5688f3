"""Variable-density Poisson-disc undersampling masks for 2-D k-space.

Masks are built by dart throwing over the Cartesian grid: candidates are
visited in a seeded random order and accepted when no previously accepted
point lies closer than ``max(r(p), r(q))``, with the exclusion radius growing
away from the k-space center::

    r(k) = s * (1 + alpha * (|k| / k_max) ** density_power)

The global scale ``s`` is found by bisection so that the measured
acceleration hits the requested one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import (ConvergenceError, InfeasibleTargetError,
                     InvalidArgumentError, InvalidMaskError)
from .volume import KSPACE, ComplexVolume, center_slices

STYLES = {
    "styleA": {"alpha": 2.0, "density_power": 2.0},
    "styleB": {"alpha": 3.0, "density_power": 1.0},
}

DEFAULT_CALIB_FRACTION = 0.08
ACCEPT_RTOL = 0.05
_SEARCH_RTOL = 0.02
_MAX_ITERS = 64
# fresh candidate orderings tried when a small grid's step-like response skips the target
_MAX_ATTEMPTS = 8


@dataclass(frozen=True, eq=False)
class SamplingMask:
    keep: np.ndarray
    calib_yx: tuple
    target_R: float
    seed: int | None = None
    style: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        keep = np.asarray(self.keep).astype(bool)
        if keep.ndim != 2:
            raise InvalidMaskError(f"mask must be 2-D, got shape {keep.shape}")
        object.__setattr__(self, "keep", keep)
        object.__setattr__(self, "calib_yx", tuple(int(c) for c in self.calib_yx))

    @property
    def shape(self):
        return self.keep.shape

    @property
    def measured_R(self) -> float:
        return measure_acceleration(self)

    def calib_window(self):
        return calib_window(self.keep.shape, self.calib_yx)


def calib_window(shape, calib_yx):
    """Slices selecting the centered calibration rectangle."""
    sy, _ = center_slices(shape[0], min(calib_yx[0], shape[0]))
    sx, _ = center_slices(shape[1], min(calib_yx[1], shape[1]))
    return sy, sx


def calib_extents(shape, calib_fraction):
    return tuple(int(round(calib_fraction * n)) for n in shape)


def measure_acceleration(mask) -> float:
    """Total locations over kept locations."""
    keep = mask.keep if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=bool)
    if keep.size == 0:
        raise InvalidMaskError("mask is empty")
    kept = int(np.count_nonzero(keep))
    if kept == 0:
        raise InvalidMaskError("mask keeps no locations")
    return keep.size / kept


def normalized_radius(shape):
    """|k| / k_max on the centered grid, in [0, 1]."""
    ny, nx = shape
    ky = (np.arange(ny) - ny // 2) / (ny / 2)
    kx = (np.arange(nx) - nx // 2) / (nx / 2)
    return np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2) / math.sqrt(2.0)


def exclusion_radius(shape, scale, alpha, density_power):
    return scale * (1.0 + alpha * normalized_radius(shape) ** density_power)


@numba.njit(cache=True)
def _throw_darts(order, radius, calib):  # pragma: no cover - compiled
    ny, nx = radius.shape
    accepted = np.zeros((ny, nx), dtype=np.bool_)
    blocked = np.zeros((ny, nx), dtype=np.bool_)
    for idx in order:
        y = idx // nx
        x = idx % nx
        if calib[y, x] or blocked[y, x]:
            continue
        rp = radius[y, x]
        rp2 = rp * rp
        w = int(math.ceil(rp))
        ok = True
        for yy in range(max(0, y - w), min(ny, y + w + 1)):
            dy2 = (yy - y) * (yy - y)
            for xx in range(max(0, x - w), min(nx, x + w + 1)):
                if accepted[yy, xx] and dy2 + (xx - x) * (xx - x) < rp2:
                    ok = False
                    break
            if not ok:
                break
        if not ok:
            continue
        accepted[y, x] = True
        for yy in range(max(0, y - w), min(ny, y + w + 1)):
            dy2 = (yy - y) * (yy - y)
            for xx in range(max(0, x - w), min(nx, x + w + 1)):
                if dy2 + (xx - x) * (xx - x) < rp2:
                    blocked[yy, xx] = True
    return accepted | calib


def _calibrate_scale(order, shape_term, calib, target_R):
    """Bisection on the radius scale for one candidate ordering."""
    total = calib.size

    def accel(scale):
        keep = _throw_darts(order, shape_term * scale, calib)
        return keep, total / np.count_nonzero(keep)

    def rel_err(r):
        return abs(r - target_R) / target_R

    best = None
    lo, hi = 0.0, 1.0
    iters = 0
    while iters < _MAX_ITERS:
        keep, r = accel(hi)
        iters += 1
        if best is None or rel_err(r) < best[2]:
            best = (keep, hi, rel_err(r))
        if r >= target_R:
            break
        lo, hi = hi, hi * 2.0
    while best[2] > _SEARCH_RTOL and iters < _MAX_ITERS:
        mid = 0.5 * (lo + hi)
        keep, r = accel(mid)
        iters += 1
        if rel_err(r) < best[2]:
            best = (keep, mid, rel_err(r))
        if r < target_R:
            lo = mid
        else:
            hi = mid
    return best + (iters,)


def poisson_disc_mask(extents_yx, target_R, calib_fraction=DEFAULT_CALIB_FRACTION,
                      density_power=None, seed=0, alpha=None, style="styleA") -> SamplingMask:
    """Generate a variable-density Poisson-disc mask at acceleration ``target_R``.

    ``alpha`` and ``density_power`` default to the values of ``style``
    (see :data:`STYLES`).
    """
    ny, nx = (int(e) for e in extents_yx)
    if ny < 8 or nx < 8:
        raise InvalidArgumentError(f"mask extents must be at least 8x8, got {(ny, nx)}")
    if target_R < 1:
        raise InvalidArgumentError(f"target_R must be >= 1, got {target_R}")
    if not 0 <= calib_fraction < 1:
        raise InvalidArgumentError(f"calib_fraction must lie in [0, 1), got {calib_fraction}")
    if style not in STYLES:
        raise InvalidArgumentError(f"unknown mask style {style!r}")
    alpha = STYLES[style]["alpha"] if alpha is None else float(alpha)
    density_power = STYLES[style]["density_power"] if density_power is None else float(density_power)
    params = {"alpha": alpha, "density_power": density_power, "calib_fraction": calib_fraction}

    shape = (ny, nx)
    calib_yx = calib_extents(shape, calib_fraction)
    calib = np.zeros(shape, dtype=bool)
    calib[calib_window(shape, calib_yx)] = True

    def build(keep, scale):
        p = dict(params, scale=float(scale))
        return SamplingMask(keep, calib_yx, float(target_R), seed, style, p)

    if target_R == 1:
        return build(np.ones(shape, dtype=bool), 0.0)

    total = ny * nx
    max_R = total / (np.count_nonzero(calib) + 1)
    if target_R > max_R * (1 + ACCEPT_RTOL):
        raise InfeasibleTargetError(
            f"target_R={target_R} unreachable with a {calib_yx} calibration region "
            f"(at most {max_R:.3g})")

    rng = np.random.default_rng(seed)
    shape_term = exclusion_radius(shape, 1.0, alpha, density_power)
    best = None
    for attempt in range(_MAX_ATTEMPTS):
        keep, scale, err, iters = _calibrate_scale(rng.permutation(total), shape_term, calib, target_R)
        if best is None or err < best[2]:
            best = (keep, scale, err, iters)
        if err <= ACCEPT_RTOL:
            break
    keep, scale, err, iters = best
    if err > ACCEPT_RTOL:
        raise ConvergenceError(
            f"bisection did not reach target_R={target_R} within {ACCEPT_RTOL:.0%} "
            f"after {iters} iterations (best relative error {err:.3f})")
    return build(keep, scale)


def apply_mask(v: ComplexVolume, mask) -> ComplexVolume:
    """Zero every unsampled k-space location, for all coils and slices."""
    keep = mask.keep if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=bool)
    if v.space != KSPACE:
        raise InvalidArgumentError("apply_mask expects a k-space volume")
    if keep.shape != v.data.shape[-2:]:
        raise InvalidArgumentError(
            f"mask extents {keep.shape} do not match volume extents {v.data.shape[-2:]}")
    out = np.where(keep, v.data, np.zeros((), dtype=v.data.dtype))
    return v.replace(data=out)


def embed_mask(mask: SamplingMask, target_yx) -> SamplingMask:
    """Place ``mask`` at the center of a larger (or smaller) grid, zeros elsewhere."""
    from .volume import resize_array
    keep = resize_array(mask.keep, target_yx)
    return SamplingMask(keep, mask.calib_yx, mask.target_R, mask.seed, mask.style, dict(mask.params))
