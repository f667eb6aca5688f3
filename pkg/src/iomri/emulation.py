"""Retrospective emulation of the intraoperative acquisition protocol.

A fully sampled, high-resolution slice is cropped in field of view, coarsened
in k-space to the clinical in-plane resolution, undersampled with a
Poisson-disc mask, and zero-padded back to the high-resolution grid.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import InvalidArgumentError
from .sampling import (DEFAULT_CALIB_FRACTION, STYLES, SamplingMask, apply_mask,
                       embed_mask, poisson_disc_mask)
from .volume import (IMAGE, KSPACE, ComplexVolume, ImageVolume, fft2_centered,
                     ifft2_centered, ifft_axis, is_z_encoded, resize_kspace, rss_combine)

CLINICAL_ACCELERATIONS = (1.5, 3.7, 4.0, 10.0)
RESOLUTION_BOUNDS_MM = (1.2, 1.6)
FOV_MODES = ("quadratic", "twofold_oversampled")


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    target_res_mm: tuple = RESOLUTION_BOUNDS_MM
    acceleration_choices: tuple = CLINICAL_ACCELERATIONS
    fov_mode: str = "quadratic"
    oversampling_factor: float = 1.0
    calib_fraction: float = DEFAULT_CALIB_FRACTION

    def __post_init__(self):
        lo, hi = (float(v) for v in self.target_res_mm)
        object.__setattr__(self, "target_res_mm", (lo, hi))
        if not (RESOLUTION_BOUNDS_MM[0] <= lo <= hi <= RESOLUTION_BOUNDS_MM[1]):
            raise InvalidArgumentError(
                f"target resolution range {self.target_res_mm} must lie within {RESOLUTION_BOUNDS_MM} mm")
        choices = tuple(float(a) for a in self.acceleration_choices)
        if not choices:
            raise InvalidArgumentError("acceleration_choices must be non-empty")
        # 1.0 (no undersampling) is accepted for ablations alongside the clinical factors
        bad = [a for a in choices if a != 1.0 and a not in CLINICAL_ACCELERATIONS]
        if bad:
            raise InvalidArgumentError(f"unsupported acceleration factors {bad}")
        object.__setattr__(self, "acceleration_choices", choices)
        if self.fov_mode not in FOV_MODES:
            raise InvalidArgumentError(f"fov_mode must be one of {FOV_MODES}")


def load_preset(name: str) -> dict:
    """Raw preset document with ``protocol`` and ``training`` parts."""
    try:
        text = resources.files("iomri.presets").joinpath(f"{name}.json").read_text()
    except FileNotFoundError:
        raise InvalidArgumentError(f"unknown preset {name!r}") from None
    return json.loads(text)


def protocol_preset(name: str) -> ProtocolSpec:
    return ProtocolSpec(**load_preset(name)["protocol"])


@dataclass(eq=False)
class EmulatedPair:
    input_kspace: ComplexVolume
    mask: SamplingMask
    target_image: ImageVolume
    provenance: dict = field(default_factory=dict)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def fov_crop_random(v: ComplexVolume, mode: str, seed=0) -> ComplexVolume:
    """Random image-space FOV crop to a square or 2:1 (frequency-encode along y) window."""
    if v.space != IMAGE:
        raise InvalidArgumentError("fov_crop_random expects an image-space volume")
    if mode not in FOV_MODES:
        raise InvalidArgumentError(f"fov mode must be one of {FOV_MODES}")
    rng = _rng(seed)
    ny, nx = v.data.shape[-2:]
    if mode == "quadratic":
        ty = tx = min(ny, nx)
    else:
        tx = nx
        ty = min(ny, 2 * nx)
    oy = int(rng.integers(0, ny - ty + 1))
    ox = int(rng.integers(0, nx - tx + 1))
    out = v.data[..., oy:oy + ty, ox:ox + tx].copy()
    res = v.with_data(out, spacing_mm=v.spacing_mm)
    res.provenance["fov_crop"] = {"mode": mode, "offset_yx": [oy, ox]}
    return res


def round_to_even(x: float) -> int:
    return 2 * int(math.floor(x / 2.0 + 0.5))


def resolution_extents(fov_yx, target_res_mm):
    return tuple(max(2, round_to_even(f / target_res_mm)) for f in fov_yx)


def crop_to_target_resolution(v: ComplexVolume, target_res_mm: float, rounding="to_even") -> ComplexVolume:
    """Center-crop k-space so the in-plane resolution is about ``target_res_mm``.

    The returned volume is in k-space with extent ``round_to_even(fov / target)``
    per in-plane axis; the achieved resolution is ``fov / extent``.
    """
    if rounding != "to_even":
        raise InvalidArgumentError(f"unsupported rounding {rounding!r}")
    spacing = v.spacing_mm[1:]
    if target_res_mm < max(spacing) * (1 - 1e-9):
        raise InvalidArgumentError(
            f"target resolution {target_res_mm} mm is finer than the data ({spacing} mm)")
    if v.space == IMAGE:
        v = fft2_centered(v)
    ny, nx = v.data.shape[-2:]
    target = resolution_extents(v.fov_mm[1:], target_res_mm)
    target = (min(target[0], ny), min(target[1], nx))
    if target == (ny, nx):
        return v.replace(data=v.data.copy())
    return resize_kspace(v, target)


def _band_extents(fov_yx, res_mm, grid_yx, res_range):
    """Even extents whose achieved resolution lies inside ``res_range``."""
    lo, hi = res_range
    out = []
    for f, n_max in zip(fov_yx, grid_yx):
        n = min(round_to_even(f / res_mm), n_max)
        while f / n > hi + 1e-12:
            n += 2
        while f / n < lo - 1e-12:
            n -= 2
        if n < 8 or n > n_max or not (lo - 1e-12 <= f / n <= hi + 1e-12):
            raise InvalidArgumentError(
                f"cannot reach a resolution in {res_range} mm for FOV {f} mm on a {n_max}-sample grid")
        out.append(n)
    return tuple(out)


def make_training_example(slice_: ComplexVolume, spec: ProtocolSpec, seed=0,
                          acceleration=None, style=None) -> EmulatedPair:
    """Emulate one (undersampled input, fully sampled target) pair from an image slice.

    ``acceleration`` and ``style`` pin the otherwise random mask draws.
    """
    if slice_.space != IMAGE or slice_.data.shape[1] != 1:
        raise InvalidArgumentError("expected a single-slice image-space volume")
    rng = np.random.default_rng(seed)
    crop_seed, mask_seed = (int(s) for s in rng.integers(0, 2**31 - 1, size=2))

    cropped = fov_crop_random(slice_, spec.fov_mode, crop_seed)
    target = rss_combine(cropped)
    kspace = fft2_centered(cropped)
    grid = kspace.data.shape[-2:]

    lo = max(spec.target_res_mm[0], max(kspace.spacing_mm[1:]))
    res = float(rng.uniform(lo, spec.target_res_mm[1]))
    band = _band_extents(kspace.fov_mm[1:], res, grid, (lo, spec.target_res_mm[1]))
    low = resize_kspace(kspace, band)
    achieved = tuple(f / n for f, n in zip(low.fov_mm[1:], band))
    assert all(RESOLUTION_BOUNDS_MM[0] - 1e-9 <= a <= RESOLUTION_BOUNDS_MM[1] + 1e-9 for a in achieved)

    R = float(rng.choice(spec.acceleration_choices)) if acceleration is None else float(acceleration)
    style = str(rng.choice(sorted(STYLES))) if style is None else style
    band_mask = poisson_disc_mask(band, R, spec.calib_fraction, seed=mask_seed, style=style)
    masked = apply_mask(low, band_mask)
    padded = resize_kspace(masked, grid)
    provenance = {
        "seed": seed,
        "fov_crop": cropped.provenance.get("fov_crop"),
        "requested_res_mm": res,
        "achieved_res_mm": list(achieved),
        "band_extents": list(band),
        "acceleration": R,
        "measured_acceleration": band_mask.measured_R,
        "mask_style": style,
        "mask_seed": mask_seed,
    }
    padded.provenance["emulation"] = provenance
    return EmulatedPair(padded, embed_mask(band_mask, grid), target, provenance)


def emulate_acquisition(v: ComplexVolume, target_res_mm: float, acceleration: float, seed=0,
                        style="styleA", calib_fraction=DEFAULT_CALIB_FRACTION) -> EmulatedPair:
    """Emulate a low-resolution accelerated scan of a fully sampled multi-slice volume.

    Unlike :func:`make_training_example` the input k-space is returned on the
    coarse grid; reconstruction zero-pads it to whatever grid is wanted. The
    same in-plane mask is used for every slice. A z-encoded input stays
    z-encoded; the target is always the image-space RSS on the input grid.
    """
    if acceleration != 1.0 and float(acceleration) not in CLINICAL_ACCELERATIONS:
        raise InvalidArgumentError(f"unsupported acceleration factor {acceleration}")
    full = fft2_centered(v) if v.space == IMAGE else v
    hybrid = ifft_axis(full, "z") if v.space == KSPACE and is_z_encoded(full) else full
    target = rss_combine(ifft2_centered(hybrid))
    low = crop_to_target_resolution(full, target_res_mm)
    grid = low.data.shape[-2:]
    mask = poisson_disc_mask(grid, acceleration, calib_fraction, seed=seed, style=style)
    masked = apply_mask(low, mask)
    provenance = {
        "seed": seed,
        "requested_res_mm": float(target_res_mm),
        "achieved_res_mm": [f / n for f, n in zip(low.fov_mm[1:], grid)],
        "source_extents_yx": list(full.data.shape[-2:]),
        "band_extents": list(grid),
        "acceleration": float(acceleration),
        "measured_acceleration": mask.measured_R,
        "mask_style": style,
    }
    masked.provenance["emulation"] = provenance
    return EmulatedPair(masked, mask, target, provenance)
