"""Volume-level reconstruction: zero-filled, compressed sensing and the cascade.

All three share the same preparation: repeats are averaged in k-space, the
in-plane grid is optionally zero-padded to a finer target resolution, the
z-direction is inverse transformed, and each slice is reconstructed with
sensitivity maps estimated from its calibration region.
"""
from __future__ import annotations

import numpy as np

from .classical import (DEFAULT_ITERS, DEFAULT_LAMBDA, DEFAULT_LEVELS, DEFAULT_WAVELET,
                        ForwardOperator, adjoint_apply, fista_cs_recon)
from .errors import InvalidArgumentError
from .sampling import SamplingMask, embed_mask
from .unrolled.model import CascadeModel, cascade_forward
from .unrolled.sensitivity import estimate_sensitivities
from .volume import (ComplexVolume, ImageVolume, average_repeats, ifft_axis,
                     is_z_encoded, resize_kspace)


def prepare_volume(kspace, masks, target_yx=None, z_encoded=None):
    """Average, pad and z-transform ``kspace``; returns ``(hybrid, per-slice masks)``.

    ``z_encoded`` defaults to the volume's provenance flag (true when absent).
    """
    if isinstance(kspace, ComplexVolume):
        vol = kspace
    else:
        vol = average_repeats(list(kspace))
    nz = vol.data.shape[1]
    if isinstance(masks, SamplingMask):
        masks = [masks] * nz
    masks = list(masks)
    if len(masks) != nz:
        raise InvalidArgumentError(f"need one mask per slice ({nz}), got {len(masks)}")
    if target_yx is not None and tuple(target_yx) != vol.data.shape[-2:]:
        vol = resize_kspace(vol, target_yx)
    grid = vol.data.shape[-2:]
    masks = [m if m.shape == grid else embed_mask(m, grid) for m in masks]
    if z_encoded is None:
        z_encoded = is_z_encoded(vol)
    return (ifft_axis(vol, "z") if z_encoded else vol), masks


def _per_slice(hybrid, masks, solve):
    out = np.empty(hybrid.data.shape[1:])
    for z in range(hybrid.data.shape[1]):
        y = hybrid.data[:, z].astype(np.complex128)
        sens = estimate_sensitivities(y, masks[z].calib_yx)
        op = ForwardOperator(sens, masks[z])
        out[z] = np.abs(solve(op, y))
    return ImageVolume(out, hybrid.spacing_mm)


def reconstruct_zero_filled(kspace, masks, target_yx=None, z_encoded=None) -> ImageVolume:
    hybrid, masks = prepare_volume(kspace, masks, target_yx, z_encoded)
    return _per_slice(hybrid, masks, adjoint_apply)


def reconstruct_cs(kspace, masks, target_yx=None, z_encoded=None, lam=DEFAULT_LAMBDA,
                   iters=DEFAULT_ITERS, levels=DEFAULT_LEVELS, wavelet=DEFAULT_WAVELET) -> ImageVolume:
    hybrid, masks = prepare_volume(kspace, masks, target_yx, z_encoded)
    return _per_slice(hybrid, masks,
                      lambda op, y: fista_cs_recon(op, y, lam, iters, levels, wavelet))


def reconstruct_dl(model: CascadeModel, kspace, masks, target_yx=None, z_encoded=None) -> ImageVolume:
    """Slice-wise cascade reconstruction; input is scaled to ``max |A^H y| = 1`` and back."""
    def solve(op, y):
        scale = float(np.abs(adjoint_apply(op, y)).max()) or 1.0
        return scale * cascade_forward(model, y / scale, op.mask, op.sens)

    hybrid, masks = prepare_volume(kspace, masks, target_yx, z_encoded)
    return _per_slice(hybrid, masks, solve)
