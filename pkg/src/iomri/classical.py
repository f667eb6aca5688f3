"""Zero-filled (SENSE-adjoint) and l1-wavelet compressed-sensing reconstruction.

The encoding operator is ``A = M F S``: coil weighting by sensitivity maps,
centered orthonormal 2-D FFT, then masking. Images may carry leading axes
(e.g. ``(z, y, x)``); maps then have shape ``(coil, z, y, x)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .sampling import SamplingMask
from .volume import ImageVolume, fft2c, ifft2c

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 5e-3
DEFAULT_ITERS = 50
DEFAULT_LEVELS = 3
DEFAULT_WAVELET = "db4"


@dataclass(eq=False)
class ForwardOperator:
    sens: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.sens = np.asarray(self.sens)
        mask = self.mask.keep if isinstance(self.mask, SamplingMask) else self.mask
        self.mask = np.asarray(mask).astype(bool)
        if self.sens.ndim < 3:
            raise InvalidArgumentError("sensitivity maps need a leading coil axis")
        if self.mask.shape != self.sens.shape[-2:]:
            raise InvalidArgumentError(
                f"mask extents {self.mask.shape} do not match map extents {self.sens.shape[-2:]}")

    @property
    def grid(self):
        return self.sens.shape[1:]

    @property
    def num_coils(self):
        return self.sens.shape[0]


def _check_image(op, x):
    if x.shape != op.grid:
        raise InvalidArgumentError(f"image grid {x.shape} does not match operator grid {op.grid}")


def forward_apply(op: ForwardOperator, x) -> np.ndarray:
    """``y_c = mask * F(S_c x)``."""
    x = np.asarray(x)
    _check_image(op, x)
    return op.mask * fft2c(op.sens * x[None])


def adjoint_apply(op: ForwardOperator, y) -> np.ndarray:
    """``x = sum_c conj(S_c) F^H(mask * y_c)``."""
    y = np.asarray(y)
    if y.shape != op.sens.shape:
        raise InvalidArgumentError(f"k-space shape {y.shape} does not match operator {op.sens.shape}")
    return np.sum(np.conj(op.sens) * ifft2c(op.mask * y), axis=0)


def normal_apply(op: ForwardOperator, x) -> np.ndarray:
    """``A^H A x``."""
    return np.sum(np.conj(op.sens) * ifft2c(op.mask * fft2c(op.sens * x[None])), axis=0)


def sense_adjoint_recon(op: ForwardOperator, y) -> ImageVolume:
    """Zero-filled baseline: magnitude of the adjoint."""
    mag = np.abs(adjoint_apply(op, y))
    return ImageVolume(mag if mag.ndim == 3 else mag[None], (1.0, 1.0, 1.0))


# ---------------------------------------------------------------------------
# wavelets

_SQRT2 = math.sqrt(2.0)


def daubechies_lowpass(moments: int) -> np.ndarray:
    """Minimum-phase Daubechies scaling filter with ``moments`` vanishing moments.

    Built by spectral factorization of the Daubechies polynomial; taps sum to
    sqrt(2).
    """
    p = [math.comb(moments - 1 + k, k) for k in range(moments)]
    zeros = []
    for yk in np.roots(p[::-1]):
        r = np.roots([1.0, -(2.0 - 4.0 * yk), 1.0])
        zeros.append(r[np.argmin(np.abs(r))])
    h = np.real(np.poly(zeros)) if zeros else np.ones(1)
    for _ in range(moments):
        h = np.convolve(h, [1.0, 1.0])
    return h * (_SQRT2 / h.sum())


WAVELET_FILTERS = {
    "haar": np.array([1.0, 1.0]) / _SQRT2,
    "db4": daubechies_lowpass(4),
}


def _filters(name):
    try:
        lo = WAVELET_FILTERS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown wavelet {name!r}") from None
    hi = lo[::-1] * (-1.0) ** np.arange(len(lo))
    return lo, hi


def _analysis_1d(x, lo, hi, axis):
    n = x.shape[axis]
    a = 0
    d = 0
    for k in range(len(lo)):
        xs = np.take(x, (np.arange(0, n, 2) + k) % n, axis=axis)
        a = a + lo[k] * xs
        d = d + hi[k] * xs
    return np.concatenate([a, d], axis=axis)


def _synthesis_1d(c, lo, hi, axis):
    n = c.shape[axis]
    half = n // 2
    a = np.take(c, np.arange(half), axis=axis)
    d = np.take(c, np.arange(half, n), axis=axis)
    out = np.zeros(c.shape, dtype=np.result_type(c, lo))
    out = np.moveaxis(out, axis, -1)
    a = np.moveaxis(a, axis, -1)
    d = np.moveaxis(d, axis, -1)
    base = np.arange(0, n, 2)
    for k in range(len(lo)):
        out[..., (base + k) % n] += lo[k] * a + hi[k] * d
    return np.moveaxis(out, -1, axis)


def dwt1(x, wavelet=DEFAULT_WAVELET, axis=-1):
    """One analysis level along ``axis``: approximation half, then detail half."""
    lo, hi = _filters(wavelet)
    x = np.asarray(x)
    if x.shape[axis] % 2:
        raise InvalidArgumentError("axis length must be even")
    return _analysis_1d(x.astype(np.result_type(x, np.float64)), lo, hi, axis)


def dwt2(x, levels=DEFAULT_LEVELS, direction="forward", wavelet=DEFAULT_WAVELET):
    """Orthogonal separable 2-D wavelet transform over the last two axes.

    Periodic boundaries. Coefficients are stored in place of the image with
    the coarsest approximation in the top-left corner.
    """
    x = np.asarray(x)
    ny, nx = x.shape[-2:]
    step = 2 ** levels
    if levels < 0 or ny % step or nx % step:
        raise InvalidArgumentError(f"extents {(ny, nx)} are not divisible by 2**{levels}")
    lo, hi = _filters(wavelet)
    out = x.astype(np.result_type(x, np.float64), copy=True)
    if direction == "forward":
        for lev in range(levels):
            h, w = ny >> lev, nx >> lev
            block = out[..., :h, :w]
            block = _analysis_1d(block, lo, hi, axis=-2)
            block = _analysis_1d(block, lo, hi, axis=-1)
            out[..., :h, :w] = block
    elif direction == "inverse":
        for lev in reversed(range(levels)):
            h, w = ny >> lev, nx >> lev
            block = out[..., :h, :w]
            block = _synthesis_1d(block, lo, hi, axis=-1)
            block = _synthesis_1d(block, lo, hi, axis=-2)
            out[..., :h, :w] = block
    else:
        raise InvalidArgumentError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return out


def soft_threshold(c, tau):
    """Complex soft thresholding, the proximal map of ``tau * |.|_1``."""
    if np.any(np.asarray(tau) < 0):
        raise InvalidArgumentError("threshold must be nonnegative")
    c = np.asarray(c)
    mag = np.abs(c)
    scale = np.maximum(mag - tau, 0.0) / np.where(mag > 0, mag, 1.0)
    out = c * scale
    return out if out.ndim else out[()]


def power_iteration(op: ForwardOperator, iters=20, seed=0):
    """Largest eigenvalue of ``A^H A``; ``None`` if the estimate is not finite."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.grid) + 1j * rng.standard_normal(op.grid)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = normal_apply(op, x)
        lam = float(np.vdot(x, y).real)
        nrm = np.linalg.norm(y)
        if not np.isfinite(nrm) or nrm == 0:
            return None
        x = y / nrm
    return lam if np.isfinite(lam) and lam > 0 else None


@dataclass
class CSResult:
    image: np.ndarray
    objective: list = field(default_factory=list)
    lipschitz: float = 1.0
    status: str = "ok"


def fista_cs_recon(op: ForwardOperator, y, lam=DEFAULT_LAMBDA, iters=DEFAULT_ITERS,
                   levels=DEFAULT_LEVELS, wavelet=DEFAULT_WAVELET, return_result=False):
    """FISTA on ``0.5 |Ax - y|^2 + lam |W x|_1`` with an orthogonal wavelet ``W``.

    ``y`` is scaled so that ``max |A^H y| = 1`` before solving and the result
    is scaled back, which makes ``lam`` independent of the data scale.
    """
    if lam < 0:
        raise InvalidArgumentError("lambda must be nonnegative")
    y = np.asarray(y)
    x0 = adjoint_apply(op, y)
    scale = float(np.abs(x0).max())
    if scale == 0:
        res = CSResult(np.zeros(op.grid, dtype=np.complex128))
        return res if return_result else res.image
    y = y / scale
    b = x0 / scale

    status = "ok"
    L = power_iteration(op)
    if L is None:
        log.warning("power iteration did not converge; falling back to L = 1")
        L, status = 1.0, "lipschitz-fallback"

    def objective(x):
        r = forward_apply(op, x) - y
        return 0.5 * float(np.vdot(r, r).real) + lam * float(np.abs(dwt2(x, levels, "forward", wavelet)).sum())

    def prox(v):
        if lam == 0:
            return v
        c = dwt2(v, levels, "forward", wavelet)
        return dwt2(soft_threshold(c, lam / L), levels, "inverse", wavelet)

    x = b.copy()
    z = x.copy()
    t = 1.0
    trace = []
    for _ in range(iters):
        grad = normal_apply(op, z) - b
        x_new = prox(z - grad / L)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        trace.append(objective(x))
    res = CSResult(x * scale, trace, L, status)
    return res if return_result else res.image
