"""Image-quality metrics: SSIM (with its gradient), PSNR and NMSE."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DynamicRangeError, InvalidArgumentError


@dataclass(frozen=True)
class SSIMConfig:
    """SSIM settings.

    ``window`` is ``"uniform"`` (7x7 box, sample covariance) or ``"gaussian"``
    (11x11, sigma 1.5, population covariance). ``dynamic_range`` of ``None``
    means the maximum of the reference.
    """

    window: str = "uniform"
    win_size: int | None = None
    sigma: float = 1.5
    K1: float = 0.01
    K2: float = 0.03
    dynamic_range: float | None = None

    def __post_init__(self):
        if self.K1 <= 0 or self.K2 <= 0:
            raise InvalidArgumentError("K1 and K2 must be positive")
        if self.window not in ("uniform", "gaussian"):
            raise InvalidArgumentError(f"unknown SSIM window {self.window!r}")

    @property
    def size(self) -> int:
        if self.win_size is not None:
            return int(self.win_size)
        return 7 if self.window == "uniform" else 11

    def kernel(self) -> np.ndarray:
        n = self.size
        if self.window == "uniform":
            w = np.ones((n, n))
        else:
            ax = np.arange(n) - (n - 1) / 2
            g = np.exp(-ax ** 2 / (2 * self.sigma ** 2))
            w = np.outer(g, g)
        return w / w.sum()

    @property
    def cov_norm(self) -> float:
        if self.window == "uniform":
            n = self.size ** 2
            return n / (n - 1)
        return 1.0


def _filter(x, w):
    """Valid-mode weighted window sums over the last two axes."""
    win = sliding_window_view(x, w.shape, axis=(-2, -1))
    return np.tensordot(win, w, axes=([-2, -1], [0, 1]))


def _filter_adjoint(g, w):
    k0, k1 = w.shape
    pad = [(0, 0)] * (g.ndim - 2) + [(k0 - 1, k0 - 1), (k1 - 1, k1 - 1)]
    return _filter(np.pad(g, pad), w[::-1, ::-1])


def _resolve_range(ref, cfg, dynamic_range):
    L = cfg.dynamic_range if dynamic_range is None else dynamic_range
    if L is None:
        L = float(np.max(ref))
    if L <= 0:
        raise DynamicRangeError("SSIM dynamic range must be positive")
    return float(L)


def _ssim_terms(x, y, w, L, cfg):
    c = cfg.cov_norm
    C1 = (cfg.K1 * L) ** 2
    C2 = (cfg.K2 * L) ** 2
    mx, my = _filter(x, w), _filter(y, w)
    sxx = c * (_filter(x * x, w) - mx * mx)
    syy = c * (_filter(y * y, w) - my * my)
    sxy = c * (_filter(x * y, w) - mx * my)
    A1 = 2 * mx * my + C1
    A2 = 2 * sxy + C2
    B1 = mx * mx + my * my + C1
    B2 = sxx + syy + C2
    return mx, my, A1, A2, B1, B2


def ssim_map(x, ref, cfg: SSIMConfig = SSIMConfig(), dynamic_range=None):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise InvalidArgumentError(f"extent mismatch: {x.shape} vs {ref.shape}")
    if min(x.shape[-2:]) < cfg.size:
        raise InvalidArgumentError(f"images smaller than the {cfg.size}x{cfg.size} SSIM window")
    L = _resolve_range(ref, cfg, dynamic_range)
    _, _, A1, A2, B1, B2 = _ssim_terms(x, ref, cfg.kernel(), L, cfg)
    return (A1 * A2) / (B1 * B2)


def ssim(x, ref, cfg: SSIMConfig = SSIMConfig(), dynamic_range=None) -> float:
    """Mean SSIM over all valid windows of a 2-D slice (or a stack of slices)."""
    return float(np.mean(ssim_map(x, ref, cfg, dynamic_range)))


def ssim_and_grad(x, ref, dynamic_range, cfg: SSIMConfig = SSIMConfig()):
    """Mean SSIM of a 2-D image ``x`` against ``ref`` and its gradient w.r.t. ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(ref, dtype=np.float64)
    w = cfg.kernel()
    c = cfg.cov_norm
    mx, my, A1, A2, B1, B2 = _ssim_terms(x, y, w, float(dynamic_range), cfg)
    den = B1 * B2
    S = A1 * A2 / den
    m = S.size
    d_mx = 2 * my * A2 / den - S * 2 * mx / B1
    d_sxy = 2 * A1 / den
    d_sxx = -S / B2
    g_mean = (d_mx - 2 * c * mx * d_sxx - c * my * d_sxy) / m
    g_xx = c * d_sxx / m
    g_xy = c * d_sxy / m
    grad = (_filter_adjoint(g_mean, w) + 2 * x * _filter_adjoint(g_xx, w)
            + y * _filter_adjoint(g_xy, w))
    return float(S.mean()), grad


def psnr(x, ref, peak) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    if peak <= 0:
        raise InvalidArgumentError("peak must be positive")
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise InvalidArgumentError(f"extent mismatch: {x.shape} vs {ref.shape}")
    mse = float(np.mean(np.abs(x - ref) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def nmse(x, ref) -> float:
    """``|x - ref|^2 / |ref|^2``."""
    x = np.asarray(x)
    ref = np.asarray(ref)
    if x.shape != ref.shape:
        raise InvalidArgumentError(f"extent mismatch: {x.shape} vs {ref.shape}")
    den = float(np.sum(np.abs(ref) ** 2))
    if den == 0:
        raise InvalidArgumentError("reference is all zero")
    return float(np.sum(np.abs(x - ref) ** 2)) / den
