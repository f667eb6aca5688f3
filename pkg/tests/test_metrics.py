import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iomri.errors import InvalidArgumentError
from iomri.metrics import SSIMConfig, nmse, psnr, ssim, ssim_and_grad, ssim_map


def test_nmse_and_psnr():
    ref = np.ones((4, 4))
    x = ref + 0.1
    assert np.isclose(nmse(x, ref), 0.01)
    assert np.isclose(psnr(x, ref, 1.0), 20.0)


def test_gaussian_window_matches_direct():
    rng = np.random.default_rng(0)
    x, y = rng.random((20, 20)), rng.random((20, 20))
    cfg = SSIMConfig(window="gaussian")
    w = cfg.kernel()
    C1, C2 = (0.01 * 1.0) ** 2, (0.03 * 1.0) ** 2
    vals = []
    for i in range(10):
        for j in range(10):
            a, b = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            ma, mb = np.sum(w * a), np.sum(w * b)
            va, vb = np.sum(w * (a - ma) ** 2), np.sum(w * (b - mb) ** 2)
            cab = np.sum(w * (a - ma) * (b - mb))
            vals.append((2 * ma * mb + C1) * (2 * cab + C2) / ((ma ** 2 + mb ** 2 + C1) * (va + vb + C2)))
    assert np.isclose(ssim(x, y, cfg, dynamic_range=1.0), np.mean(vals), atol=1e-12)


def test_map_shape_is_valid_mode():
    assert ssim_map(np.ones((16, 20)), np.ones((16, 20))).shape == (10, 14)


def test_bad_config():
    with pytest.raises(InvalidArgumentError):
        SSIMConfig(window="box")


def test_ssim_gradient_finite_differences():
    rng = np.random.default_rng(3)
    x, ref = rng.random((12, 12)), rng.random((12, 12))
    s, g = ssim_and_grad(x, ref, 1.0)
    h = 1e-6
    for _ in range(10):
        i, j = rng.integers(0, 12, size=2)
        e = np.zeros_like(x)
        e[i, j] = h
        fd = (ssim(x + e, ref, dynamic_range=1.0) - ssim(x - e, ref, dynamic_range=1.0)) / (2 * h)
        assert abs(fd - g[i, j]) <= 1e-6 * max(1.0, abs(fd))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 10))
def test_ssim_bounds_and_symmetry(seed, scale):
    rng = np.random.default_rng(seed)
    x, y = scale * rng.random((10, 10)), scale * rng.random((10, 10))
    a = ssim(x, y, dynamic_range=scale)
    assert -1 <= a <= 1
    assert np.isclose(a, ssim(y, x, dynamic_range=scale))
    assert ssim(x, x, dynamic_range=scale) == 1.0
