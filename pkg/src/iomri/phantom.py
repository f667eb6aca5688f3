"""Analytic ellipsoid phantoms and dual surface-coil simulation.

Coordinates of ellipsoids are normalized to ``[-1, 1]`` along each axis of
the field of view. Coil positions are in millimetres relative to the grid
center.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .volume import KSPACE, ComplexVolume, ImageVolume, fft2c, fft_axis


@dataclass(frozen=True)
class Ellipse:
    center: tuple          # (z, y, x), normalized
    semi_axes: tuple       # (z, y, x), normalized
    intensity: float
    rotation: float = 0.0  # in-plane angle, radians


def _default_ellipses():
    return [
        Ellipse((0.0, 0.0, 0.0), (0.95, 0.85, 0.70), 1.0),
        Ellipse((0.0, 0.0, 0.0), (0.90, 0.79, 0.64), -0.2),
        Ellipse((0.0, -0.05, 0.12), (0.45, 0.28, 0.08), -0.45, math.radians(-15)),
        Ellipse((0.0, -0.05, -0.12), (0.45, 0.28, 0.08), -0.45, math.radians(15)),
        Ellipse((0.0, 0.40, 0.0), (0.60, 0.10, 0.18), 0.12),
        Ellipse((0.2, 0.25, -0.30), (0.30, 0.06, 0.06), 0.15),
    ]


def _default_lesion():
    return Ellipse((0.0, -0.45, 0.30), (0.40, 0.12, 0.10), -0.5, math.radians(30))


@dataclass
class PhantomSpec:
    """Desk-scale default: 8 slices of 256x256 over a 220 mm in-plane FOV."""

    extents: tuple = (8, 256, 256)
    fov_mm: tuple = (14.0, 220.0, 220.0)
    ellipses: list = field(default_factory=_default_ellipses)
    lesion: Ellipse | None = field(default_factory=_default_lesion)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.extents = tuple(int(e) for e in self.extents)
        self.fov_mm = tuple(float(f) for f in self.fov_mm)
        if len(self.extents) != 3 or len(self.fov_mm) != 3:
            raise InvalidArgumentError("extents and fov_mm are (z, y, x) triples")
        if min(self.extents[1:]) < 16 or self.extents[0] < 1:
            raise InvalidArgumentError(f"in-plane extents must be >= 16, got {self.extents}")

    @property
    def spacing_mm(self):
        return tuple(f / n for f, n in zip(self.fov_mm, self.extents))


def grid_coordinates(extents):
    """Normalized voxel-center coordinates, each axis spanning (-1, 1)."""
    axes = [(np.arange(n) - (n - 1) / 2) / (n / 2) for n in extents]
    return np.meshgrid(*axes, indexing="ij")


def generate_phantom(spec: PhantomSpec) -> ImageVolume:
    z, y, x = grid_coordinates(spec.extents)
    img = np.zeros(spec.extents)
    shapes = list(spec.ellipses) + ([spec.lesion] if spec.lesion is not None else [])
    for e in shapes:
        if min(e.semi_axes) <= 0:
            raise InvalidArgumentError(f"ellipse has a non-positive semi-axis: {e.semi_axes}")
        c, s = math.cos(e.rotation), math.sin(e.rotation)
        dy, dx = y - e.center[1], x - e.center[2]
        u = c * dx + s * dy
        v = -s * dx + c * dy
        inside = (((z - e.center[0]) / e.semi_axes[0]) ** 2
                  + (v / e.semi_axes[1]) ** 2 + (u / e.semi_axes[2]) ** 2) <= 1.0
        img[inside] += e.intensity
    np.maximum(img, 0.0, out=img)
    return ImageVolume(img, spec.spacing_mm)


# ---------------------------------------------------------------------------
# coils

@dataclass(frozen=True)
class Coil:
    center_mm: tuple         # (z, y, x) relative to the grid center
    radius_mm: float
    orientation: float = 0.0  # receive phase reference, radians


@dataclass
class CoilGeometry:
    coils: list
    model: str = "loop_falloff"
    phase_per_mm: float = 0.01
    falloff_power: float = 2.0

    def __post_init__(self):
        if len(self.coils) < 1:
            raise InvalidArgumentError("coil geometry needs at least one coil")
        if self.model != "loop_falloff":
            raise InvalidArgumentError(f"unknown coil model {self.model!r}")


def dual_surface_coils(fov_mm, radius_mm=60.0, offset=0.55):
    """Two loops facing each other across the object along x."""
    half = offset * fov_mm[2]
    return CoilGeometry([
        Coil((0.0, 0.0, -half), radius_mm, 0.0),
        Coil((0.0, 0.0, half), radius_mm, 1.0),
    ])


def voxel_positions_mm(extents, fov_mm):
    """Voxel-center positions in mm relative to the grid center."""
    axes = [(np.arange(n) - (n - 1) / 2) * (f / n) for n, f in zip(extents, fov_mm)]
    return np.meshgrid(*axes, indexing="ij")


def coil_profiles(geometry: CoilGeometry, extents, fov_mm):
    """Un-normalized complex coil profiles, shape ``(coil, z, y, x)``."""
    z, y, x = voxel_positions_mm(extents, fov_mm)
    out = np.empty((len(geometry.coils),) + tuple(extents), dtype=np.complex128)
    for i, coil in enumerate(geometry.coils):
        cz, cy, cx = coil.center_mm
        d = np.sqrt((z - cz) ** 2 + (y - cy) ** 2 + (x - cx) ** 2)
        r2 = coil.radius_mm ** 2
        mag = r2 / (r2 + d ** geometry.falloff_power)
        out[i] = mag * np.exp(1j * (geometry.phase_per_mm * d + coil.orientation))
    return out


def normalize_sensitivities(profiles, rel_floor=1e-6):
    """Scale maps so the coil sum of squares is 1 (0 where the sum is negligible)."""
    ssq = np.sum(np.abs(profiles) ** 2, axis=0)
    support = ssq > rel_floor * ssq.max()
    scale = np.zeros_like(ssq)
    scale[support] = 1.0 / np.sqrt(ssq[support])
    return profiles * scale


def simulate_surface_coils(geometry: CoilGeometry, spec: PhantomSpec):
    """Normalized complex sensitivity maps on the phantom grid."""
    return normalize_sensitivities(coil_profiles(geometry, spec.extents, spec.fov_mm))


def synthesize_kspace(img: ImageVolume, sens, noise_sigma=0.0, seed=0) -> ComplexVolume:
    """Multi-coil k-space of ``img`` seen through ``sens``, plus complex noise.

    ``noise_sigma`` is relative to the peak coil-image magnitude; the noise
    is circular complex Gaussian with that total standard deviation.
    """
    sens = np.asarray(sens)
    if sens.ndim == 3:
        sens = sens[:, None]
    if sens.shape[1:] != img.data.shape:
        raise InvalidArgumentError(
            f"sensitivity grid {sens.shape[1:]} does not match image grid {img.data.shape}")
    coil_images = sens * img.data[None]
    k = fft2c(coil_images)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        sigma = noise_sigma * np.abs(coil_images).max() / math.sqrt(2.0)
        k = k + sigma * (rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape))
    return ComplexVolume(k, img.spacing_mm, space=KSPACE,
                         provenance={"noise_sigma": noise_sigma, "seed": seed, "z_encoded": False})


def random_phantom_spec(rng, extents=(1, 96, 96), fov_mm=(1.75, 66.0, 66.0), noise_sigma=0.0):
    """Randomly perturbed head-like phantom, used to build desk-scale training sets."""
    base = _default_ellipses()
    ellipses = []
    for i, e in enumerate(base):
        jitter = 0.03 if i < 2 else 0.12
        center = tuple(c + rng.uniform(-jitter, jitter) for c in e.center)
        if i < 2:
            axes = tuple(a * rng.uniform(0.9, 1.05) for a in e.semi_axes)
        else:
            axes = tuple(a * rng.uniform(0.6, 1.4) for a in e.semi_axes)
        ellipses.append(Ellipse(center, axes, e.intensity * rng.uniform(0.8, 1.2),
                                e.rotation + rng.uniform(-0.5, 0.5)))
    for _ in range(int(rng.integers(2, 6))):
        ellipses.append(Ellipse(
            (0.0, rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4)),
            (1.0, rng.uniform(0.03, 0.15), rng.uniform(0.03, 0.15)),
            rng.uniform(-0.3, 0.3), rng.uniform(0, math.pi)))
    lesion = Ellipse((0.0, rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4)),
                     (1.0, rng.uniform(0.05, 0.15), rng.uniform(0.05, 0.15)),
                     rng.uniform(-0.6, 0.4), rng.uniform(0, math.pi))
    return PhantomSpec(extents, fov_mm, ellipses, lesion, noise_sigma, int(rng.integers(2**31)))


def random_coil_geometry(rng, fov_mm):
    """Two surface loops on roughly opposite sides, with random placement."""
    angle = rng.uniform(0, 2 * math.pi)
    dist = rng.uniform(0.5, 0.65) * fov_mm[2]
    coils = []
    for k in range(2):
        a = angle + k * math.pi + rng.uniform(-0.3, 0.3)
        coils.append(Coil((0.0, dist * math.sin(a), dist * math.cos(a)),
                          rng.uniform(0.3, 0.6) * fov_mm[2], rng.uniform(0, 2 * math.pi)))
    return CoilGeometry(coils)


def phantom_slices(n, seed=0, extents_yx=(96, 96), spacing_mm=0.6875, noise_sigma=0.0):
    """``n`` single-slice, fully sampled, image-space multi-coil phantoms."""
    rng = np.random.default_rng(seed)
    fov = (1.75, extents_yx[0] * spacing_mm, extents_yx[1] * spacing_mm)
    out = []
    for i in range(n):
        spec = random_phantom_spec(rng, (1,) + tuple(extents_yx), fov, noise_sigma)
        img = generate_phantom(spec)
        sens = simulate_surface_coils(random_coil_geometry(rng, fov), spec)
        coil_images = sens * img.data[None]
        if noise_sigma > 0:
            sigma = noise_sigma * np.abs(coil_images).max() / math.sqrt(2.0)
            coil_images = coil_images + sigma * (rng.standard_normal(coil_images.shape)
                                                 + 1j * rng.standard_normal(coil_images.shape))
        out.append(ComplexVolume(coil_images, img.spacing_mm, provenance={"phantom_index": i}))
    return out


def phantom_kspace(spec: PhantomSpec = None, geometry: CoilGeometry = None,
                   noise_sigma=None, seed=None, encode_z=True) -> ComplexVolume:
    """Fully sampled multi-coil k-space of an ellipsoid phantom.

    With ``encode_z`` the slice axis is Fourier encoded too, as in a 3-D
    acquisition; reconstruction then starts with an inverse transform along z.
    """
    spec = PhantomSpec() if spec is None else spec
    geometry = dual_surface_coils(spec.fov_mm) if geometry is None else geometry
    sigma = spec.noise_sigma if noise_sigma is None else noise_sigma
    seed = spec.seed if seed is None else seed
    img = generate_phantom(spec)
    out = synthesize_kspace(img, simulate_surface_coils(geometry, spec), sigma, seed)
    if encode_z:
        out = fft_axis(out, "z")
        out.provenance["z_encoded"] = True
    out.provenance["phantom"] = {"extents": list(spec.extents), "fov_mm": list(spec.fov_mm)}
    return out
