"""Unrolled cascade with densely interconnected refiners.

Each cascade ``t`` takes a gradient step on the data-consistency term with a
learnable step size and adds the output of a small CNN that sees every
earlier cascade image::

    x_t = x_{t-1} - eta_t * A^H (A x_{t-1} - y) + R_t([x_0, ..., x_{t-1}])

Complex images enter the refiners as (real, imag) channel pairs. Gradients
are derived by hand; complex adjoints use the convention
``dL/dRe + i dL/dIm``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..classical import ForwardOperator, adjoint_apply, forward_apply, normal_apply
from ..errors import InvalidArgumentError, ModelShapeError, NumericalFailureError
from ..metrics import SSIMConfig, ssim_and_grad
from .layers import conv2d, conv2d_backward, relu, relu_backward
from .sensitivity import estimate_sensitivities

N_LAYERS = 3


def layer_shapes(t: int, channels: int):
    """(weight, bias) shapes of the three refiner layers of cascade ``t`` (1-based)."""
    dims = [2 * t, channels, channels, 2]
    return [((dims[i + 1], dims[i], 3, 3), (dims[i + 1],)) for i in range(N_LAYERS)]


def parameter_shapes(cascades: int, channels: int) -> dict:
    shapes = {}
    for t in range(1, cascades + 1):
        shapes[f"cascade{t}.eta"] = ()
        for i, (ws, bs) in enumerate(layer_shapes(t, channels), start=1):
            shapes[f"cascade{t}.conv{i}.weight"] = ws
            shapes[f"cascade{t}.conv{i}.bias"] = bs
    return shapes


@dataclass(eq=False)
class CascadeModel:
    cascades: int
    channels: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cascades < 1 or self.channels < 1:
            raise InvalidArgumentError("cascades and channels must be >= 1")
        expected = parameter_shapes(self.cascades, self.channels)
        if set(self.params) != set(expected):
            raise ModelShapeError("parameter names do not match the architecture")
        for name, shape in expected.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != tuple(shape):
                raise ModelShapeError(f"{name}: shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ModelShapeError(f"{name} contains non-finite values")
            self.params[name] = arr
        self.params = {k: self.params[k] for k in expected}

    @classmethod
    def init(cls, cascades=3, channels=16, seed=0, eta=1.0, out_scale=0.1):
        """He-initialized refiners; the last layer is damped so training starts near plain DC."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in parameter_shapes(cascades, channels).items():
            if name.endswith(".eta"):
                params[name] = np.array(eta)
            elif name.endswith(".bias"):
                params[name] = np.zeros(shape)
            else:
                fan_in = shape[1] * 9
                w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
                if name.endswith(f"conv{N_LAYERS}.weight"):
                    w *= out_scale
                params[name] = w
        return cls(cascades, channels, params)

    @classmethod
    def zeros(cls, cascades=3, channels=16, eta=0.0):
        params = {name: (np.array(eta) if name.endswith(".eta") else np.zeros(shape))
                  for name, shape in parameter_shapes(cascades, channels).items()}
        return cls(cascades, channels, params)

    def copy(self) -> "CascadeModel":
        return CascadeModel(self.cascades, self.channels, {k: v.copy() for k, v in self.params.items()})

    def with_params(self, params) -> "CascadeModel":
        return CascadeModel(self.cascades, self.channels, dict(params))

    @property
    def num_parameters(self) -> int:
        return int(sum(np.size(p) for p in self.params.values()))


# ---------------------------------------------------------------------------
# forward / backward

def _to_channels(images):
    return np.concatenate([np.stack([x.real, x.imag]) for x in images], axis=0)


def _refiner_forward(params, t, inp):
    cache = []
    h = inp
    for i in range(1, N_LAYERS + 1):
        w = params[f"cascade{t}.conv{i}.weight"]
        b = params[f"cascade{t}.conv{i}.bias"]
        if w.shape[1] != h.shape[0]:
            raise ModelShapeError(
                f"cascade {t} layer {i} expects {w.shape[1]} input channels, got {h.shape[0]}")
        pre, win = conv2d(h, w, b)
        cache.append((win, pre))
        h = relu(pre) if i < N_LAYERS else pre
    return h, cache


def _refiner_backward(params, t, grad_out, cache, grads):
    g = grad_out
    for i in range(N_LAYERS, 0, -1):
        win, pre = cache[i - 1]
        if i < N_LAYERS:
            g = relu_backward(g, pre)
        w = params[f"cascade{t}.conv{i}.weight"]
        g, dw, db = conv2d_backward(g, w, win)
        grads[f"cascade{t}.conv{i}.weight"] += dw
        grads[f"cascade{t}.conv{i}.bias"] += db
    return g


@dataclass
class Tape:
    op: ForwardOperator
    b: np.ndarray
    images: list
    residuals: list
    refiner_caches: list


def _run(model: CascadeModel, y, mask, sens, active=None, record=False):
    op = ForwardOperator(sens, mask)
    y = np.asarray(y)
    b = adjoint_apply(op, y)
    images = [b]
    residuals, caches = [], []
    n_active = model.cascades if active is None else int(active)
    for t in range(1, n_active + 1):
        prev = images[-1]
        eta = model.params[f"cascade{t}.eta"]
        dc = normal_apply(op, prev) - b
        out, cache = _refiner_forward(model.params, t, _to_channels(images))
        images.append(prev - eta * dc + (out[0] + 1j * out[1]))
        if record:
            residuals.append(dc)
            caches.append(cache)
    tape = Tape(op, b, images, residuals, caches) if record else None
    return images[-1], tape


def cascade_forward(model: CascadeModel, y, mask, sens, active=None) -> np.ndarray:
    """Complex image after the cascade. ``active`` truncates to the first cascades."""
    x, _ = _run(model, y, mask, sens, active)
    return x


def _backward(model: CascadeModel, tape: Tape, grad_x, grads):
    n = len(tape.images) - 1
    xbar = [np.zeros_like(tape.b) for _ in range(n + 1)]
    xbar[n] = grad_x
    for t in range(n, 0, -1):
        g = xbar[t]
        eta = model.params[f"cascade{t}.eta"]
        grads[f"cascade{t}.eta"] += -np.sum((np.conj(g) * tape.residuals[t - 1]).real)
        xbar[t - 1] += g - eta * normal_apply(tape.op, g)
        d_in = _refiner_backward(model.params, t, np.stack([g.real, g.imag]),
                                 tape.refiner_caches[t - 1], grads)
        for j in range(t):
            xbar[j] += d_in[2 * j] + 1j * d_in[2 * j + 1]
    return xbar[0]


# ---------------------------------------------------------------------------
# loss

@dataclass(eq=False)
class PreparedExample:
    """Network-ready single-slice example, scaled so ``max |A^H y| = 1``."""

    y: np.ndarray
    mask: np.ndarray
    sens: np.ndarray
    target: np.ndarray
    scale: float
    example_id: object = None


def prepare_example(pair, example_id=None, calib_yx=None) -> PreparedExample:
    """Estimate maps and normalize one :class:`~iomri.emulation.EmulatedPair`."""
    y = np.asarray(pair.input_kspace.data)[:, 0].astype(np.complex128)
    mask = pair.mask.keep
    calib = pair.mask.calib_yx if calib_yx is None else calib_yx
    sens = estimate_sensitivities(y, calib)
    op = ForwardOperator(sens, mask)
    scale = float(np.abs(adjoint_apply(op, y)).max())
    if scale == 0:
        scale = 1.0
    target = np.asarray(pair.target_image.data)[0] / scale
    return PreparedExample(y / scale, mask, sens, target, scale, example_id)


def _magnitude_backward(x, grad_mag):
    mag = np.abs(x)
    return grad_mag * np.where(mag > 0, x / np.where(mag > 0, mag, 1.0), 0.0)


def _dynamic_range(targets):
    L = max(float(np.max(t)) for t in targets)
    return L if L > 0 else 1.0


def example_loss(model, ex: PreparedExample, cfg=SSIMConfig(), active=None, with_grad=True,
                 dynamic_range=None):
    """``1 - SSIM(|x_T|, target)`` for one example and, optionally, its gradient record.

    ``dynamic_range`` defaults to the target's maximum (1 for an all-zero target).
    """
    x, tape = _run(model, ex.y, ex.mask, ex.sens, active, record=with_grad)
    L = _dynamic_range([ex.target]) if dynamic_range is None else float(dynamic_range)
    s, d_mag = ssim_and_grad(np.abs(x), ex.target, L, cfg)
    loss = 1.0 - s
    if not np.isfinite(loss):
        raise NumericalFailureError(f"non-finite loss for example {ex.example_id!r}", ex.example_id)
    if not with_grad:
        return loss, None
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    _backward(model, tape, _magnitude_backward(x, -d_mag), grads)
    return loss, grads


def compute_gradients(model: CascadeModel, batch, cfg=SSIMConfig(), active=None):
    """Mean loss over ``batch`` and its exact gradient w.r.t. every parameter.

    Items of ``batch`` are :class:`PreparedExample` or emulated pairs. The
    SSIM dynamic range is the largest target value in the batch. The
    reduction runs in batch order, so results do not depend on scheduling.
    """
    batch = [ex if isinstance(ex, PreparedExample) else prepare_example(ex, example_id=i)
             for i, ex in enumerate(batch)]
    if not batch:
        raise InvalidArgumentError("empty batch")
    L = _dynamic_range([ex.target for ex in batch])
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    for ex in batch:
        loss, g = example_loss(model, ex, cfg, active, dynamic_range=L)
        total += loss
        for k in grads:
            grads[k] += g[k]
    n = len(batch)
    for k in grads:
        grads[k] /= n
        if not np.all(np.isfinite(grads[k])):
            raise NumericalFailureError(f"non-finite gradient for {k}")
    return total / n, grads


def data_consistency_error(x, y, mask, sens) -> float:
    """``|mask (F(S x)) - y| / |y|``."""
    op = ForwardOperator(sens, mask)
    r = forward_apply(op, x) - op.mask * y
    return float(np.linalg.norm(r) / np.linalg.norm(op.mask * y))


__all__ = [
    "CascadeModel", "PreparedExample", "cascade_forward", "compute_gradients",
    "example_loss", "layer_shapes", "parameter_shapes", "prepare_example",
    "data_consistency_error",
]
