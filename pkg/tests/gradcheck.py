"""Central finite-difference oracle for the cascade gradient."""
import numpy as np

from iomri.emulation import ProtocolSpec, make_training_example
from iomri.phantom import phantom_slices
from iomri.unrolled.model import CascadeModel, _run, compute_gradients, example_loss, prepare_example


def small_example(seed=0, n=16):
    sl = phantom_slices(1, seed=seed, extents_yx=(n, n), spacing_mm=0.6875)[0]
    pair = make_training_example(sl, ProtocolSpec("check", acceleration_choices=(4.0,)), seed=seed)
    return prepare_example(pair, example_id=f"check{seed}")


def general_model(cascades=2, channels=4, seed=0, bias_std=0.1):
    """He-initialized model with random biases, so no unit sits exactly at zero."""
    m = CascadeModel.init(cascades, channels, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    return m.with_params({k: v + bias_std * rng.standard_normal(v.shape) if k.endswith("bias") else v
                          for k, v in m.params.items()})


def _signs(model, ex):
    _, tape = _run(model, ex.y, ex.mask, ex.sens, record=True)
    return [pre > 0 for cache in tape.refiner_caches for _, pre in cache[:-1]]


def _shifted(model, name, idx, delta):
    params = {k: v.copy() for k, v in model.params.items()}
    params[name][idx] += delta
    return model.with_params(params)


def check_gradient(model, ex, n_params=20, h=1e-3, seed=0, skip_kinks=True, tries_per_tensor=10):
    """Compare analytic and central-difference derivatives at random parameter entries.

    Every parameter tensor is visited first (weights, biases and step sizes
    alike); the remaining draws are weighted by tensor size. With
    ``skip_kinks`` an entry whose +/-h stencil flips any ReLU is resampled,
    because the loss is not differentiable on that stencil. A tensor with no
    kink-free entry in ``tries_per_tensor`` draws is reported as kink-bound.
    Returns ``(rows, skipped, kink_bound)`` with rows
    ``(name, index, fd, analytic, rel_err)``.
    """
    _, grads = compute_gradients(model, [ex])
    rng = np.random.default_rng(seed)
    names = list(model.params)
    sizes = np.array([model.params[k].size for k in names], dtype=float)
    rows, skipped, kink_bound = [], 0, []
    queue = [(n, tries_per_tensor) for n in names]
    while len(rows) < n_params:
        if queue:
            name, left = queue.pop(0)
        else:
            name, left = names[rng.choice(len(names), p=sizes / sizes.sum())], None
        shape = model.params[name].shape
        idx = tuple(int(rng.integers(0, s)) for s in shape)
        plus, minus = _shifted(model, name, idx, h), _shifted(model, name, idx, -h)
        if skip_kinks and any(np.any(a != b) for a, b in zip(_signs(plus, ex), _signs(minus, ex))):
            skipped += 1
            if skipped > 50 * n_params:
                raise RuntimeError("almost every stencil crosses a kink; reduce h")
            if left is not None:
                if left > 1:
                    queue.insert(0, (name, left - 1))
                else:
                    kink_bound.append(name)
            continue
        lp = example_loss(plus, ex, with_grad=False)[0]
        lm = example_loss(minus, ex, with_grad=False)[0]
        fd = (lp - lm) / (2 * h)
        an = float(grads[name][idx])
        scale = max(abs(fd), abs(an))
        err = abs(fd - an) / scale if scale > 1e-10 else abs(fd - an)
        rows.append((name, idx, fd, an, err))
    return rows, skipped, kink_bound
