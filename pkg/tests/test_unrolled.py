import numpy as np
import pytest

from gradcheck import check_gradient, general_model, small_example
from iomri.classical import ForwardOperator, adjoint_apply
from iomri.errors import InvalidArgumentError, ModelShapeError
from iomri.unrolled.layers import conv2d, conv2d_backward, relu, relu_backward
from iomri.unrolled.model import (CascadeModel, cascade_forward, compute_gradients, data_consistency_error,
                                  parameter_shapes)
from iomri.unrolled.optim import AdamState, adam_step, cosine_lr
from iomri.unrolled.sensitivity import estimate_sensitivities, raised_cosine


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 5, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out, _ = conv2d(x, w, b)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 5, 6))
    for o in range(3):
        for i in range(5):
            for j in range(6):
                ref[o, i, j] = np.sum(w[o] * xp[:, i:i + 3, j:j + 3]) + b[o]
    assert np.allclose(out, ref)


def test_conv_backward_is_adjoint():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 7, 5))
    w = rng.standard_normal((4, 2, 3, 3))
    g = rng.standard_normal((4, 7, 5))
    out, win = conv2d(x, w, np.zeros(4))
    dx, dw, db = conv2d_backward(g, w, win)
    assert np.isclose(np.sum(g * out), np.sum(dx * x))
    assert np.isclose(np.sum(g * out), np.sum(dw * w))
    assert np.allclose(db, g.sum(axis=(1, 2)))


def test_relu_pair():
    pre = np.array([-1.0, 0.0, 2.0])
    assert np.array_equal(relu(pre), [0, 0, 2])
    assert np.array_equal(relu_backward(np.ones(3), pre), [0, 0, 1])


def test_parameter_layout():
    shapes = parameter_shapes(3, 8)
    assert shapes["cascade1.conv1.weight"] == (8, 2, 3, 3)
    assert shapes["cascade3.conv1.weight"] == (8, 6, 3, 3)
    assert shapes["cascade2.conv3.weight"] == (2, 8, 3, 3)
    assert CascadeModel.init(3, 8).num_parameters == 3081


def test_bad_parameter_shape():
    m = CascadeModel.init(2, 4)
    params = dict(m.params)
    params["cascade1.conv1.weight"] = np.zeros((4, 3, 3, 3))
    with pytest.raises(ModelShapeError):
        CascadeModel(2, 4, params)


def test_zero_model_is_zero_filled():
    ex = small_example(seed=1)
    x = cascade_forward(CascadeModel.zeros(3, 4), ex.y, ex.mask, ex.sens)
    assert np.allclose(x, adjoint_apply(ForwardOperator(ex.sens, ex.mask), ex.y))


def test_gradient_steps_reduce_data_residual():
    ex = small_example(seed=2, n=64)
    x0 = cascade_forward(CascadeModel.zeros(3, 4, eta=0.0), ex.y, ex.mask, ex.sens)
    x3 = cascade_forward(CascadeModel.zeros(3, 4, eta=1.0), ex.y, ex.mask, ex.sens)
    assert data_consistency_error(x3, ex.y, ex.mask, ex.sens) < data_consistency_error(x0, ex.y, ex.mask, ex.sens)


def test_active_truncates():
    ex = small_example(seed=3)
    m = general_model(3, 4, seed=3)
    two = cascade_forward(m, ex.y, ex.mask, ex.sens, active=2)
    m2 = CascadeModel(2, 4, {k: v for k, v in m.params.items() if not k.startswith("cascade3")})
    assert np.allclose(two, cascade_forward(m2, ex.y, ex.mask, ex.sens))


@pytest.mark.parametrize("seed", range(4))
def test_gradient_small_step(seed):
    """At h = cbrt(eps) almost no stencil crosses a kink, so every tensor is checked."""
    model = general_model(cascades=2, channels=4, seed=seed)
    ex = small_example(seed=seed)
    rows, _, kink_bound = check_gradient(model, ex, n_params=30, h=np.finfo(float).eps ** (1 / 3), seed=seed)
    assert not kink_bound
    assert {r[0] for r in rows} == set(model.params)
    assert max(r[4] for r in rows) <= 1e-5


def test_gradient_operation_example():
    """Worked case at h = 1e-3: the first-layer weight of the last cascade."""
    model = general_model(cascades=2, channels=4, seed=0)
    ex = small_example(seed=0)
    rows, _, _ = check_gradient(model, ex, n_params=24, h=1e-3, seed=0)
    assert all(r[4] <= 1e-5 for r in rows)
    assert any(r[0] == "cascade2.conv1.weight" for r in rows)


def test_batch_gradient_is_mean():
    a, b = small_example(seed=4), small_example(seed=5)
    m = general_model(2, 4, seed=1)
    loss, g = compute_gradients(m, [a, b])
    assert 0 < loss < 2
    with pytest.raises(InvalidArgumentError):
        compute_gradients(m, [])


def test_cosine_schedule():
    assert cosine_lr(0, 10, 1e-3) == 1e-3
    assert np.isclose(cosine_lr(5, 10, 1e-3), 5e-4)
    assert np.isclose(cosine_lr(10, 10, 1e-3, 1e-5), 1e-5)
    with pytest.raises(InvalidArgumentError):
        cosine_lr(11, 10, 1e-3)


def test_adam_first_step_is_sign_step():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, -3.0])}
    new, state = adam_step(p, g, AdamState(), lr=0.1)
    assert np.allclose(new["w"], p["w"] - 0.1 * np.sign(g["w"]), atol=1e-6)
    assert state.step == 1
    with pytest.raises(ModelShapeError):
        adam_step(p, {"v": g["w"]}, AdamState(), 0.1)


def test_raised_cosine_and_maps():
    t = raised_cosine(9)
    assert t[4] == 1.0 and np.allclose(t, t[::-1])
    ex = small_example(seed=6)
    assert np.all(np.sum(np.abs(ex.sens) ** 2, axis=0) <= 1 + 1e-9)
    with pytest.raises(InvalidArgumentError):
        estimate_sensitivities(ex.y, (0, 4))
