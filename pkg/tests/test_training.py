import numpy as np
import pytest

from iomri.emulation import protocol_preset
from iomri.errors import InvalidArgumentError, NumericalFailureError
from iomri.phantom import phantom_slices
from iomri.unrolled import training
from iomri.unrolled.training import TrainingConfig, train_model, training_preset


@pytest.fixture(scope="module")
def tiny():
    slices = phantom_slices(6, seed=3, extents_yx=(48, 48), spacing_mm=1.1)
    cfg = TrainingConfig(epochs=3, lr=2e-3, batch=2, examples_per_epoch=4, cascades=2, channels=4, seed=5)
    return slices, cfg


def test_presets():
    desk = training_preset("desk")
    assert (desk.cascades, desk.channels, desk.epochs) == (3, 8, 30)
    full = training_preset("full", epochs=None, lr=5e-4)
    assert (full.epochs, full.lr, full.examples_per_epoch) == (200, 5e-4, 25000)


def test_training_is_deterministic(tiny):
    slices, cfg = tiny
    spec = protocol_preset("desk")
    m1, log1 = train_model(slices[:4], slices[4:], spec, cfg)
    m2, log2 = train_model(slices[:4], slices[4:], spec, cfg)
    assert log1["epochs"] == log2["epochs"]
    assert all(np.array_equal(m1.params[k], m2.params[k]) for k in m1.params)


def test_best_epoch_is_lowest_validation(tiny):
    slices, cfg = tiny
    records = []
    model, log = train_model(slices[:4], slices[4:], protocol_preset("desk"), cfg, callback=records.append)
    vals = [r["val_loss"] for r in log["epochs"]]
    assert log["best_epoch"] == int(np.argmin(vals))
    assert records == log["epochs"]
    assert log["epochs"][-1]["steps"] == cfg.epochs * 2
    assert log["config"]["seed"] == 5


def test_sets_must_be_disjoint(tiny):
    slices, cfg = tiny
    with pytest.raises(InvalidArgumentError):
        train_model(slices[:4], slices[3:], protocol_preset("desk"), cfg)
    with pytest.raises(InvalidArgumentError):
        train_model([], slices, protocol_preset("desk"), cfg)


def test_numerical_failure_carries_checkpoint(tiny, monkeypatch):
    slices, cfg = tiny

    def broken(model, batch, cfg=None, active=None):
        raise NumericalFailureError("non-finite loss", "x")

    monkeypatch.setattr(training, "compute_gradients", broken)
    with pytest.raises(NumericalFailureError) as info:
        train_model(slices[:4], slices[4:], protocol_preset("desk"), cfg)
    assert info.value.checkpoint is not None
