"""Training loop: emulated pairs, Adam with cosine annealing, best-epoch selection."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..emulation import ProtocolSpec, load_preset, make_training_example
from ..errors import InvalidArgumentError, NumericalFailureError
from ..metrics import SSIMConfig
from .model import CascadeModel, compute_gradients, example_loss, prepare_example
from .optim import AdamState, adam_step, cosine_lr

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    """Defaults are the full-scale regime; see :func:`training_preset` for desk scale."""

    epochs: int = 200
    lr: float = 1e-3
    batch: int = 2
    examples_per_epoch: int = 25_000
    cascades: int = 3
    channels: int = 16
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_min: float = 0.0

    def __post_init__(self):
        for name in ("epochs", "batch", "examples_per_epoch", "cascades", "channels"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.lr <= 0:
            raise InvalidArgumentError("lr must be positive")

    def to_dict(self):
        return asdict(self)


def training_preset(name: str, **overrides) -> TrainingConfig:
    cfg = dict(load_preset(name)["training"])
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return TrainingConfig(**cfg)


def _emulate(slices, spec, seeds, indices):
    return [make_training_example(slices[i], spec, seed=int(s)) for i, s in zip(indices, seeds)]


def train_model(train_slices, val_slices, spec: ProtocolSpec, cfg: TrainingConfig,
                ssim_cfg: SSIMConfig = SSIMConfig(), callback=None):
    """Train a cascade on emulated pairs drawn from ``train_slices``.

    Returns ``(model, log)`` where ``model`` holds the weights of the epoch
    with the lowest validation loss and ``log`` has one record per epoch.
    """
    train_slices = list(train_slices)
    val_slices = list(val_slices)
    if not train_slices or not val_slices:
        raise InvalidArgumentError("training and validation sets must be non-empty")
    if {id(s) for s in train_slices} & {id(s) for s in val_slices}:
        raise InvalidArgumentError("training and validation sets must be disjoint")

    rng = np.random.default_rng(cfg.seed)
    model = CascadeModel.init(cfg.cascades, cfg.channels, seed=int(rng.integers(2**31)))
    val_seeds = rng.integers(0, 2**31 - 1, size=len(val_slices))
    val = [prepare_example(p, example_id=f"val{i}")
           for i, p in enumerate(_emulate(val_slices, spec, val_seeds, range(len(val_slices))))]

    steps_per_epoch = math.ceil(cfg.examples_per_epoch / cfg.batch)
    total_steps = cfg.epochs * steps_per_epoch
    state = AdamState()
    step = 0
    history = []
    best = (math.inf, None, -1)
    for epoch in range(cfg.epochs):
        reps = math.ceil(cfg.examples_per_epoch / len(train_slices))
        order = np.concatenate([rng.permutation(len(train_slices)) for _ in range(reps)])
        order = order[:cfg.examples_per_epoch]
        seeds = rng.integers(0, 2**31 - 1, size=len(order))
        losses = []
        for start in range(0, len(order), cfg.batch):
            idx = order[start:start + cfg.batch]
            pairs = _emulate(train_slices, spec, seeds[start:start + cfg.batch], idx)
            batch = [prepare_example(p, example_id=f"epoch{epoch}/train{int(i)}")
                     for p, i in zip(pairs, idx)]
            lr = cosine_lr(step, total_steps, cfg.lr, cfg.lr_min)
            try:
                loss, grads = compute_gradients(model, batch, ssim_cfg)
            except NumericalFailureError as exc:
                exc.checkpoint = model.copy()
                raise
            params, state = adam_step(model.params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            if not all(np.all(np.isfinite(p)) for p in params.values()):
                raise NumericalFailureError(f"non-finite parameters after step {step}",
                                            checkpoint=model.copy())
            model = model.with_params(params)
            losses.append(loss)
            step += 1
        val_loss = float(np.mean([example_loss(model, ex, ssim_cfg, with_grad=False)[0] for ex in val]))
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val_loss,
                  "lr": cosine_lr(step, total_steps, cfg.lr, cfg.lr_min), "steps": step}
        history.append(record)
        log.info("epoch %d train %.5f val %.5f", epoch, record["train_loss"], val_loss)
        if callback is not None:
            callback(record)
        if val_loss < best[0]:
            best = (val_loss, model.copy(), epoch)
    best_model = best[1]
    return best_model, {"epochs": history, "best_epoch": best[2], "config": cfg.to_dict()}
