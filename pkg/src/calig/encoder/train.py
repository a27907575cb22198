"""Seeded Adam training of the encoder on rationale-annotated examples."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from calig import tensor as T
from calig.data import RationaleExample, iter_batches, pad_batch
from calig.encoder.model import (
    EncoderConfig,
    EncoderModel,
    ParamView,
    batch_logits,
    classify,
    embed,
    key_mask_for,
    run_block,
)

logger = logging.getLogger(__name__)


class TrainingDivergence(ArithmeticError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class TrainHyperparams:
    epochs: int = 6
    batch_size: int = 32
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: EncoderModel
    loss_history: list[float] = field(default_factory=list)
    train_accuracy: float = float("nan")
    heldout_accuracy: Optional[float] = None


def accuracy(model: EncoderModel, examples: Sequence[RationaleExample], batch_size: int = 256) -> float:
    if not examples:
        return float("nan")
    correct = 0
    for chunk in iter_batches(list(examples), batch_size):
        logits = batch_logits(model, pad_batch(chunk, model.config.pad_token_id))
        correct += int((logits.argmax(axis=1) == np.array([ex.label for ex in chunk])).sum())
    return correct / len(examples)


def _loss_and_grads(model: EncoderModel, ids: np.ndarray, labels: np.ndarray):
    mask = key_mask_for(model.config, ids)
    with T.Tape() as tape:
        pv = ParamView(model, requires_grad=True)
        x = embed(model, ids, pv)
        for b in range(model.config.num_layers):
            x, _, _ = run_block(model, b, x, mask, pv)
        loss = T.cross_entropy(classify(model, x, pv), labels)
    tape.backward(loss)
    grads = {}
    for name, t in pv.tensors.items():
        grads[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
    return float(loss.data), grads


def train_synthetic(
    config: EncoderConfig,
    train: Sequence[RationaleExample],
    hyperparams: TrainHyperparams = TrainHyperparams(),
    heldout: Optional[Sequence[RationaleExample]] = None,
) -> TrainResult:
    """Train a freshly initialized model; fully determined by ``hyperparams.seed``."""
    for ex in train:
        if not 0 <= ex.label < config.num_classes:
            raise ValueError(f"example {ex.id}: label {ex.label} outside [0, {config.num_classes})")
    hp = hyperparams
    model = EncoderModel.initialize(config, seed=hp.seed)
    rng = np.random.default_rng(hp.seed + 1)
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(v) for k, v in model.params.items()}
    history, step = [], 0
    items = list(train)
    for epoch in range(hp.epochs):
        order = rng.permutation(len(items))
        for idx in iter_batches(order, hp.batch_size):
            batch = [items[i] for i in idx]
            ids = pad_batch(batch, config.pad_token_id)
            labels = np.array([ex.label for ex in batch])
            loss, grads = _loss_and_grads(model, ids, labels)
            step += 1
            if not np.isfinite(loss):
                raise TrainingDivergence(step, loss)
            history.append(loss)
            c1 = 1.0 - hp.beta1**step
            c2 = 1.0 - hp.beta2**step
            for name, g in grads.items():
                m[name] = hp.beta1 * m[name] + (1.0 - hp.beta1) * g
                v[name] = hp.beta2 * v[name] + (1.0 - hp.beta2) * g * g
                model.params[name] = model.params[name] - hp.learning_rate * (m[name] / c1) / (
                    np.sqrt(v[name] / c2) + hp.adam_eps
                )
        logger.info("epoch %d: mean loss %.4f", epoch, np.mean(history[-len(items) // hp.batch_size :]))
    result = TrainResult(model=model, loss_history=history, train_accuracy=accuracy(model, items))
    if heldout is not None:
        result.heldout_accuracy = accuracy(model, heldout)
    return result
