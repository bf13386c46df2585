"""Training on hard labels, soft-label generation, and multi-step chains.

A chain trains its first model on one-hot labels, then repeatedly re-labels
the training images with the previous model's temperature-softened outputs
and trains the next model on those. Every step shares the architecture and
the temperature; only the seed differs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .datasets import LabeledDataset
from .network import (ArchitectureSpec, TrainedModel, build_model,
                      chain_provenance, predict, save_checkpoint)
from .optim import SgdMomentum
from .tensor import Tape, Tensor

SOFT_LABEL_MAGIC = b"DSLB"
SOFT_LABEL_VERSION = 1


class TrainingError(ValueError):
    """Dataset or hyperparameter contract violated."""


@dataclass(frozen=True)
class TrainingHyperparameters:
    batch_size: int = 128
    learning_rate: float = 0.01
    decay: float = 1e-6
    momentum: float = 0.9
    epochs: int = 10
    temperature: float = 1.0
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size <= 0 or self.learning_rate <= 0 or self.epochs < 0:
            raise TrainingError(f"non-positive hyperparameter in {self}")
        if self.temperature < 1.0:
            raise TrainingError(f"training temperature must be >= 1, got {self.temperature}")
        if not 0.0 <= self.dropout < 1.0:
            raise TrainingError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class DistillationPlan:
    """Chain description: k models, shared architecture/temperature, per-step seeds."""

    spec: ArchitectureSpec
    chain_length: int
    hp: TrainingHyperparameters
    step_seeds: tuple[int, ...] = ()

    def __post_init__(self):
        if not 1 <= self.chain_length <= 7:
            raise TrainingError(f"chain length must be in [1, 7], got {self.chain_length}")
        if not self.step_seeds:
            object.__setattr__(self, "step_seeds",
                               tuple(self.hp.seed + i for i in range(self.chain_length)))
        if len(self.step_seeds) != self.chain_length:
            raise TrainingError(
                f"{len(self.step_seeds)} step seeds for chain of {self.chain_length}")


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    # counter-based stream: one independent generator per (run seed, epoch)
    return np.random.Generator(
        np.random.Philox(key=np.array([seed, epoch], dtype=np.uint64)))


def _train(spec: ArchitectureSpec, data: LabeledDataset,
           hp: TrainingHyperparameters, provenance: str) -> TrainedModel:
    if data.n == 0:
        raise TrainingError("empty training dataset")
    if data.split != "train":
        raise TrainingError(f"refusing to train on the {data.split!r} split")
    model = build_model(spec, hp.seed)
    model.temperature = hp.temperature
    model.provenance = provenance
    opt = SgdMomentum(model.params, hp.learning_rate, hp.momentum, hp.decay)
    images = data.images.astype(np.float32, copy=False)
    labels = data.labels.astype(np.float32, copy=False)
    for epoch in range(hp.epochs):
        rng = _epoch_rng(hp.seed, epoch)
        order = rng.permutation(data.n)
        for start in range(0, data.n, hp.batch_size):
            idx = order[start:start + hp.batch_size]
            tape = Tape()
            x = Tensor(images[idx])
            z = model.build_logits(tape, x, train=True, dropout_rate=hp.dropout,
                                   rng=rng)
            probs = T.softmax_t(tape, z, hp.temperature)
            losses = T.cross_entropy_soft(tape, probs, labels[idx])
            loss = T.mean_all(tape, losses)
            T.backward(tape, loss)
            opt.step()
    return model


def train_hard(spec: ArchitectureSpec, data: LabeledDataset,
               hp: TrainingHyperparameters,
               provenance: str = "teacher") -> TrainedModel:
    """Fit on exact one-hot labels (empirical-risk objective on the true class)."""
    if data.label_kind != "hard":
        raise TrainingError("train_hard requires hard (one-hot) labels")
    return _train(spec, data, hp, provenance)


def train_soft(spec: ArchitectureSpec, data: LabeledDataset,
               hp: TrainingHyperparameters,
               provenance: str = "student") -> TrainedModel:
    """Fit on probability-vector labels produced by a previous model."""
    if data.label_kind != "soft":
        raise TrainingError("train_soft requires soft labels")
    return _train(spec, data, hp, provenance)


def batch_loss(model: TrainedModel, images: np.ndarray, labels: np.ndarray,
               temperature: float) -> float:
    """Mean soft cross-entropy of the model on one batch (no dropout)."""
    tape = Tape()
    z = model.build_logits(tape, Tensor(images.astype(np.float32, copy=False)))
    probs = T.softmax_t(tape, z, temperature)
    losses = T.cross_entropy_soft(tape, probs, labels.astype(np.float32, copy=False))
    return float(T.mean_all(tape, losses).data)


def generate_soft_labels(model: TrainedModel, data: LabeledDataset,
                         temperature: float) -> LabeledDataset:
    """Re-label ``data`` with the model's probability outputs at its own
    training temperature. A mismatching temperature is rejected rather than
    silently softening with the wrong divisor."""
    if temperature != model.temperature:
        raise TrainingError(
            f"soft labels must use the model's training temperature "
            f"{model.temperature}, got {temperature}")
    probs = predict(model, data.images, temperature).astype(np.float32)
    return LabeledDataset(data.images, probs, "soft", data.split)


def run_distillation_chain(plan: DistillationPlan, data: LabeledDataset,
                           out_dir=None) -> list[TrainedModel]:
    """Train the full chain; persist checkpoints and soft-label files when
    ``out_dir`` is given."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    models: list[TrainedModel] = []
    current = data
    for step in range(1, plan.chain_length + 1):
        hp = replace(plan.hp, seed=plan.step_seeds[step - 1])
        provenance = chain_provenance(step, plan.chain_length)
        if step == 1:
            model = train_hard(plan.spec, current, hp, provenance)
        else:
            model = train_soft(plan.spec, current, hp, provenance)
        models.append(model)
        if out is not None:
            save_checkpoint(model, out / f"step{step}_{model.model_id}.ckpt")
        if step < plan.chain_length:
            current = generate_soft_labels(model, data, plan.hp.temperature)
            if out is not None:
                save_soft_labels(out / f"step{step}_soft_labels.dslb", current)
    return models


# ---------------------------------------------------------------------------
# soft-label dataset file: probabilities only, images referenced by index


def save_soft_labels(path, ds: LabeledDataset,
                     indices: np.ndarray | None = None) -> None:
    if ds.label_kind != "soft":
        raise TrainingError("only soft-label datasets are serialized in this format")
    idx = np.arange(ds.n, dtype=np.uint32) if indices is None \
        else np.asarray(indices, dtype=np.uint32)
    n_classes = ds.n_classes
    with open(path, "wb") as f:
        f.write(SOFT_LABEL_MAGIC)
        f.write(struct.pack("<III", SOFT_LABEL_VERSION, ds.n, n_classes))
        for i in range(ds.n):
            f.write(struct.pack("<I", int(idx[i])))
            f.write(np.ascontiguousarray(ds.labels[i], dtype="<f4").tobytes())


def load_soft_labels(path, image_source: LabeledDataset) -> LabeledDataset:
    """Rehydrate a soft-label file against the dataset its indices refer to."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise TrainingError("soft-label file shorter than its header")
    if raw[:4] != SOFT_LABEL_MAGIC:
        raise TrainingError(f"bad soft-label magic {raw[:4]!r}")
    version, count, n_classes = struct.unpack("<III", raw[4:16])
    if version != SOFT_LABEL_VERSION:
        raise TrainingError(f"unsupported soft-label version {version}")
    record = 4 + 4 * n_classes
    if len(raw) != 16 + count * record:
        raise TrainingError("soft-label file truncated")
    body = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, record)
    indices = body[:, :4].copy().view("<u4").ravel()
    labels = body[:, 4:].copy().view("<f4").reshape(count, n_classes)
    return LabeledDataset(image_source.images[indices], labels.astype(np.float32),
                          "soft", image_source.split)
