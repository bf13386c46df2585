"""Model measurements: accuracy, confidence, gradient sensitivity, and
robustness as mean minimal perturbation under a configured attack."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attacks import (AttackConfig, AttackResult, attack_l0, attack_l2,
                      attack_linf, model_logits)
from .datasets import LabeledDataset
from .network import TrainedModel, jacobian_probs, predict


class EvaluationError(ValueError):
    pass


def accuracy(model: TrainedModel, data: LabeledDataset) -> float:
    """Fraction of test samples whose argmax prediction (at T=1) is correct."""
    if data.n == 0:
        raise EvaluationError("empty dataset")
    if data.split != "test":
        raise EvaluationError("accuracy is defined on the test split")
    preds = predict(model, data.images, 1.0).argmax(axis=1)
    return float((preds == data.class_indices).mean())


def confidence(model: TrainedModel, data: LabeledDataset) -> float:
    """Mean winning probability at T=1, counting misclassified samples as 0."""
    if data.n == 0:
        raise EvaluationError("empty dataset")
    probs = predict(model, data.images, 1.0)
    preds = probs.argmax(axis=1)
    winning = probs.max(axis=1)
    return float(np.where(preds == data.class_indices, winning, 0.0).mean())


@dataclass
class SensitivityProfile:
    model_id: str
    temperature: float
    threshold: float
    per_sample_mean_abs: np.ndarray = field(repr=False)   # (S,)
    per_output_max: np.ndarray = field(repr=False)        # (N,), auxiliary

    @property
    def near_zero_proportion(self) -> float:
        if len(self.per_sample_mean_abs) == 0:
            return 0.0
        return float((self.per_sample_mean_abs < self.threshold).mean())


def sensitivity_profile(model: TrainedModel, data: LabeledDataset,
                        temperature: float, threshold: float = 1e-10,
                        sample_count: int | None = None,
                        batch_size: int = 100) -> SensitivityProfile:
    """Mean |d output_i / d input_j| per sample, over all outputs and inputs,
    plus the fraction of samples whose mean falls below ``threshold``.

    Evaluated at the model's own training temperature; anything else is a
    different measurement and is rejected.
    """
    if temperature <= 0:
        raise EvaluationError(f"temperature must be positive, got {temperature}")
    if temperature != model.temperature:
        raise EvaluationError(
            f"sensitivity is measured at the training temperature "
            f"{model.temperature}, got {temperature}")
    n = data.n if sample_count is None else min(sample_count, data.n)
    if n == 0:
        raise EvaluationError("empty dataset")
    means = np.empty(n, dtype=np.float64)
    per_output_max = np.zeros(model.n_classes, dtype=np.float64)
    for start in range(0, n, batch_size):
        batch = data.images[start:min(start + batch_size, n)]
        jac = np.abs(jacobian_probs(model, batch, temperature).astype(np.float64))
        means[start:start + len(batch)] = jac.mean(axis=tuple(range(1, jac.ndim)))
        axes = (0,) + tuple(range(2, jac.ndim))
        np.maximum(per_output_max, jac.max(axis=axes), out=per_output_max)
    return SensitivityProfile(model.model_id, temperature, threshold, means,
                              per_output_max)


@dataclass
class RobustnessReport:
    model_id: str
    temperature: float
    norm: str
    mode: str
    sample_indices: list[int]
    per_sample_sizes: list[float | None]   # None where the attack failed
    success_rate: float
    failed_count: int
    mean_pert: float | None                # None when nothing succeeded
    max_pert: float | None
    results: list[AttackResult] = field(repr=False, default_factory=list)

    @property
    def mean_undefined(self) -> bool:
        return self.mean_pert is None


_ATTACKS = {"l2": attack_l2, "l0": attack_l0, "linf": attack_linf}


def _norm_size(res: AttackResult) -> float:
    return {"l2": res.l2, "l0": res.l0, "linf": res.linf}[res.norm]


def _attack_job(args):
    model, x, label, cfg, index = args
    res = _ATTACKS[cfg.norm](model, x, label, cfg)
    res.sample_index = index
    return res


def robustness(model: TrainedModel, data: LabeledDataset, cfg: AttackConfig,
               sample_count: int, workers: int = 1) -> RobustnessReport:
    """Attack the first ``sample_count`` correctly classified test samples and
    summarize the minimal perturbations in the attack's own norm.

    Failed attacks are excluded from the mean/max and surfaced through the
    success rate and failure count instead.
    """
    if cfg.mode != "untargeted":
        raise EvaluationError("robustness uses untargeted attacks: any "
                              "misclassification counts")
    if sample_count > data.n:
        raise EvaluationError(f"asked for {sample_count} samples, have {data.n}")
    # argmax of logits == argmax of the T=1 prediction; works for any
    # attackable model, trained CNN or toy
    preds = np.concatenate([
        model_logits(model, data.images[i:i + 256]).argmax(axis=1)
        for i in range(0, data.n, 256)])
    correct = np.flatnonzero(preds == data.class_indices)[:sample_count]
    jobs = [(model, data.images[i], int(data.class_indices[i]), cfg, int(i))
            for i in correct]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_attack_job, jobs, chunksize=4))
    else:
        results = [_attack_job(j) for j in jobs]
    results.sort(key=lambda r: r.sample_index)
    sizes = [float(_norm_size(r)) if r.success else None for r in results]
    ok = [s for s in sizes if s is not None]
    return RobustnessReport(
        model_id=getattr(model, "model_id", type(model).__name__),
        temperature=getattr(model, "temperature", 1.0),
        norm=cfg.norm,
        mode=cfg.mode,
        sample_indices=[r.sample_index for r in results],
        per_sample_sizes=sizes,
        success_rate=(len(ok) / len(results)) if results else 0.0,
        failed_count=len(results) - len(ok),
        mean_pert=float(np.mean(ok)) if ok else None,
        max_pert=float(np.max(ok)) if ok else None,
        results=results,
    )


@dataclass
class ModelEvaluation:
    model_id: str
    provenance: str
    chain_step: int
    temperature: float
    accuracy: float
    confidence: float


@dataclass
class EvaluationReport:
    models: list[ModelEvaluation] = field(default_factory=list)
    sensitivity: list[SensitivityProfile] = field(default_factory=list)
    robustness: list[RobustnessReport] = field(default_factory=list)

    def model_row(self, model_id: str) -> ModelEvaluation:
        for row in self.models:
            if row.model_id == model_id:
                return row
        raise KeyError(model_id)


# ---------------------------------------------------------------------------
# CSV emission


def write_accuracy_csv(path, report: EvaluationReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model_id", "provenance", "T", "accuracy", "confidence"])
        for row in report.models:
            w.writerow([row.model_id, row.provenance, f"{row.temperature:g}",
                        f"{row.accuracy:.6f}", f"{row.confidence:.6f}"])


def write_sensitivity_csv(path, report: EvaluationReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model_id", "T", "threshold", "near_zero_proportion"])
        for p in report.sensitivity:
            w.writerow([p.model_id, f"{p.temperature:g}", f"{p.threshold:g}",
                        f"{p.near_zero_proportion:.6f}"])


def write_robustness_csv(path, report: EvaluationReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model_id", "T", "norm", "mode", "n_samples",
                    "success_rate", "mean_pert", "max_pert"])
        for r in report.robustness:
            w.writerow([r.model_id, f"{r.temperature:g}", r.norm, r.mode,
                        len(r.sample_indices), f"{r.success_rate:.4f}",
                        "" if r.mean_pert is None else f"{r.mean_pert:.8g}",
                        "" if r.max_pert is None else f"{r.max_pert:.8g}"])
