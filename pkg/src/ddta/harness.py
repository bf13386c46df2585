"""Experiment orchestration: config parsing, chain-train/attack/evaluate
pipelines, plot-data CSVs, and a hashed artifact manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackConfig, write_attack_csv
from .datasets import LabeledDataset, load_cifar10, load_mnist
from .distillation import DistillationPlan, TrainingHyperparameters
from .distillation import run_distillation_chain
from .evaluation import (EvaluationReport, ModelEvaluation, RobustnessReport,
                         SensitivityProfile, accuracy, confidence, robustness,
                         sensitivity_profile, write_accuracy_csv,
                         write_robustness_csv, write_sensitivity_csv)
from .network import chain_provenance

DEFAULT_TEMPERATURES = (1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 40.0)

# doubling needs room for l2; for l0/linf a low ceiling keeps the
# elimination/cap loops bounded
DEFAULT_C_THRESHOLDS = {"l2": 1e4, "l0": 1.0, "linf": 1.0}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "mnist"
    data_dir: str = ""
    preset: str = "desk"
    temperatures: tuple[float, ...] = DEFAULT_TEMPERATURES
    chain_length: int = 3
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 0.01
    momentum: float = 0.9
    decay: float = 1e-6
    dropout: float = 0.5
    seed: int = 0
    train_subset: int = 10000      # 0 = full split
    test_subset: int = 2000
    attack_norms: tuple[str, ...] = ("l2",)
    robustness_samples: int = 100
    attack_max_iterations: int = 1000
    attack_learning_rate: float = 0.01
    attack_initial_c: float = 1e-3
    attack_c_threshold: float = 0.0   # 0 = per-norm default
    attack_seed: int = 0
    kappa: float = 0.0
    sensitivity_samples: int = 500
    sensitivity_threshold: float = 1e-10
    workers: int = 1
    out_dir: str = "run"

    def __post_init__(self):
        if self.dataset not in ("mnist", "cifar10"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.preset not in ("paper", "desk"):
            raise ConfigError(f"unknown preset {self.preset!r}")
        if not self.temperatures or any(t < 1 for t in self.temperatures):
            raise ConfigError("temperature grid must be non-empty with all T >= 1")
        if not 1 <= self.chain_length <= 7:
            raise ConfigError(f"chain length must be in [1, 7], got {self.chain_length}")
        for norm in self.attack_norms:
            if norm not in ("l2", "l0", "linf"):
                raise ConfigError(f"unknown attack norm {norm!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def attack_config(self, norm: str) -> AttackConfig:
        threshold = self.attack_c_threshold or DEFAULT_C_THRESHOLDS[norm]
        return AttackConfig(
            norm=norm, mode="untargeted", kappa=self.kappa,
            learning_rate=self.attack_learning_rate,
            max_iterations=self.attack_max_iterations,
            initial_c=self.attack_initial_c, c_threshold=threshold,
            seed=self.attack_seed)

    def hyperparameters(self, temperature: float) -> TrainingHyperparameters:
        return TrainingHyperparameters(
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            decay=self.decay, momentum=self.momentum, epochs=self.epochs,
            temperature=temperature, dropout=self.dropout, seed=self.seed)


_LIST_KEYS = {"temperatures": float, "attack_norms": str}


def parse_config(text: str) -> ExperimentConfig:
    """Flat ``key = value`` lines; '#' starts a comment; lists are comma-separated."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in ExperimentConfig.__dataclass_fields__:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in _LIST_KEYS:
            cast = _LIST_KEYS[key]
            values[key] = tuple(cast(v.strip()) for v in value.split(",") if v.strip())
        else:
            default = getattr(ExperimentConfig, key)
            if isinstance(default, bool):
                values[key] = value.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                values[key] = int(value)
            elif isinstance(default, float):
                values[key] = float(value)
            else:
                values[key] = value
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for key, value in asdict(cfg).items():
        if isinstance(value, tuple):
            value = ",".join(f"{v:g}" if isinstance(v, float) else str(v)
                             for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# manifest


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    artifacts: dict = field(default_factory=dict)   # relative path -> sha256
    notes: list = field(default_factory=list)
    status: str = "running"
    started: str = ""
    finished: str = ""
    versions: dict = field(default_factory=dict)

    def record(self, out_dir: Path, path: Path) -> None:
        self.artifacts[str(path.relative_to(out_dir))] = file_sha256(path)

    def write(self, out_dir: Path) -> Path:
        target = out_dir / "manifest.json"
        target.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        return target


def load_manifest(run_dir) -> RunManifest:
    data = json.loads((Path(run_dir) / "manifest.json").read_text())
    return RunManifest(**data)


# ---------------------------------------------------------------------------
# experiment pipeline


def load_dataset(cfg: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    loader = load_mnist if cfg.dataset == "mnist" else load_cifar10
    train, test = loader(cfg.data_dir)
    if cfg.train_subset:
        train = train.subset(cfg.train_subset)
    if cfg.test_subset:
        test = test.subset(cfg.test_subset)
    return train, test


def step_seed(base_seed: int, temperature_index: int, step: int) -> int:
    """Deterministic per-(T, chain step) training seed."""
    return base_seed * 100003 + temperature_index * 101 + (step - 1)


def run_experiment(cfg: ExperimentConfig, log=print) -> RunManifest:
    """Train a chain per temperature, evaluate every model, attack for
    robustness, and write checkpoints + CSVs + manifest under cfg.out_dir.

    On failure the manifest still records everything completed so far.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        config=asdict(cfg),
        started=_utc_now(),
        versions={"ddta": __version__, "numpy": np.__version__},
    )
    report = EvaluationReport()
    chain_steps: dict[str, int] = {}
    try:
        train, test = load_dataset(cfg)
        config_path = out / "config.txt"
        config_path.write_text(config_to_text(cfg))
        manifest.record(out, config_path)
        for t_idx, temperature in enumerate(cfg.temperatures):
            hp = cfg.hyperparameters(temperature)
            seeds = tuple(step_seed(cfg.seed, t_idx, s)
                          for s in range(1, cfg.chain_length + 1))
            plan = DistillationPlan(_arch_spec(cfg), cfg.chain_length, hp, seeds)
            chain_dir = out / f"T{temperature:g}"
            log(f"[T={temperature:g}] training chain of {cfg.chain_length}")
            models = run_distillation_chain(plan, train, out_dir=chain_dir)
            for artifact in sorted(chain_dir.iterdir()):
                manifest.record(out, artifact)
            for step, model in enumerate(models, start=1):
                chain_steps[model.model_id] = step
                row = ModelEvaluation(
                    model_id=model.model_id,
                    provenance=model.provenance,
                    chain_step=step,
                    temperature=temperature,
                    accuracy=accuracy(model, test),
                    confidence=confidence(model, test),
                )
                report.models.append(row)
                log(f"  {model.model_id}: accuracy={row.accuracy:.4f} "
                    f"confidence={row.confidence:.4f}")
                if cfg.sensitivity_samples > 0:
                    report.sensitivity.append(sensitivity_profile(
                        model, test, temperature,
                        threshold=cfg.sensitivity_threshold,
                        sample_count=cfg.sensitivity_samples))
                for norm in cfg.attack_norms:
                    if cfg.robustness_samples <= 0:
                        continue
                    rob = robustness(model, test, cfg.attack_config(norm),
                                     cfg.robustness_samples, workers=cfg.workers)
                    report.robustness.append(rob)
                    log(f"  {model.model_id} {norm}: success={rob.success_rate:.2f} "
                        f"mean={rob.mean_pert}")
                    attack_dir = out / "attacks"
                    attack_dir.mkdir(exist_ok=True)
                    csv_path = attack_dir / f"{model.model_id}_{norm}.csv"
                    write_attack_csv(csv_path, rob.results)
                    manifest.record(out, csv_path)
        _write_reports(out, report, chain_steps, manifest)
        manifest.status = "complete"
    except Exception as exc:
        manifest.status = "aborted"
        manifest.notes.append(f"aborted: {type(exc).__name__}: {exc}")
        manifest.finished = _utc_now()
        manifest.write(out)
        raise
    manifest.finished = _utc_now()
    manifest.write(out)
    return manifest


def _arch_spec(cfg: ExperimentConfig):
    from .network import ArchitectureSpec
    return ArchitectureSpec.for_dataset(cfg.dataset, cfg.preset)


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _write_reports(out: Path, report: EvaluationReport,
                   chain_steps: dict[str, int], manifest: RunManifest) -> None:
    for name, writer in (("accuracy_confidence.csv", write_accuracy_csv),
                         ("sensitivity.csv", write_sensitivity_csv),
                         ("robustness.csv", write_robustness_csv)):
        path = out / name
        writer(path, report)
        manifest.record(out, path)
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report_to_dict(report), indent=2))
    manifest.record(out, report_path)
    for path in emit_plot_data(report, out / "plots", notes=manifest.notes):
        manifest.record(out, path)


# ---------------------------------------------------------------------------
# report serialization (for the `report` command and plot re-emission)


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "models": [asdict(m) for m in report.models],
        "sensitivity": [{
            "model_id": p.model_id,
            "temperature": p.temperature,
            "threshold": p.threshold,
            "near_zero_proportion": p.near_zero_proportion,
            "per_sample_mean_abs": [float(v) for v in p.per_sample_mean_abs],
            "per_output_max": [float(v) for v in p.per_output_max],
        } for p in report.sensitivity],
        "robustness": [{
            "model_id": r.model_id,
            "temperature": r.temperature,
            "norm": r.norm,
            "mode": r.mode,
            "sample_indices": r.sample_indices,
            "per_sample_sizes": r.per_sample_sizes,
            "success_rate": r.success_rate,
            "failed_count": r.failed_count,
            "mean_pert": r.mean_pert,
            "max_pert": r.max_pert,
        } for r in report.robustness],
    }


def report_from_dict(data: dict) -> EvaluationReport:
    report = EvaluationReport()
    report.models = [ModelEvaluation(**m) for m in data["models"]]
    for p in data["sensitivity"]:
        report.sensitivity.append(SensitivityProfile(
            model_id=p["model_id"], temperature=p["temperature"],
            threshold=p["threshold"],
            per_sample_mean_abs=np.asarray(p["per_sample_mean_abs"]),
            per_output_max=np.asarray(p["per_output_max"])))
    for r in data["robustness"]:
        report.robustness.append(RobustnessReport(
            model_id=r["model_id"], temperature=r["temperature"],
            norm=r["norm"], mode=r["mode"],
            sample_indices=r["sample_indices"],
            per_sample_sizes=r["per_sample_sizes"],
            success_rate=r["success_rate"], failed_count=r["failed_count"],
            mean_pert=r["mean_pert"], max_pert=r["max_pert"]))
    return report


# ---------------------------------------------------------------------------
# figure-family plot data


def emit_plot_data(report: EvaluationReport, plot_dir,
                   notes: list | None = None) -> list[Path]:
    """One CSV per figure family; absent families are noted, not written."""
    if not report.models:
        raise ValueError("nothing to plot: no evaluated models")
    plot_dir = Path(plot_dir)
    plot_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    steps = {m.model_id: m.chain_step for m in report.models}
    chain_length = max(steps.values())

    path = plot_dir / "fig2_accuracy_vs_temperature.csv"
    _write_rows(path, ["T", "provenance", "accuracy"],
                [[f"{m.temperature:g}", m.provenance, f"{m.accuracy:.6f}"]
                 for m in report.models])
    written.append(path)

    if report.sensitivity:
        prov = {m.model_id: m.provenance for m in report.models}
        path = plot_dir / "fig3_near_zero_gradients_vs_temperature.csv"
        _write_rows(path, ["T", "provenance", "near_zero_proportion"],
                    [[f"{p.temperature:g}", prov.get(p.model_id, "?"),
                      f"{p.near_zero_proportion:.6f}"]
                     for p in report.sensitivity])
        written.append(path)
    elif notes is not None:
        notes.append("fig3 file absent: no sensitivity profiles")

    prov = {m.model_id: m.provenance for m in report.models}
    norms = sorted({r.norm for r in report.robustness})
    successful = [r for r in report.robustness if r.mean_pert is not None]
    if successful:
        for norm in norms:
            rows = [[f"{r.temperature:g}", prov.get(r.model_id, "?"),
                     f"{r.mean_pert:.8g}", f"{r.max_pert:.8g}"]
                    for r in successful if r.norm == norm]
            if not rows:
                continue
            path = plot_dir / f"fig4_perturbation_vs_temperature_{norm}.csv"
            _write_rows(path, ["T", "provenance", "mean_pert", "max_pert"], rows)
            written.append(path)
    elif notes is not None:
        notes.append("fig4 files absent: no successful robustness reports")

    path = plot_dir / "fig5_confidence_vs_temperature.csv"
    _write_rows(path, ["T", "provenance", "confidence"],
                [[f"{m.temperature:g}", m.provenance, f"{m.confidence:.6f}"]
                 for m in report.models])
    written.append(path)

    path = plot_dir / "fig6_accuracy_vs_chain_step.csv"
    _write_rows(path, ["chain_step", "T", "accuracy"],
                [[steps[m.model_id], f"{m.temperature:g}", f"{m.accuracy:.6f}"]
                 for m in report.models])
    written.append(path)

    if successful:
        for norm in norms:
            rows = []
            by_step: dict[int, list[float]] = {}
            for r in successful:
                if r.norm != norm:
                    continue
                step = steps.get(r.model_id, 0)
                rows.append([step, f"{r.temperature:g}", f"{r.mean_pert:.8g}"])
                by_step.setdefault(step, []).append(r.mean_pert)
            for step in range(1, chain_length + 1):
                vals = by_step.get(step, [])
                avg = f"{np.mean(vals):.8g}" if vals else ""
                rows.append([step, "avg", avg])
            path = plot_dir / f"fig7_chain_robustness_{norm}.csv"
            _write_rows(path, ["chain_step", "temperature", "mean_pert"], rows)
            written.append(path)
    elif notes is not None:
        notes.append("fig7 files absent: no successful robustness reports")
    return written


def _write_rows(path: Path, header: list[str], rows: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
