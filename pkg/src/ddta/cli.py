"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error (missing/corrupt files),
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, attack_l0, attack_l2, attack_linf, write_attack_csv
from .datasets import (DataError, LabeledDataset, load_cifar10, load_mnist,
                       synthetic_digits, write_mnist_dir)
from .distillation import (DistillationPlan, TrainingHyperparameters,
                           run_distillation_chain, train_hard)
from .evaluation import (EvaluationReport, ModelEvaluation, accuracy,
                         confidence, sensitivity_profile, write_accuracy_csv,
                         write_sensitivity_csv)
from .harness import (ConfigError, emit_plot_data, load_config, load_manifest,
                      report_from_dict, run_experiment)
from .network import (ArchitectureSpec, CheckpointError, load_checkpoint,
                      save_checkpoint)

DATA_DIR_ENV = "DDTA_DATA_DIR"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _data_dir(args) -> str:
    path = getattr(args, "data_dir", None) or os.environ.get(DATA_DIR_ENV)
    if not path:
        raise UsageError(f"--data-dir not given and {DATA_DIR_ENV} is unset")
    return path


def _load(dataset: str, data_dir: str) -> tuple[LabeledDataset, LabeledDataset]:
    return (load_mnist if dataset == "mnist" else load_cifar10)(data_dir)


def _dataset_for_spec(spec: ArchitectureSpec) -> str:
    return "cifar10" if spec.input_shape == (32, 32, 3) else "mnist"


def cmd_train(args) -> int:
    train, test = _load(args.dataset, _data_dir(args))
    if args.train_subset:
        train = train.subset(args.train_subset)
    spec = ArchitectureSpec.for_dataset(args.dataset, args.preset)
    hp = TrainingHyperparameters(epochs=args.epochs, temperature=args.temperature,
                                 seed=args.seed)
    model = train_hard(spec, train, hp)
    save_checkpoint(model, args.out)
    acc = accuracy(model, test if not args.test_subset else test.subset(args.test_subset))
    print(f"saved {args.out}; test accuracy {acc:.4f}")
    return EXIT_OK


def cmd_distill(args) -> int:
    teacher = load_checkpoint(args.teacher)
    dataset = _dataset_for_spec(teacher.spec)
    train, _ = _load(dataset, _data_dir(args))
    if args.train_subset:
        train = train.subset(args.train_subset)
    hp = TrainingHyperparameters(epochs=args.epochs,
                                 temperature=teacher.temperature,
                                 seed=teacher.seed)
    seeds = tuple(teacher.seed + i for i in range(args.steps))
    plan = DistillationPlan(teacher.spec, args.steps, hp, seeds)
    models = run_distillation_chain(plan, train, out_dir=args.out_dir)
    for m in models:
        print(f"{m.model_id} -> {args.out_dir}")
    return EXIT_OK


def cmd_attack(args) -> int:
    model = load_checkpoint(args.model)
    dataset = _dataset_for_spec(model.spec)
    _, test = _load(dataset, _data_dir(args))
    cfg = AttackConfig(norm=args.norm, mode=args.mode, seed=args.seed,
                       max_iterations=args.max_iterations)
    attack = {"l2": attack_l2, "l0": attack_l0, "linf": attack_linf}[args.norm]
    rng = np.random.default_rng(args.seed)
    from .network import predict
    preds = predict(model, test.images, 1.0).argmax(axis=1)
    chosen = np.flatnonzero(preds == test.class_indices)[:args.samples]
    results = []
    for i in chosen:
        y = int(test.class_indices[i])
        if args.mode == "targeted":
            label = int(rng.choice([c for c in range(model.n_classes) if c != y]))
        else:
            label = y
        res = attack(model, test.images[i], label, cfg)
        res.sample_index = int(i)
        res.true_label = y
        results.append(res)
        size = "" if not res.success else f" {args.norm}={_norm_of(res):.5g}"
        print(f"sample {i}: success={res.success}{size}")
    write_attack_csv(args.out, results)
    n_ok = sum(r.success for r in results)
    print(f"wrote {args.out}: {n_ok}/{len(results)} succeeded")
    return EXIT_OK


def _norm_of(res) -> float:
    return {"l2": res.l2, "l0": res.l0, "linf": res.linf}[res.norm]


def cmd_evaluate(args) -> int:
    model_dir = Path(args.models)
    checkpoints = sorted(model_dir.glob("**/*.ckpt"))
    if not checkpoints:
        raise DataError(f"no .ckpt files under {model_dir}")
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for m in metrics:
        if m not in ("accuracy", "confidence", "sensitivity"):
            raise UsageError(f"unknown metric {m!r}")
    report = EvaluationReport()
    dataset = None
    test = None
    for path in checkpoints:
        model = load_checkpoint(path)
        ds_name = _dataset_for_spec(model.spec)
        if dataset != ds_name:
            dataset = ds_name
            _, test = _load(dataset, _data_dir(args))
            if args.test_subset:
                test = test.subset(args.test_subset)
        acc = accuracy(model, test) if "accuracy" in metrics else float("nan")
        conf = confidence(model, test) if "confidence" in metrics else float("nan")
        report.models.append(ModelEvaluation(
            model_id=model.model_id, provenance=model.provenance, chain_step=0,
            temperature=model.temperature, accuracy=acc, confidence=conf))
        if "sensitivity" in metrics:
            report.sensitivity.append(sensitivity_profile(
                model, test, model.temperature,
                sample_count=args.sensitivity_samples))
        print(f"{model.model_id}: accuracy={acc:.4f} confidence={conf:.4f}")
    write_accuracy_csv(args.out, report)
    if report.sensitivity:
        sens_path = Path(args.out).with_name("sensitivity_" + Path(args.out).name)
        write_sensitivity_csv(sens_path, report)
        print(f"wrote {sens_path}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    if not cfg.data_dir:
        data_dir = os.environ.get(DATA_DIR_ENV)
        if not data_dir:
            raise UsageError(f"config has no data_dir and {DATA_DIR_ENV} is unset")
        from dataclasses import replace
        cfg = replace(cfg, data_dir=data_dir)
    manifest = run_experiment(cfg)
    print(f"experiment {manifest.status}; {len(manifest.artifacts)} artifacts "
          f"under {cfg.out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    report_file = run_dir / "report.json"
    if not report_file.exists():
        raise DataError(f"{report_file} not found")
    report = report_from_dict(json.loads(report_file.read_text()))
    manifest = load_manifest(run_dir) if (run_dir / "manifest.json").exists() else None
    written = emit_plot_data(report, run_dir / "plots")
    print(f"{'model':34s} {'T':>5s} {'step':>4s} {'acc':>7s} {'conf':>7s}")
    for m in report.models:
        print(f"{m.model_id:34s} {m.temperature:5g} {m.chain_step:4d} "
              f"{m.accuracy:7.4f} {m.confidence:7.4f}")
    for r in report.robustness:
        mean = "undefined" if r.mean_pert is None else f"{r.mean_pert:.5g}"
        print(f"{r.model_id:34s} {r.norm}: success={r.success_rate:.2f} "
              f"mean={mean}")
    if manifest is not None and manifest.status != "complete":
        print(f"note: run status is {manifest.status}")
    print(f"re-emitted {len(written)} plot files under {run_dir / 'plots'}")
    return EXIT_OK


def cmd_make_data(args) -> int:
    train, test = synthetic_digits(args.train, args.test, seed=args.seed)
    written = write_mnist_dir(args.out_dir, train, test)
    for p in written:
        print(f"wrote {p}")
    print("note: procedurally generated digits, not real handwriting")
    return EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="ddta", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a hard-label model")
    t.add_argument("--dataset", choices=["mnist", "cifar10"], required=True)
    t.add_argument("--data-dir")
    t.add_argument("--preset", choices=["paper", "desk"], default="desk")
    t.add_argument("--temperature", type=float, default=1.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--train-subset", type=int, default=0)
    t.add_argument("--test-subset", type=int, default=0)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("distill", help="train a soft-label chain from a teacher checkpoint")
    d.add_argument("--teacher", required=True)
    d.add_argument("--steps", type=int, required=True)
    d.add_argument("--out-dir", required=True)
    d.add_argument("--data-dir")
    d.add_argument("--epochs", type=int, default=10)
    d.add_argument("--train-subset", type=int, default=0)
    d.set_defaults(func=cmd_distill)

    a = sub.add_parser("attack", help="run one attack over test samples")
    a.add_argument("--model", required=True)
    a.add_argument("--norm", choices=["l0", "l2", "linf"], required=True)
    a.add_argument("--mode", choices=["targeted", "untargeted"], default="untargeted")
    a.add_argument("--samples", type=int, required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.add_argument("--data-dir")
    a.add_argument("--max-iterations", type=int, default=1000)
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("evaluate", help="evaluate checkpoints in a directory")
    e.add_argument("--models", required=True)
    e.add_argument("--metrics", default="accuracy,confidence")
    e.add_argument("--out", required=True)
    e.add_argument("--data-dir")
    e.add_argument("--test-subset", type=int, default=0)
    e.add_argument("--sensitivity-samples", type=int, default=500)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="run a full configured pipeline")
    x.add_argument("--config", required=True)
    x.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="summarize a finished run directory")
    r.add_argument("--run-dir", required=True)
    r.set_defaults(func=cmd_report)

    m = sub.add_parser("make-data",
                       help="write a synthetic digit corpus in MNIST IDX format")
    m.add_argument("--out-dir", required=True)
    m.add_argument("--train", type=int, default=10000)
    m.add_argument("--test", type=int, default=2000)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_make_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, ConfigError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
