"""Command-line interface.

Subcommands: generate, train, evaluate, sweep, curve, distill, reproduce,
bench. Experiment settings come from a YAML config file (every key
optional); datasets travel as CSV, reports as JSON, tables as CSV. The
worker-pool size for replicate sweeps is read from SMOOTHCAL_WORKERS.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint
from .backend import available_backends, backend_name
from .calib import evaluate, fit_temperature, prediction_histograms, scale_probs, nll
from .distill import DistillConfig, distill
from .errors import ConfigError, SmoothcalError
from .exp import (
    ExperimentConfig,
    load_experiment_config,
    reproduce_table,
    run_replicates,
    run_smoothing_curve,
    sweep_p1_p2,
    tune_on_subset,
    write_averages_csv,
    write_curve_csv,
    write_rows_csv,
    write_sweep_csv,
)
from .nn import forward, init_model, train
from .smoothing import (
    CurveParams,
    TeacherPredictions,
    beta_targets,
    bs_soft_provider,
    cls_targets,
    hard_targets,
    ils1_targets,
    ils2_targets,
    ils_targets,
    standard_ls,
)
from .synth import load_csv, sample

STRATEGIES = ("none", "ls", "ls_fixed", "ils1", "ils2", "ils", "cls", "bs_soft", "beta")


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_experiment_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "replicates", None):
        from dataclasses import replace

        cfg = replace(cfg, replicates=args.replicates)
    return cfg


def _outdir(args) -> Path:
    out = Path(getattr(args, "out_dir", None) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    sizes = {
        "train": cfg.train_per_class,
        "validation": cfg.val_per_class,
        "test": cfg.test_per_class,
    }
    base = args.seed if args.seed is not None else cfg.base_seed
    rows = []
    for offset, (split, per_class) in enumerate(sizes.items(), start=1):
        rows.append(sample(cfg.model, per_class, base * 10 + offset, split))
    path = Path(args.out)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "label", "density_tag", "split"])
        for ds in rows:
            for (x1, x2), lab, tag in zip(ds.features, ds.labels, ds.density_tags):
                writer.writerow([repr(float(x1)), repr(float(x2)), int(lab), tag, ds.split])
    print(f"wrote {sum(len(d) for d in rows)} instances to {path}")
    return 0


def _teacher_predictions(args, feats, k) -> TeacherPredictions:
    if not args.teacher:
        raise ConfigError(f"strategy {args.strategy!r} needs --teacher <checkpoint>")
    model, _ = checkpoint.load_checkpoint(args.teacher)
    probs = scale_probs(forward(model, feats), args.teacher_temperature)
    return TeacherPredictions(probs, args.teacher_temperature)


def _build_targets(args, cfg, data, split):
    k = cfg.model.num_classes
    labels = data[split].labels
    feats = data[split].features
    strategy = args.strategy
    if strategy == "none":
        return hard_targets(labels, k)
    if strategy == "ls":
        return standard_ls(labels, k, args.eps)
    if strategy == "ls_fixed":
        return standard_ls(labels, k, cfg.fixed_eps)
    if strategy == "cls":
        train_split = data["train"]
        base = cls_targets(train_split.features, train_split.labels, k, args.eps)
        per_class = {}
        for lab, row in zip(train_split.labels, base):
            per_class.setdefault(int(lab), row)
        return np.stack([per_class[int(lab)] for lab in labels])
    if strategy == "bs_soft":
        return bs_soft_provider(labels, k, cfg.bs_soft_beta)
    if strategy == "beta":
        if args.target_mean is None:
            raise ConfigError("strategy beta needs --target-mean")
        seed = (args.seed or cfg.base_seed) * 10 + (5 if split == "train" else 6)
        return beta_targets(labels, k, cfg.beta_alpha, cfg.beta_a, seed, args.target_mean)
    teacher = _teacher_predictions(args, feats, k)
    if strategy == "ils1":
        params = CurveParams(cfg.curve_family, args.curve_center, args.curve_scale, cfg.cap)
        return ils1_targets(labels, k, teacher, params)
    if strategy == "ils2":
        return ils2_targets(labels, k, teacher, args.eps)
    if strategy == "ils":
        params = CurveParams(cfg.curve_family, args.curve_center, args.curve_scale, cfg.cap)
        return ils_targets(labels, k, teacher, params)
    raise ConfigError(f"unknown strategy {strategy!r}")


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    data = load_csv(args.data)
    for needed in ("train", "validation"):
        if needed not in data:
            raise ConfigError(f"data file lacks a {needed!r} split")
    y_train = _build_targets(args, cfg, data, "train")
    y_val = _build_targets(args, cfg, data, "validation")
    seed = args.seed if args.seed is not None else cfg.base_seed * 10 + 4
    model = init_model(cfg.arch, seed, cfg.init_scheme)
    trained, log = train(
        model, data["train"].features, y_train, data["validation"].features, y_val, cfg.train
    )
    val_probs = forward(trained, data["validation"].features)
    extra = {
        "strategy": args.strategy,
        "best_epoch": log.best_epoch,
        "stopped_epoch": log.stopped_epoch,
        "best_val_loss": log.best_val_loss,
        # hard-target validation loss, for comparability across strategies
        "val_hard_cross_entropy": nll(val_probs, data["validation"].labels),
        "train_losses": log.train_losses,
        "val_losses": log.val_losses,
    }
    checkpoint.save_checkpoint(trained, args.out, cfg.train, extra)
    print(
        f"trained {args.strategy}: best epoch {log.best_epoch + 1}/{log.stopped_epoch}, "
        f"val loss {log.best_val_loss:.4f}; checkpoint at {args.out}"
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    model, sidecar = checkpoint.load_checkpoint(args.checkpoint)
    data = load_csv(args.data)
    if args.split not in data:
        raise ConfigError(f"data file lacks a {args.split!r} split")
    ds = data[args.split]
    probs = forward(model, ds.features)
    temperature = None
    if args.fit_temperature:
        if "validation" not in data:
            raise ConfigError("--fit-temperature needs a validation split in the data file")
        val = data["validation"]
        fit = fit_temperature(forward(model, val.features), val.labels)
        temperature = fit.temperature
        probs = scale_probs(probs, temperature)
    report = evaluate(probs, ds.labels, cfg.bins, subset_tags=ds.density_tags,
                      fitted_temperature=temperature)
    out = _outdir(args)
    (out / "report.json").write_text(report.to_json())
    with open(out / "reliability.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "count", "mean_confidence", "accuracy"])
        writer.writerows(report.per_bin)
    with open(out / "classwise_reliability.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "bin", "count", "mean_predicted", "actual_fraction"])
        writer.writerows(report.per_class_bins)
    hist = prediction_histograms(probs, args.hist_bins)
    with open(out / "histograms.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank"] + [f"bin_{i}" for i in range(hist.shape[1])])
        for rank, counts in enumerate(hist):
            writer.writerow([rank] + counts.tolist())
    print(
        f"accuracy {report.accuracy:.4f}  CE {report.cross_entropy:.4f}  "
        f"ECE {report.ece:.4f}  cwECE {report.cwece:.4f}  -> {out}"
    )
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    if args.surface:
        rows = sweep_p1_p2(cfg)
        write_sweep_csv(rows, out / "surface.csv")
        best = min(rows, key=lambda r: r["mean_test_cross_entropy"])
        print(f"surface minimum at center={best['center']} scale={best['scale']} "
              f"(CE {best['mean_test_cross_entropy']:.4f}); wrote {out / 'surface.csv'}")
        return 0
    results = run_replicates(cfg)
    if args.subset:
        sub = tune_on_subset(cfg, args.subset)
        results.rows.extend(sub.rows)
        results.averages.extend(sub.averages)
        results.failures.extend(sub.failures)
    write_rows_csv(results.rows, out / "results.csv")
    write_averages_csv(results.averages, out / "summary.csv")
    for seed, method, err in results.failures:
        print(f"FAILURE seed={seed} method={method}: {err}", file=sys.stderr)
    print(f"wrote {len(results.rows)} rows to {out / 'results.csv'}")
    return 1 if results.failures else 0


def cmd_curve(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    curve = run_smoothing_curve(cfg, teacher=args.teacher)
    write_curve_csv(curve, out / "curve.csv")
    if curve:
        center, eps = min(curve, key=lambda pair: pair[1])
        print(f"{len(curve)} bins; smallest best-eps {eps} at bin center {center:.3f}; "
              f"wrote {out / 'curve.csv'}")
    return 0


def cmd_distill(args) -> int:
    cfg = _load_cfg(args)
    data = load_csv(args.data) if args.data else None
    if data is None:
        seeds = {"train": cfg.base_seed * 10 + 1, "val": cfg.base_seed * 10 + 2,
                 "test": cfg.base_seed * 10 + 3}
        data = {
            "train": sample(cfg.model, cfg.train_per_class, seeds["train"], "train"),
            "validation": sample(cfg.model, cfg.val_per_class, seeds["val"], "validation"),
            "test": sample(cfg.model, cfg.test_per_class, seeds["test"], "test"),
        }
    teacher_model, sidecar = checkpoint.load_checkpoint(args.teacher)
    dcfg = DistillConfig(
        kd_weight=args.kd_weight,
        teacher_temperature=args.teacher_temperature,
        student_temperature=args.student_temperature,
    )
    student, log, report = distill(
        lambda x: forward(teacher_model, x),
        cfg.arch,
        data["train"],
        data["validation"],
        dcfg,
        cfg.train,
        seed=args.seed if args.seed is not None else cfg.base_seed * 10 + 7,
        test_data=data.get("test"),
        bins=cfg.bins,
    )
    out = _outdir(args)
    checkpoint.save_checkpoint(student, out / "student.ckpt", cfg.train, {
        "teacher_checkpoint": str(args.teacher),
        "teacher_strategy": args.strategy,
        "kd_weight": dcfg.kd_weight,
        "best_epoch": log.best_epoch,
    })
    payload = {"teacher_strategy": args.strategy, "report": None}
    if report is not None:
        payload["report"] = json.loads(report.to_json())
        print(f"student accuracy {report.accuracy:.4f}  CE {report.cross_entropy:.4f}  "
              f"ECE {report.ece:.4f}  cwECE {report.cwece:.4f}")
    (out / "distill_report.json").write_text(json.dumps(payload, indent=2))
    return 0


def cmd_reproduce(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    t0 = time.time()
    bundle = reproduce_table(args.table, cfg)
    verdict, results = bundle["verdict"], bundle["results"]
    write_rows_csv(results.rows, out / f"{args.table}_rows.csv")
    write_averages_csv(results.averages, out / f"{args.table}_summary.csv")
    (out / f"{args.table}_verdict.json").write_text(json.dumps(verdict, indent=2))
    for c in verdict["checks"]:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['check']}: {c['detail']}")
    print(f"{args.table}: {'PASS' if verdict['passed'] else 'FAIL'} "
          f"({time.time() - t0:.0f}s; outputs in {out})")
    return 0 if verdict["passed"] else 1


def cmd_bench(args) -> int:
    from .synth import canonical_model

    gen = canonical_model()
    tr = sample(gen, 50, 11, "train")
    va = sample(gen, 50, 12, "validation")
    cfg = ExperimentConfig().train
    arch = ExperimentConfig().arch
    y_tr = standard_ls(tr.labels, 3, 0.05)
    y_va = standard_ls(va.labels, 3, 0.05)
    x_big = sample(gen, 5000, 13, "test").features

    print(f"active backend: {backend_name()}")
    results = []
    for name, kernels in available_backends().items():
        model = init_model(arch, 999)
        fwd_times, step_times = [], []
        for _ in range(args.rounds):
            t0 = time.perf_counter()
            for _ in range(50):
                kernels.forward(model.weights, model.biases, tr.features, 1.0)
            fwd_times.append((time.perf_counter() - t0) / 50)
            t0 = time.perf_counter()
            for _ in range(50):
                kernels.loss_and_grads(model.weights, model.biases, tr.features, y_tr, 1.0, 0.0)
            step_times.append((time.perf_counter() - t0) / 50)
        t0 = time.perf_counter()
        import smoothcal.backend as B

        saved = (B._active, B.forward, B.loss_and_grads)
        B._active, B.forward, B.loss_and_grads = kernels, kernels.forward, kernels.loss_and_grads
        try:
            trained, log = train(init_model(arch, 999), tr.features, y_tr, va.features, y_va, cfg)
            train_s = time.perf_counter() - t0
            t0 = time.perf_counter()
            kernels.forward(model.weights, model.biases, x_big, 1.0)
            big_fwd = time.perf_counter() - t0
        finally:
            B._active, B.forward, B.loss_and_grads = saved
        results.append((name, min(fwd_times), min(step_times), train_s, log.stopped_epoch, big_fwd))

    print(f"{'backend':10s} {'forward(150)':>14s} {'loss+grads':>12s} {'train run':>12s} "
          f"{'epochs':>7s} {'forward(15k)':>13s}")
    for name, fwd, step, train_s, epochs, big in results:
        print(f"{name:10s} {fwd * 1e6:11.1f} us {step * 1e6:9.1f} us {train_s * 1e3:9.1f} ms "
              f"{epochs:7d} {big * 1e3:10.2f} ms")
    if len(results) == 2:
        py = next(r for r in results if r[0] == "python")
        cc = next(r for r in results if r[0] == "compiled")
        print(f"compiled speedup: forward x{py[1] / cc[1]:.2f}, loss+grads x{py[2] / cc[2]:.2f}, "
              f"train x{py[3] / cc[3]:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smoothcal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_dir=True):
        p.add_argument("--config", help="YAML experiment config")
        if out_dir:
            p.add_argument("--out-dir", help="output directory (default: out/)")

    p = sub.add_parser("generate", help="sample datasets to CSV")
    common(p, out_dir=False)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train one model on a dataset CSV")
    common(p, out_dir=False)
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, default="none")
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--curve-center", type=float, default=0.8)
    p.add_argument("--curve-scale", type=float, default=2.0)
    p.add_argument("--teacher", help="teacher checkpoint (ils1/ils2/ils)")
    p.add_argument("--teacher-temperature", type=float, default=1.0)
    p.add_argument("--target-mean", type=float, help="mean smoothing factor (beta strategy)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("evaluate", help="report metrics for a checkpoint on a dataset")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--fit-temperature", action="store_true",
                   help="fit a temperature on the validation split first")
    p.add_argument("--hist-bins", type=int, default=50)

    p = sub.add_parser("sweep", help="replicate sweep over methods and grids")
    common(p)
    p.add_argument("--replicates", type=int)
    p.add_argument("--subset", choices=["dense", "sparse"],
                   help="additionally tune eps on a validation density subset")
    p.add_argument("--surface", action="store_true",
                   help="sweep the quadratic-curve (center, scale) surface instead")

    p = sub.add_parser("curve", help="estimate the best-smoothing-factor curve")
    common(p)
    p.add_argument("--replicates", type=int)
    p.add_argument("--teacher", choices=["bayes", "none"], default="bayes")

    p = sub.add_parser("distill", help="train a student against a teacher checkpoint")
    common(p)
    p.add_argument("--teacher", required=True, help="teacher checkpoint path")
    p.add_argument("--strategy", default="none",
                   help="strategy tag the teacher was trained with (for reporting)")
    p.add_argument("--data", help="dataset CSV (sampled from config when omitted)")
    p.add_argument("--kd-weight", type=float, default=1.0)
    p.add_argument("--teacher-temperature", type=float, default=1.0)
    p.add_argument("--student-temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("reproduce", help="reproduce a reference table with banded checks")
    common(p)
    p.add_argument("table", choices=["table1", "table2", "table3_appendix"])
    p.add_argument("--replicates", type=int)

    p = sub.add_parser("bench", help="compare the compiled and python kernel backends")
    p.add_argument("--rounds", type=int, default=5)

    return parser


HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "curve": cmd_curve,
    "distill": cmd_distill,
    "reproduce": cmd_reproduce,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except SmoothcalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
