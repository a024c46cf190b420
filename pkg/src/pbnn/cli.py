"""Benchmark harness CLI: train / resume / sweep / report."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .binary import extract_binary_params
from .checkpoint import load_trainer, peek_config, save_checkpoint
from .config import BACKENDS, RunConfig
from .data import load_cifar10, subset, synthetic_dataset
from .errors import CheckpointError, ConfigError, DataError, PbnnError, TrainingDiverged
from .layers import REGIMES
from .metrics import format_record, header_lines
from .train import Trainer

# run seeds steer init/shuffle/draws; the synthetic corpus itself is fixed,
# like a dataset on disk would be
SYNTH_TRAIN_SEED = 101
SYNTH_TEST_SEED = 202


def build_datasets(cfg: RunConfig):
    if cfg.data == "cifar10":
        train, test = load_cifar10(cfg.data_dir)
        if cfg.subset:
            train = subset(train, cfg.subset)
        if cfg.test_subset:
            test = subset(test, cfg.test_subset)
        return train, test
    n_train = cfg.subset or cfg.synthetic_train
    n_test = cfg.test_subset or cfg.synthetic_test
    train = synthetic_dataset(n_train, seed=SYNTH_TRAIN_SEED, snr=cfg.snr, split="train")
    test = synthetic_dataset(n_test, seed=SYNTH_TEST_SEED, snr=cfg.snr, split="test")
    return train, test


def _checkpoint_path(cfg: RunConfig, override: str | None) -> str:
    return override or os.path.join(cfg.out, "checkpoint.npz")


def _metrics_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.out, "metrics.csv")


def _write_summary(trainer: Trainer, total_wall: float) -> str:
    cfg = trainer.cfg
    mem = trainer.memory_report()
    epoch_walls = [r.wall_seconds for r in trainer.records if r.epoch > 0]
    mean = float(np.mean(epoch_walls)) if epoch_walls else 0.0
    std = float(np.std(epoch_walls)) if epoch_walls else 0.0
    lines = [
        f"run: {cfg.out}",
        f"config: regime={cfg.regime} backend={cfg.backend} arch={cfg.arch} "
        f"epochs={cfg.epochs} batch_size={cfg.batch_size} seed={cfg.seed}",
        f"final_test_accuracy: {trainer.final_accuracy():.6f}",
        f"total_wall_seconds: {total_wall:.3f}",
        f"epoch_wall_seconds: {mean:.3f} +/- {std:.3f} (host timings, not hardware-comparable)",
        "parameter_memory_bytes: "
        + " ".join(f"{k.removesuffix('_bytes')}={v}" for k, v in mem.items()),
    ]
    return "\n".join(lines) + "\n"


def _run_to_completion(trainer: Trainer, ckpt_path: str) -> float:
    """Drive remaining epochs, streaming CSV rows and checkpoints."""
    cfg = trainer.cfg
    os.makedirs(cfg.out, exist_ok=True)
    csv_path = _metrics_path(cfg)
    with open(csv_path, "w", encoding="utf-8", newline="") as csv_file:
        for line in header_lines(cfg, __version__):
            csv_file.write(line + "\n")
        # resumed runs replay the already-completed rows verbatim
        for rec in trainer.records:
            csv_file.write(format_record(rec) + "\n")
        csv_file.flush()

        def on_epoch(tr: Trainer, rec):
            csv_file.write(format_record(rec) + "\n")
            csv_file.flush()
            save_checkpoint(tr, ckpt_path)

        trainer.fit(on_epoch=on_epoch)
    return sum(r.wall_seconds for r in trainer.records)


def _finish_run(trainer: Trainer, total_wall: float) -> None:
    cfg = trainer.cfg
    params = extract_binary_params(trainer.net)
    params.save(os.path.join(cfg.out, "binary_params.npz"))
    summary = _write_summary(trainer, total_wall)
    with open(os.path.join(cfg.out, "summary.txt"), "w", encoding="utf-8") as f:
        f.write(summary)
    print(summary, end="")
    if cfg.figures:
        from .report import render_run_figures

        render_run_figures(trainer.records, cfg.out)


def _execute(cfg: RunConfig, ckpt_override: str | None = None, resume: bool = False) -> Trainer:
    ckpt_path = _checkpoint_path(cfg, ckpt_override)
    train_ds, test_ds = build_datasets(cfg)
    if resume and os.path.exists(ckpt_path):
        trainer = load_trainer(ckpt_path, train_ds, test_ds, out_override=cfg.out)
    else:
        trainer = Trainer(cfg, train_ds, test_ds)
    total_wall = _run_to_completion(trainer, ckpt_path)
    _finish_run(trainer, total_wall)
    return trainer


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    cfg.validate()
    _execute(cfg, ckpt_override=args.checkpoint, resume=args.resume)
    return 0


def cmd_resume(args) -> int:
    stored, completed = peek_config(args.checkpoint)
    _refuse_mismatched(stored, args)
    cfg = stored.with_output(args.out) if args.out else stored
    train_ds, test_ds = build_datasets(cfg)
    trainer = load_trainer(args.checkpoint, train_ds, test_ds, out_override=cfg.out)
    ckpt_path = _checkpoint_path(cfg, None if args.out else args.checkpoint)
    total_wall = _run_to_completion(trainer, ckpt_path)
    _finish_run(trainer, total_wall)
    return 0


def cmd_sweep(args) -> int:
    regimes = [r.strip() for r in args.regimes.split(",") if r.strip()]
    backends = [b.strip() for b in args.backends.split(",") if b.strip()]
    seeds = [int(s) for s in args.seeds.split(",")]
    combos = [(r, b, s) for r in regimes for b in backends for s in seeds]
    if len(combos) < 2:
        raise ConfigError("a sweep needs at least 2 configurations")
    base = _config_from_args(args)
    rows = []
    for regime, backend, seed in combos:
        name = f"{regime}-{backend}-s{seed}"
        cfg = RunConfig(
            **{
                **base.__dict__,
                "regime": regime,
                "backend": backend,
                "seed": seed,
                "out": os.path.join(base.out, "runs", name),
            }
        )
        row = {"regime": regime, "backend": backend, "seed": seed, "name": name}
        try:
            cfg.validate()
            trainer = _execute(cfg)
            walls = [r.wall_seconds for r in trainer.records if r.epoch > 0]
            row.update(
                status="ok",
                final_acc=trainer.final_accuracy(),
                time_mean=float(np.mean(walls)) if walls else 0.0,
                time_std=float(np.std(walls)) if walls else 0.0,
                memory_total=trainer.memory_report()["total_bytes"],
            )
        except PbnnError as e:
            row.update(status=f"failed: {e}", final_acc=float("nan"),
                       time_mean=float("nan"), time_std=float("nan"), memory_total=0)
        rows.append(row)
    _emit_sweep_outputs(base, rows)
    return 0


def _emit_sweep_outputs(base: RunConfig, rows: list[dict]) -> None:
    os.makedirs(base.out, exist_ok=True)
    csv_path = os.path.join(base.out, "comparison.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# pbnn {__version__} sweep\n")
        f.write("regime,backend,seed,status,final_acc,time_per_epoch_mean,"
                "time_per_epoch_std,parameter_memory_bytes\n")
        for r in rows:
            status = "ok" if r["status"] == "ok" else "failed"
            f.write(
                f"{r['regime']},{r['backend']},{r['seed']},{status},"
                f"{r['final_acc']:.6f},{r['time_mean']:.3f},{r['time_std']:.3f},"
                f"{r['memory_total']}\n"
            )
    widths = (14, 8, 5, 10, 20, 14)
    header = ("regime", "backend", "seed", "accuracy", "time/epoch (s)", "memory (B)")
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        if r["status"] == "ok":
            cells = (
                r["regime"], r["backend"], str(r["seed"]),
                f"{r['final_acc'] * 100:.2f}%",
                f"{r['time_mean']:.2f} +/- {r['time_std']:.2f}",
                str(r["memory_total"]),
            )
        else:
            cells = (r["regime"], r["backend"], str(r["seed"]), r["status"], "-", "-")
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    table = "\n".join(lines) + "\n"
    with open(os.path.join(base.out, "comparison.txt"), "w", encoding="utf-8") as f:
        f.write(table)
    print(table, end="")
    if base.figures:
        from .report import render_sweep_figure

        render_sweep_figure(rows, os.path.join(base.out, "comparison.png"))


def cmd_report(args) -> int:
    from .report import render_report

    produced = render_report(args.runs, args.out)
    for p in produced:
        print(p)
    return 0


def _refuse_mismatched(stored: RunConfig, args) -> None:
    overrides = {
        "regime": args.regime, "backend": args.backend, "frac_bits": args.frac_bits,
        "epochs": args.epochs, "batch_size": args.batch_size, "seed": args.seed,
        "arch": args.arch, "data_dir": args.data_dir, "subset": args.subset,
    }
    for field, value in overrides.items():
        if value is not None and value != getattr(stored, field):
            raise CheckpointError(
                f"resume config mismatch: {field}={value!r} differs from "
                f"checkpointed {getattr(stored, field)!r}"
            )


def _config_from_args(args) -> RunConfig:
    data = "cifar10" if args.data_dir else "synthetic"
    return RunConfig(
        regime=args.regime,
        backend=args.backend,
        frac_bits=args.frac_bits,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        arch=args.arch,
        data=data,
        data_dir=args.data_dir,
        subset=args.subset,
        test_subset=args.test_subset,
        synthetic_train=args.synthetic_train,
        synthetic_test=args.synthetic_test,
        snr=args.snr,
        clip=args.clip,
        augment_flip=args.augment_flip,
        augment_crop=args.augment_crop,
        out=args.out,
        figures=not args.no_figures,
    )


def _add_run_flags(p: argparse.ArgumentParser, for_resume: bool = False) -> None:
    default = (lambda v: None) if for_resume else (lambda v: v)
    p.add_argument("--regime", choices=REGIMES, default=default("progressive"))
    p.add_argument("--backend", choices=BACKENDS, default=default("real32"))
    p.add_argument("--frac-bits", type=int, default=None, dest="frac_bits")
    p.add_argument("--epochs", type=int, default=default(10))
    p.add_argument("--batch-size", type=int, default=default(8), dest="batch_size")
    p.add_argument("--seed", type=int, default=default(0))
    p.add_argument("--arch", choices=("tiny", "paper"), default=default("tiny"))
    p.add_argument("--data-dir", default=None, dest="data_dir",
                   help="CIFAR-10 binary batches directory (synthetic data if omitted)")
    p.add_argument("--subset", type=int, default=None,
                   help="train on the first N records only")
    p.add_argument("--test-subset", type=int, default=None, dest="test_subset")
    p.add_argument("--synthetic-train", type=int, default=5000, dest="synthetic_train")
    p.add_argument("--synthetic-test", type=int, default=1000, dest="synthetic_test")
    p.add_argument("--snr", type=float, default=1.0,
                   help="synthetic dataset signal-to-noise ratio")
    p.add_argument("--clip", type=float, default=1.0,
                   help="straight-through estimator clipping threshold")
    p.add_argument("--augment-flip", action="store_true")
    p.add_argument("--augment-crop", action="store_true")
    p.add_argument("--out", default="runs/run", help="output directory")
    p.add_argument("--no-figures", action="store_true",
                   help="skip rendering report figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbnn",
        description="Train and benchmark progressively-binarizing networks "
        "over real and fixed-point backends.",
    )
    parser.add_argument("--version", action="version", version=f"pbnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training configuration")
    _add_run_flags(p_train)
    p_train.add_argument("--checkpoint", default=None,
                         help="checkpoint path (default <out>/checkpoint.npz)")
    p_train.add_argument("--resume", action="store_true",
                         help="continue from the checkpoint if it exists")
    p_train.set_defaults(func=cmd_train)

    p_resume = sub.add_parser("resume", help="continue a checkpointed run")
    p_resume.add_argument("--checkpoint", required=True)
    p_resume.add_argument("--out", default=None,
                          help="redirect outputs (default: the run's original out dir)")
    for flag, kw in (
        ("--regime", dict(choices=REGIMES)),
        ("--backend", dict(choices=BACKENDS)),
        ("--frac-bits", dict(type=int, dest="frac_bits")),
        ("--epochs", dict(type=int)),
        ("--batch-size", dict(type=int, dest="batch_size")),
        ("--seed", dict(type=int)),
        ("--arch", dict(choices=("tiny", "paper"))),
        ("--data-dir", dict(dest="data_dir")),
        ("--subset", dict(type=int)),
    ):
        p_resume.add_argument(flag, default=None, **kw)
    p_resume.set_defaults(func=cmd_resume)

    p_sweep = sub.add_parser("sweep", help="compare regimes/backends/seeds")
    _add_run_flags(p_sweep)
    p_sweep.add_argument("--regimes", default="stochastic,deterministic,progressive")
    p_sweep.add_argument("--backends", default=None)
    p_sweep.add_argument("--seeds", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_report = sub.add_parser("report", help="render figures from metrics CSVs")
    p_report.add_argument("--runs", nargs="+", required=True,
                          help="metrics.csv files to render")
    p_report.add_argument("--out", required=True)
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "sweep":
        if args.backends is None:
            args.backends = args.backend
        if args.seeds is None:
            args.seeds = str(args.seed)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"pbnn: config error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"pbnn: training aborted: {e} (resumable checkpoint retained)",
              file=sys.stderr)
        return 3
    except CheckpointError as e:
        print(f"pbnn: checkpoint error: {e}", file=sys.stderr)
        return 4
    except DataError as e:
        print(f"pbnn: data error: {e}", file=sys.stderr)
        return 5
    except PbnnError as e:
        print(f"pbnn: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
