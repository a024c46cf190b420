"""Figure rendering for run and sweep reports.

Consumes the metrics CSVs the harness emits and renders matplotlib
figures to files next to the delimited outputs.  Never used by the
training loop itself; the CLI invokes it after runs and via
``pbnn report``.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import read_metrics

__all__ = ["render_run_figures", "render_sweep_figure", "render_report"]


def _run_label(cfg) -> str:
    return f"{cfg.regime}/{cfg.backend} seed={cfg.seed}"


def render_run_figures(records, out_dir: str, label: str = "") -> list[str]:
    """Learning curves and schedule traces for one run; returns file paths."""
    os.makedirs(out_dir, exist_ok=True)
    epochs = [r.epoch for r in records]
    losses = [(r.epoch, r.train_loss) for r in records if r.train_loss is not None]
    accs = [r.test_acc * 100.0 for r in records]
    paths = []

    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    if losses:
        ax_loss.plot([e for e, _ in losses], [l for _, l in losses], marker="o")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train CE loss")
    ax_loss.grid(True, alpha=0.3)
    ax_acc.plot(epochs, accs, marker="o", color="tab:green")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("test accuracy (%)")
    ax_acc.grid(True, alpha=0.3)
    if label:
        fig.suptitle(label)
    fig.tight_layout()
    curve_path = os.path.join(out_dir, "curves.png")
    fig.savefig(curve_path, dpi=120)
    plt.close(fig)
    paths.append(curve_path)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, [r.eta for r in records], marker="o", label="learning rate")
    ax.plot(epochs, [r.scale for r in records], marker="s", label="surrogate scale")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    sched_path = os.path.join(out_dir, "schedules.png")
    fig.savefig(sched_path, dpi=120)
    plt.close(fig)
    paths.append(sched_path)
    return paths


def render_sweep_figure(rows: list[dict], out_path: str) -> str:
    """Comparison bars: final accuracy and parameter memory per sweep row."""
    done = [r for r in rows if r.get("status") == "ok"]
    labels = [f"{r['regime']}\n{r['backend']} s{r['seed']}" for r in done]
    fig, (ax_acc, ax_mem) = plt.subplots(1, 2, figsize=(max(7, 1.6 * len(done)), 3.8))
    xs = range(len(done))
    ax_acc.bar(xs, [r["final_acc"] * 100.0 for r in done], color="tab:blue")
    ax_acc.set_xticks(list(xs), labels, fontsize=8)
    ax_acc.set_ylabel("test accuracy (%)")
    ax_mem.bar(xs, [r["memory_total"] / 1024.0 for r in done], color="tab:orange")
    ax_mem.set_xticks(list(xs), labels, fontsize=8)
    ax_mem.set_ylabel("parameter memory (KiB)")
    for ax in (ax_acc, ax_mem):
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_report(csv_paths: list[str], out_dir: str) -> list[str]:
    """Render figures for existing metrics CSVs (the ``pbnn report`` path)."""
    os.makedirs(out_dir, exist_ok=True)
    produced = []
    parsed = []
    for i, path in enumerate(csv_paths):
        version, cfg, records = read_metrics(path)
        parsed.append((cfg, records))
        stem = os.path.splitext(os.path.basename(path))[0]
        run_dir = os.path.join(out_dir, f"run{i:02d}_{stem}") if len(csv_paths) > 1 else out_dir
        produced += render_run_figures(records, run_dir, label=_run_label(cfg))
    if len(parsed) > 1:
        fig, ax = plt.subplots(figsize=(6, 4))
        for cfg, records in parsed:
            ax.plot(
                [r.epoch for r in records],
                [r.test_acc * 100.0 for r in records],
                marker="o",
                label=_run_label(cfg),
            )
        ax.set_xlabel("epoch")
        ax.set_ylabel("test accuracy (%)")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        combined = os.path.join(out_dir, "comparison_curves.png")
        fig.savefig(combined, dpi=120)
        plt.close(fig)
        produced.append(combined)
    return produced
