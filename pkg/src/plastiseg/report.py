"""Render run reports: JSON + CSV + aligned text tables, with matplotlib
figures saved next to the delimited output."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import EvalReport  # noqa: E402
from .segmodel import ExperimentReport  # noqa: E402


def _ensure(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_training_curves(history: list[dict], out_png, title: str = "training"):
    """Line plot of every numeric series in the per-epoch history."""
    if not history:
        return
    epochs = [h["epoch"] for h in history]
    keys = [k for k, v in history[0].items()
            if k != "epoch" and isinstance(v, (int, float))]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in keys:
        ax.plot(epochs, [h[key] for h in history], marker="o", label=key)
    ax.set_xlabel("epoch")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    Path(out_png).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def write_experiment_outputs(report: ExperimentReport, out_dir) -> dict:
    """report.json, report.csv, table.txt plus comparison figures."""
    out_dir = _ensure(out_dir)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "table.txt").write_text(report.to_text_table() + "\n")

    fields = ["seed", "arm", "eval_set", "f1_micro", "dice_mean",
              "precision_micro", "recall_micro"]
    with (out_dir / "report.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows({k: row[k] for k in fields} for row in report.rows)

    fig_dir = _ensure(out_dir / "figures")
    _plot_summary_bars(report, fig_dir / "summary.png")
    _plot_per_seed(report, fig_dir / "per_seed.png")
    return {"json": out_dir / "report.json", "csv": out_dir / "report.csv",
            "table": out_dir / "table.txt", "figures": fig_dir}


def _plot_summary_bars(report: ExperimentReport, out_png):
    metrics = ["f1_micro", "dice_mean"]
    labels = [f"{name}\n{m}" for name in report.eval_names for m in metrics]
    width = 0.8 / len(report.arms)
    fig, ax = plt.subplots(figsize=(1.8 * len(labels) + 2, 4))
    for i, arm in enumerate(report.arms):
        values = [report.summary[arm][name][m]
                  for name in report.eval_names for m in metrics]
        xs = [j + i * width for j in range(len(labels))]
        ax.bar(xs, values, width=width, label=arm)
    ax.set_xticks([j + width * (len(report.arms) - 1) / 2
                   for j in range(len(labels))])
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    ax.set_title("mean scores over seeds")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def _plot_per_seed(report: ExperimentReport, out_png):
    fig, axes = plt.subplots(1, len(report.eval_names),
                             figsize=(4.5 * len(report.eval_names), 4),
                             squeeze=False)
    for ax, name in zip(axes[0], report.eval_names):
        for arm in report.arms:
            rows = sorted((r for r in report.rows
                           if r["arm"] == arm and r["eval_set"] == name),
                          key=lambda r: r["seed"])
            ax.plot([r["seed"] for r in rows], [r["f1_micro"] for r in rows],
                    marker="o", label=arm)
        ax.set_title(f"{name}: micro-F1 by seed")
        ax.set_xlabel("seed")
        ax.set_ylim(0, 1)
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def write_eval_outputs(report: EvalReport, out_dir) -> dict:
    """report.json, per_image.csv, table.txt plus a per-image dice histogram."""
    out_dir = _ensure(out_dir)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "table.txt").write_text(report.to_text_table() + "\n")

    with (out_dir / "per_image.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "dice", "tp", "fp", "fn", "tn"])
        for row in report.per_image:
            c = row["counts"]
            writer.writerow([row["image_id"], row["dice"],
                             c["tp"], c["fp"], c["fn"], c["tn"]])

    fig_dir = _ensure(out_dir / "figures")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist([row["dice"] for row in report.per_image], bins=20, range=(0, 1))
    ax.set_xlabel("per-image dice")
    ax.set_ylabel("images")
    ax.set_title(f"dice distribution (mean {report.dataset_dice_mean:.3f})")
    fig.tight_layout()
    fig.savefig(fig_dir / "dice_hist.png", dpi=120)
    plt.close(fig)
    return {"json": out_dir / "report.json", "csv": out_dir / "per_image.csv",
            "table": out_dir / "table.txt", "figures": fig_dir}


def write_study_outputs(report_dict: dict, out_dir) -> dict:
    out_dir = _ensure(out_dir)
    (out_dir / "report.json").write_text(json.dumps(report_dict, indent=2))
    with (out_dir / "report.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["accuracy", "real_correct_rate",
                         "generated_correct_rate", "n_trials"])
        writer.writerow([report_dict["accuracy"],
                         report_dict["per_class"]["real_correct_rate"],
                         report_dict["per_class"]["generated_correct_rate"],
                         report_dict["n_trials"]])
    fig_dir = _ensure(out_dir / "figures")
    fig, ax = plt.subplots(figsize=(5, 4))
    keys = ["accuracy", "real_correct_rate", "generated_correct_rate"]
    values = [report_dict["accuracy"],
              report_dict["per_class"]["real_correct_rate"],
              report_dict["per_class"]["generated_correct_rate"]]
    ax.bar(keys, values)
    ax.set_ylim(0, 1)
    ax.set_title("reader study outcome")
    fig.tight_layout()
    fig.savefig(fig_dir / "rates.png", dpi=120)
    plt.close(fig)
    return {"json": out_dir / "report.json", "csv": out_dir / "report.csv"}
