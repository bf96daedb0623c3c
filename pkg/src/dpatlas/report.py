"""Evaluation report output: delimited tables, significance lines, and
boxplot figures rendered alongside the CSV."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import EvalReport, WilcoxonResult


def write_report_csv(reports: list[EvalReport], path) -> None:
    """Rows ``subject,variant,region,js,dice`` per region, plus one summary
    row per (subject, variant) with region ``mean``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "variant", "region", "js", "dice"])
        for rep in reports:
            for k in sorted(rep.js):
                writer.writerow(
                    [rep.subject, rep.variant, k, f"{rep.js[k]:.6f}", f"{rep.dice[k]:.6f}"]
                )
            writer.writerow(
                [rep.subject, rep.variant, "mean",
                 f"{rep.mean_js:.6f}", f"{rep.mean_dice:.6f}"]
            )


def write_wilcoxon_lines(results: dict[str, WilcoxonResult], path) -> None:
    """One line per comparison: ``<name> n=..,W=..,p=..,significant=..``."""
    with open(path, "w", encoding="utf-8") as fh:
        for name in sorted(results):
            fh.write(f"{name} {results[name].to_line()}\n")


def _by_variant(reports: list[EvalReport], metric: str) -> dict[str, list[float]]:
    values: dict[str, list[float]] = {}
    for rep in reports:
        value = rep.mean_js if metric == "js" else rep.mean_dice
        values.setdefault(rep.variant, []).append(value)
    return values


def plot_metric_boxplot(reports: list[EvalReport], metric: str, path) -> None:
    """Boxplot of per-subject mean JS or Dice, one box per atlas variant."""
    values = _by_variant(reports, metric)
    variants = sorted(values)
    fig, ax = plt.subplots(figsize=(1.6 * max(len(variants), 2) + 1.5, 3.4))
    ax.boxplot([values[v] for v in variants], tick_labels=variants)
    ax.set_ylabel("mean JS divergence" if metric == "js" else "mean Dice")
    ax.set_xlabel("atlas variant")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "dpatlas"})
    plt.close(fig)


def render_report(
    reports: list[EvalReport],
    wilcoxon: dict[str, WilcoxonResult],
    csv_path,
) -> list[Path]:
    """Write the CSV, the significance lines, and the two boxplot figures
    next to it. Returns all written paths."""
    csv_path = Path(csv_path)
    stem = csv_path.with_suffix("")
    paths = [csv_path]
    write_report_csv(reports, csv_path)
    wilcoxon_path = Path(f"{stem}_wilcoxon.txt")
    write_wilcoxon_lines(wilcoxon, wilcoxon_path)
    paths.append(wilcoxon_path)
    for metric in ("js", "dice"):
        fig_path = Path(f"{stem}_{metric}.png")
        plot_metric_boxplot(reports, metric, fig_path)
        paths.append(fig_path)
    return paths
