"""Delimited result records and their companion figures.

Every report writer emits a CSV next to a rendered PNG so results can be
re-aggregated by hand and eyeballed without rerunning anything.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .runner import ScenarioResult  # noqa: E402


def write_csv(path: Path, rows: list[dict], fieldnames: list[str],
              comments: Optional[list[str]] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in comments or []:
            fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [l for l in fh if not l.startswith("#")]
    return list(csv.DictReader(lines))


def scenario_rows(results: list[ScenarioResult]) -> list[dict]:
    """One record per (scenario, seed), plus error rows for failed cells."""
    rows = []
    for res in results:
        if res.error is not None:
            rows.append({
                "scenario": res.spec.name, "variant": res.spec.variant, "seed": "",
                "accuracy": "", "macro_f1": "", "error": res.error,
            })
            continue
        for seed, acc, f1 in zip(res.spec.seeds, res.accuracies, res.macro_f1s):
            rows.append({
                "scenario": res.spec.name, "variant": res.spec.variant, "seed": seed,
                "accuracy": f"{acc:.4f}", "macro_f1": f"{f1:.4f}", "error": "",
            })
    return rows


SCENARIO_FIELDS = ["scenario", "variant", "seed", "accuracy", "macro_f1", "error"]


def write_scenario_records(results: list[ScenarioResult], path: Path) -> None:
    write_csv(path, scenario_rows(results), SCENARIO_FIELDS)


def summary_document(results: list[ScenarioResult]) -> dict:
    doc = {"scenarios": []}
    for res in results:
        entry = {
            "scenario": res.spec.name,
            "variant": res.spec.variant,
            "seeds": list(res.spec.seeds),
            "config_hash": res.config_hash,
            "wall_clock_seconds": round(res.wall_clock_seconds, 3),
        }
        if res.error is not None:
            entry["error"] = res.error
        else:
            entry.update({
                "accuracies": [round(a, 4) for a in res.accuracies],
                "macro_f1s": [round(f, 4) for f in res.macro_f1s],
                "mean_accuracy": round(res.mean_accuracy, 4),
                "std_accuracy": round(res.std_accuracy, 4),
                "mean_macro_f1": round(res.mean_macro_f1, 4),
            })
        doc["scenarios"].append(entry)
    ok = [r for r in results if r.error is None]
    if ok:
        doc["average_accuracy"] = round(float(np.mean([r.mean_accuracy for r in ok])), 4)
    return doc


def write_summary(results: list[ScenarioResult], path: Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(summary_document(results), indent=2))


def matrix_table_rows(results: list[ScenarioResult]) -> list[dict]:
    """Paper-shaped table: one row per variant, one column per scenario plus
    a final Average over the non-failed cells."""
    variants = sorted({r.spec.variant for r in results})
    scenarios = []
    for r in results:
        if r.spec.name not in scenarios:
            scenarios.append(r.spec.name)
    rows = []
    for variant in variants:
        row = {"variant": variant}
        means = []
        for name in scenarios:
            cell = next((r for r in results
                         if r.spec.variant == variant and r.spec.name == name), None)
            if cell is None or cell.error is not None:
                row[name] = "FAILED" if cell is not None else ""
            else:
                row[name] = f"{cell.mean_accuracy:.2f}"
                means.append(cell.mean_accuracy)
        row["Average"] = f"{np.mean(means):.2f}" if means else ""
        rows.append(row)
    return rows


def render_matrix_report(results: list[ScenarioResult], out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_scenario_records(results, out_dir / "matrix_records.csv")
    scenarios = []
    for r in results:
        if r.spec.name not in scenarios:
            scenarios.append(r.spec.name)
    table = matrix_table_rows(results)
    write_csv(out_dir / "matrix_table.csv", table, ["variant"] + scenarios + ["Average"])
    write_summary(results, out_dir / "matrix_summary.json")

    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(scenarios)), 4))
    width = 0.8 / max(1, len(table))
    x = np.arange(len(scenarios))
    for i, row in enumerate(table):
        heights = [float(row[name]) if row[name] not in ("", "FAILED") else 0.0
                   for name in scenarios]
        ax.bar(x + i * width, heights, width, label=row["variant"])
    ax.set_xticks(x + width * (len(table) - 1) / 2)
    ax.set_xticklabels(scenarios, rotation=45, ha="right")
    ax.set_ylabel("target accuracy (%)")
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "matrix.png", dpi=150)
    plt.close(fig)


def render_ablation_report(results: list[ScenarioResult], out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_scenario_records(results, out_dir / "ablation_records.csv")
    write_summary(results, out_dir / "ablation_summary.json")

    ok = [r for r in results if r.error is None]
    fig, ax = plt.subplots(figsize=(6, 4))
    names = [r.spec.variant for r in ok]
    means = [r.mean_accuracy for r in ok]
    stds = [r.std_accuracy for r in ok]
    ax.bar(names, means, yerr=stds, capsize=4, color="tab:blue")
    ax.set_ylabel("target accuracy (%)")
    ax.set_ylim(0, 100)
    ax.set_title(f"ablation: {ok[0].spec.name}" if ok else "ablation")
    fig.tight_layout()
    fig.savefig(out_dir / "ablation.png", dpi=150)
    plt.close(fig)


def render_sweep_report(parameter: str, sweep: list[tuple[float, ScenarioResult]],
                        out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for value, res in sweep:
        if res.error is not None:
            rows.append({"value": value, "mean_accuracy": "", "std_accuracy": "",
                         "accuracies": "", "error": res.error})
        else:
            rows.append({
                "value": value,
                "mean_accuracy": f"{res.mean_accuracy:.4f}",
                "std_accuracy": f"{res.std_accuracy:.4f}",
                "accuracies": ";".join(f"{a:.4f}" for a in res.accuracies),
                "error": "",
            })
    write_csv(out_dir / "sweep.csv", rows,
              ["value", "mean_accuracy", "std_accuracy", "accuracies", "error"],
              comments=[f"sensitivity sweep over {parameter}"])

    ok = [(v, r) for v, r in sweep if r.error is None]
    fig, ax = plt.subplots(figsize=(6, 4))
    if ok:
        values = [v for v, _ in ok]
        means = [r.mean_accuracy for _, r in ok]
        stds = [r.std_accuracy for _, r in ok]
        ax.errorbar(values, means, yerr=stds, marker="o", capsize=4)
        ax.set_xscale("log" if parameter == "lambda" else "linear")
    ax.set_xlabel(parameter)
    ax.set_ylabel("target accuracy (%)")
    fig.tight_layout()
    fig.savefig(out_dir / "sweep.png", dpi=150)
    plt.close(fig)


def write_training_curves(curves: list[dict], csv_path: Path,
                          comments: Optional[list[str]] = None) -> None:
    if not curves:
        return
    write_csv(csv_path, curves, list(curves[0].keys()), comments=comments)


def render_curves_figure(curves: list[dict], png_path: Path, x_key: str,
                         series: list[str]) -> None:
    if not curves:
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [row[x_key] for row in curves]
    for key in series:
        ax.plot(xs, [row[key] for row in curves], label=key)
    ax.set_xlabel(x_key)
    ax.legend()
    fig.tight_layout()
    Path(png_path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
