"""Evaluation report output: JSON, CSV and a matplotlib summary figure."""
from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport

METRIC_KEYS = ("image_auroc", "image_ap", "pixel_auroc", "aupro")


def write_atomic(path: Path, data: bytes) -> None:
    """Write via a temp file + rename so readers never see partial output."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_json(obj, path: str | Path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    write_atomic(Path(path), (text + "\n").encode("utf-8"))


def write_eval_outputs(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    """Write eval_report.json / .csv and a per-category metric bar chart."""
    out_dir = Path(out_dir)
    paths = {
        "json": out_dir / "eval_report.json",
        "csv": out_dir / "eval_report.csv",
        "figure": out_dir / "eval_summary.png",
    }
    write_json(report.to_dict(), paths["json"])

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["category", *METRIC_KEYS, "n_images", "n_anomalous"])
    for c in report.per_category:
        writer.writerow(
            [c.category]
            + [f"{getattr(c, k):.6f}" for k in METRIC_KEYS]
            + [c.n_images, c.n_anomalous]
        )
    writer.writerow(
        ["macro_average"]
        + [f"{report.macro_average[k]:.6f}" for k in METRIC_KEYS]
        + ["", ""]
    )
    write_atomic(paths["csv"], buf.getvalue().encode("utf-8"))

    _write_summary_figure(report, paths["figure"])
    return paths


def _write_summary_figure(report: EvalReport, path: Path) -> None:
    cats = [c.category for c in report.per_category]
    x = np.arange(len(cats))
    width = 0.2
    fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(cats) + 3), 4.0))
    for i, key in enumerate(METRIC_KEYS):
        vals = [getattr(c, key) for c in report.per_category]
        ax.bar(x + (i - 1.5) * width, vals, width, label=key)
    ax.set_xticks(x)
    ax.set_xticklabels(cats, rotation=30, ha="right")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("metric value")
    ax.legend(loc="lower right", fontsize=8)
    ax.set_title("per-category evaluation")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, dpi=100, format="png")
    plt.close(fig)
    os.replace(tmp, path)
