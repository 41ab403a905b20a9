"""Figure data series: delimited text files plus optional matplotlib renders.

Three figure kinds are supported: loss convergence over iterations, attack
success against the distortion budget, and mean distortion against the
detector's confidence threshold.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from ..attack import SweepPoint
from ..core import IterationRecord

FIGURE_IDS = ("loss_convergence", "rate_vs_distortion", "conf_vs_distortion")

_HEADERS = {
    "loss_convergence": ("iteration", "loss"),
    "rate_vs_distortion": ("target_distortion", "success_rate"),
    "conf_vs_distortion": ("confidence_threshold", "mean_distortion"),
}

_AXIS_LABELS = {
    "loss_convergence": ("iteration", "total loss"),
    "rate_vs_distortion": ("target distortion", "mean success rate"),
    "conf_vs_distortion": ("confidence threshold", "mean distortion"),
}


def _series_rows(data, figure_id: str) -> list[tuple[float, float]]:
    if figure_id == "loss_convergence":
        trace: Sequence[IterationRecord] = list(data)
        return [(float(i), float(rec.loss_total)) for i, rec in enumerate(trace)]
    if figure_id == "rate_vs_distortion":
        by_budget: dict[float, list[float]] = defaultdict(list)
        for point in data:
            if isinstance(point, SweepPoint):
                if point.skipped or point.success_rate is None:
                    continue
                by_budget[point.target_distortion].append(point.success_rate)
            else:
                budget, success = point
                by_budget[float(budget)].append(float(success))
        return [(s, sum(v) / len(v)) for s, v in sorted(by_budget.items())]
    if figure_id == "conf_vs_distortion":
        by_threshold: dict[float, list[float]] = defaultdict(list)
        for threshold, value in data:
            by_threshold[float(threshold)].append(float(value))
        return [(t, sum(v) / len(v)) for t, v in sorted(by_threshold.items())]
    raise ValueError(
        f"unknown figure id {figure_id!r}; valid ids: {', '.join(FIGURE_IDS)}"
    )


def emit_figure_series(
    data,
    figure_id: str,
    output_dir: str | Path,
    *,
    render: bool = True,
    stem: str | None = None,
) -> dict[str, Path]:
    """Write the series as CSV and, unless disabled, render a PNG plot.

    ``data`` comes straight from attack runs: an iteration trace for
    loss_convergence, sweep points (or (budget, success) pairs) for
    rate_vs_distortion, and (threshold, distortion) pairs for
    conf_vs_distortion.
    """
    if figure_id not in FIGURE_IDS:
        raise ValueError(
            f"unknown figure id {figure_id!r}; valid ids: {', '.join(FIGURE_IDS)}"
        )
    rows = _series_rows(data, figure_id)
    if not rows:
        raise ValueError(f"no data points for figure {figure_id!r}")

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or figure_id
    csv_path = output_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADERS[figure_id])
        writer.writerows(rows)

    paths = {"series": csv_path}
    if render:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        xs = [r[0] for r in rows]
        ys = [r[1] for r in rows]
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        marker = None if figure_id == "loss_convergence" else "o"
        ax.plot(xs, ys, marker=marker)
        xlabel, ylabel = _AXIS_LABELS[figure_id]
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        png_path = output_dir / f"{stem}.png"
        fig.savefig(png_path, dpi=120)
        plt.close(fig)
        paths["plot"] = png_path
    return paths
