"""Render benchmark figures from a results CSV.

Reads rows with columns ``sweep_var, estimator, mse`` (extra columns are
ignored), averages repeated seeds per (estimator, sweep point), and draws
one line per estimator.  Three figure kinds are supported:

* ``dof`` - MSE against effective degrees of freedom (uses the dof column),
* ``dim`` - MSE against ambient dimension,
* ``num`` - MSE against sample size, on log-log axes.

Besides the image, a JSON sidecar with the exact plotted coordinates and
axis scales is written next to it, so rendering can be checked without
parsing the image.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

REQUIRED_COLUMNS = ("sweep_var", "estimator", "mse")
MARKERS = ["o", "s", "^", "d", "v", "*", "P", "X"]

X_LABELS = {
    "dof": "effective degrees of freedom",
    "dim": "ambient dimension",
    "num": "sample size",
}


@dataclass
class FigureSpec:
    csv_path: str
    figure: str  # dof | dim | num
    out_path: str
    log_axes: bool | None = None

    def __post_init__(self):
        if self.figure not in ("dof", "dim", "num"):
            raise ValueError("figure must be one of dof, dim, num")
        if self.log_axes is None:
            self.log_axes = self.figure == "num"


def read_rows(csv_path: str) -> list[dict]:
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError("empty CSV: no header")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"CSV is missing columns: {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise ValueError("CSV has a header but no data rows")
    return rows


def series_points(rows: list[dict], figure: str) -> dict[str, list[tuple[float, float]]]:
    """Per-estimator polyline: mean MSE per x-value, x ascending."""
    x_col = "dof" if figure == "dof" else "sweep_var"
    grouped: dict[tuple[str, float], list[float]] = {}
    for row in rows:
        est = row["estimator"]
        x = float(row[x_col])
        grouped.setdefault((est, x), []).append(float(row["mse"]))
    series: dict[str, list[tuple[float, float]]] = {}
    for (est, x), vals in grouped.items():
        series.setdefault(est, []).append((x, sum(vals) / len(vals)))
    for est in series:
        series[est].sort()
    return series


def render(spec: FigureSpec) -> str:
    """Draw the figure and its coordinate sidecar; returns the image path."""
    rows = read_rows(spec.csv_path)
    series = series_points(rows, spec.figure)

    fig, ax = plt.subplots(figsize=(6, 4.5))
    sidecar = {"figure": spec.figure, "log_axes": spec.log_axes, "series": {}}
    for idx, est in enumerate(sorted(series)):
        pts = series[est]
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.plot(xs, ys, marker=MARKERS[idx % len(MARKERS)], label=est)
        sidecar["series"][est] = {"x": xs, "y": ys}
    if spec.log_axes:
        ax.set_xscale("log")
        ax.set_yscale("log")
    sidecar["xscale"] = ax.get_xscale()
    sidecar["yscale"] = ax.get_yscale()
    ax.set_xlabel(X_LABELS[spec.figure])
    ax.set_ylabel("test MSE")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out = Path(spec.out_path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    out.with_suffix(out.suffix + ".coords.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )
    return str(out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="benchfigs", description="Render benchmark result figures."
    )
    parser.add_argument("--csv", required=True, help="benchmark results CSV")
    parser.add_argument("--figure", required=True, choices=["dof", "dim", "num"])
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument(
        "--log-axes",
        action="store_true",
        default=None,
        help="force log-log axes (default: only the num figure)",
    )
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec(
            csv_path=args.csv, figure=args.figure, out_path=args.out,
            log_axes=args.log_axes,
        )
        path = render(spec)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
