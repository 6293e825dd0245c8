"""CSV/JSON artifacts and data-complete SVG plots."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams["svg.hashsalt"] = "dsheet"


class ReportError(RuntimeError):
    pass


def write_csv(path, rows: Sequence[dict], columns: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(row.get(k, "")) for k in columns})
    return path


def _cell(v):
    if isinstance(v, float):
        return "%.17g" % v
    return v


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def _data_comment(columns: Sequence[str], rows: Sequence[Sequence[float]]) -> str:
    buf = io.StringIO()
    buf.write("<!-- dsheet-data\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join("%.17g" % v for v in row) + "\n")
    buf.write("-->\n")
    return buf.getvalue()


def render_svg(
    series: dict[str, tuple[Sequence[float], Sequence[float]]],
    xlabel: str,
    ylabel: str,
    title: str,
    data_columns: Sequence[str],
    data_rows: Sequence[Sequence[float]],
    styles: dict[str, str] | None = None,
) -> str:
    """An SVG line plot whose data table is embedded as an XML comment."""
    styles = styles or {}
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    try:
        for label, (xs, ys) in series.items():
            ax.plot(xs, ys, styles.get(label, "o-"), label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.grid(alpha=0.3)
        ax.legend()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    svg = buf.getvalue()
    comment = _data_comment(data_columns, data_rows)
    cut = svg.index("?>") + 2 if svg.startswith("<?xml") else 0
    return svg[:cut] + "\n" + comment + svg[cut:].lstrip("\n")


def embedded_data(svg_text: str) -> list[list[str]]:
    """Recover the table embedded by :func:`render_svg`."""
    start = svg_text.index("<!-- dsheet-data\n") + len("<!-- dsheet-data\n")
    end = svg_text.index("-->", start)
    return [line.split(",") for line in svg_text[start:end].strip().splitlines()]


def energy_scaling_svg(delta: float, h: Sequence[float], total: Sequence[float]) -> str:
    x = [math.log(1.0 / v) for v in h]
    y = [e / v**2 for e, v in zip(total, h)]
    slope = 2.0 * math.pi * delta**2
    off = sum(b - slope * a for a, b in zip(x, y)) / len(x)
    ref = [slope * a + off for a in x]
    return render_svg(
        {"minimized": (x, y), f"slope 2 pi delta^2 = {slope:.4f}": (x, ref)},
        "log(1/h)",
        "E / h^2",
        f"energy scaling, delta = {delta:g}",
        ["log_inv_h", "E_over_h2", "reference"],
        list(zip(x, y, ref)),
        {f"slope 2 pi delta^2 = {slope:.4f}": "--"},
    )


def bending_profile_svg(delta: float, h: float, radii: Sequence[float], profile: Sequence[float]) -> str:
    x = [math.log(1.0 / r) for r in radii]
    ref = [2.0 * math.pi * delta**2 * a for a in x]
    return render_svg(
        {"int_{R<|x|<1} |D^2 y|^2": (x, list(profile)), "2 pi delta^2 log(1/R)": (x, ref)},
        "log(1/R)",
        "bending outside B_R",
        f"bending profile, delta = {delta:g}, h = {h:g}",
        ["log_inv_R", "bending", "reference"],
        list(zip(x, profile, ref)),
        {"2 pi delta^2 log(1/R)": "--"},
    )


def distance_svg(h: Sequence[float], l2: Sequence[float], w22: Sequence[float], rho: float) -> str:
    return render_svg(
        {"aligned L2": (list(h), list(l2)), "aligned W22": (list(h), list(w22))},
        "h",
        f"distance to cone on |x| > {rho:g}",
        "convergence to the cone",
        ["h", "l2", "w22"],
        list(zip(h, l2, w22)),
    )
