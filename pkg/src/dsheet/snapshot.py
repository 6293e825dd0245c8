"""Plain-text field snapshots.

Format::

    DSHEET1,<delta>,<h>,<n_radial>,<n_angular>
    r,theta,y1,y2,y3        (one row per node, radial index outer)

Numbers are written with 17 significant digits so that a write/read cycle
reproduces every value exactly.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .geometry import Params
from .mesh import DeformationField, PolarMesh, build_mesh

MAGIC = "DSHEET1"


class SnapshotError(ValueError):
    pass


def _fmt(x: float) -> str:
    return "%.17g" % x


def format_snapshot(field: DeformationField, params: Params) -> str:
    mesh = field.mesh
    lines = [",".join([MAGIC, _fmt(params.delta), _fmt(params.h), str(mesh.n_radial), str(mesh.n_angular)])]
    r = np.broadcast_to(mesh.radii[:, None], mesh.shape)
    th = np.broadcast_to(mesh.theta[None, :], mesh.shape)
    vals = field.values
    for i in range(mesh.n_radial):
        for j in range(mesh.n_angular):
            y = vals[i, j]
            lines.append(",".join(_fmt(v) for v in (r[i, j], th[i, j], y[0], y[1], y[2])))
    return "\n".join(lines) + "\n"


def write_snapshot(path, field: DeformationField, params: Params) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_snapshot(field, params))
    return path


def parse_snapshot(text: str, expect: Params | None = None) -> tuple[DeformationField, Params]:
    lines = text.splitlines()
    if not lines:
        raise SnapshotError("empty snapshot")
    head = lines[0].split(",")
    if len(head) != 5 or head[0] != MAGIC:
        raise SnapshotError(f"malformed header: {lines[0]!r}")
    try:
        delta, h = float(head[1]), float(head[2])
        nr, nt = int(head[3]), int(head[4])
    except ValueError as exc:
        raise SnapshotError(f"malformed header: {lines[0]!r}") from exc
    try:
        params = Params(delta, h)
    except ValueError as exc:
        raise SnapshotError(f"header: {exc}") from exc
    if expect is not None and (expect.delta != delta or expect.h != h):
        raise SnapshotError(
            f"snapshot header (delta={delta}, h={h}) does not match config "
            f"(delta={expect.delta}, h={expect.h})"
        )
    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    rows = np.empty((nr * nt, 5))
    for k in range(nr * nt):
        lineno = k + 2
        if k >= len(body):
            raise SnapshotError(f"row {lineno}: missing (expected {nr * nt} data rows, got {len(body)})")
        parts = body[k].split(",")
        if len(parts) != 5:
            raise SnapshotError(f"row {lineno}: expected 5 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise SnapshotError(f"row {lineno}: unparsable number") from exc
        if not all(math.isfinite(v) for v in vals):
            raise SnapshotError(f"row {lineno}: non-finite value")
        rows[k] = vals
    if len(body) > nr * nt:
        raise SnapshotError(f"row {nr * nt + 2}: extra data beyond {nr * nt} rows")

    r_inner = rows[0, 0]
    if not 0.0 < r_inner < 1.0:
        raise SnapshotError(f"row 2: inner radius {r_inner} out of range")
    # validates counts; the exact inner radius is then taken from the file
    try:
        build_mesh(params, nr, nt, r_inner_factor=h / r_inner)
    except ValueError as exc:
        raise SnapshotError(f"header: {exc}") from exc
    mesh = PolarMesh(r_inner, nr, nt, delta, h)
    grid = rows.reshape(nr, nt, 5)
    r_ok = np.allclose(grid[..., 0], mesh.radii[:, None], rtol=1e-13, atol=0.0)
    t_ok = np.allclose(grid[..., 1], mesh.theta[None, :], rtol=0.0, atol=1e-13)
    if not (r_ok and t_ok):
        bad = np.argwhere(
            ~np.isclose(grid[..., 0], mesh.radii[:, None], rtol=1e-13, atol=0.0)
            | ~np.isclose(grid[..., 1], mesh.theta[None, :], rtol=0.0, atol=1e-13)
        )[0]
        raise SnapshotError(f"row {bad[0] * nt + bad[1] + 2}: node coordinates do not match the mesh")
    return DeformationField(mesh, grid[..., 2:].copy()), params


def read_snapshot(path, expect: Params | None = None) -> tuple[DeformationField, Params]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SnapshotError(f"cannot read {path}: {exc}") from exc
    return parse_snapshot(text, expect)
