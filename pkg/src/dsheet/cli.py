"""Batch command line: ``dsheet {ansatz,minimize,sweep,diagnose,align,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import report as rep
from .config import ConfigError, RunConfig, load_config, override
from .diagnostics import (
    TestFunctionPhi,
    curvature_report,
    ring_bound_check,
    select_slices,
)
from .energy import bending_profile, energy_breakdown
from .geometry import Params
from .mesh import compute_jets
from .optimize import (
    SweepResult,
    aligned_cone_distance,
    ansatz_constant,
    ansatz_field,
    fit_scaling,
    fit_sweep,
    minimize,
    procrustes_align,
    sweep,
)
from .snapshot import SnapshotError, read_snapshot, write_snapshot

log = logging.getLogger("dsheet")

COMMANDS = ("ansatz", "minimize", "sweep", "diagnose", "align", "report")
ANSATZ_COLUMNS = ("delta", "h", "total", "membrane", "bending_raw", "constant")
TRACE_COLUMNS = ("iteration", "energy", "grad_norm")


class RunError(RuntimeError):
    pass


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep.write_json(out / "config.resolved.json", cfg.to_json())
    return out


def _fit_json(fit) -> dict:
    return {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "target_slope": fit.target_slope,
        "slope_deviation": fit.slope_deviation,
        "residuals": list(fit.residuals),
        "membrane_exponent": fit.exponent,
        "membrane_log_prefactor": fit.log_prefactor,
        "membrane_residuals": list(fit.exponent_residuals),
    }


def cmd_ansatz(cfg: RunConfig) -> dict:
    out = _out(cfg)
    rows = []
    for p in cfg.params():
        eb = energy_breakdown(ansatz_field(p, cfg.mesh), p)
        rows.append(
            {
                "delta": p.delta,
                "h": p.h,
                "total": eb.total,
                "membrane": eb.membrane,
                "bending_raw": eb.bending_raw,
                "constant": ansatz_constant(p.delta, p.h, eb.total),
            }
        )
    rep.write_csv(out / "ansatz.csv", rows, ANSATZ_COLUMNS)
    summary = {"command": "ansatz", "rows": rows}
    if len(rows) >= 3:
        fit = fit_scaling([r["h"] for r in rows], [r["total"] for r in rows], [r["membrane"] for r in rows], cfg.delta)
        summary["fit"] = _fit_json(fit)
    rep.write_json(out / "ansatz.json", summary)
    return summary


def cmd_minimize(cfg: RunConfig) -> dict:
    out = _out(cfg)
    results = []
    for p in cfg.params():
        init = ansatz_field(p, cfg.mesh)
        e0 = energy_breakdown(init, p).total
        fld, trace = minimize(init, p, cfg.optimizer)
        eb = energy_breakdown(fld, p)
        snap = write_snapshot(out / f"min_delta{p.delta:g}_h{p.h:g}.csv", fld, p)
        trace_rows = [
            {"iteration": k, "energy": e, "grad_norm": g}
            for k, (e, g) in enumerate(zip(trace.energies, trace.grad_norms))
        ]
        rep.write_csv(out / f"trace_delta{p.delta:g}_h{p.h:g}.csv", trace_rows, TRACE_COLUMNS)
        results.append(
            {
                "delta": p.delta,
                "h": p.h,
                "total": eb.total,
                "membrane": eb.membrane,
                "bending_raw": eb.bending_raw,
                "iters": trace.iterations,
                "grad_norm": trace.grad_norms[-1],
                "snapshot": str(snap),
                "initial_total": e0,
                "status": trace.status,
            }
        )
    rep.write_csv(out / "minimize.csv", results, SweepResult.CSV_COLUMNS)
    summary = {"command": "minimize", "runs": results}
    rep.write_json(out / "minimize.json", summary)
    return summary


def cmd_sweep(cfg: RunConfig) -> dict:
    out = _out(cfg)
    res = sweep(cfg.params(), cfg.mesh, cfg.optimizer, snapshot_dir=out)
    rep.write_csv(out / "sweep.csv", res.to_rows(), SweepResult.CSV_COLUMNS)
    summary = {"command": "sweep", **res.to_json()}
    if len(res.successful()) >= 3:
        summary["fit"] = _fit_json(fit_sweep(res, cfg.delta))
    rep.write_json(out / "sweep.json", _finite(summary))
    failed = [r for r in res.records if not r.ok]
    if failed:
        summary["failed"] = [{"h": r.h, "error": r.error} for r in failed]
    return summary


def _load(cfg: RunConfig):
    if not cfg.snapshot:
        raise RunError("this command needs a snapshot (--snapshot or config 'snapshot')")
    fld, params = read_snapshot(cfg.snapshot)
    if params.delta != cfg.delta:
        raise SnapshotError(f"snapshot delta {params.delta} does not match config delta {cfg.delta}")
    return fld, params


def cmd_diagnose(cfg: RunConfig) -> dict:
    out = _out(cfg)
    fld, params = _load(cfg)
    d = cfg.diagnostics
    phi = TestFunctionPhi(2.0 * params.h, d.phi_R)
    cr = curvature_report(fld, params, d.radii, phi)
    jets = compute_jets(fld)
    sl = select_slices(fld, params, d.slice_R)
    prof = bending_profile(fld, d.profile_radii, jets)
    eb = energy_breakdown(fld, params)
    summary = {
        "command": "diagnose",
        "delta": params.delta,
        "h": params.h,
        "energy": {"total": eb.total, "membrane": eb.membrane, "bending_raw": eb.bending_raw},
        "curvature": cr.to_json(),
        "ring_bound": [[r, *ring_bound_check(jets, r)] for r in d.radii],
        "slices": {"h0": sl.h0, "R0": sl.R0, "membrane_h0": sl.membrane_h0, "membrane_R0": sl.membrane_R0},
        "bending_profile": [[r, v] for r, v in zip(d.profile_radii, prof)],
    }
    rep.write_json(out / "diagnose.json", _finite(summary))
    return summary


def cmd_align(cfg: RunConfig) -> dict:
    out = _out(cfg)
    fld, params = _load(cfg)
    rho = cfg.diagnostics.rho
    motion, aligned, l2 = procrustes_align(fld, params, rho)
    _, w22 = aligned_cone_distance(fld, params, rho)
    summary = {
        "command": "align",
        "delta": params.delta,
        "h": params.h,
        "rho": rho,
        "l2_distance": l2,
        "w22_distance": w22,
        "R": motion.R.tolist(),
        "b": motion.b.tolist(),
    }
    rep.write_json(out / "align.json", summary)
    return summary


def cmd_report(cfg: RunConfig) -> dict:
    out = Path(cfg.output_dir)
    src = out / "sweep.csv"
    if not src.is_file():
        raise rep.ReportError(f"no sweep results at {src}")
    rows = [r for r in rep.read_csv(src) if r.get("total") not in (None, "", "nan")]
    rows = [r for r in rows if math.isfinite(float(r["total"]))]
    if not rows:
        raise rep.ReportError(f"{src} holds no successful runs")
    rows.sort(key=lambda r: -float(r["h"]))
    delta = float(rows[0]["delta"])
    hs = [float(r["h"]) for r in rows]
    totals = [float(r["total"]) for r in rows]
    d = cfg.diagnostics

    # compute every figure before writing any file
    l2s, w22s, profile = [], [], None
    for r in rows:
        if not r["snapshot"]:
            raise rep.ReportError(f"run h={r['h']} has no snapshot")
        fld, params = read_snapshot(r["snapshot"])
        a, b = aligned_cone_distance(fld, params, d.rho)
        l2s.append(a)
        w22s.append(b)
        if params.h == min(hs):
            profile = (params.h, bending_profile(fld, d.profile_radii))
    svgs = {
        "energy_scaling.svg": rep.energy_scaling_svg(delta, hs, totals),
        "bending_profile.svg": rep.bending_profile_svg(delta, profile[0], d.profile_radii, profile[1]),
        "aligned_distance.svg": rep.distance_svg(hs, l2s, w22s, d.rho),
    }
    for name, text in svgs.items():
        (out / name).write_text(text)
    summary = {
        "command": "report",
        "delta": delta,
        "h": hs,
        "E_over_h2": [e / h**2 for e, h in zip(totals, hs)],
        "l2_distance": l2s,
        "w22_distance": w22s,
        "figures": sorted(svgs),
    }
    if len(rows) >= 3:
        fit = fit_scaling(hs, totals, [float(r["membrane"]) for r in rows], delta)
        summary["fit"] = _fit_json(fit)
    rep.write_json(out / "report.json", summary)
    return summary


HANDLERS = {
    "ansatz": cmd_ansatz,
    "minimize": cmd_minimize,
    "sweep": cmd_sweep,
    "diagnose": cmd_diagnose,
    "align": cmd_align,
    "report": cmd_report,
}


def _finite(obj):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsheet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--delta", type=float)
        p.add_argument("--h", dest="h_list", type=float, nargs="+")
        p.add_argument("--n-radial", type=int)
        p.add_argument("--n-angular", type=int)
        p.add_argument("--out", dest="output_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--snapshot")
    return parser


def run(cfg: RunConfig, command: str) -> dict:
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    return HANDLERS[command](cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = override(
            cfg,
            delta=args.delta,
            h_list=args.h_list,
            n_radial=args.n_radial,
            n_angular=args.n_angular,
            output_dir=args.output_dir,
            seed=args.seed,
            snapshot=args.snapshot,
        )
        summary = run(cfg, args.command)
    except (ConfigError, SnapshotError, RunError, rep.ReportError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 2
    except Exception as exc:  # last-resort guard, still machine readable
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    print(json.dumps(_finite(summary), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
