"""Minimization, thickness sweeps, scaling fits and rigid alignment to the cone."""

from __future__ import annotations

import logging
import math
import os
import warnings
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import line_search

from .energy import energy_and_gradient, energy_breakdown, AxisymmetricPreconditioner
from .geometry import DEFAULT_CUTOFF, Params, ansatz_map, cone_map
from .mesh import (
    DeformationField,
    MeshError,
    build_mesh,
    compute_jets,
    sample_field,
)

log = logging.getLogger(__name__)

WORKERS_ENV = "DSHEET_WORKERS"


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_iter: int = 3000
    grad_tol: float = 1e-5
    stagnation_window: int = 25
    stagnation_tol: float = 1e-12
    max_line_search: int = 40
    precondition: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.max_iter < 0 or self.stagnation_window < 1:
            raise ValueError("max_iter >= 0 and stagnation_window >= 1 required")
        if self.grad_tol <= 0.0:
            raise ValueError("grad_tol must be positive")


@dataclass
class Trace:
    energies: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    iterations: int = 0
    status: str = "running"
    message: str = ""

    @property
    def final_energy(self) -> float:
        return self.energies[-1]


def lbfgs(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    config: OptimizerConfig,
    grad_stop: float,
    precond: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, Trace]:
    """Limited-memory BFGS (two-loop recursion) with a strong-Wolfe line search.

    Stops when ``max|grad| < grad_stop``, when the relative energy decrease over
    ``stagnation_window`` accepted steps drops below ``stagnation_tol``, or at
    ``max_iter``.  A failed line search first drops the curvature memory and
    retries along the steepest-descent direction; a second failure ends the run
    with the best iterate.  ``precond`` applies an approximate inverse Hessian
    (symmetric positive definite) and seeds the two-loop recursion.
    """
    x = np.array(x0, dtype=float).ravel()
    minv = precond
    cache: dict[str, object] = {}

    def evaluate(z: np.ndarray) -> tuple[float, np.ndarray]:
        key = cache.get("x")
        if key is not None and np.array_equal(key, z):
            return cache["f"], cache["g"]  # type: ignore[return-value]
        f, g = fun(z)
        g = np.asarray(g, dtype=float).ravel()
        if not math.isfinite(f):
            raise OptimizationError("non-finite energy encountered")
        cache.update(x=z.copy(), f=f, g=g)
        return f, g

    f, g = evaluate(x)
    trace = Trace(energies=[f], grad_norms=[float(np.max(np.abs(g)))])
    s_hist: deque[np.ndarray] = deque(maxlen=config.memory)
    y_hist: deque[np.ndarray] = deque(maxlen=config.memory)
    rho_hist: deque[float] = deque(maxlen=config.memory)

    if trace.grad_norms[-1] < grad_stop:
        trace.status = "converged"
        return x, trace

    retry = False
    for it in range(config.max_iter):
        q = g.copy()
        alphas = []
        for s_k, y_k, r_k in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a_k = r_k * (s_k @ q)
            alphas.append(a_k)
            q -= a_k * y_k
        if minv is not None:
            if s_hist:
                gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ minv(y_hist[-1]))
            else:
                gamma = 1.0
            q = gamma * minv(q)
        else:
            if s_hist:
                gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
            else:
                gamma = 1.0 / max(np.linalg.norm(g), 1e-300)
            q *= gamma
        for (s_k, y_k, r_k), a_k in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b_k = r_k * (y_k @ q)
            q += (a_k - b_k) * s_k
        p = -q
        slope = g @ p
        if not slope < 0.0:
            p = -g * (1.0 / max(np.linalg.norm(g), 1e-300)) if minv is None else -minv(g)
            slope = g @ p
            s_hist.clear(), y_hist.clear(), rho_hist.clear()

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            alpha, _, _, f_new, _, _ = line_search(
                lambda z: evaluate(z)[0],
                lambda z: evaluate(z)[1],
                x,
                p,
                gfk=g,
                old_fval=f,
                c1=config.c1,
                c2=config.c2,
                maxiter=config.max_line_search,
            )
        if alpha is None or f_new is None or f_new > f:
            if retry or not s_hist:
                trace.status = "line_search_failed"
                trace.message = f"line search failed at iteration {it}"
                log.warning(trace.message)
                break
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            retry = True
            continue
        retry = False
        x_new = x + alpha * p
        f_new, g_new = evaluate(x_new)
        s_k, y_k = x_new - x, g_new - g
        sy = s_k @ y_k
        if sy > 1e-12 * np.linalg.norm(s_k) * np.linalg.norm(y_k):
            s_hist.append(s_k)
            y_hist.append(y_k)
            rho_hist.append(1.0 / sy)
        x, f, g = x_new, f_new, g_new
        trace.energies.append(f)
        trace.grad_norms.append(float(np.max(np.abs(g))))
        trace.iterations = it + 1
        if trace.grad_norms[-1] < grad_stop:
            trace.status = "converged"
            break
        w = config.stagnation_window
        if len(trace.energies) > w:
            old = trace.energies[-1 - w]
            if (old - f) <= config.stagnation_tol * abs(old):
                trace.status = "stagnated"
                break
    else:
        trace.status = "max_iter"
    return x, trace


def minimize(
    initial: DeformationField, params: Params, config: OptimizerConfig = OptimizerConfig()
) -> tuple[DeformationField, Trace]:
    """Minimize the discrete energy starting from ``initial``."""
    mesh = initial.mesh
    if not mesh.matches(params):
        raise MeshError("initial field lives on a mesh built for other parameters")
    shape = initial.values.shape

    def fun(z: np.ndarray):
        return energy_and_gradient(DeformationField(mesh, z.reshape(shape)), params)

    precond = None
    if config.precondition:
        pc = AxisymmetricPreconditioner(mesh, params.h)

        def precond(v: np.ndarray) -> np.ndarray:
            return pc.solve(v.reshape(shape)).ravel()

    x, trace = lbfgs(fun, initial.values, config, config.grad_tol * params.h**2, precond)
    return DeformationField(mesh, x.reshape(shape)), trace


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class MeshSpec:
    n_radial: int = 256
    n_angular: int = 256
    r_inner_factor: float = 16.0


@dataclass
class SweepRecord:
    delta: float
    h: float
    total: float = math.nan
    membrane: float = math.nan
    bending_raw: float = math.nan
    iters: int = 0
    grad_norm: float = math.nan
    snapshot: str = ""
    ansatz_total: float = math.nan
    status: str = "pending"
    gate: bool = False
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error and math.isfinite(self.total)


@dataclass
class SweepResult:
    records: list[SweepRecord]
    c2: float = math.nan
    fields: dict[float, DeformationField] = field(default_factory=dict, repr=False)

    CSV_COLUMNS = ("delta", "h", "total", "membrane", "bending_raw", "iters", "grad_norm", "snapshot")

    def successful(self) -> list[SweepRecord]:
        return [r for r in self.records if r.ok]

    def to_rows(self) -> list[dict]:
        return [{k: getattr(r, k) for k in self.CSV_COLUMNS} for r in self.records]

    def to_json(self) -> dict:
        return {"c2": self.c2, "records": [asdict(r) for r in self.records]}


def ansatz_field(params: Params, mesh_spec: MeshSpec, cutoff=DEFAULT_CUTOFF) -> DeformationField:
    mesh = build_mesh(params, mesh_spec.n_radial, mesh_spec.n_angular, mesh_spec.r_inner_factor)
    return sample_field(lambda x: ansatz_map(x, params, cutoff), mesh)


def _run_one(args) -> tuple[SweepRecord, np.ndarray | None]:
    params, mesh_spec, config, snapshot_dir = args
    rec = SweepRecord(delta=params.delta, h=params.h)
    try:
        init = ansatz_field(params, mesh_spec)
        rec.ansatz_total = energy_breakdown(init, params).total
        fld, trace = minimize(init, params, config)
        eb = energy_breakdown(fld, params)
        rec.total, rec.membrane, rec.bending_raw = eb.total, eb.membrane, eb.bending_raw
        rec.iters, rec.grad_norm, rec.status = trace.iterations, trace.grad_norms[-1], trace.status
        if snapshot_dir is not None:
            from .snapshot import write_snapshot

            path = Path(snapshot_dir) / f"min_delta{params.delta:g}_h{params.h:g}.csv"
            write_snapshot(path, fld, params)
            rec.snapshot = str(path)
        return rec, fld.values
    except Exception as exc:  # one failed run must not end the sweep
        log.exception("sweep run failed for h=%s", params.h)
        rec.status, rec.error = "failed", f"{type(exc).__name__}: {exc}"
        return rec, None


def ansatz_constant(delta: float, h: float, total: float) -> float:
    """C with total = 2 pi delta^2 h^2 (log(1/h) + C)."""
    return total / (2.0 * math.pi * delta**2 * h**2) - math.log(1.0 / h)


def sweep(
    params_list: Sequence[Params],
    mesh_spec: MeshSpec = MeshSpec(),
    config: OptimizerConfig = OptimizerConfig(),
    snapshot_dir: str | Path | None = None,
    workers: int | None = None,
) -> SweepResult:
    """Minimize from the mollified cone for every thickness in ``params_list``."""
    deltas = {p.delta for p in params_list}
    if len(deltas) != 1:
        raise ValueError("all sweep entries must share one delta")
    hs = [p.h for p in params_list]
    if len(set(hs)) != len(hs):
        raise ValueError("thickness values must be distinct")
    ordered = sorted(params_list, key=lambda p: -p.h)
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    jobs = [(p, mesh_spec, config, snapshot_dir) for p in ordered]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_run_one, jobs))
    else:
        outs = [_run_one(j) for j in jobs]

    result = SweepResult(records=[o[0] for o in outs])
    for p, (rec, vals) in zip(ordered, outs):
        if vals is not None:
            mesh = build_mesh(p, mesh_spec.n_radial, mesh_spec.n_angular, mesh_spec.r_inner_factor)
            result.fields[p.h] = DeformationField(mesh, vals)
    consts = [
        ansatz_constant(r.delta, r.h, r.ansatz_total)
        for r in result.records
        if math.isfinite(r.ansatz_total)
    ]
    if consts:
        result.c2 = max(consts) + 1.0
        for r in result.records:
            if r.ok:
                bound = 2.0 * math.pi * r.delta**2 * r.h**2 * (math.log(1.0 / r.h) + result.c2)
                r.gate = r.total <= bound
    return result


# ---------------------------------------------------------------------------
# scaling fits


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    residuals: tuple[float, ...]
    exponent: float
    log_prefactor: float
    exponent_residuals: tuple[float, ...]
    target_slope: float

    @property
    def slope_deviation(self) -> float:
        return abs(self.slope - self.target_slope) / self.target_slope


def fit_scaling(h, total, membrane, delta: float) -> ScalingFit:
    """Least-squares fits  total/h^2 ~ a log(1/h) + b  and  log E_m ~ p log h + c."""
    h = np.asarray(h, dtype=float)
    total = np.asarray(total, dtype=float)
    membrane = np.asarray(membrane, dtype=float)
    if h.size < 3:
        raise ValueError("scaling fits need at least 3 points")
    x = np.log(1.0 / h)
    a_mat = np.column_stack([x, np.ones_like(x)])
    (a, b), *_ = np.linalg.lstsq(a_mat, total / h**2, rcond=None)
    res = total / h**2 - (a * x + b)
    lx = np.log(h)
    (p, c), *_ = np.linalg.lstsq(np.column_stack([lx, np.ones_like(lx)]), np.log(membrane), rcond=None)
    pres = np.log(membrane) - (p * lx + c)
    return ScalingFit(
        slope=float(a),
        intercept=float(b),
        residuals=tuple(float(v) for v in res),
        exponent=float(p),
        log_prefactor=float(c),
        exponent_residuals=tuple(float(v) for v in pres),
        target_slope=2.0 * math.pi * delta**2,
    )


def fit_sweep(result: SweepResult, delta: float) -> ScalingFit:
    ok = result.successful()
    if len(ok) < 3:
        raise ValueError("scaling fits need at least 3 successful records")
    return fit_scaling([r.h for r in ok], [r.total for r in ok], [r.membrane for r in ok], delta)


# ---------------------------------------------------------------------------
# rigid alignment


@dataclass(frozen=True)
class RigidMotion:
    R: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        err = np.abs(self.R.T @ self.R - np.eye(3)).max()
        if err > 1e-10:
            raise ValueError(f"R is not orthogonal (|R^T R - I| = {err:.2e})")

    def apply(self, y: np.ndarray) -> np.ndarray:
        return y @ self.R.T + self.b


def _annulus_weights(mesh, rho: float) -> np.ndarray:
    if not mesh.r_inner < rho < 1.0:
        raise MeshError(f"rho={rho} must lie in (r_inner, 1)")
    w = mesh.weights.copy()
    w[mesh.radii < rho] = 0.0
    return w


def procrustes_align(
    field: DeformationField, params: Params, rho: float, target: np.ndarray | None = None
) -> tuple[RigidMotion, DeformationField, float]:
    """Best O(3) motion (R, b) taking ``field`` onto the cone on |x| >= rho.

    Weighted Kabsch without the determinant correction: reflections are
    admissible because the energy only sees Dy^T Dy and |D^2 y|.
    """
    mesh = field.mesh
    w = _annulus_weights(mesh, rho).reshape(-1)
    y = field.values.reshape(-1, 3)
    t = (
        cone_map(mesh.points, params.delta) if target is None else np.asarray(target)
    ).reshape(-1, 3)
    wsum = w.sum()
    yc = (w @ y) / wsum
    tc = (w @ t) / wsum
    cov = (t - tc).T @ (w[:, None] * (y - yc))
    if np.linalg.matrix_rank(cov, tol=1e-12 * max(np.abs(cov).max(), 1e-300)) < 2:
        raise OptimizationError("degenerate cross-covariance (rank < 2)")
    u, _, vt = np.linalg.svd(cov)
    rot = u @ vt
    b = tc - rot @ yc
    motion = RigidMotion(rot, b)
    aligned = field.with_values(motion.apply(field.values))
    diff = aligned.values.reshape(-1, 3) - t
    dist = float(math.sqrt(max(w @ np.sum(diff * diff, axis=1), 0.0)))
    return motion, aligned, dist


def weighted_l2(field: DeformationField, params: Params, rho: float, motion: RigidMotion) -> float:
    """Weighted L2 distance between ``motion(field)`` and the cone on |x| >= rho."""
    mesh = field.mesh
    w = _annulus_weights(mesh, rho).reshape(-1)
    diff = motion.apply(field.values).reshape(-1, 3) - cone_map(mesh.points, params.delta).reshape(-1, 3)
    return float(math.sqrt(w @ np.sum(diff * diff, axis=1)))


def w22_distance(a: DeformationField, b: DeformationField, rho: float) -> float:
    """Discrete W^{2,2}(B_1 minus B_rho) distance: values, gradients and Hessians."""
    if a.mesh is not b.mesh and (
        a.mesh.shape != b.mesh.shape
        or a.mesh.r_inner != b.mesh.r_inner
    ):
        raise MeshError("fields live on different meshes")
    mesh = a.mesh
    w = _annulus_weights(mesh, rho)
    ja, jb = compute_jets(a), compute_jets(b)
    d0 = np.sum((a.values - b.values) ** 2, axis=-1)
    d1 = np.sum((ja.dy - jb.dy) ** 2, axis=(-2, -1))
    d2 = np.sum((ja.d2y - jb.d2y) ** 2, axis=(-3, -2, -1))
    return float(math.sqrt(np.sum(w * (d0 + d1 + d2))))


def aligned_cone_distance(field: DeformationField, params: Params, rho: float) -> tuple[float, float]:
    """(L2, W22) distances to the cone after Procrustes alignment on |x| >= rho."""
    _, aligned, l2 = procrustes_align(field, params, rho)
    cone = sample_field(lambda x: cone_map(x, params.delta), field.mesh)
    return l2, w22_distance(aligned, cone, rho)
