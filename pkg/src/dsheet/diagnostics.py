"""Curvature and inequality diagnostics on discrete fields.

The linearized Gauss curvature of a map y is ``sum_i det D^2 y_i``.  Its mass on
a disk is measured through the boundary flux

    int_{B_r} det D^2 u = 1/2 int_{dB_r} xhat . cof(D^2 u) grad u,

which is how the excised inner disk of the mesh is accounted for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Params
from .mesh import (
    DeformationField,
    JetField,
    MeshError,
    PolarMesh,
    check_radius,
    compute_jets,
    integrate_region,
    integrate_ring,
    membrane_density,
    nodal_jets,
)

NORMS = ("frobenius", "tangential")


def _components(jets: JetField) -> tuple[np.ndarray, np.ndarray]:
    """Views with an explicit component axis: dy (nr, nt, k, 2), d2y (nr, nt, k, 2, 2)."""
    dy, d2y = jets.dy, jets.d2y
    if d2y.ndim == 4:
        return dy[:, :, None], d2y[:, :, None]
    return dy, d2y


def _det(d2y: np.ndarray) -> np.ndarray:
    return d2y[..., 0, 0] * d2y[..., 1, 1] - d2y[..., 0, 1] * d2y[..., 1, 0]


def hessian_det_density(jets: JetField) -> np.ndarray:
    """Nodal sum over components of det D^2 y_i, shape (nr, nt)."""
    _, d2y = _components(jets)
    return _det(d2y).sum(axis=2)


def _flux_density(mesh: PolarMesh, dy: np.ndarray, d2y: np.ndarray) -> np.ndarray:
    """xhat . cof(D^2 u) grad u, summed over the component axis 2."""
    c = np.cos(mesh.theta)[None, :, None]
    s = np.sin(mesh.theta)[None, :, None]
    g1, g2 = dy[..., 0], dy[..., 1]
    h11, h12, h22 = d2y[..., 0, 0], d2y[..., 0, 1], d2y[..., 1, 1]
    q = c * (h22 * g1 - h12 * g2) + s * (h11 * g2 - h12 * g1)
    return q.sum(axis=2)


def excised_mass(jets: JetField) -> float:
    """Curvature mass of the disk |x| < r_inner, from the flux through the inner ring."""
    mesh = jets.mesh
    dy, d2y = _components(jets)
    q = _flux_density(mesh, dy[:1], d2y[:1])
    return float(0.5 * q.sum() * mesh.r_inner * mesh.dtheta)


def flux_mass(jets: JetField, r: float) -> float:
    """Curvature mass of B_r from the flux through |x| = r alone."""
    mesh = jets.mesh
    check_radius(mesh, r)
    dy, d2y = _components(jets)
    return 0.5 * integrate_ring(_flux_density(mesh, dy, d2y), mesh, r)


def hessian_det_integral(jets: JetField, r: float) -> float:
    """int_{B_r} sum_i det D^2 y_i: inner-disk flux plus the area integral on the annulus."""
    mesh = jets.mesh
    check_radius(mesh, r)
    mass = excised_mass(jets)
    if r <= mesh.r_inner * (1.0 + 1e-12):
        return mass
    return mass + integrate_region(hessian_det_density(jets), mesh, mesh.r_inner, min(r, 1.0))


# ---------------------------------------------------------------------------
# test function and pairing


@dataclass(frozen=True)
class TestFunctionPhi:
    """Phi = log(R/h0) on B_h0, log(R/|x|) on h0 < |x| <= R, 0 outside.

    D^2 Phi splits into the absolutely continuous part -(Id - 2 xhat xhat)/|x|^2
    on the annulus plus ring measures -(1/h0) xhat xhat on |x| = h0 and
    +(1/R) xhat xhat on |x| = R.
    """

    __test__ = False  # not a pytest class

    h0: float
    R: float

    def __post_init__(self) -> None:
        if not 0.0 < self.h0 < self.R:
            raise ValueError(f"need 0 < h0 < R, got h0={self.h0}, R={self.R}")

    @property
    def plateau(self) -> float:
        return math.log(self.R / self.h0)

    def value(self, x) -> np.ndarray:
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return np.log(self.R / np.clip(r, self.h0, self.R))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        r = np.sqrt(r2)
        inside = (r > self.h0) & (r < self.R)
        return np.where(inside[..., None], -x / np.where(r2 > 0, r2, 1.0)[..., None], 0.0)

    def hessian_ac(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        r = np.sqrt(r2)
        inside = (r > self.h0) & (r < self.R)
        safe = np.where(r2 > 0, r2, 1.0)
        xx = x[..., :, None] * x[..., None, :] / safe[..., None, None]
        out = -(np.eye(2) - 2.0 * xx) / safe[..., None, None]
        return np.where(inside[..., None, None], out, 0.0)

    def ring_weights(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """((radius, coefficient of xhat xhat), ...) for the two ring measures."""
        return ((self.h0, -1.0 / self.h0), (self.R, 1.0 / self.R))


def pair_weak_form(field: DeformationField, params: Params, phi: TestFunctionPhi) -> tuple[float, float]:
    """Both sides of  int sum det D^2 y_i Phi - pi delta^2 Phi(0) = -1/2 int (g_y - g_delta) : cof D^2 Phi."""
    mesh = field.mesh
    for r in (phi.h0, phi.R):
        check_radius(mesh, r)
    if phi.R >= 1.0:
        raise MeshError("Phi must be supported inside the unit disk")
    if phi.h0 <= mesh.r_inner:
        raise MeshError("Phi plateau radius must exceed the inner mesh radius")
    jets = compute_jets(field)
    det = hessian_det_density(jets)
    plateau = phi.plateau
    r = mesh.radii[:, None]
    inner = excised_mass(jets) + integrate_region(det, mesh, mesh.r_inner, phi.h0)
    lhs = plateau * inner + integrate_region(det * np.log(phi.R / r), mesh, phi.h0, phi.R)
    lhs -= math.pi * params.delta**2 * plateau

    gdiff = jets.metric - mesh.reference_metric
    c = np.cos(mesh.theta)[None, :]
    s = np.sin(mesh.theta)[None, :]
    # G : xhat xhat and G : xhatperp xhatperp
    g_rr = c * c * gdiff[..., 0, 0] + 2.0 * c * s * gdiff[..., 0, 1] + s * s * gdiff[..., 1, 1]
    g_tt = s * s * gdiff[..., 0, 0] - 2.0 * c * s * gdiff[..., 0, 1] + c * c * gdiff[..., 1, 1]
    area = integrate_region((g_tt - g_rr) / r**2, mesh, phi.h0, phi.R)
    ring_r = integrate_ring(g_tt, mesh, phi.R) / phi.R
    ring_h0 = integrate_ring(g_tt, mesh, phi.h0) / phi.h0
    rhs = -0.5 * (area + ring_r - ring_h0)
    return float(lhs), float(rhs)


def weak_form_error(lhs: float, rhs: float) -> float:
    return abs(lhs - rhs) / (abs(lhs) + abs(rhs) + 1.0)


# ---------------------------------------------------------------------------
# inequalities


def _scalar_jets(mesh: PolarMesh, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jets of nodal scalars v (nr, nt) or a batch (nr, nt, k), with a component axis."""
    v = np.asarray(v, dtype=float)
    if v.shape[:2] != mesh.shape or v.ndim > 3:
        raise MeshError("scalar field does not match mesh")
    batch = v.ndim == 3
    vv = v if batch else v[..., None]
    dy, d2y = nodal_jets(mesh, vv)
    return dy, d2y, batch


def _ring_norm(mesh: PolarMesh, d2y: np.ndarray, norm: str) -> np.ndarray:
    if norm == "frobenius":
        return np.sqrt(np.sum(d2y * d2y, axis=(-2, -1)))
    if norm == "tangential":
        c = np.cos(mesh.theta)[None, :, None]
        s = np.sin(mesh.theta)[None, :, None]
        t1 = -s * d2y[..., 0, 0] + c * d2y[..., 0, 1]
        t2 = -s * d2y[..., 1, 0] + c * d2y[..., 1, 1]
        return np.sqrt(t1 * t1 + t2 * t2)
    raise ValueError(f"norm must be one of {NORMS}")


def isoper_check(mesh: PolarMesh, v, r: float, norm: str = "frobenius"):
    """(int_{dB_r} |D^2 v|, sqrt(4 pi |int_{B_r} det D^2 v|)) for nodal scalars v.

    ``v`` may carry a trailing batch axis, in which case arrays are returned.
    ``norm="tangential"`` uses |D^2 v xhatperp|, the speed of grad v along the
    circle, which is the sharp form of the inequality.
    """
    check_radius(mesh, r)
    dy, d2y, batch = _scalar_jets(mesh, v)
    dens = _ring_norm(mesh, d2y, norm)
    det = _det(d2y)
    lhs, rhs = [], []
    for j in range(dens.shape[2]):
        lhs.append(integrate_ring(dens[:, :, j], mesh, r))
        q = _flux_density(mesh, dy[:, :, j : j + 1], d2y[:, :, j : j + 1])
        mass = 0.5 * float(q[0].sum()) * mesh.r_inner * mesh.dtheta
        if r > mesh.r_inner * (1.0 + 1e-12):
            mass += integrate_region(det[:, :, j], mesh, mesh.r_inner, r)
        rhs.append(math.sqrt(4.0 * math.pi * abs(mass)))
    if batch:
        return np.array(lhs), np.array(rhs)
    return lhs[0], rhs[0]


def ring_bound_check(jets: JetField, r: float) -> tuple[float, float]:
    """(int_{dB_r} |D^2 y|^2, (2/r) |int_{B_r} sum det D^2 y_i|)."""
    mesh = jets.mesh
    check_radius(mesh, r)
    _, d2y = _components(jets)
    bend = np.sum(d2y * d2y, axis=(-3, -2, -1))
    lhs = integrate_ring(bend, mesh, r)
    rhs = 2.0 / r * abs(hessian_det_integral(jets, r))
    return float(lhs), float(rhs)


# ---------------------------------------------------------------------------
# slice selection


@dataclass(frozen=True)
class SliceSelection:
    h0: float
    R0: float
    membrane_h0: float
    membrane_R0: float


def _scan(mesh: PolarMesh, dens: np.ndarray, lo: float, hi: float) -> tuple[float, float]:
    check_radius(mesh, lo)
    check_radius(mesh, hi)
    radii = mesh.radii
    cand = [lo] + [float(x) for x in radii[(radii > lo) & (radii < hi)]] + [hi]
    vals = [integrate_ring(dens, mesh, x) for x in cand]
    best = min(vals)
    tol = 1e-12 * (1.0 + abs(best))
    k = next(i for i, v in enumerate(vals) if v <= best + tol)
    return cand[k], vals[k]


def select_slices(field: DeformationField, params: Params, R: float) -> SliceSelection:
    """Radii h0 in [h, 2h] and R0 in [R - h, R] minimizing the ring membrane integral."""
    mesh = field.mesh
    h = params.h
    if not (mesh.r_inner <= h and 2.0 * h <= 1.0 and mesh.r_inner <= R - h and R <= 1.0):
        raise MeshError(f"slice intervals [h, 2h] or [R-h, R] leave the mesh (h={h}, R={R})")
    dens = membrane_density(compute_jets(field))
    h0, m0 = _scan(mesh, dens, h, 2.0 * h)
    r0, m1 = _scan(mesh, dens, R - h, R)
    return SliceSelection(h0=h0, R0=r0, membrane_h0=m0, membrane_R0=m1)


# ---------------------------------------------------------------------------
# report


@dataclass
class CurvatureReport:
    density_profile: list[tuple[float, float]]
    cumulative: list[tuple[float, float]]
    a_lhs: float
    a_rhs: float
    ring_ratios: list[tuple[float, float]]
    phi: tuple[float, float] = (0.0, 0.0)
    density: np.ndarray | None = field(default=None, repr=False)

    @property
    def a_error(self) -> float:
        return weak_form_error(self.a_lhs, self.a_rhs)

    def to_json(self) -> dict:
        return {
            "density_profile": [list(p) for p in self.density_profile],
            "cumulative": [list(p) for p in self.cumulative],
            "A": {"lhs": self.a_lhs, "rhs": self.a_rhs, "rel_error": self.a_error},
            "phi": {"h0": self.phi[0], "R": self.phi[1]},
            "ring_ratios": [[r, v if math.isfinite(v) else None] for r, v in self.ring_ratios],
        }


def curvature_report(
    field: DeformationField, params: Params, radii, phi: TestFunctionPhi | None = None
) -> CurvatureReport:
    mesh = field.mesh
    jets = compute_jets(field)
    dens = hessian_det_density(jets)
    if phi is None:
        phi = TestFunctionPhi(2.0 * params.h, 0.5)
    lhs, rhs = pair_weak_form(field, params, phi)
    cum, ratios = [], []
    for r in radii:
        r = float(r)
        cum.append((r, hessian_det_integral(jets, r)))
        a, b = ring_bound_check(jets, r)
        ratios.append((r, a / b if b > 0 else float("nan")))
    profile = [(float(r), float(v)) for r, v in zip(mesh.radii, dens.mean(axis=1))]
    return CurvatureReport(profile, cum, lhs, rhs, ratios, (phi.h0, phi.R), dens)
