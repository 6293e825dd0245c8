"""Log-polar grid on the punctured unit disk.

Nodes sit at ``(r_i, theta_j)`` with ``log r`` uniform from ``r_inner`` to 1
and ``theta`` uniform and periodic.  Derivatives are taken in ``(s, theta)``
with ``s = log r`` and mapped to Cartesian ones by the polar chain rule.

The stencils are *fitted* rather than polynomial: radial weights reproduce
``1, r, r^2`` (and ``r^3`` at the boundary rows) exactly, angular weights
reproduce the Fourier modes ``0, 1, 2``.  Every quadratic polynomial in
``x`` is therefore differentiated without truncation error, and the schemes
are second order in ``s`` and fourth order in ``theta`` on smooth data.

Quadrature interpolates a nodal density on each radial cell in the span of
``{1, r^-2}`` (fitted to the two end values) and integrates that exactly
against ``r dr``.  Constant and ``1/r^2`` densities, the two that matter for a
cone, are integrated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import mpmath
import numpy as np
import scipy.sparse as sp

from .geometry import Params, polar_chain, reference_metric_polar


class MeshError(ValueError):
    pass


# ---------------------------------------------------------------------------
# fitted stencils


def exp_stencil(offsets, ds: float, order: int) -> np.ndarray:
    """Weights w_k with sum_k w_k f(k ds) = f^(order)(0) for f = e^{m s}, m < len(offsets).

    The exponential Vandermonde system is badly conditioned for small ``ds``,
    so it is solved in extended precision.
    """
    with mpmath.workdps(60):
        offs = [mpmath.mpf(int(k)) for k in offsets]
        h = mpmath.mpf(ds)
        n = len(offs)
        mat = mpmath.matrix(n, n)
        rhs = mpmath.matrix(n, 1)
        for m in range(n):
            rhs[m] = mpmath.mpf(m) ** order
            for j, k in enumerate(offs):
                mat[m, j] = mpmath.exp(m * k * h)
        w = mpmath.lu_solve(mat, rhs)
        return np.array([float(w[j]) for j in range(n)])


def trig_stencil(offsets, dt: float, order: int) -> np.ndarray:
    """Weights exact for 1, cos(k t), sin(k t), k = 1..(n-1)/2 on symmetric offsets."""
    offsets = np.asarray(offsets, dtype=float)
    n = offsets.size
    rows, rhs = [np.ones(n)], [1.0 if order == 0 else 0.0]
    for k in range(1, (n - 1) // 2 + 1):
        rows.append(np.cos(k * offsets * dt))
        rows.append(np.sin(k * offsets * dt))
        # derivatives of cos(k t), sin(k t) at t = 0
        dc = {0: 1.0, 1: 0.0, 2: -(k**2)}[order]
        ds_ = {0: 0.0, 1: float(k), 2: 0.0}[order]
        rhs += [dc, ds_]
    return np.linalg.solve(np.array(rows), np.array(rhs))


RADIAL_HALF_WIDTH = 3
ANGULAR_OFFSETS = np.arange(-2, 3)


def radial_operator(n: int, ds: float, order: int, half: int = RADIAL_HALF_WIDTH) -> sp.csr_matrix:
    """Banded s-derivative matrix: centred rows, one-sided rows of equal width near the ends."""
    width = 2 * half + 1
    if n < width:
        raise MeshError(f"need at least {width} radial nodes for the stencil")
    cache: dict[tuple[int, ...], np.ndarray] = {}
    rows, cols, vals = [], [], []
    for i in range(n):
        if i < half:
            offs = tuple(range(-i, -i + width))
        elif i > n - 1 - half:
            offs = tuple(range(n - i - width, n - i))
        else:
            offs = tuple(range(-half, half + 1))
        if offs not in cache:
            cache[offs] = exp_stencil(offs, ds, order)
        w = cache[offs]
        rows += [i] * width
        cols += [i + k for k in offs]
        vals += list(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


class PolarDifferentiator:
    """Cartesian first/second derivatives of nodal data and their exact adjoint.

    Polar derivatives are formed axis by axis (banded matrix in ``s``, periodic
    stencil in ``theta``) and combined with the chain-rule coefficients of the
    nodes.  :meth:`adjoint` is the transpose of :meth:`forward`.
    """

    def __init__(self, mesh: "PolarMesh") -> None:
        nr, nt = mesh.shape
        if nt < ANGULAR_OFFSETS.size:
            raise MeshError("too few angular nodes for the stencil")
        self.shape = (nr, nt)
        self.d_s = radial_operator(nr, mesh.ds, 1)
        self.d_ss = radial_operator(nr, mesh.ds, 2)
        self.d_s_t = self.d_s.T.tocsr()
        self.d_ss_t = self.d_ss.T.tocsr()
        self.w_t = trig_stencil(ANGULAR_OFFSETS, mesh.dtheta, 1)
        self.w_tt = trig_stencil(ANGULAR_OFFSETS, mesh.dtheta, 2)
        self.c = np.cos(mesh.theta)[None, :, None]
        self.s = np.sin(mesh.theta)[None, :, None]
        self.ir = (1.0 / mesh.radii)[:, None, None]

    def _radial(self, mat, u):
        nr = self.shape[0]
        return (mat @ u.reshape(nr, -1)).reshape(u.shape)

    @staticmethod
    def _angular(w, u, sign: int = -1):
        out = np.zeros_like(u)
        for o, wk in zip(ANGULAR_OFFSETS, w):
            out += wk * np.roll(u, sign * int(o), axis=1)
        return out

    def forward(self, u: np.ndarray):
        """u: (nr, nt, k) -> (d1, d2, h11, h12, h22), each (nr, nt, k)."""
        c, s, ir = self.c, self.s, self.ir
        us = self._radial(self.d_s, u)
        uss = self._radial(self.d_ss, u)
        ut = self._angular(self.w_t, u)
        utt = self._angular(self.w_tt, u)
        ust = self._angular(self.w_t, us)
        ir2 = ir * ir
        tt = (uss - us) * ir2
        pp = (us + utt) * ir2
        qq = (ust - ut) * ir2
        d1 = (c * us - s * ut) * ir
        d2 = (s * us + c * ut) * ir
        cc, ss, cs = c * c, s * s, c * s
        h11 = cc * tt + ss * pp - 2.0 * cs * qq
        h22 = ss * tt + cc * pp + 2.0 * cs * qq
        h12 = cs * (tt - pp) + (cc - ss) * qq
        return d1, d2, h11, h12, h22

    def sparse_operators(self) -> tuple[sp.csr_matrix, ...]:
        """(D1, D2, H11, H12, H22) as sparse matrices on flattened scalar data."""
        nr, nt = self.shape
        circ_t = sp.lil_matrix((nt, nt))
        circ_tt = sp.lil_matrix((nt, nt))
        cols = np.arange(nt)
        for o, a, b in zip(ANGULAR_OFFSETS, self.w_t, self.w_tt):
            circ_t[cols, (cols + int(o)) % nt] = a
            circ_tt[cols, (cols + int(o)) % nt] = b
        eye_r, eye_t = sp.identity(nr), sp.identity(nt)
        op_s = sp.kron(self.d_s, eye_t)
        op_ss = sp.kron(self.d_ss, eye_t)
        op_t = sp.kron(eye_r, circ_t.tocsr())
        op_tt = sp.kron(eye_r, circ_tt.tocsr())
        op_st = op_t @ op_s

        def diag(a):
            return sp.diags(np.broadcast_to(a[..., 0], self.shape).ravel())

        c, s, ir = self.c, self.s, self.ir
        ir2 = ir * ir
        tt = diag(ir2) @ (op_ss - op_s)
        pp = diag(ir2) @ (op_s + op_tt)
        qq = diag(ir2) @ (op_st - op_t)
        d1 = diag(c * ir) @ op_s - diag(s * ir) @ op_t
        d2 = diag(s * ir) @ op_s + diag(c * ir) @ op_t
        cc, ss, cs = c * c, s * s, c * s
        h11 = diag(cc) @ tt + diag(ss) @ pp - diag(2.0 * cs) @ qq
        h22 = diag(ss) @ tt + diag(cc) @ pp + diag(2.0 * cs) @ qq
        h12 = diag(cs) @ (tt - pp) + diag(cc - ss) @ qq
        return tuple(m.tocsr() for m in (d1, d2, h11, h12, h22))

    def adjoint(self, g1, g2, g11, g12, g22) -> np.ndarray:
        """Pull cotangents of (d1, d2, h11, h12, h22) back to the nodal values."""
        c, s, ir = self.c, self.s, self.ir
        ir2 = ir * ir
        cc, ss, cs = c * c, s * s, c * s
        ctt = (cc * g11 + ss * g22 + cs * g12) * ir2
        cpp = (ss * g11 + cc * g22 - cs * g12) * ir2
        cqq = (-2.0 * cs * g11 + 2.0 * cs * g22 + (cc - ss) * g12) * ir2
        cus = -ctt + cpp + (c * g1 + s * g2) * ir
        cut = -cqq + (c * g2 - s * g1) * ir
        cus = cus + self._angular(self.w_t, cqq, sign=+1)
        grad = self._radial(self.d_s_t, cus)
        grad += self._radial(self.d_ss_t, ctt)
        grad += self._angular(self.w_t, cut, sign=+1)
        grad += self._angular(self.w_tt, cpp, sign=+1)
        return grad


# ---------------------------------------------------------------------------
# quadrature on log cells


def _cell_weights(s0: float, s1: float, a: float, b: float) -> tuple[float, float]:
    """Weights (w0, w1) so that w0 f0 + w1 f1 = int_a^b f(s) e^{2s} ds.

    ``f`` is the member of span{1, e^{-2s}} through (s0, f0), (s1, f1) and
    ``s0 <= a < b <= s1``.
    """
    ua, ub = a - s0, b - s0
    e2s0 = math.exp(2.0 * s0)
    half = 0.5 * (math.expm1(2.0 * ub) - math.expm1(2.0 * ua))
    lin = (ub - ua) - half
    de = -math.expm1(-2.0 * (s1 - s0))
    w1 = -e2s0 * lin / de
    w0 = e2s0 * half - w1
    return w0, w1


def radial_weights(s: np.ndarray, r_lo: float, r_hi: float) -> np.ndarray:
    """Nodal weights W_i with sum_i W_i f_i ~= int_{r_lo}^{r_hi} f(r) r dr."""
    a, b = math.log(r_lo), math.log(r_hi)
    tol = 1e-13 * max(1.0, abs(s[0]))
    if a < s[0] - tol or b > s[-1] + tol or not b > a:
        raise MeshError(f"radial range [{r_lo}, {r_hi}] outside mesh or empty")
    a, b = max(a, s[0]), min(b, s[-1])
    w = np.zeros(s.size)
    k0 = max(int(np.searchsorted(s, a, side="right")) - 1, 0)
    for k in range(k0, s.size - 1):
        lo, hi = max(a, s[k]), min(b, s[k + 1])
        if hi <= lo:
            if s[k] >= b:
                break
            continue
        w0, w1 = _cell_weights(s[k], s[k + 1], lo, hi)
        w[k] += w0
        w[k + 1] += w1
    return w


def _interp_coeffs(s: np.ndarray, target: float) -> tuple[int, float, float]:
    """Ring index k and coefficients (c0, c1) so that f(target) ~= c0 f_k + c1 f_{k+1}."""
    tol = 1e-13 * max(1.0, abs(s[0]))
    if target < s[0] - tol or target > s[-1] + tol:
        raise MeshError(f"radius exp({target}) outside mesh")
    k = int(np.clip(np.searchsorted(s, target, side="right") - 1, 0, s.size - 2))
    # basis span{1, e^{-2s}}: f = alpha + beta e^{-2s}
    c1 = math.expm1(-2.0 * (target - s[k])) / math.expm1(-2.0 * (s[k + 1] - s[k]))
    return k, 1.0 - c1, c1


# ---------------------------------------------------------------------------
# mesh and fields


@dataclass(frozen=True, eq=False)
class PolarMesh:
    r_inner: float
    n_radial: int
    n_angular: int
    delta: float
    h: float

    @cached_property
    def s(self) -> np.ndarray:
        return np.linspace(math.log(self.r_inner), 0.0, self.n_radial)

    @cached_property
    def radii(self) -> np.ndarray:
        r = np.exp(self.s)
        r[0], r[-1] = self.r_inner, 1.0
        return r

    @property
    def ds(self) -> float:
        return -math.log(self.r_inner) / (self.n_radial - 1)

    @property
    def dtheta(self) -> float:
        return 2.0 * math.pi / self.n_angular

    @cached_property
    def theta(self) -> np.ndarray:
        return self.dtheta * np.arange(self.n_angular)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_radial, self.n_angular)

    @property
    def n_nodes(self) -> int:
        return self.n_radial * self.n_angular

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape (n_radial, n_angular, 2)."""
        r = self.radii[:, None]
        return np.stack(
            [r * np.cos(self.theta)[None, :], r * np.sin(self.theta)[None, :]], axis=-1
        )

    @cached_property
    def radial_weights(self) -> np.ndarray:
        return radial_weights(self.s, self.r_inner, 1.0)

    @cached_property
    def weights(self) -> np.ndarray:
        """Per-node quadrature weights over the whole annulus, shape (n_radial, n_angular)."""
        return np.repeat(self.radial_weights[:, None] * self.dtheta, self.n_angular, axis=1)

    @cached_property
    def reference_metric(self) -> np.ndarray:
        """g_delta at every node, shape (n_radial, n_angular, 2, 2)."""
        g = reference_metric_polar(self.theta, self.delta)
        return np.broadcast_to(g[None], self.shape + (2, 2))

    @cached_property
    def differentiator(self) -> PolarDifferentiator:
        return PolarDifferentiator(self)

    def matches(self, params: Params) -> bool:
        return self.delta == params.delta and self.h == params.h


def build_mesh(
    params: Params, n_radial: int, n_angular: int, r_inner_factor: float = 16.0
) -> PolarMesh:
    """Log-uniform polar mesh on ``r_inner = h / r_inner_factor <= r <= 1``."""
    if int(n_radial) != n_radial or int(n_angular) != n_angular:
        raise MeshError("resolution counts must be integers")
    if n_radial < 16 or n_angular < 16:
        raise MeshError("need n_radial >= 16 and n_angular >= 16")
    if n_angular % 2:
        raise MeshError("n_angular must be even")
    if r_inner_factor <= 1.0:
        raise MeshError("r_inner_factor must exceed 1")
    return PolarMesh(
        params.h / r_inner_factor, int(n_radial), int(n_angular), params.delta, params.h
    )


@dataclass(frozen=True, eq=False)
class DeformationField:
    mesh: PolarMesh
    values: np.ndarray  # (n_radial, n_angular, 3)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.mesh.shape + (3,):
            raise MeshError(f"field shape {v.shape} does not match mesh {self.mesh.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    def with_values(self, values) -> "DeformationField":
        return DeformationField(self.mesh, values)

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass(frozen=True, eq=False)
class JetField:
    mesh: PolarMesh
    dy: np.ndarray  # (nr, nt, c, 2)
    d2y: np.ndarray  # (nr, nt, c, 2, 2)

    @cached_property
    def metric(self) -> np.ndarray:
        """Induced metric Dy^T Dy, shape (nr, nt, 2, 2)."""
        return np.einsum("...ia,...ib->...ab", self.dy, self.dy)


def sample_field(fn: Callable[[np.ndarray], np.ndarray], mesh: PolarMesh) -> DeformationField:
    """Evaluate a map on all nodes; ``fn`` takes points shaped (..., 2)."""
    vals = np.asarray(fn(mesh.points), dtype=float)
    vals = np.broadcast_to(vals, mesh.shape + (3,)).copy()
    return DeformationField(mesh, vals)


def nodal_jets(mesh: PolarMesh, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cartesian first and second derivatives of nodal data with any trailing shape.

    Returns arrays shaped ``values.shape + (2,)`` and ``values.shape + (2, 2)``.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[:2] != mesh.shape:
        raise MeshError("nodal data does not match mesh")
    tail = values.shape[2:]
    u = values.reshape(mesh.shape + (-1,))
    d1, d2, h11, h12, h22 = (
        a.reshape(mesh.shape + tail) for a in mesh.differentiator.forward(u)
    )
    dy = np.stack([d1, d2], axis=-1)
    d2y = np.stack(
        [np.stack([h11, h12], axis=-1), np.stack([h12, h22], axis=-1)], axis=-2
    )
    return dy, d2y


def compute_jets(field: DeformationField) -> JetField:
    dy, d2y = nodal_jets(field.mesh, field.values)
    return JetField(field.mesh, dy, d2y)


def analytic_jets(mesh: PolarMesh, jet_fn) -> JetField:
    """Wrap closed-form derivatives (e.g. :func:`geometry.cone_jets`) as a JetField."""
    dy, d2y = jet_fn(mesh.points)
    return JetField(mesh, np.asarray(dy), np.asarray(d2y))


# ---------------------------------------------------------------------------
# integrals


def region_weights(mesh: PolarMesh, r_lo: float, r_hi: float) -> np.ndarray:
    """Radial weights (per ring, already multiplied by dtheta) for the annulus [r_lo, r_hi]."""
    if not (r_lo < r_hi):
        raise MeshError("empty region")
    return radial_weights(mesh.s, r_lo, r_hi) * mesh.dtheta


def integrate_region(density, mesh: PolarMesh, r_lo: float, r_hi: float) -> float:
    """Integral of a nodal scalar over the annulus r_lo <= |x| <= r_hi."""
    density = np.asarray(density, dtype=float)
    if density.shape != mesh.shape:
        raise MeshError("density does not match mesh")
    w = region_weights(mesh, r_lo, r_hi)
    return float(w @ density.sum(axis=1))


def ring_values(density, mesh: PolarMesh, r: float) -> np.ndarray:
    """Density interpolated (per angle) onto the circle |x| = r."""
    density = np.asarray(density, dtype=float)
    k, c0, c1 = _interp_coeffs(mesh.s, math.log(r))
    return c0 * density[k] + c1 * density[k + 1]


def integrate_ring(density, mesh: PolarMesh, r: float) -> float:
    """Integral of a nodal scalar over the circle |x| = r (arc-length measure)."""
    density = np.asarray(density, dtype=float)
    if density.shape != mesh.shape:
        raise MeshError("density does not match mesh")
    return float(ring_values(density, mesh, r).sum() * r * mesh.dtheta)


def check_radius(mesh: PolarMesh, r: float) -> None:
    if not (mesh.r_inner * (1 - 1e-12) <= r <= 1.0 + 1e-12):
        raise MeshError(f"radius {r} outside mesh [{mesh.r_inner}, 1]")


def membrane_density(jets: JetField) -> np.ndarray:
    diff = jets.metric - jets.mesh.reference_metric
    return np.sum(diff * diff, axis=(-2, -1))


def bending_density(jets: JetField) -> np.ndarray:
    return np.sum(jets.d2y * jets.d2y, axis=(-3, -2, -1))


__all__ = [
    "PolarMesh",
    "DeformationField",
    "JetField",
    "MeshError",
    "build_mesh",
    "sample_field",
    "compute_jets",
    "nodal_jets",
    "analytic_jets",
    "integrate_region",
    "integrate_ring",
    "ring_values",
    "region_weights",
    "radial_weights",
    "membrane_density",
    "bending_density",
    "polar_chain",
]
