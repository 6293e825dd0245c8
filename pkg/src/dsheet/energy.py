"""Discrete free energy  E = int |g_y - g_delta|^2 + h^2 int |D^2 y|^2  and its gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve_banded, cholesky_banded

from .geometry import Params
from .mesh import (
    ANGULAR_OFFSETS,
    DeformationField,
    JetField,
    MeshError,
    PolarMesh,
    bending_density,
    compute_jets,
    membrane_density,
    region_weights,
)


@dataclass(frozen=True, eq=False)
class EnergyBreakdown:
    membrane: float
    bending_raw: float
    total: float
    h: float
    membrane_density: np.ndarray
    bending_density: np.ndarray

    @property
    def bending(self) -> float:
        return self.h**2 * self.bending_raw


def _check(field: DeformationField, params: Params) -> PolarMesh:
    mesh = field.mesh
    if not mesh.matches(params):
        raise MeshError(
            f"mesh built for (delta={mesh.delta}, h={mesh.h}), "
            f"got params (delta={params.delta}, h={params.h})"
        )
    return mesh


def _weighted_sum(weights: np.ndarray, density: np.ndarray) -> float:
    # fixed order: angular sums first (numpy pairwise), then the radial dot product
    return float(weights @ density.sum(axis=1))


def energy_breakdown(field: DeformationField, params: Params) -> EnergyBreakdown:
    mesh = _check(field, params)
    jets = compute_jets(field)
    md = membrane_density(jets)
    bd = bending_density(jets)
    w = mesh.radial_weights * mesh.dtheta
    membrane = _weighted_sum(w, md)
    bending_raw = _weighted_sum(w, bd)
    return EnergyBreakdown(
        membrane=membrane,
        bending_raw=bending_raw,
        total=membrane + params.h**2 * bending_raw,
        h=params.h,
        membrane_density=md,
        bending_density=bd,
    )


def energy_and_gradient(field: DeformationField, params: Params) -> tuple[float, np.ndarray]:
    """Total energy and its exact gradient with respect to the nodal values.

    The gradient is the adjoint of quadrature o densities o stencils, so it is
    the derivative of exactly the number returned.
    """
    mesh = _check(field, params)
    diff = mesh.differentiator
    y1, y2, y11, y12, y22 = diff.forward(field.values)

    gref = mesh.reference_metric
    e11 = np.sum(y1 * y1, axis=-1) - gref[..., 0, 0]
    e12 = np.sum(y1 * y2, axis=-1) - gref[..., 0, 1]
    e22 = np.sum(y2 * y2, axis=-1) - gref[..., 1, 1]
    mem = e11 * e11 + 2.0 * e12 * e12 + e22 * e22
    bend = np.sum(y11 * y11 + 2.0 * y12 * y12 + y22 * y22, axis=-1)
    w_ring = mesh.radial_weights * mesh.dtheta
    h2 = params.h**2
    total = _weighted_sum(w_ring, mem) + h2 * _weighted_sum(w_ring, bend)

    w = w_ring[:, None, None]
    e11, e12, e22 = e11[..., None], e12[..., None], e22[..., None]
    grad = diff.adjoint(
        4.0 * w * (e11 * y1 + e12 * y2),
        4.0 * w * (e12 * y1 + e22 * y2),
        2.0 * h2 * w * y11,
        4.0 * h2 * w * y12,
        2.0 * h2 * w * y22,
    )
    return total, grad


def energy_gradient(field: DeformationField, params: Params) -> np.ndarray:
    return energy_and_gradient(field, params)[1]


def bending_profile(field: DeformationField, radii, jets: JetField | None = None) -> list[float]:
    """Bending integral over the outer annulus R <= |x| <= 1, for each R in ``radii``."""
    mesh = field.mesh
    jets = compute_jets(field) if jets is None else jets
    bd = bending_density(jets)
    ring_sums = bd.sum(axis=1)
    out = []
    for r in radii:
        r = float(r)
        if r >= 1.0:
            if r > 1.0 + 1e-12:
                raise MeshError(f"radius {r} outside mesh")
            out.append(0.0)
            continue
        out.append(float(region_weights(mesh, r, 1.0) @ ring_sums))
    return out


class AxisymmetricPreconditioner:
    """Exact inverse of a rotation-invariant model of the energy Hessian.

    The model is ``P = a * grad^T W grad + 2 h^2 * hess^T W hess + eps * W`` acting
    on each component separately.  Both quadratic forms are invariant under
    angular shifts, so an FFT in theta splits ``P`` into one real symmetric
    banded matrix per Fourier mode, each factored once by Cholesky.
    """

    def __init__(self, mesh: PolarMesh, h: float, membrane_scale: float = 2.0, mass: float = 1.0):
        diff = mesh.differentiator
        nr, nt = mesh.shape
        w = mesh.radial_weights * mesh.dtheta
        r = mesh.radii
        ident = sp.identity(nr, format="csr")
        ds_op = diff.d_s
        t_op = diff.d_ss - ds_op
        v_op = ds_op - ident
        w2 = sp.diags(w / r**2)
        w4 = sp.diags(w / r**4)
        grad_rad = ds_op.T @ w2 @ ds_op
        base = 2.0 * h**2 * (t_op.T @ w4 @ t_op + ds_op.T @ w4 @ ds_op)
        cross = 2.0 * h**2 * (ds_op.T @ w4 + w4 @ ds_op)
        qq = 2.0 * h**2 * 2.0 * (v_op.T @ w4 @ v_op)
        modes = np.arange(nt // 2 + 1)
        offs = ANGULAR_OFFSETS * mesh.dtheta
        sig1 = np.sin(np.outer(modes, offs)) @ diff.w_t
        sig2 = np.cos(np.outer(modes, offs)) @ diff.w_tt
        self.shape = (nr, nt)
        self.factors = []
        mass_op = sp.diags(mass * w)
        for a1, a2 in zip(sig1**2, sig2):
            pm = (
                membrane_scale * (grad_rad + a1 * w2)
                + base
                + a2 * cross
                + (2.0 * h**2 * a2 * a2) * w4
                + a1 * qq
                + mass_op
            )
            self.factors.append(_banded_cholesky(pm.tocsr()))

    def solve(self, g: np.ndarray) -> np.ndarray:
        """Apply P^{-1} to nodal data of shape (nr, nt, ...)."""
        nr, nt = self.shape
        shp = g.shape
        gh = np.fft.rfft(g.reshape(nr, nt, -1), axis=1)
        out = np.empty_like(gh)
        for m, (cb, lower) in enumerate(self.factors):
            rhs = np.concatenate([gh[:, m].real, gh[:, m].imag], axis=1)
            x = cho_solve_banded((cb, lower), rhs)
            k = gh.shape[2]
            out[:, m] = x[:, :k] + 1j * x[:, k:]
        return np.fft.irfft(out, n=nt, axis=1).reshape(shp)


def _banded_cholesky(mat: sp.csr_matrix):
    coo = mat.tocoo()
    bw = int(np.max(np.abs(coo.row - coo.col)))
    n = mat.shape[0]
    ab = np.zeros((bw + 1, n))
    upper = coo.col >= coo.row
    ab[bw + coo.row[upper] - coo.col[upper], coo.col[upper]] = coo.data[upper]
    return cholesky_banded(ab, lower=False), False
