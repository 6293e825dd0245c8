import math

import numpy as np
import pytest

from dsheet.geometry import Params, cone_map, reference_metric
from dsheet.mesh import (
    DeformationField,
    MeshError,
    build_mesh,
    compute_jets,
    exp_stencil,
    integrate_region,
    integrate_ring,
    radial_weights,
    ring_values,
    sample_field,
    trig_stencil,
)

P = Params(0.5, 0.1)


@pytest.fixture(scope="module")
def mesh256():
    return build_mesh(P, 256, 256)


@pytest.fixture(scope="module")
def mesh64():
    return build_mesh(P, 64, 64)


def stencil_scale(mesh):
    # size of the largest second-derivative stencil weight, used to scale rounding tolerances
    return 1.0 / (mesh.r_inner * mesh.ds) ** 2


def test_build_mesh_rejects_small_or_odd_counts():
    for nr, nt in [(3, 16), (15, 16), (16, 15), (16, 17), (16, 14)]:
        with pytest.raises(MeshError):
            build_mesh(P, nr, nt)


def test_log_uniform_radii():
    m = build_mesh(P, 17, 16)
    assert m.r_inner == P.h / 16
    assert m.radii[0] == m.r_inner and m.radii[-1] == 1.0
    ratios = m.radii[1:] / m.radii[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)
    # odd count: the middle node is the geometric mean of the ends
    assert m.radii[8] == pytest.approx(math.sqrt(P.h / 16), rel=1e-14)


def test_weight_sum_is_annulus_area(mesh256):
    area = math.pi * (1 - mesh256.r_inner**2)
    assert mesh256.weights.sum() == pytest.approx(area, rel=1e-13)
    assert mesh256.weights.shape == mesh256.shape


def test_doubling_angular_count_halves_weights():
    a = build_mesh(P, 32, 32)
    b = build_mesh(P, 32, 64)
    assert b.dtheta == pytest.approx(a.dtheta / 2, rel=1e-15)
    np.testing.assert_allclose(b.weights[:, 0], a.weights[:, 0] / 2, rtol=1e-14)


def test_sample_field_examples(mesh64):
    cone = sample_field(lambda x: cone_map(x, 0.5), mesh64)
    np.testing.assert_array_equal(cone.values, cone_map(mesh64.points, 0.5))
    const = sample_field(lambda x: np.broadcast_to([1.0, -2.0, 3.0], x.shape[:-1] + (3,)), mesh64)
    assert np.all(const.values == [1.0, -2.0, 3.0])
    planar = sample_field(lambda x: np.concatenate([x, np.zeros_like(x[..., :1])], -1), mesh64)
    np.testing.assert_array_equal(planar.values[..., :2], mesh64.points)


def test_field_validation(mesh64):
    with pytest.raises(MeshError):
        DeformationField(mesh64, np.zeros((64, 63, 3)))
    bad = np.zeros((64, 64, 3))
    bad[3, 4, 1] = np.nan
    with pytest.raises(MeshError):
        DeformationField(mesh64, bad)


def test_affine_jets_exact(mesh256):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 2))
    b = rng.normal(size=3)
    fld = sample_field(lambda x: x @ a.T + b, mesh256)
    jets = compute_jets(fld)
    np.testing.assert_allclose(jets.dy, np.broadcast_to(a, jets.dy.shape), atol=1e-12)
    tol = 1e-14 * np.abs(fld.values).max() * stencil_scale(mesh256)
    assert np.abs(jets.d2y).max() < tol


def test_quadratic_bowl_jets(mesh256):
    fld = sample_field(
        lambda x: np.concatenate([x, 0.5 * np.sum(x * x, -1, keepdims=True)], -1), mesh256
    )
    jets = compute_jets(fld)
    np.testing.assert_allclose(jets.d2y[..., 2, :, :], np.broadcast_to(np.eye(2), mesh256.shape + (2, 2)), atol=1e-3)
    np.testing.assert_allclose(jets.dy[..., 2, :], mesh256.points, atol=1e-3)
    # far tighter in practice: the fitted stencils reproduce quadratics
    assert np.abs(jets.d2y[..., 2, :, :] - np.eye(2)).max() < 1e-8


def test_cone_jets_and_metric(mesh256):
    fld = sample_field(lambda x: cone_map(x, 0.5), mesh256)
    jets = compute_jets(fld)
    far = mesh256.radii >= 10 * mesh256.r_inner
    norm = np.sqrt(np.sum(jets.d2y**2, axis=(-3, -2, -1)))
    expected = 0.5 / mesh256.radii[:, None]
    assert np.abs(norm / expected - 1)[far].max() < 0.01
    g = jets.metric[far]
    np.testing.assert_allclose(g, reference_metric(mesh256.points[far], 0.5), atol=1e-3)


def test_jet_symmetry_and_metric_psd(mesh64):
    rng = np.random.default_rng(1)
    fld = DeformationField(mesh64, rng.normal(size=(64, 64, 3)))
    jets = compute_jets(fld)
    np.testing.assert_array_equal(jets.d2y, np.swapaxes(jets.d2y, -1, -2))
    np.testing.assert_array_equal(jets.metric, np.swapaxes(jets.metric, -1, -2))
    assert np.linalg.eigvalsh(jets.metric).min() > -1e-9 * np.abs(jets.metric).max()


def test_jets_second_order_convergence():
    def field(x):
        return np.stack(
            [np.sin(1.3 * x[..., 0] + 0.2), np.cos(x[..., 1]) * x[..., 0], np.exp(0.5 * x[..., 1])], -1
        )

    def hess(x):
        x1, x2 = x[..., 0], x[..., 1]
        h = np.zeros(x.shape[:-1] + (3, 2, 2))
        h[..., 0, 0, 0] = -1.69 * np.sin(1.3 * x1 + 0.2)
        h[..., 1, 0, 1] = h[..., 1, 1, 0] = -np.sin(x2)
        h[..., 1, 1, 1] = -np.cos(x2) * x1
        h[..., 2, 1, 1] = 0.25 * np.exp(0.5 * x2)
        return h

    errs = []
    for n in (32, 64):
        m = build_mesh(P, n, n)
        jets = compute_jets(sample_field(field, m))
        errs.append(np.abs(jets.d2y - hess(m.points))[m.radii > 0.1].max())
    order = math.log2(errs[0] / errs[1])
    assert order >= 1.9


def test_stencils_exact_on_their_basis():
    offs = np.arange(-3, 4)
    ds = 0.05
    w1 = exp_stencil(offs, ds, 1)
    w2 = exp_stencil(offs, ds, 2)
    for m in range(7):
        vals = np.exp(m * offs * ds)
        assert w1 @ vals == pytest.approx(m, abs=1e-9)
        assert w2 @ vals == pytest.approx(m * m, abs=1e-7)
    offs = np.arange(-2, 3)
    dt = 2 * math.pi / 64
    t1, t2 = trig_stencil(offs, dt, 1), trig_stencil(offs, dt, 2)
    for k in (1, 2):
        assert t1 @ np.sin(k * offs * dt) == pytest.approx(k, abs=1e-12)
        assert t2 @ np.cos(k * offs * dt) == pytest.approx(-k * k, abs=1e-10)


def test_integrate_region_examples(mesh256):
    one = np.ones(mesh256.shape)
    inv_r2 = 1.0 / mesh256.radii[:, None] ** 2 * one
    for R in (0.05, 0.3, 0.5):
        assert integrate_region(one, mesh256, R, 1.0) == pytest.approx(math.pi * (1 - R * R), abs=1e-6)
        assert integrate_region(inv_r2, mesh256, R, 1.0) == pytest.approx(2 * math.pi * math.log(1 / R), abs=1e-4)
    d = 0.5
    assert integrate_region(d * d * inv_r2, mesh256, P.h, 1.0) == pytest.approx(
        2 * math.pi * d * d * math.log(1 / P.h), rel=1e-12
    )


def test_integrate_region_errors(mesh64):
    one = np.ones(mesh64.shape)
    with pytest.raises(MeshError):
        integrate_region(one, mesh64, 0.5, 0.5)
    with pytest.raises(MeshError):
        integrate_region(one, mesh64, mesh64.r_inner / 2, 0.5)
    with pytest.raises(MeshError):
        integrate_region(one[:-1], mesh64, 0.1, 0.5)


def test_region_additivity(mesh64):
    rng = np.random.default_rng(2)
    dens = rng.uniform(size=mesh64.shape)
    for lo, mid, hi in [(0.01, 0.2, 0.9), (mesh64.r_inner, 0.0333, 1.0), (0.3, 0.30001, 0.31)]:
        full = integrate_region(dens, mesh64, lo, hi)
        parts = integrate_region(dens, mesh64, lo, mid) + integrate_region(dens, mesh64, mid, hi)
        assert parts == pytest.approx(full, rel=1e-12, abs=1e-15)


def test_region_rotation_invariance(mesh64):
    rng = np.random.default_rng(3)
    vals = rng.normal(size=mesh64.shape + (3,))
    dens = np.sum(vals**2, axis=-1)
    shifted = np.roll(dens, 1, axis=1)
    a = integrate_region(dens, mesh64, 0.02, 0.7)
    b = integrate_region(shifted, mesh64, 0.02, 0.7)
    assert b == pytest.approx(a, rel=1e-14)


def test_integrate_ring_examples(mesh256):
    one = np.ones(mesh256.shape)
    assert integrate_ring(one, mesh256, 0.5) == pytest.approx(math.pi, abs=1e-8)
    inv_r2 = one / mesh256.radii[:, None] ** 2
    for r in (0.013, 0.5, 0.77):
        assert integrate_ring(inv_r2, mesh256, r) == pytest.approx(2 * math.pi / r, rel=1e-12)
    jets = compute_jets(sample_field(lambda x: cone_map(x, 0.5), mesh256))
    bend = np.sum(jets.d2y**2, axis=(-3, -2, -1))
    for rho in (0.25, 0.5, 0.75):
        assert integrate_ring(bend, mesh256, rho) == pytest.approx(2 * math.pi * 0.25 / rho, rel=0.01)
    with pytest.raises(MeshError):
        integrate_ring(one, mesh256, 1.5)


def test_ring_values_at_nodes_are_nodal(mesh64):
    dens = np.random.default_rng(4).normal(size=mesh64.shape)
    k = 17
    np.testing.assert_allclose(ring_values(dens, mesh64, mesh64.radii[k]), dens[k], atol=1e-14)


def test_radial_weights_reject_out_of_range(mesh64):
    with pytest.raises(MeshError):
        radial_weights(mesh64.s, 0.5, 1.2)
