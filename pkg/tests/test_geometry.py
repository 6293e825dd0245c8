import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsheet.geometry import (
    CUTOFFS,
    DomainError,
    FlatChart,
    GeneralizedCone,
    Params,
    ansatz_jets,
    ansatz_map,
    cone_jets,
    cone_map,
    cutoff_eval,
    generalized_cone_jets,
    generalized_cone_map,
    iota,
    iota_inverse,
    quintic_cutoff,
    reference_metric,
    rotation2,
    septic_cutoff,
)


def random_rotation(rng, proper=True):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if proper and np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def test_params_validation():
    Params(0.5, 0.1)
    for bad in [(0.0, 0.1), (1.0, 0.1), (0.5, 0.0), (0.5, 0.25), (-0.2, 0.1)]:
        with pytest.raises(ValueError):
            Params(*bad)


def test_cone_map_examples():
    np.testing.assert_allclose(cone_map([1.0, 0.0], 0.6), [0.8, 0.0, 0.6], atol=1e-15)
    np.testing.assert_array_equal(cone_map([0.0, 0.0], 0.3), [0.0, 0.0, 0.0])
    np.testing.assert_allclose(cone_map([0.0, -2.0], 0.6), [0.0, -1.6, 1.2], atol=1e-15)


def test_reference_metric_examples():
    np.testing.assert_allclose(reference_metric([1.0, 0.0], 0.6), np.diag([1.0, 0.64]), atol=1e-15)
    np.testing.assert_allclose(reference_metric([0.0, 3.0], 0.6), np.diag([0.64, 1.0]), atol=1e-15)
    np.testing.assert_allclose(reference_metric([0.3, -0.7], 1e-9), np.eye(2), atol=1e-15)
    with pytest.raises(DomainError):
        reference_metric([0.0, 0.0], 0.5)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.01, 0.99),
    st.floats(1e-3, 10.0),
    st.floats(-math.pi, math.pi),
)
def test_reference_metric_spectrum(delta, r, phi):
    x = [r * math.cos(phi), r * math.sin(phi)]
    g = reference_metric(x, delta)
    np.testing.assert_allclose(g, g.T, atol=0)
    np.testing.assert_allclose(np.linalg.eigvalsh(g), [1 - delta**2, 1.0], atol=1e-14)
    xhat = np.array(x) / r
    np.testing.assert_allclose(g @ xhat, xhat, atol=1e-14)


def test_cone_pullback_and_curvature():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, size=(200, 2))
    dy, d2y = cone_jets(x, 0.45)
    g = np.einsum("...ia,...ib->...ab", dy, dy)
    np.testing.assert_allclose(g, reference_metric(x, 0.45), atol=1e-14)
    norm = np.sqrt(np.sum(d2y**2, axis=(-3, -2, -1)))
    np.testing.assert_allclose(norm, 0.45 / np.linalg.norm(x, axis=-1), rtol=1e-13)


def test_cutoff_plateaus_and_midpoint():
    assert cutoff_eval(0.25) == (0.0, 0.0, 0.0)
    assert cutoff_eval(2.0) == (1.0, 0.0, 0.0)
    eta, d1, d2 = cutoff_eval(0.75, quintic_cutoff)
    assert eta == pytest.approx(0.5, abs=1e-15)
    assert d1 == pytest.approx(3.75, abs=1e-14)
    assert d2 == pytest.approx(0.0, abs=1e-13)
    eta, d1, d2 = cutoff_eval(0.75, septic_cutoff)
    assert eta == pytest.approx(0.5, abs=1e-15)
    assert d1 == pytest.approx(4.375, abs=1e-14)
    assert d2 == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("cutoff", list(CUTOFFS.values()))
def test_cutoff_derivatives_match_finite_differences(cutoff):
    t = np.linspace(0.3, 1.2, 400)
    eta, d1, d2 = cutoff(t)
    eps = 1e-6
    ep, _, _ = cutoff(t + eps)
    em, _, _ = cutoff(t - eps)
    np.testing.assert_allclose((ep - em) / (2 * eps), d1, atol=1e-6)
    _, p1, _ = cutoff(t + eps)
    _, m1, _ = cutoff(t - eps)
    np.testing.assert_allclose((p1 - m1) / (2 * eps), d2, atol=2e-5)


@pytest.mark.parametrize("cutoff", list(CUTOFFS.values()))
def test_cutoff_is_c2_across_interfaces(cutoff):
    for t0 in (0.5, 1.0):
        lo = cutoff(np.array([t0 - 1e-9]))
        hi = cutoff(np.array([t0 + 1e-9]))
        for a, b in zip(lo, hi):
            assert abs(a[0] - b[0]) < 1e-6


def test_ansatz_examples():
    p = Params(0.6, 0.1)
    np.testing.assert_array_equal(ansatz_map([0.025, 0.0], p), [0.0, 0.0, 0.0])
    x = np.array([0.12, -0.16])
    np.testing.assert_allclose(ansatz_map(x, p), cone_map(x, 0.6), atol=1e-16)
    np.testing.assert_allclose(ansatz_map([0.075, 0.0], p), [0.03, 0.0, 0.0225], atol=1e-15)
    np.testing.assert_allclose(ansatz_map([0.075, 0.0], p, quintic_cutoff), [0.03, 0.0, 0.0225], atol=1e-15)


def test_ansatz_jets_match_finite_differences():
    p = Params(0.5, 0.1)
    rng = np.random.default_rng(2)
    r = rng.uniform(0.05, 0.2, 50)
    phi = rng.uniform(-np.pi, np.pi, 50)
    x = np.stack([r * np.cos(phi), r * np.sin(phi)], -1)
    dy, d2y = ansatz_jets(x, p)
    eps = 1e-6
    for a in range(2):
        e = np.zeros(2)
        e[a] = eps
        fd = (ansatz_map(x + e, p) - ansatz_map(x - e, p)) / (2 * eps)
        np.testing.assert_allclose(dy[..., a], fd, atol=1e-8)
        dp, _ = ansatz_jets(x + e, p)
        dm, _ = ansatz_jets(x - e, p)
        np.testing.assert_allclose(d2y[..., a, :], (dp - dm) / (2 * eps), atol=1e-4)


def test_ansatz_c2_across_interfaces():
    p = Params(0.5, 0.1)

    def jumps(rad, step):
        xs = np.array([[rad - step, 0.0], [rad + step, 0.0]])
        dy, d2y = ansatz_jets(xs, p)
        return np.abs(dy[0] - dy[1]).max(), np.abs(d2y[0] - d2y[1]).max()

    step = 1e-5 * p.h
    for rad in (p.h / 2, p.h):
        j1, j2 = jumps(rad, step)
        assert j1 < 1e-6
        # a continuous D2y has a jump that shrinks linearly with the step
        _, j2_fine = jumps(rad, step / 10)
        assert j2 < 1e-3
        assert j2_fine < 0.2 * j2


def test_generalized_cone_exact_curve_reproduces_cone():
    gc = GeneralizedCone.exact(0.5)
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=(300, 2))
    np.testing.assert_allclose(generalized_cone_map(x, gc), cone_map(x, 0.5), atol=1e-12)
    dy, d2y = generalized_cone_jets(x, gc)
    cdy, cd2y = cone_jets(x, 0.5)
    np.testing.assert_allclose(dy, cdy, atol=1e-12)
    np.testing.assert_allclose(d2y, cd2y, atol=1e-11)


def test_generalized_cone_rotation_equivariance():
    rng = np.random.default_rng(4)
    rot = random_rotation(rng)
    gc = GeneralizedCone.exact(0.3, rotation=rot)
    x = rng.uniform(-1, 1, size=(100, 2))
    np.testing.assert_allclose(generalized_cone_map(x, gc), cone_map(x, 0.3) @ rot.T, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_random_generalized_cone_invariants(seed):
    gc = GeneralizedCone.random(0.5, np.random.default_rng(seed))
    theta = np.linspace(0, 2 * np.pi, 777, endpoint=False)
    g, g1, g2 = gc.curve(theta)
    np.testing.assert_allclose(np.linalg.norm(g, axis=-1), 1.0, atol=1e-14)
    np.testing.assert_allclose(np.linalg.norm(g1, axis=-1), math.sqrt(0.75), atol=1e-10)
    assert gc.length == pytest.approx(2 * math.pi * math.sqrt(0.75), rel=1e-13)
    x = np.random.default_rng(seed).uniform(-1, 1, size=(50, 2))
    np.testing.assert_allclose(
        generalized_cone_map(2.0 * x, gc), 2.0 * generalized_cone_map(x, gc), atol=1e-13
    )
    with pytest.raises(DomainError):
        generalized_cone_map([0.0, 0.0], gc)


def test_random_generalized_cone_derivatives():
    gc = GeneralizedCone.random(0.4, np.random.default_rng(7))
    theta = np.linspace(0.1, 6.0, 50)
    eps = 1e-6
    g, g1, g2 = gc.curve(theta)
    gp, g1p, _ = gc.curve(theta + eps)
    gm, g1m, _ = gc.curve(theta - eps)
    np.testing.assert_allclose((gp - gm) / (2 * eps), g1, atol=1e-8)
    np.testing.assert_allclose((g1p - g1m) / (2 * eps), g2, atol=1e-6)


def test_flat_chart_constants():
    ch = FlatChart(0.6)
    assert ch.phi_delta == pytest.approx(0.2 * 2 * math.pi, abs=1e-15)
    s = ch.S_delta
    np.testing.assert_allclose(s.T @ s, np.eye(2), atol=1e-15)
    assert np.linalg.det(s) == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(s, rotation2(ch.phi_delta), atol=0)
    a, b = 0.37, 1.21
    np.testing.assert_allclose(rotation2(a) @ rotation2(b), rotation2(a + b), atol=1e-12)
    np.testing.assert_allclose(np.linalg.matrix_power(s, 3), rotation2(3 * ch.phi_delta), atol=1e-12)


def test_iota_examples():
    ch = FlatChart(0.6)
    np.testing.assert_allclose(iota(ch, [0.3, 0.0]), [0.3, 0.0], atol=0)
    ang = 0.8 * math.pi / 2
    np.testing.assert_allclose(iota(ch, [math.cos(ang), math.sin(ang)]), [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(iota_inverse(ch, [0.3, 0.0]), [0.3, 0.0], atol=0)
    np.testing.assert_allclose(
        iota_inverse(ch, [0.0, 1.0]), [math.cos(0.4 * math.pi), math.sin(0.4 * math.pi)], atol=1e-15
    )
    with pytest.raises(DomainError):
        iota(ch, [-0.5, 0.0])
    with pytest.raises(DomainError):
        iota_inverse(ch, [-0.5, 0.0])
    with pytest.raises(DomainError):
        iota_inverse(ch, [0.0, 0.0])


def test_iota_round_trip():
    ch = FlatChart(0.45)
    rng = np.random.default_rng(5)
    r = rng.uniform(1e-3, 1.0, 1000)
    ang = rng.uniform(-0.999, 0.999, 1000) * math.pi
    y = np.stack([r * np.cos(ang), r * np.sin(ang)], -1)
    x = iota_inverse(ch, y)
    np.testing.assert_allclose(np.linalg.norm(x, axis=-1), r, rtol=1e-14)
    assert np.all(np.abs(np.arctan2(x[:, 1], x[:, 0])) < ch.stretch * math.pi)
    assert np.abs(iota(ch, x) - y).max() < 1e-12
