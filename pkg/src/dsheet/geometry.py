"""Closed-form maps for a sheet with one disclination.

Everything here is a pure function of its inputs: the singular cone and its
metric, the mollified cone used as an upper-bound competitor, generalized
(1-homogeneous) cones over spherical curves, and the flat chart that unrolls
the cone onto a sector of the plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from scipy.optimize import brentq


class DomainError(ValueError):
    """Point outside the domain of a map (apex, branch cut)."""


@dataclass(frozen=True)
class Params:
    delta: float
    h: float

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.h < 0.25:
            raise ValueError(f"h must lie in (0, 1/4), got {self.h}")

    @property
    def stretch(self) -> float:
        """In-plane factor sqrt(1 - delta^2) of the cone."""
        return math.sqrt(1.0 - self.delta**2)


def _stretch(delta: float) -> float:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(1.0 - delta * delta)


# ---------------------------------------------------------------------------
# polar chain rule


def polar_chain(r, theta, ur, ut, urr, urt, utt):
    """Cartesian gradient and Hessian from polar partial derivatives.

    Inputs broadcast against each other; ``r`` and ``theta`` must broadcast
    against the leading axes of the derivative arrays, which may carry a
    trailing component axis (pass ``r[..., None]`` in that case).

    Returns ``(d, d2)`` with ``d[..., a]`` = d/dx_a and ``d2[..., a, b]``.
    """
    c = np.cos(theta)
    s = np.sin(theta)
    tt = urr
    pp = ur / r + utt / r**2
    qq = urt / r - ut / r**2
    d1 = c * ur - s * ut / r
    d2_ = s * ur + c * ut / r
    h11 = c * c * tt + s * s * pp - 2.0 * c * s * qq
    h22 = s * s * tt + c * c * pp + 2.0 * c * s * qq
    h12 = c * s * (tt - pp) + (c * c - s * s) * qq
    d = np.stack([d1, d2_], axis=-1)
    hess = np.stack(
        [np.stack([h11, h12], axis=-1), np.stack([h12, h22], axis=-1)], axis=-2
    )
    return d, hess


def _polar(x):
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    theta = np.arctan2(x[..., 1], x[..., 0])
    return x, r, theta


# ---------------------------------------------------------------------------
# the singular cone


def cone_map(x, delta: float) -> np.ndarray:
    """y(x) = sqrt(1-delta^2) (x1, x2, 0) + delta |x| e3. Vectorized over x[..., 2]."""
    a = _stretch(delta)
    x, r, _ = _polar(x)
    return np.stack([a * x[..., 0], a * x[..., 1], delta * r], axis=-1)


def cone_jets(x, delta: float):
    """Analytic (Dy, D2y) of the cone, shapes (..., 3, 2) and (..., 3, 2, 2)."""
    a = _stretch(delta)
    x, r, theta = _polar(x)
    if np.any(r == 0.0):
        raise DomainError("cone derivatives are undefined at the apex")
    return _radial_profile_jets(r, theta, r, np.ones_like(r), np.zeros_like(r), a, delta)


def reference_metric(x, delta: float) -> np.ndarray:
    """g = Id - delta^2 xperp (x) xperp with xperp = (-x2, x1)/|x|."""
    _stretch(delta)
    x, r, _ = _polar(x)
    if np.any(r == 0.0):
        raise DomainError("reference metric is singular at the origin")
    p = np.stack([-x[..., 1] / r, x[..., 0] / r], axis=-1)
    g = np.broadcast_to(np.eye(2), r.shape + (2, 2)).copy()
    return g - delta**2 * p[..., :, None] * p[..., None, :]


def reference_metric_polar(theta, delta: float) -> np.ndarray:
    """Reference metric at polar angle ``theta`` (it does not depend on |x|)."""
    theta = np.asarray(theta, dtype=float)
    p = np.stack([-np.sin(theta), np.cos(theta)], axis=-1)
    g = np.broadcast_to(np.eye(2), theta.shape + (2, 2)).copy()
    return g - delta**2 * p[..., :, None] * p[..., None, :]


# ---------------------------------------------------------------------------
# cutoff and the mollified cone


class RadialCutoff(Protocol):
    def __call__(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]: ...


def quintic_cutoff(t):
    """C^2 smoothstep: 0 on [0, 1/2], 1 on [1, inf).

    Returns ``(eta, eta', eta'')`` as arrays shaped like ``t``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("cutoff is defined for t >= 0")
    u = np.clip(2.0 * t - 1.0, 0.0, 1.0)
    eta = u**3 * (10.0 - 15.0 * u + 6.0 * u * u)
    d1 = 60.0 * u * u * (1.0 - u) ** 2
    d2 = 240.0 * u * (1.0 - u) * (1.0 - 2.0 * u)
    return eta, d1, d2


def septic_cutoff(t):
    """C^3 smoothstep, the default: 0 on [0, 1/2], 1 on [1, inf).

    Degree-7 polynomial in u = 2t - 1 with three vanishing derivatives at both
    plateau edges.  The extra order of smoothness over :func:`quintic_cutoff`
    keeps the finite-difference error of the mollified cone at fourth order.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("cutoff is defined for t >= 0")
    u = np.clip(2.0 * t - 1.0, 0.0, 1.0)
    eta = u**4 * (35.0 - 84.0 * u + 70.0 * u * u - 20.0 * u**3)
    d1 = 2.0 * 140.0 * u**3 * (1.0 - u) ** 3
    d2 = 4.0 * 420.0 * u * u * (1.0 - u) ** 2 * (1.0 - 2.0 * u)
    return eta, d1, d2


CUTOFFS = {"septic": septic_cutoff, "quintic": quintic_cutoff}
DEFAULT_CUTOFF = septic_cutoff


def cutoff_eval(t, cutoff: RadialCutoff = quintic_cutoff):
    """Evaluate ``(eta, eta', eta'')``; the quintic rule unless another is given."""
    return cutoff(t)


def ansatz_map(x, params: Params, cutoff: RadialCutoff = septic_cutoff) -> np.ndarray:
    """Cone flattened to zero inside |x| < h/2: eta(|x|/h) * cone_map(x)."""
    x, r, _ = _polar(x)
    eta, _, _ = cutoff(r / params.h)
    return eta[..., None] * cone_map(x, params.delta)


def _radial_profile_jets(r, theta, psi, dpsi, ddpsi, a, delta):
    # y = psi(r) n(theta), n = (a cos, a sin, delta)
    c, s = np.cos(theta), np.sin(theta)
    zero = np.zeros_like(c)
    n = np.stack([a * c, a * s, delta + zero], axis=-1)
    dn = np.stack([-a * s, a * c, zero], axis=-1)
    ddn = np.stack([-a * c, -a * s, zero], axis=-1)
    rr, pp, dp, ddp = (v[..., None] for v in (r, psi, dpsi, ddpsi))
    d, d2 = polar_chain(
        rr, theta[..., None], dp * n, pp * dn, ddp * n, dp * dn, pp * ddn
    )
    return d, d2


def ansatz_jets(x, params: Params, cutoff: RadialCutoff = septic_cutoff):
    """Analytic (Dy, D2y) of :func:`ansatz_map` for x != 0."""
    x, r, theta = _polar(x)
    if np.any(r == 0.0):
        raise DomainError("polar derivatives are undefined at the origin")
    h = params.h
    eta, e1, e2 = cutoff(r / h)
    psi = r * eta
    dpsi = eta + r * e1 / h
    ddpsi = 2.0 * e1 / h + r * e2 / h**2
    return _radial_profile_jets(r, theta, psi, dpsi, ddpsi, params.stretch, params.delta)


# ---------------------------------------------------------------------------
# generalized cones


@dataclass(frozen=True, eq=False)
class GeneralizedCone:
    """Cone x -> |x| gamma(angle(x)) over a closed constant-speed curve on S^2.

    The curve is built from a trigonometric polynomial ``c(t)`` (projected to
    the sphere) and reparametrized by arc length: ``gamma(theta) = c(t(theta))``
    with ``t(theta)`` the inverse of a spectrally integrated arc-length map.
    Evaluation and the first two derivatives are available in closed form up
    to the Newton inversion of ``t(theta)``.
    """

    delta: float
    coeffs: np.ndarray  # (3, 2*m+1): const, cos k t, sin k t for k = 1..m
    _speed_hat: np.ndarray = field(repr=False)  # rfft of |c'(t)|
    _n_fft: int = field(repr=False)

    @property
    def modes(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2

    # raw trig polynomial p(t) and its derivatives
    def _raw(self, t, order: int):
        t = np.asarray(t, dtype=float)
        m = self.modes
        k = np.arange(1, m + 1)
        kt = t[..., None] * k
        cos, sin = np.cos(kt), np.sin(kt)
        a0 = self.coeffs[:, 0]
        ca = self.coeffs[:, 1 : m + 1]
        sa = self.coeffs[:, m + 1 :]
        if order == 0:
            return a0 + cos @ ca.T + sin @ sa.T
        if order == 1:
            return (-sin * k) @ ca.T + (cos * k) @ sa.T
        if order == 2:
            return (-cos * k**2) @ ca.T + (-sin * k**2) @ sa.T
        if order == 3:
            return (sin * k**3) @ ca.T + (-cos * k**3) @ sa.T
        raise ValueError(order)

    def _sphere(self, t):
        """c = p/|p| with derivatives up to order 2 in t."""
        p, p1, p2 = self._raw(t, 0), self._raw(t, 1), self._raw(t, 2)
        q = np.linalg.norm(p, axis=-1, keepdims=True)
        u = p / q
        dot = lambda a, b: np.sum(a * b, axis=-1, keepdims=True)
        q1 = dot(u, p1)
        u1 = (p1 - u * q1) / q
        q2 = dot(u1, p1) + dot(u, p2)
        u2 = (p2 - u1 * q1 - u * q2 - u1 * q1) / q
        return u, u1, u2

    def _speed_series(self, t, order: int = 0):
        """Fourier-series value of |c'| (order 0), its integral (order -1) or derivative (1)."""
        t = np.asarray(t, dtype=float)
        n = self._n_fft
        sh = self._speed_hat
        # the speed is analytic: truncate at the first coefficient below rounding
        small = np.abs(sh) < 1e-15 * abs(sh[0])
        if small.any():
            sh = sh[: int(np.argmax(small))]
        k = np.arange(sh.size)
        scale = np.where((k == 0) | ((n % 2 == 0) & (k == n // 2)), 1.0, 2.0) / n
        re, im = sh.real * scale, sh.imag * scale
        kt = t[..., None] * k
        if order == 0:
            return np.cos(kt) @ re - np.sin(kt) @ im
        if order == 1:
            return (-k * np.sin(kt)) @ re - (k * np.cos(kt)) @ im
        if order == -1:
            kk = np.where(k == 0, 1, k)
            body = (np.sin(kt) / kk) @ np.where(k == 0, 0.0, re) + (
                (np.cos(kt) - 1.0) / kk
            ) @ np.where(k == 0, 0.0, im)
            return re[0] * t + body
        raise ValueError(order)

    @property
    def length(self) -> float:
        return float(self._speed_hat[0].real / self._n_fft * 2.0 * math.pi)

    def arc_to_param(self, theta):
        """Invert s(t) = (2 pi / L) * int_0^t |c'| for t, theta in [0, 2 pi)."""
        theta = np.asarray(theta, dtype=float)
        uniq, inv = np.unique(theta, return_inverse=True)
        lam = 2.0 * math.pi / self.length
        t = uniq.copy()
        for _ in range(60):
            f = lam * self._speed_series(t, -1) - uniq
            step = f / (lam * self._speed_series(t, 0))
            t = t - step
            if np.max(np.abs(step), initial=0.0) < 1e-13:
                break
        return t[inv].reshape(theta.shape)

    def curve(self, theta):
        """gamma, gamma', gamma'' at arc-angle ``theta``, each (..., 3)."""
        t = self.arc_to_param(theta)
        u, u1, u2 = self._sphere(t)
        lam = self.length / (2.0 * math.pi)
        sig = self._speed_series(t, 0)[..., None]
        dsig = self._speed_series(t, 1)[..., None]
        tp = lam / sig
        tpp = -lam * dsig * tp / sig**2
        return u, u1 * tp, u2 * tp**2 + u1 * tpp

    @classmethod
    def from_coeffs(cls, coeffs, delta: float, n_fft: int = 4096) -> "GeneralizedCone":
        coeffs = np.asarray(coeffs, dtype=float)
        tmp = cls(delta, coeffs, np.zeros(1, complex), n_fft)
        t = 2.0 * math.pi * np.arange(n_fft) / n_fft
        _, u1, _ = tmp._sphere(t)
        speed_hat = np.fft.rfft(np.linalg.norm(u1, axis=-1))
        return cls(delta, coeffs, speed_hat, n_fft)

    @classmethod
    def exact(cls, delta: float, rotation=None) -> "GeneralizedCone":
        """The curve of the singular cone, optionally rotated by ``rotation``."""
        a = _stretch(delta)
        rot = np.eye(3) if rotation is None else np.asarray(rotation, float)
        base = np.array([[0.0, a, 0.0], [0.0, 0.0, a], [delta, 0.0, 0.0]])
        return cls.from_coeffs(rot @ base, delta)

    @classmethod
    def random(cls, delta: float, rng: np.random.Generator, modes: int = 3) -> "GeneralizedCone":
        """Random smooth curve whose arc length matches 2 pi sqrt(1 - delta^2).

        A circle of radius ``0.95 * sqrt(1-delta^2)`` is perturbed by random
        trigonometric terms; the perturbation amplitude is tuned so that the
        curve has the required length.
        """
        a = _stretch(delta)
        rho = 0.95 * a
        base = np.zeros((3, 2 * modes + 1))
        base[2, 0] = math.sqrt(1.0 - rho * rho)
        base[0, 1] = rho
        base[1, modes + 1] = rho
        noise = rng.normal(size=base.shape) / (1.0 + np.r_[0, np.arange(1, modes + 1), np.arange(1, modes + 1)]) ** 2
        noise[:, 0] = 0.0
        target = 2.0 * math.pi * a

        def excess(eps: float) -> float:
            return cls.from_coeffs(base + eps * noise, delta, n_fft=1024).length - target

        hi = 0.05
        while excess(hi) < 0.0:
            hi *= 2.0
            if hi > 50.0:
                raise RuntimeError("could not lengthen the curve to the target")
        eps = brentq(excess, 0.0, hi, xtol=1e-15, rtol=1e-15)
        cone = cls.from_coeffs(base + eps * noise, delta)
        return cone


def generalized_cone_map(x, cone: GeneralizedCone) -> np.ndarray:
    x, r, theta = _polar(x)
    if np.any(r == 0.0):
        raise DomainError("generalized cone is not differentiable at the apex")
    g, _, _ = cone.curve(np.mod(theta, 2.0 * math.pi))
    return r[..., None] * g


def generalized_cone_jets(x, cone: GeneralizedCone):
    """Analytic (Dy, D2y) of y = |x| gamma(angle x)."""
    x, r, theta = _polar(x)
    if np.any(r == 0.0):
        raise DomainError("generalized cone is not differentiable at the apex")
    g, g1, g2 = cone.curve(np.mod(theta, 2.0 * math.pi))
    rr = r[..., None]
    return polar_chain(rr, theta[..., None], g, rr * g1, 0.0 * g, g1, rr * g2)


# ---------------------------------------------------------------------------
# flat chart


def rotation2(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class FlatChart:
    delta: float

    def __post_init__(self) -> None:
        _stretch(self.delta)

    @property
    def stretch(self) -> float:
        return _stretch(self.delta)

    @property
    def phi_delta(self) -> float:
        """Angular deficit (1 - sqrt(1-delta^2)) * 2 pi."""
        return (1.0 - self.stretch) * 2.0 * math.pi

    @property
    def S_delta(self) -> np.ndarray:
        return rotation2(self.phi_delta)


def _angle_off_cut(x):
    x, r, _ = _polar(x)
    on_cut = (x[..., 1] == 0.0) & (x[..., 0] <= 0.0)
    if np.any(on_cut):
        raise DomainError("point on the closed negative real axis")
    return x, r, np.arctan2(x[..., 1], x[..., 0])


def iota(chart: FlatChart, x) -> np.ndarray:
    """Open the sector |angle| < sqrt(1-delta^2) pi onto the slit plane."""
    _, r, phi = _angle_off_cut(x)
    ang = phi / chart.stretch
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)


def iota_inverse(chart: FlatChart, x) -> np.ndarray:
    """Inverse of :func:`iota` on the slit disk (the map called j)."""
    _, r, phi = _angle_off_cut(x)
    if np.any(r == 0.0):
        raise DomainError("origin has no preimage in the sector")
    ang = phi * chart.stretch
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)


def sector_boundary_rays(chart: FlatChart) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions of the upper and lower straight edges of the sector."""
    ang = chart.stretch * math.pi
    return (
        np.array([math.cos(ang), math.sin(ang)]),
        np.array([math.cos(ang), -math.sin(ang)]),
    )


MapFn = Callable[[np.ndarray], np.ndarray]
