"""Generic second-order oscillator ``c*y'' + d*y' - f(y) = 0``.

A synchronous machine with the classical swing model maps onto this form with
``y = delta``, ``c = 2H``, ``d = D`` and ``f(y) = omega_b*(p_m - p_e(y))``.
The module provides equilibria, linearization ``c*y'' + d*y' + k*y = 0``,
the closed-form eigenvalues, the stored-energy / dissipation ratio and a
fixed-step step response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import Divergence, NoEquilibrium, NonRestoring, ValidationError, ZeroDamping

OMEGA_B_60HZ = 2.0 * math.pi * 60.0

CRITICAL_TOL = 1e-9


@dataclass(frozen=True)
class LinearRestoring:
    """Restoring term ``f(y) = -k*y``."""

    k: float

    def f(self, y, omega_b):
        return -self.k * y

    def dfdy(self, y, omega_b):
        return -self.k


@dataclass(frozen=True)
class SmElectrical:
    """Restoring term of a classical machine behind a reactance.

    ``f(y) = omega_b*(p_m - e_prime*v*sin(y - theta)/x)``
    """

    p_m: float
    e_prime: float
    v: float
    theta: float
    x: float

    def __post_init__(self):
        if self.x <= 0 or self.e_prime <= 0 or self.v <= 0:
            raise ValidationError("SmElectrical requires x, e_prime, v > 0")

    @property
    def p_max(self):
        return self.e_prime * self.v / self.x

    def f(self, y, omega_b):
        return omega_b * (self.p_m - self.p_max * np.sin(y - self.theta))

    def dfdy(self, y, omega_b):
        return -omega_b * self.p_max * np.cos(y - self.theta)


Restoring = Union[LinearRestoring, SmElectrical]


@dataclass(frozen=True)
class OscillatorParams:
    c: float
    d: float
    restoring: Restoring
    omega_b: float = OMEGA_B_60HZ

    def __post_init__(self):
        if not self.c > 0:
            raise ValidationError(f"c must be positive, got {self.c}")
        if not self.d >= 0:
            raise ValidationError(f"d must be non-negative, got {self.d}")
        if not self.omega_b > 0:
            raise ValidationError(f"omega_b must be positive, got {self.omega_b}")

    def f(self, y):
        return self.restoring.f(y, self.omega_b)


@dataclass(frozen=True)
class LinearOscillator:
    c: float
    d: float
    k: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValidationError(f"c must be positive, got {self.c}")
        if not self.d >= 0:
            raise ValidationError(f"d must be non-negative, got {self.d}")

    @property
    def is_restoring(self):
        return self.k > 0

    def companion_matrix(self):
        return np.array([[0.0, 1.0], [-self.k / self.c, -self.d / self.c]])

    def scaled(self, factor):
        """Same device expressed on a power base ``factor`` times smaller."""
        return LinearOscillator(self.c * factor, self.d * factor, self.k * factor)


# Illustrative example presets: (c, d) per device.
PRESETS = {
    "sm": (6.0, 3.0),
    "vsm": (6.0, 100.0),
    "pll": (0.01, 3.0),
}
DEFAULT_K = 10.0


def preset(name, k=DEFAULT_K, c=None, d=None):
    """Return the linear oscillator for one of the built-in presets."""
    try:
        c0, d0 = PRESETS[name.lower()]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return LinearOscillator(c0 if c is None else c, d0 if d is None else d, k)


def as_params(lin, omega_b=OMEGA_B_60HZ):
    return OscillatorParams(lin.c, lin.d, LinearRestoring(lin.k), omega_b)


def equilibrium(params):
    """Stable equilibrium ``y0`` with ``f(y0) = 0``.

    For the machine form the principal arcsin branch is used, i.e. the
    operating point with ``|y0 - theta| <= pi/2``.
    """
    r = params.restoring
    if isinstance(r, LinearRestoring):
        if r.k == 0:
            raise NoEquilibrium("k = 0: every point is an equilibrium")
        return 0.0
    ratio = r.p_m * r.x / (r.e_prime * r.v)
    if abs(ratio) > 1.0:
        raise NoEquilibrium(f"|p_m*X/(e'*v)| = {abs(ratio):.6g} > 1, no equilibrium exists")
    return r.theta + math.asin(ratio)


def linearize(params, y0, strict=False):
    """Linearize about ``y0``: ``k = -df/dy``.

    A non-restoring result (``k <= 0``) is returned with
    ``is_restoring == False`` unless ``strict`` is set, in which case
    :class:`NonRestoring` is raised.
    """
    k = float(-params.restoring.dfdy(y0, params.omega_b))
    lin = LinearOscillator(params.c, params.d, k)
    if strict and not lin.is_restoring:
        raise NonRestoring(f"k = {k:.6g} <= 0 at y0 = {y0:.6g}")
    return lin


def eigenvalues(lin):
    """Both roots of ``c*lam**2 + d*lam + k = 0``.

    The root with the larger real part (the dominant one) comes first. Real
    roots use the cancellation-free form of the quadratic formula.
    """
    c, d, k = lin.c, lin.d, lin.k
    disc = d * d - 4.0 * c * k
    if disc < 0:
        s = math.sqrt(-disc)
        return (complex(-d, s) / (2 * c), complex(-d, -s) / (2 * c))
    s = math.sqrt(disc)
    q = -0.5 * (d + s) if d >= 0 else -0.5 * (d - s)
    if q == 0.0:
        return (0j, 0j)
    r1, r2 = q / c, k / q
    return (complex(max(r1, r2)), complex(min(r1, r2)))


def energy_dissipation_ratio(lin):
    """``dE/dP_l = c/(2d)`` in seconds."""
    if lin.d == 0:
        raise ZeroDamping("d = 0: stored energy is never dissipated, ratio unbounded")
    return lin.c / (2.0 * lin.d)


def damping_classification(lin):
    """Return ``(class_name, zeta)`` with ``zeta = d/(2*sqrt(c*k))``."""
    if not lin.k > 0:
        raise ValidationError("damping classification requires k > 0")
    zeta = lin.d / (2.0 * math.sqrt(lin.c * lin.k))
    if abs(zeta - 1.0) <= CRITICAL_TOL:
        return "critical", zeta
    return ("underdamped" if zeta < 1.0 else "overdamped"), zeta


@dataclass(frozen=True)
class OscillatorMetrics:
    eigenvalues: tuple
    damping_class: str
    damping_ratio: float
    natural_frequency_hz: float
    energy_dissipation_ratio: float
    settling_time_2pct: float
    # -1/(4 Re lam) for each root; equals the ratio above only when underdamped
    ratio_from_eigenvalues: tuple = field(default=())


def metrics(lin):
    lam = eigenvalues(lin)
    cls, zeta = damping_classification(lin)
    sigma = -max(l.real for l in lam)
    settling = math.log(50.0) / sigma if sigma > 0 else math.inf
    return OscillatorMetrics(
        eigenvalues=lam,
        damping_class=cls,
        damping_ratio=zeta,
        natural_frequency_hz=math.sqrt(lin.k / lin.c) / (2 * math.pi),
        energy_dissipation_ratio=energy_dissipation_ratio(lin) if lin.d > 0 else math.inf,
        settling_time_2pct=settling,
        ratio_from_eigenvalues=tuple(
            -1.0 / (4.0 * l.real) if l.real != 0 else math.inf for l in lam
        ),
    )


@dataclass(frozen=True)
class StepResponse:
    t: np.ndarray
    y: np.ndarray
    ydot: np.ndarray
    y0: float


def _forcing_scale(params):
    # a power step enters the machine form through omega_b*(p_m + step)
    return params.omega_b if isinstance(params.restoring, SmElectrical) else 1.0


def step_response(params, step=0.1, horizon=20.0, dt=1e-3, bound=1e6, y_init=None, ydot_init=0.0):
    """Integrate the oscillator after a step in its forcing at ``t = 0``.

    Starts from the stable equilibrium (or ``y_init``) and uses the classical
    fixed-step RK4 scheme. Returns ``floor(horizon/dt) + 1`` samples.
    """
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    if not horizon >= dt:
        raise ValidationError(f"horizon must be >= dt, got horizon={horizon}, dt={dt}")
    y0 = equilibrium(params) if y_init is None else float(y_init)
    n = int(math.floor(horizon / dt + 1e-9)) + 1
    c, d = params.c, params.d
    u = step * _forcing_scale(params)
    f = params.f

    def rhs(y, v):
        return v, (f(y) + u - d * v) / c

    t = np.arange(n) * dt
    ys = np.empty(n)
    vs = np.empty(n)
    y, v = y0, float(ydot_init)
    ys[0], vs[0] = y, v
    for i in range(1, n):
        k1y, k1v = rhs(y, v)
        k2y, k2v = rhs(y + 0.5 * dt * k1y, v + 0.5 * dt * k1v)
        k3y, k3v = rhs(y + 0.5 * dt * k2y, v + 0.5 * dt * k2v)
        k4y, k4v = rhs(y + dt * k3y, v + dt * k3v)
        y = y + dt / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        v = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (abs(y) <= bound and abs(v) <= bound):
            raise Divergence(f"|y| exceeded {bound:g} at t = {i * dt:.6g} s")
        ys[i], vs[i] = y, v
    return StepResponse(t, ys, vs, y0)


def settling_time(t, signal, band=0.02):
    """Last time the signal leaves a ``band`` fraction of its peak deviation
    from the final value."""
    dev = np.abs(np.asarray(signal) - signal[-1])
    peak = dev.max()
    if peak == 0:
        return 0.0
    outside = np.nonzero(dev > band * peak)[0]
    if outside.size == 0:
        return float(t[0])
    last = outside[-1]
    return float(t[min(last + 1, len(t) - 1)])


def zero_crossings(x, floor=0.0):
    """Number of sign changes, ignoring samples with ``|x| <= floor``."""
    x = np.asarray(x)
    s = np.sign(np.where(np.abs(x) > floor, x, 0.0))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def ratio_identity_residual(lin):
    """``|c/(2d) + 1/(4 Re lam)|`` for an underdamped oscillator."""
    lam = eigenvalues(lin)[0]
    return abs(lin.c / (2 * lin.d) + 1.0 / (4.0 * lam.real))


__all__ = [
    "LinearRestoring",
    "SmElectrical",
    "OscillatorParams",
    "LinearOscillator",
    "OscillatorMetrics",
    "StepResponse",
    "PRESETS",
    "DEFAULT_K",
    "preset",
    "as_params",
    "equilibrium",
    "linearize",
    "eigenvalues",
    "energy_dissipation_ratio",
    "damping_classification",
    "metrics",
    "step_response",
    "settling_time",
    "zero_crossings",
    "ratio_identity_residual",
]
