"""Dynamic device models injected into the network DAE.

Every model is a frozen dataclass whose evaluation methods are pure functions
of ``(x, vr, vi)``: ``x`` holds the device states along axis 0 and may carry
trailing batch axes (one column per perturbation when Jacobians are built
numerically); ``vr``/``vi`` are the rectangular terminal-voltage components
with the matching batch shape.

Sign conventions: generator convention for currents, ``omega`` is the speed
deviation in pu, Park transformation ``v_d + j*v_q = v*exp(-j*(delta - pi/2))``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import InitializationInfeasible, ValidationError

log = logging.getLogger(__name__)

OMEGA_B = 2.0 * math.pi * 60.0
STEADY_STATE_TOL = 1e-8


def _rows(*items):
    return np.array(np.broadcast_arrays(*items))


def _frozen(cond, value):
    return 0.0 * value if cond else value


class Device:
    """Common surface used by the simulation and analysis modules."""

    name: str
    bus: int
    state_names: tuple = ()
    fixes_voltage = False
    injects_power = True

    @property
    def n_states(self):
        return len(self.state_names)

    def labels(self):
        return [f"{self.name}.{s}" for s in self.state_names]

    def initialize(self, v, s):
        """Return ``(initialized_device, x0)`` for terminal voltage ``v`` and
        delivered complex power ``s``."""
        raise NotImplementedError

    def derivatives(self, x, vr, vi):
        raise NotImplementedError

    def current(self, x, vr, vi):
        raise NotImplementedError

    def signals(self, x, vr, vi):
        return {}


# --------------------------------------------------------------------------- classical machine


@dataclass(frozen=True)
class ClassicalSm(Device):
    name: str
    bus: int
    H: float
    D: float
    x_total: float
    e_prime: float = 1.0
    p_m: float = 0.0
    omega_b: float = OMEGA_B

    state_names = ("delta", "omega")

    def __post_init__(self):
        if not 0 < self.H <= 20:
            raise ValidationError(f"{self.name}: H must be in (0, 20], got {self.H}")
        if self.D < 0:
            raise ValidationError(f"{self.name}: D must be non-negative")
        if not self.x_total > 0:
            raise ValidationError(f"{self.name}: x_total must be positive")

    def initialize(self, v, s):
        i = np.conj(s / v)
        e = v + 1j * self.x_total * i
        dev = replace(self, e_prime=float(abs(e)), p_m=float(s.real))
        return dev, np.array([np.angle(e), 0.0])

    def p_e(self, delta, vr, vi):
        return self.e_prime * (vr * np.sin(delta) - vi * np.cos(delta)) / self.x_total

    def derivatives(self, x, vr, vi):
        return _rows(*classical_sm_derivatives(self, x[0], x[1], vr, vi))

    def current(self, x, vr, vi):
        er = self.e_prime * np.cos(x[0])
        ei = self.e_prime * np.sin(x[0])
        # (E - V)/(j x)
        return (ei - vi) / self.x_total, -(er - vr) / self.x_total

    def signals(self, x, vr, vi):
        return {"delta": x[0], "omega": x[1], "pe": self.p_e(x[0], vr, vi)}


def classical_sm_derivatives(sm, delta, omega, vr, vi):
    """Swing equation ``delta' = omega_b*omega``,
    ``2H*omega' = p_m - e'*v*sin(delta - theta)/X - D*omega``."""
    p_e = sm.p_e(delta, vr, vi)
    return sm.omega_b * omega, (sm.p_m - p_e - sm.D * omega) / (2.0 * sm.H)


# --------------------------------------------------------------------------- detailed machine


@dataclass(frozen=True)
class DetailedSm(Device):
    """Sixth-order two-axis machine with a DC1-type exciter and a two-stage
    turbine-governor (11 states)."""

    name: str
    bus: int
    H: float
    D: float = 0.0
    ra: float = 0.0
    xd: float = 1.0
    xd1: float = 0.3
    xd2: float = 0.2
    xq: float = 0.9
    xq1: float = 0.5
    xq2: float = 0.2
    Td01: float = 6.0
    Td02: float = 0.03
    Tq01: float = 0.5
    Tq02: float = 0.05
    # exciter
    Ka: float = 20.0
    Ta: float = 0.2
    Ke: float = 1.0
    Te: float = 0.314
    Kf: float = 0.063
    Tf: float = 0.35
    # governor
    Rg: float = 0.05
    Tg: float = 0.2
    Tt: float = 0.3
    omega_b: float = OMEGA_B
    freeze_exciter: bool = False
    freeze_governor: bool = False
    # set by initialize()
    v_ref: float = 1.0
    p_ref: float = 0.0

    state_names = ("delta", "omega", "eq1", "ed1", "eq2", "ed2", "efd", "vr", "rf", "xg", "pm")

    def __post_init__(self):
        if not (self.xd >= self.xd1 >= self.xd2 > 0 and self.xq >= self.xq1 >= self.xq2 > 0):
            raise ValidationError(f"{self.name}: reactances must satisfy x >= x' >= x'' > 0 on both axes")
        for f in ("H", "Td01", "Td02", "Tq01", "Tq02", "Ta", "Te", "Tf", "Tg", "Tt", "Rg"):
            if not getattr(self, f) > 0:
                raise ValidationError(f"{self.name}: {f} must be positive")
        if self.D < 0:
            raise ValidationError(f"{self.name}: D must be non-negative")

    def park(self, delta, vr, vi):
        s, c = np.sin(delta), np.cos(delta)
        return vr * s - vi * c, vr * c + vi * s

    def stator_currents(self, x, vr, vi):
        """Solve the algebraic stator equations for ``(i_d, i_q, v_d, v_q)``."""
        vd, vq = self.park(x[0], vr, vi)
        a = x[5] - vd
        b = x[4] - vq
        det = self.ra * self.ra + self.xd2 * self.xq2
        i_d = (self.ra * a + self.xq2 * b) / det
        i_q = (self.ra * b - self.xd2 * a) / det
        return i_d, i_q, vd, vq

    def initialize(self, v, s):
        i = np.conj(s / v)
        eq = v + complex(self.ra, self.xq) * i
        delta = float(np.angle(eq))
        vd, vq = self.park(delta, v.real, v.imag)
        i_d, i_q = self.park(delta, i.real, i.imag)
        ed2 = vd + self.ra * i_d - self.xq2 * i_q
        eq2 = vq + self.ra * i_q + self.xd2 * i_d
        ed1 = (self.xq - self.xq1) * i_q
        eq1 = eq2 + (self.xd1 - self.xd2) * i_d
        efd = eq1 + (self.xd - self.xd1) * i_d
        pe = vd * i_d + vq * i_q + self.ra * (i_d * i_d + i_q * i_q)
        rf = self.Kf / self.Tf * efd
        vr = self.Ke * efd
        dev = replace(self, v_ref=float(abs(v) + vr / self.Ka), p_ref=float(pe))
        x0 = np.array([delta, 0.0, eq1, ed1, eq2, ed2, efd, vr, rf, pe, pe], dtype=float)
        return dev, x0

    def derivatives(self, x, vr, vi):
        return detailed_sm_derivatives(self, x, vr, vi)

    def current(self, x, vr, vi):
        i_d, i_q, _, _ = self.stator_currents(x, vr, vi)
        s, c = np.sin(x[0]), np.cos(x[0])
        return i_d * s + i_q * c, i_q * s - i_d * c

    def signals(self, x, vr, vi):
        i_d, i_q, vd, vq = self.stator_currents(x, vr, vi)
        pe = vd * i_d + vq * i_q + self.ra * (i_d * i_d + i_q * i_q)
        return {
            "delta": x[0],
            "omega": x[1],
            "id": i_d,
            "iq": i_q,
            "pe": pe,
            "pm": x[10],
            "efd": x[6],
            "vt": np.hypot(vr, vi),
        }


def detailed_sm_derivatives(sm, x, vr, vi):
    """State derivatives of the 11th-order machine (machine + exciter + governor)."""
    delta, omega, eq1, ed1, eq2, ed2, efd, v_r, rf, xg, pm = x
    i_d, i_q, vd, vq = sm.stator_currents(x, vr, vi)
    pe = vd * i_d + vq * i_q + sm.ra * (i_d * i_d + i_q * i_q)
    vt = np.hypot(vr, vi)

    d_delta = sm.omega_b * omega
    d_omega = (pm - pe - sm.D * omega) / (2.0 * sm.H)
    d_eq1 = (-eq1 - (sm.xd - sm.xd1) * i_d + efd) / sm.Td01
    d_ed1 = (-ed1 + (sm.xq - sm.xq1) * i_q) / sm.Tq01
    d_eq2 = (-eq2 + eq1 - (sm.xd1 - sm.xd2) * i_d) / sm.Td02
    d_ed2 = (-ed2 + ed1 + (sm.xq1 - sm.xq2) * i_q) / sm.Tq02

    kf_tf = sm.Kf / sm.Tf
    d_efd = (-sm.Ke * efd + v_r) / sm.Te
    d_vr = (-v_r + sm.Ka * (rf - kf_tf * efd) + sm.Ka * (sm.v_ref - vt)) / sm.Ta
    d_rf = (-rf + kf_tf * efd) / sm.Tf

    d_xg = (-xg + sm.p_ref - omega / sm.Rg) / sm.Tg
    d_pm = (-pm + xg) / sm.Tt

    ex = sm.freeze_exciter
    gov = sm.freeze_governor
    return _rows(
        d_delta, d_omega, d_eq1, d_ed1, d_eq2, d_ed2,
        _frozen(ex, d_efd), _frozen(ex, d_vr), _frozen(ex, d_rf),
        _frozen(gov, d_xg), _frozen(gov, d_pm),
    )


# --------------------------------------------------------------------------- converter


@dataclass(frozen=True)
class CigModel(Device):
    """Converter-interfaced generator: SRF-PLL (PI integrator + angle),
    droop through cascaded lags ``T_f`` and ``T_d``, first-order d-axis
    current loop and a d-axis-priority current clamp.

    ``imax`` is given on the device base ``mva``; currents in the network
    are on the system base ``base_mva``.
    """

    name: str
    bus: int
    kp: float = 0.1
    ki: float = 0.05
    R: float = 0.05
    Tf: float = 1.2
    Td: float = 0.6
    Ti: float = 0.02
    imax: float = 1.2
    mva: float = 100.0
    base_mva: float = 100.0
    v_floor: float = 0.05
    omega_ref: float = 0.0
    omega_b: float = OMEGA_B
    # set by initialize()
    p_ref: float = 0.0
    iq0: float = 0.0

    state_names = ("pll_xi", "pll_theta", "droop_f", "droop_d", "id")

    def __post_init__(self):
        for f in ("R", "Tf", "Td", "Ti", "imax", "mva"):
            if not getattr(self, f) > 0:
                raise ValidationError(f"{self.name}: {f} must be positive")

    @property
    def i_limit(self):
        return self.imax * self.mva / self.base_mva

    @property
    def id0(self):
        return self.p_ref

    def initialize(self, v, s):
        vm = abs(v)
        theta = float(np.angle(v))
        dev = replace(self, p_ref=float(s.real), iq0=float(-s.imag / vm))
        id0 = s.real / vm
        if math.hypot(id0, dev.iq0) > self.i_limit:
            raise InitializationInfeasible(
                f"{self.name}: pre-disturbance current {math.hypot(id0, dev.iq0):.4f} exceeds "
                f"limit {self.i_limit:.4f}",
                residual=math.hypot(id0, dev.iq0) - self.i_limit,
            )
        return dev, np.array([0.0, theta, 0.0, 0.0, id0])

    def angle_error(self, theta_pll, vr, vi):
        """``theta - theta_pll`` wrapped to (-pi, pi]."""
        c, s = np.cos(theta_pll), np.sin(theta_pll)
        return np.arctan2(vi * c - vr * s, vr * c + vi * s)

    def id_command(self, x, vr, vi):
        vm = np.maximum(np.hypot(vr, vi), self.v_floor)
        return self.p_ref / vm + x[3]

    def derivatives(self, x, vr, vi):
        err = self.angle_error(x[1], vr, vi)
        omega_est, d_xi, d_theta = pll_step(self, err, x[0])
        d_zf, d_zd = droop_response(self, self.omega_ref - omega_est, x[2], x[3])
        d_id = (self.id_command(x, vr, vi) - x[4]) / self.Ti
        return _rows(d_xi, d_theta, d_zf, d_zd, d_id)

    def clamped_dq(self, i_d):
        lim = self.i_limit
        i_d = np.clip(i_d, -lim, lim)
        iq_lim = np.sqrt(np.maximum(lim * lim - i_d * i_d, 0.0))
        i_q = np.clip(self.iq0, -iq_lim, iq_lim)
        return i_d, i_q

    def current(self, x, vr, vi):
        i = cig_injection(self, x[4], x[1])
        return i.real, i.imag

    def signals(self, x, vr, vi):
        err = self.angle_error(x[1], vr, vi)
        i_d, i_q = self.clamped_dq(x[4])
        return {
            "pll_freq": self.kp * err + x[0],
            "pll_theta": x[1],
            "droop": x[3],
            "droop_norm": x[3] / self.i_limit,
            "id": i_d,
            "iq": i_q,
            "id_cmd": self.id_command(x, vr, vi),
        }


def pll_step(cig, angle_error, xi):
    """Synchronous-reference-frame PLL.

    Returns ``(omega_est, d_xi, d_theta_pll)`` where ``omega_est`` is the
    estimated frequency deviation ``kp*err + xi``.
    """
    omega_est = cig.kp * angle_error + xi
    return omega_est, cig.ki * angle_error, cig.omega_b * (cig.omega_ref + omega_est)


def droop_response(cig, freq_error, z_f, z_d):
    """Gain ``1/R`` followed by lags ``T_f`` then ``T_d``; ``z_d`` is the
    d-axis current increment added to the set point."""
    return (freq_error / cig.R - z_f) / cig.Tf, (z_f - z_d) / cig.Td


def cig_injection(cig, i_d, theta_pll):
    """Complex network-frame current of the converter after clamping."""
    i_d, i_q = cig.clamped_dq(i_d)
    return (i_d + 1j * i_q) * np.exp(1j * theta_pll)


# --------------------------------------------------------------------------- auxiliary devices


@dataclass(frozen=True)
class InfiniteBus(Device):
    """Ideal voltage source: holds its bus at the power-flow phasor."""

    name: str
    bus: int
    v: complex = 1 + 0j

    state_names = ()
    fixes_voltage = True

    def initialize(self, v, s):
        return replace(self, v=complex(v)), np.zeros(0)

    def derivatives(self, x, vr, vi):
        return np.zeros((0,) + np.shape(vr))

    def current(self, x, vr, vi):
        z = np.zeros_like(np.asarray(vr, dtype=float))
        return z, z


@dataclass(frozen=True)
class LinearDevice(Device):
    """``x' = A x`` with no network injection; used for verification."""

    name: str
    bus: int
    A: tuple = ((0.0,),)
    x0: tuple = (0.0,)

    injects_power = False

    @property
    def state_names(self):
        return tuple(f"x{i}" for i in range(len(self.A)))

    def initialize(self, v, s):
        return self, np.array(self.x0, dtype=float)

    def derivatives(self, x, vr, vi):
        return np.tensordot(np.array(self.A), x, axes=1)

    def current(self, x, vr, vi):
        z = np.zeros_like(np.asarray(vr, dtype=float))
        return z, z


# --------------------------------------------------------------------------- factory


DEVICE_TYPES = {
    "classical_sm": ClassicalSm,
    "detailed_sm": DetailedSm,
    "cig": CigModel,
    "infinite_bus": InfiniteBus,
}


def make_device(kind, params, omega_b=OMEGA_B, base_mva=100.0, logger=None):
    """Build a device from a parameter mapping, logging every defaulted value."""
    try:
        cls = DEVICE_TYPES[kind]
    except KeyError:
        raise ValidationError(f"unknown device type {kind!r}; known: {sorted(DEVICE_TYPES)}") from None
    names = {f.name for f in fields(cls)}
    unknown = set(params) - names
    if unknown:
        raise ValidationError(f"{kind}: unknown parameters {sorted(unknown)}")
    kwargs = dict(params)
    if "omega_b" in names:
        kwargs.setdefault("omega_b", omega_b)
    if "base_mva" in names:
        kwargs.setdefault("base_mva", base_mva)
    dev = cls(**kwargs)
    logger = logger or log
    internal = {"v_ref", "p_ref", "iq0", "e_prime", "p_m", "v", "omega_b", "base_mva"}
    for f in fields(cls):
        if f.name not in params and f.name not in internal and f.name not in ("name", "bus"):
            logger.info("%s %s: default %s = %r", kind, dev.name, f.name, getattr(dev, f.name))
    return dev


def device_power(pf, network, bus_id):
    """Complex power a device at ``bus_id`` must deliver: net injection plus
    any load scheduled at that bus."""
    b = network.bus(bus_id)
    return complex(pf.injection(bus_id)) + complex(b.p_load, b.q_load)


def initialize_all(devices, pf, network, tol=STEADY_STATE_TOL):
    """Initialize every device from a converged power flow.

    Returns ``(devices, x0_list)``. Raises :class:`InitializationInfeasible`
    if any device is not in steady state at its initial point.
    """
    seen = {}
    for d in devices:
        if d.injects_power:
            if d.bus in seen:
                raise ValidationError(f"buses with more than one power device are not supported: bus {d.bus}")
            seen[d.bus] = d.name
    out, states = [], []
    for d in devices:
        v = complex(pf.voltage(d.bus))
        s = device_power(pf, network, d.bus) if d.injects_power else 0j
        d2, x0 = d.initialize(v, s)
        if d2.injects_power and not d2.fixes_voltage:
            ir, ii = d2.current(x0, v.real, v.imag)
            s_check = v * np.conj(complex(ir, ii))
            if abs(s_check - s) > 1e-8:
                raise InitializationInfeasible(
                    f"{d.name}: initial injection {s_check:.6f} differs from dispatch {s:.6f}",
                    residual=abs(s_check - s),
                )
        dx = np.asarray(d2.derivatives(x0, v.real, v.imag))
        if not isinstance(d2, LinearDevice) and dx.size and np.max(np.abs(dx)) > tol:
            raise InitializationInfeasible(
                f"{d.name}: initial derivative {np.max(np.abs(dx)):.3e} exceeds {tol:g}",
                residual=float(np.max(np.abs(dx))),
            )
        out.append(d2)
        states.append(np.asarray(x0, dtype=float))
    return out, states
