"""Network DAE assembly and fixed-step implicit trapezoidal integration
through timed switching events."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import devices as dv
from .errors import DimensionMismatch, NewtonDivergence, SingularAlgebraicJacobian, ValidationError
from .network import (
    ApplyFault,
    ClearFault,
    TripLine,
    apply_event,
    build_ybus,
    loads_to_admittance,
    solve_power_flow,
)

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-9
NEWTON_MAX_ITER = 50
MAX_HALVINGS = 4
ALGEBRAIC_TOL = 1e-8
DEFAULT_SCHEDULE = ((1.0, 1e-3), (math.inf, 5e-3))


class DaeSystem:
    """``x' = f(x, y)``, ``0 = g(x, y)`` with ``y`` the rectangular bus voltages.

    ``g`` is the nodal current balance ``I_inj(x, V) - Y V`` split into real
    and imaginary rows; buses held by an ideal source use ``V - V0`` instead.
    Every method accepts arrays with trailing batch axes.
    """

    def __init__(self, ybus, devices):
        self.ybus = ybus
        self.devices = list(devices)
        self.nb = len(ybus.ids)
        offsets = [0]
        for d in self.devices:
            offsets.append(offsets[-1] + d.n_states)
        self.offsets = offsets
        self.nx = offsets[-1]
        self.bus_index = [ybus.index(d.bus) for d in self.devices]
        self.fixed = {}
        for d, bi in zip(self.devices, self.bus_index):
            if d.fixes_voltage:
                self.fixed[bi] = complex(d.v)

    @property
    def n(self):
        return self.nx + 2 * self.nb

    def labels(self):
        out = []
        for d in self.devices:
            out.extend(d.labels())
        return out

    def with_ybus(self, ybus):
        return DaeSystem(ybus, self.devices)

    def device_states(self, x, k):
        return x[self.offsets[k]:self.offsets[k + 1]]

    def split(self, z):
        nx, nb = self.nx, self.nb
        return z[:nx], z[nx:nx + nb], z[nx + nb:]

    def join(self, x, vr, vi):
        return np.concatenate([x, vr, vi])

    def f(self, x, vr, vi):
        if x.shape[0] != self.nx:
            raise DimensionMismatch(f"expected {self.nx} states, got {x.shape[0]}")
        parts = []
        for k, d in enumerate(self.devices):
            if d.n_states == 0:
                continue
            b = self.bus_index[k]
            parts.append(np.asarray(d.derivatives(self.device_states(x, k), vr[b], vi[b]), dtype=float))
        if not parts:
            return np.zeros((0,) + vr.shape[1:])
        return np.concatenate(parts, axis=0)

    def g(self, x, vr, vi):
        v = vr + 1j * vi
        inj = np.zeros(v.shape, dtype=complex)
        for k, d in enumerate(self.devices):
            b = self.bus_index[k]
            ir, ii = d.current(self.device_states(x, k), vr[b], vi[b])
            inj[b] = inj[b] + ir + 1j * ii
        mis = inj - self.ybus.matrix @ v
        gr, gi = mis.real, mis.imag
        for b, v0 in self.fixed.items():
            gr[b] = vr[b] - v0.real
            gi[b] = vi[b] - v0.imag
        return np.concatenate([gr, gi], axis=0)

    def fg(self, z):
        x, vr, vi = self.split(z)
        return np.concatenate([self.f(x, vr, vi), self.g(x, vr, vi)], axis=0)

    def jacobian(self, z, h=1e-7, central=False):
        """Finite-difference Jacobian of ``(f, g)`` w.r.t. ``(x, y)``.

        The step for variable ``i`` is ``h*max(1, |z_i|)``; all perturbations
        are evaluated in one batched call.
        """
        n = z.size
        steps = h * np.maximum(1.0, np.abs(z))
        E = np.diag(steps)
        if central:
            F = self.fg(np.concatenate([z[:, None] + E, z[:, None] - E], axis=1))
            return (F[:, :n] - F[:, n:]) / (2.0 * steps)
        F = self.fg(np.concatenate([z[:, None], z[:, None] + E], axis=1))
        return (F[:, 1:] - F[:, :1]) / steps

    def max_mismatch(self, x, vr, vi):
        return float(np.max(np.abs(self.g(x, vr, vi)))) if self.nb else 0.0


def prepare(netfile, omega_b=None, logger=None):
    """Power flow, constant-admittance loads and device initialization.

    Returns ``(dae, z0, pf)`` for the undisturbed system.
    """
    net = netfile.network
    omega_b = omega_b or net.omega_b
    devs = [
        dv.make_device(spec.kind, spec.params, omega_b=omega_b, base_mva=net.base_mva, logger=logger)
        for spec in netfile.devices
    ]
    dae, z0, pf = prepare_system(net, devs)
    (logger or log).info("initial power flow: %d iterations, max residual %.3e (tol 1e-10)",
                         pf.iterations, pf.max_residual)
    return dae, z0, pf


def prepare_system(net, devs, pf=None):
    if pf is None:
        pf = solve_power_flow(net, tol=1e-10)
    buses = loads_to_admittance(pf, net.buses)
    ybus = build_ybus(buses, net.branches)
    devs, states = dv.initialize_all(devs, pf, net)
    dae = DaeSystem(ybus, devs)
    x0 = np.concatenate(states) if states else np.zeros(0)
    z0 = dae.join(x0, pf.v.real.copy(), pf.v.imag.copy())
    return dae, z0, pf


def assemble(ybus, devices):
    return DaeSystem(ybus, devices)


# --------------------------------------------------------------------------- integration


def step_trapezoidal(dae, z, dt, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER, fz=None, jac=None):
    """One implicit trapezoidal step of the full DAE.

    Solves ``x1 - x0 - dt/2*(f(z0) + f(z1)) = 0`` and ``g(z1) = 0``
    simultaneously with Newton's method. ``jac`` may carry a Jacobian to
    reuse (dishonest Newton); by default it is rebuilt every iteration.
    Returns ``(z1, iterations)``.
    """
    nx = dae.nx
    if fz is None:
        x, vr, vi = dae.split(z)
        fz = dae.f(x, vr, vi)
    z1 = z.copy()
    x0 = z[:nx]
    eye = np.eye(dae.n)
    for it in range(1, max_iter + 1):
        F = dae.fg(z1)
        R = F.copy()
        R[:nx] = z1[:nx] - x0 - 0.5 * dt * (fz + F[:nx])
        J = jac if jac is not None and it <= 5 else dae.jacobian(z1)
        M = J.copy()
        M[:nx] = eye[:nx] - 0.5 * dt * J[:nx]
        try:
            dz = np.linalg.solve(M, -R)
        except np.linalg.LinAlgError as exc:
            raise NewtonDivergence(f"singular Newton matrix at iteration {it}") from exc
        if not np.all(np.isfinite(dz)):
            raise NewtonDivergence(f"non-finite Newton update at iteration {it}")
        z1 = z1 + dz
        if np.max(np.abs(dz)) < tol:
            x, vr, vi = dae.split(z1)
            if dae.max_mismatch(x, vr, vi) < ALGEBRAIC_TOL:
                return z1, it
    raise NewtonDivergence(f"Newton did not converge in {max_iter} iterations")


def solve_algebraic(dae, z, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Re-solve ``g(x, y) = 0`` for ``y`` with the states frozen."""
    nx = dae.nx
    x = z[:nx]
    y = z[nx:].copy()
    for it in range(max_iter + 1):
        zz = np.concatenate([x, y])
        gv = dae.fg(zz)[nx:]
        if np.max(np.abs(gv)) < 1e-12:
            return zz, it
        if it == max_iter:
            break
        gy = dae.jacobian(zz)[nx:, nx:]
        try:
            dy = np.linalg.solve(gy, -gv)
        except np.linalg.LinAlgError as exc:
            raise SingularAlgebraicJacobian("network Jacobian is singular") from exc
        y = y + dy
        if np.max(np.abs(dy)) < tol:
            zz = np.concatenate([x, y])
            return zz, it + 1
    raise NewtonDivergence(f"algebraic re-solution did not converge in {max_iter} iterations")


# --------------------------------------------------------------------------- scenario


@dataclass(frozen=True)
class TimedEvent:
    t: float
    event: object


@dataclass
class Scenario:
    netfile: object
    events: list = field(default_factory=list)
    dt: float = None
    horizon: float = 10.0
    channels: list = None
    schedule: tuple = None
    initial_perturbation: dict = None  # {"SM2.omega": 1e-3}

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if not self.horizon > 0:
            raise ValidationError(f"horizon must be positive, got {self.horizon}")
        for ev in self.events:
            if not 0.0 < ev.t < self.horizon:
                raise ValidationError(f"event time {ev.t} outside (0, {self.horizon})")
        self.events = sorted(self.events, key=lambda e: e.t)


def scenario_from_file(scn, netfile, dt=None, horizon=None, fault_admittance=None):
    events = []
    for e in scn.events:
        if e.kind == "fault":
            y = e.admittance if e.admittance is not None else fault_admittance
            ev = ApplyFault(e.bus) if y is None else ApplyFault(e.bus, y)
        elif e.kind == "clear":
            ev = ClearFault(e.bus)
        else:
            ev = TripLine(*e.line)
        events.append(TimedEvent(e.t, ev))
    return Scenario(
        netfile=netfile,
        events=events,
        dt=dt if dt is not None else scn.dt,
        horizon=horizon if horizon is not None else scn.horizon,
        channels=scn.channels,
    )


def time_grid(horizon, dt=None, schedule=None):
    """Grid points built from integer step counts to avoid drift."""
    if dt is not None:
        schedule = ((math.inf, dt),)
    schedule = schedule or DEFAULT_SCHEDULE
    pts = [0.0]
    start = 0.0
    for end, h in schedule:
        end = min(end, horizon)
        if end <= start:
            continue
        n = int(math.floor((end - start) / h + 1e-9))
        pts.extend(start + k * h for k in range(1, n + 1))
        if pts[-1] < end - 1e-12:
            pts.append(end)
        start = pts[-1]
        if start >= horizon - 1e-12:
            break
    return np.array(pts)


@dataclass
class SimulationResult:
    t: np.ndarray
    x: np.ndarray  # (K, nx)
    v: np.ndarray  # (K, nb) complex
    iterations: np.ndarray
    dae: DaeSystem = field(repr=False)
    failed_at: float = None
    message: str = ""

    @property
    def labels(self):
        return self.dae.labels()

    def state(self, label):
        return self.x[:, self.labels.index(label)]

    def channels(self, names=None):
        """Derived signals recomputed from the stored states and voltages."""
        out = {}
        dae = self.dae
        X = self.x.T
        for k, d in enumerate(dae.devices):
            b = dae.bus_index[k]
            sig = d.signals(dae.device_states(X, k), self.v[:, b].real, self.v[:, b].imag)
            for key, val in sig.items():
                out[f"{d.name}.{key}"] = np.broadcast_to(np.asarray(val, dtype=float), self.t.shape)
        for i, bid in enumerate(dae.ybus.ids):
            out[f"bus{bid}.v"] = np.abs(self.v[:, i])
        if names is None:
            return out
        missing = [n for n in names if n not in out]
        if missing:
            raise ValidationError(f"unknown channels {missing}; available: {sorted(out)}")
        return {n: out[n] for n in names}


def _advance(dae, z, h, t, depth=0, jac=None):
    try:
        z1, it = step_trapezoidal(dae, z, h, jac=jac)
        return z1, it
    except NewtonDivergence:
        if depth >= MAX_HALVINGS:
            raise
        log.warning("t=%.6f: Newton failed with dt=%g, halving", t, h)
        za, ia = _advance(dae, z, h / 2, t, depth + 1)
        zb, ib = _advance(dae, za, h / 2, t + h / 2, depth + 1)
        return zb, ia + ib


def run(scenario, prepared=None, dishonest=False):
    """Integrate a scenario; returns a :class:`SimulationResult`.

    Solver failures do not raise: the partial result carries ``failed_at``.
    """
    if prepared is None:
        dae, z, _ = prepare(scenario.netfile)
    else:
        dae, z = prepared[0], prepared[1].copy()
    if scenario.initial_perturbation:
        labels = dae.labels()
        for name, delta in scenario.initial_perturbation.items():
            if name not in labels:
                raise ValidationError(f"unknown state {name!r}")
            z[labels.index(name)] += delta
        z, _ = solve_algebraic(dae, z)

    grid = time_grid(scenario.horizon, scenario.dt, scenario.schedule)
    at = {}
    for ev in scenario.events:
        i = int(np.argmin(np.abs(grid - ev.t)))
        if abs(grid[i] - ev.t) > 1e-9:
            log.warning("event %r at t=%g snapped to grid point %g", ev.event, ev.t, grid[i])
        at.setdefault(i, []).append(ev.event)

    K = len(grid)
    X = np.empty((K, dae.nx))
    V = np.empty((K, dae.nb), dtype=complex)
    iters = np.zeros(K, dtype=int)
    x, vr, vi = dae.split(z)
    X[0], V[0] = x, vr + 1j * vi
    failed_at, message = None, ""
    jac = dae.jacobian(z) if dishonest else None
    for i in range(1, K):
        h = grid[i] - grid[i - 1]
        try:
            z, it = _advance(dae, z, h, grid[i - 1], jac=jac)
            if i in at:
                yb = dae.ybus
                for ev in at[i]:
                    yb = apply_event(yb, ev)
                    log.info("t=%.6f: %r", grid[i], ev)
                if not np.array_equal(yb.matrix, dae.ybus.matrix):
                    dae = dae.with_ybus(yb)
                    z, it2 = solve_algebraic(dae, z)
                    it += it2
                else:
                    dae = dae.with_ybus(yb)
                if dishonest:
                    jac = dae.jacobian(z)
        except NewtonDivergence as exc:
            failed_at = float(grid[i])
            message = f"solver failure at t={failed_at:.6f}: {exc}"
            log.error(message)
            X, V, iters, grid = X[:i], V[:i], iters[:i], grid[:i]
            break
        x, vr, vi = dae.split(z)
        X[i], V[i], iters[i] = x, vr + 1j * vi, it
    return SimulationResult(grid, X, V, iters, dae, failed_at, message)


def write_csv(path, result, channels=None):
    ch = result.channels(channels)
    names = list(ch)
    cols = [ch[n] for n in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"] + names)
        for k, t in enumerate(result.t):
            w.writerow([repr(float(t))] + [repr(float(c[k])) for c in cols])
    return names
