"""Static network model: buses, branches, Y-bus, Newton-Raphson power flow,
constant-admittance load conversion and switching events."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .errors import (
    NonConvergence,
    SingularIsland,
    SingularJacobian,
    UnknownBranch,
    UnknownBus,
    ValidationError,
    ZeroVoltage,
)

SLACK, PV, PQ = "slack", "PV", "PQ"
BUS_KINDS = (SLACK, PV, PQ)

DEFAULT_FAULT_ADMITTANCE = 1e4


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = PQ
    v_set: float = 1.0
    theta_set: float = 0.0  # rad, slack only
    p_gen: float = 0.0
    q_gen: float = 0.0
    p_load: float = 0.0
    q_load: float = 0.0
    shunt: complex = 0j
    base_kv: float = 1.0

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise ValidationError(f"bus {self.id}: kind must be one of {BUS_KINDS}, got {self.kind!r}")
        if self.kind != PQ and not self.v_set > 0:
            raise ValidationError(f"bus {self.id}: v_set must be positive")

    @property
    def p_inj(self):
        return self.p_gen - self.p_load

    @property
    def q_inj(self):
        return self.q_gen - self.q_load


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_half: float = 0.0
    tap: float = 1.0
    in_service: bool = True

    def __post_init__(self):
        if self.x == 0:
            raise ValidationError(f"branch {self.from_bus}-{self.to_bus}: x must be non-zero")
        if self.from_bus == self.to_bus:
            raise ValidationError(f"branch {self.from_bus}-{self.to_bus}: from and to must differ")
        if self.tap <= 0:
            raise ValidationError(f"branch {self.from_bus}-{self.to_bus}: tap must be positive")

    @property
    def key(self):
        return (self.from_bus, self.to_bus)

    def connects(self, a, b):
        return {self.from_bus, self.to_bus} == {a, b}


@dataclass(frozen=True)
class Network:
    buses: tuple
    branches: tuple
    base_mva: float = 100.0
    frequency: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        validate(self.buses, self.branches)

    @property
    def omega_b(self):
        return 2.0 * math.pi * self.frequency

    @property
    def bus_ids(self):
        return tuple(b.id for b in self.buses)

    def index(self, bus_id):
        for i, b in enumerate(self.buses):
            if b.id == bus_id:
                return i
        raise UnknownBus(f"unknown bus {bus_id}")

    def bus(self, bus_id):
        return self.buses[self.index(bus_id)]

    def with_buses(self, buses):
        return replace(self, buses=tuple(buses))

    def scaled_load(self, factor):
        return self.with_buses(
            replace(b, p_load=b.p_load * factor, q_load=b.q_load * factor) for b in self.buses
        )


def validate(buses, branches):
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise ValidationError("bus ids must be unique")
    n_slack = sum(b.kind == SLACK for b in buses)
    if n_slack != 1:
        raise ValidationError(f"exactly one slack bus is required, found {n_slack}")
    known = set(ids)
    for br in branches:
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise UnknownBus(f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}")


# --------------------------------------------------------------------------- Y-bus


@dataclass(frozen=True)
class Fault:
    bus: int
    admittance: complex


@dataclass(frozen=True)
class YBus:
    """Nodal admittance matrix with the data needed to edit it.

    ``matrix`` is always rebuilt from ``buses``, ``branches`` and ``faults``
    so that reversing an event reproduces the original matrix bit for bit.
    """

    buses: tuple
    branches: tuple
    faults: tuple = ()
    matrix: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.matrix is None:
            object.__setattr__(self, "matrix", _assemble(self.buses, self.branches, self.faults))
        self.matrix.setflags(write=False)

    @property
    def ids(self):
        return tuple(b.id for b in self.buses)

    def index(self, bus_id):
        try:
            return self.ids.index(bus_id)
        except ValueError:
            raise UnknownBus(f"unknown bus {bus_id}") from None

    def __getitem__(self, ij):
        i, j = ij
        return self.matrix[self.index(i), self.index(j)]


def _assemble(buses, branches, faults=()):
    ids = [b.id for b in buses]
    pos = {b: i for i, b in enumerate(ids)}
    n = len(ids)
    Y = np.zeros((n, n), dtype=complex)
    connected = np.zeros(n, dtype=bool)
    for br in branches:
        if not br.in_service:
            continue
        i, j = pos[br.from_bus], pos[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        a = br.tap
        Y[i, i] += ys / (a * a) + 1j * br.b_half
        Y[j, j] += ys + 1j * br.b_half
        Y[i, j] -= ys / a
        Y[j, i] -= ys / a
        connected[i] = connected[j] = True
    if n > 1 and not connected.all():
        lonely = [ids[i] for i in np.nonzero(~connected)[0]]
        raise SingularIsland(f"buses without any in-service connection: {lonely}")
    for b in buses:
        if b.shunt:
            Y[pos[b.id], pos[b.id]] += b.shunt
    for f in faults:
        Y[pos[f.bus], pos[f.bus]] += f.admittance
    return Y


def build_ybus(buses, branches=None):
    """Assemble the pi-model Y-bus; tap ratio sits on the from side.

    Accepts either ``(buses, branches)`` or a single :class:`Network`.
    """
    if isinstance(buses, Network):
        return YBus(buses.buses, buses.branches)
    return YBus(tuple(buses), tuple(branches))


# --------------------------------------------------------------------------- events


@dataclass(frozen=True)
class ApplyFault:
    bus: int
    admittance: complex = DEFAULT_FAULT_ADMITTANCE


@dataclass(frozen=True)
class ClearFault:
    bus: int


@dataclass(frozen=True)
class TripLine:
    from_bus: int
    to_bus: int


Event = Union[ApplyFault, ClearFault, TripLine]


def apply_event(ybus, event):
    """Return a new :class:`YBus` with ``event`` applied."""
    if isinstance(event, ApplyFault):
        ybus.index(event.bus)
        faults = tuple(f for f in ybus.faults if f.bus != event.bus) + (
            Fault(event.bus, complex(event.admittance)),
        )
        return YBus(ybus.buses, ybus.branches, faults)
    if isinstance(event, ClearFault):
        ybus.index(event.bus)
        faults = tuple(f for f in ybus.faults if f.bus != event.bus)
        return YBus(ybus.buses, ybus.branches, faults)
    if isinstance(event, TripLine):
        hit = False
        branches = []
        for br in ybus.branches:
            if br.in_service and br.connects(event.from_bus, event.to_bus):
                br = replace(br, in_service=False)
                hit = True
            branches.append(br)
        if not hit:
            raise UnknownBranch(f"no in-service branch between {event.from_bus} and {event.to_bus}")
        return YBus(ybus.buses, tuple(branches), ybus.faults)
    raise ValidationError(f"unsupported event {event!r}")


# --------------------------------------------------------------------------- power flow


@dataclass(frozen=True)
class PowerFlowSolution:
    ids: tuple
    v: np.ndarray  # complex phasors
    s: np.ndarray  # net complex injections
    iterations: int
    max_residual: float
    slack_index: int = 0
    low_voltage: bool = False

    @property
    def vm(self):
        return np.abs(self.v)

    @property
    def va(self):
        return np.angle(self.v)

    def voltage(self, bus_id):
        return self.v[self.ids.index(bus_id)]

    def injection(self, bus_id):
        return self.s[self.ids.index(bus_id)]

    @property
    def slack_power(self):
        return complex(self.s[self.slack_index])

    def total_losses(self):
        return float(self.s.real.sum())


LOW_VOLTAGE_LIMIT = 0.7


def mismatch(Y, v, p_sched, q_sched):
    s = v * np.conj(Y @ v)
    return p_sched - s.real, q_sched - s.imag


def solve_power_flow(network, tol=1e-8, max_iter=20):
    """Polar Newton-Raphson from a flat start.

    PV and slack magnitudes start at their set points, every other magnitude
    at 1.0 and every angle at the slack reference.
    """
    buses = network.buses
    Y = build_ybus(network).matrix
    n = len(buses)
    kinds = [b.kind for b in buses]
    pv_pq = [i for i in range(n) if kinds[i] != SLACK]
    pq = [i for i in range(n) if kinds[i] == PQ]
    slack = kinds.index(SLACK)
    p_sched = np.array([b.p_inj for b in buses])
    q_sched = np.array([b.q_inj for b in buses])

    vm = np.array([b.v_set if b.kind != PQ else 1.0 for b in buses])
    va = np.full(n, buses[slack].theta_set)
    npv, npq = len(pv_pq), len(pq)

    it = 0
    while True:
        v = vm * np.exp(1j * va)
        dp, dq = mismatch(Y, v, p_sched, q_sched)
        f = np.concatenate([dp[pv_pq], dq[pq]])
        err = float(np.max(np.abs(f))) if f.size else 0.0
        if err < tol:
            break
        if it >= max_iter:
            raise NonConvergence(
                f"power flow did not converge in {max_iter} iterations (max mismatch {err:.3e})"
            )
        J = _pf_jacobian(Y, v, pv_pq, pq)
        try:
            dx = np.linalg.solve(J, f)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"power-flow Jacobian singular at iteration {it}") from exc
        if not np.all(np.isfinite(dx)) or np.linalg.cond(J) > 1e14:
            raise SingularJacobian(f"power-flow Jacobian ill-conditioned at iteration {it}")
        va[pv_pq] += dx[:npv]
        vm[pq] += dx[npv:npv + npq] * vm[pq]
        it += 1

    s = v * np.conj(Y @ v)
    return PowerFlowSolution(
        ids=tuple(b.id for b in buses),
        v=v,
        s=s,
        iterations=it,
        max_residual=err,
        slack_index=slack,
        low_voltage=bool(np.min(vm) < LOW_VOLTAGE_LIMIT),
    )


def _pf_jacobian(Y, v, pv_pq, pq):
    """Jacobian w.r.t. (angles, relative magnitude changes dV/V)."""
    i = Y @ v
    diag_v = np.diag(v)
    diag_i = np.diag(i)
    # dS/dtheta and V*dS/d|V|
    ds_dva = 1j * diag_v @ np.conj(diag_i - Y @ diag_v)
    ds_dvm = diag_v @ np.conj(diag_i) + diag_v @ np.conj(Y @ diag_v)
    j11 = ds_dva.real[np.ix_(pv_pq, pv_pq)]
    j12 = ds_dvm.real[np.ix_(pv_pq, pq)]
    j21 = ds_dva.imag[np.ix_(pq, pv_pq)]
    j22 = ds_dvm.imag[np.ix_(pq, pq)]
    return np.block([[j11, j12], [j21, j22]])


def loads_to_admittance(solution, buses):
    """Replace every PQ load by the shunt ``(p - jq)/|v|**2`` drawing the same
    power at the solved voltage."""
    out = []
    for b in buses:
        if b.p_load == 0 and b.q_load == 0:
            out.append(b)
            continue
        vm = abs(solution.voltage(b.id))
        if vm < 1e-6:
            raise ZeroVoltage(f"bus {b.id}: |v| = {vm:.3e}, cannot convert load")
        y = complex(b.p_load, -b.q_load) / (vm * vm)
        out.append(replace(b, shunt=b.shunt + y, p_load=0.0, q_load=0.0))
    return out


def write_powerflow_csv(path, solution, base_mva=1.0):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bus", "v_pu", "theta_deg", "p", "q"])
        for bid, v, s in zip(solution.ids, solution.v, solution.s):
            w.writerow([bid, repr(float(abs(v))), repr(float(math.degrees(np.angle(v)))),
                        repr(float(s.real)), repr(float(s.imag))])
