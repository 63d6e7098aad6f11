"""Small-signal analysis and the synchronous-machine emulation checker."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from . import oscillator as osc
from .errors import (
    EigenSolverError,
    IncompleteCharacterization,
    SingularAlgebraicJacobian,
    ValidationError,
)

ROTOR_STATES = ("delta", "omega")


@dataclass(frozen=True)
class StateMatrix:
    A: np.ndarray
    labels: tuple

    @property
    def n(self):
        return self.A.shape[0]


def linearize_system(dae, z, h=1e-6):
    """Reduced state matrix ``A = f_x - f_y g_y^-1 g_x`` by central differences."""
    if not h > 0:
        raise ValidationError("h must be positive")
    nx = dae.nx
    x, vr, vi = dae.split(z)
    mis = dae.max_mismatch(x, vr, vi)
    if mis > 1e-8:
        raise ValidationError(f"point is not algebraically consistent: max |g| = {mis:.3e}")
    J = dae.jacobian(z, h=h, central=True)
    fx, fy = J[:nx, :nx], J[:nx, nx:]
    gx, gy = J[nx:, :nx], J[nx:, nx:]
    try:
        lu = scipy.linalg.lu_factor(gy, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularAlgebraicJacobian(str(exc)) from exc
    if np.any(np.abs(np.diag(lu[0])) < 1e-13 * max(1.0, np.abs(gy).max())):
        raise SingularAlgebraicJacobian("algebraic Jacobian g_y is singular")
    A = fx - fy @ scipy.linalg.lu_solve(lu, gx)
    return StateMatrix(A, tuple(dae.labels()))


@dataclass
class ModeReport:
    eigenvalue: complex
    frequency_hz: float
    damping_ratio: float
    participation: np.ndarray = field(repr=False)
    labels: tuple = field(repr=False, default=())
    degenerate: bool = False

    def top(self, n=5):
        order = np.argsort(-self.participation, kind="stable")[:n]
        return [(self.labels[i] if self.labels else str(i), float(self.participation[i])) for i in order]

    def factor(self, label):
        return float(self.participation[self.labels.index(label)])

    @property
    def oscillatory(self):
        return self.eigenvalue.imag > 0


def damping_ratio(lam):
    mag = abs(lam)
    return float(-lam.real / mag) if mag > 0 else 1.0


def participation_factors(right, left):
    """``p_ki = |u_ki * psi_ik|`` normalized so every mode column sums to 1.

    ``right`` and ``left`` hold eigenvectors column-wise; ``left`` follows the
    LAPACK convention ``w_i^H A = lam_i w_i^H``, so ``psi_i = conj(w_i)``.
    Returns ``(P, degenerate)`` where ``degenerate[i]`` flags modes whose
    left/right vectors are (numerically) orthogonal, i.e. Jordan blocks.
    """
    U = np.asarray(right)
    Psi = np.conj(np.asarray(left))
    raw = np.abs(U * Psi)
    norms = np.linalg.norm(U, axis=0) * np.linalg.norm(Psi, axis=0)
    overlap = np.abs(np.sum(U * Psi, axis=0))
    degenerate = overlap < 1e-8 * norms
    colsum = raw.sum(axis=0)
    colsum[colsum == 0] = 1.0
    return raw / colsum, degenerate


def eigen_analysis(A, labels=None):
    """Full spectrum with participation factors, sorted by damping ratio."""
    if isinstance(A, StateMatrix):
        labels = A.labels if labels is None else labels
        A = A.A
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValidationError("state matrix has non-finite entries")
    try:
        lam, W, U = scipy.linalg.eig(A, left=True, right=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverError(f"eigen-solver failed (cond(A) = {np.linalg.cond(A):.3e}): {exc}") from exc
    P, degenerate = participation_factors(U, W)
    labels = tuple(labels) if labels is not None else tuple(f"x{i}" for i in range(A.shape[0]))
    modes = [
        ModeReport(
            eigenvalue=complex(l),
            frequency_hz=float(abs(l.imag) / (2 * math.pi)),
            damping_ratio=damping_ratio(l),
            participation=P[:, i],
            labels=labels,
            degenerate=bool(degenerate[i]),
        )
        for i, l in enumerate(lam)
    ]
    # conjugate partners stay adjacent, positive imaginary part first
    modes.sort(key=lambda m: (round(m.damping_ratio, 12), round(abs(m.eigenvalue.imag), 9), -m.eigenvalue.imag))
    return modes


def is_rotor_state(label):
    return label.rsplit(".", 1)[-1] in ROTOR_STATES


def electromechanical_modes(modes, fmin=0.1, fmax=3.0):
    """Oscillatory modes in ``[fmin, fmax]`` Hz whose two largest
    participation factors belong to rotor angle/speed states."""
    out = []
    for m in modes:
        if not m.oscillatory or not fmin <= m.frequency_hz <= fmax:
            continue
        top2 = m.top(2)
        if len(top2) == 2 and all(is_rotor_state(lbl) for lbl, _ in top2):
            out.append(m)
    return out


def write_eigen_csv(path, modes, n_top=5):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["real", "imag", "frequency_hz", "damping_pct"] + [f"state{i + 1}" for i in range(n_top)])
        for m in modes:
            top = [f"{lbl}:{p:.4f}" for lbl, p in m.top(n_top)]
            top += [""] * (n_top - len(top))
            w.writerow([repr(m.eigenvalue.real), repr(m.eigenvalue.imag), repr(m.frequency_hz),
                        repr(100.0 * m.damping_ratio)] + top)


# --------------------------------------------------------------------------- emulation checker


@dataclass(frozen=True)
class Thresholds:
    time_scale_band: tuple = (2.0, 10.0)  # s
    min_energy_ratio: float = 0.01  # s, dE/dP_l
    max_damping_ratio: float = 0.3
    min_overload: float = 3.0


@dataclass(frozen=True)
class Characterization:
    """What the checker needs to know about a device.

    Either ``(c, d, k)`` or ``eigenvalues`` of the dominant dynamics must be
    given. ``energy_available`` states whether a fast energy reserve backs the
    response; it cannot be inferred from the oscillator parameters.
    """

    name: str = "device"
    c: float = None
    d: float = None
    k: float = None
    eigenvalues: tuple = None
    overload_ratio: float = None
    energy_available: bool = True

    def scaled(self, factor):
        """Same device on a power base ``factor`` times smaller."""
        return Characterization(
            self.name,
            None if self.c is None else self.c * factor,
            None if self.d is None else self.d * factor,
            None if self.k is None else self.k * factor,
            self.eigenvalues,
            self.overload_ratio,
            self.energy_available,
        )


DEVICE_PRESETS = {
    "sm": Characterization("Conventional SM", 6.0, 3.0, 10.0, overload_ratio=6.0),
    "droop": Characterization("Droop control", 6.0, 100.0, 10.0, overload_ratio=1.2, energy_available=False),
    "vsm": Characterization("VSM", 6.0, 100.0, 10.0, overload_ratio=1.2),
    "pll": Characterization("PLL", 0.01, 3.0, 10.0, overload_ratio=1.2),
}


@dataclass(frozen=True)
class Verdict:
    passed: bool
    measured: dict
    threshold: str


@dataclass(frozen=True)
class EmulationReport:
    device: str
    energy: Verdict
    time_scale: Verdict
    damping: Verdict
    short_circuit: Verdict
    thresholds: Thresholds

    CONDITIONS = ("energy", "time_scale", "damping", "short_circuit")

    @property
    def verdicts(self):
        return {c: getattr(self, c) for c in self.CONDITIONS}

    @property
    def pattern(self):
        return tuple(v.passed for v in self.verdicts.values())

    @property
    def classification(self):
        failed = [c for c, v in self.verdicts.items() if not v.passed]
        if not failed:
            return "emulates a synchronous machine"
        return "does not emulate a synchronous machine (fails: " + ", ".join(failed) + ")"

    def to_dict(self):
        return {
            "device": self.device,
            "classification": self.classification,
            "thresholds": asdict(self.thresholds),
            "verdicts": {c: {"pass": v.passed, "measured": v.measured, "threshold": v.threshold}
                         for c, v in self.verdicts.items()},
        }

    def to_json(self):
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)

    def to_text(self):
        lines = [f"Device: {self.device}"]
        for c, v in self.verdicts.items():
            meas = ", ".join(f"{k}={_fmt(val)}" for k, val in v.measured.items())
            lines.append(f"  {c:<14} {'PASS' if v.passed else 'FAIL'}  [{meas}]  ({v.threshold})")
        lines.append(f"  => {self.classification}")
        return "\n".join(lines)


def _fmt(val):
    if isinstance(val, float):
        return f"{val:.6g}"
    return str(val)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def emulation_report(ch, thresholds=Thresholds()):
    """Four-condition verdict on whether a device behaves like a synchronous
    machine: stored energy, time scale, damping and short-circuit response."""
    missing = []
    if ch.eigenvalues is None and None in (ch.c, ch.d, ch.k):
        missing += [n for n in ("c", "d", "k") if getattr(ch, n) is None]
    if ch.overload_ratio is None:
        missing.append("overload_ratio")
    if missing:
        raise IncompleteCharacterization(missing)

    if ch.eigenvalues is not None:
        lam = tuple(complex(l) for l in ch.eigenvalues)
    else:
        lam = osc.eigenvalues(osc.LinearOscillator(ch.c, ch.d, ch.k))
    dom = max(lam, key=lambda l: l.real)
    oscillatory = abs(dom.imag) > 0
    zeta = damping_ratio(dom) if oscillatory else None
    if ch.c is not None and ch.d is not None and ch.k is not None:
        _, zeta = osc.damping_classification(osc.LinearOscillator(ch.c, ch.d, ch.k))

    if ch.c is not None and ch.d:
        ratio = ch.c / (2.0 * ch.d)
    elif oscillatory:
        ratio = -1.0 / (4.0 * dom.real)
    else:
        raise IncompleteCharacterization(["c", "d"])

    energy = Verdict(
        bool(ch.energy_available and ratio >= thresholds.min_energy_ratio),
        {"dE/dP_l": ratio, "energy_available": bool(ch.energy_available)},
        f"energy available and dE/dP_l >= {thresholds.min_energy_ratio:g} s",
    )
    lo, hi = thresholds.time_scale_band
    tau = -1.0 / dom.real if dom.real < 0 else math.inf
    measured = {"dominant_time_constant": tau}
    if ch.c is not None:
        measured["c/2"] = ch.c / 2.0
    time_scale = Verdict(bool(lo <= tau <= hi), measured,
                         f"dominant time constant in [{lo:g}, {hi:g}] s")
    damping = Verdict(
        bool(oscillatory and zeta is not None and zeta <= thresholds.max_damping_ratio),
        {"damping_ratio": zeta, "underdamped": bool(oscillatory)},
        f"underdamped with damping ratio <= {thresholds.max_damping_ratio:g}",
    )
    short_circuit = Verdict(
        bool(ch.overload_ratio >= thresholds.min_overload),
        {"overload_ratio": ch.overload_ratio},
        f"overload ratio >= {thresholds.min_overload:g}",
    )
    return EmulationReport(ch.name, energy, time_scale, damping, short_circuit, thresholds)


def oscillation_frequency(t, signal, t_start=None, t_end=None):
    """Dominant frequency (Hz) of ``signal`` from its zero-crossing count.

    A least-squares line is removed first so a slow drift does not hide
    crossings. Returns 0.0 when fewer than two crossings are found.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(signal, dtype=float)
    mask = np.ones_like(t, dtype=bool)
    if t_start is not None:
        mask &= t >= t_start
    if t_end is not None:
        mask &= t <= t_end
    t, s = t[mask], s[mask]
    if len(t) < 3:
        raise ValidationError("window holds fewer than 3 samples")
    s = s - np.polyval(np.polyfit(t, s, 1), t)
    idx = np.nonzero(np.signbit(s[:-1]) != np.signbit(s[1:]))[0]
    if len(idx) < 2:
        return 0.0
    # linear interpolation of the crossing instants
    tc = t[idx] - s[idx] * (t[idx + 1] - t[idx]) / (s[idx + 1] - s[idx])
    return (len(tc) - 1) / (2.0 * (tc[-1] - tc[0]))
