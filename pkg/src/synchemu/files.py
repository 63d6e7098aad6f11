"""Readers for the network and scenario text formats.

Network file::

    [system]
    base_mva = 100
    frequency = 60

    [buses]
    id kind v_set theta_deg p_gen q_gen p_load q_load g_sh b_sh base_kv
    1  slack 1.04 0 ...

    [branches]
    from to r x b tap status
    1 4 0 0.0576 0 1 1

    [devices]
    detailed_sm name=SM1 bus=1 H=23.64 ...

Tabular sections take their column names from the first line. ``b`` is the
total line charging; angles are in degrees. ``#`` starts a comment.

Scenario file::

    network = wscc9.net
    dt = 0.001
    horizon = 10
    fault bus=5 t=0.1 duration=0.07
    trip line=5-7 t=0.17
    channels = SM1.omega, SM2.omega
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import NetworkFileError, ValidationError
from .network import Branch, Bus, Network

KINDS = {"slack": "slack", "pv": "PV", "pq": "PQ"}


def data_path(name):
    return Path(str(resources.files("synchemu") / "data" / name))


def bundled_network():
    return data_path("wscc9.net")


def bundled_scenario():
    return data_path("wscc9_fault.scn")


def _strip(line):
    return line.split("#", 1)[0].strip()


def _sections(text, path):
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip(raw)
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current in sections:
                raise NetworkFileError(f"duplicate section [{current}]", lineno, path)
            sections[current] = []
            continue
        if current is None:
            raise NetworkFileError("content before the first [section]", lineno, path)
        sections[current].append((lineno, line))
    return sections


def _number(token, lineno, path, what):
    try:
        return float(token)
    except ValueError:
        raise NetworkFileError(f"{what}: expected a number, got {token!r}", lineno, path) from None


def _table(rows, required, path, section):
    if not rows:
        return []
    lineno, header = rows[0]
    cols = header.split()
    missing = [c for c in required if c not in cols]
    if missing:
        raise NetworkFileError(f"[{section}] header is missing columns {missing}", lineno, path)
    out = []
    for lineno, line in rows[1:]:
        vals = line.split()
        if len(vals) != len(cols):
            raise NetworkFileError(
                f"[{section}] expected {len(cols)} columns, found {len(vals)}", lineno, path
            )
        out.append((lineno, dict(zip(cols, vals))))
    return out


def parse_record(line, lineno=None, path=None):
    """Split ``keyword key=value ...`` into ``(keyword, {key: value})``."""
    head, *rest = line.split()
    params = {}
    for tok in rest:
        if "=" not in tok:
            raise NetworkFileError(f"expected key=value, got {tok!r}", lineno, path)
        k, v = tok.split("=", 1)
        params[k] = v
    return head.lower(), params


def _coerce(value):
    low = value.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


@dataclass
class DeviceSpec:
    kind: str
    params: dict
    lineno: int = 0


@dataclass
class NetworkFile:
    network: Network
    devices: list
    path: Path = None


def parse_network(text, path=None):
    secs = _sections(text, path)
    system = {}
    for lineno, line in secs.get("system", []):
        if "=" not in line:
            raise NetworkFileError("expected key = value", lineno, path)
        k, v = (s.strip() for s in line.split("=", 1))
        system[k] = _number(v, lineno, path, k)
    base_mva = system.get("base_mva", 100.0)
    freq = system.get("frequency", 60.0)

    if "buses" not in secs:
        raise NetworkFileError("missing [buses] section", None, path)
    buses = []
    for lineno, row in _table(secs["buses"], ("id", "kind"), path, "buses"):
        kind = KINDS.get(row["kind"].lower())
        if kind is None:
            raise NetworkFileError(f"unknown bus kind {row['kind']!r}", lineno, path)

        def num(col, default=0.0):
            return _number(row[col], lineno, path, col) if col in row else default

        try:
            buses.append(
                Bus(
                    id=int(num("id")),
                    kind=kind,
                    v_set=num("v_set", 1.0),
                    theta_set=math.radians(num("theta_deg")),
                    p_gen=num("p_gen"),
                    q_gen=num("q_gen"),
                    p_load=num("p_load"),
                    q_load=num("q_load"),
                    shunt=complex(num("g_sh"), num("b_sh")),
                    base_kv=num("base_kv", 1.0),
                )
            )
        except ValidationError as exc:
            raise NetworkFileError(str(exc), lineno, path) from None

    branches = []
    for lineno, row in _table(secs.get("branches", []), ("from", "to", "r", "x"), path, "branches"):
        def num(col, default=0.0):
            return _number(row[col], lineno, path, col) if col in row else default

        try:
            branches.append(
                Branch(
                    from_bus=int(num("from")),
                    to_bus=int(num("to")),
                    r=num("r"),
                    x=num("x"),
                    b_half=num("b") / 2.0,
                    tap=num("tap", 1.0) or 1.0,
                    in_service=bool(num("status", 1.0)),
                )
            )
        except ValidationError as exc:
            raise NetworkFileError(str(exc), lineno, path) from None

    try:
        net = Network(buses, branches, base_mva=base_mva, frequency=freq)
    except ValidationError as exc:
        lineno = secs["buses"][0][0] if secs["buses"] else None
        raise NetworkFileError(str(exc), lineno, path) from None

    devices = []
    for lineno, line in secs.get("devices", []):
        kind, params = parse_record(line, lineno, path)
        devices.append(DeviceSpec(kind, {k: _coerce(v) for k, v in params.items()}, lineno))
    return NetworkFile(net, devices, Path(path) if path else None)


def read_network(path):
    path = Path(path)
    return parse_network(path.read_text(), path)


# --------------------------------------------------------------------------- scenario


@dataclass
class EventSpec:
    kind: str  # "fault" | "clear" | "trip"
    t: float
    bus: int = None
    line: tuple = None
    admittance: complex = None


@dataclass
class ScenarioFile:
    network: Path
    events: list = field(default_factory=list)
    dt: float = None
    horizon: float = 10.0
    channels: list = None
    path: Path = None
    settings: dict = field(default_factory=dict)


def _line_pair(token, lineno, path):
    parts = token.replace(",", "-").split("-")
    if len(parts) != 2:
        raise NetworkFileError(f"line must be given as FROM-TO, got {token!r}", lineno, path)
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise NetworkFileError(f"line must be given as FROM-TO, got {token!r}", lineno, path) from None


def parse_scenario(text, path=None):
    base = Path(path).parent if path else Path(".")
    scn = ScenarioFile(network=None, path=Path(path) if path else None)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip(raw)
        if not line:
            continue
        if "=" in line.split()[0] or (len(line.split()) > 1 and line.split()[1].startswith("=")):
            k, v = (s.strip() for s in line.split("=", 1))
            k = k.lower()
            if k == "network":
                p = Path(v)
                scn.network = p if p.is_absolute() else base / p
            elif k == "dt":
                scn.dt = _number(v, lineno, path, k)
            elif k == "horizon":
                scn.horizon = _number(v, lineno, path, k)
            elif k == "channels":
                scn.channels = [c.strip() for c in v.split(",") if c.strip()]
            else:
                scn.settings[k] = _coerce(v)
            continue
        kind, params = parse_record(line, lineno, path)
        if "t" not in params:
            raise NetworkFileError(f"event {kind!r} needs t=", lineno, path)
        t = _number(params["t"], lineno, path, "t")
        if kind == "fault":
            if "bus" not in params:
                raise NetworkFileError("fault needs bus=", lineno, path)
            bus = int(_number(params["bus"], lineno, path, "bus"))
            y = complex(params["y"]) if "y" in params else None
            scn.events.append(EventSpec("fault", t, bus=bus, admittance=y))
            if "duration" in params:
                dur = _number(params["duration"], lineno, path, "duration")
                scn.events.append(EventSpec("clear", t + dur, bus=bus))
        elif kind == "clear":
            bus = int(_number(params["bus"], lineno, path, "bus"))
            scn.events.append(EventSpec("clear", t, bus=bus))
        elif kind == "trip":
            if "line" not in params:
                raise NetworkFileError("trip needs line=FROM-TO", lineno, path)
            scn.events.append(EventSpec("trip", t, line=_line_pair(params["line"], lineno, path)))
        else:
            raise NetworkFileError(f"unknown scenario entry {kind!r}", lineno, path)
    if scn.network is None:
        raise NetworkFileError("scenario must name a network (network = FILE)", None, path)
    scn.events.sort(key=lambda e: e.t)
    return scn


def read_scenario(path):
    path = Path(path)
    return parse_scenario(path.read_text(), path)
