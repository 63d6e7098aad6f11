"""Command-line front end.

Every command writes its outputs and a ``run.log`` into the output
directory (``--out``, else ``$SYNCHEMU_OUT``, else ``./synchemu_out``).
Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis as an
from . import oscillator as osc
from . import simulation as sim
from .errors import NumericalError, ValidationError
from .files import bundled_network, bundled_scenario, read_network, read_scenario
from .network import DEFAULT_FAULT_ADMITTANCE, solve_power_flow, write_powerflow_csv
from .simulation import prepare, run, scenario_from_file, write_csv

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
OUT_ENV = "SYNCHEMU_OUT"

log = logging.getLogger("synchemu")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _positive(text):
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return val


def build_parser():
    p = _Parser(prog="synchemu", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="echo the run log to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or ./synchemu_out)")
        return sp

    sp = common(sub.add_parser("powerflow", help="Newton-Raphson power flow"))
    sp.add_argument("--net", type=Path, help="network file (default: bundled WSCC 9-bus)")
    sp.add_argument("--tol", type=_positive, default=1e-8, help="mismatch tolerance, pu")
    sp.add_argument("--max-iter", type=int, default=20)

    sp = common(sub.add_parser("simulate", help="time-domain simulation of a scenario"))
    sp.add_argument("--scenario", type=Path, help="scenario file (default: bundled fault scenario)")
    sp.add_argument("--net", type=Path, help="override the network named in the scenario")
    sp.add_argument("--dt", type=_positive, help="fixed step; default 1 ms for 1 s then 5 ms")
    sp.add_argument("--horizon", type=_positive)
    sp.add_argument("--fault-admittance", type=_positive, help=f"pu (default {DEFAULT_FAULT_ADMITTANCE:g})")
    sp.add_argument("--channels", help="comma-separated channel list (default: all)")

    sp = common(sub.add_parser("smallsignal", help="eigenvalues and participation factors"))
    sp.add_argument("--net", type=Path, help="network file (default: bundled WSCC 9-bus)")
    sp.add_argument("--h", type=_positive, default=1e-6, help="finite-difference step")
    sp.add_argument("--check-emulation", action="store_true", help="append emulation verdicts")
    sp.add_argument("--preset", action="append", choices=sorted(an.DEVICE_PRESETS),
                    help="device preset(s) for --check-emulation (default: all)")

    sp = common(sub.add_parser("oscillator-compare", help="step responses of the oscillator presets"))
    sp.add_argument("--preset", action="append", choices=sorted(osc.PRESETS), help="default: sm, vsm, pll")
    sp.add_argument("--c", type=float, help="override c of the selected preset(s)")
    sp.add_argument("--d", type=float, help="override d of the selected preset(s)")
    sp.add_argument("--k", type=float, default=osc.DEFAULT_K, help="restoring coefficient")
    sp.add_argument("--step", type=float, default=0.1, help="power step, pu")
    sp.add_argument("--horizon", type=_positive, default=20.0)
    sp.add_argument("--dt", type=_positive, default=1e-3)

    sp = common(sub.add_parser("check-emulation", help="synchronous-machine emulation verdicts"))
    sp.add_argument("--preset", action="append", choices=sorted(an.DEVICE_PRESETS), help="default: all")
    sp.add_argument("--c", type=float)
    sp.add_argument("--d", type=float)
    sp.add_argument("--k", type=float, default=osc.DEFAULT_K)
    sp.add_argument("--overload", type=float, help="short-circuit overload ratio")
    sp.add_argument("--no-energy", action="store_true", help="device has no fast energy reserve")
    add_threshold_args(sp)
    sp.add_argument("--format", choices=("text", "json"), default="text")
    return p


def add_threshold_args(sp):
    t = an.Thresholds()
    sp.add_argument("--min-energy-ratio", type=float, default=t.min_energy_ratio)
    sp.add_argument("--time-band", type=float, nargs=2, default=t.time_scale_band, metavar=("LO", "HI"))
    sp.add_argument("--max-damping", type=float, default=t.max_damping_ratio)
    sp.add_argument("--min-overload", type=float, default=t.min_overload)


def _thresholds(args):
    return an.Thresholds(tuple(args.time_band), args.min_energy_ratio, args.max_damping, args.min_overload)


# --------------------------------------------------------------------------- commands


def cmd_powerflow(args, out):
    path = args.net or bundled_network()
    log.info("network = %s", path)
    nf = read_network(path)
    pf = solve_power_flow(nf.network, tol=args.tol, max_iter=args.max_iter)
    dest = out / "powerflow.csv"
    write_powerflow_csv(dest, pf)
    log.info("converged in %d iterations, max residual %.3e", pf.iterations, pf.max_residual)
    if pf.low_voltage:
        log.warning("some bus voltages are below the low-voltage limit")
    print(f"converged in {pf.iterations} iterations, max residual {pf.max_residual:.3e} pu")
    for bid, v in zip(pf.ids, pf.v):
        print(f"  bus {bid:>3}  |v| = {abs(v):.4f}  angle = {np.degrees(np.angle(v)):8.3f} deg")
    print(f"wrote {dest}")
    return EXIT_OK


def cmd_simulate(args, out):
    scn_path = args.scenario or bundled_scenario()
    scn = read_scenario(scn_path)
    net_path = args.net or scn.network
    log.info("scenario = %s", scn_path)
    log.info("network = %s", net_path)
    nf = read_network(net_path)
    y_f = args.fault_admittance
    if y_f is None and any(e.kind == "fault" and e.admittance is None for e in scn.events):
        log.info("default fault admittance = %g pu", DEFAULT_FAULT_ADMITTANCE)
    scenario = scenario_from_file(scn, nf, dt=args.dt, horizon=args.horizon, fault_admittance=y_f)
    if scenario.dt is None:
        log.info("default step schedule: 1 ms up to 1 s, then 5 ms")
    else:
        log.info("dt = %g s", scenario.dt)
    log.info("horizon = %g s", scenario.horizon)
    log.info("newton tol = %g, max iterations = %d, max step halvings = %d",
             sim.NEWTON_TOL, sim.NEWTON_MAX_ITER, sim.MAX_HALVINGS)
    for ev in scenario.events:
        log.info("event t=%g: %r", ev.t, ev.event)

    channels = [c.strip() for c in args.channels.split(",")] if args.channels else scenario.channels
    t0 = time.perf_counter()
    dae, z0, _ = prepare(nf, logger=log)
    result = run(scenario, prepared=(dae, z0))
    wall = time.perf_counter() - t0
    dest = out / "simulation.csv"
    names = write_csv(dest, result, channels)
    log.info("channels: %s", ", ".join(names))
    log.info("steps = %d, newton iterations total = %d, max per step = %d, wall time = %.2f s",
             len(result.t) - 1, int(result.iterations.sum()), int(result.iterations.max(initial=0)), wall)
    print(f"wrote {dest} ({len(result.t)} rows, {len(names)} channels)")
    if result.failed_at is not None:
        log.error("FAILED: %s", result.message)
        print(f"FAILED: {result.message}; partial results kept", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_smallsignal(args, out):
    path = args.net or bundled_network()
    log.info("network = %s", path)
    log.info("finite-difference step h = %g", args.h)
    nf = read_network(path)
    dae, z0, _ = prepare(nf, logger=log)
    sm = an.linearize_system(dae, z0, h=args.h)
    modes = an.eigen_analysis(sm)
    an.write_eigen_csv(out / "eigenvalues.csv", modes)
    em = an.electromechanical_modes(modes)

    lines = [f"states: {sm.n}", f"eigenvalues: {len(modes)} (written to eigenvalues.csv)", ""]
    lines.append(f"electromechanical modes: {len(em)}")
    for m in em:
        lam = m.eigenvalue
        lines.append(f"  lambda = {lam.real:.4f} {'+' if lam.imag >= 0 else '-'} j{abs(lam.imag):.4f}"
                     f"  f = {m.frequency_hz:.3f} Hz  zeta = {100 * m.damping_ratio:.2f} %")
        for lbl, p in m.top(8):
            lines.append(f"    {lbl:<20} {p:.4f}")
    unstable = [m for m in modes if m.eigenvalue.real > 0]
    if unstable:
        lines.append(f"WARNING: {len(unstable)} eigenvalues with positive real part")
    if args.check_emulation:
        thresholds = an.Thresholds()
        for name in args.preset or sorted(an.DEVICE_PRESETS):
            lines += ["", an.emulation_report(an.DEVICE_PRESETS[name], thresholds).to_text()]
    text = "\n".join(lines)
    (out / "smallsignal_report.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_oscillator_compare(args, out):
    names = args.preset or list(osc.PRESETS)
    log.info("presets = %s, k = %g, step = %g pu, horizon = %g s, dt = %g s",
             ",".join(names), args.k, args.step, args.horizon, args.dt)
    rows, traces = [], {}
    for name in names:
        lin = osc.preset(name, k=args.k, c=args.c, d=args.d)
        met = osc.metrics(lin)
        resp = osc.step_response(osc.as_params(lin), step=args.step, horizon=args.horizon, dt=args.dt)
        traces[name] = resp
        rows.append((name, lin, met, osc.settling_time(resp.t, resp.y)))

    t = next(iter(traces.values())).t
    with open(out / "oscillator_responses.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"] + [f"y_{n}" for n in names])
        for i, ti in enumerate(t):
            w.writerow([repr(float(ti))] + [repr(float(traces[n].y[i])) for n in names])

    header = ["preset", "c", "d", "k", "dE/dP_l", "damping", "zeta", "f_n_hz", "settling_2pct_s"]
    table = []
    for name, lin, met, ts in rows:
        table.append([name, f"{lin.c:g}", f"{lin.d:g}", f"{lin.k:g}", f"{met.energy_dissipation_ratio:.3g}",
                      met.damping_class, f"{met.damping_ratio:.4g}", f"{met.natural_frequency_hz:.4g}",
                      f"{ts:.4g}"])
    with open(out / "oscillator_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(table)
    widths = [max(len(r[i]) for r in [header] + table) for i in range(len(header))]
    for r in [header] + table:
        print("  ".join(s.ljust(wd) for s, wd in zip(r, widths)).rstrip())
    return EXIT_OK


def cmd_check_emulation(args, out):
    thresholds = _thresholds(args)
    log.info("thresholds = %s", thresholds)
    if args.c is not None or args.d is not None or args.overload is not None:
        if args.preset:
            raise ValidationError("give either --preset or explicit --c/--d/--overload, not both")
        chars = [an.Characterization("custom", args.c, args.d, args.k, overload_ratio=args.overload,
                                     energy_available=not args.no_energy)]
    else:
        chars = [an.DEVICE_PRESETS[n] for n in (args.preset or an.DEVICE_PRESETS)]
    reports = [an.emulation_report(ch, thresholds) for ch in chars]
    text = "\n\n".join(r.to_text() for r in reports)
    (out / "emulation_report.txt").write_text(text + "\n")
    js = "[\n" + ",\n".join(r.to_json() for r in reports) + "\n]\n"
    (out / "emulation_report.json").write_text(js)
    print(js if args.format == "json" else text)
    return EXIT_OK


COMMANDS = {
    "powerflow": cmd_powerflow,
    "simulate": cmd_simulate,
    "smallsignal": cmd_smallsignal,
    "oscillator-compare": cmd_oscillator_compare,
    "check-emulation": cmd_check_emulation,
}


def _log_settings(parser, args, argv):
    given = {tok.split("=", 1)[0] for tok in argv if tok.startswith("--")}
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for action in sub.choices[args.command]._actions:
        if action.dest == "help":
            continue
        val = getattr(args, action.dest, None)
        flag = action.option_strings[-1] if action.option_strings else action.dest
        tag = "" if flag in given else " (default)"
        log.info("option %s = %r%s", flag, val, tag)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    out = args.out or Path(os.environ.get(OUT_ENV) or "synchemu_out")

    try:
        out.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(out / "run.log", mode="w")
    except OSError as exc:
        print(f"error: cannot use output directory {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    level = log.level
    log.setLevel(logging.INFO)
    if args.verbose:
        log.addHandler(logging.StreamHandler(sys.stderr))
    log.info("command = %s", args.command)
    _log_settings(parser, args, argv)

    try:
        code = COMMANDS[args.command](args, out)
    except ValidationError as exc:
        log.error("FAILED (invalid input): %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_VALIDATION
    except NumericalError as exc:
        log.error("FAILED (numerical): %s", exc)
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except OSError as exc:
        log.error("FAILED (I/O): %s", exc)
        print(f"I/O error: {exc}", file=sys.stderr)
        code = EXIT_IO
    finally:
        for h in list(log.handlers):
            log.removeHandler(h)
            h.close()
        log.setLevel(level)
    return code


if __name__ == "__main__":
    sys.exit(main())
