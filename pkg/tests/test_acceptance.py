"""End-to-end acceptance checks, one test per criterion.

Run ``pytest tests/test_acceptance.py`` (or execute this file); a summary
with one PASS/FAIL line per criterion is printed at the end of the session.
"""

import csv
import sys
import time

import numpy as np
import pytest

from synchemu import oscillator as osc
from synchemu.analysis import (
    DEVICE_PRESETS,
    eigen_analysis,
    electromechanical_modes,
    emulation_report,
    linearize_system,
    oscillation_frequency,
)
from synchemu.cli import main
from synchemu.network import loads_to_admittance, solve_power_flow
from synchemu.simulation import Scenario, run

criterion = pytest.mark.criterion


def _csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


@pytest.fixture(scope="module")
def em_mode(wscc_prepared):
    dae, z0, _ = wscc_prepared
    modes = eigen_analysis(linearize_system(dae, z0))
    return electromechanical_modes(modes)


@criterion(1, "energy-dissipation ratios 1, 0.03, 0.00167 from oscillator-compare, < 1 s")
def test_ratios_reported(tmp_path, capsys):
    t0 = time.perf_counter()
    assert main(["oscillator-compare", "--out", str(tmp_path)]) == 0
    elapsed = time.perf_counter() - t0
    header, rows = _csv(tmp_path / "oscillator_metrics.csv")
    reported = {r[0]: r[header.index("dE/dP_l")] for r in rows}
    assert reported == {"sm": "1", "vsm": "0.03", "pll": "0.00167"}
    assert osc.energy_dissipation_ratio(osc.preset("sm")) == 1.0
    assert osc.energy_dissipation_ratio(osc.preset("vsm")) == 0.03
    assert abs(osc.energy_dissipation_ratio(osc.preset("pll")) - 1 / 600) < 5e-6
    assert elapsed < 1.0


@criterion(2, "ratio identity and closed-form roots on 1000 random underdamped oscillators, < 5 s")
def test_eigenvalue_identity(rng):
    t0 = time.perf_counter()
    count = 0
    while count < 1000:
        c, d = 10 ** rng.uniform(-2, 1, size=2)
        k = d * d / (4 * c) * 10 ** rng.uniform(0.01, 2)
        lin = osc.LinearOscillator(c, d, k)
        lam = np.array(osc.eigenvalues(lin))
        assert abs(c / (2 * d) + 1 / (4 * lam[0].real)) < 1e-12
        num = np.linalg.eigvals(lin.companion_matrix())
        err = np.max(np.abs(np.sort_complex(lam) - np.sort_complex(num))) / np.max(np.abs(lam))
        assert err < 1e-10
        count += 1
    assert time.perf_counter() - t0 < 5.0


@criterion(3, "emulation verdict pattern of the four device presets")
def test_preset_pattern():
    expected = {
        "sm": (True, True, True, True),
        "droop": (False, True, False, False),
        "vsm": (True, True, False, False),
        "pll": (False, False, False, False),
    }
    got = {name: emulation_report(ch).pattern for name, ch in DEVICE_PRESETS.items()}
    assert got == expected


@criterion(4, "step-response shapes: SM underdamped, VSM no overshoot, PLL settles >= 50x faster")
def test_step_shapes():
    resp, fine = {}, {}
    for name in ("sm", "vsm", "pll"):
        p = osc.as_params(osc.preset(name))
        resp[name] = osc.step_response(p)
        fine[name] = osc.step_response(p, dt=2.5e-4)
        assert np.max(np.abs(resp[name].y - fine[name].y[::4])) < 1e-4
        assert np.max(np.abs(resp[name].ydot - fine[name].ydot[::4])) < 1e-4

    assert osc.zero_crossings(resp["sm"].ydot, floor=1e-9) >= 2
    vsm = resp["vsm"]
    final = 0.1 / osc.preset("vsm").k
    assert np.max(vsm.y - final) <= 1e-6

    ts = {n: osc.settling_time(r.t, r.y) for n, r in resp.items()}
    assert ts["sm"] / ts["pll"] >= 50, f"settling ratio {ts['sm'] / ts['pll']:.1f} (SM {ts['sm']:.2f} s, PLL {ts['pll']:.3f} s)"


@criterion(5, "9-bus power flow <= 6 iterations, residual < 1e-8, admittance round trip < 1e-8")
def test_power_flow(wscc):
    net = wscc.network
    pf = solve_power_flow(net)
    assert pf.iterations <= 6
    assert pf.max_residual < 1e-8
    pf2 = solve_power_flow(net.with_buses(loads_to_admittance(pf, net.buses)))
    assert np.max(np.abs(pf2.v - pf.v)) < 1e-8


@criterion(6, "initialized 9-bus system drifts < 1e-6 over 5 s without events")
def test_steady_state_hold(wscc, wscc_prepared):
    dae, z0, _ = wscc_prepared
    res = run(Scenario(wscc, horizon=5.0), prepared=(dae, z0))
    assert res.failed_at is None
    assert np.max(np.abs(res.x - res.x[0])) < 1e-6


@criterion(7, "one rotor-dominated mode in [0.98, 1.78] Hz, damping < 10 %, SM2 > SM1, CIG < 0.01")
def test_electromechanical_mode(em_mode):
    assert len(em_mode) == 1
    m = em_mode[0]
    assert 0.98 <= m.frequency_hz <= 1.78
    assert m.damping_ratio < 0.10
    assert m.factor("SM2.omega") > m.factor("SM1.omega")
    for state in ("droop_f", "droop_d", "pll_theta", "pll_xi"):
        assert m.factor(f"CIG3.{state}") < 0.01


@criterion(8, "fault scenario: no failure, CIG clamped and SM1 id > 2 during fault, post-fault frequency within 0.4 Hz of the mode, < 60 s")
def test_fault_scenario(fault_run, wscc_prepared, em_mode):
    result, ch, elapsed, scenario = fault_run
    assert result.failed_at is None
    assert result.t[-1] == pytest.approx(10.0)
    assert elapsed < 60.0

    t = result.t
    limit = [d for d in wscc_prepared[0].devices if d.name == "CIG3"][0].i_limit
    during = (t >= 0.1 - 1e-9) & (t < 0.17 - 1e-9)
    i_d = ch["CIG3.id"][during]
    at_limit = np.nonzero(i_d == limit)[0]
    assert at_limit.size > 0
    # once the clamp engages it holds until the fault is cleared
    assert np.all(i_d[at_limit[0]:] == limit)
    assert np.all(ch["SM1.id"][during][1:] > 2.0)

    window = (t >= 1.0) & (t <= 10.0)
    rel = ch["SM2.omega"] - ch["SM1.omega"]
    f_post = oscillation_frequency(t[window], rel[window])
    assert abs(f_post - em_mode[0].frequency_hz) <= 0.4, f"post-fault {f_post:.3f} Hz vs mode {em_mode[0].frequency_hz:.3f} Hz"
    early = np.ptp(rel[(t >= 1.0) & (t < 3.0)])
    late = np.ptp(rel[(t >= 8.0) & (t <= 10.0)])
    assert late < early

    pll = np.max(np.abs(ch["CIG3.pll_freq"][during]))
    rotor = max(np.max(np.abs(ch[f"SM{k}.omega"][during])) for k in (1, 2))
    assert pll > rotor


@criterion(9, "trapezoidal step-halving error ratio in [3.5, 4.5]")
def test_integrator_order(wscc, wscc_prepared):
    dae, z0, _ = wscc_prepared
    ends = []
    for dt in (0.01, 0.005, 0.0025):
        scn = Scenario(wscc, dt=dt, horizon=1.0, initial_perturbation={"SM2.omega": 1e-3})
        ends.append(run(scn, prepared=(dae, z0)).x[-1])
    ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
    assert 3.5 <= ratio <= 4.5


@criterion(10, "repeated runs of every command give bitwise-identical CSVs")
def test_determinism(tmp_path, capsys):
    commands = {
        "powerflow": ["powerflow"],
        "simulate": ["simulate"],
        "smallsignal": ["smallsignal", "--check-emulation"],
        "oscillator-compare": ["oscillator-compare"],
        "check-emulation": ["check-emulation"],
    }
    for name, args in commands.items():
        outputs = []
        for rep in range(2):
            out = tmp_path / f"{name}-{rep}"
            assert main(args + ["--out", str(out)]) == 0
            outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "run.log"})
        assert outputs[0] == outputs[1], name
        assert any(n.endswith(".csv") for n in outputs[0]) or name == "check-emulation"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
