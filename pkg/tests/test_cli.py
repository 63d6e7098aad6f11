import csv
import subprocess
import sys
import time

import numpy as np
import pytest

from synchemu.cli import main

from conftest import SMIB_TEXT


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


@pytest.fixture
def smib_files(tmp_path):
    def make(device="classical_sm name=G bus=1 H=3 D=2 x_total=0.2", scenario=""):
        net = tmp_path / "smib.net"
        net.write_text(SMIB_TEXT.format(p=0.8, x_line=0.3, device=device))
        scn = tmp_path / "case.scn"
        scn.write_text("network = smib.net\n" + scenario)
        return net, scn

    return make


class TestPowerflow:
    def test_bundled(self, tmp_path, capsys):
        assert main(["powerflow", "--out", str(tmp_path)]) == 0
        header, rows = read_csv(tmp_path / "powerflow.csv")
        assert header == ["bus", "v_pu", "theta_deg", "p", "q"]
        assert len(rows) == 9
        assert "converged in" in capsys.readouterr().out

    def test_tight_tolerance(self, tmp_path, capsys):
        assert main(["powerflow", "--tol", "1e-12", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        residual = float(out.split("max residual ")[1].split()[0])
        assert residual < 1e-12
        assert "option --tol = 1e-12\n" in (tmp_path / "run.log").read_text()

    def test_missing_slack(self, tmp_path, capsys):
        bad = tmp_path / "bad.net"
        bad.write_text(SMIB_TEXT.format(p=0.8, x_line=0.3, device="").replace("slack", "PQ"))
        assert main(["powerflow", "--net", str(bad), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert "exactly one slack bus is required" in err
        assert f"{bad}:" in err

    def test_nonconvergence_exit(self, tmp_path):
        assert main(["powerflow", "--max-iter", "1", "--out", str(tmp_path)]) == 2
        assert "FAILED (numerical)" in (tmp_path / "run.log").read_text()

    def test_defaults_logged(self, tmp_path):
        main(["powerflow", "--out", str(tmp_path)])
        log = (tmp_path / "run.log").read_text()
        assert "option --max-iter = 20 (default)" in log
        assert "option --tol = 1e-08 (default)" in log


class TestOscillatorCompare:
    def test_default(self, tmp_path, capsys):
        t0 = time.perf_counter()
        assert main(["oscillator-compare", "--out", str(tmp_path)]) == 0
        assert time.perf_counter() - t0 < 1.0
        header, rows = read_csv(tmp_path / "oscillator_metrics.csv")
        ratios = {r[0]: r[header.index("dE/dP_l")] for r in rows}
        assert ratios == {"sm": "1", "vsm": "0.03", "pll": "0.00167"}
        header, rows = read_csv(tmp_path / "oscillator_responses.csv")
        assert header == ["time", "y_sm", "y_vsm", "y_pll"]
        assert len(rows) == 20001
        out = capsys.readouterr().out
        assert "0.00167" in out and "underdamped" in out

    def test_override_reclassifies(self, tmp_path):
        assert main(["oscillator-compare", "--preset", "sm", "--d", "100", "--out", str(tmp_path)]) == 0
        header, rows = read_csv(tmp_path / "oscillator_metrics.csv")
        assert len(rows) == 1
        assert rows[0][header.index("damping")] == "overdamped"

    def test_zero_horizon(self, tmp_path):
        out = tmp_path / "never"
        with pytest.raises(SystemExit) as err:
            main(["oscillator-compare", "--horizon", "0", "--out", str(out)])
        assert err.value.code == 1
        assert not out.exists()

    def test_unknown_preset(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["oscillator-compare", "--preset", "gfm", "--out", str(tmp_path)])
        assert err.value.code == 1


class TestSmallSignal:
    def test_bundled(self, tmp_path, capsys):
        assert main(["smallsignal", "--out", str(tmp_path)]) == 0
        _, rows = read_csv(tmp_path / "eigenvalues.csv")
        assert len(rows) == 27
        report = (tmp_path / "smallsignal_report.txt").read_text()
        assert "electromechanical modes: 1" in report
        assert "SM2.omega" in report

    def test_pll_verdicts(self, tmp_path, capsys):
        assert main(["smallsignal", "--check-emulation", "--preset", "pll", "--out", str(tmp_path)]) == 0
        report = (tmp_path / "smallsignal_report.txt").read_text()
        block = report[report.index("Device: PLL"):]
        assert block.count("FAIL") == 4 and "PASS" not in block

    def test_smib_classical(self, tmp_path, smib_files):
        net, _ = smib_files()
        assert main(["smallsignal", "--net", str(net), "--out", str(tmp_path)]) == 0
        _, rows = read_csv(tmp_path / "eigenvalues.csv")
        assert len(rows) == 2
        lam = np.array([complex(float(r[0]), float(r[1])) for r in rows])
        # closed form of 2H s^2 + D s + Ks*omega_b = 0 from the power-flow point
        from synchemu.files import read_network
        from synchemu.simulation import prepare

        dae, z0, _ = prepare(read_network(net))
        g = dae.devices[0]
        ks = g.e_prime * np.cos(z0[0]) / 0.5
        ref = np.roots([6.0, 2.0, ks * g.omega_b])
        assert np.sort_complex(lam) == pytest.approx(np.sort_complex(ref), abs=1e-5)


class TestSimulate:
    def test_no_event_flat(self, tmp_path, smib_files):
        net, scn = smib_files(scenario="horizon = 2\n")
        assert main(["simulate", "--scenario", str(scn), "--out", str(tmp_path)]) == 0
        header, rows = read_csv(tmp_path / "simulation.csv")
        data = np.array(rows, dtype=float)
        assert header[0] == "time"
        assert np.max(np.abs(data[:, 1:] - data[0, 1:])) < 1e-6

    def test_rerun_bitwise(self, tmp_path):
        args = ["simulate", "--horizon", "0.4"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "simulation.csv").read_bytes()
        assert a == (tmp_path / "b" / "simulation.csv").read_bytes()
        header = a.decode().splitlines()[0].split(",")
        for ch in ("SM1.omega", "SM2.omega", "CIG3.pll_freq", "CIG3.droop_norm", "CIG3.id", "SM1.id"):
            assert ch in header

    def test_channel_selection(self, tmp_path):
        assert main(["simulate", "--horizon", "0.2", "--channels", "SM1.omega,CIG3.id", "--out", str(tmp_path)]) == 0
        header, _ = read_csv(tmp_path / "simulation.csv")
        assert header == ["time", "SM1.omega", "CIG3.id"]

    def test_unknown_channel(self, tmp_path):
        assert main(["simulate", "--horizon", "0.2", "--channels", "SM7.omega", "--out", str(tmp_path)]) == 1

    def test_failure_keeps_partial(self, tmp_path, smib_files, capsys):
        _, scn = smib_files(
            device="classical_sm name=G bus=1 H=0.5 D=0 x_total=0.2",
            scenario="dt = 1\nhorizon = 20\nfault bus=1 t=1 duration=1\n",
        )
        assert main(["simulate", "--scenario", str(scn), "--out", str(tmp_path)]) == 2
        log = (tmp_path / "run.log").read_text()
        assert "FAILED: solver failure at t=" in log
        _, rows = read_csv(tmp_path / "simulation.csv")
        assert 0 < len(rows) < 21
        assert "FAILED" in capsys.readouterr().err

    def test_log_records_solver_settings(self, tmp_path):
        main(["simulate", "--horizon", "0.2", "--out", str(tmp_path)])
        log = (tmp_path / "run.log").read_text()
        assert "newton tol = 1e-09" in log
        assert "default fault admittance = 10000 pu" in log
        assert "default Ka" not in log  # the bundled file sets every regulator value
        assert "wall time" in log


class TestCheckEmulation:
    def test_all_presets_text(self, tmp_path, capsys):
        assert main(["check-emulation", "--out", str(tmp_path)]) == 0
        text = (tmp_path / "emulation_report.txt").read_text()
        assert text.count("Device:") == 4
        assert "emulates a synchronous machine" in text

    def test_json(self, tmp_path, capsys):
        import json

        assert main(["check-emulation", "--preset", "vsm", "--format", "json", "--out", str(tmp_path)]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data[0]["verdicts"]["damping"]["pass"] is False

    def test_custom_device(self, tmp_path, capsys):
        assert main(["check-emulation", "--c", "6", "--d", "3", "--overload", "6", "--out", str(tmp_path)]) == 0
        assert "FAIL" not in capsys.readouterr().out

    def test_conflicting_inputs(self, tmp_path):
        assert main(["check-emulation", "--preset", "sm", "--c", "6", "--out", str(tmp_path)]) == 1

    def test_threshold_override(self, tmp_path, capsys):
        assert main(["check-emulation", "--preset", "vsm", "--min-overload", "1", "--max-damping", "100",
                     "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "short_circuit  PASS" in out
        # an overdamped response fails however loose the damping bound is
        assert "(fails: damping)" in out


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("SYNCHEMU_OUT", str(tmp_path / "env"))
    assert main(["check-emulation", "--preset", "sm"]) == 0
    assert (tmp_path / "env" / "emulation_report.txt").exists()


def test_unusable_output_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["powerflow", "--out", str(blocker)]) == 3


def test_console_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "synchemu.cli", "powerflow", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "powerflow.csv").exists()
