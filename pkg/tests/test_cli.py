import csv
import math
import subprocess
import sys

import pytest

from pqsim.cli import RESOLVED_CONFIG, main
from pqsim.io import read_report_values

SMALL = "n_atoms = 1.2e6\ntrials = 6\nwindow_us = 90\nt_e_us = 90\nmaster_seed = 4\n"


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL)
    return path


def test_missing_config_exit_2_and_no_files(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(tmp_path / "none.cfg"), "--out", str(out)]) == 2
    assert not out.exists()


def test_bad_config_exit_2(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("window_us = 100\n")
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == 2


def test_usage_error_exit_2(cfg_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--config", str(cfg_path), "--workers", "0"])
    assert exc.value.code == 2


def test_simulate_then_analyze_reproduces(tmp_path, cfg_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(cfg_path), "--out", str(a), "--grid", "21"]) == 0
    for name in ("traces.csv", "stats.txt", "metrics.txt", RESOLVED_CONFIG):
        assert (a / name).is_file()
    assert main(["analyze", "--config", str(cfg_path), "--out", str(b), "--grid", "21", str(a / "traces.csv")]) == 0
    assert (a / "stats.txt").read_bytes() == (b / "stats.txt").read_bytes()
    assert (a / "metrics.txt").read_bytes() == (b / "metrics.txt").read_bytes()


def test_analyze_rejects_duplicate_trials(tmp_path, cfg_path):
    main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path), "--grid", "5"])
    trace = str(tmp_path / "traces.csv")
    assert main(["analyze", "--config", str(cfg_path), "--out", str(tmp_path / "x"), trace, trace]) == 1


def test_analyze_malformed_trace_exit_1(tmp_path, cfg_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t_us,phi_rad,n_photons,label,trial\n1.5,oops,1,with_atoms,0\n")
    assert main(["analyze", "--config", str(cfg_path), "--out", str(tmp_path), str(bad)]) == 1


def test_metrics_from_stats(tmp_path, cfg_path):
    main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "s"), "--analytic", "--grid", "11"])
    out = tmp_path / "m"
    assert main(["metrics", "--config", str(cfg_path), "--out", str(out), "--grid", "11",
                 "--stats", str(tmp_path / "s" / "stats.txt")]) == 0
    raw = read_report_values(out / "metrics.txt")
    main(["metrics", "--config", str(cfg_path), "--out", str(out), "--grid", "11", "--mode", "subtracted",
          "--stats", str(tmp_path / "s" / "stats.txt")])
    sub = read_report_values(out / "metrics.txt")
    assert float(sub["xi_par_sq"].split()[0]) < float(raw["xi_par_sq"].split()[0])
    assert "readout_subtracted" in (out / RESOLVED_CONFIG).read_text()


def test_seed_override_recorded(tmp_path, cfg_path):
    main(["calibrate", "--config", str(cfg_path), "--out", str(tmp_path), "--seed", "77"])
    assert "master_seed = 77" in (tmp_path / RESOLVED_CONFIG).read_text()
    assert "gamma_zero:" in (tmp_path / "calibration.txt").read_text()


def test_phase_curve_columns(tmp_path, cfg_path):
    assert main(["phase-curve", "--config", str(cfg_path), "--out", str(tmp_path), "--grid", "9"]) == 0
    with open(tmp_path / "phase_curve.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["phi_rad", "dphi2_pqs_rad2", "dphi2_pcss_rad2", "dphi2_sss_rad2", "db_pqs", "db_sss"]
    assert len(rows) == 9
    mid = rows[4]
    assert float(mid["phi_rad"]) == 0.0
    assert math.isclose(float(mid["dphi2_pcss_rad2"]), 1 / (2 * 1.2e6), rel_tol=1e-5)
    assert all(r["dphi2_pqs_rad2"] for r in rows)


def test_phase_curve_zero_coherence_exit_1(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("n_atoms = 0\ntrials = 4\n")
    assert main(["phase-curve", "--config", str(path), "--out", str(tmp_path)]) == 1


def test_scans_write_one_row_per_point(tmp_path, cfg_path):
    assert main(["scan-window", "--config", str(cfg_path), "--out", str(tmp_path), "--analytic",
                 "--values", "60,90,120", "--grid", "5"]) == 0
    lines = (tmp_path / "scan_window.csv").read_text().splitlines()
    assert lines[0].startswith("window_us,") and len(lines) == 4
    assert main(["scan-window", "--config", str(cfg_path), "--out", str(tmp_path), "--values", "100"]) == 2
    assert main(["scan-coherence", "--config", str(cfg_path), "--out", str(tmp_path), "--analytic",
                 "--values", "5e5, 1e6", "--grid", "5"]) == 0
    assert len((tmp_path / "scan_coherence.csv").read_text().splitlines()) == 3
    assert main(["scan-coherence", "--config", str(cfg_path), "--out", str(tmp_path)]) == 2


def test_module_entry_point(cfg_path):
    res = subprocess.run([sys.executable, "-m", "pqsim", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "pqsim" in res.stdout
