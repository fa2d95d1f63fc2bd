import json
import math

import numpy as np
import pytest

from arrayphotons.cli import main
from arrayphotons.config import PRESETS, ConfigError, build_config, parse_config

SMALL = ["--set", "layout=N3", "--set", "d_nm=470", "--set", "w0_nm=940", "--set", "omega_mhz=10",
         "--set", "duration_us=0.3", "--set", "J=3", "--set", "Q_target=1400",
         "--set", "sample_interval=0.5", "--set", "burn_in=1"]


def test_presets():
    c = build_config({"preset": "fig5", "seed": 1})
    assert (c.layout, c.d_nm, c.w0_nm, c.omega_mhz, c.bin_ns, c.dt_cut_ns) == \
        ("N13", 660.0, 900.0, 1.0, 25.0, 75.0)
    c = build_config({"preset": "fig3", "seed": 1})
    assert (c.layout, c.omega_mhz, c.w0_nm, c.bin_ns) == ("N1", 3.0, 430.0, 10.0)
    assert all("seed" not in p for p in PRESETS.values())
    with pytest.raises(ConfigError, match="seed"):
        build_config({"preset": "fig3"})


def test_empty_file_lists_missing_keys(tmp_path):
    f = tmp_path / "empty.cfg"
    f.write_text("# nothing\n")
    with pytest.raises(ConfigError) as e:
        parse_config(f)
    for k in ("layout", "w0_nm", "omega_mhz", "duration_us", "J", "seed"):
        assert k in str(e.value)


def test_bad_values_report_key_and_line(tmp_path):
    f = tmp_path / "bad.cfg"
    f.write_text("layout = N1\nw0_nm = -3\nomega_mhz = 1\nduration_us = 1\nJ = 1\nseed = 0\n")
    with pytest.raises(ConfigError, match=r"bad.cfg:2.*w0_nm"):
        parse_config(f)
    f.write_text("layout = N1\nwaist = 3\n")
    with pytest.raises(ConfigError, match=r"bad.cfg:2.*waist"):
        parse_config(f)
    with pytest.raises(ConfigError, match="J"):
        build_config({"layout": "N1", "w0_nm": 900, "omega_mhz": 1, "duration_us": 1, "J": 1.5, "seed": 0})
    with pytest.raises(ConfigError, match="d_nm"):
        build_config({"layout": "N13", "w0_nm": 900, "omega_mhz": 1, "duration_us": 1, "J": 1, "seed": 0})


def test_config_round_trip(tmp_path):
    c = build_config({"preset": "fig7", "seed": 4})
    f = tmp_path / "c.cfg"
    f.write_text(c.to_text())
    assert parse_config(f) == c
    assert math.isclose(c.duration_us * 1e3 * 2 * math.pi * 6e-3, 4.0)


def test_simulate_is_deterministic_and_complete(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--seed", "9", *SMALL, "-o", str(a)]) == 0
    assert main(["simulate", "--seed", "9", *SMALL, "-o", str(b), "--workers", "2"]) == 0
    for name in ("records.csv", "traces.csv", "summary.json", "pattern.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    assert summary["grid_checks"]["Q"] == 1400
    assert set(summary["events"]) == {"forward", "backward", "side"}
    lines = (a / "records.csv").read_text().splitlines()
    assert lines[0].startswith("# units")
    c = tmp_path / "c"
    assert main(["simulate", "--seed", "10", *SMALL, "-o", str(c)]) == 0
    assert (c / "records.csv").read_bytes() != (a / "records.csv").read_bytes()

    assert main(["stats", str(a), "--set", "theta_cut_deg=40", "-o", str(tmp_path / "s")]) == 0
    st = json.loads((tmp_path / "s" / "stats.json").read_text())
    assert st["theta_cut_deg"] == pytest.approx(40)
    assert main(["plot", str(a)]) == 0 and (a / "plot.gp").exists()
    capsys.readouterr()
    assert main(["report", str(a)]) in (0, 1)
    assert "total" in capsys.readouterr().out


def test_dry_run_writes_nothing(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["simulate", "--seed", "1", *SMALL, "-o", str(out), "--dry-run"]) == 1
    info = json.loads(capsys.readouterr().out)
    assert info["basis_dim"] == 8 and not info["grid_checks"]["pass"]
    assert main(["simulate", "--seed", "1", *SMALL, "--set", "Q_target=11200", "-o", str(out),
                 "--dry-run"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["grid_checks"]["pass"] and info["grid_checks"]["Q"] == 11200
    assert not out.exists()


def test_errors_exit_with_status_two(tmp_path, capsys):
    assert main(["simulate", "--set", "layout=N1"]) == 2
    assert "missing keys" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "nope.cfg")]) == 2
    assert main(["report", str(tmp_path)]) == 1


def test_validate_grid_and_refinement(capsys):
    rc = main(["validate-grid", "--preset", "fig5", "--seed", "0", "--Q", "700,1400,2800", "--refine",
               "--json"])
    out = json.loads(capsys.readouterr().out)
    lds = [r["sum_LD"] for r in out["rows"]]
    assert lds == sorted(lds, reverse=True)
    assert rc == 1 and not out["pass"]  # Q <= 2800 is too coarse for the 1e-3 tolerance


def test_oracles_and_operator_dump(tmp_path):
    args = ["--seed", "0", "--set", "layout=N3", "--set", "d_nm=470", "--set", "w0_nm=940",
            "--set", "omega_mhz=10", "--set", "duration_us=0.05", "--set", "J=4",
            "--set", "Q_target=700"]
    assert main(["oracle", "me", *args, "-o", str(tmp_path)]) == 0
    me = np.loadtxt(tmp_path / "me.csv", delimiter=",", comments="#", skiprows=2)
    assert me[0, 2] == 1.0
    assert main(["oracle", "classical", *args, "-o", str(tmp_path)]) == 0
    assert main(["oracle", "source-modes", *args, "-o", str(tmp_path)]) == 0
    assert main(["dump-operators", *args, "-o", str(tmp_path / "ops")]) == 0
    g = np.loadtxt(tmp_path / "ops" / "gamma.csv", delimiter=",")
    assert np.allclose(np.diag(g), 1.0)
    assert main(["oracle", "scan", "--layout", "N3", "--d-nm", "400:800:3", "--w0-nm", "2d",
                 "--Q", "700", "-o", str(tmp_path)]) == 0
    assert len((tmp_path / "scan.csv").read_text().splitlines()) == 5
