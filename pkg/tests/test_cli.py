from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oqs_chain import cli
from oqs_chain.generators import coefficients_from_dict
from oqs_chain.model import ChainParams


def write_config(tmp_path, **data):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------- configuration


def test_default_grid():
    grid = cli.default_delta_t_grid()
    assert len(grid) == 40 and grid[0] == 1e-2 and grid[-1] == 1e4
    assert np.all(np.diff(np.log10(grid)) > 0)


def test_defaults_fill_grid_only_with_tcg():
    assert cli.ScenarioConfig().delta_t_grid == cli.default_delta_t_grid()
    assert cli.ScenarioConfig(approaches=("local",)).delta_t_grid is None
    with pytest.raises(cli.ConfigError):
        cli.ScenarioConfig(approaches=("local",), delta_t_grid=(1.0,))


@given(
    st.floats(0.1, 3.0), st.floats(0.0, 2.0), st.floats(0.0, 1.0),
    st.lists(st.sampled_from(cli.APPROACHES), min_size=1, max_size=4, unique=True),
    st.integers(0, 10**6), st.floats(0.0, 100.0),
)
def test_config_json_round_trip(omega0, g, lam, approaches, seed, t_end):
    cfg = cli.ScenarioConfig(
        params=ChainParams(omega0=omega0, g=g, lam=lam),
        approaches=tuple(approaches), seed=seed, t_end=t_end,
    )
    assert cli.ScenarioConfig.from_json(cfg.to_json()) == cfg


@pytest.mark.parametrize("data", [
    {"unknown": 1},
    {"params": {"omega0": 1.0, "gamma": 2.0}},
    {"params": {"omega0": -1.0}},
    {"approaches": ["hybrid"]},
    {"approaches": []},
    {"t_end": -1.0},
    {"delta_t_grid": []},
    {"bath": {"modes_per_bath": 0}},
])
def test_bad_configs_exit_with_config_code(tmp_path, data):
    path = write_config(tmp_path, **data)
    assert cli.main(["coeffs", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_invalid_json_and_missing_output(tmp_path, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["coeffs", "--config", str(bad), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["coeffs", "--config", str(tmp_path / "missing.json"),
                     "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["coeffs"]) == cli.EXIT_CONFIG


def test_thread_count_sources(monkeypatch):
    monkeypatch.delenv("OQS_CHAIN_THREADS", raising=False)
    assert cli._threads(None) == 1
    monkeypatch.setenv("OQS_CHAIN_THREADS", "3")
    assert cli._threads(None) == 3
    assert cli._threads(2) == 2
    monkeypatch.setenv("OQS_CHAIN_THREADS", "many")
    with pytest.raises(cli.ConfigError):
        cli._threads(None)
    with pytest.raises(cli.ConfigError):
        cli._threads(0)


# ---------------------------------------------------------------- coeffs


def test_coeffs_writes_one_file_per_generator(tmp_path):
    path = write_config(tmp_path, delta_t_grid=[0.01, 1.0, 100.0])
    out = tmp_path / "out"
    assert cli.main(["coeffs", "--config", str(path), "--out", str(out)]) == cli.EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names == ["coeffs_global.json", "coeffs_local.json", "coeffs_tcg_000.json",
                     "coeffs_tcg_001.json", "coeffs_tcg_002.json"]
    for name in ("coeffs_local.json", "coeffs_global.json"):
        c = coefficients_from_dict(json.loads((out / name).read_text()))
        for g in (c.gamma_plus, c.gamma_minus):
            np.testing.assert_array_equal(g, np.diag(np.diag(g)))
    assert json.loads((out / "coeffs_tcg_002.json").read_text())["delta_t"] == 100.0


def test_coeffs_without_coupling_are_zero(tmp_path):
    path = write_config(tmp_path, params={"lam": 0.0}, delta_t_grid=[1.0])
    assert cli.main(["coeffs", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_OK
    for f in tmp_path.glob("coeffs_*.json"):
        c = coefficients_from_dict(json.loads(f.read_text()))
        assert not np.any(c.gamma_plus) and not np.any(c.gamma_minus)


# ---------------------------------------------------------------- evolve


def test_evolve_outputs(tmp_path):
    path = write_config(tmp_path, approaches=["local", "global", "tcg"], delta_t_grid=[1.0],
                        t_end=2.0, sample_step=0.01)
    out = tmp_path / "out"
    assert cli.main(["evolve", "--config", str(path), "--out", str(out)]) == cli.EXIT_OK
    traj = read_csv(out / "trajectory_local.csv")
    assert traj[0] == cli.trajectory_header() and len(traj) == 202
    n2 = np.array([float(r[traj[0].index("n2")]) for r in traj[1:]])
    assert n2[0] == 0.0 and np.all(np.diff(n2) > 0)
    assert (out / "trajectory_tcg_000.csv").exists()
    rows = read_csv(out / "transport.csv")
    col = rows[0].index("residual")
    assert max(float(r[col]) for r in rows[1:]) < 1e-5
    assert {r[0] for r in rows[1:]} == {"local", "global", "tcg"}


def test_local_occupation_approaches_steady_value_monotonically(tmp_path):
    path = write_config(tmp_path, approaches=["local"], t_end=400.0, sample_step=1.0)
    assert cli.main(["evolve", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_OK
    rows = read_csv(tmp_path / "trajectory_local.csv")
    n2 = np.array([float(r[rows[0].index("n2")]) for r in rows[1:]])
    tail = n2[100:]
    assert np.all(np.diff(tail) > 0)


def test_zero_horizon_writes_headers_only(tmp_path):
    path = write_config(tmp_path, approaches=["local", "exact"], t_end=0.0)
    assert cli.main(["evolve", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_OK
    assert len(read_csv(tmp_path / "trajectory_local.csv")) == 1
    assert len(read_csv(tmp_path / "trajectory_exact.csv")) == 1
    assert len(read_csv(tmp_path / "transport.csv")) == 1


def test_evolve_is_deterministic_across_thread_counts(tmp_path):
    path = write_config(tmp_path, approaches=["local", "tcg"], delta_t_grid=[1.0],
                        evolve_delta_t=[0.5, 2.0], t_end=1.0, sample_step=0.05)
    outputs = []
    for k, threads in enumerate(("1", "1", "3")):
        out = tmp_path / f"run{k}"
        assert cli.main(["evolve", "--config", str(path), "--out", str(out),
                         "--threads", threads]) == cli.EXIT_OK
        outputs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outputs[0] == outputs[1] == outputs[2]


# ---------------------------------------------------------------- sweep-dt and check


def test_sweep_dt_small_grid(tmp_path):
    path = write_config(tmp_path, delta_t_grid=[0.01, 1.0, 1e4])
    assert cli.main(["sweep-dt", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_OK
    rows = read_csv(tmp_path / "sweep_dt.csv")
    assert rows[0] == cli.SWEEP_COLUMNS
    tcg = [r for r in rows[1:] if r[0] == "tcg"]
    glb = [r for r in rows[1:] if r[0] == "global"]
    assert len(tcg) == 3 and len(glb) == 2
    ql = rows[0].index("q_left")
    assert float(tcg[-1][ql]) == pytest.approx(float(glb[0][ql]), rel=1e-2)
    assert abs(float(tcg[0][ql])) < 1e-2 * abs(float(glb[0][ql]))


def test_sweep_dt_needs_tcg(tmp_path):
    path = write_config(tmp_path, approaches=["global"])
    assert cli.main(["sweep-dt", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_sweep_dt_reports_failing_points(tmp_path):
    # a panel budget too small for the long windows makes those points fail
    path = write_config(tmp_path, delta_t_grid=[1.0, 1e4], quad={"max_panels": 1000})
    assert cli.main(["sweep-dt", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_NUMERIC
    rows = read_csv(tmp_path / "sweep_dt.csv")
    assert [r[0] for r in rows[1:]].count("tcg") == 1


def test_check_passes_on_default_scenario(tmp_path):
    assert cli.main(["check", "--out", str(tmp_path)]) == cli.EXIT_OK
    report = json.loads((tmp_path / "check.json").read_text())
    assert report["passed"] and all(c["passed"] for c in report["checks"])


def test_check_flags_corrupted_rates(tmp_path):
    path = write_config(tmp_path, delta_t_grid=[1.0])
    code = cli.main(["check", "--config", str(path), "--out", str(tmp_path), "--debug-corrupt-gamma"])
    assert code == cli.EXIT_CHECK
    report = json.loads((tmp_path / "check.json").read_text())
    failed = {c["name"] for c in report["checks"] if not c["passed"]}
    assert "psd:local" in failed and "psd:global" in failed


def test_check_with_undamped_global_mode(tmp_path):
    path = write_config(tmp_path, params={"g": 0.8}, delta_t_grid=[0.1, 10.0, 1e4])
    assert cli.main(["check", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_OK


def test_console_entry_point(tmp_path):
    path = write_config(tmp_path, approaches=["local"])
    proc = subprocess.run([sys.executable, "-m", "oqs_chain.cli", "coeffs", "--config", str(path),
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip().endswith("coeffs_local.json")
