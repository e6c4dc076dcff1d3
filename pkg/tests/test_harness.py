import csv
import json

import numpy as np
import pytest

from mwmhe.errors import ConfigError, QPError
from mwmhe.harness import cli
from mwmhe.harness.bench import (
    BenchmarkReport, SUMMARY_COLUMNS, emit_report, generate_data, run_benchmark, step_schedule,
)
from mwmhe.harness.config import config_from_dict, load_config
from mwmhe.model import DescriptorSystem, save_system

from conftest import REFERENCE_PRIOR, reference_system

# noisy truth may cross the bound; the simulator reports that and carries on
pytestmark = pytest.mark.filterwarnings("ignore:simulated trajectory:RuntimeWarning")


@pytest.fixture
def system_file(tmp_path):
    sys, cons = reference_system()
    path = tmp_path / "ref.json"
    save_system(path, sys, cons, REFERENCE_PRIOR)
    return path


@pytest.fixture
def free_system_file(tmp_path):
    sys, _ = reference_system()
    path = tmp_path / "free.json"
    save_system(path, sys, None, REFERENCE_PRIOR)
    return path


def _config(tmp_path, system, **extra):
    doc = {"system": str(system), "T_final": 40, "horizons": [3, 5], "repeats": 1,
           "out": str(tmp_path / "out")}
    doc.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- configuration -----------------------------------------------------------------------

class TestConfig:
    def test_defaults(self, system_file):
        cfg = config_from_dict({"system": str(system_file), "T_final": 50})
        assert cfg.seed == 0
        assert cfg.process_noise_var == 1.0 and cfg.measurement_noise_var == 0.1
        assert cfg.lags() == [N - 1 for N in cfg.horizons]

    def test_zero_horizon_rejected(self):
        with pytest.raises(ConfigError, match="horizon"):
            config_from_dict({"system": "synthetic", "T_final": 50, "horizons": [0, 5]})

    def test_duplicates_removed(self):
        with pytest.warns(UserWarning, match="duplicate"):
            cfg = config_from_dict({"system": "synthetic", "T_final": 50, "horizons": [5, 3, 5]})
        assert cfg.horizons == [5, 3]

    @pytest.mark.parametrize("doc, msg", [
        ({"system": "synthetic", "T_final": 50, "colour": 1}, "unknown"),
        ({"system": "synthetic"}, "T_final"),
        ({"system": "synthetic", "T_final": 5, "horizons": [5]}, "exceed"),
        ({"system": "synthetic", "T_final": 50, "horizons": [5], "nfc": [1], "U": 1.0}, "either"),
        ({"system": "synthetic", "T_final": 50, "horizons": [5], "nfc": [1, 2]}, "one entry"),
        ({"system": "synthetic", "T_final": 50, "U": -1.0}, "positive"),
        ({"system": "synthetic", "T_final": 50, "measurement_noise_var": -0.1}, "non-negative"),
        ({"system": "synthetic", "T_final": 50, "eviction_rule": "late"}, "eviction_rule"),
        ({"system": "synthetic", "T_final": 50, "methods": {"ekf": True}}, "methods"),
        ({"system": "missing.json", "T_final": 50}, "does not exist"),
    ])
    def test_invalid(self, doc, msg):
        with pytest.raises(ConfigError, match=msg):
            config_from_dict(doc)

    def test_parse_error_has_position(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"system": "synthetic",\n "T_final": }')
        with pytest.raises(ConfigError, match=r"bad\.json:2:"):
            load_config(path)

    def test_relative_system_path(self, tmp_path, system_file):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"system": system_file.name, "T_final": 20, "horizons": [5]}))
        assert load_config(path).system_path() == system_file


# --- data --------------------------------------------------------------------------------

class TestData:
    def test_deterministic(self, tmp_path, system_file):
        cfg = load_config(_config(tmp_path, system_file, seed=4))
        (t1, r1), (t2, r2) = generate_data(cfg), generate_data(cfg)
        assert t1.states.tobytes() == t2.states.tobytes() and r1.y.tobytes() == r2.y.tobytes()
        cfg.seed = 5
        assert not np.array_equal(generate_data(cfg)[1].y, r1.y)

    def test_zero_variance_is_noise_free(self, tmp_path, system_file):
        cfg = load_config(_config(tmp_path, system_file, process_noise_var=0.0,
                                  measurement_noise_var=0.0, x0=[1.0, -1.0, 1.0]))
        traj, rec = generate_data(cfg)
        sys, _ = reference_system()
        np.testing.assert_allclose(traj.states[1:], traj.states[:-1] @ sys.A.T, atol=1e-15)
        np.testing.assert_allclose(rec.y[1:], traj.states[1:] @ sys.H.T, atol=1e-15)

    def test_step_schedule(self):
        out = step_schedule([(100, 20.0), (0, 0.0), (200, -20.0)], 250)
        assert out.shape == (250, 1)
        assert np.all(out[:100] == 0) and np.all(out[100:200] == 20) and np.all(out[200:] == -20)

    def test_disturbance_drives_free_channel(self):
        cfg = config_from_dict({"system": "synthetic", "T_final": 30,
                                "horizons": [5], "disturbance": [[0, 0.0], [10, 3.0]]})
        traj, _ = generate_data(cfg)
        # schedule row k sets the free component reached by transition k
        np.testing.assert_array_equal(traj.states[1:11, 3], 0.0)
        np.testing.assert_allclose(traj.states[11:, 3], 3.0, atol=1e-12)


# --- benchmark and report ----------------------------------------------------------------

class TestBenchmark:
    def test_unconstrained_methods_agree(self, tmp_path, free_system_file):
        cfg = load_config(_config(tmp_path, free_system_file))
        rep = run_benchmark(cfg)
        fie = rep.row("fie", 40).mse
        for N in (3, 5):
            assert rep.row("mhe", N).mse == pytest.approx(fie, rel=1e-6)
            assert rep.row("mwmhe", N).mse == pytest.approx(fie, rel=1e-6)

    def test_full_grid(self, tmp_path, system_file):
        cfg = load_config(_config(tmp_path, system_file, workers=2))
        rep = run_benchmark(cfg)
        assert [(r.method, r.N) for r in rep.rows] == [
            ("fie", 40), ("mhe", 3), ("mwmhe", 3), ("mhe", 5), ("mwmhe", 5)]
        assert all(r.status == "ok" for r in rep.rows)
        assert rep.row("mwmhe", 5).N_FC == 4
        assert rep.row("mwmhe", 5).coupling_norm < rep.row("mwmhe", 3).coupling_norm
        assert max(r.max_kkt for r in rep.rows) <= 1e-8
        files = emit_report(rep, tmp_path / "r")
        rows = _rows(tmp_path / "r" / "summary.csv")
        assert tuple(rows[0]) == SUMMARY_COLUMNS and len(rows) == 2 + 2 * 2
        assert all(r[4] == "" for r in rows[1:])
        assert len(_rows(tmp_path / "r" / "timing.csv")) == 6
        names = {p.name for p in files}
        assert {"estimates_fie_40.csv", "ledger_mwmhe_5.jsonl"} <= names
        est = _rows(tmp_path / "r" / "estimates_mhe_3.csv")
        assert est[0] == ["t", "true_x0", "true_x1", "true_x2", "est_x0", "est_x1", "est_x2"]
        assert len(est) == 41

    def test_empty_grid(self, tmp_path, system_file):
        cfg = load_config(_config(tmp_path, system_file))
        traj, rec = generate_data(cfg)
        emit_report(BenchmarkReport(cfg, traj, rec, []), tmp_path / "e")
        assert _rows(tmp_path / "e" / "summary.csv") == [list(SUMMARY_COLUMNS)]

    def test_single_fie_row(self, tmp_path, system_file):
        cfg = load_config(_config(tmp_path, system_file, horizons=[],
                                  methods={"fie": True, "mhe": False, "mwmhe": False}))
        files = emit_report(run_benchmark(cfg), tmp_path / "f")
        assert len(_rows(tmp_path / "f" / "summary.csv")) == 2
        assert sorted(p.name for p in files if p.name.startswith("estimates")) == \
            ["estimates_fie_40.csv"]

    def test_timing_in_summary(self, tmp_path, system_file):
        cfg = load_config(_config(tmp_path, system_file, horizons=[3]))
        emit_report(run_benchmark(cfg), tmp_path / "t", timing_in_summary=True)
        rows = _rows(tmp_path / "t" / "summary.csv")
        assert all(float(r[4]) > 0 for r in rows[1:])
        assert rows[3][5] != ""

    def test_coupling_bound_selects_lag(self, tmp_path, system_file):
        cfg = load_config(_config(tmp_path, system_file, U=1e6))
        rep = run_benchmark(cfg)
        assert {r.N_FC for r in rep.rows if r.method == "mwmhe"} == {1}


# --- command line ------------------------------------------------------------------------

class TestCLI:
    def test_validate(self, system_file, tmp_path, capsys):
        assert cli.main(["validate", str(system_file)]) == 0
        assert "Riccati" in capsys.readouterr().out
        bad = DescriptorSystem([[1.0, 0.0]], [[0.0, 0.0]], np.zeros((1, 0)), [[1.0, 0.0]],
                               [[1.0]], [[1.0]])
        save_system(tmp_path / "bad.json", bad)
        assert cli.main(["validate", str(tmp_path / "bad.json")]) == 2

    def test_missing_file(self, tmp_path):
        assert cli.main(["validate", str(tmp_path / "nope.json")]) == 2

    def test_tune(self, system_file, capsys):
        assert cli.main(["tune", str(system_file), "--bound", "1e6"]) == 0
        assert capsys.readouterr().out.startswith("N_FC = 1")
        assert cli.main(["tune", str(system_file), "--bound", "1e-30", "--max-lag", "3"]) == 2

    def test_simulate(self, tmp_path, system_file):
        cfg = _config(tmp_path, system_file)
        assert cli.main(["simulate", str(cfg), "--out", str(tmp_path / "s")]) == 0
        rows = _rows(tmp_path / "s" / "simulation.csv")
        assert rows[0] == ["t", "x0", "x1", "x2", "y0"] and len(rows) == 42

    @pytest.mark.parametrize("args", [["--method", "fie"], ["--method", "mhe", "--N", "4"],
                                      ["--method", "mwmhe", "--N", "1", "--nfc", "3"]])
    def test_estimate(self, tmp_path, system_file, args):
        cfg = _config(tmp_path, system_file)
        assert cli.main(["estimate", str(cfg), *args]) == 0
        assert len(_rows(tmp_path / "out" / "summary.csv")) == 2

    def test_estimate_needs_lag(self, tmp_path, system_file):
        assert cli.main(["estimate", str(_config(tmp_path, system_file)), "--method", "mwmhe"]) == 2

    def test_bad_config(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"system": "synthetic", "T_final": 50, "horizons": [0]}))
        assert cli.main(["bench", str(path)]) == 2

    @pytest.mark.parametrize("rule", ["text", "flowchart"])
    def test_bench(self, tmp_path, system_file, rule, capsys):
        cfg = _config(tmp_path, system_file)
        out = tmp_path / rule
        assert cli.main(["bench", str(cfg), "--out", str(out), "--seed", "2",
                         "--eviction-rule", rule]) == 0
        assert "mwmhe" in capsys.readouterr().out
        assert len(_rows(out / "summary.csv")) == 6

    def test_numerical_failure_code(self, monkeypatch, system_file):
        def boom(args):
            raise QPError("stalled")
        monkeypatch.setitem(cli.COMMANDS, "validate", boom)
        assert cli.main(["validate", str(system_file)]) == 3
