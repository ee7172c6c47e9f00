import json
import math
import subprocess
import sys

import numpy as np
import pytest

from collapse_lab import io as cio
from collapse_lab.cli import main, parse_config
from collapse_lab.errors import InvalidValue, UnknownFlag
from collapse_lab.measurement import GaussianMeasurementConfig, WeakRegimeWarning
from collapse_lab.trajectory import TrajectoryRecord, run_ensemble, run_trajectory

QUBIT = GaussianMeasurementConfig(0.2, 1e-3, [1.0, -1.0])


class TestTrajectoryFile:
    def test_roundtrip_is_byte_identical(self, tmp_path):
        rec = run_trajectory([0.6, 0.8j], QUBIT, 4, t_max=0.2)
        a = cio.write_trajectory(rec, tmp_path / "a.jsonl")
        back = cio.read_trajectory(a)
        b = cio.write_trajectory(back.record, tmp_path / "b.jsonl")
        assert a.read_bytes() == b.read_bytes()
        assert np.array_equal(back.record.amplitudes, rec.amplitudes)
        assert [r.r for r in back.record.readouts] == [r.r for r in rec.readouts]

    def test_row_layout(self, tmp_path):
        rec = run_trajectory([0.6, 0.8], QUBIT.replace(tau=1e6), 0, t_max=1.0)
        assert len(rec.readouts) == 1000
        lines = (cio.write_trajectory(rec, tmp_path / "t.jsonl")).read_text().splitlines()
        assert len(lines) == 1002
        header, first, last = json.loads(lines[0]), json.loads(lines[1]), json.loads(lines[-1])
        assert header["schema"] == cio.SCHEMA_VERSION
        assert header["n_samples"] == 1001
        assert set(first) == {"t", "re", "im", "r", "dH"}
        assert first["r"] is None and first["dH"] is None
        assert last["t"] == pytest.approx(1.0)

    def test_empty_record_header_only(self, tmp_path):
        rec = TrajectoryRecord(seed=3, samples=[], readouts=[])
        lines = cio.write_trajectory(rec, tmp_path / "e.jsonl").read_text().splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])["n_samples"] == 0

    def test_reconstruction_column(self, tmp_path):
        rec = run_trajectory([0.6, 0.8], QUBIT, 2, t_max=0.05)
        dh = [r.dH for r in rec.reconstruct()]
        back = cio.read_trajectory(cio.write_trajectory(rec, tmp_path / "r.jsonl"))
        assert back.dH == dh

    def test_dH_length_checked(self):
        rec = run_trajectory([0.6, 0.8], QUBIT, 2, t_max=0.01)
        with pytest.raises(ValueError):
            cio.trajectory_lines(rec, [0.0])

    def test_non_finite_values_are_strings(self):
        assert json.loads(cio.dumps_line({"a": math.inf, "b": np.float64("nan")})) == {"a": "inf", "b": "nan"}

    def test_wrong_schema(self, tmp_path):
        p = tmp_path / "x.jsonl"
        p.write_text('{"schema": "other"}\n')
        with pytest.raises(ValueError):
            cio.read_trajectory(p)


def test_stats_files(tmp_path):
    stats = run_ensemble([0.6, 0.8], QUBIT, 40, 1)
    csv_path, side = cio.write_stats(stats, tmp_path / "s.csv")
    assert side.name == "s.summary.json"
    rows, series, summary = cio.read_stats(csv_path)
    assert [r["outcome_index"] for r in rows] == ["0", "1"]
    assert sum(int(r["count"]) for r in rows) == 40
    assert sum(float(r["frequency"]) for r in rows) == pytest.approx(1.0, abs=1e-12)
    assert len(series) == len(stats.times)
    assert series[0][1:] == pytest.approx([0.36, 0.64])
    assert summary["n_trajectories"] == 40
    assert summary["schema"] == cio.STATS_SCHEMA_VERSION


class TestParseConfig:
    def test_documented_example(self):
        cfg = parse_config("simulate --n 2 --lambda 1,-1 --tau 1 --dt 1e-3 --state 0.5477,0.8367 --seed 7".split())
        assert cfg.mode == "simulate"
        assert cfg.seed == 7
        assert cfg.eigenvalues == [1.0, -1.0]
        assert np.linalg.norm(cfg.initial().amplitudes) == pytest.approx(1.0, abs=1e-14)
        assert cfg.initial().populations[0] == pytest.approx(0.3, abs=1e-4)

    def test_missing_lambda(self):
        with pytest.raises(InvalidValue) as err:
            parse_config("simulate --n 2 --tau 1 --dt 1e-3 --state plus".split())
        assert err.value.field == "lambda"

    def test_unknown_flag(self):
        with pytest.raises(UnknownFlag):
            parse_config("simulate --lambda 1,-1 --tau 1 --dt 1e-3 --state plus --bogus 3".split())

    @pytest.mark.parametrize(
        "argv, field",
        [
            ("simulate --lambda 1,-1 --tau 0 --dt 1e-3 --state plus", "tau"),
            ("simulate --lambda 1,-1 --tau 1 --dt abc --state plus", "dt"),
            ("simulate --lambda 1,1 --tau 1 --dt 1e-3 --state plus", "lambda"),
            ("simulate --lambda 1,-1 --tau 1 --dt 1e-3 --state 1,1", "state"),
            ("simulate --lambda 1,0,-1 --tau 1 --dt 1e-3 --state plus", "state"),
            ("simulate --lambda 1,-1 --tau 1 --dt 1e-3 --state plus --seed -2", "seed"),
        ],
    )
    def test_invalid_values(self, argv, field):
        with pytest.raises(InvalidValue) as err:
            parse_config(argv.split())
        assert err.value.field == field

    def test_weak_regime_warning(self):
        with pytest.warns(WeakRegimeWarning):
            parse_config("simulate --lambda 1,-1 --tau 1 --dt 0.5 --state plus".split())

    def test_uniform_preset(self):
        cfg = parse_config("ensemble --lambda 0,1,2 --tau 1 --dt 1e-3 --state uniform".split())
        assert cfg.n == 3
        assert cfg.initial().populations == pytest.approx([1 / 3] * 3)

    def test_flags_override_file(self, tmp_path):
        f = tmp_path / "c.json"
        f.write_text(json.dumps({"mode": "simulate", "seed": 3, "tau": 0.5, "dt": 1e-3, "eigenvalues": [1, -1], "state": "plus"}))
        cfg = parse_config(["simulate", "--config", str(f), "--seed", "9"])
        assert cfg.seed == 9
        assert cfg.tau == 0.5

    def test_unknown_file_key(self, tmp_path):
        f = tmp_path / "c.json"
        f.write_text(json.dumps({"mode": "simulate", "colour": "red"}))
        with pytest.raises(UnknownFlag):
            parse_config(["simulate", "--config", str(f)])


class TestMain:
    base = ["--lambda", "1,-1", "--tau", "0.2", "--dt", "1e-3", "--state", "born", "--seed", "5"]

    def test_simulate_and_rerun_from_header(self, tmp_path, capsys):
        a = tmp_path / "a.jsonl"
        assert main(["simulate", *self.base, "--out", str(a)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["out"] == str(a)
        b = tmp_path / "b.jsonl"
        assert main(["simulate", "--config", str(a), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_ensemble_outputs(self, tmp_path, capsys):
        out = tmp_path / "e.csv"
        assert main(["ensemble", *self.base, "--runs", "20", "--out", str(out)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert sum(summary["frequencies"]) == pytest.approx(1.0)
        assert (tmp_path / "e.summary.json").exists()

    def test_config_error_exit_2(self, capsys):
        assert main(["simulate", "--tau", "1", "--dt", "1e-3", "--state", "plus"]) == 2
        assert "lambda" in capsys.readouterr().err
        assert main(["simulate", "--nope"]) == 2

    def test_numeric_error_exit_3(self, tmp_path, capsys):
        out = tmp_path / "m.jsonl"
        assert main(["mpp", "--xi", "0", "--zi", "1", "--zf", "0.5", "--out", str(out)]) == 3
        assert "DegenerateEndpoint" in capsys.readouterr().err

    def test_warning_on_stderr(self, tmp_path, capsys):
        out = tmp_path / "w.jsonl"
        argv = ["simulate", "--lambda", "1,-1", "--tau", "1", "--dt", "0.5", "--state", "plus", "--tmax", "2"]
        assert main([*argv, "--out", str(out)]) == 0
        err = capsys.readouterr().err
        assert err.count("WeakRegimeWarning") == 1

    @pytest.mark.parametrize(
        "argv",
        [
            ["mpp", "--samples", "11", "--rk4-dt", "1e-3"],
            ["freeze", "--lambda", "1,-1", "--tau", "1", "--dt", "1e-3", "--state", "plus", "--steps", "100", "--readout", "1"],
            ["kernel", "--state", "0.6,0.8"],
            ["dualaxis", "--lambda", "1,-1", "--tau", "1", "--dt", "1e-2", "--state", "zero", "--tau-x", "1", "--tmax", "0.5"],
            ["oscillator", "--tau", "1", "--dt", "1e-2", "--tmax", "0.2", "--points", "128"],
            ["reconstruct", "--lambda", "1,-1", "--tau", "1", "--dt", "1e-3", "--state", "plus", "--tmax", "0.05"],
        ],
    )
    def test_other_modes_run(self, argv, tmp_path, capsys):
        assert main([*argv, "--out", str(tmp_path / "o.jsonl")]) == 0
        assert json.loads(capsys.readouterr().out)

    def test_reconstruct_from_file(self, tmp_path, capsys):
        src = tmp_path / "src.jsonl"
        assert main(["simulate", *self.base, "--tmax", "0.05", "--out", str(src)]) == 0
        dst = tmp_path / "dst.jsonl"
        assert main(["reconstruct", "--input", str(src), "--out", str(dst)]) == 0
        back = cio.read_trajectory(dst)
        assert back.dH is not None and len(back.dH) == back.header["n_samples"]


def test_module_entry_point(tmp_path):
    out = tmp_path / "p.jsonl"
    argv = ["simulate", "--lambda", "1,-1", "--tau", "0.2", "--dt", "1e-3", "--state", "plus", "--tmax", "0.05"]
    res = subprocess.run([sys.executable, "-m", "collapse_lab", *argv, "--out", str(out)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert json.loads(res.stdout)["out"] == str(out)
    assert out.exists()
