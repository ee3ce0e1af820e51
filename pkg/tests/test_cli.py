import os
from pathlib import Path

import numpy as np
import pytest

from koopflow.cli import main
from koopflow.config import (ExperimentConfig, build_field, load_config,
                             resolve_runtime, write_effective_config)
from koopflow.errors import ConfigError
from koopflow.experiment import (collect_metric_rows, extract_fields,
                                 format_table, run_experiment)

FIXTURES = Path(__file__).parent / "fixtures"


def write_config(path, **overrides):
    """Small vortex-test experiment that runs in well under a second."""
    base = {
        "experiment": {"trials": 1, "n_total": 2, "base_seed": 7,
                       "output_dir": str(path.parent / "results")},
        "flow": {"kind": "vortex-test"},
        "estimator": {"kind": "enkode", "nu": 0, "members": 2,
                      "epochs_per_update": 20},
        "sampler": {"kind": "active"},
        "grid": {"nx": 12, "ny": 12},
        "output": {},
    }
    for section, kv in overrides.items():
        base.setdefault(section, {}).update(kv)
    lines = []
    for section, kv in base.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in kv.items())
        lines.append("")
    path.write_text("\n".join(lines))
    return path


class TestConfigParsing:
    def test_defaults_round_trip(self, tmp_path):
        cfg = load_config(write_config(tmp_path / "exp.ini"))
        assert cfg.trials == 1
        assert cfg.n_total == 2
        assert cfg.flow_kind == "vortex-test"
        assert cfg.nu == 0
        assert cfg.record_timing is False

    def test_unknown_key_rejected(self, tmp_path):
        p = write_config(tmp_path / "exp.ini", experiment={"typo_key": 3})
        with pytest.raises(ConfigError):
            load_config(p)

    def test_unknown_section_rejected(self, tmp_path):
        p = write_config(tmp_path / "exp.ini")
        p.write_text(p.read_text() + "\n[mystery]\nx = 1\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_missing_flow_file_rejected(self, tmp_path):
        p = write_config(tmp_path / "exp.ini",
                         flow={"kind": "gridded", "path": "/nonexistent.csv"})
        with pytest.raises(ConfigError):
            load_config(p)

    def test_gridded_colon_shorthand(self, tmp_path):
        data = tmp_path / "f.csv"
        data.write_text("x,y,u,v\n0,0,1,0\n1,0,1,0\n0,1,1,0\n1,1,1,0\n")
        p = write_config(tmp_path / "exp.ini", flow={"kind": f"gridded:{data}"})
        cfg = load_config(p)
        assert cfg.flow_kind == "gridded"
        assert cfg.flow_path == str(data)

    def test_uniform_requires_square_budget(self, tmp_path):
        p = write_config(tmp_path / "exp.ini",
                         experiment={"n_total": 10}, sampler={"kind": "uniform"})
        with pytest.raises(ConfigError):
            load_config(p)

    def test_nonexistent_config(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.ini")


class TestRun:
    def test_single_iteration_single_row(self, tmp_path):
        cfg = load_config(write_config(tmp_path / "exp.ini",
                                       experiment={"n_total": 1, "trials": 1}))
        summary = run_experiment(cfg)
        assert summary.ok
        lines = (summary.out_dir / "metrics.csv").read_text().splitlines()
        assert lines[0] == "trial,seed,method,sampler,N,cs,me,epe,wall_ms"
        assert len(lines) == 2

    def test_row_count_arithmetic(self, tmp_path):
        cfg = load_config(write_config(tmp_path / "exp.ini",
                                       experiment={"trials": 3, "n_total": 4}))
        summary = run_experiment(cfg)
        lines = (summary.out_dir / "metrics.csv").read_text().splitlines()
        assert len(lines) == 1 + 3 * 4

    def test_rerun_byte_identical(self, tmp_path):
        p = write_config(tmp_path / "exp.ini", experiment={"trials": 2, "n_total": 3})
        cfg = load_config(p)
        first = run_experiment(cfg, out_dir=tmp_path / "run1")
        second = run_experiment(cfg, out_dir=tmp_path / "run2")
        a = (first.out_dir / "metrics.csv").read_bytes()
        b = (second.out_dir / "metrics.csv").read_bytes()
        assert a == b

    def test_wall_ms_zero_by_default(self, tmp_path):
        cfg = load_config(write_config(tmp_path / "exp.ini"))
        summary = run_experiment(cfg)
        rows = (summary.out_dir / "metrics.csv").read_text().splitlines()[1:]
        assert all(row.rsplit(",", 1)[1] == "0" for row in rows)

    def test_wall_ms_recorded_when_enabled(self, tmp_path):
        cfg = load_config(write_config(tmp_path / "exp.ini",
                                       output={"record_timing": "true"}))
        summary = run_experiment(cfg)
        rows = (summary.out_dir / "metrics.csv").read_text().splitlines()[1:]
        assert any(float(row.rsplit(",", 1)[1]) > 0 for row in rows)

    def test_effective_config_reproduces_run(self, tmp_path):
        cfg = load_config(write_config(tmp_path / "exp.ini",
                                       experiment={"trials": 1, "n_total": 3}))
        first = run_experiment(cfg, out_dir=tmp_path / "run1")
        eff = load_config(first.out_dir / "effective_config.ini")
        second = run_experiment(eff, out_dir=tmp_path / "run2")
        assert (first.out_dir / "metrics.csv").read_bytes() == \
            (second.out_dir / "metrics.csv").read_bytes()

    def test_per_trial_logs_written(self, tmp_path):
        cfg = load_config(write_config(tmp_path / "exp.ini",
                                       experiment={"trials": 2, "n_total": 2}))
        summary = run_experiment(cfg)
        logs = sorted((summary.out_dir / "logs").glob("trial*.log"))
        assert len(logs) == 2
        assert "status=completed" in logs[0].read_text()

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("KOOPFLOW_OUTPUT_ROOT", str(tmp_path / "root"))
        p = write_config(tmp_path / "exp.ini",
                         experiment={"output_dir": "nested/results"})
        summary = run_experiment(load_config(p))
        assert summary.out_dir == tmp_path / "root" / "nested" / "results"
        assert (summary.out_dir / "metrics.csv").exists()

    def test_artifacts_reparse(self, tmp_path):
        cfg = load_config(write_config(tmp_path / "exp.ini",
                                       experiment={"trials": 2, "n_total": 3}))
        summary = run_experiment(cfg)
        rows = collect_metric_rows(summary.out_dir)
        assert len(rows) == 6
        assert {r["N"] for r in rows} == {1, 2, 3}


class TestTable:
    def synth_metrics(self, path, method, sampler, values):
        lines = ["trial,seed,method,sampler,N,cs,me,epe,wall_ms"]
        for trial, per_n in enumerate(values):
            for n, cs in per_n.items():
                lines.append(f"{trial},{trial},{method},{sampler},{n},{cs},0.1,0.2,0")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")

    def test_two_methods_two_columns(self, tmp_path):
        self.synth_metrics(tmp_path / "a" / "metrics.csv", "enkode", "active",
                           [{9: 0.4, 36: 0.8}])
        self.synth_metrics(tmp_path / "b" / "metrics.csv", "gp-m32", "active",
                           [{9: 0.3, 36: 0.7}])
        table = format_table(collect_metric_rows(tmp_path))
        assert "enkode/active" in table
        assert "gp-m32/active" in table

    def test_cell_is_mean_of_rows(self, tmp_path):
        self.synth_metrics(tmp_path / "metrics.csv", "enkode", "active",
                           [{9: 0.4}, {9: 0.6}])
        table = format_table(collect_metric_rows(tmp_path))
        assert "0.500" in table

    def test_other_ns_ignored_and_missing_absent(self, tmp_path):
        self.synth_metrics(tmp_path / "metrics.csv", "enkode", "active",
                           [{7: 0.123, 9: 0.5}])
        table = format_table(collect_metric_rows(tmp_path))
        assert "0.123" not in table
        assert "absent" in table  # no data at N=16/25/36


class TestFields:
    def test_extracts_four_grids(self, tmp_path):
        cfg = load_config(write_config(tmp_path / "exp.ini",
                                       experiment={"n_total": 1},
                                       output={"dump_fields": "true"}))
        summary = run_experiment(cfg)
        paths = extract_fields(summary.out_dir, iteration=0)
        names = {p.name for p in paths}
        assert names == {"truth.csv", "estimate.csv", "epe.csv", "uncertainty.csv"}
        epe_lines = [l for l in
                     next(p for p in paths if p.name == "epe.csv").read_text().splitlines()[1:]]
        epe_vals = [float(l.split(",")[2]) for l in epe_lines
                    if l.split(",")[2] != "NaN"]
        assert all(v >= 0 for v in epe_vals)

    def test_uncertainty_file_matches_dump(self, tmp_path):
        cfg = load_config(write_config(tmp_path / "exp.ini",
                                       experiment={"n_total": 2},
                                       output={"dump_fields": "true"}))
        summary = run_experiment(cfg)
        paths = extract_fields(summary.out_dir, iteration=1)
        extracted = next(p for p in paths if p.name == "uncertainty.csv")
        dump = summary.out_dir / "dumps" / "trial000" / "n002_uncertainty.csv"
        assert extracted.read_bytes() == dump.read_bytes()

    def test_missing_dump_is_explicit_error(self, tmp_path):
        cfg = load_config(write_config(tmp_path / "exp.ini"))
        summary = run_experiment(cfg)  # dumps off
        with pytest.raises(FileNotFoundError):
            extract_fields(summary.out_dir, iteration=0)


class TestCliEntryPoint:
    def test_run_and_table(self, tmp_path, capsys):
        p = write_config(tmp_path / "exp.ini",
                         experiment={"n_total": 4, "output_dir": str(tmp_path / "res")})
        assert main(["run", str(p)]) == 0
        assert main(["table", str(tmp_path / "res")]) == 0
        out = capsys.readouterr().out
        assert "CS" in out and "ME" in out

    def test_fields_subcommand(self, tmp_path):
        p = write_config(tmp_path / "exp.ini",
                         experiment={"n_total": 1, "output_dir": str(tmp_path / "res")},
                         output={"dump_fields": "true"})
        assert main(["run", str(p)]) == 0
        assert main(["fields", str(tmp_path / "res"), "--iter", "0"]) == 0
        assert main(["fields", str(tmp_path / "res"), "--iter", "5"]) == 1

    def test_ingest_subcommand(self, tmp_path, capsys):
        out_csv = tmp_path / "reexport.csv"
        code = main(["ingest", str(FIXTURES / "ocean_sample.csv"),
                     "--out", str(out_csv)])
        assert code == 0
        assert out_csv.exists()
        assert "lattice" in capsys.readouterr().out

    def test_bad_config_exits_nonzero(self, tmp_path):
        p = tmp_path / "bad.ini"
        p.write_text("[experiment]\ntrials = 0\n")
        assert main(["run", str(p)]) == 2
