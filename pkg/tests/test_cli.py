"""Config handling, experiment dispatch, report determinism."""

import json

import pytest

from roughflow.cli import KINDS, ExperimentConfig, main, run


class TestConfig:
    def test_roundtrip_lossless(self, tmp_path):
        cfg = ExperimentConfig(kind="simulate", family="log-singular",
                               family_params={"beta": 1.4}, seed=99,
                               n_omega=4, n_x=8)
        path = tmp_path / "cfg.json"
        cfg.dump(path)
        back = ExperimentConfig.load(path)
        assert back == cfg
        assert back.to_dict() == cfg.to_dict()

    def test_missing_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            ExperimentConfig.from_dict({"family": "linear"})

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            ExperimentConfig.from_dict({"kind": "simulate", "bogus": 1})

    def test_unknown_family_rejected(self):
        cfg = ExperimentConfig(kind="simulate", family="nope")
        with pytest.raises(ValueError, match="unknown family"):
            cfg.validate()

    def test_alpha_constraint_named(self):
        cfg = ExperimentConfig(kind="simulate",
                               measure={"dim": 1, "alpha": 1.2}, q=2.0)
        with pytest.raises(ValueError, match="alpha must exceed q \\+ n/2"):
            cfg.validate()

    def test_measure_without_alpha_rejected(self):
        cfg = ExperimentConfig(kind="simulate", measure={"dim": 1})
        with pytest.raises(ValueError, match="alpha is required"):
            cfg.validate()

    def test_dt_must_divide_t(self):
        cfg = ExperimentConfig(kind="simulate", T=1.0, dt=0.3)
        with pytest.raises(ValueError, match="dt must divide T"):
            cfg.validate()

    def test_all_kinds_known(self):
        for kind in KINDS:
            ExperimentConfig(kind=kind).__class__  # constructible


class TestRun:
    def test_simulate_writes_reports(self, tmp_path):
        cfg = ExperimentConfig(kind="simulate", out=str(tmp_path), seed=5,
                               n_omega=6, n_x=8, dt=2.0**-6, mc_budget=2000)
        status = run(cfg, printer=None)
        assert status == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["all_passed"]
        assert summary["version"]
        assert summary["config"]["seed"] == 5
        assert (tmp_path / "ensemble.csv").exists()

    def test_summary_bytes_deterministic(self, tmp_path):
        outputs = []
        for _ in range(2):
            cfg = ExperimentConfig(kind="density", out=str(tmp_path), seed=11,
                                   n_omega=4, n_x=8, dt=2.0**-6,
                                   mc_budget=1000)
            assert run(cfg, printer=None) == 0
            outputs.append((tmp_path / "summary.json").read_bytes())
        assert outputs[0] == outputs[1]

    def test_budget_scale_keeps_passing(self, tmp_path):
        cfg = ExperimentConfig(kind="density", out=str(tmp_path), seed=3,
                               n_omega=8, n_x=16, dt=2.0**-6, mc_budget=4000)
        assert run(cfg, budget_scale=0.25, printer=None) == 0

    def test_derivative_kind_needs_deriv_family(self, tmp_path):
        cfg = ExperimentConfig(kind="derivative", family="linear",
                               out=str(tmp_path))
        with pytest.raises(ValueError, match="deriv-"):
            run(cfg, printer=None)


class TestMain:
    def test_malformed_config_exits_nonzero(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"kind": "simulate", "measure": {"dim": 1}}')
        assert main(["simulate", "--config", str(bad)]) == 2

    def test_invalid_json_exits_nonzero(self, tmp_path):
        bad = tmp_path / "nojson.json"
        bad.write_text("{")
        assert main(["simulate", "--config", str(bad)]) == 2

    def test_kind_mismatch_exits_nonzero(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        ExperimentConfig(kind="analysis").dump(cfg)
        assert main(["simulate", "--config", str(cfg)]) == 2

    def test_cli_flags_override(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        ExperimentConfig(kind="simulate", seed=1, n_omega=4, n_x=8,
                         dt=2.0**-6, mc_budget=1000).dump(cfg_path)
        out = tmp_path / "run"
        status = main([
            "simulate", "--config", str(cfg_path), "--seed", "42",
            "--out", str(out),
        ])
        assert status == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["config"]["seed"] == 42
