import csv
import json
from pathlib import Path

import numpy as np
import pytest

from gairl.cli import main
from gairl.runner import aggregate_metric, run_experiment, write_csv
from gairl.config import config_from_dict

SMOKE_CONFIG = {
    "variant": "gairl_mlp",
    "environment": {"kind": "mountain_car", "max_episode_steps": 60},
    "schedule": {"rho1": 250, "rho2": 120, "rho3": 150, "max_iterations": 1},
    "agent": {"hidden_layers": [16, 16], "batch_size": 32,
              "buffer_capacity": 512, "epsilon_decay_start": 50,
              "epsilon_decay_steps": 500},
    "imagination": {"state_mlp": {"hidden": [32, 32]},
                    "reward_mlp": {"hidden": [16, 16]},
                    "batch_size": 32, "metric_every": 50},
    "memory": {"capacity": 20000},
    "seeds": [7],
}


def write_smoke_config(tmp_path, **extra) -> Path:
    data = json.loads(json.dumps(SMOKE_CONFIG))
    data.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestTrainCommand:
    def test_end_to_end_artifacts(self, tmp_path, capsys):
        config_path = write_smoke_config(tmp_path)
        out = tmp_path / "runs"
        code = main(["train", "--config", str(config_path), "--out", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["variant"] == "gairl_mlp"
        assert summary["runs"][0]["seed"] == 7
        run_dir = out / "seed_7"
        for name in ["config.json", "episodes.csv", "train_log.csv",
                     "imagination.csv", "report.json", "agent.ckpt",
                     "state_model.ckpt", "reward_model.ckpt"]:
            assert (run_dir / name).exists(), name
        report = json.loads((run_dir / "report.json").read_text())
        assert report["phase_trace"] == ["mfp", "itp", "ibp"]
        snapshot = json.loads((run_dir / "config.json").read_text())
        assert snapshot["seeds"] == [7]

    def test_rerun_is_byte_identical(self, tmp_path):
        config_path = write_smoke_config(tmp_path)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["train", "--config", str(config_path), "--out", str(out_a)]) == 0
        assert main(["train", "--config", str(config_path), "--out", str(out_b)]) == 0
        for name in ["episodes.csv", "train_log.csv", "imagination.csv"]:
            assert (out_a / "seed_7" / name).read_bytes() == \
                (out_b / "seed_7" / name).read_bytes(), name

    def test_seed_flag_overrides_list(self, tmp_path):
        config_path = write_smoke_config(tmp_path)
        out = tmp_path / "runs"
        code = main(["train", "--config", str(config_path), "--out", str(out),
                     "--seed", "99"])
        assert code == 0
        assert (out / "seed_99").exists()
        assert not (out / "seed_7").exists()

    def test_memory_dump_flag(self, tmp_path):
        config_path = write_smoke_config(
            tmp_path, logging={"dump_memory": True, "train_log_every": 10})
        out = tmp_path / "runs"
        assert main(["train", "--config", str(config_path),
                     "--out", str(out)]) == 0
        assert (out / "seed_7" / "memory.bin").exists()

    def test_parallel_workers(self, tmp_path):
        config_path = write_smoke_config(tmp_path, seeds=[1, 2],
                                         variant="baseline")
        out = tmp_path / "runs"
        code = main(["train", "--config", str(config_path), "--out", str(out),
                     "--workers", "2"])
        assert code == 0
        assert (out / "seed_1").exists() and (out / "seed_2").exists()

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("gama: 0.5\n")
        assert main(["train", "--config", str(bad)]) == 1

    def test_usage_error_exit_code(self):
        assert main(["train", "--seed", "not-a-number"]) == 1
        assert main(["no-such-command"]) == 1


class TestEvalImagination:
    def test_trains_from_dump(self, tmp_path, capsys):
        config_path = write_smoke_config(
            tmp_path, logging={"dump_memory": True, "train_log_every": 10})
        out = tmp_path / "runs"
        assert main(["train", "--config", str(config_path), "--out", str(out)]) == 0
        capsys.readouterr()
        dump = out / "seed_7" / "memory.bin"
        code = main(["eval-imagination", "--memory", str(dump),
                     "--env", "mountain_car", "--model", "mlp",
                     "--steps", "60", "--batch-size", "32",
                     "--out", str(tmp_path / "im")])
        assert code == 0
        metrics = json.loads(capsys.readouterr().out)
        assert metrics["itp_steps"] == 60
        assert 0.0 <= metrics["state_mae"] <= 1.0
        assert (tmp_path / "im" / "imagination.csv").exists()

    def test_runtime_error_exit_code(self, tmp_path):
        missing = tmp_path / "nope.bin"
        code = main(["eval-imagination", "--memory", str(missing),
                     "--env", "mountain_car", "--model", "mlp",
                     "--steps", "10"])
        assert code == 2


class TestWilcoxonCommand:
    def test_reads_two_files_joined_on_seed(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        write_csv(a, ["seed", "steps"],
                  [{"seed": s, "steps": v} for s, v in
                   [(1, 10.0), (2, 20.0), (3, 30.0), (4, 40.0), (5, 50.0),
                    (6, 60.0)]])
        write_csv(b, ["seed", "steps"],
                  [{"seed": s, "steps": v} for s, v in
                   [(1, 5.0), (2, 15.0), (3, 25.0), (4, 35.0), (5, 45.0),
                    (6, 70.0)]])
        code = main(["wilcoxon", "--csv-x", str(a), "--col-x", "steps",
                     "--csv-y", str(b), "--col-y", "steps", "--key", "seed"])
        assert code == 0
        result = json.loads(capsys.readouterr().out)
        assert result["n_nonzero"] == 6
        assert result["t_plus"] + result["t_minus"] == 21.0

    def test_single_file_two_columns(self, tmp_path, capsys):
        path = tmp_path / "c.csv"
        write_csv(path, ["x", "y"],
                  [{"x": i + 1.0, "y": i * 1.0} for i in range(6)])
        code = main(["wilcoxon", "--csv-x", str(path), "--col-x", "x",
                     "--col-y", "y"])
        assert code == 0
        result = json.loads(capsys.readouterr().out)
        assert result["t_plus"] == 21.0 and result["t_minus"] == 0.0
        assert result["significant_at_05"] is True

    def test_missing_column_is_config_error(self, tmp_path):
        path = tmp_path / "c.csv"
        write_csv(path, ["x"], [{"x": 1.0}])
        assert main(["wilcoxon", "--csv-x", str(path), "--col-x", "x",
                     "--col-y", "zzz"]) == 1


class TestPlotData:
    def _fake_run(self, base, name, values):
        run = base / name
        run.mkdir(parents=True)
        rows = [{"phase": "mfp", "real_step": i * 10, "global_step": i * 10,
                 "episode": i, "length": 10, "return_raw": v, "mean100": v}
                for i, v in enumerate(values, 1)]
        write_csv(run / "episodes.csv",
                  ["phase", "real_step", "global_step", "episode", "length",
                   "return_raw", "mean100"], rows)
        return run

    def test_two_constant_runs(self, tmp_path, capsys):
        a = self._fake_run(tmp_path, "seed_1", [1.0] * 10)
        b = self._fake_run(tmp_path, "seed_2", [3.0] * 10)
        out = tmp_path / "agg.csv"
        code = main(["plot-data", "--runs", str(a), str(b), "--metric",
                     "mean100", "--out", str(out), "--grid-points", "50"])
        assert code == 0
        rows = read_rows(out)
        assert len(rows) == 50
        assert all(float(r["mean"]) == 2.0 for r in rows)
        assert all(float(r["stddev"]) == 1.0 for r in rows)
        assert (tmp_path / "agg.png").exists()  # figure rendered alongside

    def test_single_run_zero_stddev(self, tmp_path):
        a = self._fake_run(tmp_path, "seed_1", [2.0, 4.0, 6.0])
        out = tmp_path / "agg.csv"
        code = main(["plot-data", "--runs", str(a), "--metric", "mean100",
                     "--out", str(out), "--no-fig"])
        assert code == 0
        rows = read_rows(out)
        assert len(rows) == 200
        assert all(float(r["stddev"]) == 0.0 for r in rows)
        assert not (tmp_path / "agg.png").exists()

    def test_parent_directory_expansion(self, tmp_path):
        self._fake_run(tmp_path / "runs", "seed_1", [1.0] * 5)
        self._fake_run(tmp_path / "runs", "seed_2", [3.0] * 5)
        out = tmp_path / "agg.csv"
        code = main(["plot-data", "--runs", str(tmp_path / "runs"),
                     "--metric", "mean100", "--out", str(out), "--no-fig"])
        assert code == 0
        rows = read_rows(out)
        assert float(rows[0]["mean"]) == 2.0

    def test_unknown_metric_fails(self, tmp_path):
        a = self._fake_run(tmp_path, "seed_1", [1.0] * 5)
        assert main(["plot-data", "--runs", str(a), "--metric", "nope",
                     "--out", str(tmp_path / "agg.csv")]) == 2

    def test_grid_alignment_via_interpolation(self, tmp_path):
        short = self._fake_run(tmp_path, "seed_1", [0.0, 1.0])
        long = self._fake_run(tmp_path, "seed_2", [0.0] * 20)
        grid, mean, std = aggregate_metric([short, long], "mean100",
                                           grid_points=40)
        assert len(grid) == len(mean) == len(std) == 40
        # the short run holds its last value beyond its own range
        assert mean[-1] == pytest.approx(0.5)


class TestPrintConfig:
    def test_prints_resolved_defaults(self, capsys):
        assert main(["print-config"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["agent"]["gamma"] == 0.99
        assert data["schedule"]["rho2"] == 40000
        assert data["imagination"]["state_gan"]["penalty_coeff"] == 10.0

    def test_respects_config_file(self, tmp_path, capsys):
        path = tmp_path / "c.yaml"
        path.write_text("variant: baseline\n")
        assert main(["print-config", "--config", str(path)]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["schedule"]["rho2"] == 0


class TestRunExperimentApi:
    def test_failures_recorded_not_fatal(self, tmp_path, monkeypatch):
        import gairl.runner as runner_mod

        def exploding(config, seed, run_dir):
            if seed == 2:
                raise RuntimeError("boom")
            return real_run(config, seed, run_dir)

        real_run = runner_mod.run_single
        monkeypatch.setattr(runner_mod, "run_single", exploding)
        config = config_from_dict(dict(SMOKE_CONFIG, variant="baseline",
                                       seeds=[7, 2]))
        summary = run_experiment(config, out_dir=tmp_path / "runs")
        by_seed = {r["seed"]: r for r in summary["runs"]}
        assert "error" in by_seed[2]
        assert by_seed[7]["converged"] is False
