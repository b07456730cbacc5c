"""Seeded multi-run experiment execution, artifact writing, and plot-data
aggregation (delimited output plus rendered figures)."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import BASELINE, ExperimentConfig
from .envs import ACTION_COUNTS, STATE_DIMS, EnvConfig, make_env
from .imagination import Imagination
from .memory import GairlMemory, dump_transitions, memory_snapshot
from .orchestrator import GairlRun, RunRecorder, RunReport
from .rainbow import RainbowAgent

EPISODE_COLUMNS = ["phase", "real_step", "global_step", "episode", "length",
                   "return_raw", "mean100"]
TRAIN_COLUMNS = ["global_step", "real_step", "phase", "loss", "epsilon", "mean100"]
IMAGINATION_COLUMNS = ["itp_step", "state_mae", "reward_precision",
                       "reward_recall", "wasserstein"]

# metric name -> (csv file, x column, y column, phase filter)
METRIC_SOURCES = {
    "mean100": ("episodes.csv", "real_step", "mean100", "mfp"),
    "return_raw": ("episodes.csv", "real_step", "return_raw", "mfp"),
    "loss": ("train_log.csv", "global_step", "loss", None),
    "epsilon": ("train_log.csv", "global_step", "epsilon", None),
    "state_mae": ("imagination.csv", "itp_step", "state_mae", None),
    "reward_precision": ("imagination.csv", "itp_step", "reward_precision", None),
    "reward_recall": ("imagination.csv", "itp_step", "reward_recall", None),
    "wasserstein": ("imagination.csv", "itp_step", "wasserstein", None),
}


def derive_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent per-subsystem generators from one master seed."""
    children = np.random.SeedSequence(seed).spawn(5)
    names = ["env", "agent", "memory", "imagination", "rollout"]
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def build_run(config: ExperimentConfig, seed: int,
              recorder: RunRecorder | None = None) -> GairlRun:
    streams = derive_streams(seed)
    env = make_env(EnvConfig(config.environment.kind,
                             config.environment.max_episode_steps))
    state_dim = STATE_DIMS[env.kind]
    action_count = ACTION_COUNTS[env.kind]
    agent = RainbowAgent(config.agent, state_dim, action_count, streams["agent"])
    memory = GairlMemory(config.memory.capacity, state_dim, streams["memory"],
                         train_fraction=config.memory.train_fraction,
                         oversample_terminals=config.memory.oversample_terminals)
    imagination = None
    if config.variant != BASELINE and not config.schedule.baseline:
        imagination = Imagination(config.imagination, state_dim, action_count,
                                  streams["imagination"])
    if recorder is None:
        recorder = RunRecorder(train_log_every=config.logging.train_log_every)
    return GairlRun(
        env=env, agent=agent, memory=memory, imagination=imagination,
        schedule=config.schedule,
        convergence_threshold=config.convergence_threshold(),
        convergence_window=config.convergence.window,
        convergence_min_episodes=config.convergence.min_episodes,
        env_rng=streams["env"], rollout_rng=streams["rollout"],
        imagination_rng=streams["imagination"], recorder=recorder,
        store_transitions=config.memory.store_transitions,
        variant=config.variant, seed=seed)


def write_csv(path, columns: list[str], rows: list[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def run_single(config: ExperimentConfig, seed: int, run_dir) -> RunReport:
    """Execute one seeded run and write its artifacts into run_dir."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    session = build_run(config, seed)
    report = session.run()

    snapshot = config.resolved()
    snapshot["seeds"] = [seed]
    (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2) + "\n")
    rec = session.recorder
    write_csv(run_dir / "episodes.csv", EPISODE_COLUMNS, rec.episodes)
    write_csv(run_dir / "train_log.csv", TRAIN_COLUMNS, rec.train_log)
    write_csv(run_dir / "imagination.csv", IMAGINATION_COLUMNS, rec.imagination_log)
    (run_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    if config.logging.write_checkpoints:
        session.agent.save(run_dir / "agent.ckpt")
        if session.imagination is not None and session.imagination.trained:
            session.imagination.save(run_dir / "state_model.ckpt",
                                     run_dir / "reward_model.ckpt")
    if config.logging.dump_memory and session.memory is not None:
        dump_transitions(run_dir / "memory.bin", memory_snapshot(session.memory))
    return report


def _run_entry(args):
    config, seed, run_dir = args
    return seed, run_single(config, seed, run_dir)


def run_experiment(config: ExperimentConfig, out_dir=None, seeds=None,
                   workers=None) -> dict:
    """Run every configured seed; failures are recorded per run, not fatal.

    Writes summary.json and convergence.csv under the output directory and
    returns the summary dict.
    """
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(seeds) if seeds is not None else list(config.seeds)
    workers = workers if workers is not None else config.workers

    jobs = [(config, seed, out / f"seed_{seed}") for seed in seeds]
    results: dict[int, RunReport | Exception] = {}
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_run_entry, job): job[1] for job in jobs}
            for future, seed in futures.items():
                try:
                    _, report = future.result()
                    results[seed] = report
                except Exception as exc:  # recorded, siblings continue
                    results[seed] = exc
    else:
        for job in jobs:
            try:
                results[job[1]] = _run_entry(job)[1]
            except Exception as exc:
                results[job[1]] = exc

    runs = []
    rows = []
    for seed in seeds:
        res = results[seed]
        if isinstance(res, Exception):
            runs.append({"seed": seed, "error": f"{type(res).__name__}: {res}"})
            continue
        runs.append({"seed": seed, "converged": res.converged,
                     "real_steps_to_convergence": res.real_steps_to_convergence,
                     "final_mean100": res.final_mean100,
                     "total_real_steps": res.total_real_steps,
                     "iterations": res.iterations_completed,
                     "wall_clock_seconds": res.wall_clock_seconds})
        rows.append({"seed": seed, "converged": res.converged,
                     "real_steps_to_convergence":
                         "" if res.real_steps_to_convergence is None
                         else res.real_steps_to_convergence,
                     "final_mean100": "" if res.final_mean100 is None
                         else res.final_mean100})
    summary = {"environment": config.environment.kind, "variant": config.variant,
               "runs": runs}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_csv(out / "convergence.csv",
              ["seed", "converged", "real_steps_to_convergence", "final_mean100"],
              rows)
    return summary


# --- plot data ---------------------------------------------------------------

def _read_metric(run_dir: Path, metric: str):
    if metric not in METRIC_SOURCES:
        raise ValueError(f"unknown metric {metric!r}; choose from "
                         f"{sorted(METRIC_SOURCES)}")
    fname, x_col, y_col, phase = METRIC_SOURCES[metric]
    path = run_dir / fname
    if not path.exists():
        raise ValueError(f"{path} missing for metric {metric!r}")
    xs, ys = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or y_col not in reader.fieldnames:
            raise ValueError(f"metric {metric!r} absent from {path}")
        for row in reader:
            if phase is not None and row.get("phase") != phase:
                continue
            if row[y_col] == "":
                continue
            xs.append(float(row[x_col]))
            ys.append(float(row[y_col]))
    if not xs:
        raise ValueError(f"no rows for metric {metric!r} in {path}")
    return np.asarray(xs), np.asarray(ys)


def aggregate_metric(run_dirs, metric: str, grid_points: int = 200):
    """Align runs on a common step grid; returns (grid, mean, stddev).

    Each run is linearly interpolated onto the grid (held constant beyond
    its own range); stddev is the population standard deviation across runs.
    """
    series = [_read_metric(Path(d), metric) for d in run_dirs]
    lo = min(x.min() for x, _ in series)
    hi = max(x.max() for x, _ in series)
    grid = np.linspace(lo, hi, grid_points)
    values = np.stack([np.interp(grid, x, y) for x, y in series])
    return grid, values.mean(axis=0), values.std(axis=0)


def write_plot_data(run_dirs, metric: str, out_csv, fig_path=None,
                    grid_points: int = 200):
    """Emit the aggregated (step, mean, stddev) CSV and, optionally, render
    the mean curve with a +-stddev band to an image file."""
    grid, mean, std = aggregate_metric(run_dirs, metric, grid_points)
    rows = [{"step": s, "mean": m, "stddev": d}
            for s, m, d in zip(grid, mean, std)]
    write_csv(out_csv, ["step", "mean", "stddev"], rows)
    if fig_path is not None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(7, 4.5))
        ax.plot(grid, mean, lw=1.5, label=metric)
        ax.fill_between(grid, mean - std, mean + std, alpha=0.3)
        ax.set_xlabel(METRIC_SOURCES[metric][1].replace("_", " "))
        ax.set_ylabel(metric.replace("_", " "))
        ax.legend(loc="best")
        fig.tight_layout()
        fig.savefig(fig_path, dpi=150)
        plt.close(fig)
    return grid, mean, std
