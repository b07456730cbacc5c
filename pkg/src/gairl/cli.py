"""Command-line front door: train, eval-imagination, wilcoxon, plot-data,
print-config.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .envs import ENV_KINDS
from .evaluation import wilcoxon_signed_rank
from .imagination import STATE_MODEL_KINDS, Imagination, ImaginationConfig
from .memory import GairlMemory, fill_memory_from_batch, load_transitions
from .runner import run_experiment, write_csv, write_plot_data

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def _build_parser() -> _Parser:
    parser = _Parser(prog="gairl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a seeded experiment")
    train.add_argument("--config", help="YAML/JSON experiment config")
    train.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    train.add_argument("--out", help="output directory (overrides config)")
    train.add_argument("--workers", type=int, help="parallel run count (overrides config)")

    ev = sub.add_parser("eval-imagination",
                        help="train/evaluate an imagination on a dumped memory")
    ev.add_argument("--memory", required=True, help="transition dump file")
    ev.add_argument("--env", required=True, choices=ENV_KINDS)
    ev.add_argument("--model", required=True, choices=STATE_MODEL_KINDS)
    ev.add_argument("--steps", type=int, required=True)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--batch-size", type=int, default=256)
    ev.add_argument("--out", help="directory for the metrics CSV")

    wil = sub.add_parser("wilcoxon", help="paired signed-rank comparison of two CSV columns")
    wil.add_argument("--csv-x", required=True)
    wil.add_argument("--col-x", required=True)
    wil.add_argument("--csv-y", help="defaults to --csv-x")
    wil.add_argument("--col-y", required=True)
    wil.add_argument("--key", help="join rows of the two files on this column")

    plot = sub.add_parser("plot-data", help="aggregate a metric across runs")
    plot.add_argument("--runs", required=True, nargs="+",
                      help="run directories (or one parent of seed_* directories)")
    plot.add_argument("--metric", required=True)
    plot.add_argument("--out", required=True, help="aggregated CSV path")
    plot.add_argument("--fig", help="figure path (default: CSV path with .png)")
    plot.add_argument("--no-fig", action="store_true", help="skip figure rendering")
    plot.add_argument("--grid-points", type=int, default=200)

    pc = sub.add_parser("print-config", help="print the resolved configuration")
    pc.add_argument("--config", help="YAML/JSON experiment config")
    return parser


def _load(config_path) -> ExperimentConfig:
    if config_path is None:
        return ExperimentConfig()
    return load_config(config_path)


def _cmd_train(args) -> int:
    config = _load(args.config)
    seeds = [args.seed] if args.seed is not None else None
    summary = run_experiment(config, out_dir=args.out, seeds=seeds,
                             workers=args.workers)
    print(json.dumps(summary, indent=2))
    failed = [r for r in summary["runs"] if "error" in r]
    return RUNTIME_EXIT if failed else 0


def _cmd_eval_imagination(args) -> int:
    batch = load_transitions(args.memory)
    rng = np.random.default_rng(args.seed)
    mem = GairlMemory(max(2 * len(batch), 2), batch.states.shape[1], rng)
    fill_memory_from_batch(mem, batch)
    action_count = int(batch.actions.max()) + 1
    im_config = ImaginationConfig(state_model_kind=args.model,
                                  batch_size=args.batch_size)
    im = Imagination(im_config, batch.states.shape[1], action_count, rng)
    trace = im.train(mem, args.steps, rng)
    metrics = im.evaluate(mem.test.select(np.arange(len(mem.test))), rng)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = [{"itp_step": m.itp_step, "state_mae": m.state_mae,
                 "reward_precision": "" if m.reward_precision is None else m.reward_precision,
                 "reward_recall": "" if m.reward_recall is None else m.reward_recall,
                 "wasserstein": "" if m.wasserstein_estimate is None else m.wasserstein_estimate}
                for m in trace]
        write_csv(out / "imagination.csv",
                  ["itp_step", "state_mae", "reward_precision", "reward_recall",
                   "wasserstein"], rows)
    print(json.dumps({
        "itp_steps": metrics.itp_step,
        "state_mae": metrics.state_mae,
        "reward_precision": metrics.reward_precision,
        "reward_recall": metrics.reward_recall,
        "wasserstein_estimate": metrics.wasserstein_estimate}, indent=2))
    return 0


def _read_column(path, column, key=None):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ConfigError(f"column {column!r} not found in {path}")
        if key is not None and key not in reader.fieldnames:
            raise ConfigError(f"key column {key!r} not found in {path}")
        values, keys = [], []
        for row in reader:
            if row[column] == "":
                continue
            values.append(float(row[column]))
            keys.append(row[key] if key is not None else None)
    return values, keys


def _cmd_wilcoxon(args) -> int:
    x, kx = _read_column(args.csv_x, args.col_x, args.key)
    y, ky = _read_column(args.csv_y or args.csv_x, args.col_y, args.key)
    if args.key is not None:
        lookup = dict(zip(ky, y))
        paired = [(xv, lookup[k]) for xv, k in zip(x, kx) if k in lookup]
        if not paired:
            raise ConfigError("no rows share a key between the two files")
        x = [p[0] for p in paired]
        y = [p[1] for p in paired]
    elif len(x) != len(y):
        raise ConfigError(f"column lengths differ ({len(x)} vs {len(y)}); "
                          "use --key to join on a shared column")
    result = wilcoxon_signed_rank(x, y)
    print(json.dumps(result.to_dict(), indent=2))
    return 0


def _expand_run_dirs(paths) -> list[Path]:
    dirs = [Path(p) for p in paths]
    if len(dirs) == 1 and dirs[0].is_dir():
        children = sorted(d for d in dirs[0].iterdir()
                          if d.is_dir() and d.name.startswith("seed_"))
        if children:
            return children
    return dirs


def _cmd_plot_data(args) -> int:
    run_dirs = _expand_run_dirs(args.runs)
    fig_path = None
    if not args.no_fig:
        fig_path = args.fig or str(Path(args.out).with_suffix(".png"))
    write_plot_data(run_dirs, args.metric, args.out, fig_path=fig_path,
                    grid_points=args.grid_points)
    return 0


def _cmd_print_config(args) -> int:
    config = _load(args.config)
    print(json.dumps(config.resolved(), indent=2))
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval-imagination": _cmd_eval_imagination,
    "wilcoxon": _cmd_wilcoxon,
    "plot-data": _cmd_plot_data,
    "print-config": _cmd_print_config,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"gairl: config error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except Exception as exc:  # runtime failure
        print(f"gairl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
