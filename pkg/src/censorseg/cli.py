"""Command line entry point: ``censorseg <verb> --config PATH [...]``.

Exit codes: 0 success, 1 config error, 2 runtime or divergence error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import plotting, runner
from .segnet import TrainingDiverged
from .storage import save_dataset

log = logging.getLogger("censorseg")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _cell(cfg, index):
    if not 0 <= index < len(cfg.losses):
        raise runner.ConfigError(f"cell index {index} outside loss grid of size {len(cfg.losses)}")
    return cfg.losses[index]


def cmd_generate(cfg, args):
    path = save_dataset(runner.build_dataset(cfg), Path(cfg.out) / "dataset")
    print(path)


def cmd_censor(cfg, args):
    plan = runner.build_plan(cfg, runner.build_dataset(cfg))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "censor_plan.json").write_text(plan.to_json())
    print(out / "censor_plan.json")


def _cell_dir(cfg, plan, loss):
    return Path(cfg.out) / "cells" / runner.cell_name(plan.mode, plan.p, loss)


def cmd_train(cfg, args):
    ds = runner.build_dataset(cfg)
    plan = runner.build_plan(cfg, ds)
    loss = _cell(cfg, args.cell)
    res = runner.run_cell(cfg, ds, plan, loss, _cell_dir(cfg, plan, loss), force=args.force)
    print(json.dumps({"cell": loss.label, "map": res.map, "max_sensitivity": res.max_sensitivity}))


def cmd_evaluate(cfg, args):
    ds = runner.build_dataset(cfg)
    plan = runner.build_plan(cfg, ds)
    loss = _cell(cfg, args.cell)
    cell_dir = _cell_dir(cfg, plan, loss)
    if not (cell_dir / "checkpoint" / "manifest.json").exists():
        raise runner.ConfigError(f"no checkpoint under {cell_dir}; run `train` first")
    res = runner.evaluate_cell(cfg, ds, plan, loss, cell_dir)
    print(json.dumps({"cell": loss.label, "map": res.map, "map_ci95": list(res.map_ci95),
                      "max_sensitivity": res.max_sensitivity, "tp_dice": res.tp_dice_mean}))


def cmd_experiment(cfg, args):
    runner.run_experiment(cfg, force=args.force)
    print(Path(cfg.out) / "summary.csv")


def cmd_sweep(cfg, args):
    try:
        counts = [int(c) for c in args.counts.split(",")]
    except ValueError as exc:
        raise runner.ConfigError(f"bad --counts {args.counts!r}") from exc
    modes = args.modes.split(",") if args.modes else None
    runner.run_size_sweep(cfg, counts, modes=modes, force=args.force)
    print(Path(cfg.out) / "sweep_summary.csv")


def cmd_plot(cfg, args):
    src = Path(args.results) if args.results else Path(cfg.out)
    written = []
    for name, res in runner.collect_results(src):
        written += plotting.emit_plots([(name, res)], Path(cfg.out) / "plots")
    for p in written:
        print(p)


COMMANDS = {
    "generate": (cmd_generate, "write the phantom dataset as raw rasters + JSON sidecars"),
    "censor": (cmd_censor, "emit the censoring plan for the train/val splits"),
    "train": (cmd_train, "train (and evaluate) one grid cell"),
    "evaluate": (cmd_evaluate, "re-evaluate a trained cell's checkpoint on the test split"),
    "experiment": (cmd_experiment, "run the full loss grid"),
    "sweep": (cmd_sweep, "repeat the grid on subsampled training cohorts"),
    "plot": (cmd_plot, "render SVG figures for stored results"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config JSON")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--out", default=None, help="override the output directory")
    common.add_argument("--force", action="store_true", help="recompute cells that already have results")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (1 keeps runs bit-reproducible)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="censorseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("train", "evaluate"):
            p.add_argument("--cell", type=int, default=0, help="index into the config's loss grid")
        if name == "sweep":
            p.add_argument("--counts", required=True, help="comma-separated training cohort sizes")
            p.add_argument("--modes", default=None, help="comma-separated censor modes (default: config's)")
        if name == "plot":
            p.add_argument("--results", default=None, help="directory searched for result.json files")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = runner.load_config(args.config, seed=args.seed, out=args.out)
        with threadpool_limits(limits=max(1, args.threads)):
            COMMANDS[args.command][0](cfg, args)
    except runner.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
