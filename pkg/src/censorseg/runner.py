"""Config-driven censor -> train -> evaluate experiments.

A config is a JSON document::

    {
      "schema": "censorseg.experiment/1",
      "seed": 0,
      "out": "runs/example",
      "phantom": {... PhantomSpec fields ...},
      "splits": {"train": 30, "val": 5, "test": 15},
      "test_bands": [[1, 3], [4, 10], [11, 15]],
      "censor": {"mode": "stochastic", "p": 0.5, "seed": null},
      "losses": [{"kind": "lopsided_bootstrap", "alpha": 3, "beta": 0.1}, ...],
      "model": {... ModelConfig fields ...},
      "train": {... TrainConfig fields ...},
      "detect": {"threshold": 0.1, "connectivity": 26, "tol_mm": 1.0, "duplicates_as_fp": false},
      "metrics": {"entropy_bins": 100, "diameter_bins": [0, 2, 4, 6, 10, null]}
    }

Missing sections take defaults.  Seeds left null are derived from the
master seed: phantom = child 0, censor = child 1, train = child 2.
Every grid cell writes ``cells/<name>/result.json`` (with the resolved
config embedded) plus CSVs, per-case matches, the plan and a checkpoint.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import plotting
from .censor import make_plan
from .detect import extract_components, match, tp_dice
from .losses import LossSpec, histogram_entropy, prob_histogram
from .metrics import (
    DEFAULT_DIAMETER_BINS,
    ExperimentResult,
    hanley_mcneil_ci,
    max_sensitivity,
    mean_average_precision,
    pr_curve,
    size_strata,
)
from .phantom import DEFAULT_TEST_BANDS, PhantomError, PhantomSpec, derive_seed, generate_dataset, subsample_split
from .segnet import ModelConfig, TrainConfig, load_checkpoint, predict_volume, save_checkpoint, train

log = logging.getLogger(__name__)

SCHEMA = "censorseg.experiment/1"

DECISIONS = {
    "argmax_tie": "p_lesion == 0.5 -> normal class",
    "bootstrap_weighting": "(1-beta)*CE(y) + beta*CE(argmax) on the bootstrapped voxels",
    "loss_reduction": "weighted sum / voxel count",
    "match_rule": "centroid within tol_mm of nearest GT voxel centre",
    "binarize": "prob >= threshold",
    "pr_integration": "step sum (r_i - r_{i-1}) * p_i, no interpolation",
    "hanley_mcneil_n_neg": "FP count over the full sweep, floored at 1",
    "size_tie_break": "volume asc, then (case_id, lesion_id)",
    "frame_sampling": "every slice of every training case once per epoch, seeded shuffle",
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    phantom: PhantomSpec
    splits: dict = field(default_factory=lambda: {"train": 30, "val": 5, "test": 15})
    test_bands: list = field(default_factory=lambda: [list(b) for b in DEFAULT_TEST_BANDS])
    censor: dict = field(default_factory=lambda: {"mode": "stochastic", "p": 0.5, "seed": None})
    losses: list = field(default_factory=list)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    detect: dict = field(default_factory=lambda: {"threshold": 0.1, "connectivity": 26, "tol_mm": 1.0,
                                                  "duplicates_as_fp": False})
    metrics: dict = field(default_factory=lambda: {"entropy_bins": 100,
                                                   "diameter_bins": list(DEFAULT_DIAMETER_BINS)})
    seed: int = 0
    out: str = "runs/default"

    def to_dict(self):
        bins = [None if math.isinf(b) else b for b in self.metrics["diameter_bins"]]
        return {
            "schema": SCHEMA,
            "seed": self.seed,
            "out": self.out,
            "phantom": self.phantom.to_dict(),
            "splits": dict(self.splits),
            "test_bands": [list(b) for b in self.test_bands],
            "censor": dict(self.censor),
            "losses": [l.to_dict() for l in self.losses],
            "model": asdict(self.model),
            "train": asdict(self.train),
            "detect": dict(self.detect),
            "metrics": {**self.metrics, "diameter_bins": bins},
        }


def default_grid(include_alpha30=False):
    """Class weighting at alpha in {3, 10} plus lopsided bootstrap over beta in {0.5, 0.1}."""
    alphas = (3.0, 10.0, 30.0) if include_alpha30 else (3.0, 10.0)
    grid = [LossSpec("class_weighted", a, 0.0) for a in alphas]
    for b in (0.5, 0.1):
        grid += [LossSpec("lopsided_bootstrap", a, b) for a in alphas]
    return grid


def config_from_dict(d, seed=None, out=None):
    """Validate and resolve a raw config dict.  Raises ConfigError."""
    d = copy.deepcopy(d)
    schema = d.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r}; expected {SCHEMA!r}")
    try:
        master = int(seed if seed is not None else d.get("seed", 0))
        phantom = dict(d.get("phantom", {}))
        if phantom.get("seed") is None:
            phantom["seed"] = derive_seed(master, 0)
        spec = PhantomSpec(**phantom)

        splits = {"train": 30, "val": 5, "test": 15, **d.get("splits", {})}
        if min(splits.values()) < 0 or set(splits) != {"train", "val", "test"}:
            raise ConfigError(f"bad splits {splits}")

        censor = {"mode": "stochastic", "p": 0.5, "seed": None, **d.get("censor", {})}
        if censor["mode"] not in ("none", "stochastic", "size_based"):
            raise ConfigError(f"unknown censor mode {censor['mode']!r}")
        if not 0.0 <= float(censor["p"]) <= 1.0:
            raise ConfigError(f"censor rate must lie in [0, 1], got {censor['p']}")
        if censor["seed"] is None:
            censor["seed"] = derive_seed(master, 1)

        raw_losses = d.get("losses", "default")
        losses = default_grid() if raw_losses == "default" else [LossSpec.from_dict(l) for l in raw_losses]
        if not losses:
            raise ConfigError("loss grid is empty")

        model = ModelConfig(**{"channels_per_slice": spec.channels, **d.get("model", {})})
        if model.channels_per_slice != spec.channels:
            raise ConfigError("model channels_per_slice must equal phantom channels")
        tr = dict(d.get("train", {}))
        if tr.get("seed") is None:
            tr["seed"] = derive_seed(master, 2)
        train_cfg = TrainConfig(**tr)

        detect = {"threshold": 0.1, "connectivity": 26, "tol_mm": 1.0, "duplicates_as_fp": False,
                  **d.get("detect", {})}
        if detect["connectivity"] not in (6, 18, 26) or detect["tol_mm"] <= 0:
            raise ConfigError(f"bad detect settings {detect}")
        metrics = {"entropy_bins": 100, "diameter_bins": list(DEFAULT_DIAMETER_BINS), **d.get("metrics", {})}
        metrics["diameter_bins"] = [math.inf if b is None else float(b) for b in metrics["diameter_bins"]]
        test_bands = [list(map(int, b)) for b in d.get("test_bands", DEFAULT_TEST_BANDS)]
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError, PhantomError) as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(
        phantom=spec, splits=splits, test_bands=test_bands, censor=censor, losses=losses, model=model,
        train=train_cfg, detect=detect, metrics=metrics, seed=master,
        out=str(out if out is not None else d.get("out", "runs/default")),
    )


def load_config(path, seed=None, out=None):
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw, seed=seed, out=out)


# -- pipeline pieces -----------------------------------------------------

def build_dataset(cfg):
    s = cfg.splits
    return generate_dataset(cfg.phantom, s["train"], s["val"], s["test"], test_bands=cfg.test_bands)


def build_plan(cfg, dataset, mode=None):
    """Censoring plan over train + validation only; test stays uncensored."""
    c = cfg.censor
    return make_plan(dataset.train + dataset.val, mode or c["mode"], float(c["p"]), int(c["seed"]))


def evaluate_model(model, cases, cfg):
    """Detection, segmentation and calibration summary over ``cases``.

    Ground truth is always the full, uncensored lesion set.
    """
    det = cfg.detect
    bins = int(cfg.metrics["entropy_bins"])
    results, dices = [], []
    h_lesion = np.zeros(bins, dtype=np.int64)
    h_normal = np.zeros(bins, dtype=np.int64)
    for case in cases:
        prob = predict_volume(model, case)
        comps = extract_components(prob, case.spacing, det["threshold"], det["connectivity"])
        mr = match(comps, case.lesions, case.spacing, det["tol_mm"], case_id=case.id)
        by_id = {l.id: l for l in case.lesions}
        dices += [tp_dice(d.component, by_id[d.lesion_id]) for d in mr.detections if d.is_tp]
        gt = case.mask().astype(bool)
        h_lesion += prob_histogram(prob[gt], bins)
        h_normal += prob_histogram(prob[~gt], bins)
        results.append(mr)

    n_gt = sum(mr.n_gt for mr in results)
    if n_gt == 0:
        raise ValueError("evaluation split has no ground-truth lesions")
    pr = pr_curve(results, det["duplicates_as_fp"])
    ap = mean_average_precision(pr)
    n_neg = max(pr.n_fp, 1)
    lo, hi = hanley_mcneil_ci(ap, n_gt, n_neg)
    gt_by_case = {c.id: c.lesions for c in cases}
    res = ExperimentResult(
        map=ap,
        map_ci95=(lo, hi),
        max_sensitivity=max_sensitivity(results),
        tp_dice_mean=float(np.mean(dices)) if dices else 0.0,
        entropy={"lesion_H": histogram_entropy(h_lesion), "normal_H": histogram_entropy(h_normal)},
        size_strata=[{**s, "hi": None if math.isinf(s["hi"]) else s["hi"]}
                     for s in size_strata(results, gt_by_case, cfg.metrics["diameter_bins"])],
        pr={"thresholds": pr.thresholds, "precision": pr.precision, "recall": pr.recall},
        histograms={"lesion": h_lesion.tolist(), "normal": h_normal.tolist()},
        counts={"n_gt": n_gt, "n_detections": pr.n_tp + pr.n_fp, "n_tp": pr.n_tp, "n_fp": pr.n_fp,
                "n_detected_lesions": sum(mr.n_detected for mr in results), "hm_n_neg": n_neg},
    )
    return res, results


def cell_name(mode, p, loss, train_count=None):
    name = f"{mode}_p{p:g}_{loss.label}"
    return name if train_count is None else f"n{train_count}_{name}"


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)


def write_cell_outputs(cell_dir, result, plan, match_results):
    cell_dir = Path(cell_dir)
    cell_dir.mkdir(parents=True, exist_ok=True)
    (cell_dir / "plan.json").write_text(plan.to_json())
    (cell_dir / "matches.json").write_text(dumps([mr.to_dict() for mr in match_results]))
    with open(cell_dir / "pr.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in zip(result.pr["thresholds"], result.pr["precision"], result.pr["recall"]):
            w.writerow([repr(t), repr(p), repr(r)])
    with open(cell_dir / "strata.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["diameter_lo_mm", "diameter_hi_mm", "n_gt", "n_detected"])
        for s in result.size_strata:
            w.writerow([s["lo"], "inf" if s["hi"] is None else s["hi"], s["n_gt"], s["n_detected"]])
    (cell_dir / "result.json").write_text(dumps(result.to_dict()))


def cell_config(cfg, plan, loss, model=None, extra=None):
    snap = cfg.to_dict()
    snap.pop("losses")
    snap["loss"] = loss.to_dict()
    snap["censor"] = {**snap["censor"], "mode": plan.mode, "n_total": plan.n_total,
                      "n_removed": len(plan.removed), "achieved_rate": plan.achieved_rate}
    snap["decisions"] = {**DECISIONS, "duplicates_as_fp": cfg.detect["duplicates_as_fp"],
                         "lr_schedule": {"gamma": cfg.train.lr_decay_gamma, "every_epochs": cfg.train.lr_decay_every}}
    if model is not None:
        snap["selected_epoch"] = model.selected_epoch
        snap["history"] = model.history
    if extra:
        snap.update(extra)
    return snap


def run_cell(cfg, dataset, plan, loss, cell_dir, force=False, extra=None):
    """Train + evaluate one grid cell, or load it if already on disk."""
    cell_dir = Path(cell_dir)
    result_path = cell_dir / "result.json"
    if result_path.exists() and not force:
        log.info("skip %s (result exists)", cell_dir.name)
        return ExperimentResult.from_dict(json.loads(result_path.read_text()))
    log.info("train %s", cell_dir.name)

    val_map_fn = None
    if cfg.train.selection_metric == "val_map":
        def val_map_fn(net):
            return evaluate_model(net, dataset.val, cfg)[0].map

    model = train(dataset, plan, loss, cfg.model, cfg.train, val_map_fn=val_map_fn)
    save_checkpoint(model, cell_dir / "checkpoint")
    result, matches = evaluate_model(model, dataset.test, cfg)
    result.config = cell_config(cfg, plan, loss, model, extra)
    write_cell_outputs(cell_dir, result, plan, matches)
    return result


def evaluate_cell(cfg, dataset, plan, loss, cell_dir):
    """Re-evaluate a stored checkpoint and rewrite the cell's outputs."""
    model = load_checkpoint(Path(cell_dir) / "checkpoint")
    result, matches = evaluate_model(model, dataset.test, cfg)
    result.config = cell_config(cfg, plan, loss, model)
    write_cell_outputs(cell_dir, result, plan, matches)
    return result


def _plot_cell(cell_dir, result):
    plotting.emit_plots([(Path(cell_dir).name, result.to_dict())], cell_dir)


def run_experiment(cfg, force=False, plots=True, dataset=None):
    """One result per LossSpec in the grid, trained on censored labels."""
    dataset = dataset if dataset is not None else build_dataset(cfg)
    plan = build_plan(cfg, dataset)
    out = Path(cfg.out)
    results = []
    for loss in cfg.losses:
        cell_dir = out / "cells" / cell_name(plan.mode, plan.p, loss)
        res = run_cell(cfg, dataset, plan, loss, cell_dir, force)
        if plots:
            _plot_cell(cell_dir, res)
        results.append(res)
    write_summary(out, results)
    return results


def run_size_sweep(cfg, patient_counts, modes=None, force=False, plots=True, dataset=None):
    """Repeat the experiment on seeded random subsets of the training split."""
    dataset = dataset if dataset is not None else build_dataset(cfg)
    modes = modes or [cfg.censor["mode"]]
    n_avail = len(dataset.train)
    for n in patient_counts:
        if n > n_avail or n < 1:
            raise ConfigError(f"patient count {n} outside [1, {n_avail}]")
    out = Path(cfg.out)
    rows = []
    for n in patient_counts:
        sub = subsample_split(dataset, "train", n, derive_seed(cfg.seed, 1000 + n)) if n < n_avail else dataset
        for mode in modes:
            plan = build_plan(cfg, sub, mode)
            for loss in cfg.losses:
                name = cell_name(plan.mode, plan.p, loss, None if n == n_avail else n)
                cell_dir = out / "cells" / name
                res = run_cell(cfg, sub, plan, loss, cell_dir, force, extra={"train_count": n})
                if plots:
                    _plot_cell(cell_dir, res)
                rows.append({"train_count": n, "mode": mode, "loss": loss.to_dict(), "result": res})
    write_summary(out, [r["result"] for r in rows], name="sweep_summary.csv")
    return rows


def write_summary(out, results, name="summary.csv"):
    """Table-style CSV: one row per cell."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / name, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["censor", "p", "train_count", "loss", "alpha", "beta", "map", "map_lo", "map_hi",
                    "max_sensitivity", "tp_dice", "lesion_H"])
        for r in results:
            c = r.config
            w.writerow([c["censor"]["mode"], c["censor"]["p"], c.get("train_count", c["splits"]["train"]),
                        c["loss"]["kind"], c["loss"]["alpha"], c["loss"]["beta"],
                        f"{r.map:.4f}", f"{r.map_ci95[0]:.4f}", f"{r.map_ci95[1]:.4f}",
                        f"{r.max_sensitivity:.4f}", f"{r.tp_dice_mean:.4f}", f"{r.entropy['lesion_H']:.4f}"])


def collect_results(directory):
    """(cell name, result dict) for every result.json under ``directory``."""
    found = []
    for path in sorted(Path(directory).rglob("result.json")):
        found.append((path.parent.name, json.loads(path.read_text())))
    return found
