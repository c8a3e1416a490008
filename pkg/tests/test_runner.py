import csv
import json

import pytest

from censorseg import cli, runner
from censorseg.losses import LossSpec
from censorseg.phantom import derive_seed

TINY = {
    "seed": 3,
    "phantom": {"dims": [20, 20, 8], "radius_mm": [1.0, 2.5], "lesions_per_case": [2, 4]},
    "splits": {"train": 3, "val": 1, "test": 2},
    "test_bands": [[2, 2], [3, 3], [4, 4]],
    "censor": {"mode": "stochastic", "p": 0.5},
    "losses": [{"kind": "class_weighted", "alpha": 3, "beta": 0},
               {"kind": "lopsided_bootstrap", "alpha": 3, "beta": 0.1}],
    "model": {"layers": [[4, 3], [2, 1]]},
    "train": {"epochs": 2, "batch_size": 8},
}


def tiny_cfg(out, **overrides):
    return runner.config_from_dict({**TINY, **overrides}, out=str(out))


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    cfg = tiny_cfg(out)
    results = runner.run_experiment(cfg)
    return cfg, out, results


def test_seed_derivation():
    cfg = runner.config_from_dict(TINY)
    assert cfg.phantom.seed == derive_seed(3, 0)
    assert cfg.censor["seed"] == derive_seed(3, 1)
    assert cfg.train.seed == derive_seed(3, 2)
    pinned = runner.config_from_dict({**TINY, "censor": {"mode": "size_based", "p": 0.3, "seed": 99}})
    assert pinned.censor["seed"] == 99
    assert runner.config_from_dict(TINY, seed=4).phantom.seed == derive_seed(4, 0)


def test_default_grid():
    cfg = runner.config_from_dict({k: v for k, v in TINY.items() if k != "losses"})
    assert cfg.losses == runner.default_grid()
    assert len(runner.default_grid()) == 6 and len(runner.default_grid(include_alpha30=True)) == 9


@pytest.mark.parametrize("patch", [
    {"schema": "other/2"},
    {"censor": {"mode": "random"}},
    {"censor": {"p": 1.5}},
    {"losses": []},
    {"losses": [{"kind": "focal"}]},
    {"splits": {"train": -1}},
    {"detect": {"connectivity": 8}},
    {"phantom": {"dims": [0, 4, 4]}},
    {"model": {"channels_per_slice": 2}},
    {"train": {"epochs": 0}},
])
def test_config_errors(patch):
    with pytest.raises(runner.ConfigError):
        runner.config_from_dict({**TINY, **patch})


def test_config_round_trips_through_to_dict():
    cfg = runner.config_from_dict(TINY, out="x")
    again = runner.config_from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()


def test_cells_written(finished):
    cfg, out, results = finished
    assert len(results) == 2
    for loss in cfg.losses:
        cell = out / "cells" / runner.cell_name("stochastic", 0.5, loss)
        for f in ("plan.json", "matches.json", "pr.csv", "strata.csv", "result.json", "checkpoint/manifest.json"):
            assert (cell / f).exists(), f
        assert len(list(cell.glob("*.svg"))) == 3
        res = json.loads((cell / "result.json").read_text())
        assert res["config"]["loss"] == loss.to_dict()
        assert set(res["config"]["decisions"]) >= set(runner.DECISIONS)
        assert 0.0 <= res["map_ci95"][0] <= res["map"] <= res["map_ci95"][1] <= 1.0
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert [r["loss"] for r in rows] == ["class_weighted", "lopsided_bootstrap"]


def test_test_split_is_never_censored(finished):
    cfg, out, _ = finished
    ds = runner.build_dataset(cfg)
    plan = runner.build_plan(cfg, ds)
    test_ids = {c.id for c in ds.test}
    assert not any(cid in test_ids for cid, _ in plan.removed)
    res = json.loads((out / "cells" / runner.cell_name("stochastic", 0.5, cfg.losses[0]) / "result.json").read_text())
    assert res["counts"]["n_gt"] == sum(len(c.lesions) for c in ds.test)


def test_histograms_cover_every_test_voxel(finished):
    cfg, out, results = finished
    ds = runner.build_dataset(cfg)
    n_lesion = sum(int(c.mask().sum()) for c in ds.test)
    n_total = sum(c.mask().size for c in ds.test)
    for r in results:
        assert sum(r.histograms["lesion"]) == n_lesion
        assert sum(r.histograms["normal"]) == n_total - n_lesion


def test_existing_cells_are_not_retrained(finished, monkeypatch):
    cfg, out, results = finished
    monkeypatch.setattr(runner, "train", lambda *a, **k: pytest.fail("retrained without force"))
    again = runner.run_experiment(cfg, plots=False)
    assert [r.to_dict() for r in again] == [r.to_dict() for r in results]


def test_forced_rerun_is_byte_identical(finished):
    cfg, out, _ = finished
    cell = out / "cells" / runner.cell_name("stochastic", 0.5, cfg.losses[1])
    before = (cell / "result.json").read_bytes()
    ds = runner.build_dataset(cfg)
    runner.run_cell(cfg, ds, runner.build_plan(cfg, ds), cfg.losses[1], cell, force=True)
    assert (cell / "result.json").read_bytes() == before


def test_evaluate_cell_matches_training_run(finished):
    cfg, out, _ = finished
    cell = out / "cells" / runner.cell_name("stochastic", 0.5, cfg.losses[0])
    before = (cell / "result.json").read_bytes()
    ds = runner.build_dataset(cfg)
    runner.evaluate_cell(cfg, ds, runner.build_plan(cfg, ds), cfg.losses[0], cell)
    assert (cell / "result.json").read_bytes() == before


def test_sweep_rejects_oversized_cohort(tmp_path):
    with pytest.raises(runner.ConfigError):
        runner.run_size_sweep(tiny_cfg(tmp_path), [4])


def test_sweep_cells(tmp_path):
    cfg = tiny_cfg(tmp_path, losses=[{"kind": "class_weighted", "alpha": 3}], train={"epochs": 1})
    rows = runner.run_size_sweep(cfg, [2, 3], modes=["stochastic", "size_based"], plots=False)
    assert [(r["train_count"], r["mode"]) for r in rows] == [
        (2, "stochastic"), (2, "size_based"), (3, "stochastic"), (3, "size_based")]
    assert (tmp_path / "cells" / runner.cell_name("size_based", 0.5, LossSpec("class_weighted", 3.0), 2)).exists()
    assert len(list(csv.DictReader(open(tmp_path / "sweep_summary.csv")))) == 4


# -- CLI ------------------------------------------------------------------

def write_config(path, **overrides):
    path.write_text(json.dumps({**TINY, **overrides}))
    return str(path)


def test_cli_exit_codes(tmp_path, capsys):
    good = write_config(tmp_path / "good.json")
    bad = write_config(tmp_path / "bad.json", censor={"mode": "nope"})
    assert cli.main(["censor", "--config", good, "--out", str(tmp_path / "o")]) == 0
    plan = json.loads((tmp_path / "o" / "censor_plan.json").read_text())
    assert plan["mode"] == "stochastic"
    assert cli.main(["experiment", "--config", bad, "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["experiment", "--config", str(tmp_path / "missing.json")]) == 1
    assert cli.main(["train", "--config", good, "--out", str(tmp_path / "o"), "--cell", "7"]) == 1
    assert cli.main(["evaluate", "--config", good, "--out", str(tmp_path / "o")]) == 1
    diverge = write_config(tmp_path / "div.json", train={"epochs": 1, "lr": 1e200, "momentum": 0})
    with pytest.warns(RuntimeWarning):
        assert cli.main(["train", "--config", diverge, "--out", str(tmp_path / "d")]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_generate_train_evaluate_plot(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", losses=[{"kind": "ce"}], train={"epochs": 1})
    out = str(tmp_path / "run")
    assert cli.main(["generate", "--config", cfg, "--out", out]) == 0
    assert (tmp_path / "run" / "dataset" / "dataset.json").exists()
    assert cli.main(["train", "--config", cfg, "--out", out, "--cell", "0"]) == 0
    assert cli.main(["evaluate", "--config", cfg, "--out", out, "--cell", "0"]) == 0
    capsys.readouterr()
    assert cli.main(["plot", "--config", cfg, "--out", out]) == 0
    printed = capsys.readouterr().out.split()
    assert len(printed) == 3 and all(p.endswith(".svg") for p in printed)
