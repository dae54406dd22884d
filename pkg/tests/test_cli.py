import csv
import json

import pytest

from maadnet import cli
from maadnet.train import RunReport
from maadnet.train.ablation import COMPONENT_CELLS, WEIGHT_CELLS, grid_cells, run_grid
from maadnet.train import TrainConfig, TrainingData

TINY_TRAIN = {
    "epochs": 1,
    "batch_size": 4,
    "image_size": 32,
    "max_steps_per_epoch": 1,
    "model": {"backbone_channels": [4, 4, 4], "head_hidden": 4, "haad_filters": [4, 4, 4, 1], "laad_filters": [4, 4, 4, 1]},
}
TINY_DATA = {
    "counts": [4, 6],
    "image_size": 32,
    "seed": 3,
    "split_fractions": {"source": [1.0, 0.0, 0.0], "target": [0.5, 0.0, 0.5]},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "data.json").write_text(json.dumps(TINY_DATA))
    (root / "train.json").write_text(json.dumps(TINY_TRAIN))
    assert cli.main(["generate-data", "--config", str(root / "data.json"), "--out", str(root / "ds")]) == 0
    return root


def test_generate_data_writes_manifest(workspace):
    manifest = json.loads((workspace / "ds" / "manifest.json").read_text())
    assert len(manifest["splits"]["train"]) == 4 + 3
    assert len(manifest["splits"]["test"]) == 3


def test_train_then_evaluate(workspace, capsys):
    run = workspace / "run"
    assert cli.main(["train", "--config", str(workspace / "train.json"), "--data", str(workspace / "ds"), "--out", str(run)]) == 0
    for f in ("model.ckpt", "report.json", "report.csv", "timing.json"):
        assert (run / f).is_file()
    report = json.loads((run / "report.json").read_text())
    capsys.readouterr()
    assert cli.main(["evaluate", "--checkpoint", str(run / "model.ckpt"), "--data", str(workspace / "ds"), "--split", "test"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == report["metrics"]


def test_stats_reports_domain_gap(workspace, capsys, tmp_path):
    assert cli.main(["stats", "--data", str(workspace / "ds"), "--out", str(tmp_path / "gap.csv")]) == 0
    out = capsys.readouterr().out
    assert "intensity" in out and "leaves_per_image" in out
    rows = list(csv.DictReader(open(tmp_path / "gap.csv")))
    assert {r["metric"] for r in rows} >= {"intensity", "brightness", "avg_edge_magnitude", "leaves_per_image"}


def test_gradcheck_subcommand(capsys):
    assert cli.main(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "haad_branch" in out and "FAIL" not in out


def test_unknown_flag_exits_1_with_usage(capsys):
    assert cli.main(["train", "--data", "d", "--out", "o", "--bogus"]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--bogus" in err


def test_missing_subcommand_exits_1(capsys):
    assert cli.main([]) == 1
    assert "usage:" in capsys.readouterr().err


def test_unknown_config_key_exits_1(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**TINY_TRAIN, "learning_rate": 1.0}))
    code = cli.main(["train", "--config", str(bad), "--data", str(workspace / "ds"), "--out", str(tmp_path / "r")])
    assert code == 1
    assert "learning_rate" in capsys.readouterr().err


def test_missing_dataset_exits_1(tmp_path, capsys):
    assert cli.main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "r")]) == 1
    assert "error" in capsys.readouterr().err


def test_runtime_failure_exits_2(workspace, tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli.Trainer, "fit", boom)
    code = cli.main(["train", "--config", str(workspace / "train.json"), "--data", str(workspace / "ds"), "--out", str(tmp_path / "r")])
    assert code == 2
    assert "disk on fire" in capsys.readouterr().err


# -- ablation grids -------------------------------------------------------------------------

COMPONENT_TOGGLES = {  # cell: (HAD, LAD, GRL, A)
    "A": (1, 0, 0, 0),
    "B": (1, 0, 1, 0),
    "C": (0, 1, 0, 0),
    "D": (0, 1, 1, 0),
    "E": (1, 1, 1, 0),
    "F": (1, 1, 1, 1),
}


def test_component_grid_toggles():
    base = TrainConfig()
    for cell in COMPONENT_CELLS:
        cfg = cell.apply(base)
        obj = cfg.objective
        assert (obj.enable_had, obj.enable_lad, obj.enable_grl, obj.enable_attention) == tuple(map(bool, COMPONENT_TOGGLES[cell.name]))
        assert cfg.method == "maad"


def test_weight_sweep_cells():
    base = TrainConfig()
    had = [c.apply(base).objective.lambda_had for c in WEIGHT_CELLS if c.had]
    lad = [c.apply(base).objective.lambda_lad for c in WEIGHT_CELLS if c.lad]
    assert had == [1.0, 0.1, 0.01, 0.001]
    assert lad == [0.01, 0.001, 0.0001]
    assert all(c.grl and not c.attention and c.had != c.lad for c in WEIGHT_CELLS)


def test_unknown_grid_rejected():
    with pytest.raises(ValueError, match="unknown grid"):
        grid_cells("everything")


@pytest.mark.parametrize("grid, n", [("components", 6), ("weights", 7)])
def test_run_grid_writes_one_report_per_cell(tmp_path, grid, n):
    seen = []

    def fake_runner(cfg, run_dir):
        seen.append((cfg, run_dir))
        return RunReport(cfg.to_dict(), cfg.seed, metrics={"mAP50_OBB": 1.0})

    path = run_grid(grid, TrainConfig(), None, tmp_path, seeds=(0, 1), runner=fake_runner)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == len(seen) == 2 * n
    assert len({str(d) for _, d in seen}) == 2 * n
    if grid == "components":
        for r in rows:
            assert (int(r["HAD"]), int(r["LAD"]), int(r["GRL"]), int(r["A"])) == COMPONENT_TOGGLES[r["cell"]]


def test_ablate_subcommand_end_to_end(workspace, tmp_path):
    code = cli.main([
        "ablate", "--grid", "components", "--config", str(workspace / "train.json"),
        "--data", str(workspace / "ds"), "--out", str(tmp_path / "abl"),
    ])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "abl" / "comparison.csv")))
    assert [r["cell"] for r in rows] == list("ABCDEF")
    for cell in "ABCDEF":
        assert (tmp_path / "abl" / cell / "seed0" / "report.json").is_file()
