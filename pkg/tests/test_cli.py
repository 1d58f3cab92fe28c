import csv
import json

import pytest

from vttqs import cli
from vttqs.data import load_annotations
from vttqs.grading import Grade


def write_config(tmp_path, name="run.json", **doc):
    doc.setdefault("output_dir", str(tmp_path / "out"))
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


SMALL = {"data": {"n_images": 40}, "training": {"epochs": 1, "hidden": [8]}}


def test_generate_default_dataset(tmp_path):
    conf = write_config(tmp_path, output_dir=str(tmp_path / "new" / "dir"))
    assert cli.main(["generate", "--config", str(conf)]) == 0
    images = load_annotations(tmp_path / "new" / "dir" / "annotations.csv")
    counts = [sum(i.grade is g for i in images) for g in Grade]
    assert len(images) == 200 and all(abs(c - w) <= 1 for c, w in zip(counts, (88, 12, 100)))
    split = json.loads((tmp_path / "new" / "dir" / "split.json").read_text())
    assert [len(split[k]) for k in ("train", "validation", "test")] == [120, 20, 60]


def test_generate_refuses_overwrite_and_is_deterministic(tmp_path):
    conf = write_config(tmp_path)
    assert cli.main(["generate", "--config", str(conf), "--seed-override", "7"]) == 0
    first = (tmp_path / "out" / "annotations.csv").read_bytes()
    assert cli.main(["generate", "--config", str(conf), "--seed-override", "7"]) == cli.EXIT_CONFIG
    assert cli.main(["generate", "--config", str(conf), "--seed-override", "7", "--force"]) == 0
    assert (tmp_path / "out" / "annotations.csv").read_bytes() == first
    assert cli.main(["generate", "--config", str(conf), "--seed-override", "8", "--force"]) == 0
    assert (tmp_path / "out" / "annotations.csv").read_bytes() != first


def test_config_errors_name_the_json_path(tmp_path, capsys):
    conf = write_config(tmp_path, training={"epochs": 0, "shceme": "q"})
    assert cli.main(["train", "--config", str(conf)]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "training.epochs" in err and "training.shceme" in err
    conf = write_config(tmp_path, data={"annotations": str(tmp_path / "missing.csv")})
    assert cli.main(["generate", "--config", str(conf)]) == cli.EXIT_CONFIG
    assert "data.annotations" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["generate", "--config", str(bad)]) == cli.EXIT_CONFIG


def test_config_rejects_inconsistent_values():
    from pydantic import ValidationError

    with pytest.raises(ValidationError):
        cli.RunConfig.model_validate({"data": {"split": {"train": 0.9, "validation": 0.2, "test": 0.1}}})
    with pytest.raises(ValidationError):
        cli.RunConfig.model_validate({"responders": [{"name": "a", "kind": "random"}, {"name": "a", "kind": "random"}]})
    with pytest.raises(ValidationError):
        cli.RunConfig.model_validate({"mode": "simple"})


def test_substreams_are_distinct_and_stable():
    a, b = cli.RunConfig(seed=3), cli.RunConfig(seed=3)
    names = ["data", "split", "train", "eval"]
    assert len({a.substream(n) for n in names}) == 4
    assert [a.substream(n) for n in names] == [b.substream(n) for n in names]


def test_evaluate_without_checkpoint_is_data_error(tmp_path):
    conf = write_config(tmp_path, **SMALL)
    assert cli.main(["evaluate", "--config", str(conf)]) == cli.EXIT_DATA


def test_corrupt_annotations_are_data_error(tmp_path, capsys):
    ann = tmp_path / "ann.csv"
    ann.write_text("image_id,ex_q1\nx,1\n")
    conf = write_config(tmp_path, data={"annotations": str(ann)})
    assert cli.main(["generate", "--config", str(conf)]) == cli.EXIT_DATA
    assert "row" in capsys.readouterr().err


def test_train_evaluate_separate_pipeline(tmp_path, caplog):
    conf = write_config(
        tmp_path,
        **SMALL,
        responders=[
            {"name": "gt", "kind": "groundtruth"},
            {"name": "rand70", "kind": "random", "accuracy": 0.7, "seed": 17},
        ],
        evaluation={"qs": ["random", "textbook", "dt-tb", "rl"], "grid_points": 256},
    )
    assert cli.main(["train", "--config", str(conf)]) == 0
    assert "burn-in" in caplog.text
    out = tmp_path / "out"
    ckpt = json.loads((out / "checkpoint_q.json").read_text())
    assert ckpt["meta"]["best_epoch"] == 1 and ckpt["sizes"] == [15, 8, 15]
    log_rows = list(csv.reader(open(out / "training_log_q.csv")))
    assert log_rows[0] == ["epoch", "epsilon", "validation_reward"] and len(log_rows) == 2

    assert cli.main(["evaluate", "--config", str(conf)]) == 0
    rows = list(csv.reader(open(out / "rewards.csv")))
    assert rows[0] == ["qs", "mue", "grade0", "grade1", "grade2", "total"]
    assert len(rows) == 1 + 4 * 2
    assert (out / "rewards_textbook_gt.csv").exists()

    assert cli.main(["separate", "--config", str(conf)]) == 0
    rep = json.loads((out / "separation.json").read_text())
    assert rep["n_u"] > 0 and set(rep["strategies"]) == {"random", "textbook", "dt-tb", "rl"}


def test_mc_scheme_and_repetitions(tmp_path):
    conf = write_config(tmp_path, data={"n_images": 40}, training={"scheme": "mc", "epochs": 1, "hidden": [8], "repetitions": 2})
    assert cli.main(["train", "--config", str(conf)]) == 0
    out = tmp_path / "out"
    assert (out / "checkpoint_mc.json").exists() and (out / "checkpoint_mc_rep1.json").exists()


def test_single_responder_radius_is_zero(tmp_path):
    conf = write_config(tmp_path, data={"n_images": 40}, evaluation={"qs": ["random", "textbook"], "grid_points": 256})
    assert cli.main(["separate", "--config", str(conf)]) == 0
    rep = json.loads((tmp_path / "out" / "separation.json").read_text())
    assert all(s["information_radius"] == 0.0 for s in rep["strategies"].values())


def test_export_tree(tmp_path):
    conf = write_config(tmp_path)
    assert cli.main(["export-tree", "--config", str(conf)]) == 0
    dot = (tmp_path / "out" / "tree_textbook.dot").read_text()
    assert 'n0 [shape=box, label="EX\\nwhole image"]' in dot
    assert cli.main(["export-tree", "--config", str(conf), "--depth", "1", "--force"]) == 0
    shallow = (tmp_path / "out" / "tree_textbook.dot").read_text()
    assert shallow.count("->") == 2
    assert cli.main(["export-tree", "--config", str(conf), "--depth", "0", "--force"]) == cli.EXIT_DATA
