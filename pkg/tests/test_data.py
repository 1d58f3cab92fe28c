import csv
import logging

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vttqs.data import (
    ANNOTATION_COLUMNS,
    DatasetConfig,
    SplitSpec,
    apportion,
    generate_dataset,
    load_annotations,
    save_annotations,
    split_dataset,
)
from vttqs.domain import Concept
from vttqs.errors import InvalidInputError, SchemaViolationError
from vttqs.grading import Grade, GroundTruthImage, grade


def test_default_mix_counts(dataset):
    counts = [sum(img.grade is g for img in dataset) for g in Grade]
    assert len(dataset) == 200
    for c, want in zip(counts, (88, 12, 100)):
        assert abs(c - want) <= 1


def test_forced_healthy():
    imgs = generate_dataset(DatasetConfig(n_images=30, grade_mix=(1, 0, 0), seed=2))
    assert all(not any(img.presence[Concept.EX]) for img in imgs)


@given(st.integers(0, 10_000), st.integers(1, 60))
def test_generated_images_are_valid(seed, n):
    imgs = generate_dataset(DatasetConfig(n_images=n, seed=seed))
    for img in imgs:
        # re-validate from scratch and compare the derived grade
        again = GroundTruthImage(img.image_id, img.presence)
        assert grade(again) is img.grade


def test_bad_configs():
    with pytest.raises(InvalidInputError):
        DatasetConfig(grade_mix=(1.2, -0.2, 0.0))
    with pytest.raises(InvalidInputError):
        DatasetConfig(grade_mix=(0.5, 0.2, 0.2))
    with pytest.raises(InvalidInputError):
        SplitSpec(0.5, 0.5, 0.5)


@given(st.integers(0, 500), st.lists(st.floats(0, 1), min_size=1, max_size=4))
def test_apportion_sums_to_total(total, weights):
    s = sum(weights)
    if s == 0:
        return
    w = [x / s for x in weights]
    counts = apportion(total, w)
    assert sum(counts) == total
    assert all(abs(c - total * x) < 1 + 1e-9 for c, x in zip(counts, w))


def test_round_trip_is_identity_and_byte_stable(tmp_path, dataset):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    save_annotations(dataset, p1)
    back = load_annotations(p1)
    assert back == dataset
    save_annotations(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    header = p1.read_text().splitlines()[0]
    assert header == ",".join(ANNOTATION_COLUMNS)
    assert b"\r" not in p1.read_bytes()


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_COLUMNS)
        w.writerows(rows)


GOOD = ["a", 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0]


def test_two_fovea_row_rejected_with_row_number(tmp_path):
    bad = ["b", 0, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0, 0]
    p = tmp_path / "x.csv"
    _write_rows(p, [GOOD, bad])
    with pytest.raises(SchemaViolationError) as exc:
        load_annotations(p)
    assert exc.value.row == 2 and "row 2" in str(exc.value)


@pytest.mark.parametrize(
    "row",
    [
        ["b", 1, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0],  # stored grade 0 but exudate in Q1 (grade 1)
        ["b", 0, 0, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0, 0],  # diagonal disc
        ["b", 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0],  # short row
        ["b", 0, 0, 0, 2, 1, 0, 0, 0, 0, 1, 0, 0, 0],  # bit out of range
        ["a", 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0],  # duplicate id
    ],
)
def test_malformed_rows_rejected(tmp_path, row):
    p = tmp_path / "x.csv"
    _write_rows(p, [GOOD, row])
    with pytest.raises(SchemaViolationError) as exc:
        load_annotations(p)
    assert exc.value.row == 2


def test_whole_image_column_is_never_stored():
    # the schema has no whole-image column, so OR-inconsistency cannot be written;
    # the in-memory type still rejects it
    assert not any("whole" in c for c in ANNOTATION_COLUMNS)
    grid = [[False, True, False, False, False], [True, True, False, False, False], [True, False, True, False, False]]
    with pytest.raises(InvalidInputError):
        GroundTruthImage("x", grid)


def test_split_sizes_and_stratification(dataset, splits):
    train, val, test = splits
    assert (len(train), len(val), len(test)) == (120, 20, 60)
    ids = [i.image_id for part in splits for i in part]
    assert sorted(ids) == sorted(i.image_id for i in dataset)
    total = {g: sum(i.grade is g for i in dataset) for g in Grade}
    for part in splits:
        for g in Grade:
            share = total[g] * len(part) / len(dataset)
            assert abs(sum(i.grade is g for i in part) - share) <= 1


def test_degenerate_and_deterministic_split(dataset, caplog):
    with caplog.at_level(logging.WARNING):
        train, val, test = split_dataset(dataset, SplitSpec(1, 0, 0), seed=4)
    assert len(train) == 200 and not val and not test
    assert split_dataset(dataset, SplitSpec(), 9) == split_dataset(dataset, SplitSpec(), 9)


def test_empty_grade_bucket_warns(caplog):
    imgs = generate_dataset(DatasetConfig(n_images=10, grade_mix=(0.5, 0.1, 0.4), seed=1))
    with caplog.at_level(logging.WARNING):
        split_dataset(imgs, SplitSpec(0.6, 0.1, 0.3), seed=0)
    assert "no grade" in caplog.text
