"""Synthetic ground-truth generation, annotation CSV I/O, stratified splits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import QUADRANTS, Concept, Location
from .errors import InvalidInputError, SchemaViolationError
from .grading import OD_ADJACENT_PAIRS, Grade, GroundTruthImage

log = logging.getLogger(__name__)

DEFAULT_GRADE_MIX = (0.44, 0.06, 0.50)

ANNOTATION_COLUMNS = (
    "image_id",
    "ex_q1", "ex_q2", "ex_q3", "ex_q4",
    "od_q1", "od_q2", "od_q3", "od_q4",
    "fov_q1", "fov_q2", "fov_q3", "fov_q4",
    "grade",
)  # fmt: skip
_CONCEPT_PREFIX = {Concept.EX: "ex", Concept.OD: "od", Concept.FOV: "fov"}


@dataclass(frozen=True)
class DatasetConfig:
    n_images: int = 200
    grade_mix: tuple[float, float, float] = DEFAULT_GRADE_MIX
    ex_quadrant_rate: float = 0.4
    od_two_quadrant_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 1:
            raise InvalidInputError("n_images must be positive")
        if len(self.grade_mix) != 3 or any(p < 0 for p in self.grade_mix):
            raise InvalidInputError(f"grade_mix must be three non-negative proportions, got {self.grade_mix}")
        if abs(sum(self.grade_mix) - 1.0) > 1e-9:
            raise InvalidInputError(f"grade_mix must sum to 1, got {sum(self.grade_mix)}")
        for name in ("ex_quadrant_rate", "od_two_quadrant_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    validation: float = 0.1
    test: float = 0.3

    def __post_init__(self):
        fr = (self.train, self.validation, self.test)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise InvalidInputError(f"split fractions must be non-negative and sum to 1, got {fr}")


def apportion(total: int, weights: Sequence[float]) -> list[int]:
    """Largest-remainder rounding of ``total * weights`` to integers summing to ``total``."""
    raw = [total * w for w in weights]
    counts = [math.floor(r + 1e-9) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def _sample_image(image_id: str, grade: Grade, cfg: DatasetConfig, rng: np.random.Generator) -> GroundTruthImage:
    fov = QUADRANTS[int(rng.integers(4))]
    if rng.random() < cfg.od_two_quadrant_rate:
        od = OD_ADJACENT_PAIRS[int(rng.integers(len(OD_ADJACENT_PAIRS)))]
    else:
        od = frozenset([QUADRANTS[int(rng.integers(4))]])
    others = [q for q in QUADRANTS if q != fov]
    ex: set[Location] = set()
    if grade is Grade.G2:
        ex.add(fov)
        ex.update(q for q in others if rng.random() < cfg.ex_quadrant_rate)
    elif grade is Grade.G1:
        ex.add(others[int(rng.integers(3))])
        ex.update(q for q in others if q not in ex and rng.random() < cfg.ex_quadrant_rate)
    img = GroundTruthImage.from_quadrants(image_id, ex, od, fov)
    assert img.grade is grade
    return img


def generate_dataset(cfg: DatasetConfig) -> list[GroundTruthImage]:
    """Images with exactly the apportioned grade counts, in shuffled order."""
    rng = np.random.default_rng(cfg.seed)
    counts = apportion(cfg.n_images, cfg.grade_mix)
    grades = [Grade(g) for g, n in enumerate(counts) for _ in range(n)]
    rng.shuffle(grades)
    width = len(str(cfg.n_images - 1))
    return [_sample_image(f"img{i:0{width}d}", g, cfg, rng) for i, g in enumerate(grades)]


def save_annotations(images: Sequence[GroundTruthImage], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_COLUMNS)
        for img in images:
            row = [img.image_id]
            for c in Concept:
                row.extend(int(img.presence[c][q]) for q in QUADRANTS)
            row.append(int(img.grade))
            w.writerow(row)


def load_annotations(path: str | Path) -> list[GroundTruthImage]:
    """Read and validate an annotation CSV; errors carry the 1-based data row."""
    images = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != ANNOTATION_COLUMNS:
            raise SchemaViolationError(f"expected header {','.join(ANNOTATION_COLUMNS)}", row=0)
        for rowno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(ANNOTATION_COLUMNS):
                raise SchemaViolationError(f"expected {len(ANNOTATION_COLUMNS)} fields, got {len(row)}", rowno)
            image_id = row[0].strip()
            if not image_id or image_id in seen:
                raise SchemaViolationError(f"missing or duplicate image_id {image_id!r}", rowno)
            seen.add(image_id)
            try:
                bits = [int(x) for x in row[1:13]]
                stored = int(row[13])
            except ValueError:
                raise SchemaViolationError("non-integer field", rowno) from None
            if any(b not in (0, 1) for b in bits) or stored not in (0, 1, 2):
                raise SchemaViolationError("bits must be 0/1 and grade 0/1/2", rowno)
            sets = {c: {q for q, b in zip(QUADRANTS, bits[4 * c : 4 * c + 4]) if b} for c in Concept}
            if len(sets[Concept.FOV]) != 1:
                raise SchemaViolationError(f"fovea must occupy exactly one quadrant, got {len(sets[Concept.FOV])}", rowno)
            try:
                img = GroundTruthImage.from_quadrants(image_id, sets[Concept.EX], sets[Concept.OD], next(iter(sets[Concept.FOV])))
            except InvalidInputError as exc:
                raise SchemaViolationError(str(exc), rowno) from None
            if int(img.grade) != stored:
                raise SchemaViolationError(f"stored grade {stored} disagrees with derived grade {int(img.grade)}", rowno)
            images.append(img)
    return images


def split_dataset(
    images: Sequence[GroundTruthImage], spec: SplitSpec = SplitSpec(), seed: int = 0
) -> tuple[list[GroundTruthImage], list[GroundTruthImage], list[GroundTruthImage]]:
    """Grade-stratified split into (train, validation, test).

    Each grade bucket is shuffled and its members are spread evenly along
    [0, 1); the merged order is then cut at the global split sizes, so every
    split holds each grade within one image of its proportional share.
    """
    rng = np.random.default_rng(seed)
    keyed = []
    for g in Grade:
        bucket = [img for img in images if img.grade is g]
        order = rng.permutation(len(bucket))
        for rank, j in enumerate(order):
            keyed.append(((rank + 0.5) / len(bucket), int(g), bucket[j]))
    keyed.sort(key=lambda k: (k[0], k[1]))
    sizes = apportion(len(images), (spec.train, spec.validation, spec.test))
    ordered = [k[2] for k in keyed]
    train = ordered[: sizes[0]]
    val = ordered[sizes[0] : sizes[0] + sizes[1]]
    test = ordered[sizes[0] + sizes[1] :]
    for name, part, frac in (("train", train, spec.train), ("validation", val, spec.validation), ("test", test, spec.test)):
        if frac == 0:
            continue
        for g in Grade:
            if any(img.grade is g for img in images) and not any(img.grade is g for img in part):
                log.warning("%s split has no grade %d images", name, int(g))
    return train, val, test
