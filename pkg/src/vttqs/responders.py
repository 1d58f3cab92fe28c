"""Simulated methods under evaluation (MuEs) with controlled accuracy."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import Any, Iterable

from .domain import N_QUESTIONS, Question, Response, StateMatrix
from .errors import InvalidInputError
from .grading import AssumptionMode, GroundTruthImage, terminal_grade
from .strategies import textbook_qs_next

RELEVANT_ACCURACY = 0.95


class ResponderKind(Enum):
    GROUNDTRUTH = "groundtruth"
    RANDOM = "random"
    REASONABLE = "reasonable"
    UNREASONABLE = "unreasonable"


@lru_cache(maxsize=4096)
def relevant_questions(img: GroundTruthImage, mode: AssumptionMode) -> frozenset[Question]:
    """Questions on the textbook path for ``img`` when answered truthfully."""
    s = StateMatrix.empty()
    path = []
    while terminal_grade(s, mode) is None:
        q = textbook_qs_next(s, s.asked, mode)
        path.append(q)
        s = s.with_answer(q, truthful_answer(img, q))
    return frozenset(path)


def truthful_answer(img: GroundTruthImage, q: Question) -> Response:
    return Response.from_bool(img.present(q))


def balance_rate(accuracy: float, focus_fraction: float, focus_rate: float = RELEVANT_ACCURACY) -> float:
    """Accuracy x on the unfocused questions so the overall rate equals ``accuracy``.

    Solves ``focus_rate * f + x * (1 - f) = accuracy`` for x, clamped to [0, 1].
    """
    if focus_fraction >= 1.0:
        return 0.0 if accuracy < focus_rate else 1.0
    x = (accuracy - focus_rate * focus_fraction) / (1.0 - focus_fraction)
    return min(1.0, max(0.0, x))


def _uniform(seed: int, image_id: str, q: Question) -> float:
    digest = hashlib.blake2b(f"{seed}|{image_id}|{q.index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


@dataclass(frozen=True)
class Responder:
    """A black-box responder.

    Answers are a pure function of (seed, image, question), so repeated
    queries agree. With ``relevant_fraction`` unset the 95% / x balance is
    solved per image; :meth:`calibrated` instead solves it once over a
    dataset, so the accuracy target holds over the whole dataset.
    """

    kind: ResponderKind = ResponderKind.GROUNDTRUTH
    accuracy: float = 1.0
    seed: int = 0
    mode: AssumptionMode = AssumptionMode.SIMPLE_A
    relevant_fraction: float | None = None
    name: str = ""

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise InvalidInputError(f"accuracy {self.accuracy} outside [0, 1]")
        if self.relevant_fraction is not None and not 0.0 <= self.relevant_fraction <= 1.0:
            raise InvalidInputError("relevant_fraction outside [0, 1]")
        if not self.name:
            object.__setattr__(self, "name", self.kind.value)

    @classmethod
    def from_spec(cls, spec: dict[str, Any], mode: AssumptionMode | str = AssumptionMode.SIMPLE_A) -> "Responder":
        kind = ResponderKind(spec["kind"])
        acc = float(spec.get("accuracy", 1.0))
        return cls(kind, acc, int(spec.get("seed", 0)), AssumptionMode.parse(mode), name=spec.get("name", ""))

    def to_spec(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "accuracy": self.accuracy, "seed": self.seed}

    def calibrated(self, images: Iterable[GroundTruthImage]) -> "Responder":
        images = list(images)
        if not images:
            raise InvalidInputError("cannot calibrate on an empty dataset")
        n_rel = sum(len(relevant_questions(img, self.mode)) for img in images)
        return replace(self, relevant_fraction=n_rel / (N_QUESTIONS * len(images)))

    def unfocused_rate(self, img: GroundTruthImage) -> float:
        """Accuracy x on questions outside the 95% set."""
        if self.relevant_fraction is None:
            rho = len(relevant_questions(img, self.mode)) / N_QUESTIONS
        else:
            rho = self.relevant_fraction
        if self.kind is ResponderKind.UNREASONABLE:
            rho = 1.0 - rho
        return balance_rate(self.accuracy, rho)

    def correct_probability(self, img: GroundTruthImage, q: Question) -> float:
        if self.kind is ResponderKind.GROUNDTRUTH:
            return 1.0
        if self.kind is ResponderKind.RANDOM:
            return self.accuracy
        relevant = q in relevant_questions(img, self.mode)
        focused = relevant if self.kind is ResponderKind.REASONABLE else not relevant
        return RELEVANT_ACCURACY if focused else self.unfocused_rate(img)

    def answer(self, img: GroundTruthImage, q: Question) -> Response:
        truth = truthful_answer(img, q)
        if self.kind is ResponderKind.GROUNDTRUTH:
            return truth
        if _uniform(self.seed, img.image_id, q) < self.correct_probability(img, q):
            return truth
        return truth.flipped()

    def is_correct(self, img: GroundTruthImage, q: Question) -> bool:
        return self.answer(img, q) is truthful_answer(img, q)


GROUNDTRUTH = Responder()
