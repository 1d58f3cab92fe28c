"""Concepts, locations, questions, responses and the history-to-state transform.

Questions are indexed concept-major: ``index = concept * 5 + location``, with
concepts ordered (EX, OD, FOV) and locations (WHOLE, Q1, Q2, Q3, Q4). The same
index addresses the flattened state vector and the Q-network outputs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError


class Concept(IntEnum):
    EX = 0  # hard exudate
    OD = 1  # optic disc
    FOV = 2  # fovea

    @property
    def label(self) -> str:
        return self.name


class Location(IntEnum):
    WHOLE = 0
    Q1 = 1
    Q2 = 2
    Q3 = 3
    Q4 = 4

    @property
    def label(self) -> str:
        return "whole image" if self is Location.WHOLE else self.name

    @property
    def is_quadrant(self) -> bool:
        return self is not Location.WHOLE


QUADRANTS: tuple[Location, ...] = (Location.Q1, Location.Q2, Location.Q3, Location.Q4)
N_CONCEPTS = len(Concept)
N_LOCATIONS = len(Location)
N_QUESTIONS = N_CONCEPTS * N_LOCATIONS


@dataclass(frozen=True, order=True)
class Question:
    concept: Concept
    location: Location

    @property
    def index(self) -> int:
        return int(self.concept) * N_LOCATIONS + int(self.location)

    @classmethod
    def from_index(cls, index: int) -> "Question":
        if not 0 <= index < N_QUESTIONS:
            raise InvalidInputError(f"question index {index} out of range")
        return ALL_QUESTIONS[index]

    def __str__(self) -> str:
        return f"{self.concept.label}@{self.location.label}"


class Response(Enum):
    NOT_ASKED = "n/a"
    NO = "no"
    YES = "yes"

    @classmethod
    def from_bool(cls, present: bool) -> "Response":
        return cls.YES if present else cls.NO

    def flipped(self) -> "Response":
        if self is Response.NOT_ASKED:
            return self
        return Response.NO if self is Response.YES else Response.YES


_Z = {Response.NOT_ASKED: 0.0, Response.NO: 0.5, Response.YES: 1.0}
_Z_INV = {v: k for k, v in _Z.items()}


def encode_response(r: Response) -> float:
    """Map a response to its state value: not asked 0, no 0.5, yes 1."""
    return _Z[r]


def decode_value(v: float) -> Response:
    try:
        return _Z_INV[float(v)]
    except KeyError:
        raise InvalidInputError(f"state value {v!r} not in {{0, 0.5, 1}}") from None


def build_question_set(
    locations: Sequence[Location] = tuple(Location),
    concepts: Sequence[Concept] = tuple(Concept),
) -> tuple[Question, ...]:
    """Cartesian product of concepts and locations, concept-major."""
    if not locations or not concepts:
        raise InvalidInputError("locations and concepts must be non-empty")
    if len(set(locations)) != len(locations):
        raise InvalidInputError(f"duplicate locations: {list(locations)}")
    if len(set(concepts)) != len(concepts):
        raise InvalidInputError(f"duplicate concepts: {list(concepts)}")
    return tuple(
        Question(Concept(c), Location(l))
        for c in sorted(concepts)
        for l in sorted(locations)
    )


ALL_QUESTIONS: tuple[Question, ...] = tuple(
    Question(c, l) for c in Concept for l in Location
)


@dataclass(frozen=True)
class History:
    """Ordered question-response pairs; position is the timestep."""

    pairs: tuple[tuple[Question, Response], ...] = ()

    def __post_init__(self):
        seen = set()
        for q, r in self.pairs:
            if r is Response.NOT_ASKED:
                raise InvalidInputError(f"history holds an unasked response for {q}")
            if q in seen:
                raise InvalidInputError(f"question {q} appears twice in history")
            seen.add(q)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def asked(self) -> frozenset[Question]:
        return frozenset(q for q, _ in self.pairs)

    def extended(self, q: Question, r: Response) -> "History":
        return History(self.pairs + ((q, r),))


@dataclass(frozen=True)
class StateMatrix:
    """Order-free encoding of a history as a 3 x 5 grid over {0, 0.5, 1}.

    Stored as a flat tuple of 15 values in canonical question order so that
    states are hashable and cheap to compare.
    """

    values: tuple[float, ...] = (0.0,) * N_QUESTIONS

    def __post_init__(self):
        if len(self.values) != N_QUESTIONS:
            raise InvalidInputError(f"state needs {N_QUESTIONS} values, got {len(self.values)}")
        for v in self.values:
            if v not in (0.0, 0.5, 1.0):
                raise InvalidInputError(f"state value {v!r} not in {{0, 0.5, 1}}")

    @classmethod
    def empty(cls) -> "StateMatrix":
        return _EMPTY

    @classmethod
    def from_entries(cls, entries: dict[Question, Response]) -> "StateMatrix":
        vals = [0.0] * N_QUESTIONS
        for q, r in entries.items():
            vals[q.index] = encode_response(r)
        return cls(tuple(vals))

    @classmethod
    def from_vector(cls, vec: Iterable[float]) -> "StateMatrix":
        return cls(tuple(float(v) for v in vec))

    def __getitem__(self, q: Question) -> float:
        return self.values[q.index]

    def response(self, q: Question) -> Response:
        return _Z_INV[self.values[q.index]]

    def with_answer(self, q: Question, r: Response) -> "StateMatrix":
        vals = list(self.values)
        vals[q.index] = encode_response(r)
        return StateMatrix(tuple(vals))

    @property
    def asked(self) -> frozenset[Question]:
        return frozenset(ALL_QUESTIONS[i] for i, v in enumerate(self.values) if v != 0.0)

    def answers(self) -> dict[Question, Response]:
        """Recover the asked questions and their responses."""
        return {ALL_QUESTIONS[i]: _Z_INV[v] for i, v in enumerate(self.values) if v != 0.0}

    def vector(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def matrix(self) -> np.ndarray:
        return self.vector().reshape(N_CONCEPTS, N_LOCATIONS)

    def to_csv_row(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(_fmt(v) for v in self.values)
        return buf.getvalue()

    @classmethod
    def from_csv_row(cls, line: str) -> "StateMatrix":
        row = next(csv.reader([line.strip()]))
        try:
            return cls(tuple(float(x) for x in row))
        except ValueError as exc:
            raise InvalidInputError(f"bad state row {line!r}: {exc}") from None


_EMPTY = StateMatrix()


def _fmt(v: float) -> str:
    return "0" if v == 0.0 else ("0.5" if v == 0.5 else "1")


def state_from_history(h: History | Sequence[tuple[Question, Response]]) -> StateMatrix:
    if not isinstance(h, History):
        h = History(tuple(h))
    vals = [0.0] * N_QUESTIONS
    for q, r in h.pairs:
        vals[q.index] = encode_response(r)
    return StateMatrix(tuple(vals))
