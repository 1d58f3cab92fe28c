"""DME grading under the quadrant assumptions and the diagnosis-decidable predicate."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum
from functools import lru_cache
from itertools import product

import numpy as np

from .domain import ALL_QUESTIONS, QUADRANTS, Concept, Location, Question, StateMatrix
from .errors import InconsistentStateError, InvalidInputError


class Grade(IntEnum):
    G0 = 0
    G1 = 1
    G2 = 2


class AssumptionMode(Enum):
    SIMPLE_A = "simple-A"
    EXTRA_UA = "extra-U-A"

    @classmethod
    def parse(cls, value: "str | AssumptionMode") -> "AssumptionMode":
        if isinstance(value, cls):
            return value
        for m in cls:
            if value.lower() == m.value.lower():
                return m
        raise InvalidInputError(f"unknown assumption mode {value!r}")


# The disc may straddle one quadrant border but never a diagonal.
OD_ADJACENT_PAIRS: tuple[frozenset[Location], ...] = tuple(
    frozenset(p)
    for p in (
        (Location.Q1, Location.Q2),
        (Location.Q2, Location.Q3),
        (Location.Q3, Location.Q4),
        (Location.Q4, Location.Q1),
    )
)
OD_PLACEMENTS: tuple[frozenset[Location], ...] = (
    tuple(frozenset([q]) for q in QUADRANTS) + OD_ADJACENT_PAIRS
)


@dataclass(frozen=True)
class GroundTruthImage:
    """Annotation-level ground truth for one fundus image.

    ``presence`` is a 3 x 5 boolean grid indexed [concept][location]; the
    whole-image column must equal the OR of the quadrant columns.
    """

    image_id: str
    presence: tuple[tuple[bool, ...], ...]

    def __post_init__(self):
        grid = tuple(tuple(bool(x) for x in row) for row in self.presence)
        object.__setattr__(self, "presence", grid)
        if len(grid) != 3 or any(len(row) != 5 for row in grid):
            raise InvalidInputError("presence grid must be 3 x 5")
        for c in Concept:
            if grid[c][Location.WHOLE] != any(grid[c][q] for q in QUADRANTS):
                raise InvalidInputError(
                    f"{self.image_id}: whole-image {c.name} bit disagrees with its quadrants"
                )
        fov = self.quadrants(Concept.FOV)
        if len(fov) != 1:
            raise InvalidInputError(f"{self.image_id}: fovea must occupy exactly one quadrant, got {len(fov)}")
        if self.quadrants(Concept.OD) not in OD_PLACEMENTS:
            raise InvalidInputError(
                f"{self.image_id}: optic disc must occupy one quadrant or two adjacent ones"
            )

    @classmethod
    def from_quadrants(
        cls,
        image_id: str,
        ex: "set[Location] | frozenset[Location] | tuple[Location, ...]",
        od: "set[Location] | frozenset[Location] | tuple[Location, ...]",
        fov: "Location",
    ) -> "GroundTruthImage":
        sets = {Concept.EX: set(ex), Concept.OD: set(od), Concept.FOV: {fov}}
        grid = []
        for c in Concept:
            quads = [q in sets[c] for q in QUADRANTS]
            grid.append((any(quads), *quads))
        return cls(image_id, tuple(grid))

    def quadrants(self, concept: Concept) -> frozenset[Location]:
        row = self.presence[concept]
        return frozenset(q for q in QUADRANTS if row[q])

    def present(self, q: Question) -> bool:
        return self.presence[q.concept][q.location]

    @property
    def fovea(self) -> Location:
        (f,) = self.quadrants(Concept.FOV)
        return f

    @property
    def grade(self) -> Grade:
        return grade(self)


def grade(img: GroundTruthImage) -> Grade:
    """G0 without exudates, G2 when an exudate shares the fovea's quadrant, else G1."""
    ex = img.quadrants(Concept.EX)
    if not ex:
        return Grade.G0
    return Grade.G2 if img.fovea in ex else Grade.G1


def _localized(s: StateMatrix, concept: Concept) -> bool:
    return any(s[Question(concept, q)] == 1.0 for q in QUADRANTS)


def _localization_holds(s: StateMatrix, mode: AssumptionMode) -> bool:
    ex_confirmed = any(s[Question(Concept.EX, l)] == 1.0 for l in Location)
    od_ok = _localized(s, Concept.OD)
    if ex_confirmed and not od_ok:
        return False
    if mode is AssumptionMode.EXTRA_UA:
        return od_ok and _localized(s, Concept.FOV)
    return True


def _split(s: StateMatrix, concept: Concept) -> tuple[float, set[Location], set[Location]]:
    whole = s[Question(concept, Location.WHOLE)]
    yes = {q for q in QUADRANTS if s[Question(concept, q)] == 1.0}
    no = {q for q in QUADRANTS if s[Question(concept, q)] == 0.5}
    return whole, yes, no


def possible_grades(s: StateMatrix) -> frozenset[Grade]:
    """Grades of the valid images that agree with every answer in ``s``.

    Reasons per concept: the optic disc only affects consistency, while the
    exudate set and the fovea quadrant jointly fix the grade.
    """
    ex_whole, ex_yes, ex_no = _split(s, Concept.EX)
    fov_whole, fov_yes, fov_no = _split(s, Concept.FOV)
    od_whole, od_yes, od_no = _split(s, Concept.OD)

    # fovea and disc are always somewhere in the image
    if fov_whole == 0.5 or od_whole == 0.5:
        raise InconsistentStateError("fovea and optic disc cannot be absent from the image")
    if len(fov_yes) > 1:
        raise InconsistentStateError("fovea confirmed in more than one quadrant")
    fov_candidates = fov_yes if fov_yes else set(QUADRANTS) - fov_no
    if not fov_candidates:
        raise InconsistentStateError("fovea excluded from every quadrant")
    if not any(od_yes <= p and not (od_no & p) for p in OD_PLACEMENTS):
        raise InconsistentStateError("no optic disc placement matches the answers")

    if ex_whole == 0.5 and ex_yes:
        raise InconsistentStateError("exudate denied in the image but confirmed in a quadrant")
    ex_open = set(QUADRANTS) - ex_no  # quadrants where an exudate may sit
    if ex_whole == 1.0 and not ex_open:
        raise InconsistentStateError("exudate confirmed in the image but denied in every quadrant")

    grades = set()
    if ex_whole != 1.0 and not ex_yes:
        grades.add(Grade.G0)
    if ex_whole != 0.5:
        for f in fov_candidates:
            if f in ex_open:
                grades.add(Grade.G2)
            if f not in ex_yes and ex_open - {f}:
                grades.add(Grade.G1)
    if not grades:
        raise InconsistentStateError("answers admit no gradable image")
    return frozenset(grades)


@lru_cache(maxsize=1 << 16)
def is_terminal(s: StateMatrix, mode: AssumptionMode) -> Grade | None:
    """Return the diagnosed grade if ``s`` suffices for a diagnosis, else None.

    Raises InconsistentStateError when no valid image agrees with ``s``.
    """
    grades = possible_grades(s)
    if len(grades) != 1 or not _localization_holds(s, mode):
        return None
    (g,) = grades
    return g


def _all_images() -> tuple[GroundTruthImage, ...]:
    images = []
    quad_subsets = [
        frozenset(q for q, keep in zip(QUADRANTS, bits) if keep)
        for bits in product((False, True), repeat=4)
    ]
    for fov in QUADRANTS:
        for od in OD_PLACEMENTS:
            for ex in quad_subsets:
                images.append(GroundTruthImage.from_quadrants("enum", ex, od, fov))
    return tuple(images)


ALL_VALID_IMAGES: tuple[GroundTruthImage, ...] = _all_images()


# presence bits and grades of every valid image, for vectorized filtering
_PRESENCE = np.array([[img.present(q) for q in ALL_QUESTIONS] for img in ALL_VALID_IMAGES], dtype=bool)
_GRADES = np.array([int(img.grade) for img in ALL_VALID_IMAGES])


def _consistent_mask(s: StateMatrix) -> np.ndarray:
    v = np.asarray(s.values)
    asked = v != 0.0
    return np.all(_PRESENCE[:, asked] == (v[asked] == 1.0), axis=1)


def consistent_images(s: StateMatrix) -> list[GroundTruthImage]:
    """Every valid image whose presence bits agree with all answered entries."""
    return [img for img, ok in zip(ALL_VALID_IMAGES, _consistent_mask(s)) if ok]


def brute_force_decidable(s: StateMatrix, mode: AssumptionMode) -> Grade | None:
    """Exhaustive oracle for :func:`is_terminal` over all 512 valid images."""
    mask = _consistent_mask(s)
    if not mask.any():
        raise InconsistentStateError("no valid image agrees with the state")
    grades = set(_GRADES[mask].tolist())
    if len(grades) != 1:
        return None
    confirmed = {q.concept for q in s.asked if s[q] == 1.0 and q.location.is_quadrant}
    ex_seen = any(q.concept is Concept.EX and s[q] == 1.0 for q in s.asked)
    required = set()
    if ex_seen:
        required.add(Concept.OD)
    if mode is AssumptionMode.EXTRA_UA:
        required |= {Concept.OD, Concept.FOV}
    if not required <= confirmed:
        return None
    return Grade(grades.pop())


def terminal_grade(s: StateMatrix, mode: AssumptionMode) -> Grade | None:
    """Like :func:`is_terminal` but contradictory answers count as undiagnosed."""
    try:
        return is_terminal(s, mode)
    except InconsistentStateError:
        return None
