"""Visual Turing test questioning strategies for macular-edema grading.

A questioning strategy (QS) interrogates a black-box responder (MuE) with
closed yes/no questions about exudates, optic disc and fovea in the whole
image and its four quadrants, stopping once the answers fix the grade.
"""

from .domain import ALL_QUESTIONS, Concept, Location, Question, Response, StateMatrix
from .errors import (
    ContractViolationError,
    ExhaustedError,
    InconsistentStateError,
    InvalidInputError,
    NumericFailureError,
    SchemaViolationError,
    VTTError,
)
from .grading import AssumptionMode, Grade, GroundTruthImage, grade, is_terminal

__version__ = "0.1.0"

__all__ = [
    "ALL_QUESTIONS",
    "AssumptionMode",
    "Concept",
    "ContractViolationError",
    "ExhaustedError",
    "Grade",
    "GroundTruthImage",
    "InconsistentStateError",
    "InvalidInputError",
    "Location",
    "NumericFailureError",
    "Question",
    "Response",
    "SchemaViolationError",
    "StateMatrix",
    "VTTError",
    "grade",
    "is_terminal",
]
