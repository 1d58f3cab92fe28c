"""Episodic questioning loop: reward, transitions and discounted return."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .domain import N_QUESTIONS, Question, Response, StateMatrix
from .errors import ContractViolationError, InvalidInputError
from .grading import AssumptionMode, Grade, GroundTruthImage, terminal_grade
from .responders import Responder
from .strategies import QuestioningStrategy


@dataclass(frozen=True)
class EpisodeConfig:
    gamma: float = 0.8
    max_questions: int = N_QUESTIONS
    mode: AssumptionMode = AssumptionMode.SIMPLE_A
    include_terminal_tuples: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise InvalidInputError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 1 <= self.max_questions <= N_QUESTIONS:
            raise InvalidInputError(f"max_questions must lie in [1, {N_QUESTIONS}]")


@dataclass(frozen=True)
class Transition:
    state: StateMatrix
    action: Question
    reward: float
    next_state: StateMatrix
    terminal: bool
    answer: Response = Response.NOT_ASKED
    grade: Grade | None = None  # diagnosis reached at next_state, if any


@dataclass(frozen=True)
class Episode:
    transitions: tuple[Transition, ...]
    return_g: float
    image_id: str

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def terminated(self) -> bool:
        return bool(self.transitions) and self.transitions[-1].terminal

    @property
    def final_state(self) -> StateMatrix:
        return self.transitions[-1].next_state if self.transitions else StateMatrix.empty()

    @property
    def diagnosis(self) -> Grade | None:
        return self.transitions[-1].grade if self.terminated else None


def discounted_return(rewards: Iterable[float], gamma: float) -> float:
    return float(sum(r * gamma**t for t, r in enumerate(rewards)))


def step(
    env_state: StateMatrix,
    asked: frozenset[Question],
    q: Question,
    answer: Response,
    mode: AssumptionMode,
) -> Transition:
    """Record the answer to ``q`` and score it.

    Reward is -1 for a repeated question, +1 when the new state supports a
    diagnosis, 0 otherwise.
    """
    if answer is Response.NOT_ASKED:
        raise InvalidInputError("a posed question needs a yes/no answer")
    next_state = env_state.with_answer(q, answer)
    g = terminal_grade(next_state, mode)
    if q in asked:
        reward = -1.0
    else:
        reward = 1.0 if g is not None else 0.0
    return Transition(env_state, q, reward, next_state, g is not None, answer, g)


def run_episode(
    qs: QuestioningStrategy,
    mue: Responder,
    img: GroundTruthImage,
    cfg: EpisodeConfig,
    rng_seed: int | np.random.Generator = 0,
) -> Episode:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    s = StateMatrix.empty()
    asked: frozenset[Question] = frozenset()
    transitions = []
    while len(transitions) < cfg.max_questions:
        q = qs.next_question(s, asked, rng)
        if q in asked:
            raise ContractViolationError(f"strategy {qs.name!r} repeated question {q}")
        tr = step(s, asked, q, mue.answer(img, q), cfg.mode)
        transitions.append(tr)
        if tr.terminal:
            break
        s, asked = tr.next_state, asked | {q}
    g = discounted_return((t.reward for t in transitions), cfg.gamma)
    return Episode(tuple(transitions), g, img.image_id)


EPISODE_LOG_COLUMNS = ("image_id", "step", "concept", "location", "answer", "reward", "terminal")


def write_episode_log(episodes: Iterable[Episode], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_LOG_COLUMNS)
        for ep in episodes:
            for t, tr in enumerate(ep.transitions):
                w.writerow(
                    [
                        ep.image_id,
                        t,
                        tr.action.concept.name,
                        tr.action.location.name,
                        tr.answer.value,
                        f"{tr.reward:g}",
                        int(tr.terminal),
                    ]
                )
