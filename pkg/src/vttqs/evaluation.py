"""Reward tables, beta-posterior perception of responders, information radius."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import betaln, logsumexp

from .environment import Episode, EpisodeConfig, run_episode
from .errors import InvalidInputError, NumericFailureError
from .grading import Grade, GroundTruthImage
from .responders import Responder, truthful_answer
from .strategies import QuestioningStrategy

DEFAULT_GRID_POINTS = 4096
GRID_EDGE = 1e-6


def episode_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def run_test_set(
    qs: QuestioningStrategy,
    mue: Responder,
    images: Sequence[GroundTruthImage],
    cfg: EpisodeConfig,
    seed: int = 0,
) -> list[Episode]:
    return [run_episode(qs, mue, img, cfg, episode_seed(seed, i)) for i, img in enumerate(images)]


@dataclass(frozen=True)
class RewardTable:
    """Mean return and mean question count per true grade and overall.

    Empty grade buckets hold None rather than a number.
    """

    reward: dict[Grade, float | None]
    questions: dict[Grade, float | None]
    counts: dict[Grade, int]
    total_reward: float
    total_questions: float

    def cell(self, g: Grade | None) -> str:
        if g is None:
            return f"{self.total_reward:.3f} [{self.total_questions:.2f}]"
        if self.reward[g] is None:
            return ""
        return f"{self.reward[g]:.3f} [{self.questions[g]:.2f}]"


def table_from_episodes(episodes: Sequence[Episode], images: Sequence[GroundTruthImage]) -> RewardTable:
    if not episodes:
        raise InvalidInputError("no episodes to tabulate")
    reward, questions, counts = {}, {}, {}
    for g in Grade:
        eps = [e for e, img in zip(episodes, images) if img.grade is g]
        counts[g] = len(eps)
        reward[g] = float(np.mean([e.return_g for e in eps])) if eps else None
        questions[g] = float(np.mean([len(e) for e in eps])) if eps else None
    return RewardTable(
        reward,
        questions,
        counts,
        float(np.mean([e.return_g for e in episodes])),
        float(np.mean([len(e) for e in episodes])),
    )


def reward_table(
    qs: QuestioningStrategy,
    mue: Responder,
    images: Sequence[GroundTruthImage],
    cfg: EpisodeConfig,
    seed: int = 0,
) -> RewardTable:
    if not images:
        raise InvalidInputError("empty dataset")
    return table_from_episodes(run_test_set(qs, mue, images, cfg, seed), images)


REWARD_CSV_COLUMNS = ("qs", "mue", "grade0", "grade1", "grade2", "total")


def write_reward_csv(rows: Sequence[tuple[str, str, RewardTable]], path: str | Path) -> None:
    """One row per (strategy, responder); cells read "mean_reward [mean_questions]"."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REWARD_CSV_COLUMNS)
        for qs_name, mue_name, t in rows:
            w.writerow([qs_name, mue_name, *(t.cell(g) for g in Grade), t.cell(None)])


@dataclass(frozen=True)
class BetaPerception:
    alpha: float = 1.0
    beta: float = 1.0

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def n_updates(self) -> int:
        return int(round(self.alpha + self.beta - 2))

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        return (self.alpha - 1) * np.log(x) + (self.beta - 1) * np.log1p(-x) - betaln(self.alpha, self.beta)


def update_beta(p: BetaPerception, correct: bool) -> BetaPerception:
    if correct:
        return BetaPerception(p.alpha + 1, p.beta)
    return BetaPerception(p.alpha, p.beta + 1)


def perceive(outcomes: Sequence[bool], prior: BetaPerception = BetaPerception()) -> BetaPerception:
    c = sum(1 for o in outcomes if o)
    return BetaPerception(prior.alpha + c, prior.beta + len(outcomes) - c)


def information_radius(perceptions: Sequence[BetaPerception], grid_points: int = DEFAULT_GRID_POINTS) -> float:
    """Mean KL divergence from each beta density to their average density.

    Integrated with the trapezoid rule on a uniform grid over
    [1e-6, 1 - 1e-6]; densities are combined in log space.
    """
    if not perceptions:
        raise InvalidInputError("need at least one perception")
    if grid_points < 64:
        raise InvalidInputError("grid_points must be >= 64")
    if len(perceptions) == 1:
        return 0.0
    for p in perceptions:
        if not (np.isfinite(p.alpha) and np.isfinite(p.beta) and p.alpha > 0 and p.beta > 0):
            raise NumericFailureError(f"non-normalizable beta parameters ({p.alpha}, {p.beta})")
    x = np.linspace(GRID_EDGE, 1.0 - GRID_EDGE, grid_points)
    logp = np.stack([p.log_pdf(x) for p in perceptions])
    log_mix = logsumexp(logp, axis=0) - np.log(len(perceptions))
    integrand = np.exp(logp) * (logp - log_mix)
    kl = trapezoid(integrand, x, axis=1)
    radius = float(np.mean(kl))
    if not np.isfinite(radius):
        raise NumericFailureError("information radius is not finite")
    return max(radius, 0.0)


@dataclass
class SeparationReport:
    n_u: int
    perceptions: dict[tuple[str, str], BetaPerception]
    radius: dict[str, float]
    question_totals: dict[tuple[str, str], int] = field(default_factory=dict)

    def to_json(self) -> str:
        qs_names = list(self.radius)
        doc = {
            "n_u": self.n_u,
            "strategies": {
                qs: {
                    "information_radius": self.radius[qs],
                    "responders": {
                        mue: {
                            "alpha": p.alpha,
                            "beta": p.beta,
                            "mean": p.mean,
                            "questions_asked": self.question_totals.get((qs, mue)),
                        }
                        for (q, mue), p in self.perceptions.items()
                        if q == qs
                    },
                }
                for qs in qs_names
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def write_beta_curves(self, path: str | Path, points: int = 201) -> None:
        x = np.linspace(0.0, 1.0, points)[1:-1]
        keys = list(self.perceptions)
        dens = [np.exp(self.perceptions[k].log_pdf(x)) for k in keys]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", *(f"{q}|{m}" for q, m in keys)])
            for i, xi in enumerate(x):
                w.writerow([f"{xi:.4f}", *(f"{d[i]:.6g}" for d in dens)])


def separation_experiment(
    strategies: Sequence[QuestioningStrategy],
    responders: Sequence[Responder],
    images: Sequence[GroundTruthImage],
    cfg: EpisodeConfig,
    seed: int = 0,
    grid_points: int = DEFAULT_GRID_POINTS,
) -> SeparationReport:
    """Question every image with every (strategy, responder) pair and compare.

    The answer stream of each pair is the concatenation of its episodes in
    image order. All streams are cut to N_u, the smallest stream length,
    i.e. the question count of the most economical strategy, so that no
    strategy gains precision merely by asking more.
    """
    if not strategies or not responders:
        raise InvalidInputError("need at least one strategy and one responder")
    streams: dict[tuple[str, str], list[bool]] = {}
    for qs in strategies:
        for mue in responders:
            outcomes = []
            for ep, img in zip(run_test_set(qs, mue, images, cfg, seed), images):
                outcomes.extend(tr.answer is truthful_answer(img, tr.action) for tr in ep.transitions)
            streams[(qs.name, mue.name)] = outcomes
    if len(streams) != len(strategies) * len(responders):
        raise InvalidInputError("strategy and responder names must be unique")
    n_u = min(len(v) for v in streams.values())
    perceptions = {k: perceive(v[:n_u]) for k, v in streams.items()}
    radius = {
        qs.name: information_radius([perceptions[(qs.name, m.name)] for m in responders], grid_points)
        for qs in strategies
    }
    totals = {k: len(v) for k, v in streams.items()}
    return SeparationReport(n_u, perceptions, radius, totals)


def episode_budget(
    qs: QuestioningStrategy,
    images: Sequence[GroundTruthImage],
    cfg: EpisodeConfig,
    seed: int = 0,
) -> list[tuple]:
    """(final state, true grade) of every terminated truthful episode, one per image.

    This is the training budget for a classification-tree strategy: random
    episodes give the DT-RB budget, textbook episodes the DT-TB budget.
    """
    from .responders import GROUNDTRUTH

    budget = []
    for ep, img in zip(run_test_set(qs, GROUNDTRUTH, images, cfg, seed), images):
        if ep.terminated:
            budget.append((ep.final_state, img.grade))
    return budget


def tree_accuracy(model, budget: Sequence[tuple]) -> float:
    if not budget:
        raise InvalidInputError("empty budget")
    return float(np.mean([model.predict_one(s.values) is g for s, g in budget]))
