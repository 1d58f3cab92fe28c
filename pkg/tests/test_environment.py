import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vttqs.domain import ALL_QUESTIONS, Concept, Location, Question, Response, StateMatrix
from vttqs.environment import EpisodeConfig, discounted_return, run_episode, step, write_episode_log
from vttqs.errors import ContractViolationError, InvalidInputError
from vttqs.grading import AssumptionMode, Grade, GroundTruthImage
from vttqs.responders import GROUNDTRUTH, Responder, ResponderKind
from vttqs.strategies import RandomQS, TextbookQS

from strategies_hyp import images

SA = AssumptionMode.SIMPLE_A
EX_WHOLE = Question(Concept.EX, Location.WHOLE)
HEALTHY = GroundTruthImage.from_quadrants("healthy", set(), {Location.Q1}, Location.Q3)
SEVERE = GroundTruthImage.from_quadrants("severe", {Location.Q2, Location.Q4}, {Location.Q3, Location.Q4}, Location.Q2)


def test_step_rewards():
    s0 = StateMatrix.empty()
    tr = step(s0, frozenset(), Question(Concept.OD, Location.Q1), Response.YES, SA)
    assert (tr.reward, tr.terminal) == (0.0, False)
    tr = step(s0, frozenset(), EX_WHOLE, Response.NO, SA)
    assert (tr.reward, tr.terminal, tr.grade) == (1.0, True, Grade.G0)
    s1 = s0.with_answer(Question(Concept.OD, Location.Q1), Response.YES)
    tr = step(s1, frozenset({Question(Concept.OD, Location.Q1)}), Question(Concept.OD, Location.Q1), Response.YES, SA)
    assert tr.reward == -1.0
    with pytest.raises(InvalidInputError):
        step(s0, frozenset(), EX_WHOLE, Response.NOT_ASKED, SA)


def test_textbook_healthy_episode_is_one_question():
    ep = run_episode(TextbookQS(SA), GROUNDTRUTH, HEALTHY, EpisodeConfig())
    assert len(ep) == 1 and ep.return_g == 1.0 and ep.diagnosis is Grade.G0


def test_return_at_fifth_question():
    assert discounted_return([0, 0, 0, 0, 1], 0.8) == pytest.approx(0.4096)


class _Scripted:
    """Asks a fixed list of questions in order."""

    name = "scripted"
    stochastic = False

    def __init__(self, qs):
        self.qs = list(qs)

    def next_question(self, state, asked, rng):
        return next(q for q in self.qs if q not in asked)


def test_truncation_gives_zero_return():
    # OD/FOV questions alone never settle the exudate question
    qs = [q for q in ALL_QUESTIONS if q.concept is not Concept.EX]
    ep = run_episode(_Scripted(qs), GROUNDTRUTH, SEVERE, EpisodeConfig(max_questions=10))
    assert len(ep) == 10 and ep.return_g == 0.0 and not ep.terminated


def test_repeating_strategy_violates_contract():
    class Stubborn:
        name, stochastic = "stubborn", False

        def next_question(self, state, asked, rng):
            return EX_WHOLE

    with pytest.raises(ContractViolationError):
        run_episode(Stubborn(), GROUNDTRUTH, SEVERE, EpisodeConfig())


def test_config_validation():
    with pytest.raises(InvalidInputError):
        EpisodeConfig(gamma=1.0)
    with pytest.raises(InvalidInputError):
        EpisodeConfig(max_questions=16)


@given(images, st.integers(0, 2**31), st.sampled_from(list(AssumptionMode)), st.floats(0.3, 1.0))
def test_masked_episode_invariants(img, seed, mode, acc):
    cfg = EpisodeConfig(mode=mode)
    mue = Responder(ResponderKind.RANDOM, acc, seed)
    ep = run_episode(RandomQS(), mue, img, cfg, seed)
    asked = [t.action for t in ep.transitions]
    assert len(asked) == len(set(asked)) <= cfg.max_questions
    assert all(t.reward in (0.0, 1.0) for t in ep.transitions)
    assert ep.return_g == pytest.approx(sum(t.reward * 0.8**i for i, t in enumerate(ep.transitions)))
    assert ep.return_g == 0.0 or ep.return_g == pytest.approx(0.8 ** (len(ep) - 1))
    again = run_episode(RandomQS(), mue, img, cfg, seed)
    assert again == ep


def test_episode_log(tmp_path):
    ep = run_episode(TextbookQS(SA), GROUNDTRUTH, SEVERE, EpisodeConfig())
    path = tmp_path / "log.csv"
    write_episode_log([ep], path)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["image_id", "step", "concept", "location", "answer", "reward", "terminal"]
    assert len(rows) == len(ep)
    assert rows[0]["concept"] == "EX" and rows[0]["location"] == "WHOLE"
    assert rows[-1]["terminal"] == "1"
