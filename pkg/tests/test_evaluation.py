import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from vttqs.environment import EpisodeConfig
from vttqs.errors import InvalidInputError, NumericFailureError
from vttqs.evaluation import (
    BetaPerception,
    episode_budget,
    information_radius,
    perceive,
    reward_table,
    separation_experiment,
    tree_accuracy,
    update_beta,
    write_reward_csv,
)
from vttqs.grading import AssumptionMode, Grade
from vttqs.responders import GROUNDTRUTH, Responder, ResponderKind
from vttqs.strategies import RandomQS, TextbookQS, train_decision_tree

SA = AssumptionMode.SIMPLE_A


def radius_oracle(params):
    """Information radius by adaptive quadrature on scipy beta densities."""
    dists = [stats.beta(a, b) for a, b in params]

    def kl_to_mix(d):
        def f(x):
            p = d.pdf(x)
            m = np.mean([e.pdf(x) for e in dists])
            return p * np.log(p / m) if p > 0 else 0.0

        return integrate.quad(f, 0, 1, limit=200, points=[0.5])[0]

    return float(np.mean([kl_to_mix(d) for d in dists]))


@pytest.mark.parametrize(
    "params", [[(3, 5), (5, 3)], [(2, 2), (10, 4), (4, 10)], [(20, 10), (12, 18)], [(1, 1), (6, 2)]]
)
def test_radius_matches_quadrature(params):
    got = information_radius([BetaPerception(a, b) for a, b in params])
    assert got == pytest.approx(radius_oracle(params), rel=1e-3)


def test_radius_grid_convergence_on_sharp_pair():
    pair = [BetaPerception(50, 2), BetaPerception(2, 50)]
    r10, r12 = information_radius(pair, 2**10), information_radius(pair, 2**12)
    assert abs(r10 - r12) / r12 < 1e-3
    # disjoint-ish densities approach the log 2 ceiling
    assert 0.6 < r12 <= np.log(2) + 1e-9


@pytest.mark.parametrize("k", [2, 3, 5])
def test_identical_perceptions_have_zero_radius(k):
    assert information_radius([BetaPerception(7, 3)] * k) < 1e-9


def test_radius_edge_cases():
    assert information_radius([BetaPerception(3, 4)]) == 0.0
    with pytest.raises(InvalidInputError):
        information_radius([])
    with pytest.raises(NumericFailureError):
        information_radius([BetaPerception(0, 1), BetaPerception(1, 1)])


@given(st.lists(st.tuples(st.floats(1, 60), st.floats(1, 60)), min_size=2, max_size=4))
def test_radius_is_bounded(params):
    r = information_radius([BetaPerception(a, b) for a, b in params], 1024)
    # the log k ceiling is exact only in the limit; near-disjoint peaked
    # densities leave ~5e-5 of quadrature error on a finite grid
    assert -1e-12 <= r <= np.log(len(params)) + 1e-3


@given(st.lists(st.booleans(), max_size=200))
def test_update_beta_counts(stream):
    p = BetaPerception()
    for o in stream:
        p = update_beta(p, o)
    c = sum(stream)
    assert (p.alpha, p.beta) == (1 + c, 1 + len(stream) - c)
    assert perceive(stream) == p
    assert p.n_updates == len(stream)


def test_reward_table_textbook_healthy(splits):
    test = splits[2]
    t = reward_table(TextbookQS(SA), GROUNDTRUTH, test, EpisodeConfig())
    assert t.reward[Grade.G0] == 1.0 and t.questions[Grade.G0] == 1.0
    assert sum(t.counts.values()) == len(test)
    assert t.cell(Grade.G0) == "1.000 [1.00]"


def test_empty_grade_cell_is_blank(splits):
    healthy = [i for i in splits[2] if i.grade is Grade.G0]
    t = reward_table(TextbookQS(SA), GROUNDTRUTH, healthy, EpisodeConfig())
    assert t.reward[Grade.G2] is None and t.cell(Grade.G2) == ""
    with pytest.raises(InvalidInputError):
        reward_table(TextbookQS(SA), GROUNDTRUTH, [], EpisodeConfig())


def test_reward_csv_layout(tmp_path, splits):
    t = reward_table(RandomQS(), GROUNDTRUTH, splits[2], EpisodeConfig(), seed=1)
    p = tmp_path / "r.csv"
    write_reward_csv([("random", "groundtruth", t)], p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["qs", "mue", "grade0", "grade1", "grade2", "total"]
    assert rows[1][:2] == ["random", "groundtruth"] and rows[1][5] == t.cell(None)


def test_separation_report(splits, tmp_path):
    test = splits[2]
    mues = [Responder(k, 0.7, 11, SA, name=k.value).calibrated(test) for k in
            (ResponderKind.RANDOM, ResponderKind.REASONABLE, ResponderKind.UNREASONABLE)]
    rep = separation_experiment([RandomQS(), TextbookQS(SA)], mues, test, EpisodeConfig(), seed=2, grid_points=1024)
    assert rep.n_u == min(rep.question_totals.values())
    assert all(p.n_updates == rep.n_u for p in rep.perceptions.values())
    doc = json.loads(rep.to_json())
    assert doc["n_u"] == rep.n_u and set(doc["strategies"]) == {"random", "textbook"}
    single = separation_experiment([TextbookQS(SA)], mues[:1], test, EpisodeConfig(), grid_points=1024)
    assert single.radius["textbook"] == 0.0
    rep.write_beta_curves(tmp_path / "c.csv")
    header = open(tmp_path / "c.csv").readline().strip().split(",")
    assert header[0] == "x" and len(header) == 7


def test_budget_and_tree_accuracy(splits):
    train, _, test = splits
    budget = episode_budget(TextbookQS(SA), train, EpisodeConfig())
    assert len(budget) == len(train)
    model = train_decision_tree(budget)
    assert tree_accuracy(model, budget) == 1.0
    assert tree_accuracy(model, episode_budget(TextbookQS(SA), test, EpisodeConfig())) >= 0.85
