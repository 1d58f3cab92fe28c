"""Baseline questioning strategies, the CART tree baseline, and tree unrolling."""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import numpy as np

from .domain import (
    ALL_QUESTIONS,
    N_QUESTIONS,
    QUADRANTS,
    Concept,
    Location,
    Question,
    Response,
    StateMatrix,
)
from .errors import ContractViolationError, ExhaustedError, InconsistentStateError, InvalidInputError
from .grading import AssumptionMode, Grade, is_terminal, terminal_grade


class QuestioningStrategy(Protocol):
    name: str
    stochastic: bool

    def next_question(
        self, state: StateMatrix, asked: frozenset[Question], rng: np.random.Generator
    ) -> Question: ...


def unasked_questions(asked: Iterable[Question]) -> list[Question]:
    asked = set(asked)
    free = [q for q in ALL_QUESTIONS if q not in asked]
    if not free:
        raise ExhaustedError("all questions have been asked")
    return free


def random_qs_next(s: StateMatrix, asked: frozenset[Question], rng: np.random.Generator) -> Question:
    free = unasked_questions(asked)
    return free[int(rng.integers(len(free)))]


@dataclass(frozen=True)
class RandomQS:
    name: str = "random"
    stochastic: bool = True

    def next_question(self, state, asked, rng):
        return random_qs_next(state, asked, rng)


_EX_WHOLE = Question(Concept.EX, Location.WHOLE)


def _first_unasked(concept: Concept, asked) -> Question | None:
    for loc in QUADRANTS:
        q = Question(concept, loc)
        if q not in asked:
            return q
    return None


def textbook_qs_next(s: StateMatrix, asked: frozenset[Question], mode: AssumptionMode) -> Question:
    """Clinical-reasoning order: exudate, fovea, exudate at the fovea, disc.

    Quadrants are probed Q1 to Q4 until a Yes. Under extra-U-A the fovea and
    disc are localized even for healthy images. Contradictory answers from a
    noisy responder fall through to the remaining exudate quadrants, then to
    any unasked question.
    """
    if terminal_grade(s, mode) is not None:
        raise ContractViolationError("textbook strategy called on a terminal state")
    asked = set(asked)
    if _EX_WHOLE not in asked:
        return _EX_WHOLE
    ex_seen = any(s[Question(Concept.EX, l)] == 1.0 for l in Location)
    localize = ex_seen or mode is AssumptionMode.EXTRA_UA

    fovea = next((q for q in QUADRANTS if s[Question(Concept.FOV, q)] == 1.0), None)
    if localize and fovea is None:
        q = _first_unasked(Concept.FOV, asked)
        if q is not None:
            return q
    if ex_seen and fovea is not None:
        q = Question(Concept.EX, fovea)
        if q not in asked:
            return q
    od_found = any(s[Question(Concept.OD, q)] == 1.0 for q in QUADRANTS)
    if localize and not od_found:
        q = _first_unasked(Concept.OD, asked)
        if q is not None:
            return q
    q = _first_unasked(Concept.EX, asked)
    if q is not None:
        return q
    return unasked_questions(asked)[0]


@dataclass(frozen=True)
class TextbookQS:
    mode: AssumptionMode = AssumptionMode.SIMPLE_A
    name: str = "textbook"
    stochastic: bool = False

    def next_question(self, state, asked, rng=None):
        return textbook_qs_next(state, asked, self.mode)


# ---------------------------------------------------------------------------
# CART classification tree over state vectors
# ---------------------------------------------------------------------------

SPLIT_THRESHOLDS = (0.25, 0.75)


@dataclass
class TreeNode:
    prediction: Grade
    n_samples: int
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class DecisionTreeModel:
    root: TreeNode
    max_depth: int | None = None

    def predict_one(self, x: Sequence[float]) -> Grade:
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.prediction

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.array([int(self.predict_one(row)) for row in np.atleast_2d(X)])

    @property
    def depth(self) -> int:
        def _d(n: TreeNode) -> int:
            return 0 if n.is_leaf else 1 + max(_d(n.left), _d(n.right))

        return _d(self.root)

    def nodes(self) -> list[TreeNode]:
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            if not n.is_leaf:
                stack.extend((n.right, n.left))
        return out


def gini(y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    p = np.bincount(y, minlength=3) / len(y)
    return 1.0 - float(np.sum(p**2))


def _majority(y: np.ndarray) -> Grade:
    # ties resolve to the lowest grade
    return Grade(int(np.argmax(np.bincount(y, minlength=3))))


def _best_split(X: np.ndarray, y: np.ndarray) -> tuple[int, float, float] | None:
    parent = gini(y)
    n = len(y)
    best = None
    for f in range(X.shape[1]):
        col = X[:, f]
        for t in SPLIT_THRESHOLDS:
            mask = col <= t
            nl = int(mask.sum())
            if nl == 0 or nl == n:
                continue
            child = (nl * gini(y[mask]) + (n - nl) * gini(y[~mask])) / n
            gain = parent - child
            if best is None or gain > best[2] + 1e-12:
                best = (f, t, gain)
    if best is None or best[2] <= 1e-12:
        return None
    return best


def train_decision_tree(
    budget: Sequence[tuple[StateMatrix, Grade]],
    max_depth: int | None = None,
    min_samples_leaf: int = 1,
) -> DecisionTreeModel:
    """Greedy CART on state vectors, Gini criterion, splits at 0.25 / 0.75."""
    if not budget:
        raise InvalidInputError("empty training budget")
    X = np.array([s.vector() for s, _ in budget])
    y = np.array([int(g) for _, g in budget])

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        node = TreeNode(_majority(y[idx]), len(idx))
        if (max_depth is not None and depth >= max_depth) or len(idx) < 2 * min_samples_leaf:
            return node
        split = _best_split(X[idx], y[idx])
        if split is None:
            return node
        f, t, _ = split
        mask = X[idx, f] <= t
        if mask.sum() < min_samples_leaf or (~mask).sum() < min_samples_leaf:
            return node
        node.feature, node.threshold = f, t
        node.left = grow(idx[mask], depth + 1)
        node.right = grow(idx[~mask], depth + 1)
        return node

    return DecisionTreeModel(grow(np.arange(len(y)), 0), max_depth)


def tree_qs_next(
    model: DecisionTreeModel,
    s: StateMatrix,
    asked: frozenset[Question],
    mode: AssumptionMode,
    rng: np.random.Generator,
) -> Question:
    node = model.root
    while not node.is_leaf:
        q = ALL_QUESTIONS[node.feature]
        if q not in asked:
            return q
        node = node.left if s.values[node.feature] <= node.threshold else node.right
    # the tree believes it can classify; keep asking at random until diagnosable
    return random_qs_next(s, asked, rng)


@dataclass
class TreeQS:
    model: DecisionTreeModel
    mode: AssumptionMode = AssumptionMode.SIMPLE_A
    name: str = "dt"
    stochastic: bool = True

    def next_question(self, state, asked, rng):
        return tree_qs_next(self.model, state, asked, self.mode, rng)


# ---------------------------------------------------------------------------
# Unrolling a strategy into a binary question tree
# ---------------------------------------------------------------------------


@dataclass
class QSTreeNode:
    state: StateMatrix
    question: Question | None = None
    grade: Grade | None = None
    no: "QSTreeNode | None" = None
    yes: "QSTreeNode | None" = None
    depth: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.question is None


def _modal_question(qs: QuestioningStrategy, s: StateMatrix, rollouts: int, seed: int) -> Question:
    counts: Counter[Question] = Counter()
    for k in range(rollouts):
        rng = np.random.default_rng([seed, k])
        counts[qs.next_question(s, s.asked, rng)] += 1
    top = max(counts.values())
    return min(q for q, c in counts.items() if c == top)


def unroll_qs_to_tree(
    qs: QuestioningStrategy,
    mode: AssumptionMode,
    depth: int,
    rollouts: int = 32,
    seed: int = 0,
) -> QSTreeNode:
    """Expand a strategy breadth-first over hypothetical answers.

    Left child is the "No" branch, right child the "Yes" branch. Diagnosable
    states become grade leaves; answer combinations no valid image admits are
    dropped. Stochastic strategies are summarized by their modal question over
    ``rollouts`` draws.
    """
    if depth < 1:
        raise InvalidInputError("depth must be >= 1")
    root = QSTreeNode(StateMatrix.empty())
    queue = deque([root])
    while queue:
        node = queue.popleft()
        try:
            node.grade = is_terminal(node.state, mode)
        except InconsistentStateError:
            continue
        if node.grade is not None or node.depth >= depth or not _has_unasked(node.state):
            continue
        if qs.stochastic:
            q = _modal_question(qs, node.state, rollouts, seed)
        else:
            q = qs.next_question(node.state, node.state.asked, np.random.default_rng(seed))
        if q in node.state.asked:
            raise ContractViolationError(f"{qs.name} repeated {q}")
        node.question = q
        for attr, r in (("no", Response.NO), ("yes", Response.YES)):
            child_state = node.state.with_answer(q, r)
            try:
                is_terminal(child_state, mode)
            except InconsistentStateError:
                continue
            child = QSTreeNode(child_state, depth=node.depth + 1)
            setattr(node, attr, child)
            queue.append(child)
    return root


def _has_unasked(s: StateMatrix) -> bool:
    return len(s.asked) < N_QUESTIONS


def tree_to_dot(root: QSTreeNode, title: str = "qs") -> str:
    """Graphviz DOT text: boxes "CONCEPT\\nREGION", circles for grade leaves."""
    lines = [f'digraph "{title}" {{', "  node [fontname=helvetica];"]
    ids: dict[int, str] = {}
    queue = deque([root])
    counter = 0
    while queue:
        node = queue.popleft()
        nid = f"n{counter}"
        counter += 1
        ids[id(node)] = nid
        if node.question is not None:
            region = node.question.location.label
            lines.append(f'  {nid} [shape=box, label="{node.question.concept.name}\\n{region}"];')
        elif node.grade is not None:
            lines.append(f'  {nid} [shape=circle, label="{int(node.grade)}"];')
        else:
            lines.append(f'  {nid} [shape=point, label=""];')
        for child in (node.no, node.yes):
            if child is not None:
                queue.append(child)
    queue = deque([root])
    while queue:
        node = queue.popleft()
        for child, label in ((node.no, "No"), (node.yes, "Yes")):
            if child is None:
                continue
            lines.append(f'  {ids[id(node)]} -> {ids[id(child)]} [label="{label}"];')
            queue.append(child)
    lines.append("}")
    return "\n".join(lines) + "\n"
