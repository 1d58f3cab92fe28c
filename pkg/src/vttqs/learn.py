"""Q-network, masked epsilon-greedy policy, replay memory, MC and Q-learning training."""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import ALL_QUESTIONS, N_QUESTIONS, Question, StateMatrix
from .environment import Episode, EpisodeConfig, discounted_return, run_episode, step
from .errors import ExhaustedError, InvalidInputError, NumericFailureError
from .grading import GroundTruthImage
from .responders import GROUNDTRUTH, Responder

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "vttqs-qnetwork"
CHECKPOINT_VERSION = 1
ORDERING_TAG = "concept-major:EX,OD,FOV/location-minor:WHOLE,Q1,Q2,Q3,Q4"


class QNetwork:
    """Dense ReLU network mapping a flattened state to one value per question."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        weights = [np.asarray(w, dtype=float) for w in weights]
        biases = [np.asarray(b, dtype=float) for b in biases]
        for w, b in zip(weights, biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise InvalidInputError("weight/bias shape mismatch")
        for w0, w1 in zip(weights, weights[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise InvalidInputError("layer sizes do not chain")
        # one flat parameter vector; per-layer arrays are views into it
        self.theta = np.concatenate([p.ravel() for pair in zip(weights, biases) for p in pair])
        self.weights, self.biases = [], []
        offset = 0
        for w, b in zip(weights, biases):
            self.weights.append(self.theta[offset : offset + w.size].reshape(w.shape))
            offset += w.size
            self.biases.append(self.theta[offset : offset + b.size])
            offset += b.size

    @classmethod
    def init(
        cls,
        sizes: Sequence[int] = (N_QUESTIONS, 128, 64, N_QUESTIONS),
        rng: np.random.Generator | int = 0,
        zero_last: bool = False,
    ) -> "QNetwork":
        rng = np.random.default_rng(rng)
        ws, bs = [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            last = i == len(sizes) - 2
            if last and zero_last:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = np.sqrt(6.0 / fan_in) if not last else np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            ws.append(w)
            bs.append(np.zeros(fan_out))
        return cls(ws, bs)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def flatten(self, grads: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([g.ravel() for g in grads])

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Outputs for a batch plus the layer activations needed by backprop."""
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return h, acts

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.forward(np.atleast_2d(X))[0]

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
        grads: list[np.ndarray] = []
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = acts[i]
            grads.append(g.sum(axis=0))  # bias
            grads.append(h_in.T @ g)  # weight
            if i > 0:
                g = (g @ self.weights[i].T) * (acts[i] > 0)
        grads.reverse()  # -> [w0, b0, w1, b1, ...]
        return grads


def predict_q(net: QNetwork, s: StateMatrix | np.ndarray) -> np.ndarray:
    x = s.vector() if isinstance(s, StateMatrix) else np.asarray(s, dtype=float)
    if not np.isfinite(net.theta).all():
        raise NumericFailureError("network weights are not finite")
    return net(x)[0]


def regression_loss_and_grad(
    net: QNetwork, X: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Mean squared error between Q(s, a) and fixed targets, with its gradient."""
    out, acts = net.forward(X)
    n = len(actions)
    rows = np.arange(n)
    diff = out[rows, actions] - targets
    loss = float(np.mean(diff**2))
    grad_out = np.zeros_like(out)
    grad_out[rows, actions] = 2.0 * diff / n
    return loss, net.backward(acts, grad_out)


def mc_targets(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Return-to-go G_t for every step of an episode."""
    g = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        g[t] = running
    return g


def masked_max(qvals: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Row-wise max of Q over unasked actions (state entry 0); 0 when none remain."""
    masked = np.where(states == 0.0, qvals, -np.inf)
    best = masked.max(axis=1)
    return np.where(np.isfinite(best), best, 0.0)


def q_learning_targets(
    net: QNetwork, rewards: np.ndarray, next_states: np.ndarray, terminal: np.ndarray, gamma: float
) -> np.ndarray:
    """R + gamma * max over unasked a' of Q(s', a'); just R at terminal states.

    Computed from the current weights and then held fixed during the update.
    """
    boot = masked_max(net(next_states), next_states)
    return rewards + gamma * np.where(terminal, 0.0, boot)


def q_learning_loss_and_grad(net: QNetwork, batch: "Batch", gamma: float) -> tuple[float, list[np.ndarray]]:
    targets = q_learning_targets(net, batch.rewards, batch.next_states, batch.terminal, gamma)
    return regression_loss_and_grad(net, batch.states, batch.actions, targets)


def greedy_masked_action(
    qvals: np.ndarray,
    asked: frozenset[Question] | set[Question],
    epsilon: float,
    rng: np.random.Generator,
) -> Question:
    """Epsilon-greedy over unasked questions; greedy ties go to the lowest index."""
    free = [q.index for q in ALL_QUESTIONS if q not in asked]
    if not free:
        raise ExhaustedError("all questions have been asked")
    if epsilon > 0.0 and rng.random() < epsilon:
        return ALL_QUESTIONS[free[int(rng.integers(len(free)))]]
    vals = np.asarray(qvals)[free]
    return ALL_QUESTIONS[free[int(np.argmax(vals))]]


@dataclass
class RLQS:
    net: QNetwork
    epsilon: float = 0.0
    name: str = "rl"

    @property
    def stochastic(self) -> bool:
        return self.epsilon > 0.0

    def next_question(self, state, asked, rng):
        return greedy_masked_action(predict_q(self.net, state), asked, self.epsilon, rng)


class Adam:
    """Adaptive-moment optimizer over a flat parameter vector (updated in place)."""

    def __init__(self, size: int, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class PolicyConfig:
    epsilon: float = 1.0
    epsilon_decay: float = 0.9
    epsilon_floor: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0 or not 0.0 <= self.epsilon_floor <= 1.0:
            raise InvalidInputError("epsilon and epsilon_floor must lie in [0, 1]")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise InvalidInputError("epsilon_decay must lie in (0, 1]")
        if self.epsilon_floor > self.epsilon:
            raise InvalidInputError("epsilon_floor cannot exceed the starting epsilon")

    def schedule(self, epochs: int) -> list[float]:
        eps, out = self.epsilon, []
        for _ in range(epochs):
            out.append(eps)
            eps = max(eps * self.epsilon_decay, self.epsilon_floor)
        return out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    gamma: float = 0.8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: tuple[int, ...] = (128, 64)
    zero_last: bool = False  # start the output layer at zero (all Q-values 0)
    burn_in: int = 15  # model selection only considers epochs after this one
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminal: np.ndarray


class ReplayMemory:
    """Fixed-capacity FIFO of (s, a, r, s', terminal) tuples."""

    def __init__(self, capacity: int = 500, batch_size: int = 8):
        if capacity < 1 or batch_size < 1:
            raise InvalidInputError("capacity and batch_size must be positive")
        self.capacity = capacity
        self.batch_size = batch_size
        self._buf: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._buf)

    def push(self, state, action: int, reward: float, next_state, terminal: bool) -> None:
        self._buf.append((np.asarray(state, float), int(action), float(reward), np.asarray(next_state, float), bool(terminal)))

    def oldest(self):
        return self._buf[0]

    def sample(self, rng: np.random.Generator, size: int | None = None) -> Batch:
        size = min(size or self.batch_size, len(self._buf))
        if size == 0:
            raise InvalidInputError("cannot sample from an empty replay memory")
        idx = rng.choice(len(self._buf), size=size, replace=False)
        items = [self._buf[i] for i in idx]
        return Batch(
            np.stack([it[0] for it in items]),
            np.array([it[1] for it in items]),
            np.array([it[2] for it in items]),
            np.stack([it[3] for it in items]),
            np.array([it[4] for it in items]),
        )


@dataclass
class TrainResult:
    network: QNetwork
    best_epoch: int
    best_validation_reward: float
    log: list[tuple[int, float, float]] = field(default_factory=list)  # (epoch, epsilon, val reward)


def validation_reward(net: QNetwork, images: Sequence[GroundTruthImage], env: EpisodeConfig) -> float:
    if not images:
        return float("nan")
    qs = RLQS(net)
    return float(np.mean([run_episode(qs, GROUNDTRUTH, img, env, 0).return_g for img in images]))


def _check_finite(loss: float, net: QNetwork) -> None:
    if not np.isfinite(loss) or not np.isfinite(net.theta).all():
        raise NumericFailureError("training diverged (non-finite loss or weights)")


def _select(
    net: QNetwork, epoch: int, val: float, cfg: TrainConfig, best: tuple[float, int, QNetwork | None]
) -> tuple[float, int, QNetwork | None]:
    eligible = epoch > cfg.burn_in or cfg.epochs <= cfg.burn_in
    if eligible and (best[2] is None or val > best[0]):
        return (val, epoch, net.copy())
    return best


def _play(
    net: QNetwork,
    img: GroundTruthImage,
    env: EpisodeConfig,
    epsilon: float,
    rng: np.random.Generator,
    mue: Responder,
    on_step=None,
) -> Episode:
    s = StateMatrix.empty()
    asked: frozenset[Question] = frozenset()
    transitions = []
    while len(transitions) < env.max_questions:
        q = greedy_masked_action(net(s.vector())[0], asked, epsilon, rng)
        tr = step(s, asked, q, mue.answer(img, q), env.mode)
        transitions.append(tr)
        if on_step is not None:
            on_step(tr)
        if tr.terminal:
            break
        s, asked = tr.next_state, asked | {q}
    return Episode(tuple(transitions), discounted_return((t.reward for t in transitions), env.gamma), img.image_id)


def _warn_burn_in(cfg: TrainConfig) -> None:
    if cfg.epochs <= cfg.burn_in:
        log.warning("epochs (%d) <= burn-in (%d): selecting over all epochs", cfg.epochs, cfg.burn_in)


def train_mc(
    train_images: Sequence[GroundTruthImage],
    val_images: Sequence[GroundTruthImage],
    cfg: TrainConfig = TrainConfig(),
    pol: PolicyConfig = PolicyConfig(),
    env: EpisodeConfig = EpisodeConfig(),
    mue: Responder = GROUNDTRUTH,
) -> TrainResult:
    """Monte Carlo learning: one regression step on each finished episode's returns."""
    if not train_images:
        raise InvalidInputError("training split is empty")
    _warn_burn_in(cfg)
    rng = np.random.default_rng(cfg.seed)
    net = QNetwork.init((N_QUESTIONS, *cfg.hidden, N_QUESTIONS), rng, cfg.zero_last)
    opt = Adam(net.theta.size, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    best: tuple[float, int, QNetwork | None] = (-np.inf, 0, None)
    history = []
    for epoch, eps in enumerate(pol.schedule(cfg.epochs), start=1):
        for i in rng.permutation(len(train_images)):
            ep = _play(net, train_images[i], env, eps, rng, mue)
            X = np.stack([t.state.vector() for t in ep.transitions])
            acts = np.array([t.action.index for t in ep.transitions])
            G = mc_targets([t.reward for t in ep.transitions], env.gamma)
            if env.include_terminal_tuples and ep.terminated:
                term = ep.final_state
                free = [q.index for q in ALL_QUESTIONS if term.values[q.index] == 0.0]
                if free:
                    X = np.vstack([X, term.vector()])
                    acts = np.append(acts, free[int(rng.integers(len(free)))])
                    G = np.append(G, 0.0)
            loss, grads = regression_loss_and_grad(net, X, acts, G)
            _check_finite(loss, net)
            opt.step(net.theta, net.flatten(grads))
        val = validation_reward(net, val_images, env)
        history.append((epoch, eps, val))
        best = _select(net, epoch, val, cfg, best)
    return TrainResult(best[2], best[1], best[0], history)


def train_qlearning(
    train_images: Sequence[GroundTruthImage],
    val_images: Sequence[GroundTruthImage],
    cfg: TrainConfig = TrainConfig(),
    pol: PolicyConfig = PolicyConfig(),
    replay: ReplayMemory | None = None,
    env: EpisodeConfig = EpisodeConfig(include_terminal_tuples=True),
    mue: Responder = GROUNDTRUTH,
) -> TrainResult:
    """Q-learning with experience replay: one minibatch step per question posed."""
    if not train_images:
        raise InvalidInputError("training split is empty")
    _warn_burn_in(cfg)
    replay = replay if replay is not None else ReplayMemory()
    rng = np.random.default_rng(cfg.seed)
    net = QNetwork.init((N_QUESTIONS, *cfg.hidden, N_QUESTIONS), rng, cfg.zero_last)
    opt = Adam(net.theta.size, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    best: tuple[float, int, QNetwork | None] = (-np.inf, 0, None)
    history = []

    def update():
        loss, grads = q_learning_loss_and_grad(net, replay.sample(rng), cfg.gamma)
        _check_finite(loss, net)
        opt.step(net.theta, net.flatten(grads))

    def on_step(tr):
        replay.push(tr.state.vector(), tr.action.index, tr.reward, tr.next_state.vector(), tr.terminal)
        update()

    for epoch, eps in enumerate(pol.schedule(cfg.epochs), start=1):
        for i in rng.permutation(len(train_images)):
            ep = _play(net, train_images[i], env, eps, rng, mue, on_step)
            if env.include_terminal_tuples and ep.terminated:
                term = ep.final_state.vector()
                free = np.flatnonzero(term == 0.0)
                if len(free):
                    replay.push(term, int(free[rng.integers(len(free))]), 0.0, term, True)
                    update()
        val = validation_reward(net, val_images, env)
        history.append((epoch, eps, val))
        best = _select(net, epoch, val, cfg, best)
    return TrainResult(best[2], best[1], best[0], history)


def save_checkpoint(net: QNetwork, path: str | Path, meta: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "ordering": ORDERING_TAG,
        "sizes": list(net.sizes),
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> QNetwork:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidInputError(f"{path}: not a version-{CHECKPOINT_VERSION} Q-network checkpoint")
    if doc.get("ordering") != ORDERING_TAG:
        raise InvalidInputError(f"{path}: question ordering tag mismatch")
    sizes = doc["sizes"]
    if sizes[0] != N_QUESTIONS or sizes[-1] != N_QUESTIONS:
        raise InvalidInputError(f"{path}: input/output sizes must be {N_QUESTIONS}")
    if len(doc["weights"]) != len(sizes) - 1 or len(doc["biases"]) != len(sizes) - 1:
        raise InvalidInputError(f"{path}: layer count disagrees with sizes")
    ws, bs = [], []
    for (fi, fo), w, b in zip(zip(sizes, sizes[1:]), doc["weights"], doc["biases"]):
        if len(w) != fi * fo or len(b) != fo:
            raise InvalidInputError(f"{path}: layer {fi}x{fo} has wrong parameter count")
        ws.append(np.array(w, dtype=float).reshape(fi, fo))
        bs.append(np.array(b, dtype=float))
    return QNetwork(ws, bs)
