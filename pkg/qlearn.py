"""
Pushing-point selection learning: a small fully connected value network with
hand-written backpropagation, experience replay, a target network, Huber
loss and epsilon-greedy exploration.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any, Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config import TrainConfig

logger = logging.getLogger(__name__)

LAYER_DIMS = (3, 10, 10, 6)
PARAM_COUNTS = (40, 110, 66)
N_ACTIONS = LAYER_DIMS[-1]


class QNet:
    """3-10-10-6 network, rectifier on the hidden layers, affine output."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray], step: int = 0):
        dims = (weights[0].shape[1],) + tuple(w.shape[0] for w in weights)
        if dims != LAYER_DIMS:
            raise ValueError(f"network dims must be {LAYER_DIMS}, got {dims}")
        for w, b in zip(weights, biases, strict=True):
            if b.shape != (w.shape[0],):
                raise ValueError("bias shape does not match its layer")
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        self.step = step
        counts = tuple(w.size + b.size for w, b in zip(self.weights, self.biases, strict=True))
        assert counts == PARAM_COUNTS, f"unexpected parameter counts {counts}"

    @classmethod
    def initialize(cls, seed: int) -> "QNet":
        """Uniform in +-1/sqrt(fan_in) per layer."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(LAYER_DIMS[:-1], LAYER_DIMS[1:], strict=True):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls) -> "QNet":
        return cls(
            [np.zeros((o, i)) for i, o in zip(LAYER_DIMS[:-1], LAYER_DIMS[1:], strict=True)],
            [np.zeros(o) for o in LAYER_DIMS[1:]],
        )

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases, strict=True) for p in pair]

    @property
    def param_counts(self) -> tuple[int, ...]:
        return tuple(w.size + b.size for w, b in zip(self.weights, self.biases, strict=True))

    def copy(self) -> "QNet":
        return QNet([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.step)

    def _forward(self, s: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        a = s
        activations = [a]
        for layer, (w, b) in enumerate(zip(self.weights, self.biases, strict=True)):
            z = a @ w.T + b
            a = np.maximum(z, 0.0) if layer < len(self.weights) - 1 else z
            activations.append(a)
        return activations, a

    def forward(self, s) -> np.ndarray:
        """Q-values for one state (3,) -> (6,) or a batch (B, 3) -> (B, 6)."""
        s = np.asarray(s, dtype=float)
        _, out = self._forward(np.atleast_2d(s))
        return out[0] if s.ndim == 1 else out

    def backward(self, states, actions, targets) -> tuple[float, list[np.ndarray]]:
        """
        Mean Huber loss of Q(s, c) against targets and its parameter gradients.

        Only the selected action's output carries gradient.

        Returns:
            (loss, gradients ordered like ``params``)
        """
        states = np.atleast_2d(np.asarray(states, dtype=float))
        actions = np.asarray(actions, dtype=int)
        targets = np.asarray(targets, dtype=float)
        n = len(states)
        if n == 0:
            raise ValueError("backward needs a non-empty batch")

        activations, out = self._forward(states)
        delta = out[np.arange(n), actions] - targets
        loss = float(np.mean(huber(delta)))

        d_out = np.zeros_like(out)
        d_out[np.arange(n), actions] = huber_grad(delta) / n

        grads: list[np.ndarray] = []
        upstream = d_out
        for layer in reversed(range(len(self.weights))):
            a_in = activations[layer]
            grads.append(upstream.sum(axis=0))  # bias
            grads.append(upstream.T @ a_in)  # weight
            if layer > 0:
                upstream = (upstream @ self.weights[layer]) * (activations[layer] > 0.0)
        grads.reverse()
        return loss, grads


def forward(net: QNet, s) -> np.ndarray:
    return net.forward(s)


def huber(delta):
    """0.5 d^2 for |d| < 1, |d| - 0.5 otherwise (elementwise)."""
    d = np.asarray(delta, dtype=float)
    out = np.where(np.abs(d) < 1.0, 0.5 * d * d, np.abs(d) - 0.5)
    return float(out) if out.ndim == 0 else out


def huber_grad(delta) -> np.ndarray:
    d = np.asarray(delta, dtype=float)
    return np.where(np.abs(d) < 1.0, d, np.sign(d))


@dataclass(frozen=True, eq=False)
class Transition:
    s: np.ndarray
    c_idx: int
    r: float
    s_next: np.ndarray
    done: bool

    def __post_init__(self) -> None:
        if not 0 <= self.c_idx < N_ACTIONS:
            raise ValueError(f"action index must be in [0, {N_ACTIONS}), got {self.c_idx}")
        if not math.isfinite(self.r):
            raise ValueError("reward must be finite")


def q_target(net_target: QNet, t: Transition, gamma: float) -> float:
    """r if terminal, else r + gamma * max_c Q_target(s', c)."""
    if t.done:
        return float(t.r)
    return float(t.r + gamma * np.max(net_target.forward(t.s_next)))


def q_targets(net_target: QNet, rewards, next_states, dones, gamma: float) -> np.ndarray:
    best = np.max(net_target.forward(np.atleast_2d(next_states)), axis=1)
    return np.asarray(rewards, dtype=float) + gamma * best * (1.0 - np.asarray(dones, dtype=float))


def select_point(net: QNet, s, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy action; greedy ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(N_ACTIONS))
    return int(np.argmax(net.forward(s)))


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self.rng = np.random.default_rng(seed)
        self.states = np.zeros((capacity, 3))
        self.actions = np.zeros(capacity, dtype=int)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, 3))
        self.dones = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, t: Transition) -> None:
        i = self._next
        self.states[i] = t.s
        self.actions[i] = t.c_idx
        self.rewards[i] = t.r
        self.next_states[i] = t.s_next
        self.dones[i] = t.done
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def __iter__(self):
        """Stored transitions, oldest first."""
        start = self._next if self._size == self.capacity else 0
        for k in range(self._size):
            i = (start + k) % self.capacity
            yield Transition(self.states[i].copy(), int(self.actions[i]), float(self.rewards[i]),
                             self.next_states[i].copy(), bool(self.dones[i]))

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        return self.rng.integers(0, self._size, size=batch_size)

    def sample(self, batch_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        idx = self.sample_indices(batch_size)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx]


class SgdMomentum:
    """SGD with momentum and decoupled multiplicative weight decay."""

    def __init__(self, lr: float, momentum: float, weight_decay: float):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: list[np.ndarray] | None = None

    def step(self, net: QNet, grads: list[np.ndarray]) -> None:
        params = net.params
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        shrink = 1.0 - self.lr * self.weight_decay
        for p, g, v in zip(params, grads, self.velocity, strict=True):
            v *= self.momentum
            v += g
            p *= shrink
            p -= self.lr * v
        net.step += 1


class DecisionEnv(Protocol):
    rounds: int

    def reset(self) -> np.ndarray: ...

    def act(self, action: int) -> Any: ...


class EpisodeLog(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    episode: int
    return_: float = Field(alias="return")
    success: bool
    rounds: int
    epsilon: float
    mean_loss: float | None
    plant_steps: int


def epsilon_at(cfg: TrainConfig, episode: int) -> float:
    """Linear decay from eps_start to eps_end over eps_decay_episodes."""
    frac = min(1.0, episode / cfg.eps_decay_episodes)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def train(env_factory: Callable[[int], DecisionEnv], cfg: TrainConfig) -> tuple[QNet, list[EpisodeLog]]:
    """
    Train the pushing-point selector with DQN.

    Args:
        env_factory: builds an environment from a seed; its ``act`` runs one decision round
        cfg: training hyperparameters

    Returns:
        (online network, per-episode log)

    Raises:
        FloatingPointError: the loss became non-finite
    """
    net = QNet.initialize(cfg.seed)
    target = net.copy()
    log: list[EpisodeLog] = []
    if cfg.episodes == 0:
        return net, log

    env = env_factory(cfg.seed)
    buffer = ReplayBuffer(cfg.buffer_capacity, seed=cfg.seed + 1)
    optimizer = SgdMomentum(cfg.lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 2)
    grad_steps = 0

    for episode in range(cfg.episodes):
        epsilon = epsilon_at(cfg, episode)
        state = env.reset()
        episode_return = 0.0
        losses: list[float] = []
        plant_steps = 0
        success = False
        done = False

        while not done:
            action = select_point(net, state, epsilon, rng)
            result = env.act(action)
            buffer.push(result.transition)
            episode_return += result.transition.r
            plant_steps += result.outcome.steps
            success = result.success
            done = result.done
            state = result.transition.s_next

            if len(buffer) >= cfg.batch_size:
                for _ in range(cfg.updates_per_round):
                    s, a, r, s_next, d = buffer.sample(cfg.batch_size)
                    y = q_targets(target, r, s_next, d, cfg.gamma)
                    loss, grads = net.backward(s, a, y)
                    if not math.isfinite(loss):
                        raise FloatingPointError(f"non-finite loss at episode {episode}")
                    optimizer.step(net, grads)
                    losses.append(loss)
                    grad_steps += 1
                    if grad_steps % cfg.target_sync_every == 0:
                        target = net.copy()

        entry = EpisodeLog(
            episode=episode,
            return_=episode_return,
            success=success,
            rounds=env.rounds,
            epsilon=epsilon,
            mean_loss=float(np.mean(losses)) if losses else None,
            plant_steps=plant_steps,
        )
        log.append(entry)
        logger.info(
            f"[TRAIN] episode {episode}: return {episode_return:.2f}, success {success}, "
            f"rounds {env.rounds}, eps {epsilon:.3f}, loss {entry.mean_loss}"
        )

    return net, log
