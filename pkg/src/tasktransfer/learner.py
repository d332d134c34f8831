"""Epsilon-greedy Q-learning with a sparse tabular or a dense neural backend."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Union

import numpy as np

from . import __version__, container
from .gridworld import (
    N_ACTIONS,
    EnvConfig,
    GridState,
    encode_observation,
    reset,
    step,
    state_key,
    task_state_key,
)
from .instructions import Instruction, parse, render
from .nn import Adam, init_dense, mlp_backward, mlp_forward

TABULAR = "tabular"
NEURAL = "neural"
HIDDEN = 128


class NonFiniteLoss(FloatingPointError):
    pass


CorruptSnapshot = container.CorruptContainer
VersionMismatch = container.VersionMismatch


@dataclass(frozen=True)
class TrainConfig:
    """Learner hyperparameters; defaults are desk-scale.

    ``learning_rate=None`` resolves to 0.1 (tabular) or 6.25e-5 (neural).
    ``tabular_key`` chooses the tabular state serialization: ``"task"`` encodes
    objects by whether they match the task's color/kind, ``"absolute"`` by
    their literal color/kind.
    """

    backend: str = TABULAR
    gamma: float = 0.99
    learning_rate: Optional[float] = None
    adam_epsilon: float = 1.5e-4
    target_update_steps: int = 8_000
    warmup_random_steps: int = 1_000
    epsilon_decay_steps: int = 20_000
    epsilon_min: float = 0.01
    batch_size: int = 32
    replay_capacity: int = 100_000
    max_train_steps: int = 300_000
    success_threshold: float = 0.95
    success_window: int = 100
    min_steps_before_convergence: int = 10_000
    log_interval: int = 500
    tabular_key: str = "task"

    def __post_init__(self):
        if self.backend not in (TABULAR, NEURAL):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 < self.epsilon_min <= 1:
            raise ValueError("epsilon_min must be in (0, 1]")
        if self.success_window < 1:
            raise ValueError("success_window must be >= 1")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")
        if self.tabular_key not in ("task", "absolute"):
            raise ValueError(f"unknown tabular_key {self.tabular_key!r}")

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 0.1 if self.backend == TABULAR else 6.25e-5

    def epsilon_at(self, t: int) -> float:
        if self.epsilon_decay_steps <= 0:
            return self.epsilon_min
        frac = min(1.0, t / self.epsilon_decay_steps)
        return 1.0 + frac * (self.epsilon_min - 1.0)


# ---------------------------------------------------------------- Q-functions


class TabularQ:
    """Sparse map ``state key -> 7 action values``; unseen keys read as zeros."""

    backend = TABULAR

    def __init__(self, table: Optional[dict] = None, key: str = "task"):
        self.table: dict[tuple, list[float]] = {} if table is None else table
        self.key = key
        self._featurize = task_state_key if key == "task" else state_key

    def featurize(self, state: GridState) -> tuple:
        return self._featurize(state)

    def values(self, obs) -> list[float]:
        return self.table.get(obs, _ZEROS)

    def copy(self) -> "TabularQ":
        return TabularQ({k: list(v) for k, v in self.table.items()}, self.key)


_ZEROS = [0.0] * N_ACTIONS


class NeuralQ:
    """Dense network: flattened observation -> 128 -> 128 -> 7, ReLU hidden."""

    backend = NEURAL

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params

    @classmethod
    def fresh(cls, obs_size: int, rng: np.random.Generator) -> "NeuralQ":
        return cls(init_dense(rng, [obs_size, HIDDEN, HIDDEN, N_ACTIONS]))

    def featurize(self, state: GridState) -> np.ndarray:
        return encode_observation(state).reshape(-1)

    def forward(self, obs_batch: np.ndarray) -> np.ndarray:
        return mlp_forward(self.params, obs_batch)[0]

    def values(self, obs) -> np.ndarray:
        return self.forward(obs[None, :])[0]

    def copy(self) -> "NeuralQ":
        return NeuralQ({k: v.copy() for k, v in self.params.items()})


QFunction = Union[TabularQ, NeuralQ]


def greedy(values) -> int:
    """Argmax with ties broken by the lowest action index."""
    best, best_v = 0, values[0]
    for a in range(1, N_ACTIONS):
        if values[a] > best_v:
            best, best_v = a, values[a]
    return best


def act_epsilon_greedy(q: QFunction, obs, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    explore, pick = rng.random(2)
    if explore < epsilon:
        return int(pick * N_ACTIONS)
    return greedy(q.values(obs))


@dataclass
class Transition:
    obs: object
    action: int
    reward: float
    next_obs: object
    terminal: bool


def td_target(transition: Transition, target_q: QFunction, gamma: float) -> float:
    if transition.terminal:
        return transition.reward
    return transition.reward + gamma * float(max(target_q.values(transition.next_obs)))


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions, sampled uniformly with replacement."""

    def __init__(self, capacity: int, obs_size: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_size))
        self.next_obs = np.zeros((capacity, obs_size))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._head = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition):
        i = self._head
        self.obs[i] = t.obs
        self.next_obs[i] = t.next_obs
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.terminal[i] = t.terminal
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch_size: int) -> list[Transition]:
        idx = rng.integers(0, self.size, size=batch_size)
        return [
            Transition(self.obs[i], int(self.actions[i]), float(self.rewards[i]), self.next_obs[i], bool(self.terminal[i]))
            for i in idx
        ]


def _neural_loss_and_grads(q: NeuralQ, target_q: NeuralQ, batch: list[Transition], gamma: float):
    obs = np.stack([t.obs for t in batch])
    next_obs = np.stack([t.next_obs for t in batch])
    actions = np.array([t.action for t in batch])
    rewards = np.array([t.reward for t in batch])
    terminal = np.array([t.terminal for t in batch])
    targets = rewards + np.where(terminal, 0.0, gamma * target_q.forward(next_obs).max(axis=1))
    out, acts = mlp_forward(q.params, obs)
    rows = np.arange(len(batch))
    err = out[rows, actions] - targets
    loss = float(np.mean(err**2))
    grad_out = np.zeros_like(out)
    grad_out[rows, actions] = 2.0 * err / len(batch)
    grads, _ = mlp_backward(q.params, acts, grad_out)
    return loss, grads


def neural_loss(q: NeuralQ, target_q: NeuralQ, batch: list[Transition], gamma: float) -> float:
    return _neural_loss_and_grads(q, target_q, batch, gamma)[0]


def neural_grads(q: NeuralQ, target_q: NeuralQ, batch: list[Transition], gamma: float) -> dict:
    return _neural_loss_and_grads(q, target_q, batch, gamma)[1]


def learn_step(q: QFunction, target_q: QFunction, batch: list[Transition], cfg: TrainConfig, optimizer: Optional[Adam] = None) -> float:
    """One update on ``batch``; returns the pre-update loss.

    Neural: one Adam step on the mean squared TD error (``optimizer`` is created
    on first use when omitted). Tabular: sequential per-transition updates,
    returning the mean squared TD error measured before each update.
    """
    if not batch:
        raise ValueError("empty batch")
    if isinstance(q, NeuralQ):
        loss, grads = _neural_loss_and_grads(q, target_q, batch, cfg.gamma)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss {loss}")
        if optimizer is None:
            optimizer = Adam(q.params, lr=cfg.lr, eps=cfg.adam_epsilon)
        optimizer.step(q.params, grads)
        return loss
    total = 0.0
    lr = cfg.lr
    for t in batch:
        row = q.table.get(t.obs)
        if row is None:
            row = q.table[t.obs] = [0.0] * N_ACTIONS
        delta = td_target(t, target_q, cfg.gamma) - row[t.action]
        row[t.action] += lr * delta
        total += delta * delta
    loss = total / len(batch)
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss {loss}")
    return loss


# ----------------------------------------------------------------- snapshots


@dataclass
class PolicySnapshot:
    backend: str
    params: Union[dict, dict[str, np.ndarray]]
    instruction: Instruction
    env_config: EnvConfig
    train_steps_used: int = 0
    final_success_rate: float = 0.0
    seed: int = 0
    tabular_key: str = "task"

    def q_function(self) -> QFunction:
        """A private copy of the parameters as a live Q-function."""
        if self.backend == TABULAR:
            return TabularQ({k: list(v) for k, v in self.params.items()}, self.tabular_key)
        return NeuralQ({k: v.copy() for k, v in self.params.items()})

    def greedy_action(self, state: GridState) -> int:
        if self.backend == TABULAR:
            key = task_state_key(state) if self.tabular_key == "task" else state_key(state)
            return greedy(self.params.get(key, _ZEROS))
        obs = encode_observation(state).reshape(1, -1)
        return greedy(mlp_forward(self.params, obs)[0][0])

    def digest(self) -> str:
        return hashlib.sha256(snapshot_bytes(self)).hexdigest()


@dataclass
class TrainStats:
    episodes: list[tuple[int, int, float, bool]] = field(default_factory=list)
    curve: list[tuple[int, int, float, float, float]] = field(default_factory=list)
    converged: bool = False

    CURVE_COLUMNS = ("step", "episode", "rolling_success", "epsilon", "loss")

    def to_csv(self) -> str:
        lines = [",".join(self.CURVE_COLUMNS)]
        for s, e, r, eps, loss in self.curve:
            lines.append(f"{s},{e},{r:.6f},{eps:.6f},{loss:.6f}")
        return "\n".join(lines) + "\n"


SNAPSHOT_MAGIC = b"TTSNAP\x00\x00"
SNAPSHOT_VERSION = 1


def snapshot_bytes(snap: PolicySnapshot) -> bytes:
    if snap.backend == TABULAR:
        keys = sorted(snap.params)
        width = max((len(k) for k in keys), default=0)
        key_arr = np.full((len(keys), width), -2, dtype=np.int16)
        for i, k in enumerate(keys):
            key_arr[i, : len(k)] = k
        values = np.array([snap.params[k] for k in keys], dtype=np.float64).reshape(len(keys), N_ACTIONS)
        arrays = {"keys": key_arr, "values": values}
    else:
        arrays = {k: np.asarray(v, dtype=np.float64) for k, v in sorted(snap.params.items())}
    env = asdict(snap.env_config)
    header = {
        "backend": snap.backend,
        "instruction": render(snap.instruction),
        "env_config": env,
        "config_hash": hashlib.sha256(json.dumps(env, sort_keys=True).encode()).hexdigest()[:16],
        "train_steps_used": snap.train_steps_used,
        "final_success_rate": snap.final_success_rate,
        "seed": snap.seed,
        "tabular_key": snap.tabular_key,
        "software_version": __version__,
    }
    return container.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, header, arrays)


def save_snapshot(snap: PolicySnapshot, path) -> None:
    with open(path, "wb") as fh:
        fh.write(snapshot_bytes(snap))


def snapshot_from_bytes(data: bytes) -> PolicySnapshot:
    header, arrays = container.unpack(data, SNAPSHOT_MAGIC, SNAPSHOT_VERSION)
    if header["backend"] == TABULAR:
        params = {}
        for key_row, vals in zip(arrays["keys"].tolist(), arrays["values"].tolist()):
            params[tuple(x for x in key_row if x != -2)] = vals
    else:
        params = arrays
    return PolicySnapshot(
        backend=header["backend"],
        params=params,
        instruction=parse(header["instruction"]),
        env_config=EnvConfig(**header["env_config"]),
        train_steps_used=header["train_steps_used"],
        final_success_rate=header["final_success_rate"],
        seed=header["seed"],
        tabular_key=header["tabular_key"],
    )


def load_snapshot(path) -> PolicySnapshot:
    with open(path, "rb") as fh:
        return snapshot_from_bytes(fh.read())


# ------------------------------------------------------------------ training


def _fresh_q(cfg: TrainConfig, env_config: EnvConfig, rng: np.random.Generator) -> QFunction:
    if cfg.backend == TABULAR:
        return TabularQ(key=cfg.tabular_key)
    return NeuralQ.fresh(env_config.obs_size, rng)


def _params_of(q: QFunction):
    return q.table if isinstance(q, TabularQ) else q.params


def train(
    env_config: EnvConfig,
    task: Instruction,
    init: Optional[PolicySnapshot],
    cfg: TrainConfig,
    rng: np.random.Generator,
    stop_on_convergence: bool = True,
    seed: int = 0,
) -> tuple[PolicySnapshot, TrainStats]:
    """Train a single-task policy, optionally warm-started from ``init``.

    Epsilon anneals linearly from 1 to ``epsilon_min`` over
    ``epsilon_decay_steps`` (restarting on warm start). With
    ``stop_on_convergence`` training ends once the trailing success window is
    full, above threshold and past ``min_steps_before_convergence``.
    """
    if init is not None:
        if init.backend != cfg.backend:
            raise ValueError(f"init backend {init.backend} != {cfg.backend}")
        if init.env_config != env_config:
            raise ValueError("init snapshot was trained on a different env_config")
        q = init.q_function()
        if isinstance(q, TabularQ):
            q = TabularQ(q.table, cfg.tabular_key)
    else:
        q = _fresh_q(cfg, env_config, rng)
    stats = TrainStats()
    if cfg.max_train_steps <= 0:
        return _finish(q, task, env_config, cfg, 0, 0.0, seed), stats

    neural = isinstance(q, NeuralQ)
    if neural:
        target = q.copy()
        buffer = ReplayBuffer(min(cfg.replay_capacity, max(cfg.max_train_steps, 1)), env_config.obs_size)
        optimizer = Adam(q.params, lr=cfg.lr, eps=cfg.adam_epsilon)
    table = None if neural else q.table
    featurize = q.featurize
    lr, gamma = cfg.lr, cfg.gamma
    window = deque(maxlen=cfg.success_window)
    loss_acc, loss_n = 0.0, 0
    episode, ep_return = 0, 0.0
    state = reset(env_config, task, rng)
    obs = featurize(state)
    t = 0
    while t < cfg.max_train_steps:
        eps = cfg.epsilon_at(t)
        if neural:
            action = act_epsilon_greedy(q, obs, eps, rng)
        else:
            explore, pick = rng.random(2)
            action = int(pick * N_ACTIONS) if explore < eps else greedy(table.get(obs, _ZEROS))
        nxt, reward, done = step(state, action)
        t += 1
        ep_return += reward
        # A timeout truncates the episode but is not a terminal state of the task.
        terminal = done and (reward > 0.0 or action == 6)
        nobs = featurize(nxt)
        if neural:
            buffer.add(Transition(obs, action, reward, nobs, terminal))
            if t > cfg.warmup_random_steps and len(buffer) >= cfg.batch_size:
                batch = buffer.sample(rng, cfg.batch_size)
                loss = learn_step(q, target, batch, cfg, optimizer)
                loss_acc += loss
                loss_n += 1
            if t % cfg.target_update_steps == 0:
                target = q.copy()
        else:
            row = table.get(obs)
            if row is None:
                row = table[obs] = [0.0] * N_ACTIONS
            if terminal:
                tgt = reward
            else:
                nrow = table.get(nobs, _ZEROS)
                tgt = reward + gamma * max(nrow)
            delta = tgt - row[action]
            row[action] += lr * delta
            loss_acc += delta * delta
            loss_n += 1
        stop = False
        if done:
            window.append(reward > 0.0)
            stats.episodes.append((episode, t, ep_return, reward > 0.0))
            episode += 1
            ep_return = 0.0
            if (
                stop_on_convergence
                and t >= cfg.min_steps_before_convergence
                and len(window) == cfg.success_window
                and sum(window) / len(window) >= cfg.success_threshold
            ):
                stats.converged = True
                stop = True
            state = reset(env_config, task, rng)
            obs = featurize(state)
        else:
            state, obs = nxt, nobs
        if t % cfg.log_interval == 0 or t == cfg.max_train_steps or stop:
            mean_loss = loss_acc / loss_n if loss_n else 0.0
            if not math.isfinite(mean_loss):
                raise NonFiniteLoss(f"loss {mean_loss} at step {t}")
            stats.curve.append((t, episode, rolling_success(window), eps, mean_loss))
            loss_acc, loss_n = 0.0, 0
        if stop:
            break
    return _finish(q, task, env_config, cfg, t, rolling_success(window), seed), stats


def rolling_success(window) -> float:
    return sum(window) / len(window) if window else 0.0


def _finish(q, task, env_config, cfg, steps, success_rate, seed) -> PolicySnapshot:
    return PolicySnapshot(
        backend=q.backend,
        params=_params_of(q),
        instruction=task,
        env_config=env_config,
        train_steps_used=steps,
        final_success_rate=success_rate,
        seed=seed,
        tabular_key=getattr(q, "key", cfg.tabular_key),
    )


EVAL_EPSILON = 0.01


def evaluate(
    policy, env_config: EnvConfig, episodes: int, rng: np.random.Generator, task: Optional[Instruction] = None, epsilon: float = EVAL_EPSILON
) -> float:
    """Success rate of epsilon-greedy rollouts.

    ``policy`` is a :class:`PolicySnapshot` or any callable ``state -> action``
    (the latter runs without exploration noise).
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if isinstance(policy, PolicySnapshot):
        task = policy.instruction if task is None else task
        q = policy.q_function()

        def choose(state):
            return act_epsilon_greedy(q, q.featurize(state), epsilon, rng)

    else:
        if task is None:
            raise ValueError("task is required for callable policies")
        choose = policy
    wins = 0
    for _ in range(episodes):
        state = reset(env_config, task, rng)
        done = False
        while not done:
            state, reward, done = step(state, choose(state))
        wins += reward > 0.0
    return wins / episodes


def assert_tabular_bounds(snap: PolicySnapshot, gamma: float) -> None:
    hi = 1.0 / (1.0 - gamma) if gamma < 1 else math.inf
    for vals in snap.params.values():
        for v in vals:
            if not (-1e-12 <= v <= hi + 1e-9):
                raise AssertionError(f"tabular value {v} outside [0, {hi}]")
