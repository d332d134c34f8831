"""Fully observable single-room gridworld with goto/pickup tasks.

Coordinates are interior cells ``(x, y)`` with ``0 <= x, y < room_size``;
walls surround the room implicitly. ``x`` grows east, ``y`` grows south.
Directions follow the minigrid convention: 0 east, 1 south, 2 west, 3 north.
"""
from __future__ import annotations

import enum
import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .instructions import Color, Instruction, ObjectKind, Verb, render

DIR_VEC = ((1, 0), (0, 1), (-1, 0), (0, -1))
N_CHANNELS = 19
N_COMBOS = len(Color) * len(ObjectKind)
MAX_PLACEMENT_RETRIES = 100


class Action(enum.IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    PICKUP = 3
    DROP = 4
    OPEN = 5
    DONE = 6


N_ACTIONS = len(Action)


class ConfigError(ValueError):
    pass


class PlacementImpossible(RuntimeError):
    pass


class SteppingFinishedEpisode(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    room_size: int = 6
    n_distractors: int = 3
    max_steps: Optional[int] = None
    randomize_agent_start: bool = True

    def __post_init__(self):
        if self.max_steps is None:
            object.__setattr__(self, "max_steps", 8 * self.room_size)
        if self.room_size < 3:
            raise ConfigError(f"room_size must be >= 3, got {self.room_size}")
        if self.n_distractors < 0 or self.n_distractors + 1 > self.room_size**2 - 1:
            raise ConfigError(
                f"n_distractors={self.n_distractors} does not fit a "
                f"{self.room_size}x{self.room_size} room with an agent and a target"
            )
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")

    @property
    def obs_size(self) -> int:
        return self.room_size * self.room_size * N_CHANNELS


# An object is (x, y, color, kind) with plain ints; the tuple of objects is kept
# sorted so equal worlds have equal representations.
Obj = tuple[int, int, int, int]


@dataclass(frozen=True, slots=True)
class GridState:
    config: EnvConfig
    task: Instruction
    agent_pos: tuple[int, int]
    agent_dir: int
    objects: tuple[Obj, ...]
    carrying: Optional[tuple[int, int]] = None
    steps_taken: int = 0
    done: bool = False

    def front_cell(self) -> tuple[int, int]:
        dx, dy = DIR_VEC[self.agent_dir]
        return self.agent_pos[0] + dx, self.agent_pos[1] + dy


def success(state: GridState, task: Optional[Instruction] = None) -> bool:
    task = state.task if task is None else task
    color, kind = int(task.color), int(task.object)
    if task.verb == Verb.PICKUP:
        return state.carrying == (color, kind)
    fx, fy = state.front_cell()
    for ox, oy, oc, ok in state.objects:
        if ox == fx and oy == fy:
            return oc == color and ok == kind
    return False


def reset(config: EnvConfig, task: Instruction, rng: np.random.Generator) -> GridState:
    """Place the target, ``n_distractors`` random objects and the agent.

    The agent placement is resampled until the task is not already solved.
    """
    n_cells = config.room_size * config.room_size
    n_obj = config.n_distractors + 1
    cells = rng.permutation(n_cells)
    target_color, target_kind = int(task.color), int(task.object)
    combos = rng.integers(0, N_COMBOS, size=config.n_distractors)
    size = config.room_size
    objs = [(int(cells[0]) % size, int(cells[0]) // size, target_color, target_kind)]
    for cell, combo in zip(cells[1:n_obj], combos):
        objs.append((int(cell) % size, int(cell) // size, int(combo) // 3, int(combo) % 3))
    objects = tuple(sorted(objs))
    free = cells[n_obj:]
    if not config.randomize_agent_start:
        free = np.sort(free)
    for attempt in range(MAX_PLACEMENT_RETRIES):
        if config.randomize_agent_start:
            cell = int(free[rng.integers(len(free))])
            direction = int(rng.integers(4))
        else:
            cell = int(free[attempt % len(free)])
            direction = attempt // len(free) % 4
        state = GridState(config, task, (cell % size, cell // size), direction, objects)
        if not success(state):
            return state
    raise PlacementImpossible(f"no unsolved start found for {render(task)!r}")


def _apply(pos, direction, objects, carrying, action, size):
    """Pure dynamics on raw tuples; returns the new (pos, dir, objects, carrying)."""
    if action == 0:
        dx, dy = DIR_VEC[direction]
        fx, fy = pos[0] + dx, pos[1] + dy
        if 0 <= fx < size and 0 <= fy < size:
            for o in objects:
                if o[0] == fx and o[1] == fy:
                    break
            else:
                pos = (fx, fy)
    elif action == 1:
        direction = (direction - 1) % 4
    elif action == 2:
        direction = (direction + 1) % 4
    elif action == 3:
        if carrying is None:
            dx, dy = DIR_VEC[direction]
            fx, fy = pos[0] + dx, pos[1] + dy
            for i, o in enumerate(objects):
                if o[0] == fx and o[1] == fy:
                    carrying = (o[2], o[3])
                    objects = objects[:i] + objects[i + 1 :]
                    break
    elif action == 4:
        if carrying is not None:
            dx, dy = DIR_VEC[direction]
            fx, fy = pos[0] + dx, pos[1] + dy
            if 0 <= fx < size and 0 <= fy < size and all(
                o[0] != fx or o[1] != fy for o in objects
            ):
                objects = tuple(sorted(objects + ((fx, fy) + carrying,)))
                carrying = None
    return pos, direction, objects, carrying


def success_reward(steps_taken: int, max_steps: int) -> float:
    return 1.0 - 0.9 * (steps_taken / max_steps)


def step(state: GridState, action: int) -> tuple[GridState, float, bool]:
    if state.done:
        raise SteppingFinishedEpisode("episode already finished; call reset")
    cfg = state.config
    pos, direction, objects, carrying = _apply(
        state.agent_pos, state.agent_dir, state.objects, state.carrying, action, cfg.room_size
    )
    steps = state.steps_taken + 1
    nxt = GridState(cfg, state.task, pos, direction, objects, carrying, steps, False)
    if success(nxt):
        reward, done = success_reward(steps, cfg.max_steps), True
    else:
        reward, done = 0.0, steps >= cfg.max_steps or action == Action.DONE
    if done:
        nxt = GridState(cfg, state.task, pos, direction, objects, carrying, steps, True)
    return nxt, reward, done


def _combo(color: int, kind: int) -> int:
    return color * 3 + kind


def state_key(state: GridState) -> tuple:
    """Canonical hashable serialization of the world content (no step counter)."""
    carry = -1 if state.carrying is None else _combo(*state.carrying)
    key = [state.agent_pos[0], state.agent_pos[1], state.agent_dir, carry]
    for ox, oy, oc, ok in state.objects:
        key += (ox, oy, _combo(oc, ok))
    return tuple(key)


def task_state_key(state: GridState) -> tuple:
    """Like :func:`state_key` but objects are coded by their relation to the task.

    Each object (and the carried object) is coded ``color_match + 2 * kind_match``
    so that tasks with the same verb share one state space.
    """
    color, kind = int(state.task.color), int(state.task.object)
    if state.carrying is None:
        carry = -1
    else:
        carry = (state.carrying[0] == color) + 2 * (state.carrying[1] == kind)
    key = [state.agent_pos[0], state.agent_pos[1], state.agent_dir, carry]
    for ox, oy, oc, ok in state.objects:
        key += (ox, oy, (oc == color) + 2 * (ok == kind))
    return tuple(key)


def encode_observation(state: GridState) -> np.ndarray:
    """One-hot ``(room, room, 19)`` tensor indexed ``[y, x, channel]``.

    Channels: object kind 0-2, object color 3-6, agent 7, agent direction 8-11,
    carried kind 12-14 and carried color 15-18 (both broadcast to every cell).
    """
    size = state.config.room_size
    obs = np.zeros((size, size, N_CHANNELS))
    for ox, oy, oc, ok in state.objects:
        obs[oy, ox, ok] = 1.0
        obs[oy, ox, 3 + oc] = 1.0
    ax, ay = state.agent_pos
    obs[ay, ax, 7] = 1.0
    obs[ay, ax, 8 + state.agent_dir] = 1.0
    if state.carrying is not None:
        obs[:, :, 12 + state.carrying[1]] = 1.0
        obs[:, :, 15 + state.carrying[0]] = 1.0
    return obs


def shortest_plan(state: GridState) -> Optional[list[Action]]:
    """Breadth-first search over the exact dynamics of :func:`step`.

    Returns the lexicographically-first shortest action list reaching success
    within the remaining step budget, ``[]`` if already successful, or ``None``.
    """
    if success(state):
        return []
    if state.done:
        return None
    cfg, task = state.config, state.task
    budget = cfg.max_steps - state.steps_taken
    start = (state.agent_pos, state.agent_dir, state.objects, state.carrying)
    parents = {start: None}
    frontier = deque([(start, 0)])
    # Open is a no-op and Done ends the episode unsuccessfully; neither helps a plan.
    moves = (Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT, Action.PICKUP, Action.DROP)
    while frontier:
        node, depth = frontier.popleft()
        if depth >= budget:
            continue
        for action in moves:
            child = _apply(*node, int(action), cfg.room_size)
            if child in parents:
                continue
            parents[child] = (node, action)
            probe = GridState(cfg, task, child[0], child[1], child[2], child[3])
            if success(probe):
                plan = []
                cur = child
                while parents[cur] is not None:
                    cur, act = parents[cur]
                    plan.append(act)
                return plan[::-1]
            frontier.append((child, depth + 1))
    return None


def shortest_solution_length(state: GridState) -> Optional[int]:
    """Minimal number of actions to success, or ``None`` when unreachable."""
    plan = shortest_plan(state)
    return None if plan is None else len(plan)


_KIND_CHARS = ("b", "k", "o")


def render_text(state: GridState) -> str:
    """One character per cell, walls included.

    Objects print as their kind letter (``b`` box, ``k`` key, ``o`` ball),
    upper-cased for the task's target combination; the agent prints as an arrow.
    """
    size = state.config.room_size
    rows = [["#"] * (size + 2)]
    for _ in range(size):
        rows.append(["#"] + ["."] * size + ["#"])
    rows.append(["#"] * (size + 2))
    target = (int(state.task.color), int(state.task.object))
    for ox, oy, oc, ok in state.objects:
        ch = _KIND_CHARS[ok]
        rows[oy + 1][ox + 1] = ch.upper() if (oc, ok) == target else ch
    ax, ay = state.agent_pos
    rows[ay + 1][ax + 1] = ">v<^"[state.agent_dir]
    return "\n".join("".join(r) for r in rows)


def state_hash(state: GridState) -> str:
    payload = json.dumps([render(state.task), list(state_key(state)), state.steps_taken])
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def trajectory_jsonl(state: GridState, actions: Iterable[int]) -> str:
    """Replay ``actions`` from ``state`` and dump one JSON object per step."""
    lines = []
    for action in actions:
        before = state_hash(state)
        state, reward, done = step(state, action)
        lines.append(
            json.dumps(
                {"state": before, "action": Action(action).name.lower(), "reward": reward, "done": done},
                sort_keys=True,
            )
        )
        if done:
            break
    return "\n".join(lines) + ("\n" if lines else "")
