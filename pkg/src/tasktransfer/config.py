"""Run configuration: flat ``key = value`` files plus environment overrides.

Resolution order (later wins): defaults, config file, ``TASKTRANSFER_<KEY>``
environment variables, command-line flags. Unknown keys and unparsable values
raise :class:`ConfigError` naming the field.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, fields
from typing import Optional

from .adaptation import ExperimentPlan, PlanError, make_plan
from .gridworld import ConfigError, EnvConfig
from .instructions import MalformedInstruction, parse, render
from .learner import TrainConfig
from .transfer import ClassifierConfig

ENV_PREFIX = "TASKTRANSFER_"

# Execution-only settings; they never change results and are not recorded.
RUNTIME_KEYS = ("out", "parallel")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    parallel: int = 1
    backend: str = "tabular"
    # environment
    room_size: int = 4
    n_distractors: int = 0
    max_steps: int = 0  # 0 means 8 * room_size
    randomize_agent_start: bool = True
    # learner, shared by base training and adaptation
    gamma: float = 0.99
    learning_rate: float = 0.0  # 0 means backend default
    adam_epsilon: float = 1.5e-4
    target_update_steps: int = 8_000
    warmup_random_steps: int = 1_000
    epsilon_min: float = 0.01
    batch_size: int = 32
    replay_capacity: int = 100_000
    success_threshold: float = 0.95
    success_window: int = 100
    min_steps_before_convergence: int = 10_000
    log_interval: int = 500
    tabular_key: str = "task"
    base_max_train_steps: int = 300_000
    base_epsilon_decay_steps: int = 50_000
    epsilon_decay_steps: int = 20_000
    # plan
    k: int = 8
    p: int = 8
    n_adapt_steps: int = 20_000
    alpha: str = ""  # explicit ';'-separated instructions override k
    beta: str = ""
    extended_grid: bool = True
    scratch_baselines: bool = True
    # transfer classifier
    classifier_learning_rate: float = 0.001
    classifier_max_steps: int = 50_000
    classifier_batch_size: int = 32
    classifier_eval_interval: int = 500
    classifier_patience: int = 10
    classifier_holdout_fraction: float = 0.2
    classifier_runs: int = 5
    # accuracy grid
    grid_k: str = "8"
    grid_p: str = "8"
    grid_runs: int = 5

    def __post_init__(self):
        try:
            self.env_config()
            self.train_config()
            self.base_train_config()
            self.classifier_config(0)
            self.grid_values()
            self._instructions("alpha")
            self._instructions("beta")
        except (ValueError, MalformedInstruction) as exc:
            raise ConfigError(str(exc)) from exc
        if self.parallel < 1:
            raise ConfigError("parallel: must be >= 1")
        if self.classifier_runs < 1 or self.grid_runs < 1:
            raise ConfigError("classifier_runs/grid_runs: must be >= 1")

    # ------------------------------------------------------------ builders

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            room_size=self.room_size,
            n_distractors=self.n_distractors,
            max_steps=self.max_steps or None,
            randomize_agent_start=self.randomize_agent_start,
        )

    def _train_kwargs(self) -> dict:
        return dict(
            backend=self.backend,
            gamma=self.gamma,
            learning_rate=self.learning_rate or None,
            adam_epsilon=self.adam_epsilon,
            target_update_steps=self.target_update_steps,
            warmup_random_steps=self.warmup_random_steps,
            epsilon_min=self.epsilon_min,
            batch_size=self.batch_size,
            replay_capacity=self.replay_capacity,
            success_threshold=self.success_threshold,
            success_window=self.success_window,
            min_steps_before_convergence=self.min_steps_before_convergence,
            log_interval=self.log_interval,
            tabular_key=self.tabular_key,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            max_train_steps=self.n_adapt_steps, epsilon_decay_steps=self.epsilon_decay_steps, **self._train_kwargs()
        )

    def base_train_config(self) -> TrainConfig:
        return TrainConfig(
            max_train_steps=self.base_max_train_steps,
            epsilon_decay_steps=self.base_epsilon_decay_steps,
            **self._train_kwargs(),
        )

    def classifier_config(self, seed: int) -> ClassifierConfig:
        return ClassifierConfig(
            learning_rate=self.classifier_learning_rate,
            max_steps=self.classifier_max_steps,
            batch_size=self.classifier_batch_size,
            eval_interval=self.classifier_eval_interval,
            patience=self.classifier_patience,
            seed=seed,
            holdout_fraction=self.classifier_holdout_fraction,
        )

    def _instructions(self, name: str):
        text = getattr(self, name).strip()
        return [parse(part) for part in text.split(";") if part.strip()] if text else []

    def plan(self, seed: Optional[int] = None, k: Optional[int] = None, p: Optional[int] = None) -> ExperimentPlan:
        seed = self.seed if seed is None else seed
        common = dict(
            n_adapt_steps=self.n_adapt_steps,
            env_config=self.env_config(),
            train_config=self.train_config(),
            base_train_config=self.base_train_config(),
        )
        try:
            alpha, beta = self._instructions("alpha"), self._instructions("beta")
            if alpha and beta and k is None:
                return ExperimentPlan(alpha=tuple(alpha), beta=tuple(beta), seed=seed, **common)
            plan = make_plan(self.k if k is None else k, self.p if p is None else p, seed, **common)
            if k is None and (alpha or beta):
                plan = dataclasses.replace(plan, alpha=tuple(alpha) or plan.alpha, beta=tuple(beta) or plan.beta)
            return plan
        except (PlanError, ValueError) as exc:
            raise ConfigError(f"plan: {exc}") from exc

    def grid_values(self) -> tuple[list[int], list[int]]:
        def ints(name):
            text = getattr(self, name)
            try:
                vals = [int(v) for v in text.replace(",", " ").split()]
            except ValueError:
                raise ConfigError(f"{name}: expected a list of integers, got {text!r}") from None
            if not vals:
                raise ConfigError(f"{name}: empty list")
            return vals

        return ints("grid_k"), ints("grid_p")

    # ------------------------------------------------------------ text form

    def recorded(self) -> dict:
        """Result-affecting settings, as written to ``config.txt`` and the manifest."""
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in RUNTIME_KEYS}

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.recorded().items())


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(name: str, ftype, raw: str):
    raw = raw.strip()
    try:
        if ftype is bool or ftype == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if ftype is int or ftype == "int":
            return int(raw)
        if ftype is float or ftype == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {getattr(ftype, '__name__', ftype)}") from None


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def parse_config_text(text: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    out = {}
    for key, raw in cp.items("run"):
        if key not in _FIELDS:
            raise ConfigError(f"{key}: unknown config key")
        out[key] = _coerce(key, _FIELDS[key], raw)
    return out


def load_config(path: Optional[str] = None, environ=None, overrides: Optional[dict] = None) -> RunConfig:
    values = {}
    if path:
        try:
            with open(path) as fh:
                values.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from None
    environ = os.environ if environ is None else environ
    for name, ftype in _FIELDS.items():
        env_key = ENV_PREFIX + name.upper()
        if env_key in environ:
            values[name] = _coerce(name, ftype, environ[env_key])
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values)
