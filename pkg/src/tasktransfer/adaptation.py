"""Base-policy pretraining, task-adaptation sampling and comparison datasets."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .gridworld import EnvConfig
from .instructions import ALL_INSTRUCTIONS, Instruction, render, sample_distinct
from .learner import PolicySnapshot, TrainConfig, train
from .runner import derive_seed, run_jobs

log = logging.getLogger(__name__)

DIMENSIONS = ("verb", "object", "color")


class PlanError(ValueError):
    pass


class NoPoliciesConverged(RuntimeError):
    pass


class EmptyPartition(UserWarning):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    alpha: tuple[Instruction, ...]
    beta: tuple[Instruction, ...]
    n_adapt_steps: int = 20_000
    seed: int = 0
    env_config: EnvConfig = field(default_factory=lambda: EnvConfig(room_size=4, n_distractors=0))
    train_config: TrainConfig = field(default_factory=TrainConfig)
    base_train_config: TrainConfig = field(
        default_factory=lambda: TrainConfig(max_train_steps=300_000, epsilon_decay_steps=50_000)
    )

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(self.alpha))
        object.__setattr__(self, "beta", tuple(self.beta))
        if len(set(self.alpha)) != len(self.alpha):
            raise PlanError("alpha contains duplicate instructions")
        if len(set(self.beta)) != len(self.beta):
            raise PlanError("beta contains duplicate instructions")
        if not 2 <= len(self.alpha) < len(ALL_INSTRUCTIONS):
            raise PlanError(f"k must satisfy 2 <= k < 24, got {len(self.alpha)}")
        if not self.beta:
            raise PlanError("beta must not be empty")
        if self.n_adapt_steps < 1:
            raise PlanError("n_adapt_steps must be >= 1")

    @property
    def holdout(self) -> tuple[Instruction, ...]:
        return tuple(z for z in ALL_INSTRUCTIONS if z not in self.beta)


def make_plan(k: int, p: int, seed: int, **kwargs) -> ExperimentPlan:
    """Sample alpha (k bases) and beta (p transfer tasks) independently from Z."""
    rng = np.random.default_rng(derive_seed(seed, "plan", k, p))
    alpha = sample_distinct(rng, k)
    beta = sample_distinct(rng, p)
    return ExperimentPlan(alpha=tuple(alpha), beta=tuple(beta), seed=seed, **kwargs)


@dataclass
class AdaptationSample:
    base_instruction: Optional[Instruction]  # None for a from-scratch baseline
    transfer_instruction: Instruction
    n_steps: int
    success_rate: float
    curve: list[tuple[int, float]]
    seed: int

    @property
    def sort_key(self):
        base = (-1,) if self.base_instruction is None else tuple(self.base_instruction)
        return base, tuple(self.transfer_instruction)


@dataclass(frozen=True)
class ComparisonRecord:
    z_x: Instruction
    z_i: Instruction
    z_j: Instruction
    label: int


# ------------------------------------------------------------- base training


def _train_base(job):
    instr, plan_env, cfg, seed = job
    snap, stats = train(plan_env, instr, None, cfg, np.random.default_rng(seed), seed=seed)
    return snap, stats.converged


def train_base_policies(plan: ExperimentPlan, parallel: int = 1):
    """Train one policy per instruction in alpha until convergence.

    Returns ``(snapshots, failed)`` where ``failed`` lists the alpha
    instructions that did not converge within budget (or raised).
    """
    jobs = [
        (z, plan.env_config, plan.base_train_config, derive_seed(plan.seed, "base", render(z)))
        for z in plan.alpha
    ]
    snaps, failed = [], []
    for z, res in zip(plan.alpha, run_jobs(_train_base, jobs, parallel)):
        if isinstance(res, Exception):
            log.warning("base policy %r failed: %s", render(z), res)
            failed.append(z)
        elif not res[1]:
            log.warning("base policy %r did not converge (%.2f)", render(z), res[0].final_success_rate)
            failed.append(z)
        else:
            snaps.append(res[0])
    if not snaps:
        raise NoPoliciesConverged(f"none of {len(plan.alpha)} base policies converged")
    return snaps, failed


# ------------------------------------------------------------ adaptations


def sample_adaptation(
    base: Optional[PolicySnapshot],
    transfer: Instruction,
    n: int,
    env_config: EnvConfig,
    train_config: TrainConfig,
    seed: int,
) -> AdaptationSample:
    """Warm-start from ``base`` (fresh parameters when ``None``) and train for exactly ``n`` steps."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = replace(train_config, max_train_steps=n)
    snap, stats = train(env_config, transfer, base, cfg, np.random.default_rng(seed), stop_on_convergence=False, seed=seed)
    curve = [(row[0], row[2]) for row in stats.curve]
    return AdaptationSample(
        base_instruction=None if base is None else base.instruction,
        transfer_instruction=transfer,
        n_steps=n,
        success_rate=snap.final_success_rate,
        curve=curve,
        seed=seed,
    )


def _sample_job(job):
    return sample_adaptation(*job)


def adaptation_jobs(plan: ExperimentPlan, bases: Sequence[PolicySnapshot], transfers: Optional[Sequence[Instruction]] = None):
    transfers = plan.beta if transfers is None else transfers
    jobs = []
    for base in bases:
        for z in transfers:
            seed = derive_seed(plan.seed, "adapt", render(base.instruction), render(z))
            jobs.append((base, z, plan.n_adapt_steps, plan.env_config, plan.train_config, seed))
    return jobs


def scratch_jobs(plan: ExperimentPlan, instructions: Sequence[Instruction]):
    return [
        (None, z, plan.n_adapt_steps, plan.env_config, plan.train_config, derive_seed(plan.seed, "scratch", render(z)))
        for z in instructions
    ]


def run_grid(
    plan: ExperimentPlan,
    bases: Sequence[PolicySnapshot],
    transfers: Optional[Sequence[Instruction]] = None,
    parallel: int = 1,
):
    """Sample every (base, transfer) pair; returns ``(samples, failures)``.

    ``transfers`` defaults to beta; pass all of Z for the extended holdout grid.
    Samples are sorted canonically so the result is independent of scheduling.
    """
    jobs = adaptation_jobs(plan, bases, transfers)
    samples, failures = [], []
    for job, res in zip(jobs, run_jobs(_sample_job, jobs, parallel)):
        if isinstance(res, Exception):
            failures.append((job[0].instruction, job[1], repr(res)))
        else:
            samples.append(res)
    samples.sort(key=lambda s: s.sort_key)
    return samples, failures


def run_scratch_baselines(
    instructions: Sequence[Instruction],
    n: int,
    env_config: EnvConfig,
    train_config: TrainConfig,
    seed: int,
    parallel: int = 1,
) -> list[AdaptationSample]:
    jobs = [
        (None, z, n, env_config, train_config, derive_seed(seed, "scratch", render(z)))
        for z in instructions
    ]
    out = []
    for res in run_jobs(_sample_job, jobs, parallel):
        if isinstance(res, Exception):
            raise res
        out.append(res)
    return sorted(out, key=lambda s: s.sort_key)


# ---------------------------------------------------------------- datasets


def build_dataset(samples: Iterable[AdaptationSample]) -> list[ComparisonRecord]:
    """Pairwise comparison records, both orderings per untied pair."""
    perf: dict[Instruction, dict[Instruction, float]] = {}
    for s in samples:
        if s.base_instruction is None:
            continue
        perf.setdefault(s.transfer_instruction, {})[s.base_instruction] = s.success_rate
    records = []
    for z_x, by_base in perf.items():
        for z_i, z_j in itertools.combinations(sorted(by_base), 2):
            a, b = by_base[z_i], by_base[z_j]
            if a == b:
                continue
            label = int(a > b)
            records.append(ComparisonRecord(z_x, z_i, z_j, label))
            records.append(ComparisonRecord(z_x, z_j, z_i, 1 - label))
    records.sort(key=lambda r: (r.z_x, r.z_i, r.z_j))
    return records


# ---------------------------------------------------------------- analysis


def matches(base: Instruction, transfer: Instruction, dimension: str) -> bool:
    field_name = {"verb": "verb", "object": "object", "color": "color"}[dimension]
    return getattr(base, field_name) == getattr(transfer, field_name)


@dataclass
class MatchCurves:
    dimension: str
    steps: list[int]
    match: Optional[list[float]]
    differ: Optional[list[float]]
    overall: list[float]
    scratch: Optional[list[float]] = None
    n_match: int = 0
    n_differ: int = 0

    @property
    def empty_partitions(self) -> list[str]:
        return [name for name, n in (("match", self.n_match), ("differ", self.n_differ)) if n == 0]


def _mean_curve(samples: Sequence[AdaptationSample], steps: list[int]) -> Optional[list[float]]:
    if not samples:
        return None
    table = []
    for s in samples:
        by_step = dict(s.curve)
        table.append([by_step[t] for t in steps])
    return [float(v) for v in np.mean(np.array(table), axis=0)]


def group_curves(
    samples: Sequence[AdaptationSample],
    dimension: str,
    scratch: Optional[Sequence[AdaptationSample]] = None,
) -> MatchCurves:
    """Average learning curves split by whether base and transfer agree on ``dimension``.

    Curves are aligned on the step indices common to every input sample.
    """
    samples = [s for s in samples if s.base_instruction is not None]
    if not samples:
        raise ValueError("group_curves needs at least one adaptation sample")
    if dimension not in DIMENSIONS:
        raise ValueError(f"dimension must be one of {DIMENSIONS}")
    steps = sorted(set.intersection(*(set(t for t, _ in s.curve) for s in samples)))
    hit = [s for s in samples if matches(s.base_instruction, s.transfer_instruction, dimension)]
    miss = [s for s in samples if not matches(s.base_instruction, s.transfer_instruction, dimension)]
    scratch_curve = None
    if scratch:
        scratch_steps = set.intersection(*(set(t for t, _ in s.curve) for s in scratch))
        steps_common = [t for t in steps if t in scratch_steps]
        if steps_common == steps:
            scratch_curve = _mean_curve(list(scratch), steps)
    return MatchCurves(
        dimension=dimension,
        steps=steps,
        match=_mean_curve(hit, steps),
        differ=_mean_curve(miss, steps),
        overall=_mean_curve(samples, steps),
        scratch=scratch_curve,
        n_match=len(hit),
        n_differ=len(miss),
    )


def final_success_by_match(samples: Sequence[AdaptationSample], dimension: str) -> tuple[Optional[float], Optional[float]]:
    """Mean final success rate for matching and differing pairs on ``dimension``."""
    hit = [s.success_rate for s in samples if s.base_instruction is not None and matches(s.base_instruction, s.transfer_instruction, dimension)]
    miss = [s.success_rate for s in samples if s.base_instruction is not None and not matches(s.base_instruction, s.transfer_instruction, dimension)]
    return (float(np.mean(hit)) if hit else None, float(np.mean(miss)) if miss else None)
