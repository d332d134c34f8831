"""End-to-end in-process pipeline: bases, adaptation grid, classifier accuracy."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .adaptation import (
    AdaptationSample,
    ComparisonRecord,
    ExperimentPlan,
    build_dataset,
    run_grid,
    train_base_policies,
)
from .instructions import ALL_INSTRUCTIONS, Instruction
from .transfer import ClassifierConfig, accuracy, train_classifier

log = logging.getLogger(__name__)


def split_by_beta(samples: Sequence[AdaptationSample], beta: Sequence[Instruction]):
    """Comparison records for seen (beta) and unseen (Z minus beta) transfer tasks."""
    seen = set(beta)
    train = build_dataset([s for s in samples if s.transfer_instruction in seen])
    holdout = build_dataset([s for s in samples if s.transfer_instruction not in seen])
    return train, holdout


def split_fraction(records: Sequence[ComparisonRecord], fraction: float, rng: np.random.Generator):
    """Hold out a fraction of records, keeping each mirrored pair on one side."""
    groups: dict[tuple, list[ComparisonRecord]] = {}
    for r in records:
        groups.setdefault((r.z_x,) + tuple(sorted((r.z_i, r.z_j))), []).append(r)
    keys = sorted(groups)
    n_hold = int(round(fraction * len(keys)))
    held = set(int(i) for i in rng.permutation(len(keys))[:n_hold])
    train, hold = [], []
    for i, key in enumerate(keys):
        (hold if i in held else train).extend(groups[key])
    return train, hold


@dataclass
class PipelineResult:
    plan: ExperimentPlan
    samples: list[AdaptationSample]
    failed_bases: list[Instruction]
    train_records: list[ComparisonRecord]
    holdout_records: list[ComparisonRecord]
    accuracy: Optional[float]


def run_pipeline(plan: ExperimentPlan, cls_cfg: ClassifierConfig, parallel: int = 1) -> PipelineResult:
    """Train bases, sample the k x 24 grid and score the classifier on Z minus beta."""
    bases, failed = train_base_policies(plan, parallel)
    samples, _ = run_grid(plan, bases, ALL_INSTRUCTIONS, parallel)
    train, holdout = split_by_beta(samples, plan.beta)
    acc = None
    if train and holdout and len({r.label for r in train}) == 2:
        model, _ = train_classifier(train, cls_cfg)
        acc = accuracy(model, holdout)
    else:
        log.warning("degenerate dataset for plan seed %d: %d train, %d holdout", plan.seed, len(train), len(holdout))
    return PipelineResult(plan, samples, failed, train, holdout, acc)
