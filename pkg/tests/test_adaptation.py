import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tasktransfer.adaptation import (
    AdaptationSample,
    ComparisonRecord,
    ExperimentPlan,
    PlanError,
    build_dataset,
    group_curves,
    make_plan,
    run_grid,
    run_scratch_baselines,
    sample_adaptation,
    train_base_policies,
)
from tasktransfer.gridworld import EnvConfig
from tasktransfer.instructions import ALL_INSTRUCTIONS, parse
from tasktransfer.learner import TrainConfig

Z = ALL_INSTRUCTIONS
ROOM4 = EnvConfig(4, 0)
ADAPT = TrainConfig(max_train_steps=20_000)
BASE = TrainConfig(max_train_steps=150_000, epsilon_decay_steps=50_000)


def sample(base, transfer, rate, curve=None):
    return AdaptationSample(
        None if base is None else parse(base), parse(transfer), 100, rate, curve or [(100, rate)], 0
    )


@pytest.fixture(scope="module")
def plan():
    return ExperimentPlan(
        alpha=(parse("pickup the red ball"), parse("goto the yellow box")),
        beta=(parse("goto the green key"), parse("goto the red ball")),
        n_adapt_steps=3_000,
        seed=5,
        env_config=ROOM4,
        train_config=TrainConfig(max_train_steps=3_000, epsilon_decay_steps=3_000),
        base_train_config=BASE,
    )


@pytest.fixture(scope="module")
def bases(plan):
    snaps, failed = train_base_policies(plan)
    return snaps


def test_plan_validation():
    with pytest.raises(PlanError):
        ExperimentPlan(alpha=(Z[0], Z[0]), beta=(Z[1],))
    with pytest.raises(PlanError):
        ExperimentPlan(alpha=(Z[0],), beta=(Z[1],))
    with pytest.raises(PlanError):
        ExperimentPlan(alpha=(Z[0], Z[1]), beta=(Z[2], Z[2]))
    p = make_plan(8, 8, seed=3)
    assert len(p.alpha) == 8 and len(p.beta) == 8 and p == make_plan(8, 8, seed=3)
    assert set(p.holdout) == set(Z) - set(p.beta)


def test_base_policies_converge_and_are_reproducible(plan, bases):
    assert [b.instruction for b in bases] == list(plan.alpha)
    assert all(b.final_success_rate >= 0.90 for b in bases)
    again, _ = train_base_policies(plan)
    assert [b.digest() for b in again] == [b.digest() for b in bases]


def test_self_transfer_retains_competence(bases):
    base = bases[1]
    s = sample_adaptation(base, base.instruction, 20_000, ROOM4, ADAPT, seed=1)
    assert s.success_rate >= base.final_success_rate - 0.15


def test_single_step_adaptation(bases):
    s = sample_adaptation(bases[0], Z[3], 1, ROOM4, ADAPT, seed=0)
    assert len(s.curve) == 1 and s.curve[0][0] == 1
    assert s.success_rate in (0.0, 1.0)


def test_run_grid_shape_and_order(plan, bases):
    samples, failures = run_grid(plan, bases)
    assert len(samples) == 4 and not failures
    assert [(s.base_instruction, s.transfer_instruction) for s in samples] == sorted(
        itertools.product(plan.alpha, plan.beta)
    )
    par, _ = run_grid(plan, bases, parallel=2)
    assert [(s.success_rate, s.curve, s.seed) for s in par] == [(s.success_rate, s.curve, s.seed) for s in samples]
    assert all(s.curve[-1][0] == plan.n_adapt_steps for s in samples)


def test_worked_example_dataset():
    # Example performances from the worked tables (illustrative values).
    samples = [
        sample("pickup the red ball", "goto the green key", 0.91),
        sample("pickup the red ball", "goto the red ball", 0.76),
        sample("goto the yellow box", "goto the green key", 0.86),
        sample("goto the yellow box", "goto the red ball", 0.86),
    ]
    records = build_dataset(samples)
    assert ComparisonRecord(parse("goto the green key"), parse("pickup the red ball"), parse("goto the yellow box"), 1) in records
    assert ComparisonRecord(parse("goto the green key"), parse("goto the yellow box"), parse("pickup the red ball"), 0) in records
    assert ComparisonRecord(parse("goto the red ball"), parse("pickup the red ball"), parse("goto the yellow box"), 0) in records
    assert len(records) == 4


def test_ties_produce_no_records():
    samples = [sample("goto the red ball", "goto the blue box", 0.5), sample("pickup the red ball", "goto the blue box", 0.5)]
    assert build_dataset(samples) == []


def brute_force_records(samples):
    """Independent recomputation: enumerate every ordered pair of distinct bases."""
    out = set()
    for a in samples:
        for b in samples:
            if a.transfer_instruction != b.transfer_instruction or a.base_instruction == b.base_instruction:
                continue
            if a.success_rate > b.success_rate:
                out.add((a.transfer_instruction, a.base_instruction, b.base_instruction, 1))
            elif a.success_rate < b.success_rate:
                out.add((a.transfer_instruction, a.base_instruction, b.base_instruction, 0))
    return out


@given(
    st.lists(
        st.tuples(st.sampled_from(Z[:6]), st.sampled_from(Z[10:14]), st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0])),
        max_size=30,
        unique_by=lambda t: (t[0], t[1]),
    )
)
@settings(max_examples=100)
def test_dataset_algebra(rows):
    samples = [AdaptationSample(b, x, 10, r, [(10, r)], 0) for b, x, r in rows]
    records = build_dataset(samples)
    as_tuples = [(r.z_x, r.z_i, r.z_j, r.label) for r in records]
    assert set(as_tuples) == brute_force_records(samples)
    assert len(as_tuples) == len(set(as_tuples))
    for z_x, z_i, z_j, label in as_tuples:
        assert z_i != z_j
        assert (z_x, z_j, z_i, 1 - label) in set(as_tuples)
    untied = sum(
        1
        for a, b in itertools.combinations(samples, 2)
        if a.transfer_instruction == b.transfer_instruction and a.success_rate != b.success_rate
    )
    assert len(records) == 2 * untied
    assert records == build_dataset(list(reversed(samples)))


def test_group_curves_arithmetic_and_partitions():
    a = sample("goto the red ball", "goto the blue box", 0.4, [(1, 0.2), (2, 0.4)])
    b = sample("goto the green key", "goto the blue key", 0.6, [(1, 0.4), (2, 0.6)])
    c = sample("pickup the green key", "goto the blue key", 0.1, [(1, 0.0), (2, 0.1)])
    mc = group_curves([a, b, c], "verb")
    assert mc.steps == [1, 2]
    assert mc.match == pytest.approx([0.3, 0.5])
    assert mc.differ == pytest.approx([0.0, 0.1])
    assert mc.n_match + mc.n_differ == 3
    scratch = sample(None, "goto the blue key", 0.0, [(1, 0.0), (2, 0.05)])
    assert group_curves([a, b, c], "color", [scratch]).scratch == [0.0, 0.05]


def test_group_curves_flags_empty_partition():
    selfs = [sample("goto the red ball", "goto the red ball", 0.9), sample("pickup the red ball", "pickup the red ball", 0.8)]
    mc = group_curves(selfs, "object")
    assert mc.differ is None and mc.empty_partitions == ["differ"]


def test_scratch_baselines():
    cfg3 = EnvConfig(3, 0)
    instr = [parse("goto the red ball"), parse("pickup the blue key")]
    out = run_scratch_baselines(instr, 5_000, cfg3, TrainConfig(epsilon_decay_steps=5_000), seed=2)
    assert all(s.base_instruction is None for s in out)
    assert all(s.success_rate > 0 for s in out)
    assert all(s.curve[0][1] < 0.5 for s in out)
    again = run_scratch_baselines(instr, 5_000, cfg3, TrainConfig(epsilon_decay_steps=5_000), seed=2)
    assert [s.curve for s in again] == [s.curve for s in out]
