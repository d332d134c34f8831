import numpy as np
import pytest
from hypothesis import given, strategies as st

from tasktransfer.instructions import (
    ALL_INSTRUCTIONS,
    PAD_TOKEN,
    TOKEN_TABLE,
    VOCAB_SIZE,
    Color,
    InsufficientPopulation,
    Instruction,
    MalformedInstruction,
    ObjectKind,
    Verb,
    enumerate_all,
    parse,
    render,
    sample_distinct,
    tokenize,
)

instructions = st.sampled_from(ALL_INSTRUCTIONS)


def test_enum_sizes():
    assert len(Verb) == 2 and len(Color) == 4 and len(ObjectKind) == 3


@pytest.mark.parametrize(
    "text, expected",
    [
        ("pickup the yellow box", (Verb.PICKUP, Color.YELLOW, ObjectKind.BOX)),
        ("go to the blue ball", (Verb.GOTO, Color.BLUE, ObjectKind.BALL)),
        ("Pick up red key", (Verb.PICKUP, Color.RED, ObjectKind.KEY)),
        ("  GOTO   the Green BOX ", (Verb.GOTO, Color.GREEN, ObjectKind.BOX)),
    ],
)
def test_parse_accepts(text, expected):
    assert parse(text) == Instruction(*expected)


@pytest.mark.parametrize(
    "text, position",
    [
        ("paint the red wall", 0),
        ("goto the red wall", 3),
        ("goto the ball red", 2),
        ("goto the red", 3),
        ("", 0),
        ("pickup the red ball now", 4),
    ],
)
def test_parse_rejects(text, position):
    with pytest.raises(MalformedInstruction) as err:
        parse(text)
    assert err.value.position == position


def test_render_examples():
    assert render(Instruction(Verb.GOTO, Color.YELLOW, ObjectKind.BOX)) == "goto the yellow box"
    assert render(Instruction(Verb.PICKUP, Color.RED, ObjectKind.BALL)) == "pickup the red ball"


def test_roundtrip_all():
    for z in ALL_INSTRUCTIONS:
        assert parse(render(z)) == z


@given(instructions)
def test_render_of_parse_canonicalizes(z):
    spaced = render(z).replace("goto", "go to").replace("pickup", "pick up").upper()
    assert render(parse(spaced)) == render(z)


def test_tokenize_examples():
    assert tokenize(parse("goto the blue ball")) == [0, 2, 8]
    assert tokenize(parse("pickup the yellow box")) == [1, 5, 6]


def test_tokenize_injective_and_below_pad():
    triples = {tuple(tokenize(z)) for z in ALL_INSTRUCTIONS}
    assert len(triples) == 24
    assert all(t < PAD_TOKEN for tr in triples for t in tr)
    assert VOCAB_SIZE == 10 and len(set(TOKEN_TABLE.values())) == 9


def test_enumerate_all():
    zs = enumerate_all()
    assert len(zs) == 24 and len(set(zs)) == 24
    assert zs[0] == Instruction(Verb.GOTO, Color.BLUE, ObjectKind.BOX)
    assert zs == sorted(zs)
    words = {f"{v} the {c} {o}" for v in ("goto", "pickup") for c in ("blue", "red", "green", "yellow") for o in ("box", "key", "ball")}
    assert {render(z) for z in zs} == words


def test_sample_distinct_exhaustion_and_errors():
    rng = np.random.default_rng(3)
    perm = sample_distinct(rng, 24)
    assert sorted(perm) == list(ALL_INSTRUCTIONS)
    with pytest.raises(InsufficientPopulation):
        sample_distinct(rng, 25)
    with pytest.raises(InsufficientPopulation):
        sample_distinct(rng, 23, exclude=ALL_INSTRUCTIONS[:2])


def test_sample_distinct_deterministic():
    a = sample_distinct(np.random.default_rng(11), 8)
    b = sample_distinct(np.random.default_rng(11), 8)
    assert a == b


@given(st.integers(0, 2**32), st.integers(0, 12), st.sets(instructions, max_size=12))
def test_sample_distinct_properties(seed, m, exclude):
    out = sample_distinct(np.random.default_rng(seed), m, exclude)
    assert len(out) == len(set(out)) == m
    assert not set(out) & exclude
