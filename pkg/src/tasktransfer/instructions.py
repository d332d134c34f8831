"""Closed instruction grammar: ``<verb> the <color> <object>``.

The 24 expressible tasks are the product of 2 verbs, 4 colors and 3 object
kinds. Instructions are immutable and totally ordered (verb, color, object)
so every artifact that lists them is reproducible.
"""
from __future__ import annotations

import enum
import itertools
import re
from typing import Iterable, NamedTuple

import numpy as np


class Verb(enum.IntEnum):
    GOTO = 0
    PICKUP = 1


class Color(enum.IntEnum):
    BLUE = 0
    RED = 1
    GREEN = 2
    YELLOW = 3


class ObjectKind(enum.IntEnum):
    BOX = 0
    KEY = 1
    BALL = 2


class MalformedInstruction(ValueError):
    def __init__(self, position: int, reason: str):
        super().__init__(f"word {position}: {reason}")
        self.position = position
        self.reason = reason


class InsufficientPopulation(ValueError):
    pass


class Instruction(NamedTuple):
    verb: Verb
    color: Color
    object: ObjectKind

    def __str__(self) -> str:
        return render(self)

    def __repr__(self) -> str:
        return f"Instruction({render(self)!r})"


# word -> token id. 9 is reserved for padding / unknown and never emitted.
TOKEN_TABLE: dict[str, int] = {
    "goto": 0,
    "pickup": 1,
    "blue": 2,
    "red": 3,
    "green": 4,
    "yellow": 5,
    "box": 6,
    "key": 7,
    "ball": 8,
}
PAD_TOKEN = 9
VOCAB_SIZE = 10

_VERB_WORDS = {"goto": Verb.GOTO, "pickup": Verb.PICKUP}
_COLOR_WORDS = {c.name.lower(): c for c in Color}
_OBJECT_WORDS = {o.name.lower(): o for o in ObjectKind}


def render(instr: Instruction) -> str:
    return f"{instr.verb.name.lower()} the {instr.color.name.lower()} {instr.object.name.lower()}"


def parse(text: str) -> Instruction:
    """Parse an instruction, case-insensitively.

    Accepts ``go to`` / ``pick up`` as two-word verbs and an optional ``the``.
    Raises :class:`MalformedInstruction` naming the offending word position.
    """
    words = re.split(r"\s+", text.strip().lower()) if text.strip() else []
    if not words:
        raise MalformedInstruction(0, "empty instruction")
    pos = 0
    if len(words) >= 2 and (words[0], words[1]) in {("go", "to"), ("pick", "up")}:
        verb = _VERB_WORDS[words[0] + words[1]]
        pos = 2
    elif words[0] in _VERB_WORDS:
        verb = _VERB_WORDS[words[0]]
        pos = 1
    else:
        raise MalformedInstruction(0, f"expected a verb, got {words[0]!r}")
    if pos < len(words) and words[pos] == "the":
        pos += 1
    if pos >= len(words):
        raise MalformedInstruction(pos, "missing color")
    if words[pos] not in _COLOR_WORDS:
        raise MalformedInstruction(pos, f"expected a color, got {words[pos]!r}")
    color = _COLOR_WORDS[words[pos]]
    pos += 1
    if pos >= len(words):
        raise MalformedInstruction(pos, "missing object")
    if words[pos] not in _OBJECT_WORDS:
        raise MalformedInstruction(pos, f"expected an object, got {words[pos]!r}")
    obj = _OBJECT_WORDS[words[pos]]
    pos += 1
    if pos != len(words):
        raise MalformedInstruction(pos, f"unexpected trailing word {words[pos]!r}")
    return Instruction(verb, color, obj)


def tokenize(instr: Instruction) -> list[int]:
    return [
        TOKEN_TABLE[instr.verb.name.lower()],
        TOKEN_TABLE[instr.color.name.lower()],
        TOKEN_TABLE[instr.object.name.lower()],
    ]


def enumerate_all() -> list[Instruction]:
    return [Instruction(v, c, o) for v, c, o in itertools.product(Verb, Color, ObjectKind)]


ALL_INSTRUCTIONS: tuple[Instruction, ...] = tuple(enumerate_all())


def sample_distinct(
    rng: np.random.Generator, m: int, exclude: Iterable[Instruction] = ()
) -> list[Instruction]:
    """Draw ``m`` distinct instructions uniformly without replacement from Z \\ exclude."""
    excluded = set(exclude)
    population = [z for z in ALL_INSTRUCTIONS if z not in excluded]
    if m < 0 or m > len(population):
        raise InsufficientPopulation(
            f"cannot draw {m} distinct instructions from {len(population)} available"
        )
    idx = rng.permutation(len(population))[:m]
    return [population[i] for i in idx]


def slug(instr: Instruction) -> str:
    """Filesystem-safe name, e.g. ``pickup_yellow_box``."""
    return render(instr).replace(" the ", "_").replace(" ", "_")
