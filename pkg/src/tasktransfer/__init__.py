"""Instruction-labeled base policies, task-adaptation sampling and a pairwise
transfer classifier over gridworld instructions."""

__version__ = "0.1.0"
