"""Sortedness metrics and the ascending (f1) and two-direction (f2, f3) fitnesses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .program import MAX_DEPTH, Program, ProgramError

EVAL_SIZES = (10, 30, 50)
METRICS = ("f1", "f2", "f3")


@dataclass(frozen=True, eq=False)
class EvalSet:
    """Evaluation lists shared by every program of one generation."""

    lists: tuple[np.ndarray, ...]

    def __post_init__(self):
        for lst in self.lists:
            if len(lst) < 2:
                raise ValueError("evaluation lists need at least two values")
            lst.setflags(write=False)

    @property
    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        offsets = np.cumsum([0] + [len(x) for x in self.lists]).astype(np.int64)
        return np.concatenate(self.lists).astype(np.int64), offsets

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EvalSet):
            return NotImplemented
        return len(self.lists) == len(other.lists) and all(
            np.array_equal(a, b) for a, b in zip(self.lists, other.lists))


def make_eval_set(rng: np.random.Generator, sizes: Sequence[int] = EVAL_SIZES) -> EvalSet:
    return EvalSet(tuple(rng.permutation(np.arange(1, n + 1, dtype=np.int64))
                         for n in sizes))


@dataclass(frozen=True)
class FitnessScores:
    f1a: float
    f1d: float
    f2: float
    f3: float

    @classmethod
    def from_runs(cls, f1a: float, f1d: float) -> "FitnessScores":
        return cls(f1a, f1d, (f1a - f1d) / 2, (2 * f1a - f1d) / 3)


def forward_distance(result: Sequence[int]) -> int:
    return sum(abs(int(x) - (i + 1)) for i, x in enumerate(result))


def reverse_distance(result: Sequence[int]) -> int:
    n = len(result)
    return sum(abs(int(x) - (n - i)) for i, x in enumerate(result))


def normalized_metric(result: Sequence[int]) -> float:
    """1 for ascending order, -1 for descending; (R - F) / (F + R)."""
    fwd = forward_distance(result)
    rev = reverse_distance(result)
    if fwd + rev == 0:
        raise ValueError("metric undefined for lists shorter than two")
    return (rev - fwd) / (fwd + rev)


def _check_vars(code: np.ndarray, v: int) -> None:
    # columns 1..3 hold variable ids or 0/1 branch flags
    if code.size and (code[:, 1:4].min() < 0 or code[:, 1:4].max() > v + 2):
        raise ProgramError(f"program refers to variables outside v0..v{v + 2}")
    loop_vars = code[code[:, 0] == K.FOR, 1]
    if loop_vars.size and (loop_vars.min() < 1 or loop_vars.max() > v):
        raise ProgramError("loop variable is not writable")


def _pack(programs: Sequence[Program], v: int) -> tuple[np.ndarray, np.ndarray]:
    for p in programs:
        if p.depth > MAX_DEPTH:
            raise ProgramError(f"depth {p.depth} exceeds {MAX_DEPTH}")
    offsets = np.zeros(len(programs) + 1, np.int64)
    np.cumsum([p.node_count for p in programs], out=offsets[1:])
    code = np.concatenate([p.code for p in programs]) if programs else np.zeros((0, K.WIDTH), np.int64)
    _check_vars(code, v)
    return code, offsets


def score_population(programs: Sequence[Program], eval_set: EvalSet, v: int,
                     metric: str = "f1", direction: int = 0) -> np.ndarray:
    """Score every program against one EvalSet.

    ``metric="f1"`` honours ``direction``; f2 and f3 always run both directions.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    code, offsets = _pack(programs, v)
    lists, list_offsets = eval_set.flat
    f1a = K.score_batch(code, offsets, lists, list_offsets, v, direction if metric == "f1" else 0)
    if metric == "f1":
        return f1a
    f1d = K.score_batch(code, offsets, lists, list_offsets, v, 1)
    if metric == "f2":
        return (f1a - f1d) / 2
    return (2 * f1a - f1d) / 3


def eval_f1(program: Program, eval_set: EvalSet, v: int, direction: int = 0) -> float:
    return float(score_population([program], eval_set, v, "f1", direction)[0])


def eval_f2(program: Program, eval_set: EvalSet, v: int) -> FitnessScores:
    return FitnessScores.from_runs(eval_f1(program, eval_set, v, 0),
                                   eval_f1(program, eval_set, v, 1))


# f3 shares the two runs with f2; only the combination differs
eval_f3 = eval_f2


def is_working(score: float, tolerance: float = 0.0) -> bool:
    return score >= 1.0 - tolerance
