"""Run a program against a list of integers under a statement budget.

Every executed node costs one statement, and a For loop additionally costs
one statement per loop test (including the failing one).  Execution stops
as soon as the next statement would exceed the budget; the list is left as
it was at that point.

List positions are 0-based.  A swap whose operand variables do not both hold
valid positions does nothing, but is still counted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels as K
from .program import (
    CompareSwap,
    For,
    IfElse,
    MAX_DEPTH,
    Program,
    ProgramNode,
)


def budget_for(n: int) -> int:
    """Statement budget for a list of length ``n``: ten times n squared."""
    if n < 1:
        raise ValueError("list must be non-empty")
    return 10 * n * n


@dataclass(frozen=True)
class ExecOutcome:
    final_list: tuple[int, ...]
    statements_executed: int
    budget_exhausted: bool
    variables: tuple[int, ...] = ()


def _check(program: Program, lst: Sequence[int], v: int, direction: int) -> None:
    if len(lst) == 0:
        raise ValueError("list must be non-empty")
    if direction not in (0, 1):
        raise ValueError("direction must be 0 or 1")
    program.validate(v, MAX_DEPTH)


def execute(program: Program, lst: Sequence[int], v: int,
            direction: int = 0) -> ExecOutcome:
    _check(program, lst, v, direction)
    arr = np.asarray(lst, dtype=np.int64)
    out, count, exhausted, variables = K.execute_one(program.code, arr, v, direction)
    return ExecOutcome(tuple(int(x) for x in out), int(count), bool(exhausted),
                       tuple(int(x) for x in variables))


class _Exhausted(Exception):
    pass


class ReferenceInterpreter:
    """Slow tree-walking interpreter over the node dataclasses.

    It shares no code with the compiled path and is used to cross-check it.
    Pass ``trace`` to receive one text line per statement.
    """

    def __init__(self, v: int, direction: int = 0,
                 trace: Optional[Callable[[str], None]] = None):
        self.v = v
        self.direction = direction
        self.trace = trace

    def run(self, program: Program, lst: Sequence[int]) -> ExecOutcome:
        _check(program, lst, self.v, self.direction)
        self.lst = [int(x) for x in lst]
        n = len(self.lst)
        self.vars = [0] * (self.v + 3)
        self.vars[self.v + 1] = n
        self.vars[self.v + 2] = self.direction
        self.budget = budget_for(n)
        self.count = 0
        exhausted = False
        try:
            self._exec(program.root)
        except _Exhausted:
            exhausted = True
        return ExecOutcome(tuple(self.lst), self.count, exhausted, tuple(self.vars))

    def _tick(self, what: str) -> None:
        if self.count + 1 > self.budget:
            if self.trace:
                self.trace(f"budget of {self.budget} statements exhausted")
            raise _Exhausted
        self.count += 1
        if self.trace:
            self.trace(f"{self.count:6d} {what} vars={self.vars}")

    def _exec(self, node: Optional[ProgramNode]) -> None:
        if node is None:
            return
        V = self.vars
        if isinstance(node, For):
            self._tick(f"for v{node.loop_var}=v{node.init_var}")
            V[node.loop_var] = V[node.init_var]
            while True:
                self._tick(f"test v{node.loop_var}<v{node.limit_var}")
                if not V[node.loop_var] < V[node.limit_var]:
                    break
                self._exec(node.body)
                V[node.loop_var] += 1
        elif isinstance(node, IfElse):
            self._tick(f"if v{node.test_var}")
            self._exec(node.then_branch if V[node.test_var] != 0 else node.else_branch)
        else:
            self._tick(f"{type(node).__name__} v{node.pos_a} v{node.pos_b}")
            a, b = V[node.pos_a], V[node.pos_b]
            n = len(self.lst)
            if 0 <= a < n and 0 <= b < n:
                x, y = self.lst[a], self.lst[b]
                if (x > y) if isinstance(node, CompareSwap) else (x < y):
                    self.lst[a], self.lst[b] = y, x


def trace_execute(program: Program, lst: Sequence[int], v: int,
                  direction: int = 0) -> tuple[ExecOutcome, list[str]]:
    """Execute with the reference interpreter and return its statement log."""
    lines: list[str] = []
    outcome = ReferenceInterpreter(v, direction, trace=lines.append).run(program, lst)
    return outcome, lines

