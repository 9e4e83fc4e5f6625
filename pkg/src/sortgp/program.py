"""Tree-structured sorting programs: node types, generation, mutation, text form.

A :class:`Program` keeps its tree in prefix order in a small read-only integer
array (the layout is described in :mod:`sortgp._kernels`).  The node
dataclasses below are the readable view of the same tree; convert with
:meth:`Program.from_root` and :attr:`Program.root`.

Variable numbering for ``v`` writable variables::

    0        always 0                 (read-only)
    1 .. v   writable, start at 0
    v + 1    length of the list       (read-only)
    v + 2    0 ascending, 1 descending (read-only)

Text form, one node per parenthesised group::

    node   := "(for" var var var node ")"      loop var, init var, limit var, body
            | "(if" var branch branch ")"      test var, then, else
            | "(cswap" var var ")"
            | "(rcswap" var var ")"
    branch := node | "nil"
    var    := "v" digits
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Optional, Union

import numpy as np

from . import _kernels as K

MAX_DEPTH = K.MAX_DEPTH
DEFAULT_P_ABSENT = 0.25

VarId = int


def read_only_vars(v: int) -> tuple[int, int, int]:
    return (0, v + 1, v + 2)


def is_writable(index: VarId, v: int) -> bool:
    return 1 <= index <= v


@dataclass(frozen=True)
class For:
    loop_var: VarId
    init_var: VarId
    limit_var: VarId
    body: "ProgramNode"


@dataclass(frozen=True)
class IfElse:
    test_var: VarId
    then_branch: Optional["ProgramNode"] = None
    else_branch: Optional["ProgramNode"] = None


@dataclass(frozen=True)
class CompareSwap:
    pos_a: VarId
    pos_b: VarId


@dataclass(frozen=True)
class ReverseCompareSwap:
    pos_a: VarId
    pos_b: VarId


ProgramNode = Union[For, IfElse, CompareSwap, ReverseCompareSwap]


class ProgramError(ValueError):
    pass


def _emit(node: ProgramNode, rows: list[list[int]]) -> None:
    if isinstance(node, For):
        rows.append([K.FOR, node.loop_var, node.init_var, node.limit_var, 0])
        _emit(node.body, rows)
    elif isinstance(node, IfElse):
        rows.append([K.IFELSE, node.test_var,
                     int(node.then_branch is not None),
                     int(node.else_branch is not None), 0])
        if node.then_branch is not None:
            _emit(node.then_branch, rows)
        if node.else_branch is not None:
            _emit(node.else_branch, rows)
    elif isinstance(node, CompareSwap):
        rows.append([K.CSWAP, node.pos_a, node.pos_b, 0, 0])
    elif isinstance(node, ReverseCompareSwap):
        rows.append([K.RCSWAP, node.pos_a, node.pos_b, 0, 0])
    else:
        raise ProgramError(f"not a program node: {node!r}")


class Program:
    """An immutable program tree.

    Equality and hashing are structural, so programs can be used as dict keys
    and compared across processes.
    """

    __slots__ = ("code", "_depth", "_root")

    def __init__(self, code: np.ndarray):
        code = np.array(code, dtype=np.int64, copy=True)
        if code.ndim != 2 or code.shape[1] != K.WIDTH or code.shape[0] == 0:
            raise ProgramError("program code must be a non-empty (n, 5) array")
        ops = code[:, 0]
        if ops.min() < K.FOR or ops.max() > K.RCSWAP:
            raise ProgramError("unknown opcode")
        flags = code[ops == K.IFELSE, 2:4]
        if flags.size and (flags.min() < 0 or flags.max() > 1):
            raise ProgramError("IfElse branch flags must be 0 or 1")
        if not K.fill_ends(code, 0, code.shape[0]) or code[0, 4] != code.shape[0]:
            raise ProgramError("code does not describe exactly one tree")
        code.setflags(write=False)
        self.code = code
        self._depth: Optional[int] = None
        self._root: Optional[ProgramNode] = None

    @classmethod
    def from_root(cls, root: ProgramNode) -> "Program":
        rows: list[list[int]] = []
        _emit(root, rows)
        prog = cls(np.array(rows, dtype=np.int64))
        prog._root = root
        return prog

    @classmethod
    def parse(cls, text: str) -> "Program":
        return cls.from_root(parse_node(text))

    @property
    def node_count(self) -> int:
        return self.code.shape[0]

    @property
    def depth(self) -> int:
        if self._depth is None:
            self._depth = int(self.node_depths().max())
        return self._depth

    def node_depths(self) -> np.ndarray:
        """Depth (root = 1) of every node, in prefix order."""
        return K.node_depths(self.code, 0, self.node_count)

    @property
    def root(self) -> ProgramNode:
        if self._root is None:
            self._root, _ = _build(self.code, 0)
        return self._root

    def validate(self, v: int, max_depth: int = MAX_DEPTH) -> None:
        """Raise :class:`ProgramError` unless the tree is valid for ``v`` variables."""
        if self.depth > max_depth:
            raise ProgramError(f"depth {self.depth} exceeds {max_depth}")
        top = v + 2
        for op, a, b, c, _ in self.code:
            if op == K.FOR:
                if not is_writable(a, v):
                    raise ProgramError(f"loop variable v{a} is not writable")
                used = (a, b, c)
            elif op == K.IFELSE:
                used = (a,)
            elif op in (K.CSWAP, K.RCSWAP):
                used = (a, b)
            else:
                raise ProgramError(f"unknown opcode {op}")
            if any(not 0 <= x <= top for x in used):
                raise ProgramError(f"variable outside v0..v{top}")

    def subtree_span(self, pos: int) -> tuple[int, int]:
        return pos, int(self.code[pos, 4])

    def __len__(self) -> int:
        return self.node_count

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Program):
            return NotImplemented
        return np.array_equal(self.code, other.code)

    def __hash__(self) -> int:
        return hash(self.code.tobytes())

    def __str__(self) -> str:
        return format_node(self.root)

    def __repr__(self) -> str:
        return f"Program({str(self)!r})"


def _build(code: np.ndarray, i: int) -> tuple[ProgramNode, int]:
    op, a, b, c, _ = (int(x) for x in code[i])
    if op == K.FOR:
        body, nxt = _build(code, i + 1)
        return For(a, b, c, body), nxt
    if op == K.IFELSE:
        nxt = i + 1
        then = other = None
        if b:
            then, nxt = _build(code, nxt)
        if c:
            other, nxt = _build(code, nxt)
        return IfElse(a, then, other), nxt
    cls = CompareSwap if op == K.CSWAP else ReverseCompareSwap
    return cls(a, b), i + 1


def depth(p: Program) -> int:
    return p.depth


def node_count(p: Program) -> int:
    return p.node_count


def _check_generation_args(v: int, max_depth: int) -> None:
    if v < 1:
        raise ValueError("need at least one writable variable")
    if not 1 <= max_depth <= MAX_DEPTH:
        raise ValueError(f"max_depth must be in 1..{MAX_DEPTH}")


def _seed_from(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**32))


def random_program(v: int, max_depth: int, rng: np.random.Generator,
                   p_absent: float = DEFAULT_P_ABSENT) -> Program:
    """Grow a random tree no deeper than ``max_depth``.

    Above the last level each node is one of the four node types with equal
    probability; on the last level it is one of the two swap leaves.  Each
    IfElse branch is left empty with probability ``p_absent``.
    """
    _check_generation_args(v, max_depth)
    code, _ = K.grow_batch(_seed_from(rng), 1, max_depth, v, p_absent)
    return Program(code)


def random_population(size: int, v: int, rng: np.random.Generator,
                      max_depth: int = MAX_DEPTH,
                      p_absent: float = DEFAULT_P_ABSENT) -> list[Program]:
    _check_generation_args(v, max_depth)
    code, offsets = K.grow_batch(_seed_from(rng), size, max_depth, v, p_absent)
    return [Program(code[offsets[k]:offsets[k + 1]]) for k in range(size)]


def mutate(parent: Program, v: int, rng: np.random.Generator,
           max_depth: int = MAX_DEPTH,
           p_absent: float = DEFAULT_P_ABSENT) -> Program:
    """Replace the subtree at a uniformly chosen node with a fresh random one."""
    pos = int(rng.integers(0, parent.node_count))
    return mutate_at(parent, pos, v, rng, max_depth, p_absent)


def mutate_at(parent: Program, pos: int, v: int, rng: np.random.Generator,
              max_depth: int = MAX_DEPTH,
              p_absent: float = DEFAULT_P_ABSENT) -> Program:
    """Replace the subtree rooted at prefix position ``pos``.

    The new subtree may be as deep as the room left below that node, so the
    result never exceeds ``max_depth``.
    """
    room = max_depth - int(parent.node_depths()[pos]) + 1
    if room < 1:
        raise ProgramError(f"node {pos} already lies below depth {max_depth}")
    sub, _ = K.grow_batch(_seed_from(rng), 1, room, v, p_absent)
    start, stop = parent.subtree_span(pos)
    return Program(np.concatenate([parent.code[:start], sub, parent.code[stop:]]))


def iter_nodes(node: Optional[ProgramNode]) -> Iterator[ProgramNode]:
    """Prefix-order walk over the dataclass view."""
    if node is None:
        return
    yield node
    if isinstance(node, For):
        yield from iter_nodes(node.body)
    elif isinstance(node, IfElse):
        yield from iter_nodes(node.then_branch)
        yield from iter_nodes(node.else_branch)


def format_node(node: Optional[ProgramNode]) -> str:
    if node is None:
        return "nil"
    if isinstance(node, For):
        return (f"(for v{node.loop_var} v{node.init_var} v{node.limit_var} "
                f"{format_node(node.body)})")
    if isinstance(node, IfElse):
        return (f"(if v{node.test_var} {format_node(node.then_branch)} "
                f"{format_node(node.else_branch)})")
    name = "cswap" if isinstance(node, CompareSwap) else "rcswap"
    return f"({name} v{node.pos_a} v{node.pos_b})"


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_node(text: str) -> ProgramNode:
    tokens = _TOKEN.findall(text)
    node, pos = _parse(tokens, 0, allow_nil=False)
    if pos != len(tokens):
        raise ProgramError(f"trailing input after program: {' '.join(tokens[pos:])}")
    return node


def _parse_var(tokens: list[str], pos: int) -> tuple[int, int]:
    if pos >= len(tokens) or not re.fullmatch(r"v\d+", tokens[pos]):
        got = tokens[pos] if pos < len(tokens) else "end of input"
        raise ProgramError(f"expected variable, got {got}")
    return int(tokens[pos][1:]), pos + 1


def _expect(tokens: list[str], pos: int, tok: str) -> int:
    if pos >= len(tokens) or tokens[pos] != tok:
        got = tokens[pos] if pos < len(tokens) else "end of input"
        raise ProgramError(f"expected {tok!r}, got {got}")
    return pos + 1


def _parse(tokens: list[str], pos: int, allow_nil: bool):
    if pos < len(tokens) and tokens[pos] == "nil":
        if not allow_nil:
            raise ProgramError("nil is only allowed as an if branch")
        return None, pos + 1
    pos = _expect(tokens, pos, "(")
    if pos >= len(tokens):
        raise ProgramError("unexpected end of input")
    head = tokens[pos]
    pos += 1
    if head == "for":
        lv, pos = _parse_var(tokens, pos)
        init, pos = _parse_var(tokens, pos)
        limit, pos = _parse_var(tokens, pos)
        body, pos = _parse(tokens, pos, allow_nil=False)
        node: ProgramNode = For(lv, init, limit, body)
    elif head == "if":
        test, pos = _parse_var(tokens, pos)
        then, pos = _parse(tokens, pos, allow_nil=True)
        other, pos = _parse(tokens, pos, allow_nil=True)
        node = IfElse(test, then, other)
    elif head in ("cswap", "rcswap"):
        a, pos = _parse_var(tokens, pos)
        b, pos = _parse_var(tokens, pos)
        node = CompareSwap(a, b) if head == "cswap" else ReverseCompareSwap(a, b)
    else:
        raise ProgramError(f"unknown node type {head!r}")
    return node, _expect(tokens, pos, ")")


def canonical_sorter(v: int, reverse: bool = False) -> Program:
    """The nested-loop sorter: for i in [0, n): for j in [i, n): swap(i, j)."""
    if v < 2:
        raise ValueError("the nested-loop sorter needs two writable variables")
    leaf = ReverseCompareSwap(1, 2) if reverse else CompareSwap(1, 2)
    n = v + 1
    return Program.from_root(For(1, 0, n, For(2, 1, n, leaf)))


def direction_sorter(v: int) -> Program:
    """Canonical sorter whose leaf picks the swap direction from variable v+2."""
    if v < 2:
        raise ValueError("the nested-loop sorter needs two writable variables")
    n = v + 1
    leaf = IfElse(v + 2, ReverseCompareSwap(1, 2), CompareSwap(1, 2))
    return Program.from_root(For(1, 0, n, For(2, 1, n, leaf)))
