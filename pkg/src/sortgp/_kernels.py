"""Compiled inner loops: tree generation, structure scans, execution, scoring.

Programs are stored in prefix order as an ``(n_nodes, 5)`` int64 array with
columns ``op, a, b, c, end``.  ``end`` is the index one past the node's
subtree, relative to the program's first row.

  op FOR      a=loop var  b=init var  c=limit var
  op IFELSE   a=test var  b=has-then  c=has-else
  op CSWAP    a=pos var   b=pos var
  op RCSWAP   a=pos var   b=pos var

Kernels that draw random numbers use numba's own generator and reseed it
from an explicit ``seed`` argument on entry, so every call is reproducible.
"""

from __future__ import annotations

import numpy as np
from numba import njit

FOR, IFELSE, CSWAP, RCSWAP = 0, 1, 2, 3
WIDTH = 5
MAX_DEPTH = 6
# an IfElse-only tree of depth 6 has 2**6 - 1 nodes
MAX_NODES = 63

PRED_F1 = 1
PRED_F2 = 2
PRED_CONDITIONAL = 3


@njit(cache=True)
def fill_ends(code, start, stop):
    """Recompute the ``end`` column for rows [start, stop).

    Returns False if the rows are not a sequence of complete trees.
    """
    stack = np.empty(stop - start + 1, np.int64)
    sp = 0
    for i in range(stop - 1, start - 1, -1):
        op = code[i, 0]
        if op == FOR:
            k = 1
        elif op == IFELSE:
            k = code[i, 2] + code[i, 3]
        else:
            k = 0
        if k > sp:
            return False
        end = i + 1
        for _ in range(k):
            sp -= 1
            end = stack[sp]
        code[i, 4] = end - start
        stack[sp] = end
        sp += 1
    return True


@njit(cache=True)
def node_depths(code, start, stop):
    out = np.zeros(stop - start, np.int64)
    out[0] = 1
    for i in range(start, stop):
        op = code[i, 0]
        d = out[i - start] + 1
        if op == FOR:
            out[i + 1 - start] = d
        elif op == IFELSE:
            c = i + 1
            for present in (code[i, 2], code[i, 3]):
                if present:
                    out[c - start] = d
                    c = start + code[c, 4]
    return out


@njit(cache=True)
def _grow(out, pos, max_depth, v, p_absent):
    """Grow one random tree into ``out`` starting at row ``pos``; return stop row."""
    pending = np.empty(2 * MAX_NODES + 2, np.int64)
    sp = 0
    pending[sp] = max_depth
    sp += 1
    start = pos
    while sp > 0:
        sp -= 1
        d = pending[sp]
        if d > 1:
            op = np.random.randint(0, 4)
        else:
            op = 2 + np.random.randint(0, 2)
        out[pos, 0] = op
        if op == FOR:
            out[pos, 1] = 1 + np.random.randint(0, v)
            out[pos, 2] = np.random.randint(0, v + 3)
            out[pos, 3] = np.random.randint(0, v + 3)
            pending[sp] = d - 1
            sp += 1
        elif op == IFELSE:
            out[pos, 1] = np.random.randint(0, v + 3)
            has_then = 1 if np.random.random() >= p_absent else 0
            has_else = 1 if np.random.random() >= p_absent else 0
            out[pos, 2] = has_then
            out[pos, 3] = has_else
            # push else first so the then-branch is emitted next
            if has_else:
                pending[sp] = d - 1
                sp += 1
            if has_then:
                pending[sp] = d - 1
                sp += 1
        else:
            out[pos, 1] = np.random.randint(0, v + 3)
            out[pos, 2] = np.random.randint(0, v + 3)
            out[pos, 3] = 0
        pos += 1
    fill_ends(out, start, pos)
    return pos


@njit(cache=True)
def grow_batch(seed, count, max_depth, v, p_absent):
    """Generate ``count`` independent grow trees; return (code, offsets)."""
    np.random.seed(seed)
    code = np.zeros((count * MAX_NODES, WIDTH), np.int64)
    offsets = np.zeros(count + 1, np.int64)
    pos = 0
    for k in range(count):
        pos = _grow(code, pos, max_depth, v, p_absent)
        offsets[k + 1] = pos
    return code[:pos].copy(), offsets


@njit(cache=True)
def _draw_length(support, cdf):
    u = np.random.random()
    k = np.searchsorted(cdf, u, side="right")
    if k >= support.shape[0]:
        k = support.shape[0] - 1
    return support[k]


@njit(cache=True)
def _grow_conditioned(out, pos, support, cdf, max_depth, v, p_absent, max_rejections):
    """Draw a target node count, rejection-sample a tree of exactly that size."""
    while True:
        target = _draw_length(support, cdf)
        for _ in range(max_rejections):
            stop = _grow(out, pos, max_depth, v, p_absent)
            if stop - pos == target:
                return stop


@njit(cache=True)
def conditioned_batch(seed, count, support, cdf, max_depth, v, p_absent, max_rejections):
    np.random.seed(seed)
    code = np.zeros((count * MAX_NODES, WIDTH), np.int64)
    offsets = np.zeros(count + 1, np.int64)
    pos = 0
    for k in range(count):
        pos = _grow_conditioned(code, pos, support, cdf, max_depth, v, p_absent, max_rejections)
        offsets[k + 1] = pos
    return code[:pos].copy(), offsets


@njit(cache=True)
def run(code, base, lst, variables, budget):
    """Execute the program at row ``base`` in place on ``lst``.

    Returns (statements executed, budget exhausted).
    """
    n = lst.shape[0]
    stack = np.empty(MAX_NODES + 1, np.int64)
    sp = 0
    count = 0
    i = 0
    while True:
        if i >= 0:
            row = base + i
            op = code[row, 0]
            count += 1
            if count > budget:
                return budget, True
            if op == FOR:
                lv = code[row, 1]
                variables[lv] = variables[code[row, 2]]
                count += 1
                if count > budget:
                    return budget, True
                if variables[lv] < variables[code[row, 3]]:
                    stack[sp] = i
                    sp += 1
                    i += 1
                else:
                    i = -1
            elif op == IFELSE:
                if variables[code[row, 1]] != 0:
                    i = i + 1 if code[row, 2] else -1
                elif code[row, 3]:
                    i = code[row + 1, 4] if code[row, 2] else i + 1
                else:
                    i = -1
            else:
                a = variables[code[row, 1]]
                b = variables[code[row, 2]]
                if 0 <= a < n and 0 <= b < n:
                    if op == CSWAP:
                        if lst[a] > lst[b]:
                            lst[a], lst[b] = lst[b], lst[a]
                    elif lst[a] < lst[b]:
                        lst[a], lst[b] = lst[b], lst[a]
                i = -1
        else:
            if sp == 0:
                break
            f = stack[sp - 1]
            row = base + f
            lv = code[row, 1]
            variables[lv] += 1
            count += 1
            if count > budget:
                return budget, True
            if variables[lv] < variables[code[row, 3]]:
                i = f + 1
            else:
                sp -= 1
    return count, False


@njit(cache=True)
def execute_one(code, lst, v, direction):
    out = lst.copy()
    n = out.shape[0]
    variables = np.zeros(v + 3, np.int64)
    variables[v + 1] = n
    variables[v + 2] = direction
    count, exhausted = run(code, 0, out, variables, 10 * n * n)
    return out, count, exhausted, variables


@njit(cache=True)
def metric(result):
    n = result.shape[0]
    fwd = 0
    rev = 0
    for i in range(n):
        fwd += abs(result[i] - (i + 1))
        rev += abs(result[i] - (n - i))
    return (rev - fwd) / (fwd + rev)


@njit(cache=True)
def score_batch(code, offsets, lists, list_offsets, v, direction):
    """Mean normalized metric of every program over every evaluation list."""
    n_prog = offsets.shape[0] - 1
    n_lists = list_offsets.shape[0] - 1
    scores = np.zeros(n_prog)
    variables = np.zeros(v + 3, np.int64)
    work = np.empty(lists.shape[0], np.int64)
    for p in range(n_prog):
        total = 0.0
        for k in range(n_lists):
            lo = list_offsets[k]
            hi = list_offsets[k + 1]
            n = hi - lo
            buf = work[:n]
            buf[:] = lists[lo:hi]
            variables[:] = 0
            variables[v + 1] = n
            variables[v + 2] = direction
            run(code, offsets[p], buf, variables, 10 * n * n)
            total += metric(buf)
        scores[p] = total / n_lists
    return scores


@njit(cache=True)
def _sorted_as(code, base, src, buf, variables, v, direction):
    n = src.shape[0]
    buf[:n] = src
    variables[:] = 0
    variables[v + 1] = n
    variables[v + 2] = direction
    run(code, base, buf[:n], variables, 10 * n * n)
    if direction == 0:
        for i in range(n):
            if buf[i] != i + 1:
                return False
    else:
        for i in range(n):
            if buf[i] != n - i:
                return False
    return True


@njit(cache=True)
def _shuffle_into(buf, n):
    for i in range(n):
        buf[i] = i + 1
    for i in range(n - 1, 0, -1):
        j = np.random.randint(0, i + 1)
        buf[i], buf[j] = buf[j], buf[i]


@njit(cache=True)
def density_batch(seed, count, support, cdf, max_depth, v, p_absent, max_rejections,
                  predicate, sizes):
    """Sample ``count`` length-conditioned programs and test them for working.

    Each program gets its own fresh evaluation lists, drawn lazily so that a
    failure on the first list skips the rest.  Returns (f1 hits, f2 hits).
    For PRED_F1 only the first is meaningful; for PRED_F2 both count f2
    hits; for PRED_CONDITIONAL f2 is only tested on f1 hits.
    """
    np.random.seed(seed)
    code = np.zeros((MAX_NODES, WIDTH), np.int64)
    n_sizes = sizes.shape[0]
    nmax = 0
    for s in sizes:
        nmax = max(nmax, s)
    lists = np.zeros((n_sizes, nmax), np.int64)
    buf = np.zeros(nmax, np.int64)
    variables = np.zeros(v + 3, np.int64)
    f1_hits = 0
    f2_hits = 0
    for _ in range(count):
        _grow_conditioned(code, 0, support, cdf, max_depth, v, p_absent, max_rejections)
        ok = True
        for k in range(n_sizes):
            _shuffle_into(lists[k], sizes[k])
            if not _sorted_as(code, 0, lists[k, :sizes[k]], buf, variables, v, 0):
                ok = False
                break
        if not ok:
            continue
        if predicate != PRED_F2:
            f1_hits += 1
            if predicate == PRED_F1:
                continue
        for k in range(n_sizes):
            if not _sorted_as(code, 0, lists[k, :sizes[k]], buf, variables, v, 1):
                ok = False
                break
        if ok:
            f2_hits += 1
    return f1_hits, f2_hits
