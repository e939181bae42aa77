"""Linear assignment between ground-truth elements and output slots.

Rows are ground-truth elements (m), columns are output slots (M), m <= M.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

MAX_ENUM_SLOTS = 8
MAX_BRUTE_ROWS = 8


class SizeLimitError(ValueError):
    """Raised when an exhaustive routine is asked for a problem that is too big."""


class NonFiniteCostError(ValueError):
    pass


@dataclass(frozen=True)
class AssignmentResult:
    perm: tuple[int, ...]
    cost: float
    lehmer: Optional[int] = None


def _check_cost(cost) -> np.ndarray:
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {c.shape}")
    m, n = c.shape
    if m > n:
        raise ValueError(f"more rows than columns ({m} > {n})")
    if not np.all(np.isfinite(c)):
        raise NonFiniteCostError("cost matrix has non-finite entries")
    return c


def hungarian(cost) -> AssignmentResult:
    """Minimum-cost injective row -> column assignment.

    Shortest-augmenting-path Hungarian method with row/column potentials,
    O(m^2 M).  Works directly on rectangular m <= M matrices.
    """
    c = _check_cost(cost)
    m, n = c.shape
    if m == 0:
        return AssignmentResult((), 0.0)
    rows = c.tolist()
    inf = math.inf
    # 1-based potentials; column 0 is the virtual root of each augmenting tree
    u = [0.0] * (m + 1)
    v = [0.0] * (n + 1)
    match_col = [0] * (n + 1)  # row assigned to column j (0 = free)
    way = [0] * (n + 1)
    for i in range(1, m + 1):
        match_col[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            row = rows[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1
    perm = [0] * m
    for j in range(1, n + 1):
        if match_col[j]:
            perm[match_col[j] - 1] = j - 1
    total = float(sum(c[r, perm[r]] for r in range(m)))
    return AssignmentResult(tuple(perm), total)


def brute_force_assignment(cost) -> AssignmentResult:
    """Exhaustive minimum over all injections; ties go to the lexicographically
    smallest permutation (test oracle)."""
    c = _check_cost(cost)
    m, n = c.shape
    if m > MAX_BRUTE_ROWS:
        raise SizeLimitError(f"brute force limited to {MAX_BRUTE_ROWS} rows, got {m}")
    best_perm: tuple[int, ...] = ()
    best = math.inf
    rows = range(m)
    # permutations() yields in lexicographic order, so strict < keeps the first
    for perm in itertools.permutations(range(n), m):
        total = float(sum(c[r, perm[r]] for r in rows))
        if total < best:
            best, best_perm = total, perm
    if m == 0:
        best = 0.0
    return AssignmentResult(tuple(best_perm), best)


def lehmer_encode(perm) -> int:
    """Lexicographic rank of a full permutation of ``range(len(perm))``."""
    p = [int(x) for x in perm]
    n = len(p)
    if sorted(p) != list(range(n)):
        raise ValueError(f"not a permutation: {perm}")
    index = 0
    remaining = list(range(n))
    for pos, x in enumerate(p):
        k = remaining.index(x)
        index += k * math.factorial(n - 1 - pos)
        remaining.pop(k)
    return index


def lehmer_decode(index: int, n: int) -> tuple[int, ...]:
    if n > MAX_ENUM_SLOTS:
        raise SizeLimitError(f"permutation indexing capped at {MAX_ENUM_SLOTS} slots")
    total = math.factorial(n)
    if not 0 <= index < total:
        raise ValueError(f"index {index} out of range [0, {total})")
    remaining = list(range(n))
    out = []
    for pos in range(n):
        f = math.factorial(n - 1 - pos)
        k, index = divmod(index, f)
        out.append(remaining.pop(k))
    return tuple(out)


_PERM_TABLES: dict[int, np.ndarray] = {}


def all_permutations(n: int) -> np.ndarray:
    """(n!, n) array of permutations; row r is ``lehmer_decode(r, n)``."""
    if n > MAX_ENUM_SLOTS:
        raise SizeLimitError(f"permutation enumeration capped at {MAX_ENUM_SLOTS} slots")
    table = _PERM_TABLES.get(n)
    if table is None:
        table = np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)
        table.setflags(write=False)
        _PERM_TABLES[n] = table
    return table
