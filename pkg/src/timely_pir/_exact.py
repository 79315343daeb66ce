"""Exact rational linear algebra and vertex enumeration for small polytopes."""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations
from math import comb
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import SizeLimitError

MAX_SUBSETS = 2_000_000


def solve_exact(A: Sequence[Sequence[Fraction]], b: Sequence[Fraction]) -> Optional[List[Fraction]]:
    """Solve ``A x = b`` exactly; ``A`` may be tall.

    Returns None when the system is inconsistent or its solution is not unique.
    """
    rows = len(A)
    cols = len(A[0]) if rows else 0
    M = [[Fraction(v) for v in A[i]] + [Fraction(b[i])] for i in range(rows)]
    pivot_row = 0
    pivots = []
    for c in range(cols):
        p = next((r for r in range(pivot_row, rows) if M[r][c] != 0), None)
        if p is None:
            return None
        M[pivot_row], M[p] = M[p], M[pivot_row]
        piv = M[pivot_row][c]
        M[pivot_row] = [v / piv for v in M[pivot_row]]
        for r in range(rows):
            if r != pivot_row and M[r][c] != 0:
                f = M[r][c]
                M[r] = [x - f * y for x, y in zip(M[r], M[pivot_row])]
        pivots.append(c)
        pivot_row += 1
    for r in range(pivot_row, rows):
        if M[r][cols] != 0:
            return None
    return [M[i][cols] for i in range(cols)]


def enumerate_vertices(rows: Sequence[Tuple[Sequence[Fraction], Fraction]],
                       dim: int, max_subsets: int = MAX_SUBSETS) -> List[Tuple[Fraction, ...]]:
    """Vertices of ``{x : a . x >= b for (a, b) in rows}``, exactly.

    Every ``dim``-subset of rows is solved in floating point first; only the
    candidates that look feasible are recomputed and rechecked with Fractions.
    """
    k = len(rows)
    n_subsets = comb(k, dim)
    if n_subsets > max_subsets:
        raise SizeLimitError(
            f"vertex enumeration needs {n_subsets} subsets (limit {max_subsets}); "
            f"reduce N")
    A = np.array([[float(v) for v in a] for a, _ in rows])
    b = np.array([float(v) for _, v in rows])
    scale = max(1.0, float(np.max(np.abs(b))) if k else 1.0)
    idx = np.array(list(combinations(range(k), dim)), dtype=np.intp)
    if idx.size == 0:
        return []
    mats = A[idx]
    rhs = b[idx]
    det = np.linalg.det(mats)
    ok = np.abs(det) > 1e-10
    mats, rhs, idx = mats[ok], rhs[ok], idx[ok]
    if len(idx) == 0:
        return []
    sols = np.linalg.solve(mats, rhs[..., None])[..., 0]
    slack = sols @ A.T - b
    feasible = np.all(slack >= -1e-7 * scale, axis=1)
    seen = set()
    out = []
    exact_rows = [([Fraction(v) for v in a], Fraction(v0)) for a, v0 in rows]
    for subset in idx[feasible]:
        x = solve_exact([exact_rows[i][0] for i in subset], [exact_rows[i][1] for i in subset])
        if x is None:
            continue
        key = tuple(x)
        if key in seen:
            continue
        if all(sum((ai * xi for ai, xi in zip(a, x)), Fraction(0)) >= bb for a, bb in exact_rows):
            seen.add(key)
            out.append(key)
    return sorted(out)


def lower_hull(points: Sequence[Tuple[Fraction, Fraction]]) -> List[Tuple[Fraction, Fraction]]:
    """Lower convex hull of planar points, left to right (Andrew's monotone chain)."""
    pts = sorted(set(points))
    hull: List[Tuple[Fraction, Fraction]] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            cross = (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1)
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    while len(hull) >= 2 and hull[-1][0] == hull[-2][0]:
        hull.pop()
    return hull
