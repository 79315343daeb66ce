"""Asymmetric-traffic PIR capacity and the linear constraint system it induces.

For ``M`` in {2, 3} the best rate achievable with a non-increasing traffic
ratio ``tau`` is a minimum over index pairs ``n0 <= n1`` (just ``n0`` when
``M = 2``).  Rewriting ``L / D <= C(d / D)`` gives one linear inequality per
index pair and per ordering of the servers::

    D + (1/n0) * sum_{n>n0} d_(n) + 1/(n0*n1) * sum_{n>n1} d_(n) >= L (1 + 1/n0 + 1/(n0 n1))

The corner points of the resulting polyhedron are the explicit schemes that
time sharing mixes between.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import permutations
from math import comb, factorial
from typing import List, Sequence, Tuple

from ._exact import enumerate_vertices
from .errors import InvalidConfigError, SizeLimitError
from .model import (DownloadAllocation, Number, SystemConfig, is_exact, pir_capacity,
                    to_number)

__all__ = [
    "TrafficRatio", "LinearConstraint", "CornerPoint", "pir_capacity", "capacity_asym",
    "capacity_of_traffic", "rate_terms", "pir_constraints", "raw_constraint_count",
    "ordering_corner_pairs", "feasible", "violated_constraints", "corner_points",
    "sorted_cone_rows", "MAX_CORNER_SERVERS",
]

MAX_CORNER_SERVERS = 6
_FLOAT_TOL = 1e-9


@dataclass(frozen=True)
class TrafficRatio:
    tau: tuple

    def __post_init__(self):
        vals = tuple(to_number(v) for v in self.tau)
        if any(v < 0 or v > 1 for v in vals):
            raise ValueError(f"traffic ratios must lie in [0, 1], got {vals}")
        total = sum(vals, Fraction(0))
        if is_exact(vals):
            if total != 1:
                raise ValueError(f"traffic ratios sum to {total}, not 1")
        elif abs(total - 1) > _FLOAT_TOL:
            raise ValueError(f"traffic ratios sum to {total}, not 1")
        object.__setattr__(self, "tau", vals)

    def is_sorted(self) -> bool:
        return all(a >= b for a, b in zip(self.tau, self.tau[1:]))


@dataclass(frozen=True)
class LinearConstraint:
    """``coefficients . (d_1, ..., d_N, D)  <sense>  rhs``."""

    coefficients: tuple
    sense: str
    rhs: Number
    name: str = ""

    def __post_init__(self):
        if self.sense not in (">=", "<=", "=="):
            raise ValueError(f"bad sense {self.sense!r}")
        if not any(c != 0 for c in self.coefficients):
            raise ValueError("constraint has no nonzero coefficient")

    def slack(self, d: Sequence[Number]) -> Number:
        """Signed slack; non-negative means satisfied (for equalities, the residual)."""
        D = sum(d, Fraction(0))
        lhs = sum((c * v for c, v in zip(self.coefficients, list(d) + [D])), Fraction(0))
        if self.sense == ">=":
            return lhs - self.rhs
        if self.sense == "<=":
            return self.rhs - lhs
        return lhs - self.rhs

    def satisfied(self, d: Sequence[Number], tol: float = 0.0) -> bool:
        s = self.slack(d)
        if self.sense == "==":
            return abs(s) <= tol
        return s >= -tol


@dataclass(frozen=True)
class CornerPoint:
    allocation: DownloadAllocation
    rate: Fraction


def rate_terms(num_servers: int, num_messages: int) -> List[Tuple[tuple, tuple, Fraction]]:
    """Index tuples and tail weights of the capacity formula.

    Each entry is ``(indices, weights, c)`` where ``weights[k]`` multiplies the
    ``k``-th largest download (0-based) and ``c`` is the factor on ``L``.
    """
    N = num_servers
    terms = []
    if num_messages == 2:
        for n0 in range(1, N + 1):
            w = tuple(Fraction(1, n0) if k >= n0 else Fraction(0) for k in range(N))
            terms.append(((n0,), w, 1 + Fraction(1, n0)))
    elif num_messages == 3:
        for n0 in range(1, N + 1):
            for n1 in range(n0, N + 1):
                w = tuple((Fraction(1, n0) if k >= n0 else Fraction(0))
                          + (Fraction(1, n0 * n1) if k >= n1 else Fraction(0))
                          for k in range(N))
                terms.append(((n0, n1), w, 1 + Fraction(1, n0) + Fraction(1, n0 * n1)))
    else:
        raise InvalidConfigError(f"capacity formula covers only M in {{2, 3}}, got {num_messages}")
    return terms


def capacity_asym(tau, num_messages: int, return_argmin: bool = False):
    """Rate achievable under a non-increasing traffic ratio (literal formula).

    The caller is responsible for sorting; see :func:`capacity_of_traffic`.
    """
    ratio = tau if isinstance(tau, TrafficRatio) else TrafficRatio(tuple(tau))
    if not ratio.is_sorted():
        raise ValueError(f"traffic ratio must be non-increasing, got {ratio.tau}")
    N = len(ratio.tau)
    best = None
    arg = None
    for idx, w, c in rate_terms(N, num_messages):
        num = 1 + sum((wk * t for wk, t in zip(w, ratio.tau)), Fraction(0))
        value = num / c
        if best is None or value < best:
            best, arg = value, idx
    return (best, arg) if return_argmin else best


def capacity_of_traffic(tau, num_messages: int, return_argmin: bool = False):
    """Capacity for an arbitrary ordering: sort, evaluate, map the minimiser back.

    With ``return_argmin`` the second element is ``(indices, order)`` where
    ``order[k]`` is the server holding the ``k``-th largest share.
    """
    vals = tuple(to_number(v) for v in (tau.tau if isinstance(tau, TrafficRatio) else tau))
    order = sorted(range(len(vals)), key=lambda i: (-vals[i], i))
    value, idx = capacity_asym([vals[i] for i in order], num_messages, return_argmin=True)
    return (value, (idx, tuple(order))) if return_argmin else value


def _term_name(idx: tuple) -> str:
    return ",".join(f"n{k}={v}" for k, v in enumerate(idx))


def raw_constraint_count(num_servers: int, num_messages: int) -> int:
    """Number of permutation-form rate constraints before deduplication."""
    return factorial(num_servers) * len(rate_terms(num_servers, num_messages))


def ordering_corner_pairs(num_servers: int, num_messages: int) -> int:
    """The headline count ``N! * binom(N+M-1, M)`` quoted for the problem.

    This equals the number of (ordering, corner point) pairs; the rate
    inequality system itself has :func:`raw_constraint_count` rows.
    """
    return factorial(num_servers) * comb(num_servers + num_messages - 1, num_messages)


def pir_constraints(num_servers: int, num_messages: int, message_size,
                    deduplicate: bool = True) -> List[LinearConstraint]:
    """Full permutation-form constraint system over ``(d_1..d_N, D)``.

    Rate inequalities for every ordering, then ``d_n >= 0`` and ``1.d - D = 0``.
    """
    N = num_servers
    L = to_number(message_size)
    out: List[LinearConstraint] = []
    seen = set()
    terms = rate_terms(N, num_messages)
    for perm in permutations(range(N)):
        for idx, w, c in terms:
            coeffs = [Fraction(0)] * (N + 1)
            for k, server in enumerate(perm):
                coeffs[server] = w[k]
            coeffs[N] = Fraction(1)
            con = LinearConstraint(tuple(coeffs), ">=", c * L,
                                   f"rate[{_term_name(idx)};order={tuple(p + 1 for p in perm)}]")
            key = (con.coefficients, con.rhs)
            if deduplicate and key in seen:
                continue
            seen.add(key)
            out.append(con)
    for n in range(N):
        coeffs = [Fraction(0)] * (N + 1)
        coeffs[n] = Fraction(1)
        out.append(LinearConstraint(tuple(coeffs), ">=", Fraction(0), f"nonneg[d{n + 1}]"))
    coeffs = [Fraction(1)] * N + [Fraction(-1)]
    out.append(LinearConstraint(tuple(coeffs), "==", Fraction(0), "total[1.d=D]"))
    return out


def violated_constraints(d, config: SystemConfig) -> List[str]:
    """Names of every constraint ``d`` violates (empty list means feasible)."""
    vec = tuple(to_number(v) for v in (d.d if isinstance(d, DownloadAllocation) else d))
    if len(vec) != config.num_servers:
        return [f"dimension[{len(vec)}!={config.num_servers}]"]
    exact = is_exact(vec) and is_exact([config.message_size, config.r_min])
    scale = float(config.message_size) * config.num_messages
    tol = 0.0 if exact else _FLOAT_TOL * scale
    bad = [c.name for c in pir_constraints(config.num_servers, config.num_messages,
                                           config.message_size)
           if not c.satisfied(vec, tol)]
    D = sum(vec, Fraction(0))
    if D * config.r_min > config.message_size + tol:
        bad.append(f"rate_floor[D<=L/r_min={config.d_max}]")
    return bad


def feasible(d, config: SystemConfig) -> bool:
    return not violated_constraints(d, config)


def sorted_cone_rows(num_servers: int, num_messages: int, message_size,
                     d_max=None) -> List[Tuple[tuple, Fraction]]:
    """Rows ``a . d >= b`` describing the feasible set restricted to ``d_1 >= ... >= d_N``."""
    N = num_servers
    L = to_number(message_size)
    rows = []
    for _, w, c in rate_terms(N, num_messages):
        rows.append((tuple(1 + wk for wk in w), c * L))
    unit = [Fraction(0)] * N
    unit[-1] = Fraction(1)
    rows.append((tuple(unit), Fraction(0)))
    for i in range(N - 1):
        a = [Fraction(0)] * N
        a[i], a[i + 1] = Fraction(1), Fraction(-1)
        rows.append((tuple(a), Fraction(0)))
    if d_max is not None:
        rows.append((tuple([Fraction(-1)] * N), -Fraction(d_max)))
    return rows


def corner_points(num_servers: int, num_messages: int, message_size) -> List[CornerPoint]:
    """Vertices of the feasible region with ``d_1 >= ... >= d_N``, by increasing rate.

    There are ``binom(M+N-1, M)`` of them.
    """
    if num_servers > MAX_CORNER_SERVERS:
        raise SizeLimitError(
            f"corner enumeration is limited to N <= {MAX_CORNER_SERVERS}, got {num_servers}")
    L = to_number(message_size)
    if not is_exact([L]):
        L = Fraction(L)
    verts = enumerate_vertices(sorted_cone_rows(num_servers, num_messages, L), num_servers)
    corners = [CornerPoint(DownloadAllocation(v), L / sum(v, Fraction(0))) for v in verts]
    corners.sort(key=lambda c: (c.rate, tuple(-x for x in c.allocation.d)))
    return corners
