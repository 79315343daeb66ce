"""Peak-age minimisation: ``min 2 mu.d`` over the PIR constraint polytope.

Peak age is linear in ``d``, so time sharing between corner schemes loses
nothing and the optimum sits at a vertex of the polytope truncated by the rate
floor ``D <= L / r_min``.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from ._exact import enumerate_vertices, solve_exact
from .capacity import CornerPoint, corner_points, sorted_cone_rows
from .errors import InfeasibleError, InvalidConfigError
from .model import (DownloadAllocation, MixturePolicy, Number, Solution, SystemConfig,
                    epoch_mean, is_exact, mixture_peak_aoi, to_number)

__all__ = [
    "solve_peak", "solve_peak_n2m3", "solve_peak_lp", "time_share_policy",
    "high_rate_boundary_objective", "low_rate_boundary_objective",
    "high_rate_mixture", "low_rate_mixture",
    "ascending_order", "inverse_order",
]

_SCHEME_L = 8
_EXHAUSTIVE_LIMIT = 20_000


def ascending_order(values: Sequence[Number]) -> List[int]:
    """Stable permutation sorting ``values`` ascending."""
    return sorted(range(len(values)), key=lambda i: (values[i], i))


def inverse_order(order: Sequence[int]) -> List[int]:
    inv = [0] * len(order)
    for k, i in enumerate(order):
        inv[i] = k
    return inv


def _as_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def high_rate_boundary_objective(mu1, mu2, r_min, L=_SCHEME_L):
    """Peak age where ``D = L/r_min`` meets ``d_2 = 5L/2 - D`` (rates in [1/2, 4/7]).

    Written as ``16 [5/2 (mu2 - mu1) + (2 mu1 - mu2) / r_min]`` for ``L = 8``.
    """
    return Fraction(to_number(L)) / _SCHEME_L * 16 * (
        Fraction(5, 2) * (mu2 - mu1) + (2 * mu1 - mu2) / r_min)


def low_rate_boundary_objective(mu1, mu2, r_min, L=_SCHEME_L):
    """Peak age where ``D = L/r_min`` meets ``d_2 = 3L/2 - D/2`` (rates in [1/3, 1/2])."""
    return Fraction(to_number(L)) / _SCHEME_L * 8 * (
        3 * (mu2 - mu1) + (3 * mu1 - mu2) / r_min)


def _require_peak_config(config: SystemConfig):
    if config.num_servers < 2:
        raise InvalidConfigError("the solvers need at least two servers")


def _finish(config: SystemConfig, sorted_alloc, sorted_mixture: MixturePolicy,
            order, branch: str) -> Solution:
    inv = inverse_order(order)
    alloc = DownloadAllocation(tuple(sorted_alloc)).permuted(inv)
    mixture = sorted_mixture.permuted(inv)
    objective = mixture_peak_aoi(mixture, config.servers)
    return Solution(metric="peak", allocation=alloc, mixture=mixture, objective=objective,
                    ideal_objective=2 * epoch_mean(config.servers, alloc),
                    achieved_rate=config.message_size / mixture.expected_total,
                    branch=branch)


def solve_peak_n2m3(config: SystemConfig) -> Solution:
    """Closed-form optimum for two servers and three messages.

    Candidates are the corner schemes (7,7), (8,6), (12,4) and the point where
    the rate floor cuts the active PIR constraint, scaled by ``L/8``.
    """
    if config.num_servers != 2 or config.num_messages != 3:
        raise InvalidConfigError("closed form needs N=2, M=3")
    R = _as_fraction(config.r_min)
    if not Fraction(1, 3) <= R <= Fraction(4, 7):
        raise InvalidConfigError(f"r_min={R} outside [1/3, 4/7]")
    L = _as_fraction(config.message_size)
    s = L / _SCHEME_L
    order = ascending_order(config.mu)
    mu1, mu2 = (config.mu[i] for i in order)

    def pt(a, b):
        return (a * s, b * s)

    c77, c86, c124 = pt(7, 7), pt(8, 6), pt(12, 4)
    cands = []

    def add(d, mixture, objective, label):
        cands.append((objective, tuple(d), mixture, label))

    def corner(d):
        return MixturePolicy.single(DownloadAllocation(d))

    add(c77, corner(c77), 2 * (mu1 * c77[0] + mu2 * c77[1]), "corner(7,7)")
    add(c86, corner(c86), 2 * (mu1 * c86[0] + mu2 * c86[1]), "corner(8,6)")
    if R <= Fraction(1, 2):
        add(c124, corner(c124), 2 * (mu1 * c124[0] + mu2 * c124[1]), "corner(12,4)")
        mix = low_rate_mixture(R, L)
        add(mix.expected_allocation.d, mix, low_rate_boundary_objective(mu1, mu2, R, L),
            "boundary(24,0)-(12,4)")
    if R >= Fraction(1, 2):
        mix = high_rate_mixture(R, L)
        add(mix.expected_allocation.d, mix, high_rate_boundary_objective(mu1, mu2, R, L),
            "boundary(8,6)-(12,4)")
    objective, d, mixture, label = min(cands, key=lambda c: (c[0], c[1]))
    return _finish(config, d, mixture, order, f"closed-form:{label}")


def high_rate_mixture(r_min, L=_SCHEME_L) -> MixturePolicy:
    """Time sharing of the (8,6) and (12,4) schemes with ``P(8,6) = 8 - 4/r_min``.

    Its expected total download is ``L / r_min`` for ``r_min`` in [1/2, 4/7].
    """
    R, s = _as_fraction(r_min), Fraction(to_number(L)) / _SCHEME_L
    return _two_point((8 * s, 6 * s), (12 * s, 4 * s), 8 - 4 / R)


def low_rate_mixture(r_min, L=_SCHEME_L) -> MixturePolicy:
    """Time sharing of the (24,0) and (12,4) schemes with ``P(24,0) = 1/r_min - 2``."""
    R, s = _as_fraction(r_min), Fraction(to_number(L)) / _SCHEME_L
    return _two_point((24 * s, 0 * s), (12 * s, 4 * s), 1 / R - 2)


def _two_point(a, b, p_a) -> MixturePolicy:
    comps, probs = [], []
    for c, p in ((a, p_a), (b, 1 - p_a)):
        if p != 0:
            comps.append(DownloadAllocation(c))
            probs.append(p)
    return MixturePolicy(tuple(comps), tuple(probs))


def truncated_vertices(config: SystemConfig) -> List[tuple]:
    """Exact vertices (non-increasing order) of the feasible set cut by the rate floor."""
    L = _as_fraction(config.message_size)
    d_max = L / _as_fraction(config.r_min)
    rows = sorted_cone_rows(config.num_servers, config.num_messages, L, d_max)
    verts = enumerate_vertices(rows, config.num_servers)
    if not verts:
        raise InfeasibleError(f"no allocation reaches rate {config.r_min}")
    return verts


def solve_peak_lp(config: SystemConfig) -> Solution:
    """Exact LP optimum by vertex enumeration, for any N at desk scale.

    The polytope is symmetric under server permutations, so by the
    rearrangement inequality it is enough to search non-increasing vertices
    and hand the largest download to the fastest server.  Ties go to the
    lexicographically smallest non-increasing allocation.
    """
    _require_peak_config(config)
    order = ascending_order(config.mu)
    mu_sorted = [config.mu[i] for i in order]
    best = None
    for v in truncated_vertices(config):
        obj = 2 * sum((m * x for m, x in zip(mu_sorted, v)), Fraction(0))
        key = (obj, v)
        if best is None or key < best:
            best = key
    _, v = best
    L = _as_fraction(config.message_size)
    corners = corner_points(config.num_servers, config.num_messages, L)
    mixture = time_share_policy(DownloadAllocation(v), corners)
    return _finish(config, v, mixture, order, "vertex-lp")


def solve_peak(config: SystemConfig) -> Solution:
    if config.num_servers == 2 and config.num_messages == 3:
        return solve_peak_n2m3(config)
    return solve_peak_lp(config)


# --------------------------------------------------------------------------
# Time sharing
# --------------------------------------------------------------------------

def _alloc_of(c) -> DownloadAllocation:
    if isinstance(c, CornerPoint):
        return c.allocation
    if isinstance(c, DownloadAllocation):
        return c
    return DownloadAllocation(tuple(c))


def time_share_policy(target, corners: Sequence, mu: Optional[Sequence[Number]] = None
                      ) -> MixturePolicy:
    """Probabilities over ``corners`` whose expectation is exactly ``target``.

    With ``mu`` given, the decomposition minimises ``sum_k p_k (mu . d_k)^2``,
    i.e. the extra average age caused by time sharing.  Exact inputs give
    exact probabilities.
    """
    tgt = _alloc_of(target)
    allocs = [_alloc_of(c) for c in corners]
    if not allocs:
        raise InfeasibleError("no corner points to mix")
    n = len(tgt.d)
    for a in allocs:
        if a.d == tgt.d:
            return MixturePolicy.single(a)
    exact = is_exact(tgt.d) and all(is_exact(a.d) for a in allocs)
    V = np.array([[float(x) for x in a.d] for a in allocs])
    t = np.array([float(x) for x in tgt.d])
    if mu is not None:
        cost = (V @ np.array([float(m) for m in mu])) ** 2
    else:
        cost = np.zeros(len(allocs))
    A_eq = np.vstack([V.T, np.ones(len(allocs))])
    b_eq = np.append(t, 1.0)
    res = linprog(cost, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if exact:
        support = None
        if res.status == 0:
            support = [k for k in range(len(allocs)) if res.x[k] > 1e-10]
        policy = _exact_on_support(tgt, allocs, support) if support else None
        if policy is None:
            policy = _exact_exhaustive(tgt, allocs, mu)
        if policy is None:
            raise InfeasibleError(f"target {tgt.d} is outside the hull of the corner points")
        return policy
    if res.status != 0:
        raise InfeasibleError(f"target {tgt.d} is outside the hull of the corner points")
    p = np.clip(res.x, 0.0, None)
    support = [k for k in range(len(allocs)) if p[k] > 1e-12]
    sub = A_eq[:, support]
    refined, *_ = np.linalg.lstsq(sub, b_eq, rcond=None)
    if np.all(refined >= 0):
        p = np.zeros(len(allocs))
        p[support] = refined
    p = p / p.sum()
    resid = np.max(np.abs(V.T @ p - t)) if n else 0.0
    if resid > 1e-7 * max(1.0, float(np.max(np.abs(t)))):
        raise InfeasibleError(f"time-sharing residual {resid:.3g} too large for {tgt.d}")
    keep = [k for k in range(len(allocs)) if p[k] > 0]
    return MixturePolicy(tuple(allocs[k] for k in keep), tuple(float(p[k]) for k in keep))


def _exact_on_support(tgt, allocs, support) -> Optional[MixturePolicy]:
    rows = len(tgt.d) + 1
    cols = [list(allocs[k].d) + [Fraction(1)] for k in support]
    A = [[cols[j][i] for j in range(len(support))] for i in range(rows)]
    b = list(tgt.d) + [Fraction(1)]
    p = solve_exact(A, b)
    if p is None or any(x < 0 for x in p):
        return None
    keep = [(allocs[k], x) for k, x in zip(support, p) if x != 0]
    return MixturePolicy(tuple(a for a, _ in keep), tuple(x for _, x in keep))


def _exact_exhaustive(tgt, allocs, mu) -> Optional[MixturePolicy]:
    n = len(tgt.d)
    best = None
    count = 0
    for size in range(1, min(n + 1, len(allocs)) + 1):
        for subset in combinations(range(len(allocs)), size):
            count += 1
            if count > _EXHAUSTIVE_LIMIT:
                return best[1] if best else None
            pol = _exact_on_support(tgt, allocs, list(subset))
            if pol is None:
                continue
            if mu is None:
                return pol
            cost = sum((p * epoch_mean_raw(mu, c.d) ** 2
                        for c, p in zip(pol.components, pol.probabilities)), Fraction(0))
            if best is None or cost < best[0]:
                best = (cost, pol)
    return best[1] if best else None


def epoch_mean_raw(mu, d):
    return sum((m * x for m, x in zip(mu, d)), Fraction(0))
