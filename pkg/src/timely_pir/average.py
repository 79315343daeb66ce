"""Average-age minimisation.

The objective ``(3/2) mu.d + (1/2) sigma.d / mu.d`` is linear-fractional in
``d``.  With ``t = 1 / mu.d`` and ``x = d t`` (Charnes-Cooper) it becomes
``(3/2)/t + (1/2) sigma.x``, jointly convex in ``(x, t)``, over a set that is
convex once the total download ``D`` is fixed.  That gives an inner problem
in ``(x, t)`` and a one-dimensional outer search over ``D``.

Two servers are handled analytically (the inner problem is one-dimensional in
``t``), larger systems by an exact hull construction, with the nested numeric
solver kept as an independent route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import permutations
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from ._exact import lower_hull
from .capacity import corner_points, pir_constraints, rate_terms
from .errors import (ConvergenceError, DegenerateBranchError, InfeasibleError,
                     InvalidConfigError)
from .model import (FLOAT_RTOL, DownloadAllocation, MixturePolicy, Number, Solution,
                    SystemConfig, avg_aoi, is_exact, mixture_avg_aoi)
from .peak import inverse_order, time_share_policy, truncated_vertices

__all__ = [
    "TransformedPoint", "inner_solution", "constrained_inner", "outer_minimize",
    "least_stationary_total", "equal_mean_solver", "single_server_fallback",
    "boundary_solver", "solve_avg_n2", "solve_avg_hull", "solve_avg_general", "solve_avg",
    "all_orientation_corners", "stationary_t",
]

INNER_TOL = 1e-8
_GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class TransformedPoint:
    """Charnes-Cooper coordinates ``x = d t`` with ``t = 1 / mu.d``."""

    x: tuple
    t: Number
    D: Number

    @classmethod
    def from_allocation(cls, d, mu: Sequence[Number]) -> "TransformedPoint":
        vec = tuple(d.d if isinstance(d, DownloadAllocation) else d)
        s = sum((m * v for m, v in zip(mu, vec)), Fraction(0))
        if s == 0:
            raise ValueError("allocation has zero epoch mean")
        t = 1 / s
        return cls(tuple(v * t for v in vec), t, sum(vec, Fraction(0)))

    def to_allocation(self) -> DownloadAllocation:
        return DownloadAllocation(tuple(max(v / self.t, 0) if not isinstance(v, Fraction)
                                        else v / self.t for v in self.x))

    @property
    def nonnegative(self) -> bool:
        return all(v >= 0 for v in self.x)

    def residuals(self, mu: Sequence[Number]) -> tuple:
        """``(mu.x - 1, 1.x - D t)``; both vanish on a valid point."""
        mx = sum((m * v for m, v in zip(mu, self.x)), Fraction(0))
        return mx - 1, sum(self.x, Fraction(0)) - self.D * self.t

    def objective(self, sigma2: Sequence[Number]) -> Number:
        return Fraction(3, 2) / self.t + sum((s * v for s, v in zip(sigma2, self.x)),
                                             Fraction(0)) / 2


def _equal(a, b) -> bool:
    if is_exact([a, b]):
        return a == b
    return abs(a - b) <= FLOAT_RTOL * max(abs(a), abs(b))


def _sqrt(x):
    return math.sqrt(float(x))


def stationary_t(D, mu1, mu2, s1, s2) -> float:
    """Unconstrained minimiser of the two-server inner objective over ``t``."""
    K = s1 * mu2 - s2 * mu1
    dm = mu2 - mu1
    if dm <= 0 or K <= 0:
        raise DegenerateBranchError(
            f"t*(D) is not a positive real: mu2-mu1={dm}, s1*mu2-s2*mu1={K}")
    return _sqrt(3 * dm / (K * D))


def inner_solution(D, config: SystemConfig) -> TransformedPoint:
    """Stationary inner point for two servers given in order ``mu_1 < mu_2``.

    The two equalities ``mu.x = 1`` and ``1.x = D t`` pin ``x`` once ``t`` is
    known; ``t`` is the root of the derivative of the substituted objective.
    Neither the PIR inequalities nor ``x >= 0`` are imposed here (check
    :attr:`TransformedPoint.nonnegative`); :func:`constrained_inner` enforces them.
    """
    if config.num_servers != 2:
        raise InvalidConfigError("inner_solution is the two-server formula")
    (mu1, mu2), (s1, s2) = config.mu, config.sigma2
    if not mu1 < mu2 or _equal(mu1, mu2):
        raise DegenerateBranchError("need mu_1 < mu_2 strictly; use equal_mean_solver")
    t = stationary_t(D, mu1, mu2, s1, s2)
    dm = mu2 - mu1
    x1 = (float(mu2) * float(D) * t - 1) / float(dm)
    x2 = (1 - float(mu1) * float(D) * t) / float(dm)
    return TransformedPoint((x1, x2), t, D)


class _TwoServer:
    """Two servers in canonical order: ascending mean, then ascending variance."""

    def __init__(self, config: SystemConfig):
        if config.num_servers != 2:
            raise InvalidConfigError("two-server routine called with N != 2")
        self.config = config
        self.order = sorted(range(2), key=lambda i: (config.mu[i], config.sigma2[i], i))
        self.mu1, self.mu2 = (config.mu[i] for i in self.order)
        self.s1, self.s2 = (config.sigma2[i] for i in self.order)
        L = config.message_size
        self.L = L
        self.lines = []  # (c, w): smaller download >= (cL - D)/w
        self.d_lo = Fraction(0)
        for _, w, c in rate_terms(2, config.num_messages):
            if w[1] == 0:
                self.d_lo = max(self.d_lo, c * L)
            else:
                self.lines.append((c, w[1]))
        self.d_max = L / config.r_min
        if self.d_lo > self.d_max:
            raise InfeasibleError("rate floor above capacity")

    def lb(self, D):
        """Least download either server may receive when the total is ``D``."""
        return max([(c * self.L - D) / w for c, w in self.lines] + [0 * D])

    def breakpoints(self) -> List[Number]:
        pts = {self.d_lo, self.d_max}
        for i, (ci, wi) in enumerate(self.lines):
            pts.add(ci * self.L)
            for cj, wj in self.lines[i + 1:]:
                if wi != wj:
                    # (ci L - D)/wi = (cj L - D)/wj
                    pts.add((ci * wj - cj * wi) * self.L / (wj - wi))
        return sorted(p for p in pts if self.d_lo <= p <= self.d_max)

    def objective(self, d1, d2):
        s = self.mu1 * d1 + self.mu2 * d2
        return Fraction(3, 2) * s + (self.s1 * d1 + self.s2 * d2) / (2 * s)

    def inner(self, D) -> Tuple[Number, Number, Number]:
        """Best ``(objective, d1, d2)`` with total ``D``, PIR constraints enforced."""
        lo = self.lb(D)
        hi = D - lo
        dm = self.mu2 - self.mu1
        cands = [lo, hi]
        K = self.s1 * self.mu2 - self.s2 * self.mu1
        if dm > 0 and K > 0:
            t = _sqrt(3 * dm / (K * D))
            d2 = (1 / t - float(self.mu1) * float(D)) / float(dm)
            if float(lo) < d2 < float(hi):
                cands.append(d2)
        best = None
        for d2 in cands:
            val = self.objective(D - d2, d2)
            if best is None or val < best[0]:
                best = (val, D - d2, d2)
        return best

    def line_stationaries(self) -> List[float]:
        """Totals where the objective is stationary along each constraint line."""
        out = []
        lines = [(c * self.L, w) for c, w in self.lines] + [(Fraction(0), None)]
        for cl, w in lines:
            # small = a + b D; both orientations
            a, b = (cl / w, Fraction(-1) / w) if w is not None else (Fraction(0), Fraction(0))
            for small_is_second in (True, False):
                mu_s, mu_b = (self.mu2, self.mu1) if small_is_second else (self.mu1, self.mu2)
                sg_s, sg_b = (self.s2, self.s1) if small_is_second else (self.s1, self.s2)
                # big = D - small
                s0, s1 = mu_s * a - mu_b * a, mu_b + (mu_s - mu_b) * b
                w0, w1 = sg_s * a - sg_b * a, sg_b + (sg_s - sg_b) * b
                if s1 == 0:
                    continue
                slope = w1 / s1
                icpt = w0 - slope * s0
                if icpt <= 0:
                    continue
                s_star = _sqrt(icpt / 3)
                D = (s_star - float(s0)) / float(s1)
                if float(self.d_lo) < D < float(self.d_max):
                    out.append(D)
        return out

    def search(self) -> Tuple[Number, Number, Number, Number]:
        best = None
        for D in list(self.breakpoints()) + self.line_stationaries():
            val, d1, d2 = self.inner(D)
            key = (val, max(d1, d2))
            if best is None or key < best[0]:
                best = (key, D, d1, d2)
        (val, _), D, d1, d2 = best
        return val, D, d1, d2

    def solution(self, d1, d2, branch: str) -> Solution:
        sorted_alloc = (d1, d2)
        inv = inverse_order(self.order)
        alloc = DownloadAllocation(tuple(sorted_alloc)).permuted(inv)
        return _avg_solution(self.config, alloc, branch)


def all_orientation_corners(config: SystemConfig) -> List[DownloadAllocation]:
    """Corner schemes in every server ordering (distinct allocations only)."""
    L = config.message_size
    L = L if isinstance(L, Fraction) else Fraction(L)
    seen, out = set(), []
    for c in corner_points(config.num_servers, config.num_messages, L):
        for perm in permutations(c.allocation.d):
            if perm not in seen:
                seen.add(perm)
                out.append(DownloadAllocation(perm))
    return out


def _avg_solution(config: SystemConfig, alloc: DownloadAllocation, branch: str) -> Solution:
    corners = all_orientation_corners(config)
    mixture = time_share_policy(alloc, corners, mu=config.mu)
    return Solution(metric="average", allocation=alloc, mixture=mixture,
                    objective=mixture_avg_aoi(mixture, config.servers),
                    ideal_objective=avg_aoi(config.servers, alloc),
                    achieved_rate=config.message_size / mixture.expected_total,
                    branch=branch)


def constrained_inner(D, config: SystemConfig) -> TransformedPoint:
    """Inner optimum for two servers with the PIR constraints enforced (``t`` clipped)."""
    two = _TwoServer(config)
    _, d1, d2 = two.inner(D)
    vec = [0, 0]
    vec[two.order[0]], vec[two.order[1]] = d1, d2
    return TransformedPoint.from_allocation(vec, config.mu)


def least_stationary_total(config: SystemConfig, samples: int = 4097) -> Optional[float]:
    """Smallest ``D`` at which the unconstrained stationary point is feasible.

    This is the outer rule that is optimal when the stationary point is
    feasible at the least admissible total; returns None if it is never feasible.
    """
    two = _TwoServer(config)
    dm = two.mu2 - two.mu1
    K = two.s1 * two.mu2 - two.s2 * two.mu1
    if not dm > 0 or not K > 0:
        raise DegenerateBranchError("stationary point needs mu1 < mu2 and s1*mu2 > s2*mu1")

    lines = [(float(c * two.L), float(w)) for c, w in two.lines]
    dm, K = float(dm), float(K)

    def ok(D):
        t = math.sqrt(3 * dm / (K * D))
        d2 = (1 / t - float(two.mu1) * D) / dm
        lo = max([(cl - D) / w for cl, w in lines] + [0.0])
        return lo - 1e-12 <= d2 <= D - lo + 1e-12

    grid = np.linspace(float(two.d_lo), float(two.d_max), samples)
    prev = None
    for D in grid:
        if ok(D):
            if prev is None:
                return float(D)
            a, b = prev, float(D)
            for _ in range(200):
                m = 0.5 * (a + b)
                a, b = (a, m) if ok(m) else (m, b)
            return b
        prev = float(D)
    return None


def outer_minimize(config: SystemConfig) -> Solution:
    """Two servers with distinct means and ``s1*mu2 > s2*mu1`` (sorted by mean).

    The substituted objective grows like ``sqrt(D)`` while the stationary
    point is feasible, so apart from the least such ``D`` the only other
    candidates are points on the constraint lines: their analytic minima,
    their crossings, and the two ends of the admissible range.
    """
    two = _TwoServer(config)
    if _equal(two.mu1, two.mu2):
        raise DegenerateBranchError("equal means: use equal_mean_solver")
    if not two.s1 * two.mu2 - two.s2 * two.mu1 > 0:
        raise DegenerateBranchError("s1*mu2 <= s2*mu1: t*(D) is not a positive real")
    _, D, d1, d2 = two.search()
    return two.solution(d1, d2, "charnes-cooper")


def boundary_solver(config: SystemConfig) -> Solution:
    """Two servers with ``s1*mu2 <= s2*mu1``: the inner optimum sits on a constraint."""
    two = _TwoServer(config)
    if _equal(two.mu1, two.mu2):
        raise DegenerateBranchError("equal means: use equal_mean_solver")
    _, D, d1, d2 = two.search()
    return two.solution(d1, d2, "boundary")


def equal_mean_solver(config: SystemConfig, max_iter: int = 400) -> Solution:
    """Two servers with a common mean: bisection on the convex objective in ``D``.

    With ``mu_1 = mu_2 = mu`` the epoch mean is ``mu D`` and the
    higher-variance server is held at its PIR lower bound, leaving
    ``(3/2) mu D + s_lo/(2mu) + (s_hi - s_lo)/(2mu) * lb(D)/D``.
    """
    two = _TwoServer(config)
    if not _equal(two.mu1, two.mu2):
        raise DegenerateBranchError("means differ; use outer_minimize")
    mu = two.mu1
    ds = two.s2 - two.s1
    if ds == 0:
        D = two.d_lo
        return two.solution(D / 2, D / 2, "equal-mean")

    def right_slope(D):
        # lb(D)/D is a max of convex pieces; its right derivative is the
        # largest derivative among the active pieces
        pieces = [((c * two.L / D - 1) / w, -c * two.L / (w * D * D)) for c, w in two.lines]
        pieces.append((0, 0))
        top = max(v for v, _ in pieces)
        g = max(dv for v, dv in pieces if v >= top)
        return Fraction(3, 2) * mu + ds / (2 * mu) * g

    lo, hi = two.d_lo, two.d_max
    if right_slope(lo) >= 0:
        D = lo
    else:
        a, b = float(lo), float(hi)
        if right_slope(Fraction(b)) < 0:
            D = hi
        else:
            for _ in range(max_iter):
                m = 0.5 * (a + b)
                if right_slope(Fraction(m)) >= 0:
                    b = m
                else:
                    a = m
                if b - a <= 1e-15 * b:
                    break
            else:
                raise ConvergenceError("equal-mean bisection did not converge")
            D = b
            # snap onto an exact kink if the bisection landed on one
            for k in two.breakpoints():
                if abs(float(k) - D) <= 1e-12 * D:
                    D = k
    d2 = two.lb(D) if isinstance(D, Fraction) else float(two.lb(Fraction(D)))
    return two.solution(D - d2, d2, "equal-mean")


def single_server_fallback(config: SystemConfig) -> Solution:
    """Everything from the single best server, at rate ``1/M``."""
    M = config.num_messages
    if config.r_min != Fraction(1, M):
        raise InfeasibleError(f"single-server retrieval only reaches rate 1/{M}")
    L = config.message_size
    scores = [Fraction(3, 2) * M * s.mu * L + s.sigma2 / (2 * s.mu) for s in config.servers]
    n_star = min(range(len(scores)), key=lambda i: (scores[i], i))
    vec = [Fraction(0)] * config.num_servers
    vec[n_star] = M * L
    return _avg_solution(config, DownloadAllocation(tuple(vec)), "single-server")


def solve_avg_n2(config: SystemConfig) -> Solution:
    two = _TwoServer(config)
    if _equal(two.mu1, two.mu2):
        return equal_mean_solver(config)
    if two.s1 * two.mu2 - two.s2 * two.mu1 > 0:
        return outer_minimize(config)
    sol = boundary_solver(config)
    if config.r_min == Fraction(1, config.num_messages):
        alt = single_server_fallback(config)
        if alt.ideal_objective < sol.ideal_objective:
            return alt
    return sol


# --------------------------------------------------------------------------
# General N
# --------------------------------------------------------------------------

def _sorted_desc(v) -> tuple:
    return tuple(sorted(v, reverse=True))


def solve_avg_hull(config: SystemConfig) -> Solution:
    """Exact optimum for any N at desk scale.

    For a fixed epoch mean ``s = mu.d`` the objective increases with
    ``w = sigma.d``, so the optimum lies on the lower convex hull of the
    polytope's vertices projected to the ``(s, w)`` plane.  On each hull
    edge ``w = a s + b`` and the objective ``(3/2)s + a/2 + b/(2s)`` has a
    closed-form minimiser.
    """
    if config.num_servers < 2:
        raise InvalidConfigError("the solvers need at least two servers")
    mu, sg = config.mu, config.sigma2
    groups = {}
    for v in truncated_vertices(config):
        for perm in set(permutations(v)):
            s = sum((m * x for m, x in zip(mu, perm)), Fraction(0))
            w = sum((g * x for g, x in zip(sg, perm)), Fraction(0))
            groups.setdefault((s, w), []).append(perm)
    rep = {k: min(vs, key=lambda p: (_sorted_desc(p), p)) for k, vs in groups.items()}
    hull = lower_hull(list(groups))

    def f(s, w):
        return Fraction(3, 2) * s + w / (2 * s)

    best = None
    for P in hull:
        key = (f(*P), _sorted_desc(rep[P]))
        if best is None or key < best[0]:
            best = (key, rep[P])
    for Pa, Pb in zip(hull, hull[1:]):
        (sa, wa), (sb, wb) = Pa, Pb
        a = (wb - wa) / (sb - sa)
        b = wa - a * sa
        if b <= 0:
            continue
        s_star = _sqrt(b / 3)
        if not float(sa) < s_star < float(sb):
            continue
        lam = (s_star - float(sa)) / float(sb - sa)
        d = tuple((1 - lam) * float(x) + lam * float(y) for x, y in zip(rep[Pa], rep[Pb]))
        val = 1.5 * s_star + 0.5 * float(a) + 0.5 * float(b) / s_star
        key = (val, _sorted_desc(d))
        if val < best[0][0]:
            best = (key, d)
    return _avg_solution(config, DownloadAllocation(best[1]), "vertex-hull")


def _golden(fn, a, b, tol, max_iter=300):
    """Minimise a unimodal ``fn`` on ``[a, b]``; returns ``(x, fn(x))``."""
    if b - a <= tol:
        x = 0.5 * (a + b)
        return x, fn(x)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    else:
        raise ConvergenceError(f"golden-section search stalled at width {b - a:.3g}")
    cands = [(fc, c), (fd, d), (fn(a), a), (fn(b), b)]
    val, x = min(cands)
    return x, val


class _NestedProblem:
    """Matrices of the Charnes-Cooper inner problem for every ordering."""

    def __init__(self, config: SystemConfig, max_iter: int = 300):
        self.config = config
        self.max_iter = max_iter
        N = config.num_servers
        rows, rhs_c = [], []
        for con in pir_constraints(N, config.num_messages, config.message_size):
            if con.sense != ">=" or con.coefficients[N] == 0:
                continue
            rows.append([float(c) for c in con.coefficients[:N]])
            rhs_c.append(float(con.rhs))
        self.A = np.array(rows)
        self.cL = np.array(rhs_c)
        self.mu = np.array([float(m) for m in config.mu])
        self.sg = np.array([float(s) for s in config.sigma2])
        self.N = N

    def _lp(self, cost, D, t=None):
        """LP over d (``t is None``) or over x = d t (fixed ``t``) with total ``D``."""
        N = self.N
        if t is None:
            A_ub = -self.A
            b_ub = -(self.cL - D)
            A_eq = np.ones((1, N))
            b_eq = np.array([D])
        else:
            A_ub = -self.A
            b_ub = -(self.cL - D) * t
            A_eq = np.vstack([np.ones(N), self.mu])
            b_eq = np.array([D * t, 1.0])
        res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=(0, None), method="highs")
        return res

    def balanced_x(self, D, t, sigma_bound):
        """Among inner optima, the point with the smallest largest coordinate."""
        N = self.N
        cost = np.zeros(N + 1)
        cost[N] = 1.0
        A_ub = np.vstack([
            np.hstack([-self.A, np.zeros((len(self.A), 1))]),
            np.hstack([self.sg, [0.0]]),
            np.hstack([np.eye(N), -np.ones((N, 1))]),
        ])
        b_ub = np.concatenate([-(self.cL - D) * t, [sigma_bound], np.zeros(N)])
        A_eq = np.vstack([np.append(np.ones(N), 0.0), np.append(self.mu, 0.0)])
        b_eq = np.array([D * t, 1.0])
        res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=(0, None), method="highs")
        return res.x[:N] if res.status == 0 else None

    def s_range(self, D):
        lo = self._lp(self.mu, D)
        hi = self._lp(-self.mu, D)
        if lo.status != 0 or hi.status != 0:
            raise InfeasibleError(f"no feasible allocation with total {D}")
        return lo.fun, -hi.fun

    def phi(self, D, t):
        res = self._lp(self.sg, D, t)
        if res.status == 2:
            return math.inf, None
        if res.status != 0:
            raise ConvergenceError(f"inner LP failed at D={D}, t={t}: {res.message}")
        return 1.5 / t + 0.5 * res.fun, res.x

    def inner(self, D):
        s_lo, s_hi = self.s_range(D)
        t_lo, t_hi = 1 / s_hi, 1 / s_lo
        # shrink slightly so the LP stays feasible at the ends
        pad = 1e-13 * t_hi
        a, b = t_lo + pad, max(t_hi - pad, t_lo + pad)
        t, val = _golden(lambda tt: self.phi(D, tt)[0], a, b, INNER_TOL * 1e-2 * t_hi,
                         self.max_iter)
        return val, t


def solve_avg_general(config: SystemConfig, grid: int = 33, max_iter: int = 300) -> Solution:
    """Nested numeric solve: outer search over ``D``, inner convex problem in ``(x, t)``.

    The outer search scans ``grid`` totals between ``L/C_PIR`` and
    ``L/r_min``, then refines the best bracket by golden section.  The inner
    problem is convex in ``t`` (for each ``t`` the best ``x`` is an LP), so it is
    solved by golden section as well.  Declared optimality tolerance: 1e-8
    relative on the objective.  Each golden-section search gets ``max_iter``
    steps; running out raises :class:`ConvergenceError`.
    """
    if config.num_servers < 2:
        raise InvalidConfigError("the solvers need at least two servers")
    prob = _NestedProblem(config, max_iter)
    d_lo = float(config.message_size / config.capacity)
    d_hi = float(config.d_max)
    cache = {}

    def h(D):
        if D not in cache:
            cache[D] = prob.inner(D)
        return cache[D][0]

    if d_hi - d_lo <= 1e-12 * d_hi:
        D_best = d_lo
    else:
        Ds = np.linspace(d_lo, d_hi, grid)
        vals = [h(float(D)) for D in Ds]
        k = int(np.argmin(vals))
        a = float(Ds[max(k - 1, 0)])
        b = float(Ds[min(k + 1, grid - 1)])
        D_best, _ = _golden(h, a, b, INNER_TOL * 1e-2 * d_hi, max_iter)
        if vals[k] < h(D_best):
            D_best = float(Ds[k])
    val, t = prob.inner(D_best)
    _, x = prob.phi(D_best, t)
    if x is None:
        raise ConvergenceError("inner problem infeasible at the reported optimum")
    # break ties towards the most balanced allocation
    bound = float(prob.sg @ x)
    balanced = prob.balanced_x(D_best, t, bound + 1e-12 * max(1.0, abs(bound)))
    if balanced is not None:
        x = balanced
    d = tuple(max(float(v) / t, 0.0) for v in x)
    return _avg_solution(config, DownloadAllocation(d), "nested-numeric")


def solve_avg(config: SystemConfig) -> Solution:
    if config.num_servers == 2:
        return solve_avg_n2(config)
    return solve_avg_hull(config)
