"""Brute-force verifier: exhaustive grid search over download allocations.

The oracle shares nothing with the solvers beyond the age formulas in
:mod:`timely_pir.model`.  It rebuilds the rate constraints from the capacity
formula, checks them for every ordering of the servers, and works on an
integer grid so that feasibility (and the peak objective, for rational
means) is decided exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import permutations
from math import lcm
from typing import List, Optional

import numpy as np

from .errors import InfeasibleError, SizeLimitError
from .model import (DownloadAllocation, MixturePolicy, Solution, SystemConfig, avg_aoi,
                    is_exact, normalize_metric, peak_aoi, to_number)

__all__ = ["GridConstraint", "VerificationReport", "oracle_constraints", "oracle_violations",
           "default_resolution", "grid_search", "lipschitz_slack", "verify", "MAX_GRID_POINTS"]

MAX_GRID_POINTS = 4_000_000
_CHUNK_ROWS = 200_000


@dataclass(frozen=True)
class GridConstraint:
    """``weights . d + D >= rhs`` for one index pair and one server ordering."""

    name: str
    weights: tuple  # per server, Fractions
    rhs: Fraction


def _exact(x) -> Fraction:
    x = to_number(x)
    return x if isinstance(x, Fraction) else Fraction(x)


def oracle_constraints(config: SystemConfig) -> List[GridConstraint]:
    """Rate constraints for every ordering, written out from the capacity formula."""
    N, M = config.num_servers, config.num_messages
    L = _exact(config.message_size)
    if M == 2:
        pairs = [(n0, None) for n0 in range(1, N + 1)]
    else:
        pairs = [(n0, n1) for n0 in range(1, N + 1) for n1 in range(n0, N + 1)]
    out = []
    for n0, n1 in pairs:
        rhs = L * (1 + Fraction(1, n0) + (Fraction(1, n0 * n1) if n1 else 0))
        for order in permutations(range(N)):
            # order[k] is the server at position k (position 0 = largest share)
            w = [Fraction(0)] * N
            for pos, server in enumerate(order):
                if pos + 1 > n0:
                    w[server] += Fraction(1, n0)
                if n1 is not None and pos + 1 > n1:
                    w[server] += Fraction(1, n0 * n1)
            tag = f"n0={n0}" + (f",n1={n1}" if n1 else "")
            out.append(GridConstraint(f"rate[{tag};order={tuple(o + 1 for o in order)}]",
                                      tuple(w), rhs))
    return out


def oracle_violations(d, config: SystemConfig, tol: float = 0.0) -> List[str]:
    """Names of the constraints ``d`` breaks, checked independently of the solvers."""
    vec = list(d.d if isinstance(d, DownloadAllocation) else d)
    if len(vec) != config.num_servers:
        return [f"dimension[{len(vec)} != {config.num_servers}]"]
    exact = is_exact(vec)
    vals = [_exact(v) for v in vec] if exact else [float(v) for v in vec]
    if exact and tol == 0:
        tol = Fraction(0)
    bad = [f"nonneg[d{n + 1}]" for n, v in enumerate(vals) if v < -tol]
    D = sum(vals, Fraction(0)) if exact else sum(vals)
    for con in oracle_constraints(config):
        lhs = D + sum((w * v for w, v in zip(con.weights, vals)), Fraction(0) if exact else 0.0)
        if lhs < con.rhs - tol:
            bad.append(con.name)
    if D > _exact(config.d_max) + tol:
        bad.append(f"rate_floor[D<={config.d_max}]")
    return bad


def default_resolution(config: SystemConfig) -> Fraction:
    return _exact(config.message_size) / 32


class _Grid:
    """Integer grid ``d = k h`` with exact feasibility tests."""

    def __init__(self, config: SystemConfig, resolution):
        self.config = config
        h = _exact(resolution)
        if not h > 0:
            raise ValueError("resolution must be positive")
        self.h = h
        self.N = config.num_servers
        self.k_max = math.floor(_exact(config.d_max) / h)
        size = math.comb(self.k_max + self.N, self.N)  # points with sum(k) <= k_max
        if size > MAX_GRID_POINTS:
            raise SizeLimitError(
                f"grid has {size} points at resolution {h} (limit {MAX_GRID_POINTS}); "
                "use a coarser resolution or fewer servers")
        self.rows = []
        for con in oracle_constraints(config):
            # (w.k + sum k) h >= rhs, scaled to integers
            coeff = [w + 1 for w in con.weights]
            scale = lcm(*(c.denominator for c in coeff))
            ints = np.array([int(c * scale) for c in coeff], dtype=np.int64)
            bound = math.ceil(con.rhs * scale / h)
            self.rows.append((ints, bound))
        self.A = np.array([r[0] for r in self.rows], dtype=np.int64)
        self.b = np.array([r[1] for r in self.rows], dtype=np.int64)

    def chunks(self):
        """Feasible integer points in lexicographic order, in blocks."""
        N, K = self.N, self.k_max
        if N == 1:
            pts = np.arange(K + 1, dtype=np.int64)[:, None]
            yield pts[self._feasible(pts)]
            return
        for k1 in range(K + 1):
            rest_max = K - k1
            tail = np.indices((rest_max + 1,) * (N - 1), dtype=np.int64).reshape(N - 1, -1).T
            tail = tail[tail.sum(axis=1) <= rest_max]
            for start in range(0, len(tail), _CHUNK_ROWS):
                block = tail[start:start + _CHUNK_ROWS]
                pts = np.column_stack([np.full(len(block), k1, dtype=np.int64), block])
                ok = self._feasible(pts)
                if ok.any():
                    yield pts[ok]

    def _feasible(self, pts):
        return np.all(pts @ self.A.T >= self.b, axis=1)


def _peak_weights(mu):
    if is_exact(mu):
        fr = [_exact(m) for m in mu]
        scale = lcm(*(m.denominator for m in fr))
        return np.array([int(m * scale) for m in fr], dtype=np.int64), True
    return np.array([float(m) for m in mu]), False


def _tie_key(pt):
    return tuple(sorted(pt.tolist(), reverse=True)), tuple(pt.tolist())


def grid_search(config: SystemConfig, metric: str = "peak", resolution=None) -> Solution:
    """Best feasible grid point for ``metric``.

    Ties go to the lexicographically smallest allocation once sorted in
    decreasing order (the most balanced one), then to the first in grid order.
    """
    metric = normalize_metric(metric)
    h = default_resolution(config) if resolution is None else _exact(resolution)
    grid = _Grid(config, h)
    mu = np.array([float(m) for m in config.mu])
    sg = np.array([float(s) for s in config.sigma2])
    pw, exact_peak = _peak_weights(config.mu)
    best_val, best_pt = None, None
    for pts in grid.chunks():
        if metric == "peak":
            vals = pts @ pw
        else:
            s = pts @ mu
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = 1.5 * s + 0.5 * (pts @ sg) / s
            vals = np.where(s > 0, vals, np.inf)
        v = vals.min()
        tied = pts[vals == v]
        pt = min(tied, key=_tie_key)
        if best_val is None or v < best_val or (v == best_val and _tie_key(pt) < _tie_key(best_pt)):
            best_val, best_pt = v, pt
    if best_pt is None:
        raise InfeasibleError(f"no feasible grid point at resolution {h}")
    alloc = DownloadAllocation(tuple(int(k) * h for k in best_pt))
    stats = config.servers
    if metric == "peak":
        obj = peak_aoi(stats, alloc) if exact_peak else 2 * float(best_pt @ mu) * float(h)
    else:
        obj = avg_aoi(stats, alloc)
    return Solution(metric=metric, allocation=alloc, mixture=MixturePolicy.single(alloc),
                    objective=obj, ideal_objective=obj,
                    achieved_rate=config.message_size / alloc.total,
                    branch=f"grid(h={h})")


def lipschitz_slack(config: SystemConfig, metric: str, resolution) -> float:
    """Bound on how much the objective can change over two grid steps per coordinate.

    For the average metric the partial derivatives are
    ``(3/2) mu_n + sigma_n/(2s) - w mu_n/(2 s^2)`` with ``s = mu.d`` and
    ``w = sigma.d``; with ``w/s <= max sigma/mu`` and ``s`` at least
    ``min(mu) * L / C_PIR`` each is bounded below.
    """
    metric = normalize_metric(metric)
    h = float(_exact(resolution))
    mu = [float(m) for m in config.mu]
    sg = [float(s) for s in config.sigma2]
    if metric == "peak":
        grads = [2 * m for m in mu]
    else:
        s_min = min(mu) * float(config.message_size / config.capacity)
        ratio = max(s / m for s, m in zip(sg, mu))
        grads = [1.5 * m + 0.5 * (s + m * ratio) / s_min for m, s in zip(mu, sg)]
    return 2 * h * sum(grads)


@dataclass
class VerificationReport:
    passed: bool
    metric: str
    solver_objective: float
    oracle_objective: float
    gap: float
    slack: float
    resolution: Fraction
    violations: List[str] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)
    oracle_allocation: Optional[tuple] = None

    @property
    def above_lower_bound(self) -> bool:
        """Solver value is not below ``oracle - slack`` (up to 1e-9)."""
        return self.gap >= -self.slack - 1e-9

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = (f"{status} metric={self.metric} solver={self.solver_objective:.12g} "
                f"oracle={self.oracle_objective:.12g} gap={self.gap:.3g} "
                f"slack={self.slack:.3g} resolution={self.resolution}")
        if self.failures:
            text += " failures=" + "; ".join(self.failures)
        return text


def verify(solution: Solution, config: SystemConfig, resolution=None) -> VerificationReport:
    """Re-check a solver answer against the grid oracle; never raises on a bad answer."""
    metric = normalize_metric(solution.metric)
    h = default_resolution(config) if resolution is None else _exact(resolution)
    alloc = solution.allocation
    tol = 0.0 if is_exact(alloc.d) else 1e-9 * float(config.message_size) * config.num_messages
    violations = oracle_violations(alloc, config, tol)
    failures = list(violations)
    stats = config.servers
    recomputed = peak_aoi(stats, alloc) if metric == "peak" else avg_aoi(stats, alloc)
    claimed = solution.ideal_objective
    if abs(float(recomputed) - float(claimed)) > 1e-9 * max(1.0, abs(float(recomputed))):
        failures.append(f"objective mismatch: claimed {float(claimed):.12g}, "
                        f"recomputed {float(recomputed):.12g}")
    oracle = grid_search(config, metric, h)
    slack = lipschitz_slack(config, metric, h)
    if is_exact([recomputed, oracle.objective]):
        gap = float(recomputed - oracle.objective)
    else:
        gap = float(recomputed) - float(oracle.objective)
    if gap > slack + 1e-9 * max(1.0, abs(float(oracle.objective))):
        failures.append(f"worse than oracle by {gap:.6g} (slack {slack:.6g})")
    return VerificationReport(passed=not failures, metric=metric,
                              solver_objective=float(recomputed),
                              oracle_objective=float(oracle.objective), gap=gap, slack=slack,
                              resolution=h, violations=violations, failures=failures,
                              oracle_allocation=oracle.allocation.d)
