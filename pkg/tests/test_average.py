import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from timely_pir.average import (TransformedPoint, _golden, boundary_solver, constrained_inner,
                                equal_mean_solver, inner_solution, least_stationary_total,
                                outer_minimize, single_server_fallback, solve_avg,
                                solve_avg_general, solve_avg_hull, stationary_t)
from timely_pir.capacity import feasible, pir_constraints
from timely_pir.errors import ConvergenceError, DegenerateBranchError, InfeasibleError
from timely_pir.model import avg_aoi, pir_capacity
from timely_pir.oracle import grid_search, lipschitz_slack

from conftest import make_config

F = Fraction


def substituted_inner(t, D, mu, s2):
    """(3/2)/t + (1/2) sigma.x with x pinned by mu.x = 1 and 1.x = D t."""
    (m1, m2), (v1, v2) = mu, s2
    x1 = (m2 * D * t - 1) / (m2 - m1)
    x2 = (1 - m1 * D * t) / (m2 - m1)
    return 1.5 / t + 0.5 * (v1 * x1 + v2 * x2)


def check_against_grid(cfg, sol, h):
    grid = grid_search(cfg, "avg", h)
    slack = lipschitz_slack(cfg, "avg", h)
    val = float(sol.ideal_objective)
    assert val <= float(grid.objective) + 1e-9
    assert val >= float(grid.objective) - slack - 1e-9


class TestTransformedPoint:
    @given(st.lists(st.fractions(0, 50, max_denominator=16), min_size=2, max_size=4)
           .filter(lambda d: sum(d) > 0),
           st.lists(st.fractions(F(1, 10), 10, max_denominator=16), min_size=4, max_size=4))
    def test_round_trip_exact(self, d, mu):
        mu = mu[:len(d)]
        p = TransformedPoint.from_allocation(d, mu)
        assert p.residuals(mu) == (0, 0)
        assert p.to_allocation().d == tuple(d)

    @given(st.lists(st.floats(0, 50), min_size=3, max_size=3).filter(lambda d: sum(d) > 1e-3),
           st.lists(st.floats(0.1, 10), min_size=3, max_size=3))
    def test_round_trip_float(self, d, mu):
        p = TransformedPoint.from_allocation(d, mu)
        back = p.to_allocation().d
        scale = max(d)
        assert all(abs(a - b) <= 1e-12 * scale for a, b in zip(back, d))

    def test_inner_objective_is_jointly_convex(self):
        rng = np.random.default_rng(5)
        sigma = rng.uniform(0, 10, 3)
        f = lambda x, t: 1.5 / t + 0.5 * sigma @ x
        for _ in range(2000):
            x0, x1 = rng.uniform(0, 5, (2, 3))
            t0, t1 = rng.uniform(0.01, 3, 2)
            lam = rng.uniform()
            mid = f(lam * x0 + (1 - lam) * x1, lam * t0 + (1 - lam) * t1)
            assert mid <= lam * f(x0, t0) + (1 - lam) * f(x1, t1) + 1e-12


class TestInnerSolution:
    def test_worked_example(self):
        cfg = make_config([1, 2], [4, 1])
        p = inner_solution(16, cfg)
        assert p.t == pytest.approx(math.sqrt(3 / 112), rel=1e-15)
        r_mu, r_tot = p.residuals(cfg.mu)
        assert abs(r_mu) < 1e-14 and abs(r_tot) < 1e-14
        # the stationary mean 1/t lies below mu_1 D, so x_2 < 0 here
        assert not p.nonnegative

    def test_matches_numeric_minimisation(self):
        mu, s2, D = (1.0, 2.0), (4.0, 1.0), 16.0
        res = minimize_scalar(lambda t: substituted_inner(t, D, mu, s2), bounds=(1e-3, 1),
                              method="bounded", options={"xatol": 1e-12})
        assert res.x == pytest.approx(math.sqrt(3 / 112), rel=1e-6)

    def test_non_real_root_rejected(self):
        with pytest.raises(DegenerateBranchError):
            inner_solution(16, make_config([1, 2], [1, 4]))

    def test_equal_means_rejected(self):
        with pytest.raises(DegenerateBranchError):
            inner_solution(16, make_config([1, 1], [4, 1]))

    def test_derivative_vanishes_at_root(self):
        rng = random.Random(3)
        for _ in range(200):
            m1 = rng.uniform(0.1, 5)
            m2 = m1 + rng.uniform(0.05, 5)
            v2 = rng.uniform(0, 10)
            v1 = v2 * m1 / m2 + rng.uniform(0.01, 10)
            D = rng.uniform(14, 24)
            t = stationary_t(D, m1, m2, v1, v2)
            h = 1e-6 * t
            g = lambda tt: substituted_inner(tt, D, (m1, m2), (v1, v2))
            deriv = (g(t + h) - g(t - h)) / (2 * h)
            assert abs(deriv) * t / g(t) < 1e-6

    def test_reduced_outer_objective_increases_with_total(self):
        mu, s2 = (1.0, 2.0), (4.0, 1.0)
        K = s2[0] * mu[1] - s2[1] * mu[0]
        Ds = np.linspace(14, 24, 41)
        vals = []
        for D in Ds:
            t = stationary_t(D, *mu, *s2)
            val = substituted_inner(t, D, mu, s2)
            closed = math.sqrt(3 * D * K / (mu[1] - mu[0])) + (s2[1] - s2[0]) / (2 * (mu[1] - mu[0]))
            assert val == pytest.approx(closed, rel=1e-12)
            vals.append(val)
        assert np.all(np.diff(vals) > 0)

    def test_constrained_inner_is_feasible(self):
        cfg = make_config([1, 2], [4, 1])
        p = constrained_inner(F(16), cfg)
        assert p.nonnegative
        assert feasible(p.to_allocation(), cfg) or \
            feasible(tuple(round(v, 9) for v in p.to_allocation().d), cfg)


class TestConstraintRedundancy:
    def test_pairwise_row_implies_nonnegativity(self):
        # d_n >= (3L - D)/2 is generated for every server; with D <= 3L it forces d_n >= 0
        L = 8
        cons = pir_constraints(2, 3, L)
        for n in range(2):
            rows = [c for c in cons if c.coefficients[n] == 2 and c.coefficients[1 - n] == 0
                    and c.coefficients[2] == 1 and c.rhs == 3 * L]
            assert rows, f"no pairwise row isolating d{n + 1}"
        for D in range(14, 25):
            assert F(3 * L - D, 2) >= 0


class TestOuterMinimize:
    def test_matches_grid_oracle(self):
        cfg = make_config([1, 2], [4, 1], r_min=F(1, 3))
        sol = outer_minimize(cfg)
        assert sol.branch == "charnes-cooper"
        check_against_grid(cfg, sol, F(1, 8))

    def test_routing_guards(self):
        with pytest.raises(DegenerateBranchError):
            outer_minimize(make_config([1, 2], [1, 4]))
        with pytest.raises(DegenerateBranchError):
            outer_minimize(make_config([1, 1], [1, 4]))
        with pytest.raises(DegenerateBranchError):
            # sigma2 proportional to mu: s1*mu2 - s2*mu1 = 0
            outer_minimize(make_config([1, 2], [3, 6]))

    def test_non_decreasing_in_rate(self):
        cfg = make_config([1, 2], [4, 1])
        grid = [F(1, 3) + (F(4, 7) - F(1, 3)) * k / 20 for k in range(21)]
        vals = [solve_avg(cfg.with_r_min(r)).ideal_objective for r in grid]
        assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_least_feasible_total_rule_is_an_upper_bound(self):
        cfg = make_config([1, 2], [100, 1], r_min=F(1, 3))
        D = least_stationary_total(cfg)
        assert D is not None and D > 14
        t = stationary_t(D, 1, 2, 100, 1)
        rule = substituted_inner(t, D, (1.0, 2.0), (100.0, 1.0))
        sol = outer_minimize(cfg)
        assert float(sol.ideal_objective) <= rule + 1e-9
        check_against_grid(cfg, sol, F(1, 8))

    def test_stationary_point_may_never_be_feasible(self):
        assert least_stationary_total(make_config([1, 2], [4, 1], r_min=F(1, 3))) is None

    def test_least_feasible_total_rule_can_miss_the_optimum(self):
        cfg = make_config([F(1, 5), F(7, 5)], [F(26, 5), F(18, 5)], r_min=F(5, 14))
        D = least_stationary_total(cfg)
        t = stationary_t(D, 0.2, 1.4, 5.2, 3.6)
        rule = substituted_inner(t, D, (0.2, 1.4), (5.2, 3.6))
        sol = outer_minimize(cfg)
        assert sol.allocation.d == (12, 4)
        assert sol.ideal_objective == F(84, 5)
        assert rule > float(sol.ideal_objective) + 0.9
        check_against_grid(cfg, sol, F(1, 8))


class TestEqualMean:
    @pytest.mark.parametrize("mu, s2", [(1, 0), (2, 3), (F(1, 2), 5)])
    def test_equal_variances_give_symmetric_corner(self, mu, s2):
        cfg = make_config([mu, mu], [s2, s2])
        sol = equal_mean_solver(cfg)
        assert sol.allocation.d == (7, 7)
        assert sol.ideal_objective == 21 * mu + F(s2) / (2 * mu)

    def test_bisection_matches_dense_total_grid(self):
        cfg = make_config([1, 1], [1, 9], r_min=F(1, 3))
        sol = equal_mean_solver(cfg)
        Ds = np.linspace(14, 24, 200_001)
        lb = np.maximum.reduce([(24 - Ds) / 2, 20 - Ds, np.zeros_like(Ds)])
        vals = 1.5 * Ds + 0.5 + 8 * lb / (2 * Ds)
        assert float(sol.ideal_objective) <= vals.min() + 1e-9 * vals.min()
        assert float(sol.ideal_objective) >= vals.min() - 1e-6

    def test_matches_grid_oracle(self):
        cfg = make_config([1, 1], [1, 9], r_min=F(1, 3))
        sol = equal_mean_solver(cfg)
        assert sol.branch == "equal-mean"
        check_against_grid(cfg, sol, F(1, 8))
        # the higher-variance server gets the smaller share
        assert sol.allocation.d[1] <= sol.allocation.d[0]

    def test_requires_equal_means(self):
        with pytest.raises(DegenerateBranchError):
            equal_mean_solver(make_config([1, 2], [1, 1]))


class TestSingleServerFallback:
    def test_worked_example(self):
        sol = single_server_fallback(make_config([1, 2], [1, 1], r_min=F(1, 3)))
        assert sol.allocation.d == (24, 0)
        # 9/2 * 8 + 1/2 = 36.5 against 72 + 1/4 = 72.25 for the slower server
        assert sol.ideal_objective == F(73, 2)
        assert sol.ideal_objective == avg_aoi(make_config([1, 2], [1, 1]).servers, (24, 0))

    def test_tie_goes_to_lowest_index(self):
        sol = single_server_fallback(make_config([2, 2], [3, 3], r_min=F(1, 3)))
        assert sol.allocation.d == (24, 0)

    def test_higher_rate_rejected(self):
        with pytest.raises(InfeasibleError):
            single_server_fallback(make_config([1, 2], [1, 1], r_min=F(1, 2)))

    def test_not_optimal_when_variance_favours_the_slow_server(self):
        cfg = make_config([1, 2], [1, 4], r_min=F(1, 3))
        fallback = single_server_fallback(cfg).ideal_objective
        sol = solve_avg(cfg)
        assert sol.ideal_objective < fallback
        check_against_grid(cfg, sol, F(1, 8))


class TestBoundaryBranch:
    @pytest.mark.parametrize("r", [F(1, 3), F(2, 5), F(1, 2), F(4, 7)])
    def test_matches_grid(self, r):
        cfg = make_config([1, 2], [1, 4], r_min=r)
        sol = boundary_solver(cfg)
        assert feasible(sol.allocation, cfg)
        check_against_grid(cfg, sol, F(1, 8))


class TestDispatcher:
    @given(st.lists(st.fractions(F(1, 10), 4, max_denominator=10), min_size=2, max_size=2),
           st.lists(st.fractions(0, 6, max_denominator=10), min_size=2, max_size=2),
           st.fractions(F(1, 3), F(4, 7), max_denominator=60))
    def test_feasible_and_meets_rate(self, mu, s2, r):
        cfg = make_config(mu, s2, r_min=r)
        sol = solve_avg(cfg)
        alloc = sol.allocation
        tol_ok = feasible(alloc, cfg) or feasible(
            tuple(F(v).limit_denominator(10 ** 9) for v in alloc.d), cfg)
        assert tol_ok
        assert float(sol.achieved_rate) >= float(r) * (1 - 1e-9)
        assert float(sol.objective) >= float(sol.ideal_objective) - 1e-9

    def test_hull_agrees_with_two_server_solver(self):
        rng = random.Random(2)
        for _ in range(40):
            mu = [F(rng.randint(1, 30), 10) for _ in range(2)]
            s2 = [F(rng.randint(0, 50), 10) for _ in range(2)]
            M = rng.choice([2, 3])
            r = F(1, M) + (pir_capacity(2, M) - F(1, M)) * F(rng.randint(0, 10), 10)
            cfg = make_config(mu, s2, r_min=r, M=M)
            a, b = solve_avg(cfg), solve_avg_hull(cfg)
            assert float(a.ideal_objective) == pytest.approx(float(b.ideal_objective), rel=1e-12)

    def test_symmetric_three_servers_uniform(self):
        cfg = make_config([2, 2, 2], [3, 3, 3], L=27, r_min=F(1, 2))
        sol = solve_avg(cfg)
        assert sol.allocation.d == (13, 13, 13)

    def test_time_sharing_gap_small_on_wide_sweep(self):
        cfg = make_config([1, 5, 10], [10, 5, 1], L=72)
        for k in range(8):
            r = F(1, 3) + (F(9, 13) - F(1, 3)) * F(k, 7)
            sol = solve_avg(cfg.with_r_min(r))
            gap = float((sol.objective - sol.ideal_objective) / sol.ideal_objective)
            assert 0 <= gap < 0.1


@pytest.mark.slow
class TestNestedNumeric:
    @pytest.mark.parametrize("mu, s2, r", [
        ([1, 2], [4, 1], F(1, 3)),      # stationary branch
        ([1, 1], [1, 9], F(1, 3)),      # equal means
        ([1, 2], [1, 4], F(1, 2)),      # boundary branch
    ])
    def test_agrees_with_two_server_branches(self, mu, s2, r):
        cfg = make_config(mu, s2, r_min=r)
        exact = float(solve_avg(cfg).ideal_objective)
        nested = solve_avg_general(cfg)
        assert nested.branch == "nested-numeric"
        assert float(nested.ideal_objective) == pytest.approx(exact, rel=1e-6)

    def test_agrees_with_hull_three_servers(self):
        cfg = make_config([1, 5, 10], [10, 5, 1], L=72, r_min=F(3, 5))
        a = float(solve_avg_hull(cfg).ideal_objective)
        b = float(solve_avg_general(cfg).ideal_objective)
        assert b == pytest.approx(a, rel=1e-6)

    def test_symmetric_stats_uniform(self):
        cfg = make_config([2, 2, 2], [3, 3, 3], L=27, r_min=F(1, 2))
        sol = solve_avg_general(cfg)
        assert all(v == pytest.approx(13, rel=1e-6) for v in sol.allocation.d)

    def test_budget_exhaustion_is_reported(self):
        with pytest.raises(ConvergenceError):
            _golden(lambda x: (x - 0.3) ** 2, 0.0, 1.0, 1e-12, max_iter=5)
        with pytest.raises(ConvergenceError):
            solve_avg_general(make_config([1, 2], [4, 1], r_min=F(1, 3)), max_iter=5)
