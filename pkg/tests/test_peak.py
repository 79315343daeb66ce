from fractions import Fraction
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from timely_pir.capacity import corner_points, feasible
from timely_pir.errors import InfeasibleError, InvalidConfigError
from timely_pir.model import DownloadAllocation, pir_capacity
from timely_pir.oracle import grid_search
from timely_pir.peak import (high_rate_boundary_objective, low_rate_boundary_objective,
                             solve_peak, solve_peak_lp, solve_peak_n2m3, time_share_policy)

from conftest import make_config

F = Fraction

rates = st.fractions(F(1, 3), F(4, 7), max_denominator=200)
means = st.fractions(F(1, 10), 10, max_denominator=20)


def mixture_as_dict(sol):
    return {c.d: p for c, p in zip(sol.mixture.components, sol.mixture.probabilities)}


class TestClosedForm:
    @pytest.mark.parametrize("mu, r, d, obj", [
        ([1, 3], F(1, 2), (12, 4), 48),
        ([1, 2], F(4, 7), (8, 6), 40),
        ([1, 1], F(4, 7), (7, 7), 28),
        ([3, 1], F(2, 5), (4, 12), 48),
        ([1, 3], F(1, 3), (12, 4), 48),  # ties with (24, 0); the balanced one wins
        ([1, 4], F(1, 3), (24, 0), 48),
    ])
    def test_worked_examples(self, mu, r, d, obj):
        sol = solve_peak_n2m3(make_config(mu, r_min=r))
        assert sol.allocation.d == d
        assert sol.objective == obj == sol.ideal_objective

    def test_candidates_at_half(self):
        # corners (8,6) and (12,4) give 16+36 = 52 and 24+24 = 48
        assert 2 * (1 * 8 + 3 * 6) == 52 and 2 * (12 + 3 * 4) == 48
        assert solve_peak_n2m3(make_config([1, 3], r_min=F(1, 2))).objective == 48

    def test_high_rate_boundary_is_continuous_with_corner(self):
        mu1, mu2 = F(3, 2), F(5, 2)
        assert high_rate_boundary_objective(mu1, mu2, F(4, 7)) == 16 * mu1 + 12 * mu2
        assert high_rate_boundary_objective(mu1, mu2, F(1, 2)) == 24 * mu1 + 8 * mu2

    def test_low_rate_boundary_end_points(self):
        mu1, mu2 = F(1), F(3)
        assert low_rate_boundary_objective(mu1, mu2, F(1, 2)) == 2 * (12 * mu1 + 4 * mu2)
        assert low_rate_boundary_objective(mu1, mu2, F(1, 3)) == 2 * 24 * mu1

    @pytest.mark.parametrize("r", [F(1, 2), F(13, 25), F(4, 7), F(11, 20)])
    def test_high_rate_mixture_meets_rate_exactly(self, r):
        sol = solve_peak_n2m3(make_config([1, 3], r_min=r))
        assert sol.mixture.expected_total == 8 / r
        assert sol.mixture.expected_allocation == sol.allocation
        if r not in (F(1, 2), F(4, 7)):
            assert mixture_as_dict(sol)[(8, 6)] == 8 - 4 / r

    @pytest.mark.parametrize("r", [F(1, 3), F(2, 5), F(9, 20)])
    def test_low_rate_mixture_meets_rate_exactly(self, r):
        sol = solve_peak_n2m3(make_config([1, 4], r_min=r))
        assert sol.mixture.expected_total == 8 / r
        if r != F(1, 3):
            assert mixture_as_dict(sol).get((24, 0), 0) == 1 / r - 2

    def test_scales_with_message_size(self):
        a = solve_peak_n2m3(make_config([1, 3], r_min=F(13, 25), L=8))
        b = solve_peak_n2m3(make_config([1, 3], r_min=F(13, 25), L=24))
        assert b.objective == 3 * a.objective
        assert b.allocation.d == tuple(3 * x for x in a.allocation.d)

    def test_wrong_shape_rejected(self):
        with pytest.raises(InvalidConfigError):
            solve_peak_n2m3(make_config([1, 2, 3], r_min=F(1, 2)))


class TestLinearProgram:
    @given(st.lists(means, min_size=2, max_size=2), rates)
    def test_closed_form_matches_vertex_lp(self, mu, r):
        cfg = make_config(mu, r_min=r)
        a, b = solve_peak_n2m3(cfg), solve_peak_lp(cfg)
        assert a.objective == b.objective
        assert a.allocation == b.allocation
        assert a.mixture.expected_allocation == b.mixture.expected_allocation

    @given(st.lists(means, min_size=3, max_size=3),
           st.fractions(F(1, 3), F(9, 13), max_denominator=50))
    def test_three_servers_feasible_and_ordered(self, mu, r):
        cfg = make_config(mu, r_min=r)
        sol = solve_peak_lp(cfg)
        assert feasible(sol.allocation, cfg)
        assert sol.achieved_rate >= r
        order = sorted(range(3), key=lambda i: mu[i])
        d_sorted = [sol.allocation.d[i] for i in order]
        assert d_sorted == sorted(d_sorted, reverse=True)

    def test_lp_matches_oracle_three_servers(self):
        rng = random.Random(11)
        for _ in range(6):
            mu = [F(rng.randint(1, 30), 10) for _ in range(3)]
            r = F(1, 3) + (F(9, 13) - F(1, 3)) * F(rng.randint(0, 8), 8)
            cfg = make_config(mu, r_min=r)
            sol = solve_peak_lp(cfg)
            grid = grid_search(cfg, "peak", F(1, 4))
            assert sol.objective <= grid.objective
            if all((x * 4).denominator == 1 for x in sol.allocation.d):
                assert sol.objective == grid.objective

    @pytest.mark.parametrize("N, M, L", [(2, 3, 8), (3, 3, 27), (4, 2, 8), (3, 2, 9)])
    def test_symmetric_servers_get_uniform_downloads(self, N, M, L):
        cfg = make_config([2] * N, r_min=pir_capacity(N, M), L=L, M=M)
        sol = solve_peak(cfg)
        share = F(L) / (N * pir_capacity(N, M))
        assert sol.allocation.d == tuple([share] * N)

    def test_permuting_servers_permutes_answer(self):
        cfg = make_config([F(1), F(5), F(10)], r_min=F(1, 2))
        base = solve_peak_lp(cfg)
        for order in ([2, 0, 1], [1, 2, 0]):
            perm = solve_peak_lp(cfg.permuted(order))
            assert perm.objective == base.objective
            assert perm.allocation.d == tuple(base.allocation.d[i] for i in order)

    def test_objective_non_decreasing_in_rate(self):
        cfg = make_config([1, F(7, 3), 4], r_min=F(1, 3))
        grid = [F(1, 3) + (F(9, 13) - F(1, 3)) * k / 15 for k in range(16)]
        vals = [solve_peak(cfg.with_r_min(r)).objective for r in grid]
        assert all(a <= b for a, b in zip(vals, vals[1:]))


class TestTimeSharing:
    def test_exact_decomposition(self):
        corners = corner_points(2, 3, 8)
        target = DownloadAllocation((F(140, 13), F(60, 13)))
        pol = time_share_policy(target, corners)
        assert pol.expected_allocation == target
        assert all(isinstance(p, Fraction) for p in pol.probabilities)

    def test_corner_target_is_deterministic(self):
        pol = time_share_policy((8, 6), corner_points(2, 3, 8))
        assert pol.components == (DownloadAllocation((8, 6)),) and pol.probabilities == (1,)

    def test_float_target(self):
        pol = time_share_policy((10.5, 4.9), [(24, 0), (12, 4), (8, 6), (7, 7), (4, 12)],
                                mu=[1, 2])
        d = pol.expected_allocation.d
        assert abs(d[0] - 10.5) < 1e-9 and abs(d[1] - 4.9) < 1e-9

    def test_outside_hull(self):
        with pytest.raises(InfeasibleError):
            time_share_policy((1, 1), corner_points(2, 3, 8))
