import logging
from dataclasses import replace

import numpy as np
import pytest

from model.errors import ConfigurationError, DegenerateAggregateError, NonConvergenceError
from model.params import Grid, ModelParams, SolverOptions
from services.equilibrium import (
    HjbCache,
    estimate_lipschitz,
    phi,
    solution_residuals,
    solve_mfg,
    solve_sector,
    uniqueness_margin,
    update_price,
)
from services.fp_density import density_from_exponent, mean_productivity
from services.network_service import RANDOM_SIMPLEX, canonical_network, random_network, spillover_matrix


def uniform(grid):
    return density_from_exponent(np.zeros(grid.n_points), grid)


def bisect(f, lo, hi, tol=1e-11):
    f_lo = f(lo)
    assert f_lo * f(hi) <= 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if f_mid * f_lo > 0:
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestPhi:
    def test_isolated_sectors_get_nothing(self, fixed_params, isolated_pair, grid, opts):
        np.testing.assert_array_equal(phi([0.1, 0.0], fixed_params, isolated_pair, grid, opts), 0.0)

    def test_baseline_at_zero(self, fixed_params, baseline, grid, opts):
        _, m = solve_sector(0.0, fixed_params, grid, opts, 1.0)
        out = phi([0.0], fixed_params, baseline, grid, opts)
        assert out[0] == pytest.approx(0.1 * mean_productivity(m), rel=1e-12)

    def test_stays_in_box(self, fixed_params, opts):
        grid = Grid(41, 2.0)
        rng = np.random.default_rng(3)
        for draw in range(1000):
            n = int(rng.integers(1, 5))
            net = random_network(n, rng.uniform(0.2, 1.0), 1.0, RANDOM_SIMPLEX, seed=draw)
            zeta = spillover_matrix(net, 2.0).zeta
            out = phi(rng.uniform(0.0, zeta, n), fixed_params, net, grid, opts)
            assert np.all(out >= 0.0) and np.all(out <= zeta)
            assert out.sum() <= zeta * (1 + 1e-12)

    def test_canonical_network_in_box(self, fixed_params, opts):
        grid = Grid(81, 2.0)
        net = canonical_network(6)
        zeta = spillover_matrix(net, 2.0).zeta
        rng = np.random.default_rng(3)
        cache = HjbCache(fixed_params, grid)
        for _ in range(10):
            out = phi(rng.uniform(0.0, zeta, 4), fixed_params, net, grid, opts, cache=cache)
            assert np.all(out >= 0.0) and out.sum() <= zeta

    def test_rejects_negative_coupling(self, fixed_params, baseline, grid, opts):
        with pytest.raises(ConfigurationError):
            phi([-0.1], fixed_params, baseline, grid, opts)


class TestPriceUpdate:
    def test_uniform_densities(self, params, baseline, grid):
        assert update_price([uniform(grid)], baseline, params) == pytest.approx(1.125, rel=1e-10)

    def test_income_scaling(self, baseline, grid):
        rich = ModelParams(income=4.0)
        assert update_price([uniform(grid)], baseline, rich) == pytest.approx(16 * 1.125, rel=1e-10)

    def test_density_count(self, params, isolated_pair, grid):
        with pytest.raises(ConfigurationError):
            update_price([uniform(grid)], isolated_pair, params)

    def test_degenerate_aggregate(self, params, baseline, grid):
        empty = replace(uniform(grid), values=np.zeros(grid.n_points))
        with pytest.raises(DegenerateAggregateError):
            update_price([empty], baseline, params)


class TestSolveMfg:
    def test_no_coupling_converges_immediately(self, fixed_params, isolated_pair, grid, opts):
        sol = solve_mfg(fixed_params, isolated_pair, grid, opts)
        assert sol.iterations == 1
        np.testing.assert_array_equal(sol.k_star, 0.0)
        np.testing.assert_allclose(sol.densities[0].values, sol.densities[1].values)
        assert sol.uniqueness.contraction_ratio is None

    def test_fixed_price_matches_bisection(self, fixed_params, baseline, opts):
        grid = Grid(101, 2.0)
        sol = solve_mfg(fixed_params, baseline, grid, opts)

        def gap(k):
            _, m = solve_sector(k, fixed_params, grid, opts, 1.0)
            return 0.1 * mean_productivity(m) - k

        assert sol.k_star[0] == pytest.approx(bisect(gap, 0.0, 0.2), abs=1e-6)
        assert sol.price == 1.0

    def test_endogenous_price_matches_bisection(self, params, baseline, opts):
        grid = Grid(101, 2.0)
        sol = solve_mfg(params, baseline, grid, opts)

        def price_at(k):
            b = 1.0
            for _ in range(200):
                _, m = solve_sector(k, params, grid, opts, b)
                b_next = update_price([m], baseline, params)
                if abs(b_next - b) < 1e-12:
                    return b_next, m
                b = b_next
            raise AssertionError("price iteration did not settle")

        def gap(k):
            _, m = price_at(k)
            return 0.1 * mean_productivity(m) - k

        k_star = bisect(gap, 0.0, 0.2)
        assert sol.k_star[0] == pytest.approx(k_star, abs=1e-6)
        assert sol.price == pytest.approx(price_at(k_star)[0], abs=1e-6)

    def test_residuals_are_small(self, fixed_params, baseline, fine_grid, opts):
        sol = solve_mfg(fixed_params, baseline, fine_grid, opts)
        residuals = solution_residuals(sol)
        assert list(residuals.columns) == ["sector", "k", "hjb_residual", "fp_residual"]
        assert residuals["hjb_residual"].max() <= 1e-9
        assert residuals["fp_residual"].max() <= 1e-4

    def test_independent_of_start(self, fixed_params, baseline, grid, opts):
        low = solve_mfg(fixed_params, baseline, grid, opts, k0=[0.0])
        high = solve_mfg(fixed_params, baseline, grid, opts, k0=[0.2])
        assert low.k_star[0] == pytest.approx(high.k_star[0], abs=1e-6)

    def test_start_outside_box(self, fixed_params, baseline, grid, opts):
        with pytest.raises(ConfigurationError):
            solve_mfg(fixed_params, baseline, grid, opts, k0=[0.5])

    def test_k_star_is_fixed_point(self, baseline_solution, fixed_params, baseline, grid, opts):
        out = phi(baseline_solution.k_star, fixed_params, baseline, grid, opts)
        assert out[0] == pytest.approx(baseline_solution.k_star[0], abs=1e-7)

    def test_price_consistency(self, params, baseline, grid, opts):
        sol = solve_mfg(params, baseline, grid, opts)
        assert update_price(sol.densities, baseline, params) == pytest.approx(sol.price, abs=1e-7)
        assert sol.summary()["price_mode"] == "endogenous"

    def test_iteration_cap(self, fixed_params, baseline, grid):
        with pytest.raises(NonConvergenceError) as info:
            solve_mfg(fixed_params, baseline, grid, SolverOptions(max_fixed_point_iters=1))
        assert info.value.residual > 0
        assert len(info.value.trace) == 1

    def test_grid_must_match_support(self, fixed_params, baseline, opts):
        with pytest.raises(ConfigurationError):
            solve_mfg(fixed_params, baseline, Grid(101, 3.0), opts)

    def test_cache_is_reused(self, fixed_params, baseline, grid, opts):
        cache = HjbCache(fixed_params, grid)
        sol = solve_mfg(fixed_params, baseline, grid, opts, cache=cache)
        hits = cache.hits
        phi(sol.k_star, fixed_params, baseline, grid, opts, cache=cache)
        assert cache.hits == hits + 1
        assert len(cache) <= sol.iterations

    def test_threads_do_not_change_result(self, fixed_params, grid):
        net = canonical_network(3)
        serial = solve_mfg(fixed_params, net, grid, SolverOptions(threads=1))
        parallel = solve_mfg(fixed_params, net, grid, SolverOptions(threads=2))
        np.testing.assert_allclose(serial.k_star, parallel.k_star, atol=1e-14)

    def test_sector_frame(self, baseline_solution, grid):
        frame = baseline_solution.sector_frame(0)
        assert list(frame.columns) == ["z", "V", "dV", "m"]
        assert len(frame) == grid.n_points


class TestHjbCache:
    def test_evicts_least_recently_used(self, fixed_params, grid, opts):
        cache = HjbCache(fixed_params, grid, max_entries=2)
        for k in (0.1, 0.2):
            cache.solve(k, opts, 1.0)
        assert cache.get(0.1, 1.0) is not None
        cache.solve(0.3, opts, 1.0)
        assert len(cache) == 2
        assert cache.get(0.2, 1.0) is None
        assert cache.get(0.1, 1.0) is not None
        assert cache.get(0.3, 1.0) is not None

    def test_bounded_over_many_solves(self, fixed_params, grid, opts):
        cache = HjbCache(fixed_params, grid, max_entries=4)
        for k in np.linspace(0.0, 0.5, 12):
            cache.solve(k, opts, 1.0)
            assert len(cache) <= 4
        assert cache.nearest(0.0, 1.0).k == pytest.approx(0.5 * 8 / 11)

    def test_needs_room(self, fixed_params, grid):
        with pytest.raises(ConfigurationError):
            HjbCache(fixed_params, grid, max_entries=0)


class TestUniqueness:
    def test_baseline_contracts(self, baseline_solution):
        report = baseline_solution.uniqueness
        assert report.zeta == pytest.approx(0.2)
        assert report.weighted_column_sums == pytest.approx((0.1,))
        assert report.contracting is True
        assert report.contraction_ratio < 1.0

    def test_warns_when_not_contracting(self, baseline_solution, baseline, caplog):
        forced = replace(
            baseline_solution,
            k_history=(np.array([0.0]), np.array([0.1]), np.array([0.3])),
        )
        with caplog.at_level(logging.WARNING, logger="services.equilibrium"):
            report = uniqueness_margin(baseline, forced)
        assert report.contracting is False
        assert report.contraction_ratio == pytest.approx(2.0)
        assert "not contracting" in caplog.text

    def test_lipschitz_estimate(self, fixed_params, baseline, grid, opts):
        assert 0.0 <= estimate_lipschitz(fixed_params, baseline, grid, opts, n_pairs=5) < 1.0

    def test_lipschitz_without_spillovers(self, fixed_params, isolated_pair, grid, opts):
        assert estimate_lipschitz(fixed_params, isolated_pair, grid, opts) == 0.0
