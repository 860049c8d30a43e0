"""Primal solver: prox cells, space-time solves, projection, full solves."""

import numpy as np
import pytest

from otgeo.grid import build_grid, integrate
from otgeo.transport import DensityPath, MomentumField, ReferenceMeasure
from otgeo.prox import (
    ProxConfig,
    _apply_operator,
    _prox_root,
    _residual,
    _spacetime_norm,
    align_null_moments,
    pointwise_prox,
    project_continuity,
    solve_prox,
    spacetime_poisson,
)

CONFORMAL = lambda x: 1.0 + 0.4 * np.cos(2.0 * np.pi * x)


def smooth_pair(grid, width=0.08):
    x = grid.axis_coords()
    kappa = 1.0 / (2.0 * np.pi * width) ** 2
    q = np.exp(kappa * (np.cos(2 * np.pi * x) - 1.0))
    q /= integrate(q, grid)
    return align_null_moments(q, np.roll(q, grid.n_space // 2), grid)


class TestPointwiseProx:
    def test_identity_when_kernel_inactive(self):
        m, w = pointwise_prox(0.5, np.zeros(1), 1.0, 0.0, 0.0)
        assert m == pytest.approx(0.5, abs=1e-11)
        assert np.all(w == 0.0)

    def test_cubic_root_case(self):
        m, w = pointwise_prox(0.0, np.array([np.sqrt(2.0)]), 1.0, 0.0, 0.0)
        assert m == pytest.approx(0.465571, abs=1e-5)
        assert w[0] / np.sqrt(2.0) == pytest.approx(0.317672, abs=1e-5)
        # first-order condition: (m - a)(m + sigma)^2 = sigma |b|^2 / 2
        assert m * (m + 1.0) ** 2 == pytest.approx(1.0, abs=1e-10)

    def test_vacuum_branch(self):
        m, w = pointwise_prox(-1.0, np.zeros(1), 1.0, 0.0, 0.0)
        assert m == 0.0 and np.all(w == 0.0)

    def test_entropy_cells_strictly_positive(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal(500) * 3.0
        m = _prox_root(a, 0.0, 1.0, 0.1, 0.0)
        assert np.all(m > 0)
        f = (m - a) / 1.0 + 0.1 * (np.log(m) + 1.0)
        assert np.max(np.abs(f)) < 1e-12

    def test_root_residuals_below_tolerance(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal(5000) * 2
        bsq = rng.random(5000) * 5
        V = rng.standard_normal(5000) * 0.5
        for eps in (0.0, 0.05, 0.3):
            m = _prox_root(a, bsq, 0.8, eps, V)
            f = (m - a) / 0.8 - bsq / (2.0 * (m + 0.8) ** 2)
            if eps > 0:
                f = f + eps * (np.log(m) + V + 1.0)
            else:
                f = np.where(m == 0.0, 0.0, f)
            assert np.max(np.abs(f)) <= 1e-12

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            pointwise_prox(0.1, np.zeros(1), -1.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            pointwise_prox(0.1, np.zeros(1), 1.0, -0.1, 0.0)


class TestSpacetimePoisson:
    def test_zero_rhs(self):
        g = build_grid(1, 16, 8, 1.0)
        assert np.all(spacetime_poisson(np.zeros((8, 16)), g) == 0.0)

    def test_eigenfunction(self):
        g = build_grid(1, 64, 32, 1.0)
        t = g.time_midpoints()
        x = g.axis_coords()
        rhs = np.cos(np.pi * t / g.horizon)[:, None] * np.sin(2 * np.pi * x)[None, :]
        phi = spacetime_poisson(rhs, g)
        lam_t = (2 - 2 * np.cos(np.pi / g.n_time)) / g.tau ** 2
        lam_x = (np.sin(2 * np.pi / g.n_space) / g.h) ** 2
        # exact eigenvector of the discrete operator ...
        assert np.max(np.abs(phi * (lam_t + lam_x) - rhs)) < 1e-12
        # ... whose eigenvalue matches the continuum one to O(h^2 + tau^2)
        cont = (np.pi / g.horizon) ** 2 + 4 * np.pi ** 2
        assert lam_t + lam_x == pytest.approx(cont, rel=5e-3)

    @pytest.mark.parametrize("dim,metric", [(1, None), (1, CONFORMAL), (2, None)])
    def test_forward_apply_recovers_rhs(self, dim, metric):
        rng = np.random.default_rng(2)
        g = build_grid(dim, 12, 10, 1.0, metric)
        rhs = rng.standard_normal((10,) + g.space_shape)
        # remove the kernel content so rhs is exactly solvable
        from otgeo.prox import _kernel_basis
        wgt = np.broadcast_to(g.sqrt_g, rhs.shape)
        basis = []
        for z in _kernel_basis(g):
            v = np.array(z, dtype=float)
            for q in basis:
                v -= q * np.sum(v * q * wgt)
            v /= np.sqrt(np.sum(v * v * wgt))
            basis.append(v)
        for q in basis:
            rhs = rhs - q * np.sum(rhs * q * wgt)
        phi = spacetime_poisson(rhs, g)
        back = _apply_operator(phi, g, weighted=False)
        assert np.linalg.norm(back - rhs) <= 1e-9 * np.linalg.norm(rhs)

    def test_shape_validation(self):
        g = build_grid(1, 16, 8, 1.0)
        with pytest.raises(ValueError):
            spacetime_poisson(np.zeros((9, 16)), g)


class TestProjectContinuity:
    @pytest.mark.parametrize("metric", [None, CONFORMAL])
    def test_projection_feasible_and_idempotent(self, metric):
        rng = np.random.default_rng(3)
        g = build_grid(1, 32, 16, 1.0, metric)
        m0, m1 = smooth_pair(g, width=0.15)
        m = DensityPath(np.tile(m0, (17, 1)), g)
        w = MomentumField(rng.standard_normal((16, 32, 1)), g)
        mp, wp, _ = project_continuity(m, w, m0, m1, g)
        assert _spacetime_norm(_residual(mp.values, wp.values, g), g) < 1e-9
        mp2, wp2, _ = project_continuity(mp, wp, m0, m1, g)
        assert np.max(np.abs(mp2.values - mp.values)) < 1e-9
        assert np.max(np.abs(wp2.values - wp.values)) < 1e-9

    def test_flat_projection_machine_accurate(self):
        rng = np.random.default_rng(4)
        g = build_grid(1, 32, 16, 1.0)
        m0, m1 = smooth_pair(g, width=0.15)
        m = DensityPath(np.tile(m0, (17, 1)), g)
        w = MomentumField(rng.standard_normal((16, 32, 1)), g)
        mp, wp, _ = project_continuity(m, w, m0, m1, g)
        assert _spacetime_norm(_residual(mp.values, wp.values, g), g) < 1e-12

    def test_already_feasible_pair_unchanged(self):
        g = build_grid(1, 32, 16, 1.0)
        m0, m1 = smooth_pair(g, width=0.15)
        frac = (np.arange(17) / 16)[:, None]
        vals = (1 - frac) * m0 + frac * m1
        from otgeo.oracles import momentum_from_density_steps
        wv = momentum_from_density_steps(vals, g)
        mp, wp, _ = project_continuity(DensityPath(vals, g), MomentumField(wv, g), m0, m1, g)
        assert np.max(np.abs(mp.values - vals)) < 1e-12
        assert np.max(np.abs(wp.values - wv)) < 1e-12

    def test_projection_closer_to_feasible_points(self):
        # the projection of z is closer to ANY feasible pair than z is
        rng = np.random.default_rng(5)
        g = build_grid(1, 32, 16, 1.0)
        m0, m1 = smooth_pair(g, width=0.15)
        frac = (np.arange(17) / 16)[:, None]
        feasible_m = (1 - frac) * m0 + frac * m1
        from otgeo.oracles import momentum_from_density_steps
        feasible_w = momentum_from_density_steps(feasible_m, g)

        vals = feasible_m + 0.3 * rng.standard_normal((17, 32))
        vals[0], vals[-1] = m0, m1
        wv = feasible_w + rng.standard_normal((16, 32, 1))
        mp, wp, _ = project_continuity(DensityPath(vals, g), MomentumField(wv, g), m0, m1, g)

        def dist(mv, wvv):
            dm = np.sum((mv - feasible_m)[1:-1] ** 2 * g.cell_volume) * g.tau
            dw = np.sum(g.metric[:, None] * (wvv - feasible_w) ** 2
                        * g.cell_volume[:, None]) * g.tau
            return dm + dw

        assert dist(mp.values, wp.values) <= dist(vals, wv) + 1e-12


class TestSolveProx:
    def test_uniform_rest(self):
        g = build_grid(1, 64, 32, 1.0)
        ref = ReferenceMeasure.from_potential(0.0, g)
        m0 = np.ones(64)
        m, w, u, rep = solve_prox(m0, m0, ref, 0.1, g)
        assert abs(rep.objective) < 1e-8
        assert np.max(np.abs(w.values)) < 1e-6
        assert np.max(np.abs(m.values - 1.0)) < 1e-6

    def test_stationary_closed_form(self):
        g = build_grid(1, 64, 32, 1.0)
        x = g.axis_coords()
        ref = ReferenceMeasure.from_potential(0.3 * np.cos(2 * np.pi * x), g)
        ms = ref.stationary_density(g)
        m, w, u, rep = solve_prox(ms, ms, ref, 0.1, g)
        assert rep.objective == pytest.approx(-0.1 * ref.log_normalizer, abs=2e-6)
        # u is linear in t and constant in x up to solver tolerance
        assert np.max(np.std(u.values, axis=1)) < 1e-5

    def test_zero_cell_marginal_rejected(self):
        g = build_grid(1, 32, 8, 1.0)
        ref = ReferenceMeasure.from_potential(0.0, g)
        m0 = np.zeros(32)
        m0[0] = 1.0 / g.h
        with pytest.raises(ValueError, match="zero cell"):
            solve_prox(m0, np.ones(32), ref, 0.1, g)

    def test_wrong_mass_rejected(self):
        g = build_grid(1, 32, 8, 1.0)
        ref = ReferenceMeasure.from_potential(0.0, g)
        with pytest.raises(ValueError, match="mass"):
            solve_prox(np.full(32, 1.5), np.ones(32), ref, 0.1, g)

    def test_budget_exhaustion_carries_state(self):
        from otgeo.prox import ProxError
        g = build_grid(1, 32, 16, 1.0)
        ref = ReferenceMeasure.from_potential(0.0, g)
        m0, m1 = smooth_pair(g)
        cfg = ProxConfig(max_outer_iterations=5, min_iterations=1, stagnation_window=2)
        with pytest.raises(ProxError) as err:
            solve_prox(m0, m1, ref, 0.1, g, cfg)
        assert err.value.best is not None
        assert len(err.value.history) == 5

    def test_two_bump_certificates(self):
        g = build_grid(1, 64, 32, 1.0)
        ref = ReferenceMeasure.from_potential(0.0, g)
        m0, m1 = smooth_pair(g)
        m, w, u, rep = solve_prox(m0, m1, ref, 0.1, g)
        assert rep.duality_gap <= 1e-4 * (1.0 + abs(rep.objective))
        assert rep.final_residual < 1e-10
        assert np.min(m.values[1:-1]) > 0
        assert abs(u.terminal_pairing(m1)) < 1e-10
        # feasibility history is nonincreasing over the trailing half
        tail = rep.residual_history[len(rep.residual_history) // 2:]
        assert np.all(np.diff(tail) <= 1e-12)

    def test_swap_symmetry(self):
        g = build_grid(1, 48, 24, 1.0)
        ref = ReferenceMeasure.from_potential(0.0, g)
        x = g.axis_coords()
        q = np.exp(np.cos(2 * np.pi * x))
        q /= integrate(q, g)
        p = np.exp(0.7 * np.sin(2 * np.pi * x))
        p /= integrate(p, g)
        m0, m1 = align_null_moments(q, p, g)
        mf, _, _, repf = solve_prox(m0, m1, ref, 0.1, g)
        mb, _, _, repb = solve_prox(m1, m0, ref, 0.1, g)
        assert repf.objective == pytest.approx(repb.objective, abs=1e-6)
        assert np.max(np.abs(mf.values - mb.values[::-1])) < 1e-4

    def test_two_bump_value_bracketed_by_oracle_and_competitor(self):
        # W2^2/(2T) - c eps |log eps|  <=  B_eps  <=  heat competitor bound
        from otgeo.oracles import circular_w2_oracle, heat_competitor_bound
        g = build_grid(1, 64, 32, 1.0)
        ref = ReferenceMeasure.from_potential(0.0, g)
        m0, m1 = smooth_pair(g)
        eps = 0.05
        _, _, _, rep = solve_prox(m0, m1, ref, eps, g)
        w2sq = circular_w2_oracle(m0, m1, g)
        bound, _ = heat_competitor_bound(m0, m1, ref, eps, g)
        assert rep.objective >= w2sq / 2 - eps * abs(np.log(eps)) - 1e-7
        assert rep.objective <= bound + 1e-7

    def test_conformal_metric_solve(self):
        g = build_grid(1, 32, 16, 1.0, CONFORMAL)
        ref = ReferenceMeasure.from_potential(0.0, g)
        m0, m1 = smooth_pair(g, width=0.15)
        m, w, u, rep = solve_prox(m0, m1, ref, 0.1, g)
        assert rep.converged
        assert rep.duality_gap <= 1e-4 * (1.0 + abs(rep.objective))

    def test_2d_torus_solve(self):
        from otgeo.families import make_marginals
        g = build_grid(2, 12, 8, 1.0)
        ref = ReferenceMeasure.from_potential(0.0, g)
        m0, m1 = make_marginals("bump_pair", {"width": 0.2}, g)
        m, w, u, rep = solve_prox(m0, m1, ref, 0.1, g)
        assert rep.converged
        assert rep.final_residual < 1e-10
        assert rep.duality_gap <= 1e-4 * (1.0 + abs(rep.objective))
        assert np.min(m.values[1:-1]) > 0
