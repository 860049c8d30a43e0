"""Ground-truth oracles: circular W2, Kantorovich LP, heat competitor."""

import numpy as np
import pytest
from scipy import sparse
from scipy.optimize import linprog

from otgeo.grid import build_grid, integrate
from otgeo.transport import ReferenceMeasure
from otgeo.prox import align_null_moments, solve_prox
from otgeo.oracles import (
    circular_w2_oracle,
    flow_w2_oracle,
    heat_competitor_bound,
    heat_semigroup,
    mccann_midpoint,
    momentum_from_density_steps,
)


def lp_circle_w2(m0, m1, grid):
    """Independent exact reference: the full transportation LP on the circle."""
    n, h = grid.n_space, grid.h
    a = m0 * grid.cell_volume
    b = m1 * grid.cell_volume
    a, b = a / a.sum(), b / b.sum()
    d = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    d = np.minimum(d, n - d) * h
    nvar = n * n
    rows = np.concatenate([np.repeat(np.arange(n), n), n + np.tile(np.arange(n), n)])
    cols = np.concatenate([np.arange(nvar), np.arange(nvar)])
    A = sparse.csr_matrix((np.ones(2 * nvar), (rows, cols)), shape=(2 * n, nvar))
    res = linprog((d ** 2).ravel(), A_eq=A[:-1], b_eq=np.concatenate([a, b])[:-1],
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


class TestCircularW2:
    def test_identical_measures(self):
        g = build_grid(1, 32, 4, 1.0)
        m = np.exp(np.cos(2 * np.pi * g.axis_coords()))
        m /= integrate(m, g)
        assert circular_w2_oracle(m, m, g) == pytest.approx(0.0, abs=1e-14)

    def test_point_masses_short_arc(self):
        g = build_grid(1, 40, 4, 1.0)
        m0 = np.zeros(40)
        m0[0] = 1.0 / g.h
        m1 = np.zeros(40)
        m1[12] = 1.0 / g.h
        assert circular_w2_oracle(m0, m1, g) == pytest.approx(0.09, abs=1e-12)

    def test_point_masses_antipodal(self):
        g = build_grid(1, 40, 4, 1.0)
        m0 = np.zeros(40)
        m0[0] = 1.0 / g.h
        m1 = np.zeros(40)
        m1[20] = 1.0 / g.h
        assert circular_w2_oracle(m0, m1, g) == pytest.approx(0.25, abs=1e-12)

    def test_matches_transportation_lp_on_random_instances(self):
        rng = np.random.default_rng(12)
        g = build_grid(1, 32, 4, 1.0)
        x = g.axis_coords()
        for _ in range(4):
            m0 = np.exp(rng.standard_normal() * np.sin(2 * np.pi * x)
                        + 0.4 * rng.standard_normal() * np.cos(4 * np.pi * x))
            m0 /= integrate(m0, g)
            m1 = np.exp(0.6 * np.cos(2 * np.pi * (x - rng.random())))
            m1 /= integrate(m1, g)
            assert circular_w2_oracle(m0, m1, g) == pytest.approx(
                lp_circle_w2(m0, m1, g), abs=1e-10)

    def test_shift_cost_is_convex_in_the_offset(self):
        # the refinement step relies on convexity of the quantile cost
        from otgeo.oracles import _shift_cost
        rng = np.random.default_rng(13)
        g = build_grid(1, 24, 4, 1.0)
        xs = g.axis_coords()
        p = rng.random(24) + 0.05
        q = rng.random(24) + 0.05
        p, q = p / p.sum(), q / q.sum()
        cp, cq = np.cumsum(p), np.cumsum(q)
        alphas = np.linspace(-0.5, 0.5, 301)
        costs = np.array([_shift_cost(cp, cq, xs, 1.0, a) for a in alphas])
        d2 = costs[2:] - 2 * costs[1:-1] + costs[:-2]
        assert np.min(d2) > -1e-9


class TestMcCannMidpoint:
    def test_unit_mass_and_location(self):
        g = build_grid(1, 64, 4, 1.0)
        x = g.axis_coords()
        kappa = 1.0 / (2 * np.pi * 0.08) ** 2
        q = np.exp(kappa * (np.cos(2 * np.pi * x) - 1))
        q /= integrate(q, g)
        mid = mccann_midpoint(q, np.roll(q, 16), g)
        assert integrate(mid, g) == pytest.approx(1.0, abs=1e-12)
        assert abs(x[np.argmax(mid)] - 0.125) < 2 * g.h

    def test_endpoints_reproduce_marginals(self):
        g = build_grid(1, 32, 4, 1.0)
        x = g.axis_coords()
        q = np.exp(np.cos(2 * np.pi * x))
        q /= integrate(q, g)
        p = np.roll(q, 5)
        back = mccann_midpoint(q, p, g, t=0.0)
        assert np.max(np.abs(back - q)) < 1e-10


class TestFlowW2:
    def test_identical_measures(self):
        g = build_grid(2, 8, 4, 1.0)
        m = np.ones(g.space_shape)
        assert flow_w2_oracle(m, m, g) == pytest.approx(0.0, abs=1e-12)

    def test_translation_upper_bound(self):
        g = build_grid(2, 12, 4, 1.0)
        x = g.axis_coords()
        kappa = 1.0 / (2 * np.pi * 0.12) ** 2
        q = np.exp(kappa * (np.cos(2 * np.pi * x[:, None]) - 1)
                   + kappa * (np.cos(2 * np.pi * x[None, :]) - 1))
        q /= integrate(q, g)
        shifted = np.roll(q, 3, axis=0)   # translate by 0.25 in x
        val = flow_w2_oracle(q, shifted, g)
        assert val <= 0.0625 + 1e-10

    def test_dimensional_reduction_matches_circular(self):
        n = 12
        g2 = build_grid(2, n, 4, 1.0)
        g1 = build_grid(1, n, 4, 1.0)
        x = g1.axis_coords()
        prof0 = np.exp(0.8 * np.cos(2 * np.pi * x))
        prof1 = np.exp(0.8 * np.sin(2 * np.pi * x))
        prof0 /= integrate(prof0, g1)
        prof1 /= integrate(prof1, g1)
        m0 = np.tile(prof0[:, None], (1, n))
        m1 = np.tile(prof1[:, None], (1, n))
        v2 = flow_w2_oracle(m0, m1, g2)
        v1 = circular_w2_oracle(prof0, prof1, g1)
        assert v2 == pytest.approx(v1, abs=1e-10)

    def test_bin_budget_error_instructs_coarsening(self):
        g = build_grid(2, 16, 4, 1.0)
        m = np.ones(g.space_shape)
        with pytest.raises(ValueError, match="coarsen"):
            flow_w2_oracle(m, m, g, max_bins=64)
        assert flow_w2_oracle(m, m, g, max_bins=64, coarsen=2) == pytest.approx(0.0, abs=1e-12)


class TestHeatFlow:
    def test_heat_semigroup_preserves_mass_and_smooths(self):
        g = build_grid(1, 64, 4, 1.0)
        m = np.zeros(64)
        m[10] = 1.0 / g.h
        out = heat_semigroup(m, 1e-3, g)
        assert integrate(out, g) == pytest.approx(1.0, abs=1e-12)
        assert np.max(out) < np.max(m)

    def test_flux_solve_gives_discrete_feasibility(self):
        g = build_grid(2, 12, 6, 1.0)
        x = g.axis_coords()
        t = g.time_nodes()
        path = 1.0 + 0.3 * np.sin(2 * np.pi * (x[None, :, None] - 0.2 * t[:, None, None])) \
            * np.cos(2 * np.pi * x[None, None, :])
        w = momentum_from_density_steps(path, g)
        from otgeo.grid import divergence_g
        resid = (path[1:] - path[:-1]) / g.tau - divergence_g(w, g)
        assert np.max(np.abs(resid)) < 1e-10


class TestHeatCompetitor:
    def test_uniform_family_is_stationary(self):
        g = build_grid(1, 32, 12, 1.0)
        ref = ReferenceMeasure.from_potential(0.0, g)
        m = np.ones(32)
        bound, parts = heat_competitor_bound(m, m, ref, 0.1, g)
        assert 0.0 <= bound <= 1e-8

    def test_dominates_the_optimal_value(self):
        g = build_grid(1, 48, 24, 1.0)
        x = g.axis_coords()
        ref = ReferenceMeasure.from_potential(0.0, g)
        kappa = 1.0 / (2 * np.pi * 0.1) ** 2
        q = np.exp(kappa * (np.cos(2 * np.pi * x) - 1))
        q /= integrate(q, g)
        m0, m1 = align_null_moments(q, np.roll(q, 24), g)
        _, _, _, rep = solve_prox(m0, m1, ref, 0.1, g)
        bound, parts = heat_competitor_bound(m0, m1, ref, 0.1, g)
        assert np.isfinite(bound)
        assert bound >= rep.objective - 1e-6

    def test_beta_must_exceed_one(self):
        g = build_grid(1, 32, 12, 1.0)
        ref = ReferenceMeasure.from_potential(0.0, g)
        with pytest.raises(ValueError, match="beta"):
            heat_competitor_bound(np.ones(32), np.ones(32), ref, 0.1, g, beta=1.0)

    def test_bound_stable_under_refinement(self):
        # nonincreasing under refinement for fixed data, within a 5% margin
        from otgeo.families import make_marginals
        bounds = []
        for (n, nt) in ((64, 32), (128, 64)):
            g = build_grid(1, n, nt, 1.0)
            ref = ReferenceMeasure.from_potential(0.0, g)
            m0, m1 = make_marginals("bump_pair", {"width": 0.1, "centers": (0.0, 0.5)}, g)
            b, _ = heat_competitor_bound(m0, m1, ref, 0.1, g)
            bounds.append(b)
        assert bounds[1] <= 1.05 * bounds[0]
