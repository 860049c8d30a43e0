"""Ground-truth oracles, independent of the solvers they check.

* exact squared 2-Wasserstein distance of grid measures on the circle
  (brute-force over cut points, monotone CDF matching per cut);
* exact discrete Kantorovich cost on the 2-D torus via the transportation
  linear program (vertex solution of the HiGHS simplex);
* a feasible-curve upper bound for the regularized action built from the
  spectral heat flow with a power-law time reparametrization, glued to the
  solver's own optimal middle segment;
* the McCann interpolant of the circular optimal coupling, used as the
  reference midpoint in the vanishing-regularization sweep.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .grid import Grid, build_grid, integrate
from .transport import DensityPath, MomentumField, ReferenceMeasure, functional_value


def _check_probability(m, grid, name):
    m = np.asarray(m, dtype=float)
    if m.shape != grid.space_shape:
        raise ValueError(f"{name} shape {m.shape} != {grid.space_shape}")
    if np.any(m < 0):
        raise ValueError(f"{name} must be nonnegative")
    mass = integrate(m, grid)
    if abs(mass - 1.0) > 1e-8:
        raise ValueError(f"{name} mass {mass} is not 1")
    return m


def _coupling_segments(cp, cq, xs, L, alpha):
    """Quantile segments of the circular coupling at CDF offset ``alpha``.

    The second measure's quantile function is extended periodically
    (``G^{-1}(t + 1) = G^{-1}(t) + L``) and shifted by ``alpha``; merging
    both sets of breakpoints inside the unit quantile interval yields
    segments on which both quantile functions are constant.  Returns
    ``(lengths, x, y)`` with ``y`` unwrapped to the line.
    """
    gshift = (cq + alpha) % 1.0
    events = np.unique(np.concatenate([[0.0, 1.0], cp[:-1], gshift]))
    events = events[(events >= 0.0) & (events <= 1.0)]
    lengths = np.diff(events)
    keep = lengths > 1e-15
    mids = 0.5 * (events[:-1] + events[1:])[keep]
    lengths = lengths[keep]
    x = xs[np.searchsorted(cp, mids)]
    s = mids - alpha
    k = np.floor(s)
    y = xs[np.searchsorted(cq, s - k)] + k * L
    return lengths, x, y


def _shift_cost(cp, cq, xs, L, alpha):
    lengths, x, y = _coupling_segments(cp, cq, xs, L, alpha)
    return float(np.sum(lengths * (x - y) ** 2))


def _optimal_shift(p, q, xs, L):
    """Exact minimizer of the quantile cost over the circular CDF offset.

    The cost is piecewise quadratic and convex in the offset (squared
    ground cost), so scanning every quantile-alignment breakpoint and
    golden-section refining between the neighbors of the best one is
    exact to rounding.
    """
    cp = np.cumsum(p)
    cq = np.cumsum(q)
    alphas = np.unique((cp[:, None] - cq[None, :]).ravel() % 1.0)
    alphas = np.concatenate([alphas, alphas - 1.0])
    costs = np.array([_shift_cost(cp, cq, xs, L, a) for a in alphas])
    order = np.argsort(alphas)
    alphas, costs = alphas[order], costs[order]
    ibest = int(np.argmin(costs))
    lo = alphas[max(ibest - 1, 0)]
    hi = alphas[min(ibest + 1, len(alphas) - 1)]
    golden = 0.5 * (np.sqrt(5.0) - 1.0)
    a, b = lo, hi
    c = b - golden * (b - a)
    d = a + golden * (b - a)
    fc, fd = _shift_cost(cp, cq, xs, L, c), _shift_cost(cp, cq, xs, L, d)
    for _ in range(90):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - golden * (b - a)
            fc = _shift_cost(cp, cq, xs, L, c)
        else:
            a, c, fc = c, d, fd
            d = a + golden * (b - a)
            fd = _shift_cost(cp, cq, xs, L, d)
        if b - a < 1e-14:
            break
    cands = [(costs[ibest], alphas[ibest]), (fc, c), (fd, d)]
    best = min(cands)
    return best[1], best[0], cp, cq


def circular_w2_oracle(m0, m1, grid: Grid) -> float:
    """Exact squared 2-Wasserstein distance of two grid measures on the circle.

    The circle problem reduces to a one-parameter family of flat-line
    quantile costs indexed by the cut (equivalently the CDF offset); the
    cost is convex in the offset, and minimizing over every quantile
    breakpoint plus a golden-section refinement gives the exact optimum
    of the grid measure (atoms of mass ``m_i h`` at the nodes).  Flat 1-D
    grids only.
    """
    if grid.dim != 1 or not grid.flat:
        raise ValueError("circular_w2_oracle needs the flat 1-D circle")
    p = _check_probability(m0, grid, "m0") * grid.cell_volume
    q = _check_probability(m1, grid, "m1") * grid.cell_volume
    p = p / p.sum()
    q = q / q.sum()
    xs = np.arange(grid.n_space) * grid.h
    _, best, _, _ = _optimal_shift(p, q, xs, grid.length)
    return float(best)


def mccann_midpoint(m0, m1, grid: Grid, t=0.5) -> np.ndarray:
    """Displacement interpolant of the circular optimal coupling at time t.

    Pairs quantiles at the optimal CDF offset, moves each mass atom the
    fraction ``t`` of its (unwrapped) displacement, and deposits it back
    on the grid with linear splitting between the two nearest nodes.
    Returns a grid density of unit mass.
    """
    if grid.dim != 1 or not grid.flat:
        raise ValueError("mccann_midpoint needs the flat 1-D circle")
    p = _check_probability(m0, grid, "m0") * grid.cell_volume
    q = _check_probability(m1, grid, "m1") * grid.cell_volume
    p, q = p / p.sum(), q / q.sum()
    n, h, L = grid.n_space, grid.h, grid.length
    xs = np.arange(n) * h
    alpha, _, cp, cq = _optimal_shift(p, q, xs, L)
    lengths, x, y = _coupling_segments(cp, cq, xs, L, alpha)
    out = np.zeros(n)
    pos = ((1.0 - t) * x + t * y) % L
    idx = pos / h
    lo = np.floor(idx).astype(int) % n
    frac = idx - np.floor(idx)
    np.add.at(out, lo, lengths * (1.0 - frac))
    np.add.at(out, (lo + 1) % n, lengths * frac)
    return out / (out.sum() * h)


def flow_w2_oracle(m0, m1, grid: Grid, max_bins=1024, coarsen=1) -> float:
    """Exact discrete Kantorovich cost on the torus with periodic squared
    ground distance, by the transportation linear program.

    ``coarsen`` pools the grid by the given integer factor before solving;
    the post-coarsening bin count must not exceed ``max_bins`` (raise and
    instruct otherwise).  Deterministic: the LP is solved by simplex to a
    vertex solution.
    """
    if grid.dim != 2 or not grid.flat:
        raise ValueError("flow_w2_oracle handles the flat 2-D torus")
    a = _check_probability(m0, grid, "m0") * grid.cell_volume
    b = _check_probability(m1, grid, "m1") * grid.cell_volume
    n = grid.n_space
    h = grid.h
    if coarsen > 1:
        if n % coarsen:
            raise ValueError(f"coarsen={coarsen} does not divide n_space={n}")
        a = a.reshape(n // coarsen, coarsen, n // coarsen, coarsen).sum(axis=(1, 3))
        b = b.reshape(n // coarsen, coarsen, n // coarsen, coarsen).sum(axis=(1, 3))
        n = n // coarsen
        h = h * coarsen
    if n * n > max_bins:
        raise ValueError(
            f"{n * n} bins exceed max_bins={max_bins}; pass a larger coarsen factor")

    a = (a / a.sum()).ravel()
    b = (b / b.sum()).ravel()
    # periodic squared distance between bins (i1,j1) and (i2,j2)
    di = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    di = np.minimum(di, n - di) * h
    axis_sq = di ** 2
    C = axis_sq[:, None, :, None] + axis_sq[None, :, None, :]
    C = C.reshape(n * n, n * n)

    nb = n * n
    nvar = nb * nb
    rows = np.concatenate([np.repeat(np.arange(nb), nb),
                           nb + np.tile(np.arange(nb), nb)])
    cols = np.concatenate([np.arange(nvar), np.arange(nvar)])
    vals = np.ones(2 * nvar)
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * nb, nvar))
    rhs = np.concatenate([a, b])
    res = linprog(C.ravel(), A_eq=A[:-1], b_eq=rhs[:-1], bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transportation LP failed: {res.message}")
    return float(res.fun)


# ---------------------------------------------------------------------------
# Heat flow machinery
# ---------------------------------------------------------------------------

def heat_semigroup(m, t, grid: Grid) -> np.ndarray:
    """Exact spectral heat flow ``exp(t Lap) m`` on the flat torus/circle."""
    if not grid.flat:
        raise ValueError("spectral heat flow needs the flat metric")
    if t <= 0:
        return np.asarray(m, dtype=float).copy()
    xi = 2.0 * np.pi * np.fft.fftfreq(grid.n_space, d=grid.h)
    if grid.dim == 1:
        mult = np.exp(-xi ** 2 * t)
    else:
        mult = np.exp(-(xi[:, None] ** 2 + xi[None, :] ** 2) * t)
    axes = tuple(range(grid.dim))
    return np.fft.ifftn(np.fft.fftn(np.asarray(m, dtype=float), axes=axes) * mult,
                        axes=axes).real


def momentum_from_density_steps(m_path, grid: Grid):
    """Momentum making the staggered continuity equation hold per interval.

    Solves the discrete flux problem ``div_g w[k] = (m[k+1] - m[k]) / tau``
    in gradient form (``w = grad phi``) through the spectral pseudo-inverse
    of the composed Laplacian; components of the density increments in the
    kernel of the centered stencil are irreducible and left out.  Flat
    grids only.
    """
    if not grid.flat:
        raise ValueError("flux construction implemented for flat metrics")
    m_path = np.asarray(m_path, dtype=float)
    rhs = (m_path[1:] - m_path[:-1]) / grid.tau
    f = np.fft.fftfreq(grid.n_space)
    lam_axis = (np.sin(2.0 * np.pi * f) / grid.h) ** 2
    sym = lam_axis if grid.dim == 1 else lam_axis[:, None] + lam_axis[None, :]
    inv = np.zeros_like(sym)
    mask = sym > 1e-13 * max(sym.max(), 1.0)
    inv[mask] = 1.0 / sym[mask]
    axes = tuple(range(1, 1 + grid.dim))
    phi_hat = np.fft.fftn(rhs, axes=axes) * (-inv)
    phi = np.fft.ifftn(phi_hat, axes=axes).real
    from .grid import covariant_gradient
    return covariant_gradient(phi, grid)


def heat_competitor_bound(m0, m1, reference: ReferenceMeasure, eps, grid: Grid,
                          beta=2.0, delta0=None, delta1=None, solver_config=None):
    """Feasible-curve upper bound for the minimal regularized action.

    Both marginals are evolved by the exact spectral heat flow under the
    reparametrization ``t -> t**beta`` (beta > 1 keeps the kinetic action
    of the boundary layers integrable even for very rough data); over the
    middle window ``[delta0, delta1]`` the two smoothed measures are joined
    by the primal solver's own optimal curve.  Evaluating the discrete
    functional on the glued curve bounds the minimum from above.

    Returns ``(bound, parts)`` with the leg costs in ``parts``.
    """
    if beta <= 1:
        raise ValueError("beta must exceed 1")
    if not grid.flat:
        raise ValueError("heat competitor implemented for flat metrics")
    from .prox import ProxConfig, solve_prox

    T, Nt = grid.horizon, grid.n_time
    k0 = int(round(Nt / 3)) if delta0 is None else int(round(delta0 / grid.tau))
    k1 = int(round(2 * Nt / 3)) if delta1 is None else int(round(delta1 / grid.tau))
    if not 0 < k0 < k1 < Nt:
        raise ValueError(f"window nodes ({k0}, {k1}) must satisfy 0 < k0 < k1 < {Nt}")
    t_nodes = grid.time_nodes()

    m_path = np.empty((Nt + 1,) + grid.space_shape)
    for k in range(k0 + 1):
        m_path[k] = _positive_slice(heat_semigroup(m0, t_nodes[k] ** beta, grid), grid)
    for k in range(k1, Nt + 1):
        m_path[k] = _positive_slice(heat_semigroup(m1, (T - t_nodes[k]) ** beta, grid), grid)

    mid_grid = build_grid(grid.dim, grid.n_space, k1 - k0, t_nodes[k1] - t_nodes[k0],
                          length=grid.length)
    mid_m, mid_w, _, _ = solve_prox(m_path[k0], m_path[k1], reference, eps, mid_grid,
                                    solver_config or ProxConfig())
    m_path[k0:k1 + 1] = mid_m.values

    w = np.zeros((Nt,) + grid.space_shape + (grid.dim,))
    w[:k0] = momentum_from_density_steps(m_path[:k0 + 1], grid)
    w[k1:] = momentum_from_density_steps(m_path[k1:], grid)
    w[k0:k1] = mid_w.values

    path = DensityPath(m_path, grid)
    mom = MomentumField(w, grid)
    bound = functional_value(path, mom, reference, eps)
    legs = {
        "k0": k0, "k1": k1,
        "middle_objective": functional_value(
            DensityPath(m_path[k0:k1 + 1], mid_grid), MomentumField(w[k0:k1], mid_grid),
            reference, eps),
    }
    return float(bound), legs


def _positive_slice(m, grid: Grid, floor=1e-13):
    """Clip spectral undershoots and restore unit mass."""
    m = np.maximum(m, floor)
    return m / integrate(m, grid)
