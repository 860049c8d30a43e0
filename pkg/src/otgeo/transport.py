"""The regularized transport functional and its ingredients.

The cost of a curve of densities ``m(t)`` with momentum ``w = m v`` is the
Benamou-Brenier kinetic action plus ``eps`` times the time-integrated
relative entropy against a reference measure ``nu = exp(-V) dx``:

    F_eps(m, w) = sum_k  tau * integrate( Psi_g(w[k], mbar[k]) )
                + eps * trapezoid_k( tau * H(m[k]; nu) )

on the staggered layout: densities at the ``Nt + 1`` time nodes, momenta at
the ``Nt`` interval midpoints, ``mbar[k] = (m[k] + m[k+1]) / 2``.  The
kernel ``Psi_g(p, m) = |p|_g^2 / (2m)`` is jointly convex with the closure
``Psi(0, 0) = 0`` and ``+inf`` whenever ``m <= 0`` with ``p != 0``; the
infinite branch is reported through an explicit flag, never a NaN, so
solver line searches stay deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    Grid,
    covariant_gradient,
    divergence_g,
    integrate,
    metric_norm_sq,
)

INFEASIBLE = np.inf


@dataclass
class ReferenceMeasure:
    """Reference measure ``nu = exp(-V) dx`` on the spatial grid.

    ``log_normalizer`` is ``log integrate(exp(-V))`` under the grid
    quadrature, so the stationary density ``exp(-V)/Z`` has unit mass
    exactly in discrete terms.
    """

    potential_V: np.ndarray
    log_normalizer: float

    @classmethod
    def from_potential(cls, V, grid: Grid) -> "ReferenceMeasure":
        V = np.zeros(grid.space_shape) + np.asarray(V, dtype=float)
        return cls(V, float(np.log(integrate(np.exp(-V), grid))))

    def stationary_density(self, grid: Grid) -> np.ndarray:
        return np.exp(-self.potential_V - self.log_normalizer)


@dataclass
class DensityPath:
    """Time-indexed probability densities, shape ``(Nt+1,) + space_shape``."""

    values: np.ndarray
    grid: Grid

    def validate(self, mass_tol=1e-8):
        v = self.values
        if v.shape != (self.grid.n_time + 1,) + self.grid.space_shape:
            raise ValueError(f"density path has shape {v.shape}")
        if np.any(v < 0):
            raise ValueError("density path has negative entries")
        masses = np.array([integrate(s, self.grid) for s in v])
        if np.max(np.abs(masses - 1.0)) > mass_tol:
            raise ValueError(f"density path masses deviate by {np.max(np.abs(masses - 1)):.3e}")
        return self

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.values[:-1] + self.values[1:])


@dataclass
class MomentumField:
    """Staggered momentum ``w = m v``, shape ``(Nt,) + space_shape + (dim,)``."""

    values: np.ndarray
    grid: Grid

    def validate(self):
        expect = (self.grid.n_time,) + self.grid.space_shape + (self.grid.dim,)
        if self.values.shape != expect:
            raise ValueError(f"momentum field has shape {self.values.shape}, expected {expect}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("momentum field has non-finite entries")
        return self


@dataclass
class Potential:
    """Space-time adjoint field at time nodes, shape ``(Nt+1,) + space_shape``."""

    values: np.ndarray
    grid: Grid

    def normalize(self, m1) -> "Potential":
        """Shift so the terminal trace pairs to zero against ``m1``."""
        shift = integrate(self.values[-1] * m1, self.grid)
        return Potential(self.values - shift, self.grid)

    def terminal_pairing(self, m1) -> float:
        return integrate(self.values[-1] * m1, self.grid)


def bb_kernel(p, m):
    """Benamou-Brenier kernel ``|p|^2 / (2m)`` with its convex closure.

    ``p`` is the metric length(s) squared already, or a vector whose
    Euclidean norm is the metric length; to keep the scalar contract
    simple, ``p`` here is the vector in an orthonormal frame (use
    ``sqrt(g) w`` on the conformal circle).  Returns ``inf`` on the
    infeasible branch (m == 0, p != 0); raises on ``m < 0``.
    """
    m = float(m)
    if m < 0:
        raise ValueError(f"bb_kernel needs m >= 0, got {m}")
    psq = float(np.dot(np.atleast_1d(p), np.atleast_1d(p)))
    if m == 0.0:
        return 0.0 if psq == 0.0 else INFEASIBLE
    return psq / (2.0 * m)


def relative_entropy(m_slice, reference: ReferenceMeasure, grid: Grid) -> float:
    """Relative entropy ``H(m; nu) = integrate(m (log m + V))``.

    Uses the convention ``0 log 0 = 0``; negative densities are a domain
    error.  For any probability density the value is bounded below by
    ``-log_normalizer`` (Jensen).
    """
    m = np.asarray(m_slice, dtype=float)
    if np.any(m < 0):
        raise ValueError("relative_entropy needs m >= 0")
    out = np.zeros_like(m)
    pos = m > 0
    out[pos] = m[pos] * (np.log(m[pos]) + reference.potential_V[pos])
    return integrate(out, grid)


def kinetic_term(w_values, mbar, grid: Grid):
    """Kinetic integrand ``Psi_g(w, mbar)`` per staggered cell.

    Returns ``(field, infeasible)`` where ``infeasible`` is True when some
    cell has ``mbar <= 0`` with ``w != 0`` (the +inf branch).
    """
    wsq = metric_norm_sq(w_values, grid)
    dead = mbar <= 0
    infeasible = bool(np.any(dead & (wsq > 0)))
    field = np.zeros_like(mbar)
    live = ~dead
    field[live] = wsq[live] / (2.0 * mbar[live])
    return field, infeasible


def functional_value(m: DensityPath, w: MomentumField, reference: ReferenceMeasure,
                     eps: float) -> float:
    """Discrete value of ``F_eps``; ``inf`` on the infeasible kinetic branch.

    Kinetic action by the midpoint rule over staggered cells, entropy by
    the trapezoid rule over time nodes (endpoint entropies included, as
    they are in the continuum functional).
    """
    grid = m.grid
    if w.grid is not grid and w.grid != grid:
        raise ValueError("density and momentum live on different grids")
    tau = grid.tau
    mbar = m.midpoints()
    total = 0.0
    for k in range(grid.n_time):
        cell, infeasible = kinetic_term(w.values[k], mbar[k], grid)
        if infeasible:
            return INFEASIBLE
        total += tau * integrate(cell, grid)
    weights = np.full(grid.n_time + 1, tau)
    weights[0] = weights[-1] = 0.5 * tau
    for k in range(grid.n_time + 1):
        total += eps * weights[k] * relative_entropy(m.values[k], reference, grid)
    return total


def energy_slice(m_slice, u_slice, reference: ReferenceMeasure, eps: float,
                 grid: Grid) -> float:
    """Invariant energy ``E = 1/2 int m |grad u|^2 - eps H(m; nu)`` at one time."""
    gu = covariant_gradient(u_slice, grid)
    kinetic = 0.5 * integrate(np.asarray(m_slice) * metric_norm_sq(gu, grid), grid)
    return kinetic - eps * relative_entropy(m_slice, reference, grid)


def continuity_residual(m: DensityPath, w: MomentumField):
    """Residual of the staggered continuity equation and its L2 norm.

    ``r[k] = (m[k+1] - m[k]) / tau - div_g(w[k+1/2])`` per interval; the
    norm is volume-weighted over space-time.
    """
    grid = m.grid
    tau = grid.tau
    r = (m.values[1:] - m.values[:-1]) / tau - divergence_g(w.values, grid)
    norm = float(np.sqrt(np.sum(r * r * grid.cell_volume) * tau))
    return r, norm


def velocity_from_momentum(w_values, mbar, floor=1e-14):
    """Velocity ``v = w / mbar`` with zero where the density vanishes."""
    v = np.zeros_like(w_values)
    live = mbar > floor
    v[live] = w_values[live] / mbar[live][:, None]
    return v
