"""Primal solver: proximal splitting of the kinetic + entropy action.

The discrete functional is minimized over staggered pairs ``(m, w)`` subject
to the continuity constraint by an alternating-direction augmented
Lagrangian.  Centered copies ``y = (a, b, c)`` of the staggered variables
carry the pointwise cell energies (``a``: midpoint density for the kinetic
kernel, ``b``: momentum, ``c``: interior-node density for the entropy), the
staggered copy is kept exactly feasible by a weighted projection onto the
continuity set, and a multiplier enforces consensus between the two:

    1. pointwise prox on the centered copies     (independent scalar roots)
    2. weighted continuity projection            (one spectral space-time solve)
    3. multiplier ascent.

The projection multiplier converges to the adjoint state of the coupled
optimality system; after a sign fix and a linear-in-time gauge shift it is
returned as the potential ``u`` whose traces certify the objective through
the duality identity  int u(0) m0 - int u(T) m1 = F_eps(m, w).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct, idct
from scipy.linalg import solve_banded

from .grid import Grid, covariant_gradient, divergence_g, integrate, metric_norm_sq
from .transport import (
    DensityPath,
    MomentumField,
    Potential,
    ReferenceMeasure,
    relative_entropy,
)


class ProxError(Exception):
    """Solver failure carrying the best iterate and the residual history."""

    def __init__(self, message, best=None, history=None):
        super().__init__(message)
        self.best = best
        self.history = history


@dataclass
class ProxConfig:
    penalty: float = 1.0
    max_outer_iterations: int = 30000
    constraint_tolerance: float = 1e-7
    prox_tolerance: float = 1e-12
    stagnation_window: int = 50
    objective_stagnation: float = 1e-9
    min_iterations: int = 100

    def validate(self):
        if self.penalty <= 0:
            raise ValueError("penalty must be positive")
        for name in ("constraint_tolerance", "prox_tolerance", "objective_stagnation"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        return self


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    consensus_gap: float
    duality_gap: float
    objective: float
    energy_drift: float
    wall_time: float
    velocity_discrepancy: float = 0.0
    residual_history: np.ndarray = field(default=None, repr=False)
    objective_history: np.ndarray = field(default=None, repr=False)
    converged: bool = True

    def as_dict(self, include_volatile=False):
        out = {
            "iterations": int(self.iterations),
            "final_residual": float(self.final_residual),
            "consensus_gap": float(self.consensus_gap),
            "duality_gap": float(self.duality_gap),
            "objective": float(self.objective),
            "energy_drift": float(self.energy_drift),
            "velocity_discrepancy": float(self.velocity_discrepancy),
            "converged": bool(self.converged),
        }
        if include_volatile:
            out["wall_time"] = float(self.wall_time)
        return out


# ---------------------------------------------------------------------------
# Pointwise prox
# ---------------------------------------------------------------------------

def _prox_root(a, bsq, sigma, eps, V, tol=1e-12, max_iter=500):
    """Vectorized root of the prox optimality condition.

    Solves, per cell, f(m) = (m - a)/sigma + eps (log m + V + 1)
    - bsq / (2 (m + sigma)^2) = 0 over m > 0, by safeguarded Newton with
    bisection fallback on a bracket that provably contains the root (f is
    strictly increasing).  For eps == 0 the boundary minimum m = 0 is
    detected from the sign of f(0+).
    """
    a = np.asarray(a, dtype=float)
    bsq = np.broadcast_to(np.asarray(bsq, dtype=float), a.shape).copy()
    V = np.broadcast_to(np.asarray(V, dtype=float), a.shape)

    def f(m):
        out = (m - a) / sigma - bsq / (2.0 * (m + sigma) ** 2)
        if eps > 0:
            out = out + eps * (np.log(m) + V + 1.0)
        return out

    def fp(m):
        out = 1.0 / sigma + bsq / (m + sigma) ** 3
        if eps > 0:
            out = out + eps / m
        return out

    if eps == 0:
        at_zero = (-a) / sigma - bsq / (2.0 * sigma ** 2) >= 0
    else:
        at_zero = np.zeros(a.shape, dtype=bool)

    lo = np.maximum(a, 0.0) + 1e-300
    if eps > 0:
        for _ in range(400):
            bad = f(lo) >= 0
            if not bad.any():
                break
            lo = np.where(bad, lo / 8.0, lo)
    hi = np.maximum(a, 0.0) + sigma + 1.0
    for _ in range(200):
        bad = f(hi) <= 0
        if not bad.any():
            break
        hi = np.where(bad, hi * 2.0, hi)

    m = 0.5 * (lo + hi)
    for _ in range(max_iter):
        fm = f(m)
        if np.max(np.abs(np.where(at_zero, 0.0, fm))) < tol:
            break
        below = fm < 0
        lo = np.where(below, m, lo)
        hi = np.where(below, hi, m)
        step = fm / fp(m)
        newton = m - step
        inside = (newton > lo) & (newton < hi)
        m = np.where(inside, newton, 0.5 * (lo + hi))
    m = np.where(at_zero, 0.0, m)
    return m


def pointwise_prox(a, b, sigma, eps_cell, V_cell, tol=1e-12):
    """Per-cell prox: argmin over (m >= 0, w) of
    ``Psi(w, m) + eps_cell m (log m + V_cell) + (|w - b|^2 + (m - a)^2) / (2 sigma)``.

    The momentum is eliminated analytically as ``w = m b / (m + sigma)``;
    the density solves the scalar first-order condition.  For
    ``eps_cell > 0`` the root is strictly positive; for ``eps_cell = 0``
    the boundary value ``m = 0`` (with ``w = 0``) is admitted.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if eps_cell < 0:
        raise ValueError("eps_cell must be nonnegative")
    b = np.atleast_1d(np.asarray(b, dtype=float))
    bsq = float(np.dot(b, b))
    m = float(_prox_root(np.asarray(float(a)), bsq, sigma, eps_cell, float(V_cell), tol=tol))
    w = m * b / (m + sigma)
    return m, w


# ---------------------------------------------------------------------------
# Spectral space-time solves
# ---------------------------------------------------------------------------

def _space_symbol(grid: Grid):
    """Fourier symbol of minus the composed (wide) flat Laplacian."""
    f = np.fft.fftfreq(grid.n_space)
    lam = (np.sin(2.0 * np.pi * f) / grid.h) ** 2
    if grid.dim == 1:
        return lam
    return lam[:, None] + lam[None, :]


def _time_symbol(grid: Grid, weighted: bool):
    """DCT-II symbol of the time block of the projection operator.

    Plain projection: the 3-point Neumann Laplacian on the Nt interval
    midpoints.  Weighted projection (consensus coupling through midpoint
    averaging + node copies): the same symbol divided by the sine-mode
    eigenvalue of the tridiagonal coupling matrix [1/4, 3/2, 1/4].
    """
    j = np.arange(grid.n_time)
    lam = (2.0 - 2.0 * np.cos(np.pi * j / grid.n_time)) / grid.tau ** 2
    if weighted:
        lam = lam / (1.5 + 0.5 * np.cos(np.pi * j / grid.n_time))
    return lam


def _spectral_solve(rhs, grid: Grid, weighted: bool):
    """Pseudo-inverse of (time block + wide flat Laplacian) via DCT x FFT."""
    sym = _time_symbol(grid, weighted).reshape((-1,) + (1,) * grid.dim) + _space_symbol(grid)
    inv = np.zeros_like(sym)
    mask = sym > 1e-12 * sym.max()
    inv[mask] = 1.0 / sym[mask]
    axes = tuple(range(1, 1 + grid.dim))
    hat = np.fft.fftn(dct(rhs, type=2, axis=0, norm="ortho"), axes=axes)
    hat *= inv
    return idct(np.fft.ifftn(hat, axes=axes).real, type=2, axis=0, norm="ortho")


def _apply_operator(phi, grid: Grid, weighted: bool):
    """Forward application of the space-time operator (any metric)."""
    t_sym = _time_symbol(grid, weighted).reshape((-1,) + (1,) * grid.dim)
    out = idct(t_sym * dct(phi, type=2, axis=0, norm="ortho"), type=2, axis=0, norm="ortho")
    grad = covariant_gradient(phi, grid)
    return out - divergence_g(grad, grid)


def _kernel_basis(grid: Grid):
    """Constant-in-time kernel modes of the space-time operator."""
    return [np.broadcast_to(m, (grid.n_time,) + grid.space_shape)
            for m in _space_null_modes(grid)]


def _space_null_modes(grid: Grid):
    """Spatial null modes of the centered-difference stencil (constant plus,
    on even grids, the per-axis alternating modes)."""
    n = grid.n_space
    modes = [np.ones(grid.space_shape)]
    if n % 2 == 0:
        alt = np.cos(np.pi * np.arange(n))
        if grid.dim == 1:
            modes.append(alt)
        else:
            modes.extend([np.tile(alt[:, None], (1, n)), np.tile(alt[None, :], (n, 1)),
                          alt[:, None] * alt[None, :]])
    return modes


def align_null_moments(m0, m1, grid: Grid, max_rounds=4):
    """Make a marginal pair compatible with the discrete continuity operator.

    The centered divergence annihilates the alternating spatial modes, so a
    staggered pair can connect two marginals only when their volume-weighted
    moments against those modes agree.  This symmetrically transfers half of
    each moment difference between the marginals and renormalizes the
    masses; for smooth profiles the perturbation is at the level of their
    (tiny) top-frequency content.
    """
    m0 = np.asarray(m0, dtype=float).copy()
    m1 = np.asarray(m1, dtype=float).copy()
    modes = _space_null_modes(grid)[1:]
    if not modes:
        return m0, m1
    w = grid.cell_volume
    for _ in range(max_rounds):
        worst = 0.0
        for s in modes:
            denom = float(np.sum(s * s * w))
            a0 = float(np.sum(m0 * s * w)) / denom
            a1 = float(np.sum(m1 * s * w)) / denom
            mid = 0.5 * (a0 + a1)
            m0 += (mid - a0) * s
            m1 += (mid - a1) * s
            worst = max(worst, abs(a1 - a0))
        m0 = np.maximum(m0, 0.0)
        m1 = np.maximum(m1, 0.0)
        m0 /= integrate(m0, grid)
        m1 /= integrate(m1, grid)
        if worst < 1e-14:
            break
    return m0, m1


def spacetime_poisson(rhs, grid: Grid, weighted=False, tol=1e-10):
    """Solve the space-time problem (-d_tt - Lap_g) phi = rhs.

    Homogeneous Neumann in time (the rhs lives on the Nt interval
    midpoints), periodic in space, mean-zero gauge: components of the rhs
    in the kernel of the operator (space-time constants and, on even
    grids, the centered-stencil null modes) are removed by subtraction and
    the solution carries none of them.

    Flat metric: diagonalized by a cosine transform in time and a Fourier
    transform in space.  Conformal metric: preconditioned conjugate
    gradient with the flat solve as preconditioner; failure to reach
    ``tol`` within ``10 * n_unknowns`` iterations is an error.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (grid.n_time,) + grid.space_shape:
        raise ValueError(f"rhs shape {rhs.shape}, expected {(grid.n_time,) + grid.space_shape}")

    if grid.flat:
        kernel = _kernel_basis(grid)
        b = rhs.copy()
        for z in kernel:
            b -= z * (np.sum(b * z) / np.sum(z * z))
        return _spectral_solve(b, grid, weighted)
    return _pcg_solve(rhs, grid, weighted, tol)


def _pcg_solve(rhs, grid: Grid, weighted, tol):
    """PCG on the sqrt(g)-symmetrized operator, flat solve as preconditioner."""
    wroot = np.sqrt(grid.sqrt_g)       # omega^{1/2} with omega = sqrt(g)

    kernel = []
    for z in _kernel_basis(grid):
        psi = wroot * z
        for q in kernel:
            psi = psi - q * np.sum(psi * q)
        psi = psi / np.sqrt(np.sum(psi * psi))
        kernel.append(psi)

    def project(x):
        for q in kernel:
            x = x - q * np.sum(x * q)
        return x

    def op(psi):
        return project(wroot * _apply_operator(psi / wroot, grid, weighted))

    b = project(wroot * rhs)
    bnorm = np.sqrt(np.sum(b * b))
    if bnorm == 0:
        return np.zeros_like(rhs)
    x = np.zeros_like(b)
    res = b.copy()
    z = project(_spectral_solve(res, grid, weighted))
    p = z.copy()
    rz = np.sum(res * z)
    max_iter = 10 * rhs.size
    for _ in range(max_iter):
        Ap = op(p)
        alpha = rz / np.sum(p * Ap)
        x += alpha * p
        res -= alpha * Ap
        if np.sqrt(np.sum(res * res)) <= tol * bnorm:
            return x / wroot
        z = project(_spectral_solve(res, grid, weighted))
        rz_new = np.sum(res * z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ProxError(f"space-time CG did not reach {tol:g} in {max_iter} iterations")


# ---------------------------------------------------------------------------
# Continuity projections
# ---------------------------------------------------------------------------

def _residual(m_full, w_values, grid: Grid):
    return (m_full[1:] - m_full[:-1]) / grid.tau - divergence_g(w_values, grid)


def _spacetime_norm(field, grid: Grid):
    return float(np.sqrt(np.sum(field * field * grid.cell_volume) * grid.tau))


def _apply_correction(m_full, w_values, phi, grid: Grid):
    """Subtract the adjoint correction (B* phi) from a staggered pair."""
    tau = grid.tau
    m_new = m_full.copy()
    m_new[1:-1] -= (phi[:-1] - phi[1:]) / tau
    w_new = w_values - covariant_gradient(phi, grid)
    return m_new, w_new


def project_continuity(m: DensityPath, w: MomentumField, m0, m1, grid: Grid):
    """Volume-weighted projection onto the discrete continuity set.

    The affine set is { d_t m - div_g w = 0, m(0) = m0, m(T) = m1 }; the
    projection is computed from a single space-time solve for the
    constraint multiplier.  Idempotent, and the continuity residual after
    projection is at kernel level (zero for marginals whose centered-
    stencil null components agree).

    Returns the projected pair and the multiplier interpolated to time
    nodes as a potential increment.
    """
    m_full = m.values.copy()
    m_full[0] = m0
    m_full[-1] = m1
    r = _residual(m_full, w.values, grid)
    phi = spacetime_poisson(r, grid, weighted=False, tol=1e-12)
    m_new, w_new = _apply_correction(m_full, w.values, phi, grid)
    return (DensityPath(m_new, grid), MomentumField(w_new, grid),
            Potential(_midpoints_to_nodes(phi, grid), grid))


def _midpoints_to_nodes(field_mid, grid: Grid):
    """Interpolate an interval-midpoint time series to the Nt+1 nodes."""
    out = np.empty((grid.n_time + 1,) + field_mid.shape[1:])
    out[1:-1] = 0.5 * (field_mid[:-1] + field_mid[1:])
    out[0] = 1.5 * field_mid[0] - 0.5 * field_mid[1]
    out[-1] = 1.5 * field_mid[-1] - 0.5 * field_mid[-2]
    return out


_AV_BAND_CACHE = {}


def _interior_coupling_solve(rhs, n_time):
    """Solve the tridiagonal consensus coupling [1/4, 3/2, 1/4] in time."""
    n = n_time - 1
    key = n
    if key not in _AV_BAND_CACHE:
        ab = np.zeros((3, n))
        ab[0, 1:] = 0.25
        ab[1, :] = 1.5
        ab[2, :-1] = 0.25
        _AV_BAND_CACHE[key] = ab
    flat = rhs.reshape(n, -1)
    return solve_banded((1, 1), _AV_BAND_CACHE[key], flat).reshape(rhs.shape)


def _weighted_projection(qa, qb, qc, m0, m1, grid: Grid):
    """Constrained least-squares step of the splitting.

    Minimizes |Av m - qa|^2 + |w - qb|^2_g + |m_int - qc|^2 over the
    continuity set (endpoints pinned to the marginals).  Reduces to a
    candidate assembly, one weighted space-time solve for the multiplier,
    and the adjoint correction.  Returns (m_full, w, phi).
    """
    tau = grid.tau
    rhs_m = 0.5 * (qa[:-1] + qa[1:]) + qc
    rhs_m[0] -= 0.25 * m0
    rhs_m[-1] -= 0.25 * m1
    m_cand = np.empty((grid.n_time + 1,) + grid.space_shape)
    m_cand[0] = m0
    m_cand[-1] = m1
    m_cand[1:-1] = _interior_coupling_solve(rhs_m, grid.n_time)

    r = _residual(m_cand, qb, grid)
    phi = spacetime_poisson(r, grid, weighted=True)

    m_new = m_cand.copy()
    psi = (phi[:-1] - phi[1:]) / tau
    m_new[1:-1] -= _interior_coupling_solve(psi, grid.n_time)
    w_new = qb - covariant_gradient(phi, grid)
    return m_new, w_new, phi


# ---------------------------------------------------------------------------
# ADMM driver
# ---------------------------------------------------------------------------

def _objective(m_full, w_values, reference: ReferenceMeasure, eps, grid: Grid):
    """Fast vectorized evaluation of the discrete functional."""
    tau = grid.tau
    mbar = 0.5 * (m_full[:-1] + m_full[1:])
    wsq = metric_norm_sq(w_values, grid)
    dead = mbar <= 0
    if np.any(dead & (wsq > 0)):
        return np.inf
    kin = np.zeros_like(mbar)
    live = ~dead
    kin[live] = wsq[live] / (2.0 * mbar[live])
    total = tau * float(np.sum(kin * grid.cell_volume))
    if np.any(m_full < 0):
        return np.inf
    ent = np.zeros_like(m_full)
    pos = m_full > 0
    ent[pos] = m_full[pos] * (np.log(m_full[pos]) + np.broadcast_to(
        reference.potential_V, m_full.shape)[pos])
    weights = np.full(grid.n_time + 1, tau)
    weights[0] = weights[-1] = 0.5 * tau
    total += eps * float(np.sum(weights.reshape((-1,) + (1,) * grid.dim) * ent
                                * grid.cell_volume))
    return total


def _potential_from_multiplier(phi_scaled, m_full, w_values, reference, eps, grid: Grid):
    """Assemble node-based u from the constraint multiplier.

    Interval values are u_mid = -phi + eps t (the linear drift comes from
    the derivative of m log m).  Interior nodes average the neighbors; the
    endpoint traces follow a half-step of the Hamilton-Jacobi equation
    evaluated with the endpoint marginals, which makes the discrete
    duality identity exact at convergence.  The sign is fixed by the
    smaller HJ residual in L2(m), the gauge by int u(T) m1 = 0.
    """
    t_mid = grid.time_midpoints().reshape((-1,) + (1,) * grid.dim)
    mbar = 0.5 * (m_full[:-1] + m_full[1:])
    v = np.zeros_like(w_values)
    live = mbar > 1e-14
    v[live] = w_values[live] / mbar[live][:, None]
    vsq = metric_norm_sq(v, grid)
    V = reference.potential_V

    def assemble(sign):
        u_mid = sign * (-phi_scaled) + eps * t_mid
        u = np.empty((grid.n_time + 1,) + grid.space_shape)
        u[1:-1] = 0.5 * (u_mid[:-1] + u_mid[1:])
        with np.errstate(divide="ignore"):
            log_m0 = np.where(m_full[0] > 0, np.log(np.maximum(m_full[0], 1e-300)), -690.0)
            log_m1 = np.where(m_full[-1] > 0, np.log(np.maximum(m_full[-1], 1e-300)), -690.0)
        u[0] = u_mid[0] - 0.5 * grid.tau * (0.5 * vsq[0] - eps * (log_m0 + V))
        u[-1] = u_mid[-1] + 0.5 * grid.tau * (0.5 * vsq[-1] - eps * (log_m1 + V))
        return u

    def hj_score(u):
        res = _hj_residual(u, m_full, reference, eps, grid)
        weight = m_full[1:-1] * grid.cell_volume
        return float(np.sum(res ** 2 * weight))

    candidates = [assemble(+1.0), assemble(-1.0)]
    u = min(candidates, key=hj_score)
    u = u - integrate(u[-1] * m_full[-1], grid)
    return u


def _hj_residual(u, m_full, reference, eps, grid: Grid):
    """-d_t u + |grad u|^2 / 2 - eps (log m + V) at interior nodes."""
    du_dt = (u[2:] - u[:-2]) / (2.0 * grid.tau)
    gu = covariant_gradient(u[1:-1], grid)
    with np.errstate(divide="ignore"):
        logm = np.log(np.maximum(m_full[1:-1], 1e-300))
    return -du_dt + 0.5 * metric_norm_sq(gu, grid) - eps * (logm + reference.potential_V)


def _energy_profile(u, m_full, reference, eps, grid: Grid):
    """E(t_k) at interior nodes from node slices of (m, u)."""
    out = np.empty(grid.n_time - 1)
    for j in range(1, grid.n_time):
        gu = covariant_gradient(u[j], grid)
        kin = 0.5 * integrate(m_full[j] * metric_norm_sq(gu, grid), grid)
        out[j - 1] = kin - eps * relative_entropy(np.maximum(m_full[j], 0.0), reference, grid)
    return out


def solve_prox(m0, m1, reference: ReferenceMeasure, eps, grid: Grid,
               config: ProxConfig = None):
    """Minimize the discrete functional over continuity-feasible pairs.

    Returns ``(DensityPath, MomentumField, Potential, SolveReport)``.  The
    density path is the projected (feasible to machine precision) copy;
    the potential is the constraint multiplier, sign-fixed and shifted so
    that its terminal trace pairs to zero against ``m1``.

    Raises ``ValueError`` for marginals with zero cells (pre-smooth them
    or use the elliptic path) and ``ProxError`` when the iteration budget
    is exhausted, carrying the best iterate and the residual history.
    """
    config = (config or ProxConfig()).validate()
    m0 = np.asarray(m0, dtype=float)
    m1 = np.asarray(m1, dtype=float)
    for name, marg in (("m0", m0), ("m1", m1)):
        if marg.shape != grid.space_shape:
            raise ValueError(f"{name} shape {marg.shape} != {grid.space_shape}")
        if np.any(marg <= 0):
            raise ValueError(f"{name} has a zero cell; pre-smooth or use the elliptic solver")
        if abs(integrate(marg, grid) - 1.0) > 1e-8:
            raise ValueError(f"{name} mass deviates from 1 by more than 1e-8")
    if eps <= 0:
        raise ValueError("eps must be positive")

    t0 = time.perf_counter()
    r = config.penalty
    Nt = grid.n_time
    tau = grid.tau

    # init: linear interpolation of the marginals, zero momentum, projected
    frac = (np.arange(Nt + 1) / Nt).reshape((-1,) + (1,) * grid.dim)
    m_full = (1.0 - frac) * m0 + frac * m1
    w = np.zeros((Nt,) + grid.space_shape + (grid.dim,))
    phi0 = spacetime_poisson(_residual(m_full, w, grid), grid, weighted=False)
    m_full, w = _apply_correction(m_full, w, phi0, grid)

    a = 0.5 * (m_full[:-1] + m_full[1:])
    b = w.copy()
    c = np.maximum(m_full[1:-1], 1e-12)
    lam_a = np.zeros_like(a)
    lam_b = np.zeros_like(b)
    lam_c = np.zeros_like(c)

    sqrt_g = grid.sqrt_g
    V = reference.potential_V
    sigma = 1.0 / r
    res_history = []
    obj_history = []
    phi = None
    consensus = np.inf

    weight_scalar = grid.cell_volume * tau

    def consensus_norm(da, db, dc):
        tot = np.sum(da * da * weight_scalar)
        tot += np.sum(metric_norm_sq(db, grid) * weight_scalar)
        tot += np.sum(dc * dc * weight_scalar)
        return float(np.sqrt(tot))

    it = 0
    converged = False
    for it in range(1, config.max_outer_iterations + 1):
        # 1. pointwise prox on the centered copies
        pa = 0.5 * (m_full[:-1] + m_full[1:]) + lam_a / r
        pb = w + lam_b / r
        pc = m_full[1:-1] + lam_c / r

        pb_frame = pb * sqrt_g[..., None] if grid.dim == 1 else pb
        bsq = np.sum(pb_frame * pb_frame, axis=-1)
        a = _prox_root(pa, bsq, sigma, 0.0, 0.0, tol=config.prox_tolerance)
        scale = a / (a + sigma)
        b = pb * scale[..., None]
        c = _prox_root(pc, 0.0, sigma, eps, V, tol=config.prox_tolerance)

        # 2. weighted continuity projection of the staggered copy
        qa = a - lam_a / r
        qb = b - lam_b / r
        qc = c - lam_c / r
        m_full, w, phi = _weighted_projection(qa, qb, qc, m0, m1, grid)

        # 3. multiplier ascent on the consensus constraint
        da = 0.5 * (m_full[:-1] + m_full[1:]) - a
        db = w - b
        dc = m_full[1:-1] - c
        lam_a += r * da
        lam_b += r * db
        lam_c += r * dc

        consensus = consensus_norm(da, db, dc)
        res_history.append(consensus)
        obj = _objective(np.maximum(m_full, 0.0), w, reference, eps, grid)
        obj_history.append(obj)

        if it >= max(config.min_iterations, config.stagnation_window):
            stale = obj_history[-config.stagnation_window]
            if (consensus < config.constraint_tolerance
                    and np.isfinite(obj) and np.isfinite(stale)
                    and abs(obj - stale) <= config.objective_stagnation * (1.0 + abs(obj))):
                converged = True
                break

    res_history = np.asarray(res_history)
    obj_history = np.asarray(obj_history)
    if not converged:
        raise ProxError(
            f"no convergence in {config.max_outer_iterations} iterations "
            f"(consensus gap {consensus:.3e})",
            best=(m_full, w), history=res_history)

    u = _potential_from_multiplier(r * phi, m_full, w, reference, eps, grid)

    m_clip = np.maximum(m_full, 0.0)
    objective = _objective(m_clip, w, reference, eps, grid)
    cross = integrate(u[0] * m0, grid) - integrate(u[-1] * m1, grid)
    duality_gap = abs(cross - objective)
    energy = _energy_profile(u, m_clip, reference, eps, grid)
    drift = float(np.max(np.abs(energy - np.mean(energy)))) if energy.size else 0.0

    mbar = 0.5 * (m_full[:-1] + m_full[1:])
    v = np.zeros_like(w)
    live = mbar > 1e-14
    v[live] = w[live] / mbar[live][:, None]
    grad_u_mid = covariant_gradient(-r * phi, grid)
    vdisc = _spacetime_norm(np.sqrt(np.maximum(metric_norm_sq(v - grad_u_mid, grid), 0.0)
                                    * np.maximum(mbar, 0.0)), grid)

    final_res = _spacetime_norm(_residual(m_full, w, grid), grid)
    report = SolveReport(
        iterations=it,
        final_residual=final_res,
        consensus_gap=consensus,
        duality_gap=duality_gap,
        objective=objective,
        energy_drift=drift,
        wall_time=time.perf_counter() - t0,
        velocity_discrepancy=vdisc,
        residual_history=res_history,
        objective_history=obj_history,
        converged=converged,
    )
    return (DensityPath(m_full, grid), MomentumField(w, grid),
            Potential(u, grid), report)
