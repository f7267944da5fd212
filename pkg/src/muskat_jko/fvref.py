"""Explicit finite-volume reference solver for the thin-film Muskat system.

Both equations are integrated in flux form::

    f_t = (f p_f')'      with p_f = (1+R) f + R g
    g_t = R_mu (g p_g')' with p_g = f + g

on a uniform grid with no-flux walls.  The interface mobility is the upwind
cell value selected by the sign of the pressure jump, which keeps the update
nonnegative under the step restriction ``dt <= dx^2 / (2 max pressure)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .errors import BoundaryLeak, CflViolation
from .functionals import PairState, PhysParams
from .records import Trajectory, make_record
from .testfunctions import TestFunction, integrate_against
from .transport1d import Grid, GridDensity

BOUNDARY_TOL = 1e-10


@dataclass(frozen=True)
class FvConfig:
    grid: Grid
    phys: PhysParams = PhysParams()
    cfl_safety: float = 0.45
    T_final: float = 1.0
    centered: bool = False

    def __post_init__(self):
        if not 0 < self.cfl_safety <= 1:
            raise ValueError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.T_final < 0:
            raise ValueError("T_final must be >= 0")


def max_diffusivity(f: np.ndarray, g: np.ndarray, phys: PhysParams) -> float:
    R, Rm = phys.R, phys.R_mu
    return float(max(np.max((1 + R) * f + R * g), np.max(Rm * (f + g))))


def stable_dt(s: PairState, c: FvConfig) -> float:
    """Largest step allowed by the CFL bound, times ``cfl_safety``."""
    D = max_diffusivity(s.f.values, s.g.values, c.phys)
    if D <= 0:
        return math.inf
    return c.cfl_safety * c.grid.dx**2 / (2.0 * D)


def _fluxes(h: np.ndarray, p: np.ndarray, dx: float, centered: bool) -> np.ndarray:
    dp = np.diff(p)
    if centered:
        mob = 0.5 * (h[1:] + h[:-1])
    else:
        mob = np.where(dp > 0, h[1:], h[:-1])
    return mob * dp / dx


def _divergence(F: np.ndarray, dx: float) -> np.ndarray:
    # no-flux walls: zero flux through both outer faces
    out = np.zeros(F.size + 1)
    out[:-1] += F
    out[1:] -= F
    return out / dx


def _update(f, g, dt, c: FvConfig):
    R, Rm = c.phys.R, c.phys.R_mu
    dx = c.grid.dx
    Ff = _fluxes(f, (1 + R) * f + R * g, dx, c.centered)
    Fg = _fluxes(g, f + g, dx, c.centered)
    fn_ = f + dt * _divergence(Ff, dx)
    gn_ = g + dt * Rm * _divergence(Fg, dx)
    clipped = 0
    for arr in (fn_, gn_):
        neg = arr < 0
        if np.any(neg):
            clipped += int(np.count_nonzero(neg))
            total = arr.sum()
            arr[neg] = 0.0
            arr *= total / arr.sum()
    return fn_, gn_, clipped


def fv_step(s: PairState, dt: float, c: FvConfig) -> PairState:
    """One explicit conservative step.

    Raises :class:`CflViolation` if ``dt`` exceeds the stability bound.
    """
    if s.is_particles:
        raise TypeError("fv_step needs grid densities")
    bound = stable_dt(s, c) / c.cfl_safety
    if dt > bound * (1 + 1e-12):
        raise CflViolation(f"dt = {dt:.3e} exceeds dx^2/(2 max diffusivity) = {bound:.3e}")
    f, g, _ = _update(s.f.values, s.g.values, dt, c)
    return PairState(GridDensity(c.grid, f), GridDensity(c.grid, g), s.params)


def fv_run(initial: PairState, c: FvConfig, snapshot_times=None) -> Trajectory:
    """Integrate to ``c.T_final`` recording a snapshot at each requested time.

    The time step is recomputed from the CFL bound at every step and clipped
    so that each snapshot time is hit exactly.  The initial state is always
    recorded.
    """
    if initial.is_particles:
        raise TypeError("fv_run needs grid densities")
    if initial.f.grid != c.grid:
        raise ValueError("initial data must live on the configuration grid")
    times = sorted({float(t) for t in (snapshot_times if snapshot_times is not None else [c.T_final])})
    times = [t for t in times if 0 < t <= c.T_final + 1e-14]
    traj = Trajectory("fv", c.grid, initial.params)
    traj.append(0.0, initial, make_record(initial, 0.0, c.grid))
    f, g = initial.f.values.copy(), initial.g.values.copy()
    prev = initial
    t = 0.0
    n_steps = 0
    clipped = 0
    dt_min, dt_max = math.inf, 0.0
    leak_warned = False
    dx = c.grid.dx
    for target in times:
        while t < target - 1e-14:
            D = max_diffusivity(f, g, c.phys)
            dt = c.cfl_safety * dx**2 / (2.0 * D) if D > 0 else target - t
            dt = min(dt, target - t)
            f, g, k = _update(f, g, dt, c)
            clipped += k
            t = target if target - t - dt < 1e-14 else t + dt
            n_steps += 1
            dt_min, dt_max = min(dt_min, dt), max(dt_max, dt)
        if not leak_warned and dx * max(f[0], f[-1], g[0], g[-1]) > BOUNDARY_TOL:
            warnings.warn("density reached the boundary cells of the truncated domain", BoundaryLeak, stacklevel=2)
            leak_warned = True
        state = PairState(GridDensity(c.grid, f.copy()), GridDensity(c.grid, g.copy()), initial.params)
        traj.append(target, state, make_record(state, target, c.grid, prev=prev))
        prev = state
    traj.meta.update(steps=n_steps, dt_min=dt_min if n_steps else 0.0, dt_max=dt_max, clipped_cells=clipped)
    return traj


def _nearest_index(traj: Trajectory, t: float) -> int:
    return int(np.argmin(np.abs(np.asarray(traj.times) - t)))


def weak_form_residual(traj: Trajectory, xi: TestFunction, t: float, s: float) -> tuple[float, float]:
    """Residuals of the time-integrated weak formulation between ``s`` and ``t``.

    ``res_f = |int f(t) xi - int f(s) xi + int_s^t int f ((1+R) f' + R g') xi'|``
    and the ``g`` analogue with the factor ``R_mu``; the time integral uses the
    trapezoidal rule over the recorded snapshots.
    """
    i, j = _nearest_index(traj, s), _nearest_index(traj, t)
    if i == j:
        return 0.0, 0.0
    sign = 1.0
    if i > j:
        i, j = j, i
        sign = -1.0
    R, Rm = traj.params.R, traj.params.R_mu
    grid = traj.grid
    xc = grid.centers
    dxi = xi.d1(xc)
    flux_f, flux_g = [], []
    for k in range(i, j + 1):
        e = traj.states[k].smooth_on_grid(grid)
        f, g = e.f.values, e.g.values
        df, dg = np.gradient(f, grid.dx), np.gradient(g, grid.dx)
        flux_f.append(grid.dx * np.sum(f * ((1 + R) * df + R * dg) * dxi))
        flux_g.append(Rm * grid.dx * np.sum(g * (df + dg) * dxi))
    ts = np.asarray(traj.times[i : j + 1])
    int_f, int_g = trapezoid(flux_f, ts), trapezoid(flux_g, ts)
    a, b = traj.states[i], traj.states[j]
    res_f = integrate_against(xi, b.f) - integrate_against(xi, a.f) + int_f
    res_g = integrate_against(xi, b.g) - integrate_against(xi, a.g) + int_g
    return abs(sign * res_f), abs(sign * res_g)


def barenblatt(t: float, x, diffusivity: float) -> np.ndarray:
    """Unit-mass self-similar solution of ``f_t = D (f f_x)_x``.

    With ``u(s, x) = s^{-1/3} (C - x^2 / (12 s^{2/3}))_+`` solving
    ``u_s = (u^2)_xx`` and ``C = (3 / (4 sqrt 12))^{2/3}``, the solution is
    ``f(t, x) = u(D t / 2, x)``.
    """
    if t <= 0:
        raise ValueError("the self-similar profile needs t > 0")
    s = 0.5 * diffusivity * t
    C = (3.0 / (4.0 * math.sqrt(12.0))) ** (2.0 / 3.0)
    x = np.asarray(x, dtype=float)
    return s ** (-1.0 / 3.0) * np.maximum(C - x * x / (12.0 * s ** (2.0 / 3.0)), 0.0)


def barenblatt_cell_averages(t: float, grid: Grid, diffusivity: float) -> GridDensity:
    """Exact cell averages of :func:`barenblatt` (its antiderivative is cubic)."""
    s = 0.5 * diffusivity * t
    C = (3.0 / (4.0 * math.sqrt(12.0))) ** (2.0 / 3.0)
    a = math.sqrt(12.0 * C) * s ** (1.0 / 3.0)
    e = np.clip(grid.edges, -a, a)
    k = 1.0 / (12.0 * s ** (2.0 / 3.0))
    F = s ** (-1.0 / 3.0) * (C * e - k * e**3 / 3.0)
    return GridDensity(grid, np.diff(F) / grid.dx)


def barenblatt_support(t: float, diffusivity: float) -> float:
    s = 0.5 * diffusivity * t
    C = (3.0 / (4.0 * math.sqrt(12.0))) ** (2.0 / 3.0)
    return math.sqrt(12.0 * C) * s ** (1.0 / 3.0)


def decoupled_state(f: GridDensity, params: PhysParams) -> PairState:
    """Pair with ``g = 0`` for the porous-medium limit (not a unit-mass pair)."""
    return PairState(f, GridDensity(f.grid, np.zeros(f.grid.n_cells)), params)


__all__ = [
    "FvConfig",
    "barenblatt",
    "barenblatt_cell_averages",
    "barenblatt_support",
    "decoupled_state",
    "fv_run",
    "fv_step",
    "max_diffusivity",
    "stable_dt",
    "weak_form_residual",
]
