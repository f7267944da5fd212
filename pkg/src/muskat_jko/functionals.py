"""Energy, entropy and dissipation functionals of the thin-film Muskat system.

Every functional accepts a :class:`PairState` in either representation.  Grid
states are evaluated by midpoint quadrature; particle states are evaluated
exactly on their piecewise-constant reconstruction (the Lagrangian path).
Derivative-based quantities always work on grid densities, so particle states
are first projected onto a grid supplied by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import NonAdmissible, ZeroMass
from .transport1d import (
    Grid,
    GridDensity,
    QuantileState,
    cell_mass_weights,
    density_from_quantiles,
    mass,
    nodal_density,
    second_moment,
)

TINY = 1e-300


@dataclass(frozen=True)
class PhysParams:
    """Density ratio ``R`` and viscosity-related ratio ``R_mu``, both > 0."""

    R: float = 1.0
    R_mu: float = 1.0

    def __post_init__(self):
        for name in ("R", "R_mu"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be > 0, got {v}")

    @property
    def entropy_weight(self) -> float:
        return self.R / self.R_mu


@dataclass(frozen=True)
class EnergyForm:
    """Quadratic energy and transport weights of one JKO step.

    The step functional is::

        (w_f W2^2(u, f_prev) + w_g W2^2(v, g_prev)) / (2 tau)
            + (a_ff |u|^2 + 2 a_fg <u, v> + a_gg |v|^2) / 2

    The unit-mass system uses ``a = [[1+R, R], [R, R]]``, ``w = (1, R/R_mu)``.
    """

    a_ff: float
    a_fg: float
    a_gg: float
    w_f: float
    w_g: float

    @classmethod
    def standard(cls, p: PhysParams) -> "EnergyForm":
        return cls(1.0 + p.R, p.R, p.R, 1.0, p.R / p.R_mu)

    @classmethod
    def rescaled(cls, p: PhysParams, mass_f: float, mass_g: float) -> "EnergyForm":
        """Form for unit-mass profiles ``F = f/|f|_1``, ``G = g/|g|_1``."""
        eta2 = mass_f / mass_g
        return cls((1.0 + p.R) * eta2, p.R, p.R / eta2, 1.0 / mass_g, p.R / (p.R_mu * mass_f))

    @property
    def is_positive_definite(self) -> bool:
        return self.a_ff > 0 and self.a_ff * self.a_gg - self.a_fg**2 > 0


@dataclass(frozen=True)
class PairState:
    """A pair ``(f, g)`` in one representation, with its physical parameters."""

    f: GridDensity | QuantileState
    g: GridDensity | QuantileState
    params: PhysParams

    def __post_init__(self):
        if type(self.f) is not type(self.g):
            raise TypeError("f and g must share a representation")
        if isinstance(self.f, GridDensity) and self.f.grid != self.g.grid:
            raise ValueError("f and g must live on the same grid")

    @property
    def is_particles(self) -> bool:
        return isinstance(self.f, QuantileState)

    def on_grid(self, grid: Grid | None = None) -> "PairState":
        if not self.is_particles:
            return self
        if grid is None:
            raise ValueError("a grid is required to reconstruct particle states")
        return PairState(
            density_from_quantiles(self.f, grid), density_from_quantiles(self.g, grid), self.params
        )

    def smooth_on_grid(self, grid: Grid | None = None) -> "PairState":
        """Grid values for derivative-based diagnostics.

        Particle states use the nodal piecewise-linear profile of
        :func:`nodal_density`; grid states are returned unchanged.
        """
        if not self.is_particles:
            return self
        if grid is None:
            raise ValueError("a grid is required to reconstruct particle states")
        return PairState(nodal_density(self.f, grid), nodal_density(self.g, grid), self.params)


def check_admissible(h: GridDensity | QuantileState, tol: float = 1e-8) -> None:
    if isinstance(h, QuantileState):
        return
    m = mass(h)
    if abs(m - 1.0) > tol:
        raise NonAdmissible(f"mass {m:.12g} is not 1")


# ---------------------------------------------------------------------------
# L2 pieces of the energy


def l2_squared(h: GridDensity | QuantileState) -> float:
    """``int h^2``; for particles ``(1/N^2) sum w_i / gap_i``."""
    if isinstance(h, QuantileState):
        n = h.n
        return float(np.sum(cell_mass_weights(n) / h.gaps) / n**2)
    return float(h.grid.dx * np.sum(h.values**2))


def cross_term(fq: QuantileState, gq: QuantileState) -> float:
    """``int f g`` of two particle reconstructions, exact.

    ``g`` is piecewise constant, so its CDF ``G`` is piecewise linear and
    ``int f g = sum_i f_i (G(b_{i+1}) - G(b_i))`` over the cells of ``f``.
    The result is symmetrized to remove rounding asymmetry.
    """
    return 0.5 * (_overlap(fq, gq) + _overlap(gq, fq))


def _overlap(a: QuantileState, b: QuantileState) -> float:
    bb = b.breakpoints
    Fb = np.concatenate(([0.0], np.cumsum(b.cell_masses)))
    G = np.interp(a.breakpoints, bb, Fb)
    return float(np.sum(a.cell_values * np.diff(G)))


def inner(f: GridDensity | QuantileState, g: GridDensity | QuantileState) -> float:
    if isinstance(f, QuantileState):
        return cross_term(f, g)
    return float(f.grid.dx * np.sum(f.values * g.values))


def quadratic_energy(f, g, form: EnergyForm) -> float:
    return 0.5 * (form.a_ff * l2_squared(f) + 2.0 * form.a_fg * inner(f, g) + form.a_gg * l2_squared(g))


def energy(s: PairState) -> float:
    """``(1/2) int [f^2 + R (f+g)^2]``."""
    return quadratic_energy(s.f, s.g, EnergyForm.standard(s.params))


# ---------------------------------------------------------------------------
# entropies


def entropy_single(h: GridDensity | QuantileState) -> float:
    """``H(h) = int h ln h`` with ``0 ln 0 = 0``."""
    if isinstance(h, QuantileState):
        return float(np.sum(h.cell_masses * np.log(h.cell_values)))
    v = h.values
    pos = v > TINY
    return float(h.grid.dx * np.sum(v[pos] * np.log(v[pos])))


def abs_entropy(h: GridDensity | QuantileState) -> float:
    """``int h |ln h|``."""
    if isinstance(h, QuantileState):
        return float(np.sum(h.cell_masses * np.abs(np.log(h.cell_values))))
    v = h.values
    pos = v > TINY
    return float(h.grid.dx * np.sum(v[pos] * np.abs(np.log(v[pos]))))


def entropy_pair(s: PairState) -> float:
    """``int [f ln f + (R/R_mu) g ln g]``."""
    return entropy_single(s.f) + s.params.entropy_weight * entropy_single(s.g)


@lru_cache(maxsize=None)
def c_ell() -> float:
    """``int exp(-(1+x^2)) (1+x^2) dx``, the constant in the entropy bounds."""
    val, _ = integrate.quad(lambda x: np.exp(-(1.0 + x * x)) * (1.0 + x * x), -np.inf, np.inf, epsabs=1e-14)
    return float(val)


def weighted_mass(h: GridDensity | QuantileState) -> float:
    """``int h (1 + x^2)``."""
    if isinstance(h, QuantileState):
        return 1.0 + second_moment_particles(h)
    return mass(h) + second_moment(h)


def second_moment_particles(q: QuantileState) -> float:
    """Exact second moment of the reconstructed density."""
    b = q.breakpoints
    return float(np.sum(q.cell_values * np.diff(b**3)) / 3.0)


def entropy_bounds(h: GridDensity | QuantileState) -> dict:
    """Both sides of the upper bound on ``int h|ln h|`` and the lower bound on ``H``."""
    c = c_ell()
    wm = weighted_mass(h)
    l2 = l2_squared(h)
    abs_h = abs_entropy(h)
    H = entropy_single(h)
    return {
        "abs_entropy": abs_h,
        "abs_bound": c + wm + l2,
        "abs_ok": abs_h <= c + wm + l2,
        "entropy": H,
        "entropy_lower": -c - wm,
        "entropy_ok": H >= -c - wm,
    }


# ---------------------------------------------------------------------------
# dissipation rates (grid, centered differences)
#
# Particle states are sampled through smooth_on_grid: finite differences of the
# piecewise-constant projection would see a jump wherever the particle spacing
# exceeds the grid spacing and overestimate every gradient norm.


def _derivative(h: GridDensity) -> np.ndarray:
    # np.gradient: centered inside, second-order one-sided at the array ends
    return np.gradient(h.values, h.grid.dx)


def energy_dissipation_rate(s: PairState, grid: Grid | None = None) -> float:
    """``int [f((1+R)f' + R g')^2 + R R_mu g (f' + g')^2]``."""
    e = s.smooth_on_grid(grid)
    R, Rm = e.params.R, e.params.R_mu
    f, g = e.f.values, e.g.values
    df, dg = _derivative(e.f), _derivative(e.g)
    integrand = f * ((1 + R) * df + R * dg) ** 2 + R * Rm * g * (df + dg) ** 2
    return float(e.f.grid.dx * np.sum(integrand))


def entropy_dissipation_rate(s: PairState, grid: Grid | None = None) -> float:
    """``int [|f'|^2 + R |f' + g'|^2]``."""
    e = s.smooth_on_grid(grid)
    df, dg = _derivative(e.f), _derivative(e.g)
    return float(e.f.grid.dx * np.sum(df**2 + e.params.R * (df + dg) ** 2))


def weighted_pressure_norms(s: PairState, grid: Grid | None = None) -> tuple[float, float]:
    """``(|sqrt(f) ((1+R)f + R g)'|_2, |sqrt(g) (f+g)'|_2)``."""
    e = s.smooth_on_grid(grid)
    R = e.params.R
    df, dg = _derivative(e.f), _derivative(e.g)
    dx = e.f.grid.dx
    nf = dx * np.sum(e.f.values * ((1 + R) * df + R * dg) ** 2)
    ng = dx * np.sum(e.g.values * (df + dg) ** 2)
    return float(np.sqrt(nf)), float(np.sqrt(ng))


# ---------------------------------------------------------------------------
# rescaling


@dataclass(frozen=True)
class Rescaling:
    mass_f: float
    mass_g: float
    eta2: float
    form: EnergyForm

    def restore(self, s: PairState, grid: Grid | None = None) -> tuple[GridDensity, GridDensity]:
        """Undo the mass normalization: ``f = |f_0|_1 F``, ``g = |g_0|_1 G``."""
        e = s.on_grid(grid)
        return e.f * self.mass_f, e.g * self.mass_g


def rescale_to_unit_mass(f_raw: GridDensity, g_raw: GridDensity, params: PhysParams):
    """Normalize both components to unit mass.

    Returns the unit-mass :class:`PairState` and a :class:`Rescaling` holding
    the masses, ``eta^2 = |f_0|_1 / |g_0|_1`` and the :class:`EnergyForm` the
    unit-mass scheme must use to reproduce the unscaled dynamics.
    """
    mf, mg = mass(f_raw), mass(g_raw)
    if not (mf > 0 and mg > 0):
        raise ZeroMass(f"both masses must be positive, got ({mf}, {mg})")
    state = PairState(GridDensity(f_raw.grid, f_raw.values / mf), GridDensity(g_raw.grid, g_raw.values / mg), params)
    return state, Rescaling(mf, mg, mf / mg, EnergyForm.rescaled(params, mf, mg))
