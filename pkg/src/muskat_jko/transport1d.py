"""Exact one-dimensional optimal transport on piecewise-constant densities.

Two representations of a unit-mass density are used throughout:

* :class:`GridDensity` -- cell averages on a uniform grid (Eulerian);
* :class:`QuantileState` -- ``N`` increasing particle positions, the values of
  the quantile function at the levels ``s_i = (i - 1/2) / N`` (Lagrangian).

A :class:`QuantileState` is turned into a density by interpolating its quantile
function linearly between the nodes ``(s_i, X_i)`` and extrapolating linearly
to ``s = 0`` and ``s = 1``.  The resulting density is piecewise constant with
value ``1 / (N * (X_{i+1} - X_i))`` on each gap, the two end gaps being widened
by half a gap so that the total mass is exactly one.

All objects are immutable; every function here is pure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import convolve1d
from scipy.special import ndtr

from .errors import (
    DegenerateDensity,
    DomainOverflow,
    MassNotUnit,
    NegativeTime,
    NonAdmissible,
    NonMonotone,
    NonMonotoneMap,
    SizeMismatch,
)

MASS_TOL = 1e-10
PLATEAU_EPS = 1e-13


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform cell grid on ``[x_min, x_min + n_cells * dx]``."""

    x_min: float
    dx: float
    n_cells: int

    def __post_init__(self):
        if not (self.dx > 0 and np.isfinite(self.dx)):
            raise ValueError(f"dx must be > 0, got {self.dx}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ValueError(f"n_cells must be an integer >= 2, got {self.n_cells}")
        if not np.isfinite(self.x_min):
            raise ValueError("x_min must be finite")

    @classmethod
    def uniform(cls, x_min: float, x_max: float, n_cells: int) -> "Grid":
        return cls(float(x_min), (float(x_max) - float(x_min)) / n_cells, int(n_cells))

    @property
    def x_max(self) -> float:
        return self.x_min + self.n_cells * self.dx

    @property
    def edges(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_cells + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + self.dx * (np.arange(self.n_cells) + 0.5)

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.x_min, self.dx / factor, self.n_cells * factor)


@dataclass(frozen=True)
class GridDensity:
    """Nonnegative piecewise-constant density on a :class:`Grid`."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.grid.n_cells,):
            raise ValueError(f"expected {self.grid.n_cells} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonAdmissible("density values must be finite")
        if np.any(v < 0):
            raise NonAdmissible(f"density has negative values (min {v.min():.3e})")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> "GridDensity":
        """Sample ``fn`` at the cell centers."""
        return cls(grid, np.maximum(fn(grid.centers), 0.0))

    @property
    def mass(self) -> float:
        return mass(self)

    def normalized(self) -> "GridDensity":
        m = self.mass
        if m <= 0:
            raise NonAdmissible("cannot normalize a density with zero mass")
        return GridDensity(self.grid, self.values / m)

    def __mul__(self, c: float) -> "GridDensity":
        return GridDensity(self.grid, self.values * float(c))

    __rmul__ = __mul__


@dataclass(frozen=True)
class QuantileState:
    """Strictly increasing particle positions, each carrying mass ``1/N``."""

    positions: np.ndarray

    def __post_init__(self):
        x = _frozen(self.positions)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("need a 1-D array of at least two positions")
        if not np.all(np.isfinite(x)):
            raise NonMonotone("positions must be finite")
        if np.any(np.diff(x) <= 0):
            raise NonMonotone("positions must be strictly increasing")
        object.__setattr__(self, "positions", x)

    @property
    def n(self) -> int:
        return self.positions.size

    @property
    def levels(self) -> np.ndarray:
        return quantile_levels(self.n)

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.positions)

    @property
    def breakpoints(self) -> np.ndarray:
        """Cell boundaries of the reconstructed density (``N`` points)."""
        return reconstruction_breakpoints(self.positions)

    @property
    def cell_values(self) -> np.ndarray:
        """Density on each of the ``N - 1`` reconstruction cells."""
        return 1.0 / (self.n * self.gaps)

    @property
    def cell_masses(self) -> np.ndarray:
        return cell_mass_weights(self.n) / self.n

    def translated(self, a: float) -> "QuantileState":
        return QuantileState(self.positions + a)


def quantile_levels(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def cell_mass_weights(n: int) -> np.ndarray:
    """Mass of each reconstruction cell in units of ``1/N``.

    Interior gaps carry one particle mass; the two widened end gaps carry 3/2.
    For ``N = 2`` the single gap carries everything.
    """
    w = np.ones(n - 1)
    w[0] += 0.5
    w[-1] += 0.5
    return w


def reconstruction_breakpoints(x: np.ndarray) -> np.ndarray:
    b = np.array(x, dtype=float, copy=True)
    b[0] = x[0] - 0.5 * (x[1] - x[0])
    b[-1] = x[-1] + 0.5 * (x[-1] - x[-2])
    return b


# ---------------------------------------------------------------------------
# piecewise-linear functions


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous piecewise-linear function through ``(knots, values)``.

    Constant extension outside the knot range.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "knots", _frozen(self.knots))
        object.__setattr__(self, "values", _frozen(self.values))

    def __call__(self, x):
        return np.interp(x, self.knots, self.values)


def cdf(u: GridDensity) -> PiecewiseLinear:
    """Cumulative distribution function of a grid density."""
    F = np.concatenate(([0.0], np.cumsum(u.values) * u.grid.dx))
    return PiecewiseLinear(u.grid.edges, F)


def mass(u: GridDensity) -> float:
    return float(u.grid.dx * np.sum(u.values))


def second_moment(u: GridDensity) -> float:
    """Midpoint-rule second moment ``dx * sum(u_i * x_i**2)``."""
    x = u.grid.centers
    return float(u.grid.dx * np.sum(u.values * x * x))


def _check_unit_mass(u: GridDensity, tol: float = MASS_TOL) -> None:
    m = mass(u)
    if abs(m - 1.0) > tol:
        raise MassNotUnit(f"mass is {m!r}, expected 1 within {tol:g}")


# ---------------------------------------------------------------------------
# quantile functions


@dataclass(frozen=True)
class QuantileFunction:
    """Piecewise-linear, nondecreasing quantile function on ``[0, 1]``.

    Piece ``k`` covers ``[s[k], s[k+1]]`` and runs linearly from ``lo[k]`` to
    ``hi[k]``.  Jumps between pieces (``hi[k] < lo[k+1]``) correspond to
    zero-density gaps of the density.
    """

    s: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def piece_index(self, t: np.ndarray) -> np.ndarray:
        k = np.searchsorted(self.s, t, side="right") - 1
        return np.clip(k, 0, self.lo.size - 1)

    def evaluate_in_piece(self, k: np.ndarray, t: np.ndarray) -> np.ndarray:
        s0, s1 = self.s[k], self.s[k + 1]
        return self.lo[k] + (t - s0) / (s1 - s0) * (self.hi[k] - self.lo[k])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.evaluate_in_piece(self.piece_index(t), t)


def quantile_function(u: GridDensity | QuantileState) -> QuantileFunction:
    if isinstance(u, QuantileState):
        s = np.concatenate(([0.0], u.levels, [1.0]))
        b = u.breakpoints
        nodes = np.concatenate(([b[0]], u.positions, [b[-1]]))
        return QuantileFunction(s, nodes[:-1], nodes[1:])
    F = cdf(u).values
    F = F / F[-1]
    e = u.grid.edges
    keep = np.flatnonzero(np.diff(F) > 0)
    s = np.concatenate((F[keep], [1.0]))
    # consecutive kept cells share their boundary level, so s is the list of
    # piece starts followed by the final level
    return QuantileFunction(s, e[keep], e[keep + 1])


def _merged_pieces(qa: QuantileFunction, qb: QuantileFunction):
    s = np.union1d(qa.s, qb.s)
    s0, s1 = s[:-1], s[1:]
    ok = s1 > s0
    s0, s1 = s0[ok], s1[ok]
    mid = 0.5 * (s0 + s1)
    ka, kb = qa.piece_index(mid), qb.piece_index(mid)
    a0, a1 = qa.evaluate_in_piece(ka, s0), qa.evaluate_in_piece(ka, s1)
    b0, b1 = qb.evaluate_in_piece(kb, s0), qb.evaluate_in_piece(kb, s1)
    return s0, s1, a0, a1, b0, b1


def _w2_squared_pieces(qa: QuantileFunction, qb: QuantileFunction) -> float:
    s0, s1, a0, a1, b0, b1 = _merged_pieces(qa, qb)
    d0, d1 = a0 - b0, a1 - b1
    return float(np.sum((s1 - s0) * (d0 * d0 + d0 * d1 + d1 * d1)) / 3.0)


def quantiles_from_density(u: GridDensity, n: int, tol: float = MASS_TOL) -> QuantileState:
    """Particle positions solving ``F(X_i) = (i - 1/2) / n``.

    A level that lands on a zero-density plateau of ``F`` is mapped to the
    plateau midpoint and a :class:`DegenerateDensity` warning is issued.
    """
    _check_unit_mass(u, tol)
    F = cdf(u).values
    F = F / F[-1]
    e = u.grid.edges
    s = quantile_levels(n)
    m = F.size

    def invert(levels, side):
        j = np.clip(np.searchsorted(F, levels, side=side), 1, m - 1)
        f0, f1 = F[j - 1], F[j]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(f1 > f0, (levels - f0) / (f1 - f0), 1.0)
        return e[j - 1] + np.clip(frac, 0.0, 1.0) * u.grid.dx

    # a level within rounding of a flat stretch of F sits on a plateau; an
    # empty stretch spans at least one whole cell
    left = invert(s - PLATEAU_EPS, "left")
    right = invert(s + PLATEAU_EPS, "right")
    flat = right - left > 0.5 * u.grid.dx
    if np.any(flat):
        warnings.warn(
            f"{int(np.sum(flat))} quantile level(s) on a zero-density plateau; "
            "using plateau midpoints",
            DegenerateDensity,
            stacklevel=2,
        )
    x = np.where(flat, 0.5 * (left + right), invert(s, "left"))
    # rounding can create ties where the density is huge
    for i in range(1, n):
        if x[i] <= x[i - 1]:
            x[i] = np.nextafter(x[i - 1], np.inf)
    return QuantileState(x)


def density_from_quantiles(q: QuantileState, grid: Grid) -> GridDensity:
    """Conservative projection of the reconstructed density onto ``grid``."""
    b = q.breakpoints
    if b[0] < grid.x_min or b[-1] > grid.x_max:
        raise DomainOverflow(
            f"reconstruction support [{b[0]:.6g}, {b[-1]:.6g}] leaves the grid "
            f"[{grid.x_min:.6g}, {grid.x_max:.6g}]"
        )
    Fb = np.concatenate(([0.0], np.cumsum(q.cell_masses)))
    Fb[-1] = 1.0
    Fe = np.interp(grid.edges, b, Fb)
    Fe[0], Fe[-1] = 0.0, 1.0
    return GridDensity(grid, np.maximum(np.diff(Fe), 0.0) / grid.dx)


def nodal_density(q: QuantileState, grid: Grid) -> GridDensity:
    """Piecewise-linear density through the cell values, sampled at cell centres.

    Every piece of the piecewise-constant reconstruction contributes its value
    at its midpoint; the profile ramps linearly to zero at the outer
    breakpoints.  Unlike :func:`density_from_quantiles` this is not
    mass-exact.  It exists so that finite differences see the slope of the
    particle profile instead of the jumps of a staircase.
    """
    b = q.breakpoints
    if b[0] < grid.x_min or b[-1] > grid.x_max:
        raise DomainOverflow("reconstruction support leaves the grid")
    knots = np.concatenate(([b[0]], 0.5 * (b[:-1] + b[1:]), [b[-1]]))
    vals = np.concatenate(([0.0], q.cell_values, [0.0]))
    return GridDensity(grid, np.interp(grid.centers, knots, vals, left=0.0, right=0.0))


# ---------------------------------------------------------------------------
# Wasserstein distance


def wasserstein2(u: GridDensity | QuantileState, v: GridDensity | QuantileState) -> float:
    """Exact W2 distance between two unit-mass densities.

    The quantile functions of both arguments are piecewise linear; their knot
    sets are merged and the squared difference is integrated in closed form on
    every merged piece.
    """
    for w in (u, v):
        if isinstance(w, GridDensity):
            _check_unit_mass(w)
    w2 = _w2_squared_pieces(quantile_function(u), quantile_function(v))
    return float(np.sqrt(max(w2, 0.0)))


def wasserstein2_quantiles(x: QuantileState, y: QuantileState) -> float:
    """W2 between the particle measures ``(1/N) sum delta_{X_i}`` and ``(1/N) sum delta_{Y_i}``."""
    if x.n != y.n:
        raise SizeMismatch(f"particle counts differ: {x.n} vs {y.n}")
    d = x.positions - y.positions
    return float(np.sqrt(np.mean(d * d)))


# ---------------------------------------------------------------------------
# monotone maps and pushforwards


@dataclass(frozen=True)
class MonotoneMap:
    """Nondecreasing piecewise-linear map, linear on each ``[x_lo[k], x_hi[k]]``.

    Consecutive pieces may leave a gap in ``x`` (outside the source support) or
    jump upward in value (across a zero-density gap of the target).  Outside
    ``[x_lo[0], x_hi[-1]]`` the map is extended by constants.
    """

    x_lo: np.ndarray
    x_hi: np.ndarray
    t_lo: np.ndarray
    t_hi: np.ndarray
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("x_lo", "x_hi", "t_lo", "t_hi"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if np.any(self.x_hi < self.x_lo) or np.any(self.x_lo[1:] < self.x_hi[:-1]):
            raise ValueError("map pieces must be ordered and non-overlapping")

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], knots) -> "MonotoneMap":
        """Piecewise-linear interpolant of ``fn`` on ``knots``."""
        k = np.asarray(knots, dtype=float)
        t = np.asarray(fn(k), dtype=float)
        return cls(k[:-1], k[1:], t[:-1], t[1:])

    def is_monotone(self) -> bool:
        return bool(np.all(self.t_hi >= self.t_lo) and np.all(self.t_lo[1:] >= self.t_hi[:-1]))

    def _piece(self, x):
        return np.clip(np.searchsorted(self.x_lo, x, side="right") - 1, 0, self.x_lo.size - 1)

    def _in_piece(self, k, x):
        x0, x1 = self.x_lo[k], self.x_hi[k]
        width = x1 - x0
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(width > 0, (x - x0) / width, 1.0)
        return self.t_lo[k] + np.clip(frac, 0.0, 1.0) * (self.t_hi[k] - self.t_lo[k])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self._in_piece(self._piece(x), x)


def monotone_map(u: GridDensity, v: GridDensity) -> MonotoneMap:
    """Optimal (monotone) map ``T = V^{-1} o U`` pushing ``u`` to ``v``."""
    _check_unit_mass(u)
    _check_unit_mass(v)
    s0, s1, a0, a1, b0, b1 = _merged_pieces(quantile_function(u), quantile_function(v))
    # both quantile functions are nondecreasing; neighbouring pieces evaluated
    # from different cells can disagree in the last bit, so restore the order
    a = np.maximum.accumulate(np.column_stack((a0, a1)).ravel()).reshape(-1, 2)
    b = np.maximum.accumulate(np.column_stack((b0, b1)).ravel()).reshape(-1, 2)
    return MonotoneMap(a[:, 0], a[:, 1], b[:, 0], b[:, 1])


def transport_cost(u: GridDensity, T: MonotoneMap) -> float:
    """``int |x - T(x)|^2 u(x) dx``, exact for piecewise-linear ``T``."""
    x = np.union1d(u.grid.edges, np.concatenate((T.x_lo, T.x_hi)))
    x = x[(x >= u.grid.x_min) & (x <= u.grid.x_max)]
    x0, x1 = x[:-1], x[1:]
    mid = 0.5 * (x0 + x1)
    cell = np.clip(((mid - u.grid.x_min) // u.grid.dx).astype(int), 0, u.grid.n_cells - 1)
    dens = u.values[cell]
    k = T._piece(mid)
    d0 = x0 - T._in_piece(k, x0)
    d1 = x1 - T._in_piece(k, x1)
    return float(np.sum(dens * (x1 - x0) * (d0 * d0 + d0 * d1 + d1 * d1)) / 3.0)


def pushforward(u: GridDensity, T: MonotoneMap, grid: Grid | None = None) -> GridDensity:
    """Image measure ``T # u`` projected conservatively onto ``grid``.

    ``u`` is split on the union of its cells and the pieces of ``T``; on each
    sub-interval the density is constant and ``T`` linear, so the image is a
    uniform distribution of the sub-interval mass over ``[T(x0), T(x1)]``.
    """
    if not T.is_monotone():
        raise NonMonotoneMap("map values decrease somewhere")
    grid = grid or u.grid
    x = np.union1d(u.grid.edges, np.concatenate((T.x_lo, T.x_hi)))
    x = x[(x >= u.grid.x_min) & (x <= u.grid.x_max)]
    x0, x1 = x[:-1], x[1:]
    mid = 0.5 * (x0 + x1)
    cell = np.clip(((mid - u.grid.x_min) // u.grid.dx).astype(int), 0, u.grid.n_cells - 1)
    m = u.values[cell] * (x1 - x0)
    keep = m > 0
    x0, x1, mid, m = x0[keep], x1[keep], mid[keep], m[keep]
    k = T._piece(mid)
    a, b = T._in_piece(k, x0), T._in_piece(k, x1)
    if a.size and (a[0] < grid.x_min or b[-1] > grid.x_max):
        raise DomainOverflow("pushforward leaves the target grid")
    cum = np.concatenate(([0.0], np.cumsum(m)))
    e = grid.edges
    j = np.clip(np.searchsorted(a, e, side="right") - 1, 0, a.size - 1)
    width = b[j] - a[j]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(width > 0, (e - a[j]) / width, 1.0)
    frac = np.where(e < a[j], 0.0, np.clip(frac, 0.0, 1.0))
    Fe = cum[j] + m[j] * frac
    Fe[0] = 0.0
    Fe[-1] = cum[-1]
    return GridDensity(grid, np.maximum(np.diff(Fe), 0.0) / grid.dx)


# ---------------------------------------------------------------------------
# heat semigroup


def _second_antiderivative(z: np.ndarray, sigma: float) -> np.ndarray:
    """Second antiderivative of the N(0, sigma^2) density, vanishing at -inf."""
    r = z / sigma
    return z * ndtr(r) + sigma * np.exp(-0.5 * r * r) / np.sqrt(2.0 * np.pi)


def heat_kernel_weights(t: float, dx: float) -> np.ndarray:
    """Cell-to-cell weights of the heat semigroup ``G_t`` on cell averages.

    The weight for offset ``k`` is the exact fraction of mass of a uniform cell
    that the heat flow moves into the cell ``k`` positions away; the stencil
    is truncated at 8 standard deviations (plus one cell) and renormalized.
    """
    if t < 0:
        raise NegativeTime(f"t must be >= 0, got {t}")
    if t == 0:
        return np.ones(1)
    sigma = np.sqrt(2.0 * t)
    half = int(np.ceil(8.0 * sigma / dx)) + 1
    z = dx * np.arange(-half - 1, half + 2)
    P = _second_antiderivative(z, sigma)
    w = (P[2:] - 2.0 * P[1:-1] + P[:-2]) / dx
    w = np.maximum(w, 0.0)
    w = 0.5 * (w + w[::-1])
    return w / w.sum()


def heat_smooth(u: GridDensity, t: float) -> GridDensity:
    """Heat flow ``G_t u`` (kernel variance ``2t``) with no-flux ends."""
    w = heat_kernel_weights(t, u.grid.dx)
    if w.size == 1:
        return u
    if w.size > 2 * u.grid.n_cells:
        raise ValueError("smoothing time too large for the grid")
    v = convolve1d(u.values, w, mode="reflect")
    return GridDensity(u.grid, np.maximum(v, 0.0))
