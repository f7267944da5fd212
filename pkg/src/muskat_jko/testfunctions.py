"""Compactly supported C^2 test functions with analytic derivatives.

The fixed dictionary has 12 entries: the polynomials ``1, x, x^2, (x-1)^2``
multiplied by a smooth plateau cutoff, and the bumps
``(1 - ((x-c)/r)^2)^3`` at 4 centers and 2 radii.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .transport1d import GridDensity, QuantileState

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


def _smoothstep(t):
    """Quintic ramp from 0 to 1, C^2 at both ends; returns (s, s', s'')."""
    t = np.clip(t, 0.0, 1.0)
    s = t**3 * (10 - 15 * t + 6 * t**2)
    ds = 30 * t**2 * (1 - t) ** 2
    d2s = 60 * t * (1 - t) * (1 - 2 * t)
    return s, ds, d2s


@dataclass(frozen=True)
class TestFunction:
    """``xi`` with first and second derivatives and a support interval."""

    __test__ = False  # not a pytest class

    name: str
    value: Callable
    d1: Callable
    d2: Callable
    support: tuple
    _sup: dict = field(default_factory=dict, compare=False, repr=False)

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))

    def _norms(self) -> dict:
        if not self._sup:
            x = np.linspace(self.support[0], self.support[1], 20001)
            self._sup.update(
                v=float(np.max(np.abs(self.value(x)))),
                d1=float(np.max(np.abs(self.d1(x)))),
                d2=float(np.max(np.abs(self.d2(x)))),
            )
        return self._sup

    @property
    def sup_d2(self) -> float:
        return self._norms()["d2"]

    @property
    def w2inf_norm(self) -> float:
        """``max(|xi|_inf, |xi'|_inf, |xi''|_inf)``."""
        n = self._norms()
        return max(n["v"], n["d1"], n["d2"])


def cutoff_polynomial(coeffs, half_width: float = 4.0, ramp: float = 2.0, name: str | None = None) -> TestFunction:
    """``p(x) chi(x)`` with ``chi = 1`` on ``[-L, L]`` and 0 outside ``[-L-w, L+w]``."""
    c = np.asarray(coeffs, dtype=float)
    p = np.polynomial.Polynomial(c)
    dp, d2p = p.deriv(1), p.deriv(2)
    L, w = float(half_width), float(ramp)

    def chi(x):
        s, ds, d2s = _smoothstep((np.abs(x) - L) / w)
        sgn = np.sign(x)
        return 1 - s, -sgn * ds / w, -d2s / w**2

    def value(x):
        return p(x) * chi(x)[0]

    def d1(x):
        k, dk, _ = chi(x)
        return dp(x) * k + p(x) * dk

    def d2(x):
        k, dk, d2k = chi(x)
        return d2p(x) * k + 2 * dp(x) * dk + p(x) * d2k

    label = name or "poly[" + ",".join(f"{v:g}" for v in c) + "]"
    return TestFunction(label, value, d1, d2, (-L - w, L + w))


def bump(center: float, radius: float) -> TestFunction:
    """``(1 - ((x - c)/r)^2)^3`` on ``|x - c| < r``, zero elsewhere."""
    c, r = float(center), float(radius)
    if not r > 0:
        raise ValueError("bump radius must be positive")

    def parts(x):
        z = (x - c) / r
        inside = np.abs(z) < 1
        q = np.where(inside, 1 - z * z, 0.0)
        return z, q

    def value(x):
        _, q = parts(x)
        return q**3

    def d1(x):
        z, q = parts(x)
        return -6 * z * q**2 / r

    def d2(x):
        z, q = parts(x)
        return (-6 * q**2 + 24 * z * z * q) / r**2

    return TestFunction(f"bump({c:g},{r:g})", value, d1, d2, (c - r, c + r))


def default_dictionary() -> list[TestFunction]:
    polys = [
        cutoff_polynomial([1.0], name="one"),
        cutoff_polynomial([0.0, 1.0], name="x"),
        cutoff_polynomial([0.0, 0.0, 1.0], name="x^2"),
        cutoff_polynomial([1.0, -2.0, 1.0], name="(x-1)^2"),
    ]
    bumps = [bump(c, r) for r in (1.0, 2.0) for c in (-1.5, -0.5, 0.5, 1.5)]
    return polys + bumps


def random_bumps(rng: np.random.Generator, k: int, center_range=(-2.0, 2.0), radius_range=(0.5, 2.5)) -> list[TestFunction]:
    return [bump(rng.uniform(*center_range), rng.uniform(*radius_range)) for _ in range(k)]


def integrate_against(xi: TestFunction, h: GridDensity | QuantileState) -> float:
    """``int xi h``: midpoint rule on grids, Gauss-Legendre per cell for particles."""
    if isinstance(h, GridDensity):
        return float(h.grid.dx * np.sum(h.values * xi(h.grid.centers)))
    b = h.breakpoints
    a0, a1 = b[:-1], b[1:]
    half = 0.5 * (a1 - a0)
    mid = 0.5 * (a1 + a0)
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    cell_int = half * (xi(nodes) @ _GL_WEIGHTS)
    return float(np.sum(h.cell_values * cell_int))
