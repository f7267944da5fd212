"""One JKO step in particle coordinates, the scheme driver and its certificates.

Each species is a :class:`QuantileState` of ``N`` particles.  In these
coordinates the squared W2 distance to the previous step is the diagonal
quadratic ``(1/N) sum (X_i - P_i)^2`` and the energy is an explicit function of
the gaps, so one step is a smooth finite-dimensional minimization over the
cone of strictly increasing positions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded
from scipy.optimize import lsq_linear

from . import functionals as fn
from .errors import NoConvergence, NonMonotone, NotAMinimizer, SizeMismatch
from .functionals import EnergyForm, PairState, PhysParams
from .records import Trajectory, make_record
from .testfunctions import TestFunction, integrate_against
from .transport1d import (
    Grid,
    GridDensity,
    QuantileState,
    cell_mass_weights,
    density_from_quantiles,
    heat_smooth,
    quantiles_from_density,
    wasserstein2_quantiles,
)

BARRIER_FLOOR = 1e-12


@dataclass(frozen=True)
class JkoParams:
    tau: float
    phys: PhysParams = PhysParams()
    N: int = 256
    grad_tol: float | None = None
    max_iter: int = 500
    barrier_mu0: float | None = None
    barrier_shrink: float = 0.1
    form: EnergyForm | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.N < 4:
            raise ValueError(f"N must be >= 4, got {self.N}")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not 0 < self.barrier_shrink < 1:
            raise ValueError("barrier_shrink must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @property
    def tol(self) -> float:
        return self.grad_tol if self.grad_tol is not None else 1e-9 * self.N

    @property
    def energy_form(self) -> EnergyForm:
        return self.form or EnergyForm.standard(self.phys)

    def slack(self, objective_value: float) -> float:
        """Tolerance granted to every optimality certificate."""
        return 10.0 * self.tol * (1.0 + abs(objective_value))


@dataclass
class MinimizeReport:
    iterations: int
    grad_norm: float
    objective: float
    stages: int
    converged: bool
    objective_prev: float = float("nan")
    history: list = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# objective in raw arrays


def _check_gaps(x: np.ndarray) -> np.ndarray:
    d = np.diff(x)
    if np.any(d <= 0):
        raise NonMonotone("particle gaps must be positive")
    return d


def _internal(x: np.ndarray, coef: float, with_grad: bool):
    """``coef * int f^2`` and its gradient; ``int f^2 = (1/N^2) sum w_i / gap_i``."""
    n = x.size
    d = _check_gaps(x)
    w = cell_mass_weights(n) * (coef / n**2)
    val = float(np.sum(w / d))
    if not with_grad:
        return val, None
    dd = -w / d**2  # derivative w.r.t. each gap
    g = np.zeros(n)
    g[1:] += dd
    g[:-1] -= dd
    return val, g


def _breakpoints(x: np.ndarray) -> np.ndarray:
    b = x.copy()
    b[0] = 1.5 * x[0] - 0.5 * x[1]
    b[-1] = 1.5 * x[-1] - 0.5 * x[-2]
    return b


def _overlap_and_grad(x: np.ndarray, y: np.ndarray, with_grad: bool, mid=None):
    """``int f g`` of the reconstructions and its gradient in ``x``.

    ``g`` at a breakpoint of ``f`` is read from the cell on its left, so
    coincident positions resolve towards the left cell.  ``mid = (i, j)``
    replaces that one-sided value at the breakpoints ``i`` of ``f`` by the
    average of the two ``g`` cells around breakpoint ``j`` of ``g``, which
    gives the centre of the subdifferential at a kink.
    """
    n = x.size
    bx, by = _breakpoints(x), _breakpoints(y)
    my = cell_mass_weights(y.size) / y.size
    Gy = np.concatenate(([0.0], np.cumsum(my)))
    rho_x = 1.0 / (n * np.diff(x))
    G_at = np.interp(bx, by, Gy)
    M = np.diff(G_at)
    val = float(np.sum(rho_x * M))
    if not with_grad:
        return val, None
    rho_y = 1.0 / (y.size * np.diff(y))
    k = np.searchsorted(by, bx, side="left") - 1
    inside = (k >= 0) & (k < rho_y.size)
    g_at = np.where(inside, rho_y[np.clip(k, 0, rho_y.size - 1)], 0.0)
    if mid is not None and len(mid[0]):
        rho_y_pad = np.concatenate(([0.0], rho_y, [0.0]))
        i, j = mid
        g_at[i] = 0.5 * (rho_y_pad[j] + rho_y_pad[j + 1])
    rho_pad = np.concatenate(([0.0], rho_x, [0.0]))
    gb = g_at * (rho_pad[:-1] - rho_pad[1:])
    return val, _breakpoint_pullback(gb, n, M, rho_x)


def _breakpoint_pullback(gb, n, M, rho_x):
    grad = gb.copy()
    grad[0] = 1.5 * gb[0]
    grad[1] -= 0.5 * gb[0]
    grad[-1] = 1.5 * gb[-1]
    grad[-2] -= 0.5 * gb[-1]
    dgap = -n * rho_x**2 * M
    grad[1:] += dgap
    grad[:-1] -= dgap
    return grad


def _breakpoint_row(i: int, n: int) -> dict:
    """Sparse derivative of breakpoint ``i`` with respect to the positions."""
    if i == 0:
        return {0: 1.5, 1: -0.5}
    if i == n - 1:
        return {n - 1: 1.5, n - 2: -0.5}
    return {i: 1.0}


@dataclass(frozen=True)
class Kink:
    """Coincidence of breakpoint ``i`` of ``f`` with breakpoint ``j`` of ``g``.

    Near it the cross term behaves like ``(jump/2) |b_i - b_j|``; ``jump > 0``
    is a convex kink, where a minimizer may sit.
    """

    i: int
    j: int
    gap: float
    jump: float


class StepProblem:
    """Objective of one JKO step, with ``y`` absent for a single species."""

    def __init__(self, prev_x, prev_y, tau: float, form: EnergyForm):
        self.px = np.asarray(prev_x, dtype=float)
        self.py = None if prev_y is None else np.asarray(prev_y, dtype=float)
        if self.py is not None and self.py.size != self.px.size:
            raise SizeMismatch("species must have the same particle count")
        self.n = self.px.size
        self.tau = float(tau)
        self.form = form

    @property
    def coupled(self) -> bool:
        return self.py is not None

    def split(self, z: np.ndarray):
        if self.coupled:
            return z[: self.n], z[self.n :]
        return z, None

    def join(self, x, y) -> np.ndarray:
        return np.concatenate((x, y)) if self.coupled else np.array(x, dtype=float)

    def value_grad(self, z: np.ndarray, with_grad: bool = True, kinks=()):
        """Objective and gradient; at the listed kinks the gradient is the
        centre of the subdifferential instead of the one-sided value."""
        x, y = self.split(z)
        fm = self.form
        n, tau = self.n, self.tau
        dx = x - self.px
        val = fm.w_f * float(dx @ dx) / (2 * n * tau)
        ix, gix = _internal(x, 0.5 * fm.a_ff, with_grad)
        val += ix
        if not self.coupled:
            if not with_grad:
                return val, None
            return val, fm.w_f * dx / (n * tau) + gix
        dy = y - self.py
        val += fm.w_g * float(dy @ dy) / (2 * n * tau)
        iy, giy = _internal(y, 0.5 * fm.a_gg, with_grad)
        val += iy
        ki = np.array([k.i for k in kinks], dtype=int)
        kj = np.array([k.j for k in kinks], dtype=int)
        cxy, gcx = _overlap_and_grad(x, y, with_grad, (ki, kj))
        cyx, gcy = _overlap_and_grad(y, x, with_grad, (kj, ki))
        val += fm.a_fg * 0.5 * (cxy + cyx)
        if not with_grad:
            return val, None
        gx = fm.w_f * dx / (n * tau) + gix + fm.a_fg * gcx
        gy = fm.w_g * dy / (n * tau) + giy + fm.a_fg * gcy
        return val, np.concatenate((gx, gy))

    def energy(self, z: np.ndarray) -> float:
        x, y = self.split(z)
        fm = self.form
        e = _internal(x, 0.5 * fm.a_ff, False)[0]
        if self.coupled:
            e += _internal(y, 0.5 * fm.a_gg, False)[0]
            e += fm.a_fg * 0.5 * (_overlap_and_grad(x, y, False)[0] + _overlap_and_grad(y, x, False)[0])
        return e

    # -- kinks of the cross term ------------------------------------------

    def convex_kinks(self, z: np.ndarray, radius: float) -> list[Kink]:
        """Convex kinks whose two breakpoints are closer than ``radius``."""
        if not self.coupled or self.form.a_fg == 0:
            return []
        x, y = self.split(z)
        bx, by = _breakpoints(x), _breakpoints(y)
        n = self.n
        j = np.clip(np.searchsorted(by, bx), 1, n - 1)
        j = np.where(np.abs(bx - by[j - 1]) <= np.abs(bx - by[j]), j - 1, j)
        u = bx - by[j]
        close = np.nonzero(np.abs(u) <= radius)[0]
        if close.size == 0:
            return []
        rx = np.concatenate(([0.0], 1.0 / (n * np.diff(x)), [0.0]))
        ry = np.concatenate(([0.0], 1.0 / (n * np.diff(y)), [0.0]))
        out = []
        for i in close:
            jj = int(j[i])
            jump = -self.form.a_fg * (rx[i] - rx[i + 1]) * (ry[jj] - ry[jj + 1])
            if jump > 0:
                out.append(Kink(int(i), jj, float(u[i]), float(jump)))
        return out

    def kink_rows(self, kinks) -> np.ndarray:
        """Dense ``(k, 2n)`` matrix of ``d(b_i - b_j)/dz`` for each kink."""
        A = np.zeros((len(kinks), 2 * self.n))
        for r, k in enumerate(kinks):
            for c, v in _breakpoint_row(k.i, self.n).items():
                A[r, c] += v
            for c, v in _breakpoint_row(k.j, self.n).items():
                A[r, self.n + c] -= v
        return A

    def refresh(self, z: np.ndarray, kinks) -> list[Kink]:
        """Recompute gaps and jumps of tracked kinks at ``z``."""
        if not kinks:
            return []
        x, y = self.split(z)
        bx, by = _breakpoints(x), _breakpoints(y)
        n = self.n
        rx = np.concatenate(([0.0], 1.0 / (n * np.diff(x)), [0.0]))
        ry = np.concatenate(([0.0], 1.0 / (n * np.diff(y)), [0.0]))
        out = []
        for k in kinks:
            jump = -self.form.a_fg * (rx[k.i] - rx[k.i + 1]) * (ry[k.j] - ry[k.j + 1])
            if jump > 0:
                out.append(Kink(k.i, k.j, float(bx[k.i] - by[k.j]), float(jump)))
        return out

    # -- model Hessian ----------------------------------------------------

    def _banded(self, x, w, coef, mu):
        n = x.size
        d = np.diff(x)
        h = 2.0 * coef * cell_mass_weights(n) / (n**2 * d**3) + mu / d**2
        diag = np.full(n, w / (n * self.tau))
        diag[:-1] += h
        diag[1:] += h
        ab = np.zeros((2, n))
        ab[0, 1:] = -h
        ab[1] = diag
        return ab

    def _hinv(self, z, mu, rhs):
        """Apply the inverse of the exact Hessian of the transport, internal
        and barrier terms (tridiagonal per species) to ``rhs`` (1-D or 2-D)."""
        x, y = self.split(z)
        fm = self.form
        n = self.n
        sx = solveh_banded(self._banded(x, fm.w_f, 0.5 * fm.a_ff, mu), rhs[:n], check_finite=False)
        if not self.coupled:
            return sx
        sy = solveh_banded(self._banded(y, fm.w_g, 0.5 * fm.a_gg, mu), rhs[n:], check_finite=False)
        return np.concatenate((sx, sy))

    def newton_direction(self, z, grad, mu, kinks=()):
        """Model Newton step; each listed kink is held closed (``b_i = b_j``).

        Returns the step and the multipliers of the kink constraints.
        """
        d0 = self._hinv(z, mu, -grad)
        if not kinks:
            return d0, np.zeros(0)
        A = self.kink_rows(kinks)
        u = np.array([k.gap for k in kinks])
        HA = self._hinv(z, mu, A.T)
        S = A @ HA
        lam = np.linalg.solve(S, A @ d0 + u)
        return d0 - HA @ lam, lam

    def stationarity(self, z, grad, kinks=(), windows=None) -> float:
        """Norm of the smallest element of the (windowed) subdifferential.

        ``grad`` must be centred at every listed kink.  A kink whose gap is
        within its window contributes the whole interval ``[-jump/2, jump/2]``
        along its row, the others their one-sided value.
        """
        if not kinks:
            return float(np.linalg.norm(grad))
        if windows is None:
            windows = [KINK_WINDOW] * len(kinks)
        g = grad.copy()
        closed = []
        for k, w in zip(kinks, windows):
            if abs(k.gap) <= w:
                closed.append(k)
            else:
                g += 0.5 * k.jump * np.sign(k.gap) * self.kink_rows([k])[0]
        if not closed:
            return float(np.linalg.norm(g))
        A = self.kink_rows(closed)
        half = np.array([0.5 * k.jump for k in closed])
        res = lsq_linear(A.T, -g, bounds=(-half, half), method="bvls", tol=1e-14)
        return float(np.linalg.norm(g + A.T @ res.x))

    def kink_windows(self, z, mu, kinks, tol) -> list[float]:
        """Gap below which treating a kink as closed perturbs the smooth
        gradient by at most ``0.1 tol``: ``0.1 tol / (local model curvature)``."""
        if not kinks:
            return []
        x, y = self.split(z)
        fm = self.form
        hx = self._banded(x, fm.w_f, 0.5 * fm.a_ff, mu)[1]
        hy = self._banded(y, fm.w_g, 0.5 * fm.a_gg, mu)[1]
        n = self.n
        out = []
        for k in kinks:
            cx = list(_breakpoint_row(k.i, n))
            cy = list(_breakpoint_row(k.j, n))
            h = max(float(np.max(hx[cx])), float(np.max(hy[cy])))
            out.append(max(KINK_WINDOW, 0.1 * tol / h))
        return out

    def kink_value(self, kinks) -> float:
        return float(sum(0.5 * k.jump * abs(k.gap) for k in kinks))

    def barrier(self, z, mu, with_grad=True):
        if mu == 0:
            return 0.0, (np.zeros_like(z) if with_grad else None)
        val = 0.0
        grads = []
        for part in self.split(z):
            if part is None:
                continue
            d = np.diff(part)
            val -= mu * float(np.sum(np.log(d)))
            if with_grad:
                g = np.zeros_like(part)
                g[1:] -= mu / d
                g[:-1] += mu / d
                grads.append(g)
        return val, (np.concatenate(grads) if with_grad else None)

    def max_feasible_step(self, z, step) -> float:
        amax = np.inf
        for part, dpart in zip(self.split(z), self.split(step)):
            if part is None:
                continue
            gap, dgap = np.diff(part), np.diff(dpart)
            neg = dgap < 0
            if np.any(neg):
                amax = min(amax, float(np.min(-gap[neg] / dgap[neg])))
        return amax


KINK_WINDOW = 1e-11


def _merge_kinks(*groups) -> list[Kink]:
    seen, out = set(), []
    for group in groups:
        for k in group:
            if (k.i, k.j) not in seen:
                seen.add((k.i, k.j))
                out.append(k)
    return out


def _minimize(problem: StepProblem, z0: np.ndarray, p: JkoParams, e_prev: float):
    """Barrier continuation with a kink-aware damped Newton inner loop.

    The cross term is only piecewise smooth in particle coordinates.  When
    progress stalls, convex kinks within reach of the last step are closed
    as linear constraints.  A kink is released again when its multiplier
    leaves the subdifferential interval; it then opens towards the side the
    multiplier selects.  Stationarity is the norm of the smallest element of
    the subdifferential.
    """
    tol = p.tol
    mu0 = p.barrier_mu0 if p.barrier_mu0 is not None else max(1e-6, p.tau * e_prev / problem.n)
    mus = []
    mu = mu0
    while mu >= BARRIER_FLOOR:
        mus.append(mu)
        mu *= p.barrier_shrink
    mus.append(0.0)

    z = z0.copy()
    history = []
    iters = 0
    stages = 0
    locked: list[Kink] = []
    gnorm = np.inf
    for k_stage, mu in enumerate(mus):
        stages += 1
        final = k_stage == len(mus) - 1
        stage_tol = tol if final else max(tol, mu)
        opened: dict = {}  # released kinks -> side they open towards
        seen_open: set = set()
        last_step = np.inf
        window_cap = max(KINK_WINDOW, 0.1 * stage_tol * p.tau * problem.n / max(problem.form.w_f, problem.form.w_g or 1.0))
        while iters < p.max_iter:
            locked = problem.refresh(z, locked)
            ties = problem.convex_kinks(z, KINK_WINDOW)
            near = problem.convex_kinks(z, window_cap)
            wins = problem.kink_windows(z, mu, near, stage_tol)
            near = [k for k, w in zip(near, wins) if abs(k.gap) <= w]
            for k in near:
                key = (k.i, k.j)
                if key not in opened:
                    continue
                if k.gap * opened[key] > 0:
                    seen_open.add(key)
                elif k.gap * opened[key] < 0 and key in seen_open:
                    # reached its open side, then crossed back: lockable again
                    del opened[key]
                    seen_open.discard(key)
            for k in _merge_kinks(ties, near):
                if (k.i, k.j) not in opened and all(k.i != o.i and k.j != o.j for o in locked):
                    locked.append(k)
            lock_keys = {(k.i, k.j) for k in locked}
            centred = _merge_kinks(locked, ties, near)
            f, g = problem.value_grad(z, kinks=centred)
            b, gb = problem.barrier(z, mu)
            phi, gphi = f + b, g + gb
            gnorm = problem.stationarity(z, gphi, centred, problem.kink_windows(z, mu, centred, stage_tol))
            history.append((mu, phi, gnorm, len(locked)))
            if gnorm <= stage_tol:
                break
            gdir = gphi.copy()
            for k in centred:
                if (k.i, k.j) not in lock_keys:
                    side = np.sign(k.gap) if k.gap != 0 else opened.get((k.i, k.j), 1.0)
                    gdir += side * 0.5 * k.jump * problem.kink_rows([k])[0]
            step, lam = problem.newton_direction(z, gdir, mu, locked)
            bad = [i for i, (kk, l) in enumerate(zip(locked, lam)) if abs(l) > 0.5 * kk.jump * (1 + 1e-9)]
            if bad:
                worst = max(bad, key=lambda i: abs(lam[i]) / locked[i].jump)
                kk = locked[worst]
                opened[(kk.i, kk.j)] = float(np.sign(lam[worst]))
                locked = [o for i, o in enumerate(locked) if i != worst]
                history.append((mu, phi, gnorm, len(locked)))
                if len(history) > 50 * p.max_iter:
                    break
                continue
            slope = float(gdir @ step) - problem.kink_value(locked)
            if slope >= 0:
                step, slope = -gdir, -float(gdir @ gdir)
            alpha = min(1.0, 0.95 * problem.max_feasible_step(z, step))
            accepted = False
            while alpha > 1e-14:
                zt = z + alpha * step
                try:
                    ft = problem.value_grad(zt, with_grad=False)[0]
                    bt = problem.barrier(zt, mu, with_grad=False)[0]
                except NonMonotone:
                    alpha *= 0.5
                    continue
                phit = ft + bt
                if phit <= phi + 1e-4 * alpha * slope:
                    accepted = True
                    break
                # below rounding level the value cannot certify descent
                if abs(alpha * slope) <= 1e-14 * (1.0 + abs(phi)) and phit <= phi + 4e-16 * (1.0 + abs(phi)):
                    tk = problem.convex_kinks(zt, window_cap)
                    ct = _merge_kinks(problem.refresh(zt, locked), tk)
                    gt = problem.value_grad(zt, kinks=ct)[1] + problem.barrier(zt, mu)[1]
                    wt = problem.kink_windows(zt, mu, ct, stage_tol)
                    if problem.stationarity(zt, gt, ct, wt) < gnorm and np.any(zt != z):
                        accepted = True
                        break
                alpha *= 0.5
            iters += 1
            if not accepted or alpha < 1.0:
                reach = max(4.0 * last_step, 4.0 * float(np.max(np.abs(step))) * alpha, KINK_WINDOW)
                fresh = [
                    kk for kk in problem.convex_kinks(z, reach)
                    if (kk.i, kk.j) not in opened and all(kk.i != o.i and kk.j != o.j for o in locked)
                ]
                if fresh:
                    locked = locked + fresh
                    continue
            if not accepted:
                break
            last_step = float(np.max(np.abs(alpha * step)))
            z = zt
        if iters >= p.max_iter:
            break
    return z, problem.value_grad(z, with_grad=False)[0], gnorm, iters, stages, history


def minimize_step(prev: PairState, p: JkoParams, start: PairState | None = None):
    """Approximate minimizer of the JKO functional seeded at ``prev``.

    Returns ``(state, report)``.  A particle state is required; ``report.converged``
    is false when the stationarity measure could not be brought below ``p.tol``.
    """
    if not prev.is_particles:
        raise TypeError("minimize_step needs a particle state; use quantiles_from_density first")
    if prev.f.n != p.N or prev.g.n != p.N:
        raise SizeMismatch(f"state has {prev.f.n}/{prev.g.n} particles, params expect {p.N}")
    problem = StepProblem(prev.f.positions, prev.g.positions, p.tau, p.energy_form)
    z_prev = problem.join(prev.f.positions, prev.g.positions)
    z0 = z_prev if start is None else problem.join(start.f.positions, start.g.positions)
    obj_prev = problem.value_grad(z_prev, False)[0]
    z, f, gnorm, iters, stages, history = _minimize(problem, z0, p, obj_prev)
    if f > obj_prev + 1e-12:
        # the seed itself is feasible; never return something worse
        z, f = z_prev, obj_prev
        gnorm = float(np.linalg.norm(problem.value_grad(z)[1]))
    x, y = problem.split(z)
    report = MinimizeReport(iters, gnorm, f, stages, gnorm <= p.tol, obj_prev, history)
    return PairState(QuantileState(x), QuantileState(y), prev.params), report


def minimize_single(prev: QuantileState, p: JkoParams, a_ff: float | None = None):
    """JKO step of the decoupled flow (``g = 0``): energy ``(a_ff/2) int f^2``.

    With ``a_ff = 1 + R`` this is the porous-medium limit of the system.
    """
    a = (1.0 + p.phys.R) if a_ff is None else a_ff
    form = EnergyForm(a, 0.0, 0.0, 1.0, 0.0)
    problem = StepProblem(prev.positions, None, p.tau, form)
    e_prev = problem.energy(prev.positions)
    z, f, gnorm, iters, stages, history = _minimize(problem, prev.positions.copy(), p, e_prev)
    report = MinimizeReport(iters, gnorm, f, stages, gnorm <= p.tol, e_prev, history)
    return QuantileState(z), report


def objective(x: QuantileState, y: QuantileState, prev_x: QuantileState, prev_y: QuantileState, p: JkoParams) -> float:
    _same_size(x, y, prev_x, prev_y)
    problem = StepProblem(prev_x.positions, prev_y.positions, p.tau, p.energy_form)
    return problem.value_grad(problem.join(x.positions, y.positions), False)[0]


def objective_gradient(x, y, prev_x, prev_y, p: JkoParams) -> tuple[np.ndarray, np.ndarray]:
    _same_size(x, y, prev_x, prev_y)
    problem = StepProblem(prev_x.positions, prev_y.positions, p.tau, p.energy_form)
    _, g = problem.value_grad(problem.join(x.positions, y.positions))
    return problem.split(g)


def _same_size(*states):
    sizes = {s.n for s in states}
    if len(sizes) != 1:
        raise SizeMismatch(f"particle counts differ: {sorted(sizes)}")


# ---------------------------------------------------------------------------
# scheme driver


def to_particles(state: PairState, n: int) -> PairState:
    if state.is_particles:
        return state
    return PairState(quantiles_from_density(state.f, n), quantiles_from_density(state.g, n), state.params)


def run_scheme(
    initial: PairState,
    p: JkoParams,
    T_final: float,
    grid: Grid,
    on_step=None,
) -> Trajectory:
    """Iterate :func:`minimize_step` for ``ceil(T_final / tau)`` steps.

    Raises :class:`NoConvergence` (carrying the step index) if a step fails.
    """
    state = to_particles(initial, p.N)
    traj = Trajectory("jko", grid, initial.params, tau=p.tau)
    traj.append(0.0, state, make_record(state, 0.0, grid))
    n_steps = int(math.ceil(T_final / p.tau - 1e-9)) if T_final > 0 else 0
    for n in range(1, n_steps + 1):
        new, report = minimize_step(state, p)
        if not report.converged:
            raise NoConvergence(
                f"step {n}: gradient norm {report.grad_norm:.3e} > {p.tol:.3e} after {report.iterations} iterations",
                step=n,
                report=report,
            )
        report.history = []
        t = n * p.tau
        traj.append(t, new, make_record(new, t, grid, prev=state, solver_report=report))
        if on_step is not None:
            on_step(n, new, report)
        state = new
    return traj


# ---------------------------------------------------------------------------
# optimality certificates


@dataclass(frozen=True)
class ELResidual:
    residual_f: float
    bound_f: float
    residual_g: float
    bound_g: float
    slack: float

    @property
    def ok(self) -> bool:
        return self.residual_f <= self.bound_f + self.slack and self.residual_g <= self.bound_g + self.slack


def euler_lagrange_residual(cur: PairState, prev: PairState, p: JkoParams, xi: TestFunction, grid: Grid) -> ELResidual:
    """Both sides of the approximate weak Euler-Lagrange relations of one step.

    ``residual_f = |(1/tau) int xi (f - f_prev) + int f ((1+R) f' + R g') xi'|``
    against ``bound_f = |xi''|_inf W2^2(f, f_prev) / (2 tau)``, and the
    ``g`` analogue with the ``R_mu`` factor.
    """
    R, Rm = p.phys.R, p.phys.R_mu
    tau = p.tau
    dfx = integrate_against(xi, cur.f) - integrate_against(xi, prev.f)
    dgx = integrate_against(xi, cur.g) - integrate_against(xi, prev.g)
    e = cur.smooth_on_grid(grid)
    dx = grid.dx
    xc = grid.centers
    f, g = e.f.values, e.g.values
    df, dg = np.gradient(f, dx), np.gradient(g, dx)
    dxi = xi.d1(xc)
    flux_f = dx * np.sum(f * ((1 + R) * df + R * dg) * dxi)
    flux_g = Rm * dx * np.sum(g * (df + dg) * dxi)
    w2f = _w2(cur.f, prev.f)
    w2g = _w2(cur.g, prev.g)
    res = ELResidual(
        residual_f=abs(dfx / tau + flux_f),
        bound_f=xi.sup_d2 * w2f**2 / (2 * tau),
        residual_g=abs(dgx / tau + flux_g),
        bound_g=xi.sup_d2 * w2g**2 / (2 * tau),
        slack=p.slack(objective_of(cur, prev, p)),
    )
    if res.residual_f > res.bound_f + 10 * res.slack or res.residual_g > res.bound_g + 10 * res.slack:
        warnings.warn(f"Euler-Lagrange residual exceeds its bound for {xi.name}", NotAMinimizer, stacklevel=2)
    return res


def _w2(a, b) -> float:
    if isinstance(a, QuantileState):
        return wasserstein2_quantiles(a, b)
    from .transport1d import wasserstein2

    return wasserstein2(a, b)


def objective_of(cur: PairState, prev: PairState, p: JkoParams) -> float:
    return objective(cur.f, cur.g, prev.f, prev.g, p)


@dataclass(frozen=True)
class FlowInterchangeReport:
    times: tuple
    objective_min: float
    objective_smoothed: tuple
    heat3_lhs: float
    heat3_rhs: float
    slack: float
    heat3_lhs_particles: float = float("nan")

    @property
    def interchange_ok(self) -> bool:
        return all(v >= self.objective_min - self.slack for v in self.objective_smoothed)

    @property
    def heat3_ok(self) -> bool:
        return self.heat3_lhs <= self.heat3_rhs + self.slack

    @property
    def ok(self) -> bool:
        return self.interchange_ok and self.heat3_ok


def particle_entropy_dissipation(cur: PairState, p: JkoParams) -> float:
    """Particle-coordinate counterpart of ``|f'|^2 + R |(f+g)'|^2``.

    ``N (<grad H_f, grad_x E> / w_f + (R/R_mu) <grad H_g, grad_y E> / w_g)``,
    the pairing of the discrete entropy and energy gradients.  For a
    stationary step, convexity of the particle entropy in the gaps gives
    ``tau * this <= H(prev) - H(cur)`` up to the stationarity error.
    """
    fm = p.energy_form
    n = cur.f.n
    energy_only = EnergyForm(fm.a_ff, fm.a_fg, fm.a_gg, 0.0, 0.0)
    problem = StepProblem(cur.f.positions, cur.g.positions, 1.0, energy_only)
    _, gE = problem.value_grad(problem.join(cur.f.positions, cur.g.positions))
    hf = _entropy_gradient(cur.f.positions)
    hg = _entropy_gradient(cur.g.positions)
    return n * (hf @ gE[:n] / fm.w_f + p.phys.entropy_weight * (hg @ gE[n:]) / fm.w_g)


def _entropy_gradient(x: np.ndarray) -> np.ndarray:
    # H = sum (w_i/N) ln(1/(N gap_i))
    n = x.size
    dd = -(cell_mass_weights(n) / n) / np.diff(x)
    g = np.zeros(n)
    g[1:] += dd
    g[:-1] -= dd
    return g


def flow_interchange_check(cur: PairState, prev: PairState, p: JkoParams, times, grid: Grid, heat3_slack: float | None = None) -> FlowInterchangeReport:
    """Compare the step functional at the minimizer and at its heat-smoothed versions.

    The smoothed grid densities are brought back to ``N`` particles before the
    functional is evaluated.  Also evaluates the one-step entropy estimate
    ``tau (|f'|^2 + R |(f+g)'|^2) <= H(f_prev) - H(f) + (R/R_mu)(H(g_prev) - H(g))``
    with finite differences on the reconstructed grid densities, and its
    particle-coordinate counterpart :func:`particle_entropy_dissipation`.
    """
    F_min = objective_of(cur, prev, p)
    e = cur.on_grid(grid)
    vals = []
    for t in times:
        if t == 0:
            vals.append(F_min)
            continue
        fs, gs = heat_smooth(e.f, t), heat_smooth(e.g, t)
        qf = quantiles_from_density(fs.normalized(), p.N)
        qg = quantiles_from_density(gs.normalized(), p.N)
        vals.append(objective(qf, qg, prev.f, prev.g, p))
    lhs = p.tau * fn.entropy_dissipation_rate(cur, grid)
    rhs = fn.entropy_pair(prev) - fn.entropy_pair(cur)
    slack = p.slack(F_min)
    return FlowInterchangeReport(
        tuple(float(t) for t in times),
        F_min,
        tuple(vals),
        lhs,
        rhs,
        slack if heat3_slack is None else heat3_slack,
        p.tau * particle_entropy_dissipation(cur, p),
    )


def dissipation_certificates(cur: PairState, prev: PairState, p: JkoParams, grid: Grid):
    """``(lhs_f, rhs_f, lhs_g, rhs_g)`` with ``lhs_f = tau |sqrt(f) ((1+R)f + Rg)'|_2``,
    ``rhs_f = W2(f, f_prev)``, ``lhs_g = tau R_mu |sqrt(g)(f+g)'|_2``, ``rhs_g = W2(g, g_prev)``."""
    nf, ng = fn.weighted_pressure_norms(cur, grid)
    return (
        p.tau * nf,
        _w2(cur.f, prev.f),
        p.tau * p.phys.R_mu * ng,
        _w2(cur.g, prev.g),
    )
