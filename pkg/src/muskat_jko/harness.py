"""Machine-checkable versions of the scheme estimates and trajectory comparisons."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from . import functionals as fn
from .errors import DegenerateFit, NoOverlap
from .records import Trajectory
from .testfunctions import TestFunction, default_dictionary, integrate_against
from .transport1d import Grid, GridDensity, QuantileState, density_from_quantiles, wasserstein2


# ---------------------------------------------------------------------------
# time integration of dissipation columns


def _time_integral(traj: Trajectory, values: np.ndarray) -> np.ndarray:
    """Cumulative time integral of a per-snapshot quantity.

    JKO trajectories are piecewise constant, with ``state_n`` on
    ``((n-1) tau, n tau]``, so the integral up to ``t_n`` is
    ``sum_{k=1}^n tau_k v_k``.  FV snapshots use the trapezoidal rule.
    """
    t = np.asarray(traj.times)
    v = np.asarray(values, dtype=float)
    out = np.zeros_like(v)
    if v.size < 2:
        return out
    dt = np.diff(t)
    if traj.kind == "jko":
        out[1:] = np.cumsum(dt * v[1:])
    else:
        out[1:] = np.cumsum(0.5 * dt * (v[1:] + v[:-1]))
    return out


@dataclass
class TheoremReport:
    times: np.ndarray
    entropy_lhs: np.ndarray
    entropy_rhs: float
    energy_lhs: np.ndarray
    energy_rhs: float
    slack: float

    @property
    def entropy_ok(self) -> np.ndarray:
        return self.entropy_lhs <= self.entropy_rhs + self.slack

    @property
    def energy_ok(self) -> np.ndarray:
        return self.energy_lhs <= self.energy_rhs + self.slack

    @property
    def ok(self) -> bool:
        return bool(np.all(self.entropy_ok) and np.all(self.energy_ok))

    @property
    def worst_entropy_excess(self) -> float:
        return float(np.max(self.entropy_lhs - self.entropy_rhs))

    @property
    def worst_energy_excess(self) -> float:
        return float(np.max(self.energy_lhs - self.energy_rhs))

    def as_dict(self) -> dict:
        return {
            "entropy_ok": bool(np.all(self.entropy_ok)),
            "energy_ok": bool(np.all(self.energy_ok)),
            "worst_entropy_excess": self.worst_entropy_excess,
            "worst_energy_excess": self.worst_energy_excess,
            "slack": self.slack,
        }


def check_theorem_estimates(traj: Trajectory, slack: float = 0.0) -> TheoremReport:
    """Both global estimates at every snapshot.

    (a) ``H(T) + int_0^T [|f'|^2 + R |(f+g)'|^2] <= H(0)``
    (b) ``E(T) + (1/2) int_0^T [f ((1+R) f' + R g')^2 + R R_mu g (f'+g')^2] <= E(0)``
    """
    H = traj.column("entropy_pair")
    E = traj.column("energy")
    Ih = _time_integral(traj, traj.column("entropy_dissipation_rate"))
    Ie = _time_integral(traj, traj.column("energy_dissipation_rate"))
    return TheoremReport(np.asarray(traj.times), H + Ih, float(H[0]), E + 0.5 * Ie, float(E[0]), float(slack))


# ---------------------------------------------------------------------------
# the a priori estimates of the scheme


@dataclass
class SchemeEstimates:
    mass_drift: float
    w2_sum: float
    w2_bound: float
    energy_max_increase: float
    moment_constant: float
    moment_ratios: np.ndarray
    gradient_constant: float
    pressure_f: float
    pressure_g: float
    slack: float = 0.0

    @property
    def e1_ok(self) -> bool:
        return self.mass_drift <= 1e-10

    @property
    def e2_ok(self) -> bool:
        return self.w2_sum <= self.w2_bound + self.slack

    @property
    def e3_ok(self) -> bool:
        return self.energy_max_increase <= 1e-12 + self.slack

    @property
    def C1(self) -> float:
        return max(self.gradient_constant, self.pressure_f, self.pressure_g)

    def as_dict(self) -> dict:
        return {
            "e1_mass_drift": self.mass_drift,
            "e1_ok": self.e1_ok,
            "e2_w2_sum": self.w2_sum,
            "e2_bound": self.w2_bound,
            "e2_ok": self.e2_ok,
            "e3_energy_max_increase": self.energy_max_increase,
            "e3_ok": self.e3_ok,
            "e4_moment_constant": self.moment_constant,
            "e5_gradient_constant": self.gradient_constant,
            "e6_pressure_f": self.pressure_f,
            "e7_pressure_g": self.pressure_g,
            "C1": self.C1,
        }


def scheme_estimates(traj: Trajectory, slack: float = 0.0) -> SchemeEstimates:
    """Measured quantities of the seven a priori estimates of the scheme.

    ``e1`` mass conservation, ``e2`` summed squared W2 increments against
    ``2 E(0) tau``, ``e3`` energy monotonicity, ``e4`` the constant in
    ``int (f+g) x^2 <= C (1+t)``, ``e5`` the constant in the cumulative
    gradient bound ``int_tau^t (|f'|^2 + |g'|^2) <= C (1+t)``, and ``e6``/``e7``
    the time-integrated weighted pressure dissipations.
    """
    p = traj.params
    t = np.asarray(traj.times)
    mf, mg = traj.column("mass_f"), traj.column("mass_g")
    drift = float(max(np.max(np.abs(mf - mf[0])), np.max(np.abs(mg - mg[0]))))
    E = traj.column("energy")
    tau = traj.tau if traj.tau is not None else (float(np.max(np.diff(t))) if t.size > 1 else 0.0)
    w2 = traj.column("w2_increment_f") ** 2 + p.entropy_weight * traj.column("w2_increment_g") ** 2
    w2_sum = float(np.nansum(w2[1:]))
    rise = float(np.max(np.diff(E))) if E.size > 1 else 0.0
    m2 = traj.column("second_moment_f") + traj.column("second_moment_g")
    ratios = m2 / (1.0 + t)
    grad2 = np.zeros(t.size)
    pf = np.zeros(t.size)
    pg = np.zeros(t.size)
    for i in range(t.size):
        e = traj.states[i].smooth_on_grid(traj.grid)
        df = np.gradient(e.f.values, traj.grid.dx)
        dg = np.gradient(e.g.values, traj.grid.dx)
        grad2[i] = traj.grid.dx * np.sum(df**2 + dg**2)
        a, b = fn.weighted_pressure_norms(e)
        pf[i], pg[i] = a * a, b * b
    # the estimates start at the first step: drop the initial snapshot
    g_int = _time_integral(traj, np.where(np.arange(t.size) == 0, 0.0, grad2))
    c5 = float(np.max(g_int / (1.0 + t)))
    e6 = float(_time_integral(traj, pf)[-1]) if t.size > 1 else 0.0
    e7 = float(_time_integral(traj, pg)[-1]) if t.size > 1 else 0.0
    return SchemeEstimates(drift, w2_sum, 2.0 * float(E[0]) * tau, rise, float(np.max(ratios)), ratios, c5, e6, e7, slack)


# ---------------------------------------------------------------------------
# comparisons


@dataclass
class ComparisonReport:
    times: np.ndarray
    matched_times: np.ndarray
    offsets: np.ndarray
    l1: np.ndarray
    l2: np.ndarray
    w2: np.ndarray
    summary_l2: float
    summary: dict = field(default_factory=dict)

    def rows(self):
        for k in range(self.times.size):
            yield (self.times[k], self.matched_times[k], self.offsets[k], self.l1[k], self.l2[k], self.w2[k])


def _grid_pair(state, grid: Grid):
    if state.is_particles:
        return density_from_quantiles(state.f, grid), density_from_quantiles(state.g, grid)
    if state.f.grid == grid:
        return state.f, state.g
    return _regrid(state.f, grid), _regrid(state.g, grid)


def _regrid(u: GridDensity, grid: Grid) -> GridDensity:
    """Conservative transfer through the piecewise-linear CDF."""
    F = np.concatenate(([0.0], np.cumsum(u.values) * u.grid.dx))
    Fe = np.interp(grid.edges, u.grid.edges, F)
    return GridDensity(grid, np.maximum(np.diff(Fe), 0.0) / grid.dx)


def compare_trajectories(a: Trajectory, b: Trajectory, grid: Grid | None = None, with_w2: bool = True) -> ComparisonReport:
    """Distances between ``a`` and ``b`` at every snapshot time of ``a``.

    Each time of ``a`` inside the time range of ``b`` is matched to the
    nearest snapshot of ``b``; states are never interpolated in time.  The
    summary is the time-integrated L2 distance ``sqrt(int |d(t)|^2 dt)``.
    """
    grid = grid or a.grid
    ta, tb = np.asarray(a.times), np.asarray(b.times)
    if ta.size == 0 or tb.size == 0:
        raise NoOverlap("empty trajectory")
    lo, hi = max(ta[0], tb[0]), min(ta[-1], tb[-1])
    half = 0.5 * min(np.min(np.diff(ta)) if ta.size > 1 else np.inf, np.min(np.diff(tb)) if tb.size > 1 else np.inf)
    sel = np.nonzero((ta >= lo - 1e-12) & (ta <= hi + 1e-12))[0]
    if sel.size == 0 or hi < lo - (half if np.isfinite(half) else 0.0):
        raise NoOverlap(f"time ranges [{ta[0]}, {ta[-1]}] and [{tb[0]}, {tb[-1]}] do not overlap")
    times, matched, l1, l2, w2 = [], [], [], [], []
    for i in sel:
        j = int(np.argmin(np.abs(tb - ta[i])))
        fa, ga = _grid_pair(a.states[i], grid)
        fb, gb = _grid_pair(b.states[j], grid)
        df, dg = fa.values - fb.values, ga.values - gb.values
        times.append(ta[i])
        matched.append(tb[j])
        l1.append(grid.dx * float(np.sum(np.abs(df)) + np.sum(np.abs(dg))))
        l2.append(float(np.sqrt(grid.dx * (np.sum(df * df) + np.sum(dg * dg)))))
        if with_w2:
            w2.append(float(np.sqrt(_w2_or_nan(fa, fb) ** 2 + _w2_or_nan(ga, gb) ** 2)))
        else:
            w2.append(float("nan"))
    times, matched = np.asarray(times), np.asarray(matched)
    l2a = np.asarray(l2)
    summary = float(np.sqrt(trapezoid(l2a**2, times))) if times.size > 1 else float(l2a[0])
    return ComparisonReport(times, matched, matched - times, np.asarray(l1), l2a, np.asarray(w2), summary)


def _w2_or_nan(u: GridDensity, v: GridDensity) -> float:
    mu, mv = u.grid.dx * u.values.sum(), v.grid.dx * v.values.sum()
    if mu <= 0 or mv <= 0:
        return float("nan")
    return wasserstein2(u.normalized(), v.normalized())


def estimate_convergence_order(errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(resolution)``.

    ``errors`` is a sequence of ``(resolution, error)`` pairs, e.g. ``(tau, e)``;
    halving errors with halving ``tau`` give slope 1.
    """
    pts = np.asarray(list(errors), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise DegenerateFit("need at least 3 (resolution, error) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise DegenerateFit("resolutions and errors must be positive and finite")
    if np.ptp(np.log(pts[:, 0])) == 0:
        raise DegenerateFit("resolutions must not all coincide")
    slope, _ = np.polyfit(np.log(pts[:, 0]), np.log(pts[:, 1]), 1)
    return float(slope)


# ---------------------------------------------------------------------------
# time equicontinuity


def equicontinuity_surrogate(traj: Trajectory, dictionary: list[TestFunction] | None = None, tau: float | None = None) -> float:
    """Measured constant of the dual-norm time modulus.

    ``max |int (h(t) - h(s)) xi| / (|xi|_{W^{2,inf}} sqrt(|t - s| + tau))`` over
    snapshot pairs, dictionary entries and both species.
    """
    dictionary = dictionary or default_dictionary()
    if len(traj) < 2:
        return 0.0
    if tau is None:
        tau = traj.tau if traj.tau is not None else float(traj.meta.get("dt_max", 0.0))
    t = np.asarray(traj.times)
    scale = np.sqrt(np.abs(t[:, None] - t[None, :]) + tau)
    best = 0.0
    for xi in dictionary:
        norm = xi.w2inf_norm
        for comp in ("f", "g"):
            vals = np.array([integrate_against(xi, getattr(s, comp)) for s in traj.states])
            diff = np.abs(vals[:, None] - vals[None, :]) / (norm * scale)
            best = max(best, float(np.max(diff)))
    return best


# ---------------------------------------------------------------------------
# entropy bounds


def entropy_bound_report(states) -> dict:
    """Worst margins of the two entropy bounds over every component of ``states``."""
    worst_upper = np.inf
    worst_lower = np.inf
    c = fn.c_ell()
    for s in states:
        for h in (s.f, s.g):
            if isinstance(h, GridDensity) and h.grid.dx * h.values.sum() <= 0:
                continue
            b = fn.entropy_bounds(h)
            worst_upper = min(worst_upper, b["abs_bound"] - b["abs_entropy"])
            worst_lower = min(worst_lower, b["entropy"] - b["entropy_lower"])
    return {"C_ell": c, "upper_margin": float(worst_upper), "lower_margin": float(worst_lower),
            "ok": bool(worst_upper >= 0 and worst_lower >= 0)}


def is_particle_trajectory(traj: Trajectory) -> bool:
    return bool(traj.states) and isinstance(traj.states[0].f, QuantileState)
