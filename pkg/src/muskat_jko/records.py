"""Per-snapshot diagnostics and trajectories shared by both solvers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from . import functionals as fn
from .functionals import PairState
from .transport1d import Grid, QuantileState, mass, second_moment, wasserstein2, wasserstein2_quantiles


@dataclass(frozen=True)
class DiagnosticsRecord:
    time: float
    mass_f: float
    mass_g: float
    energy: float
    entropy_pair: float
    second_moment_f: float
    second_moment_g: float
    w2_increment_f: float
    w2_increment_g: float
    energy_dissipation_rate: float
    entropy_dissipation_rate: float
    solver_report: Any = None

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "solver_report"]

    def row(self) -> list[float]:
        return [getattr(self, c) for c in self.columns()]

    def as_dict(self) -> dict:
        d = asdict(self)
        if self.solver_report is not None:
            d["solver_report"] = asdict(self.solver_report)
        return d


def make_record(
    state: PairState,
    time: float,
    grid: Grid,
    prev: PairState | None = None,
    solver_report=None,
) -> DiagnosticsRecord:
    """Evaluate every diagnostic quantity of one snapshot.

    Energies, entropies and moments of particle states are exact on their
    reconstruction; masses use the conservative grid projection and dissipation rates the
    smooth nodal profile.
    """
    e = state.on_grid(grid)
    if state.is_particles:
        m2f = fn.second_moment_particles(state.f)
        m2g = fn.second_moment_particles(state.g)
    else:
        m2f, m2g = second_moment(state.f), second_moment(state.g)
    if prev is None:
        w2f = w2g = 0.0
    elif state.is_particles:
        w2f = wasserstein2_quantiles(state.f, prev.f)
        w2g = wasserstein2_quantiles(state.g, prev.g)
    else:
        w2f, w2g = _safe_w2(state.f, prev.f), _safe_w2(state.g, prev.g)
    return DiagnosticsRecord(
        time=float(time),
        mass_f=mass(e.f),
        mass_g=mass(e.g),
        energy=fn.energy(state),
        entropy_pair=_safe_entropy(state),
        second_moment_f=m2f,
        second_moment_g=m2g,
        w2_increment_f=w2f,
        w2_increment_g=w2g,
        energy_dissipation_rate=fn.energy_dissipation_rate(state, grid),
        entropy_dissipation_rate=fn.entropy_dissipation_rate(state, grid),
        solver_report=solver_report,
    )


def _safe_w2(u, v) -> float:
    # W2 is only defined between unit masses; zero-mass channels report nan
    if abs(mass(u) - 1.0) > 1e-8 or abs(mass(v) - 1.0) > 1e-8:
        return float("nan")
    return wasserstein2(u.normalized(), v.normalized())


def _safe_entropy(state: PairState) -> float:
    return fn.entropy_pair(state)


@dataclass
class Trajectory:
    """Snapshots ``(t_n, state_n)`` with one diagnostics record per snapshot.

    JKO trajectories are piecewise constant in time: ``state_n`` holds on
    ``[t_n, t_{n+1})``.
    """

    kind: str
    grid: Grid
    params: fn.PhysParams
    times: list[float] = field(default_factory=list)
    states: list[PairState] = field(default_factory=list)
    records: list[DiagnosticsRecord] = field(default_factory=list)
    tau: float | None = None
    meta: dict = field(default_factory=dict)

    def append(self, t: float, state: PairState, record: DiagnosticsRecord) -> None:
        if self.times and not t > self.times[-1]:
            raise ValueError("snapshot times must be strictly increasing")
        self.times.append(float(t))
        self.states.append(state)
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.times)

    def grid_state(self, i: int) -> PairState:
        return self.states[i].on_grid(self.grid)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def is_particles(self) -> bool:
        return bool(self.states) and isinstance(self.states[0].f, QuantileState)
