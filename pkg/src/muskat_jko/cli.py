"""Command-line entry point.

Subcommands ``run-jko``, ``run-fv``, ``compare``, ``sweep`` and ``certify``
read a flat ``key = value`` configuration (or a JSON object with the same
keys), run the requested solvers and write ``snapshots.csv``,
``diagnostics.csv``, ``report.json`` and, when two solvers are compared,
``comparison.csv``.  The exit code is 0 exactly when every enabled
certificate passes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import functionals as fn
from .errors import MuskatError, NoConvergence, PresetOutOfDomain, SchemaError
from .fvref import FvConfig, fv_run
from .harness import (
    check_theorem_estimates,
    compare_trajectories,
    entropy_bound_report,
    equicontinuity_surrogate,
    estimate_convergence_order,
    scheme_estimates,
)
from .jko import JkoParams, dissipation_certificates, euler_lagrange_residual, flow_interchange_check, run_scheme
from .records import DiagnosticsRecord, Trajectory
from .testfunctions import default_dictionary
from .transport1d import Grid, GridDensity

MODES = ("jko", "fv", "compare", "sweep", "certify")
COMMANDS = {"run-jko": "jko", "run-fv": "fv", "compare": "compare", "sweep": "sweep", "certify": "certify"}
DEFAULT_OUT = "muskat_out"
ENV_OUT = "MUSKAT_JKO_OUT"
FLOAT_FMT = "%.17g"

# certificate tolerances
DISSIPATION_SLACK = 1e-4
THEOREM_SLACK_CAP = 1e-4
INTERCHANGE_TIMES = (1e-5, 1e-4, 1e-3)
N_SAMPLED_STEPS = 10
N_TEST_FUNCTIONS = 5


# ---------------------------------------------------------------------------
# initial-data presets


@dataclass(frozen=True)
class Preset:
    """``kind(args...)`` with ``kind`` in gaussian, uniform, bump, two_bump."""

    kind: str
    args: tuple

    ARITY = {"gaussian": 2, "uniform": 2, "bump": 2, "two_bump": 3}

    @classmethod
    def parse(cls, text: str) -> "Preset":
        m = re.fullmatch(r"\s*([a-z_]+)\s*\(([^()]*)\)\s*", str(text))
        if not m:
            raise ValueError(f"expected kind(a, b, ...), got {text!r}")
        kind = m.group(1)
        if kind not in cls.ARITY:
            raise ValueError(f"unknown preset {kind!r}; expected one of {', '.join(cls.ARITY)}")
        try:
            args = tuple(float(a) for a in m.group(2).split(",")) if m.group(2).strip() else ()
        except ValueError:
            raise ValueError(f"preset arguments must be numbers, got {m.group(2)!r}") from None
        if len(args) != cls.ARITY[kind]:
            raise ValueError(f"{kind} takes {cls.ARITY[kind]} arguments, got {len(args)}")
        if not all(math.isfinite(a) for a in args):
            raise ValueError("preset arguments must be finite")
        return cls(kind, args)

    def __str__(self) -> str:
        return f"{self.kind}(" + ",".join(f"{a:g}" for a in self.args) + ")"


def _bump_profile(x, center, width):
    z = (x - center) / width
    return np.where(np.abs(z) < 1, (1 - z * z) ** 2, 0.0)


def make_initial(preset: Preset | str, grid: Grid) -> GridDensity:
    """Unit-mass density on ``grid`` described by ``preset``.

    Smooth presets are sampled at cell centres and renormalized; ``uniform``
    uses exact cell overlaps.  Raises :class:`PresetOutOfDomain` if the
    support (for a Gaussian, seven standard deviations) leaves the grid or a
    width is not positive.
    """
    if isinstance(preset, str):
        preset = Preset.parse(preset)
    lo, hi = grid.x_min, grid.x_max
    a = preset.args

    def inside(left, right):
        if left < lo or right > hi:
            raise PresetOutOfDomain(f"{preset} has support [{left:g}, {right:g}] outside the grid [{lo:g}, {hi:g}]")

    if preset.kind == "gaussian":
        mean, sigma = a
        if not sigma > 0:
            raise PresetOutOfDomain(f"{preset}: sigma must be > 0")
        inside(mean - 7 * sigma, mean + 7 * sigma)
        values = np.exp(-0.5 * ((grid.centers - mean) / sigma) ** 2)
    elif preset.kind == "uniform":
        left, right = a
        if not right > left:
            raise PresetOutOfDomain(f"{preset}: need a < b")
        inside(left, right)
        e = grid.edges
        values = np.clip(np.minimum(e[1:], right) - np.maximum(e[:-1], left), 0.0, None) / grid.dx
    elif preset.kind == "bump":
        center, width = a
        if not width > 0:
            raise PresetOutOfDomain(f"{preset}: width must be > 0")
        inside(center - width, center + width)
        values = _bump_profile(grid.centers, center, width)
    else:
        c1, c2, width = a
        if not width > 0:
            raise PresetOutOfDomain(f"{preset}: width must be > 0")
        inside(min(c1, c2) - width, max(c1, c2) + width)
        values = _bump_profile(grid.centers, c1, width) + _bump_profile(grid.centers, c2, width)
    total = grid.dx * float(np.sum(values))
    if not total > 0:
        raise PresetOutOfDomain(f"{preset} is not resolved by the grid (dx = {grid.dx:g})")
    return GridDensity(grid, values / total)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; every field is a configuration key."""

    mode: str = "jko"
    R: float = 1.0
    R_mu: float = 1.0
    tau: float = 0.01
    N: int = 256
    x_min: float = -8.0
    x_max: float = 8.0
    n_cells: int = 1024
    T_final: float = 1.0
    f0: str = "gaussian(-0.5,1)"
    g0: str = "gaussian(0.5,1)"
    masses: tuple | None = None
    cfl_safety: float = 0.45
    snapshot_every: int = 10
    taus: tuple = (0.04, 0.02, 0.01, 0.005)
    seed: int = 0
    out: str | None = None

    @property
    def phys(self) -> fn.PhysParams:
        return fn.PhysParams(self.R, self.R_mu)

    @property
    def grid(self) -> Grid:
        return Grid.uniform(self.x_min, self.x_max, self.n_cells)

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d["masses"] = list(self.masses) if self.masses is not None else None
        d["taus"] = list(self.taus)
        return d


_FLOAT_KEYS = ("R", "R_mu", "tau", "x_min", "x_max", "T_final", "cfl_safety")
_INT_KEYS = ("N", "n_cells", "snapshot_every", "seed")
_POSITIVE = ("R", "R_mu", "tau")


def _as_float(v):
    if isinstance(v, bool):
        raise ValueError("expected a number")
    x = float(v)
    if not math.isfinite(x):
        raise ValueError("must be finite")
    return x


def _as_int(v):
    if isinstance(v, bool):
        raise ValueError("expected an integer")
    if isinstance(v, str):
        v = v.strip()
        if not re.fullmatch(r"[+-]?\d+", v):
            raise ValueError(f"expected an integer, got {v!r}")
        return int(v)
    if isinstance(v, float) and not v.is_integer():
        raise ValueError(f"expected an integer, got {v!r}")
    return int(v)


def _as_floats(v) -> tuple:
    items = v.split(",") if isinstance(v, str) else list(v)
    return tuple(_as_float(x) for x in items if not (isinstance(x, str) and not x.strip()))


def _read_flat(text: str) -> dict:
    out = {}
    for k, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError([(f"line {k}", f"expected key = value, got {line!r}")])
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _read_document(text: str) -> dict:
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError([("<document>", f"invalid JSON: {exc.msg} at line {exc.lineno}")]) from None
        if not isinstance(data, dict):
            raise SchemaError([("<document>", "JSON configuration must be an object")])
        return data
    return _read_flat(text)


def validate(raw: dict) -> RunConfig:
    """Build a :class:`RunConfig` from raw key/value pairs.

    All violations are collected and raised together as one :class:`SchemaError`.
    """
    known = {f.name for f in fields(RunConfig)}
    violations = []
    values = {}
    for key, v in raw.items():
        if key not in known:
            violations.append((key, "unknown key"))
            continue
        try:
            if key in _FLOAT_KEYS:
                values[key] = _as_float(v)
            elif key in _INT_KEYS:
                values[key] = _as_int(v)
            elif key in ("masses", "taus"):
                values[key] = None if v in (None, "", "none") else _as_floats(v)
            else:
                values[key] = None if v is None else str(v).strip()
        except (TypeError, ValueError) as exc:
            violations.append((key, str(exc)))
    cfg = RunConfig()
    merged = {**asdict(cfg), **values}
    for key in _POSITIVE:
        if key in values and not values[key] > 0:
            violations.append((key, "must be > 0"))
    if merged["mode"] not in MODES:
        violations.append(("mode", f"must be one of {', '.join(MODES)}"))
    if "N" in values and values["N"] < 4:
        violations.append(("N", "must be >= 4"))
    if "n_cells" in values and values["n_cells"] < 2:
        violations.append(("n_cells", "must be >= 2"))
    if "snapshot_every" in values and values["snapshot_every"] < 1:
        violations.append(("snapshot_every", "must be >= 1"))
    if "T_final" in values and values["T_final"] < 0:
        violations.append(("T_final", "must be >= 0"))
    if "cfl_safety" in values and not 0 < values["cfl_safety"] <= 1:
        violations.append(("cfl_safety", "must lie in (0, 1]"))
    if all(k not in dict(violations) for k in ("x_min", "x_max")) and not merged["x_max"] > merged["x_min"]:
        violations.append(("x_max", "must be > x_min"))
    for key in ("f0", "g0"):
        if key in values:
            try:
                Preset.parse(values[key])
            except ValueError as exc:
                violations.append((key, str(exc)))
    if values.get("masses") is not None:
        m = values["masses"]
        if len(m) != 2:
            violations.append(("masses", "expected two values: mass of f, mass of g"))
        elif not all(x > 0 for x in m):
            violations.append(("masses", "must be > 0"))
    if "taus" in values:
        t = values["taus"] or ()
        if len(t) < 3:
            violations.append(("taus", "need at least 3 step sizes"))
        elif not all(x > 0 for x in t):
            violations.append(("taus", "must be > 0"))
    bad = {k for k, _ in violations}
    if not bad & {"x_min", "x_max", "n_cells"}:
        grid = Grid.uniform(merged["x_min"], merged["x_max"], merged["n_cells"])
        for key in ("f0", "g0"):
            if key not in bad:
                try:
                    make_initial(merged[key], grid)
                except PresetOutOfDomain as exc:
                    violations.append((key, str(exc)))
    if violations:
        raise SchemaError(violations)
    return replace(cfg, **values)


def parse_config(text: str) -> RunConfig:
    """Parse a flat ``key = value`` document (or JSON object) into a :class:`RunConfig`."""
    return validate(_read_document(text))


def _parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise SchemaError([(item, "override must look like key=value")])
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunResult:
    """One solver run with its certificates and measured constants."""

    label: str
    trajectory: Trajectory
    certificates: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c["ok"] for c in self.certificates.values())


def initial_state(cfg: RunConfig):
    """Unit-mass initial pair, the raw pair and the optional rescaling."""
    grid = cfg.grid
    f, g = make_initial(cfg.f0, grid), make_initial(cfg.g0, grid)
    if cfg.masses is None:
        state = fn.PairState(f, g, cfg.phys)
        return state, state, None
    raw = fn.PairState(f * cfg.masses[0], g * cfg.masses[1], cfg.phys)
    state, rescaling = fn.rescale_to_unit_mass(raw.f, raw.g, cfg.phys)
    return state, raw, rescaling


def jko_params(cfg: RunConfig, rescaling=None, tau: float | None = None) -> JkoParams:
    form = rescaling.form if rescaling is not None else None
    return JkoParams(tau=cfg.tau if tau is None else tau, phys=cfg.phys, N=cfg.N, form=form)


def _summed_slack(traj: Trajectory, p: JkoParams) -> float:
    return float(sum(p.slack(r.solver_report.objective) for r in traj.records[1:] if r.solver_report is not None))


def _cert(ok, **values) -> dict:
    return {"ok": bool(ok), **values}


def _common_certificates(traj: Trajectory, slack: float, theorem_slack: float) -> tuple[dict, dict]:
    est = scheme_estimates(traj, slack=slack)
    thm = check_theorem_estimates(traj, slack=theorem_slack)
    ent = entropy_bound_report(traj.states)
    certs = {
        "e1_mass": _cert(est.e1_ok, mass_drift=est.mass_drift),
        "e2_w2_increments": _cert(est.e2_ok, w2_sum=est.w2_sum, bound=est.w2_bound),
        "e3_energy_monotone": _cert(est.e3_ok, max_increase=est.energy_max_increase, slack=slack),
        "theorem_a_entropy": _cert(bool(np.all(thm.entropy_ok)), worst_excess=thm.worst_entropy_excess, slack=theorem_slack),
        "theorem_b_energy": _cert(bool(np.all(thm.energy_ok)), worst_excess=thm.worst_energy_excess, slack=theorem_slack),
        "entropy_bounds": _cert(ent["ok"], upper_margin=ent["upper_margin"], lower_margin=ent["lower_margin"]),
    }
    constants = {
        "C1": est.C1,
        "C_ell": ent["C_ell"],
        "e4_moment_constant": est.moment_constant,
        "e5_gradient_constant": est.gradient_constant,
        "e6_pressure_f": est.pressure_f,
        "e7_pressure_g": est.pressure_g,
    }
    return certs, constants


def run_jko(cfg: RunConfig, tau: float | None = None) -> RunResult:
    state, _, rescaling = initial_state(cfg)
    p = jko_params(cfg, rescaling, tau)
    traj = run_scheme(state, p, cfg.T_final, cfg.grid)
    H0 = float(traj.records[0].entropy_pair)
    slack = _summed_slack(traj, p)
    certs, constants = _common_certificates(traj, slack, min(slack, THEOREM_SLACK_CAP * (1 + abs(H0))))
    info = {"tau": p.tau, "N": p.N, "steps": len(traj) - 1, "solver_slack": slack}
    if rescaling is not None:
        info.update(eta2=rescaling.eta2, mass_f=rescaling.mass_f, mass_g=rescaling.mass_g)
    return RunResult(f"jko_tau_{p.tau:g}", traj, certs, constants, info)


def _fv_times(cfg: RunConfig, dt: float) -> list[float]:
    n = int(math.ceil(cfg.T_final / dt - 1e-9))
    return [min(k * dt, cfg.T_final) for k in range(1, n + 1)]


def run_fv(cfg: RunConfig, record_dt: float | None = None) -> RunResult:
    """Finite-volume run on the raw (possibly non-unit mass) initial data.

    Records every ``record_dt`` (default ``tau``); monotonicity and the global estimates are granted
    a slack of ``dx^2`` per recorded interval.
    """
    _, raw, rescaling = initial_state(cfg)
    c = FvConfig(cfg.grid, cfg.phys, cfg.cfl_safety, cfg.T_final)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        traj = fv_run(raw, c, _fv_times(cfg, record_dt or cfg.tau))
    slack = cfg.grid.dx**2 * (len(traj) - 1)
    if rescaling is None:
        certs, constants = _common_certificates(traj, slack, slack)
    else:
        # the Lemma 3.1 and Theorem 1 checks are stated for unit masses
        est = scheme_estimates(traj)
        certs = {"e1_mass": _cert(est.e1_ok, mass_drift=est.mass_drift)}
        constants = {"C_ell": fn.c_ell()}
    info = {key: traj.meta[key] for key in sorted(traj.meta)}
    info["warnings"] = sorted({str(w.message) for w in caught})
    return RunResult("fv", traj, certs, constants, info)


def certify_jko(cfg: RunConfig) -> RunResult:
    """JKO run plus every optimality certificate on sampled steps."""
    result = run_jko(cfg)
    traj = result.trajectory
    state, _, rescaling = initial_state(cfg)
    p = jko_params(cfg, rescaling)
    grid = cfg.grid
    n_steps = len(traj) - 1
    if n_steps == 0:
        return result
    steps = sorted({int(s) for s in np.linspace(1, n_steps, min(N_SAMPLED_STEPS, n_steps))})
    rng = np.random.default_rng(cfg.seed)
    dictionary = default_dictionary()
    chosen = [dictionary[i] for i in sorted(rng.choice(len(dictionary), N_TEST_FUNCTIONS, replace=False))]
    el_worst, el_ok = -np.inf, True
    dis_worst = -np.inf
    inter_worst, inter_ok = -np.inf, True
    heat3_grid, heat3_particle = -np.inf, -np.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for n in steps:
            cur, prev = traj.states[n], traj.states[n - 1]
            for xi in chosen:
                r = euler_lagrange_residual(cur, prev, p, xi, grid)
                el_ok &= r.ok
                el_worst = max(el_worst, r.residual_f - r.bound_f - r.slack, r.residual_g - r.bound_g - r.slack)
            lf, rf, lg, rg = dissipation_certificates(cur, prev, p, grid)
            dis_worst = max(dis_worst, lf - rf, lg - rg)
            fi = flow_interchange_check(cur, prev, p, INTERCHANGE_TIMES, grid)
            inter_ok &= fi.interchange_ok
            inter_worst = max(inter_worst, max(fi.objective_min - v - fi.slack for v in fi.objective_smoothed))
            heat3_grid = max(heat3_grid, fi.heat3_lhs - fi.heat3_rhs)
            heat3_particle = max(heat3_particle, fi.heat3_lhs_particles - fi.heat3_rhs)
    c2 = equicontinuity_surrogate(traj, tau=p.tau)
    result.certificates.update(
        euler_lagrange=_cert(el_ok, worst_excess=el_worst, test_functions=[xi.name for xi in chosen]),
        dissipation=_cert(dis_worst <= DISSIPATION_SLACK, worst_excess=dis_worst, slack=DISSIPATION_SLACK),
        flow_interchange=_cert(inter_ok, worst_excess=inter_worst, times=list(INTERCHANGE_TIMES)),
        equicontinuity=_cert(math.isfinite(c2), C2=c2),
    )
    result.constants["C2"] = c2
    result.info.update(
        sampled_steps=steps,
        heat3_worst_step_excess_grid=heat3_grid,
        heat3_worst_step_excess_particles=heat3_particle,
    )
    return result


def _sweep_member(args):
    cfg, tau = args
    return run_jko(replace(cfg, mode="jko"), tau=tau)


def run_sweep(cfg: RunConfig, jobs: int = 1):
    """JKO runs over ``cfg.taus`` against one finite-volume reference."""
    reference = run_fv(cfg, record_dt=min(cfg.taus))
    tasks = [(cfg, t) for t in cfg.taus]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_sweep_member, tasks))
    else:
        runs = [_sweep_member(t) for t in tasks]
    reports = [compare_trajectories(r.trajectory, reference.trajectory, cfg.grid, with_w2=False) for r in runs]
    errors = [(t, rep.summary_l2) for t, rep in zip(cfg.taus, reports)]
    try:
        slope = estimate_convergence_order(errors)
    except MuskatError:
        slope = float("nan")
    return reference, runs, reports, errors, slope


# ---------------------------------------------------------------------------
# output


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return FLOAT_FMT % x


def _json_text(obj, indent: int = 0) -> str:
    """JSON with floats written to 17 significant digits and non-finite values as null."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return FLOAT_FMT % float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_json_text(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        return "[" + ", ".join(_json_text(v, indent + 1) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _snapshot_rows(traj: Trajectory, every: int, rescaling=None):
    grid = traj.grid
    x = grid.centers
    last = len(traj) - 1
    for i in range(len(traj)):
        if i % every and i != last:
            continue
        s = traj.states[i]
        if rescaling is not None and s.is_particles:
            f, g = rescaling.restore(s, grid)
        else:
            e = s.on_grid(grid)
            f, g = e.f, e.g
        for k in range(grid.n_cells):
            yield (traj.times[i], x[k], f.values[k], g.values[k])


def emit_outputs(result: RunResult | None, directory, cfg: RunConfig, extra: dict | None = None,
                 comparison=None, rescaling=None) -> dict:
    """Write the CSV files and ``report.json`` for one run; returns the report."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    traj = result.trajectory if result is not None else None
    _write_csv(
        out / "snapshots.csv",
        ["time", "x", "f", "g"],
        _snapshot_rows(traj, cfg.snapshot_every, rescaling) if traj is not None else [],
    )
    _write_csv(out / "diagnostics.csv", DiagnosticsRecord.columns(), [r.row() for r in traj.records] if traj is not None else [])
    if comparison is not None:
        _write_csv(
            out / "comparison.csv",
            ["time", "matched_time", "offset", "l1", "l2", "w2"],
            comparison.rows(),
        )
    report = {
        "version": __version__,
        "config": cfg.echo(),
        "certificates": result.certificates if result is not None else {},
        "constants": result.constants if result is not None else {},
        "info": result.info if result is not None else {},
        "ok": result.ok if result is not None else True,
    }
    if comparison is not None:
        report["comparison"] = {"summary_l2": comparison.summary_l2, "max_offset": float(np.max(np.abs(comparison.offsets)))}
    if extra:
        report.update(extra)
    (out / "report.json").write_text(_json_text(report) + "\n", encoding="utf-8")
    return report


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="muskat-jko", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="flat key = value file or JSON object")
        p.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./{DEFAULT_OUT})")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="repeatable")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweep")
    return parser


def load_config(args) -> RunConfig:
    raw = {}
    if args.config is not None:
        raw.update(_read_document(args.config.read_text(encoding="utf-8")))
    violations = []
    for item in args.override:
        try:
            k, v = _parse_override(item)
            raw[k] = v
        except SchemaError as exc:
            violations.extend(exc.violations)
    raw["mode"] = COMMANDS[args.command]
    try:
        cfg = validate(raw)
    except SchemaError as exc:
        raise SchemaError(violations + exc.violations) from None
    if violations:
        raise SchemaError(violations)
    return cfg


def output_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.out or os.environ.get(ENV_OUT) or DEFAULT_OUT)


def execute(cfg: RunConfig, out: Path, jobs: int = 1) -> bool:
    """Run ``cfg.mode`` and write its outputs under ``out``; True when all certificates pass."""
    _, _, rescaling = initial_state(cfg)
    if cfg.mode in ("jko", "certify"):
        result = certify_jko(cfg) if cfg.mode == "certify" else run_jko(cfg)
        return bool(emit_outputs(result, out, cfg, rescaling=rescaling)["ok"])
    if cfg.mode == "fv":
        return bool(emit_outputs(run_fv(cfg), out, cfg)["ok"])
    if cfg.mode == "compare":
        jko, fv = run_jko(cfg), run_fv(cfg)
        if rescaling is not None:
            restored = [fn.PairState(*rescaling.restore(s, cfg.grid), cfg.phys) for s in jko.trajectory.states]
            shadow = Trajectory("jko", cfg.grid, cfg.phys, list(jko.trajectory.times), restored,
                                list(jko.trajectory.records), jko.trajectory.tau)
        else:
            shadow = jko.trajectory
        comparison = compare_trajectories(shadow, fv.trajectory, cfg.grid, with_w2=rescaling is None)
        ok_jko = emit_outputs(jko, out / "jko", cfg, comparison=comparison, rescaling=rescaling)["ok"]
        ok_fv = emit_outputs(fv, out / "fv", cfg)["ok"]
        emit_outputs(None, out, cfg, comparison=comparison,
                     extra={"runs": {"jko": bool(ok_jko), "fv": bool(ok_fv)}, "ok": bool(ok_jko and ok_fv)})
        return bool(ok_jko and ok_fv)
    reference, runs, reports, errors, slope = run_sweep(cfg, jobs)
    ok = bool(emit_outputs(reference, out / "fv", cfg)["ok"])
    index = []
    for k, (run, rep) in enumerate(zip(runs, reports)):
        sub = out / f"run_{k:03d}"
        ok &= bool(emit_outputs(run, sub, cfg, comparison=rep, rescaling=rescaling)["ok"])
        index.append((k, run.info["tau"], rep.summary_l2))
    _write_csv(out / "sweep.csv", ["run", "tau", "summary_l2"], index)
    emit_outputs(None, out, cfg, extra={"errors": [list(e) for e in errors], "slope": slope, "ok": ok})
    return ok


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except SchemaError as exc:
        for key, reason in exc.violations:
            print(f"config error: {key}: {reason}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read configuration: {exc}", file=sys.stderr)
        return 2
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return 2
    out = output_dir(args, cfg)
    try:
        ok = execute(cfg, out, args.jobs)
    except NoConvergence as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return 3
    except MuskatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot write outputs: {exc}", file=sys.stderr)
        return 2
    print(f"{'PASS' if ok else 'FAIL'}: outputs in {out}")
    return 0 if ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
