"""Monte Carlo ensembles of stochastic NLS paths and their omega-moments."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .diagnostics import (LEDGER_COLUMNS, StrichartzPair, default_pair, ledger_rows,
                          mass_ledger_check, maximal_function_series, scattering_residual,
                          strichartz_time_norm)
from .flows import FlowError, FlowParams
from .grid import ComplexField, boundary_mass_fraction, gaussian, make_grid, normalized
from .record import RecordError, TrajectoryRecord, integrate
from .stochastic import NoiseSpec, SNLSStepper, brownian_generator, sample_path

log = logging.getLogger(__name__)

PATH_COLUMNS = ["path", "seed", "stream", "status", "mass_drift", "strichartz", "strichartz_late",
                "M0", "M0_sup", "scattering_residual_half", "cauchy_last", "boundary_mass"]
MOMENT_COLUMNS = ["mass_drift", "strichartz", "strichartz_late", "M0", "M0_sup",
                  "scattering_residual_half", "cauchy_last"]


def fmt(x) -> str:
    """17 significant digits, so that CSV output round-trips exactly."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.17g}"


def omega_moment(values, rho: float) -> float:
    """((1/P) sum v_i^rho)^(1/rho); rho = inf gives the max."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("omega_moment of an empty sample")
    if rho < 1:
        raise ValueError(f"rho must be >= 1, got {rho}")
    if np.any(v < 0):
        raise ValueError("omega_moment expects nonnegative values")
    if math.isinf(rho):
        return float(v.max())
    top = v.max()
    if top == 0:
        return 0.0
    return float(top * np.mean((v / top) ** rho) ** (1.0 / rho))


def moment_standard_error(values, rho: float) -> float:
    """Delta-method standard error of the finite-rho moment."""
    v = np.asarray(values, dtype=float)
    if v.size < 2 or math.isinf(rho):
        return math.inf if v.size < 2 else 0.0
    y = v**rho
    mean = y.mean()
    if mean == 0:
        return 0.0
    se_mean = y.std(ddof=1) / math.sqrt(v.size)
    return float(mean ** (1.0 / rho - 1.0) * se_mean / rho)


@dataclass(frozen=True)
class EnsembleSpec:
    d: int = 1
    L: float = 64.0
    N: int = 256
    dt: float = 1e-3
    horizon: float = 10.0
    checkpoints: tuple = ()
    v0: float = 1.0
    gamma: float = 0.1
    noise_width: float = 1.0
    data_l2: float = 1.0
    data_width: float = 1.0
    random_data: bool = False
    paths: int = 8
    master_seed: int = 0
    rhos: tuple = (1.5, 2.0, 4.0, math.inf)
    alpha: float | None = None
    beta: float | None = None
    maximal: bool = True
    maximal_dt: float | None = None
    window_horizons: tuple = ()
    workers: int = 1

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError("an ensemble needs at least one path")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        for r in self.rhos:
            if r < 1:
                raise ValueError(f"moment exponents must be >= 1, got {r}")

    @property
    def grid(self):
        return make_grid(self.d, self.L, self.N)

    @property
    def pair(self) -> StrichartzPair:
        base = default_pair(self.d)
        return StrichartzPair(self.alpha or base.q, self.beta or base.p)

    def checkpoint_times(self) -> list:
        if self.checkpoints:
            times = sorted(set(float(t) for t in self.checkpoints) | {self.horizon})
        else:
            times = [self.horizon * (i + 1) / 20 for i in range(20)]
        return [round(t / self.dt) * self.dt for t in times]

    def fingerprint(self) -> str:
        """Hash of everything that determines a path (worker count excluded)."""
        data = asdict(replace(self, workers=1))
        return hashlib.sha256(json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()[:16]


def initial_data(spec: EnsembleSpec, path_index: int) -> ComplexField:
    grid = spec.grid
    if not spec.random_data:
        return normalized(gaussian(grid, spec.data_width), spec.data_l2)
    rng = brownian_generator(spec.master_seed, 2**32 + path_index)
    shift = rng.uniform(-0.5, 0.5, size=grid.d) * spec.data_width
    u = gaussian(grid, spec.data_width, center=shift) * np.exp(1j * rng.uniform(0, 2 * np.pi))
    return normalized(u, spec.data_l2 * rng.uniform(0.5, 1.0))


def build_stepper(spec: EnsembleSpec, path_index: int, gamma: float | None = None) -> SNLSStepper:
    grid = spec.grid
    noise = NoiseSpec.gaussian(grid, spec.v0, spec.noise_width,
                               spec.gamma if gamma is None else gamma)
    path = sample_path(spec.master_seed, spec.dt, spec.horizon, stream=path_index)
    return SNLSStepper(FlowParams(grid, spec.dt), noise, path)


@dataclass
class PathResult:
    index: int
    row: dict
    series: dict = field(default_factory=dict)
    error: str | None = None
    complete: bool = True


def state_file(state_dir, index: int) -> Path:
    return Path(state_dir) / f"path_{index:05d}.trj"


def _simulate(spec: EnsembleSpec, index: int, state_dir=None, stop_at=None) -> TrajectoryRecord:
    stepper = build_stepper(spec, index)
    resume = None
    on_checkpoint = None
    if state_dir is not None:
        target = state_file(state_dir, index)
        if target.exists():
            resume = TrajectoryRecord.load(target)
            if resume.metadata.get("fingerprint") != spec.fingerprint():
                raise RecordError(f"{target}: written by a different experiment configuration")

        def on_checkpoint(rec):
            rec.metadata["fingerprint"] = spec.fingerprint()
            rec.metadata["next_step"] = rec.step_of(rec.times[-1])
            rec.save(target)

    if resume is not None and resume.complete:
        return resume
    rec = integrate(initial_data(spec, index), stepper, spec.horizon, spec.checkpoint_times(),
                    resume=resume, stop_at=stop_at, on_checkpoint=on_checkpoint,
                    convolution=spec.maximal)
    rec.metadata["fingerprint"] = spec.fingerprint()
    rec.metadata["next_step"] = rec.step_of(rec.times[-1])
    if state_dir is not None:
        rec.save(state_file(state_dir, index))
    return rec


def path_diagnostics(spec: EnsembleSpec, rec: TrajectoryRecord, index: int) -> PathResult:
    pair = spec.pair
    T = spec.horizon
    scat = scattering_residual(rec)
    half = int(np.argmin(np.abs(scat.times - T / 2)))
    row = {
        "path": index, "seed": spec.master_seed, "stream": index, "status": "ok",
        "mass_drift": mass_ledger_check(rec),
        "strichartz": strichartz_time_norm(rec, pair, (0.0, T)),
        "strichartz_late": strichartz_time_norm(rec, pair, (T / 2, T)),
        "scattering_residual_half": float(scat.residual[half]),
        "cauchy_last": float(scat.cauchy[-1]) if scat.cauchy.size else 0.0,
        "boundary_mass": boundary_mass_fraction(rec.field(len(rec.times) - 1)),
    }
    series = {"times": scat.times, "mass": np.asarray(rec.mass), "residual": scat.residual,
              "cauchy": scat.cauchy,
              "late": {T_w: strichartz_time_norm(rec, pair, (T_w / 2, T_w))
                       for T_w in spec.window_horizons}}
    if spec.maximal:
        M = maximal_function_series(rec, pair.p, dt=spec.maximal_dt)
        values = np.array([m.value for m in M])
        row["M0"] = float(values[-1])
        row["M0_sup"] = float(values.max())
        series["M0"] = values
    else:
        row["M0"] = row["M0_sup"] = float("nan")
    series["ledger"] = ledger_rows(rec, pair, series.get("M0"))
    return PathResult(index, row, series)


def run_path(spec: EnsembleSpec, index: int, state_dir=None, stop_at=None) -> PathResult:
    try:
        rec = _simulate(spec, index, state_dir, stop_at)
    except (FlowError, FloatingPointError) as exc:
        row = {c: float("nan") for c in PATH_COLUMNS}
        row.update(path=index, seed=spec.master_seed, stream=index, status="aborted")
        return PathResult(index, row, error=f"path {index} (seed {spec.master_seed}, stream {index}): {exc}")
    if not rec.complete:
        row = {c: float("nan") for c in PATH_COLUMNS}
        row.update(path=index, seed=spec.master_seed, stream=index, status="partial")
        return PathResult(index, row, complete=False)
    return path_diagnostics(spec, rec, index)


def _run_path_args(args):
    return run_path(*args)


@dataclass
class EnsembleReport:
    spec: EnsembleSpec
    paths: list
    moments: dict
    failures: list

    @property
    def rows(self) -> list:
        return [p.row for p in self.paths]

    @property
    def partial(self) -> bool:
        return bool(self.failures) or not all(p.complete for p in self.paths)

    def column(self, name: str) -> np.ndarray:
        return np.array([p.row[name] for p in self.paths if p.row["status"] == "ok"], dtype=float)

    def series(self, name: str) -> np.ndarray:
        return np.stack([p.series[name] for p in self.paths if p.row["status"] == "ok"])

    def ensemble_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PATH_COLUMNS)
        for row in self.rows:
            w.writerow([fmt(row[c]) for c in PATH_COLUMNS])
        return buf.getvalue()

    def moments_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        rhos = list(self.spec.rhos)
        w.writerow(["diagnostic"] + [f"rho={fmt(r)}" for r in rhos])
        for name in MOMENT_COLUMNS:
            w.writerow([name] + [fmt(self.moments[name][r]) for r in rhos])
        return buf.getvalue()

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ensemble.csv").write_text(self.ensemble_csv())
        (out / "moments.csv").write_text(self.moments_csv())
        ledgers = out / "ledgers"
        ledgers.mkdir(exist_ok=True)
        for p in self.paths:
            if "ledger" in p.series:
                (ledgers / f"path_{p.index:05d}.csv").write_text(ledger_csv(p.series["ledger"]))


def _moments(report_paths, spec) -> dict:
    ok = [p.row for p in report_paths if p.row["status"] == "ok"]
    moments = {}
    for name in MOMENT_COLUMNS:
        vals = np.array([r[name] for r in ok], dtype=float)
        moments[name] = {r: (omega_moment(vals, r) if vals.size and not np.isnan(vals).any()
                             else float("nan")) for r in spec.rhos}
    return moments


def run_ensemble(spec: EnsembleSpec, state_dir=None, stop_at=None, workers: int | None = None
                 ) -> EnsembleReport:
    """Run every path, gather diagnostics sorted by path index, form omega-moments.

    The result does not depend on the worker count: path i draws its noise
    from the stream keyed by (master_seed, i) and shares nothing with others.
    """
    workers = spec.workers if workers is None else workers
    if state_dir is not None:
        Path(state_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(spec, i, state_dir, stop_at) for i in range(spec.paths)]
    if workers <= 1 or spec.paths == 1:
        results = [_run_path_args(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_path_args, jobs))
    results.sort(key=lambda r: r.index)
    failures = [r.error for r in results if r.error]
    for msg in failures:
        log.error("path aborted: %s", msg)
    return EnsembleReport(spec, results, _moments(results, spec), failures)


@dataclass
class SweepRow:
    gamma: float
    horizon: float
    strichartz_moment: float
    strichartz_se: float
    mean_residual: float
    residual_se: float

    def as_list(self):
        return [fmt(self.gamma), fmt(self.horizon), fmt(self.strichartz_moment),
                fmt(self.strichartz_se), fmt(self.mean_residual), fmt(self.residual_se)]


SWEEP_COLUMNS = ["gamma", "horizon", "strichartz_moment", "strichartz_se", "mean_residual",
                 "residual_se"]


def gamma_sweep(base: EnsembleSpec, gammas, horizons, state_dir=None, stop_at=None,
                workers: int | None = None) -> list:
    """Windowed Strichartz moment over [T/2, T] and mean scattering residual per (gamma, T).

    One ensemble per gamma runs to max(horizons); all gammas share the Brownian
    streams.  The residual at T is measured against u+ = v(max(horizons)).
    """
    T_max = max(horizons)
    extra = set(base.checkpoints)
    for T in horizons:
        extra |= {T, T / 2}
    rows = []
    for gamma in gammas:
        spec = replace(base, gamma=float(gamma), horizon=T_max, checkpoints=tuple(sorted(extra)),
                       maximal=False, window_horizons=tuple(horizons))
        sub_state = None if state_dir is None else Path(state_dir) / f"gamma_{fmt(gamma)}"
        report = run_ensemble(spec, state_dir=sub_state, stop_at=stop_at, workers=workers)
        if report.partial:
            raise RuntimeError("; ".join(report.failures) or "sweep interrupted before completion")
        pair = spec.pair
        for T in horizons:
            norms, resid = [], []
            for p in report.paths:
                k = int(np.argmin(np.abs(p.series["times"] - T)))
                resid.append(p.series["residual"][k])
                norms.append(p.series["late"][T])
            norms = np.array(norms)
            resid = np.array(resid)
            rows.append(SweepRow(float(gamma), float(T), omega_moment(norms, pair.q),
                                 moment_standard_error(norms, pair.q), float(resid.mean()),
                                 float(resid.std(ddof=1) / math.sqrt(resid.size)) if resid.size > 1 else math.inf))
    return rows


def ledger_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LEDGER_COLUMNS)
    for row in rows:
        w.writerow([fmt(row[c]) for c in LEDGER_COLUMNS])
    return buf.getvalue()


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow(r.as_list())
    return buf.getvalue()
