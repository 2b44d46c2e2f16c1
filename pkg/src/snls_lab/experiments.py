"""Preset studies run by the command line tool.

Every preset writes its CSV products plus ``summary.txt`` into the output
directory and returns the list of invariant checks it evaluated.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .diagnostics import (burkholder_ratio, brownian_increments, dissipation_ledger_check,
                          duhamel_residual, ledger_rows)
from .ensemble import (EnsembleSpec, fmt, gamma_sweep, ledger_csv, run_ensemble, sweep_csv)
from .flows import DampedNLSStepper, DampingSpec, FlowError, FlowParams
from .grid import (boundary_mass_fraction, dispersive_decay_profile, free_propagate, gaussian,
                   make_grid, normalized)
from .record import RecordError, integrate
from .stochastic import NoiseSpec, SNLSStepper, sample_path

log = logging.getLogger(__name__)

BOUNDARY_WARNING = 1e-6


class ExperimentAborted(RuntimeError):
    pass


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class Outcome:
    checks: list
    warnings: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> str:
        lines = [c.line() for c in self.checks] + [f"WARN {w}" for w in self.warnings]
        lines.append(f"RESULT {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    return buf.getvalue()


def checkpoint_times(cfg: ExperimentConfig, extra=()) -> tuple:
    T, K = cfg["flow.horizon"], cfg["flow.checkpoints"]
    times = {T * (i + 1) / K for i in range(K)} | {t for t in extra if 0 < t <= T}
    return tuple(sorted(times))


def ensemble_spec(cfg: ExperimentConfig, workers: int, extra_checkpoints=()) -> EnsembleSpec:
    return EnsembleSpec(
        d=cfg["grid.d"], L=cfg["grid.L"], N=cfg["grid.N"], dt=cfg["flow.dt"],
        horizon=cfg["flow.horizon"], checkpoints=checkpoint_times(cfg, extra_checkpoints),
        v0=cfg["noise.v0"], gamma=cfg["noise.gamma"], noise_width=cfg["noise.width"],
        data_l2=cfg["data.l2"], data_width=cfg["data.width"], random_data=cfg["data.random"],
        paths=cfg["ensemble.paths"], master_seed=cfg["ensemble.seed"],
        rhos=tuple(cfg["ensemble.rho"]), alpha=cfg["strichartz.alpha"],
        beta=cfg["strichartz.beta"], maximal=cfg["maximal.enabled"],
        maximal_dt=cfg["maximal.dt"], workers=workers)


def _finish_ensemble(report, out: Path):
    if report.failures:
        raise ExperimentAborted("; ".join(report.failures))
    if report.partial:
        raise ExperimentAborted("run interrupted before completion; resume with --resume")
    report.write(out)


def _boundary_warnings(report) -> list:
    worst = float(np.nanmax(report.column("boundary_mass")))
    if worst > BOUNDARY_WARNING:
        return [f"boundary mass fraction {worst:.3e} exceeds {BOUNDARY_WARNING:g}; enlarge grid.L"]
    return []


def run_mass_check(cfg, out, workers, state_dir, stop_at) -> Outcome:
    spec = ensemble_spec(cfg, workers)
    report = run_ensemble(spec, state_dir=state_dir, stop_at=stop_at)
    _finish_ensemble(report, out)
    drift = float(report.column("mass_drift").max())
    return Outcome([Check("pathwise mass conservation", drift <= 1e-9,
                          f"max relative drift {drift:.3e} over {spec.paths} paths (bound 1e-9)")],
                   _boundary_warnings(report))


def run_scattering_study(cfg, out, workers, state_dir, stop_at) -> Outcome:
    early, start = cfg["scattering.early"], cfg["scattering.from"]
    # uniform checkpoints keep the Cauchy increments comparable; early is snapped to the grid
    spec = ensemble_spec(cfg, workers)
    report = run_ensemble(spec, state_dir=state_dir, stop_at=stop_at)
    _finish_ensemble(report, out)
    times = report.paths[0].series["times"]
    R = report.series("residual")
    C = report.series("cauchy")
    i_early = int(np.argmin(np.abs(times - early)))
    mean_r = R.mean(axis=0)
    ratio = mean_r[-1] / mean_r[i_early] if mean_r[i_early] > 0 else 0.0
    sel = times[:-1] >= start - 1e-12
    monotone = int(sum(bool(np.all(np.diff(c[sel]) < 0)) for c in C))
    need = math.ceil(7 * spec.paths / 8)
    rows = [(t, r, math.nan if k == len(times) - 1 else C[:, k].mean())
            for k, (t, r) in enumerate(zip(times, mean_r))]
    (out / "scattering.csv").write_text(_csv(["time", "mean_residual", "mean_cauchy"], rows))
    checks = [
        Check("scattering residual decay",
              ratio <= cfg["scattering.factor"],
              f"mean r(T={times[-1]:g}) / mean r(T={times[i_early]:g}) = {ratio:.4g} "
              f"(bound {cfg['scattering.factor']:g})"),
        Check("Cauchy increments decreasing",
              monotone >= need,
              f"{monotone} of {spec.paths} paths strictly decreasing for t_k >= {start:g} "
              f"(need {need})"),
    ]
    return Outcome(checks, _boundary_warnings(report))


def run_gamma_sweep(cfg, out, workers, state_dir, stop_at) -> Outcome:
    base = ensemble_spec(cfg, workers)
    rows = gamma_sweep(base, cfg["sweep.gammas"], cfg["sweep.horizons"], state_dir=state_dir,
                       stop_at=stop_at, workers=workers)
    (out / "sweep.csv").write_text(sweep_csv(rows))
    checks = []
    for T in cfg["sweep.horizons"]:
        at_T = sorted((r for r in rows if r.horizon == T and r.gamma > 0),
                      key=lambda r: -r.gamma)
        ok = True
        worst = 0.0
        for big, small in zip(at_T, at_T[1:]):
            slack = max(big.strichartz_se, small.strichartz_se)
            excess = big.strichartz_moment - small.strichartz_moment - slack
            worst = max(worst, excess)
            ok &= excess <= 0
        order = ", ".join(f"gamma={r.gamma:g}: {r.strichartz_moment:.6g}+-{r.strichartz_se:.2g}"
                          for r in at_T)
        checks.append(Check(f"Strichartz moment non-increasing in gamma at T={T:g}", ok, order))
    return Outcome(checks, [])


def run_dissipation_check(cfg, out, workers, state_dir, stop_at) -> Outcome:
    grid = make_grid(cfg["grid.d"], cfg["grid.L"], cfg["grid.N"])
    damping = DampingSpec.gaussian(grid, cfg["noise.v0"], cfg["noise.width"], cfg["noise.gamma"])
    u0 = normalized(gaussian(grid, cfg["data.width"]), cfg["data.l2"])
    T, dt = cfg["flow.horizon"], cfg["flow.dt"]
    cps = checkpoint_times(cfg)
    residuals, recs = [], []
    for step in (dt, dt / 2):
        rec = integrate(u0, DampedNLSStepper(FlowParams(grid, step), damping), T, cps)
        residuals.append(dissipation_ledger_check(rec))
        recs.append(rec)
    pair = ensemble_spec(cfg, 1).pair
    (out / "ledger.csv").write_text(ledger_csv(ledger_rows(recs[0], pair)))
    (out / "ledger_half.csv").write_text(ledger_csv(ledger_rows(recs[1], pair)))
    ratio = residuals[0] / residuals[1] if residuals[1] > 0 else math.inf
    mass = np.asarray(recs[0].mass)
    checks = [
        Check("dissipation balance", residuals[0] <= 1e-4,
              f"residual {residuals[0]:.3e} at dt={dt:g} (bound 1e-4)"),
        Check("second-order closure", 3.3 <= ratio <= 4.7,
              f"residual ratio {ratio:.4g} under dt halving (range [3.3, 4.7])"),
        Check("monotone dissipation", bool(np.all(np.diff(mass) <= 1e-15 * mass[0])),
              f"mass {mass[0]:.6g} -> {mass[-1]:.6g}"),
    ]
    return Outcome(checks, [])


def gaussian_sup_oracle(t, width: float, d: int, amplitude: float = 1.0):
    """Peak modulus of the free evolution of amplitude * exp(-|x|^2 / (2 width^2))."""
    return amplitude * (1.0 + 4.0 * np.square(t) / width**4) ** (-d / 4.0)


def run_dispersive_check(cfg, out, workers, state_dir, stop_at) -> Outcome:
    grid = make_grid(cfg["grid.d"], cfg["grid.L"], cfg["grid.N"])
    w = cfg["data.width"]
    u0 = gaussian(grid, w)
    times = np.asarray(cfg["dispersive.times"])
    prof = dispersive_decay_profile(u0, times)
    oracle = gaussian_sup_oracle(times, w, grid.d)
    rel = np.abs(prof.sup_norms - oracle) / oracle
    rows = zip(times, prof.sup_norms, prof.scaled, oracle, rel)
    (out / "dispersive.csv").write_text(
        _csv(["time", "sup_norm", "scaled_sup_norm", "oracle_sup_norm", "relative_error"], rows))
    exponent = prof.fitted_exponent()
    target = grid.d / 2
    boundary = boundary_mass_fraction(free_propagate(u0, float(times[-1])))
    warnings = []
    if boundary > BOUNDARY_WARNING:
        warnings.append(f"boundary mass fraction {boundary:.3e} at t={times[-1]:g} exceeds "
                        f"{BOUNDARY_WARNING:g}; enlarge grid.L")
    checks = [
        Check("Gaussian oracle match", bool(rel.max() <= 0.01),
              f"max relative error {rel.max():.3e} (bound 1e-2)"),
        Check("decay exponent", abs(exponent - target) <= 0.1 * target,
              f"fitted {exponent:.4f} vs d/2 = {target:g} (10%)"),
    ]
    return Outcome(checks, warnings)


def duhamel_pair(grid, noise, u0, seed, stream, dt, T):
    """Duhamel residuals at dt and dt/2 on one frozen Brownian path."""
    fine = sample_path(seed, dt / 2, T, stream)
    out = []
    for path in (fine.coarsen(2), fine):
        step = path.dt
        n = int(round(T / step))
        rec = integrate(u0, SNLSStepper(FlowParams(grid, step), noise, path), T,
                        [k * step for k in range(1, n + 1)])
        out.append(duhamel_residual(rec))
    return out


def run_duhamel_check(cfg, out, workers, state_dir, stop_at) -> Outcome:
    grid = make_grid(cfg["grid.d"], cfg["grid.L"], cfg["grid.N"])
    noise = NoiseSpec.gaussian(grid, cfg["noise.v0"], cfg["noise.width"], cfg["noise.gamma"])
    u0 = normalized(gaussian(grid, cfg["data.width"]), cfg["data.l2"])
    T, dt = cfg["flow.horizon"], cfg["flow.dt"]
    rows = []
    for i in range(cfg["ensemble.paths"]):
        r1, r2 = duhamel_pair(grid, noise, u0, cfg["ensemble.seed"], i, dt, T)
        rows.append((i, r1, r2))
    arr = np.array([(r[1], r[2]) for r in rows])
    rms = np.sqrt(np.mean(arr**2, axis=0))
    ratio = rms[0] / rms[1] if rms[1] > 0 else math.inf
    (out / "duhamel.csv").write_text(_csv(["path", "residual_dt", "residual_half_dt"], rows))
    checks = [
        Check("Duhamel consistency", rms[0] <= 5e-3,
              f"rms residual {rms[0]:.3e} at dt={dt:g}, T={T:g} (bound 5e-3)"),
        Check("Duhamel residual order", ratio >= 1.7,
              f"rms residual ratio {ratio:.4g} under dt halving (bound 1.7)"),
    ]
    return Outcome(checks, [])


def run_burkholder_check(cfg, out, workers, state_dir, stop_at) -> Outcome:
    P, n, T = cfg["burkholder.paths"], cfg["burkholder.steps"], cfg["burkholder.horizon"]
    rho = cfg["burkholder.rho"]
    dt = T / n
    dB = brownian_increments(cfg["ensemble.seed"], P, n, dt)
    bound = cfg["burkholder.bound"]
    rows, checks = [], []
    for form, anchored in (("interval", False), ("anchored", True)):
        res = burkholder_ratio(np.ones_like(dB), dB, rho, dt, anchored=anchored)
        rows.append((form, P, rho, res.lhs, res.rhs, res.ratio, res.ratio_sq))
        checks.append(Check(f"Burkholder ratio ({form} sup)", res.ratio_sq <= bound,
                            f"LHS^2/RHS^2 = {res.ratio_sq:.4f} over {P} paths (bound {bound:g})"))
    (out / "burkholder.csv").write_text(_csv(
        ["form", "paths", "rho", "lhs", "rhs", "ratio", "ratio_squared"], rows))
    return Outcome(checks, [])


PRESETS = {
    "mass-check": run_mass_check,
    "dissipation-check": run_dissipation_check,
    "dispersive-check": run_dispersive_check,
    "duhamel-check": run_duhamel_check,
    "gamma-sweep": run_gamma_sweep,
    "scattering-study": run_scattering_study,
    "burkholder-check": run_burkholder_check,
}


def run_experiment(cfg: ExperimentConfig, out_dir, workers: int = 1, state_dir=None,
                   stop_at=None) -> int:
    """Run the configured preset; 0 if every check passes, 1 on a failed check, 2 on abort."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.config").write_text(cfg.to_text())
    state = Path(state_dir) if state_dir is not None else out / "state"
    try:
        outcome = PRESETS[cfg.experiment](cfg, out, workers, state, stop_at)
    except Exception as exc:  # runtime abort: report and exit 2
        if not isinstance(exc, (ExperimentAborted, FlowError, RecordError, RuntimeError,
                                FloatingPointError)):
            raise
        (out / "summary.txt").write_text(f"ABORT {exc}\n")
        log.error("%s", exc)
        return 2
    (out / "summary.txt").write_text(outcome.summary())
    for w in outcome.warnings:
        log.warning("%s", w)
    return 0 if outcome.passed else 1
