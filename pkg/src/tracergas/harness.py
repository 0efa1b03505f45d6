"""Run orchestration: single scenarios, parameter sweeps, exponent fits, file I/O.

A scenario advances the many-body system (when it fits the desk-scale
envelope), the effective system, and the driven one-particle Hartree field
in one synchronized pass, emitting one row per observable knot into
micro.csv / macro.csv / intermediate.csv / diagnostics.csv plus a final
summary.json.  Outputs are deterministic: identical configs produce
byte-identical CSV bodies.
"""

from __future__ import annotations

import json
import math
import resource
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import diagnostics as diag
from .errors import StructuralError, ValidationError, ValidityError
from .fields import (
    Field,
    mass_near_boundary,
    momentum_moments,
    position_moments,
)
from .intermediate import DrivenTrajectory, IntermediatePropagator, hartree_vs_free
from .macro import MacroPropagator, initial_macro_state
from .micro import MicroObserver, MicroPropagator, MicroState, q_expectations
from .model import (
    BumpSpec,
    GridSpec,
    ModelConfig,
    Potentials,
    TracerSpec,
    VariantFlags,
    build_gas_state,
    build_product_state,
    build_tracer_state,
    micro_feasible,
)

__all__ = [
    "config_from_dict",
    "config_to_dict",
    "load_config",
    "run_scenario",
    "RunResult",
    "SweepSpec",
    "run_sweep",
    "fit_loglog",
    "FitResult",
    "refit_sweep",
    "run_checks",
    "self_convergence_order",
    "read_series",
]


# ---------------------------------------------------------------------------
# JSON config schema (strict: unknown keys are rejected at every level)


def _take(d: dict, allowed: dict, context: str) -> dict:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown key(s) {sorted(unknown)} in {context}")
    out = {}
    for key, required in allowed.items():
        if required and key not in d:
            raise ValidationError(f"missing required key {key!r} in {context}")
        if key in d:
            out[key] = d[key]
    return out


def _bump_from_dict(d: Optional[dict], context: str) -> Optional[BumpSpec]:
    if d is None:
        return None
    got = _take(d, {"amplitude": True, "radius": True}, context)
    return BumpSpec(amplitude=float(got["amplitude"]), radius=float(got["radius"]))


def config_from_dict(d: dict) -> ModelConfig:
    top = _take(
        d,
        {
            "d": True, "N": True, "lambda_vol": True, "delta": True,
            "tracer": True, "potentials": True, "grid": True,
            "dt": True, "t_end": True, "variant_flags": False, "stride": False,
        },
        "config root",
    )
    tr = _take(
        top["tracer"],
        {"x0": True, "v0": True, "sigma": False, "gamma": False},
        "tracer",
    )
    tracer = TracerSpec(
        x0=tuple(float(v) for v in tr["x0"]),
        v0=tuple(float(v) for v in tr["v0"]),
        sigma=None if tr.get("sigma") is None else float(tr["sigma"]),
        gamma=float(tr.get("gamma", 0.5)),
    )
    pots = _take(top["potentials"], {"V": True, "W": True, "I": False}, "potentials")
    potentials = Potentials(
        V=_bump_from_dict(pots["V"], "potentials.V"),
        W=_bump_from_dict(pots["W"], "potentials.W"),
        I=_bump_from_dict(pots.get("I"), "potentials.I"),
    )
    gr = _take(top["grid"], {"n": True, "box": True}, "grid")
    flags = _take(
        top.get("variant_flags", {}),
        {"inhomogeneity_at_X": False, "m_tracers": False},
        "variant_flags",
    )
    return ModelConfig(
        d=int(top["d"]),
        N=int(top["N"]),
        lambda_vol=float(top["lambda_vol"]),
        delta=float(top["delta"]),
        tracer=tracer,
        potentials=potentials,
        grid=GridSpec(n=int(gr["n"]), box=float(gr["box"])),
        dt=float(top["dt"]),
        t_end=float(top["t_end"]),
        variant_flags=VariantFlags(
            inhomogeneity_at_X=bool(flags.get("inhomogeneity_at_X", False)),
            m_tracers=int(flags.get("m_tracers", 1)),
        ),
        stride=int(top.get("stride", 10)),
    )


def config_to_dict(cfg: ModelConfig) -> dict:
    out = asdict(cfg)
    out["tracer"]["x0"] = list(out["tracer"]["x0"])
    out["tracer"]["v0"] = list(out["tracer"]["v0"])
    return out


def load_config(path) -> ModelConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# CSV helpers


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_series(path) -> dict:
    """Load a CSV written by this module as a dict of float arrays."""
    arr = np.genfromtxt(path, delimiter=",", names=True)
    arr = np.atleast_1d(arr)
    return {name: np.asarray(arr[name], dtype=float) for name in arr.dtype.names}


# ---------------------------------------------------------------------------
# scenario


@dataclass
class RunResult:
    out_dir: Path
    summary: dict


def _vec_cols(prefix: str, m: int, d: int) -> list:
    if m == 1:
        return [f"{prefix}_{i}" for i in range(d)]
    return [f"{prefix}{k}_{i}" for k in range(m) for i in range(d)]


class _ScenarioRun:
    """Mutable state of one scenario execution (one instance per run)."""

    def __init__(self, cfg: ModelConfig, out_dir: Path, stride: int):
        self.cfg = cfg
        self.out_dir = out_dir
        self.stride = stride
        self.grid = cfg.make_grid()

        self.tracer = build_tracer_state(cfg)
        self.gas = build_gas_state(cfg)
        self.norms_w = diag.model_norms(
            cfg, self.gas.phi0, self.gas.fourier_l1_phi0, self.gas.fourier_l1_grad_phi0
        )
        pos0 = position_moments(self.tracer.field)
        mom0 = momentum_moments(self.tracer.field)
        self.mean_x0 = pos0.mean
        self.mean_v0 = mom0.mean / cfg.rho

        self.feasible, reason = micro_feasible(cfg)
        self.reason_codes = [] if self.feasible else [reason]
        self.alpha0 = diag.alpha_from_parts(
            self.tracer.var_x, self.tracer.var_v, 0.0, 0.0 if cfg.N >= 2 else None
        )

        self.macro_prop = MacroPropagator(cfg)
        self.macro_state = initial_macro_state(
            cfg, self.mean_x0, self.mean_v0, self.gas.phi_ref0
        )

        self.micro_state = None
        self.observer = None
        self.micro_prop = None
        if self.feasible:
            psi0 = build_product_state(self.tracer.field, self.gas.phi0, cfg.N)
            self.micro_state = MicroState(psi=psi0, t=0.0)
            self.micro_prop = MicroPropagator(cfg)
            self.observer = MicroObserver(cfg)

        self.run_intermediate = cfg.variant_flags.m_tracers == 1
        self.driver_source = "micro" if self.feasible else "macro"
        self.phi_t = self.gas.phi0
        self.int_prop = (
            IntermediatePropagator(self.grid, cfg.potentials.W, cfg.dt)
            if self.run_intermediate
            else None
        )
        self.traj = (
            DrivenTrajectory(np.array([0.0]), np.array([self.mean_x0]))
            if self.run_intermediate
            else None
        )

        self.sups = diag.RunningSups()
        self.micro_rows = []
        self.macro_rows = []
        self.int_rows = []
        self.diag_partial = []      # (t, alpha, beta, distances, margins)
        self.margin_history = []
        self.obs_times = []
        self.obs_mean_x = []
        self.obs_force = []
        self.energy0 = None
        self.energy_drift_max = 0.0
        self.boundary_mass_max = 0.0
        self.t_last = 0.0
        self.last_eps_l2 = 0.0
        self.aborted = False
        self.abort_message = ""

    # -- per-knot recording ---------------------------------------------------

    def record_knot(self, t_now: float, obs) -> None:
        cfg = self.cfg
        macro_state = self.macro_state
        phi_ref_linf, phi_ref_grad_linf = diag.phi_ref_sup_norms(macro_state.phi_ref)
        eps_l2 = macro_state.eps.l2_norm()
        cv = self.grid.cell_volume
        overlap_abs = float(
            abs(
                cv
                * np.vdot(macro_state.phi_ref.values, macro_state.eps.values)
                / math.sqrt(cfg.lambda_vol)
            )
        )

        if self.run_intermediate:
            hvf = hartree_vs_free(self.phi_t, self.gas.phi0, t_now)
            free_linf, diff_l2 = hvf.free_linf, hvf.diff_l2
        else:
            free_linf = diff_l2 = 0.0

        self.sups.update(phi_ref_linf, eps_l2, free_linf)
        margins = diag.appendix_margins(
            t_now, cfg, self.norms_w, self.sups, free_linf, diff_l2,
            phi_ref_linf, phi_ref_grad_linf, eps_l2, overlap_abs,
        )
        self.margin_history.append(margins)

        force = self.macro_prop.force(macro_state.X, macro_state.eps, macro_state.phi_ref)
        self.macro_rows.append(
            [t_now]
            + [float(v) for v in macro_state.X.ravel()]
            + [float(v) for v in macro_state.Xdot.ravel()]
            + [eps_l2, overlap_abs, float(np.linalg.norm(force)),
               margins.lemA1_ii_ref, margins.lemA1_ii_grad,
               margins.lemA2_i, margins.lemA2_ii]
        )
        self.boundary_mass_max = max(
            self.boundary_mass_max, mass_near_boundary(macro_state.eps)
        )
        self.last_eps_l2 = eps_l2
        self.t_last = t_now

        if self.run_intermediate:
            self.int_rows.append(
                [t_now, self.phi_t.l2_norm(), free_linf, diff_l2, margins.lemA1_i]
            )

        if self.micro_state is not None:
            qexp = q_expectations(self.micro_state, self.phi_t)
            alpha = diag.compute_alpha(obs, qexp, cfg, self.micro_state.t, t_now)
            beta = diag.compute_beta(macro_state, obs.mean_x, obs.mean_v, self.phi_t, cfg)
            td = diag.theorem_distances(
                self.micro_state, macro_state, obs.mean_x, obs.mean_v, cfg
            )
            if self.energy0 is None:
                self.energy0 = obs.energy
            self.energy_drift_max = max(
                self.energy_drift_max,
                abs(obs.energy - self.energy0) / max(abs(self.energy0), 1e-30),
            )
            self.micro_rows.append(
                [t_now] + list(obs.mean_x) + list(obs.mean_v)
                + [obs.var_x, obs.var_v, obs.energy, obs.l2,
                   qexp.q1, 0.0 if qexp.q1q2 is None else qexp.q1q2]
                + list(obs.force_exp)
            )
            self.obs_times.append(t_now)
            self.obs_mean_x.append(obs.mean_x)
            self.obs_force.append(obs.force_exp)
            self.diag_partial.append((t_now, alpha, beta, td, margins))

    # -- main loop --------------------------------------------------------------

    def execute(self) -> None:
        cfg = self.cfg
        n_steps = int(round(cfg.t_end / cfg.dt)) if cfg.t_end > 0 else 0
        self.n_steps = n_steps
        boundaries = list(range(0, n_steps + 1, self.stride))
        if boundaries[-1] != n_steps:
            boundaries.append(n_steps)
        self.boundaries = boundaries

        obs0 = (
            self.observer.observables(self.micro_state)
            if self.micro_state is not None
            else None
        )
        self.record_knot(0.0, obs0)

        try:
            for w in range(len(boundaries) - 1):
                k0, k1 = boundaries[w], boundaries[w + 1]
                nsub = k1 - k0
                t0_win, t1_win = k0 * cfg.dt, k1 * cfg.dt
                obs = None
                if self.micro_state is not None:
                    self.micro_state = self.micro_prop.run(self.micro_state, nsub)
                    obs = self.observer.observables(self.micro_state)
                self.macro_state = self.macro_prop.run(self.macro_state, nsub)
                if self.run_intermediate:
                    mean_now = (
                        obs.mean_x if self.driver_source == "micro"
                        else self.macro_state.X[0]
                    )
                    self.traj.append(t1_win, mean_now)
                    self.phi_t = self.int_prop.run(self.phi_t, self.traj, t0_win, nsub)
                self.record_knot(t1_win, obs)
        except ValidityError as exc:
            self.aborted = True
            self.abort_message = str(exc)
            self.reason_codes.append("validity_abort")

    # -- outputs ------------------------------------------------------------------

    def ehrenfest_column(self) -> np.ndarray:
        residuals = np.zeros(len(self.diag_partial))
        if len(self.diag_partial) >= 3:
            ts = np.asarray(self.obs_times)
            uniform_len = len(ts)
            if self.n_steps % self.stride != 0 and uniform_len >= 3:
                uniform_len -= 1
            if uniform_len >= 3:
                res = diag.ehrenfest_residual_series(
                    ts[:uniform_len],
                    np.asarray(self.obs_mean_x)[:uniform_len],
                    np.asarray(self.obs_force)[:uniform_len],
                )
                residuals[:uniform_len] = res
                residuals[uniform_len:] = res[-1]
        return residuals

    def write(self) -> dict:
        cfg = self.cfg
        d = cfg.d
        m_tracers = cfg.variant_flags.m_tracers
        micro_header = (
            ["t"] + _vec_cols("mean_x", 1, d) + _vec_cols("mean_v", 1, d)
            + ["var_x", "var_v", "energy", "l2_norm", "q1", "q1q2"]
            + _vec_cols("force_exp", 1, d)
        )
        macro_header = (
            ["t"] + _vec_cols("X", m_tracers, d) + _vec_cols("Xdot", m_tracers, d)
            + ["eps_l2", "overlap_abs", "force_mag", "lemA1_ii_ref_margin",
               "lemA1_ii_grad_margin", "lemA2_i_margin", "lemA2_ii_margin"]
        )
        int_header = ["t", "phi_l2", "free_linf", "diff_l2", "lemA1_i_margin"]

        residuals = self.ehrenfest_column()
        diag_rows = []
        for i, (t_now, alpha, beta, td, margins) in enumerate(self.diag_partial):
            rec = diag.DiagnosticsRecord(
                t=t_now, alpha=alpha, beta=beta, dm_distance=td.dm_distance,
                ehrenfest_residual=float(residuals[i]), margins=margins,
            )
            diag_rows.append(rec.csv_row())

        if self.micro_rows:
            _write_csv(self.out_dir / "micro.csv", micro_header, self.micro_rows)
        _write_csv(self.out_dir / "macro.csv", macro_header, self.macro_rows)
        if self.int_rows:
            _write_csv(self.out_dir / "intermediate.csv", int_header, self.int_rows)
        if diag_rows:
            _write_csv(
                self.out_dir / "diagnostics.csv",
                list(diag.DiagnosticsRecord.CSV_COLUMNS),
                diag_rows,
            )

        margins_min = {
            name: float(min(getattr(m, name) for m in self.margin_history))
            for name in ("lemA1_i", "lemA1_ii_ref", "lemA1_ii_grad", "lemA2_i", "lemA2_ii")
        }
        guard_alpha, guard_beta = _smoothness_guard(
            self.diag_partial, self.stride * cfg.dt
        )
        last = self.diag_partial[-1] if self.diag_partial else None

        summary = {
            "config": config_to_dict(cfg),
            "stride": self.stride,
            "n_steps": self.n_steps,
            "t_final": self.t_last,
            "model": {
                "rho": cfg.rho,
                "sigma": cfg.sigma,
                "var_x0": self.tracer.var_x,
                "var_v0": self.tracer.var_v,
                "spread0": self.tracer.spread,
                "c_delta": self.tracer.c_delta,
                "fourier_l1_phi0": self.gas.fourier_l1_phi0,
                "fourier_l1_grad_phi0": self.gas.fourier_l1_grad_phi0,
                "plateau_sup": self.gas.plateau_sup,
                "w_l1": self.norms_w.w_l1,
                "w_l2": self.norms_w.w_l2,
                "w_linf": self.norms_w.w_linf,
            },
            "alpha0": {
                "var_x": self.alpha0.var_x,
                "var_v": self.alpha0.var_v,
                "q1_scaled": self.alpha0.q1_scaled,
                "q1q2_scaled": self.alpha0.q1q2_scaled,
                "total": self.alpha0.total,
            },
            "final": {
                "alpha_total": last[1].total if last else None,
                "beta_total": last[2].total if last else None,
                "dm_distance": last[3].dm_distance if last else None,
                "traj_distance": last[3].traj_distance if last else None,
                "eps_l2": self.last_eps_l2,
                "phi_ref_linf_max": self.sups.phi_ref_linf,
                "free_linf_max": self.sups.free_linf,
            },
            "margins_min": margins_min,
            "flags": {
                "micro_ran": self.micro_state is not None,
                "intermediate_ran": self.run_intermediate,
                "intermediate_driver": (
                    self.driver_source if self.run_intermediate else None
                ),
                "q1q2_omitted": cfg.N < 2,
                "energy_drift_max": (
                    self.energy_drift_max if self.micro_state is not None else None
                ),
                "boundary_mass_max": self.boundary_mass_max,
                "alpha_jump_guard_ok": guard_alpha,
                "beta_jump_guard_ok": guard_beta,
                "validity_abort": self.aborted,
                "abort_message": self.abort_message,
                "reason_codes": self.reason_codes,
            },
        }
        return summary


def run_scenario(cfg: ModelConfig, out_dir, stride: Optional[int] = None) -> RunResult:
    """Execute one configuration and write its run artifact.

    Writes micro.csv (when the many-body side is feasible), macro.csv,
    intermediate.csv (when a driver trajectory exists), diagnostics.csv
    (when both sides ran), and summary.json.
    """
    t_wall = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stride = cfg.stride if stride is None else stride
    if stride < 1:
        raise ValidationError("stride must be >= 1")

    run = _ScenarioRun(cfg, out_dir, stride)
    run.execute()
    summary = run.write()
    summary["timing"] = {
        "wall_s": time.perf_counter() - t_wall,
        "peak_rss_kb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss,
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return RunResult(out_dir=out_dir, summary=summary)


def _smoothness_guard(diag_partial, knot_dt: float):
    """Flag per-knot jumps in alpha/beta exceeding 10x the series' own max rate."""
    if len(diag_partial) < 3 or knot_dt <= 0:
        return True, True
    ok = [True, True]
    for idx, getter in ((0, lambda r: r[1].total), (1, lambda r: r[2].total)):
        vals = np.array([getter(r) for r in diag_partial])
        jumps = np.abs(np.diff(vals))
        max_rate = np.max(jumps) / knot_dt
        if max_rate > 0:
            ok[idx] = bool(np.all(jumps <= 10.0 * max_rate * knot_dt + 1e-12))
    return ok[0], ok[1]


# ---------------------------------------------------------------------------
# sweeps and fits


@dataclass(frozen=True)
class FitResult:
    exponent: float
    intercept: float
    r_squared: float
    points: tuple   # ((log x, log y), ...)
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "points": [list(p) for p in self.points],
            "flagged": self.flagged,
        }


def fit_loglog(xs, ys, flagged: bool = False) -> FitResult:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3:
        raise ValidationError("need at least 3 points for a log-log fit")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValidationError("log-log fit requires positive values")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - np.mean(ly)) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return FitResult(
        exponent=float(slope),
        intercept=float(intercept),
        r_squared=float(min(r2, 1.0)),
        points=tuple((float(a), float(b)) for a, b in zip(lx, ly)),
        flagged=flagged,
    )


@dataclass(frozen=True)
class SweepSpec:
    base: ModelConfig
    axis: str                    # rho | lambda_vol | dt | n
    values: tuple
    derived_rule: str = "fix_N"  # how N / lambda_vol co-vary on the rho/lambda axes
    outputs: str = "sweep_out"

    def __post_init__(self):
        if self.axis not in ("rho", "lambda_vol", "dt", "n"):
            raise ValidationError(f"unknown sweep axis {self.axis!r}")
        vals = tuple(float(v) for v in self.values)
        diffs = np.diff(vals)
        if len(vals) == 0 or not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValidationError("sweep values must be strictly monotone")
        object.__setattr__(self, "values", vals)


def derive_member(base: ModelConfig, axis: str, value: float, rule: str) -> ModelConfig:
    if axis == "dt":
        return replace(base, dt=float(value))
    if axis == "n":
        return replace(base, grid=GridSpec(n=int(value), box=base.grid.box))
    if axis == "rho":
        if rule == "fix_lambda":
            n_new = value * base.lambda_vol
            if abs(n_new - round(n_new)) > 1e-9:
                raise ValidationError(
                    f"rho = {value} with lambda_vol = {base.lambda_vol} needs an "
                    f"integer N, got {n_new}"
                )
            return replace(base, N=int(round(n_new)))
        if rule == "fix_N":
            return replace(base, lambda_vol=base.N / value)
        raise ValidationError(f"unknown derived_rule {rule!r} for rho axis")
    if axis == "lambda_vol":
        if rule == "fix_N":
            return replace(base, lambda_vol=float(value))
        if rule == "fix_rho":
            n_new = base.rho * value
            if abs(n_new - round(n_new)) > 1e-9:
                raise ValidationError(
                    f"lambda_vol = {value} at rho = {base.rho} needs an integer N"
                )
            return replace(base, lambda_vol=float(value), N=int(round(n_new)))
        raise ValidationError(f"unknown derived_rule {rule!r} for lambda_vol axis")
    raise ValidationError(f"unknown sweep axis {axis!r}")


# metric extractors: (out_dir, summary, t_compare) -> float
def _metric_alpha0(out_dir, summary, t_cmp):
    return summary["alpha0"]["total"]


def _metric_spread0(out_dir, summary, t_cmp):
    return summary["model"]["spread0"]


def _metric_fourier_l1_phi0(out_dir, summary, t_cmp):
    return summary["model"]["fourier_l1_phi0"]


def _series_at(out_dir, name, column, t_cmp):
    series = read_series(Path(out_dir) / name)
    idx = int(np.argmin(np.abs(series["t"] - t_cmp)))
    return float(series[column][idx])


def _metric_hartree_gap(out_dir, summary, t_cmp):
    return _series_at(out_dir, "intermediate.csv", "diff_l2", t_cmp)


def _metric_free_linf(out_dir, summary, t_cmp):
    return _series_at(out_dir, "intermediate.csv", "free_linf", t_cmp)


def _metric_traj_gap(out_dir, summary, t_cmp):
    return _series_at(out_dir, "diagnostics.csv", "traj_gap", t_cmp)


def _metric_dm_distance(out_dir, summary, t_cmp):
    return _series_at(out_dir, "diagnostics.csv", "dm_distance", t_cmp)


def _metric_grad_phi_ref(out_dir, summary, t_cmp):
    series = read_series(Path(out_dir) / "macro.csv")
    lam = summary["config"]["lambda_vol"]
    bound = (
        math.sqrt(lam)
        * (2 * math.pi) ** (-summary["config"]["d"] / 2.0)
        * summary["model"]["fourier_l1_grad_phi0"]
    )
    # measured sup equals the explicit bound minus the recorded margin
    return float(np.max(bound - series["lemA1_ii_grad_margin"]))


METRICS: dict = {
    "alpha0_total": _metric_alpha0,
    "spread0": _metric_spread0,
    "fourier_l1_phi0": _metric_fourier_l1_phi0,
    "hartree_gap_l2": _metric_hartree_gap,
    "free_linf": _metric_free_linf,
    "traj_gap": _metric_traj_gap,
    "dm_distance": _metric_dm_distance,
    "grad_phi_ref_linf": _metric_grad_phi_ref,
}


def _run_member(args) -> dict:
    cfg_dict, out_dir = args
    cfg = config_from_dict(cfg_dict)
    return run_scenario(cfg, out_dir).summary


def run_sweep(
    spec: SweepSpec,
    metrics,
    parallel: int = 0,
    t_compare: Optional[float] = None,
) -> dict:
    """Run every member config, then log-log fit each metric against the axis.

    Returns {"fits": {metric: FitResult}, ...} and writes sweep.json into the
    output directory.  Members are independent; serial and parallel execution
    produce identical files.
    """
    if len(spec.values) < 3:
        raise ValidationError("a sweep needs at least 3 values")
    out_root = Path(spec.outputs)
    out_root.mkdir(parents=True, exist_ok=True)
    members = []
    for value in spec.values:
        cfg = derive_member(spec.base, spec.axis, value, spec.derived_rule)
        member_dir = out_root / f"{spec.axis}={value:g}"
        members.append((config_to_dict(cfg), str(member_dir)))

    if parallel and parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            summaries = list(pool.map(_run_member, members))
    else:
        summaries = [_run_member(m) for m in members]

    t_cmp = t_compare if t_compare is not None else 0.5 * spec.base.t_end
    fits = {}
    any_abort = any(s["flags"]["validity_abort"] for s in summaries)
    for metric in metrics:
        extractor = METRICS[metric]
        xs, ys = [], []
        for value, (_, member_dir), summary in zip(spec.values, members, summaries):
            try:
                ys.append(float(extractor(member_dir, summary, t_cmp)))
                xs.append(float(value))
            except (FileNotFoundError, KeyError, OSError):
                continue
        flagged = any_abort or len(xs) < len(spec.values)
        fits[metric] = fit_loglog(xs, ys, flagged=flagged)

    trend = {
        metric: _monotone_report([math.exp(p[1]) for p in fits[metric].points])
        for metric in fits
    }
    result = {
        "axis": spec.axis,
        "values": list(spec.values),
        "derived_rule": spec.derived_rule,
        "t_compare": t_cmp,
        "fits": {k: v.to_dict() for k, v in fits.items()},
        "monotone_nonincreasing_pairs": trend,
        "member_dirs": [m[1] for m in members],
    }
    with open(out_root / "sweep.json", "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    result["fits"] = fits
    return result


def _monotone_report(ys) -> dict:
    pairs = len(ys) - 1
    dec = sum(1 for a, b in zip(ys, ys[1:]) if b <= a)
    return {"pairs": pairs, "nonincreasing": dec}


def refit_sweep(sweep_dir, metrics, t_compare: Optional[float] = None) -> dict:
    """Re-fit metrics from an existing sweep output directory."""
    sweep_dir = Path(sweep_dir)
    with open(sweep_dir / "sweep.json") as fh:
        prior = json.load(fh)
    values = prior["values"]
    t_cmp = prior["t_compare"] if t_compare is None else t_compare
    fits = {}
    for metric in metrics:
        extractor = METRICS[metric]
        xs, ys = [], []
        for value, member_dir in zip(values, prior["member_dirs"]):
            with open(Path(member_dir) / "summary.json") as fh:
                summary = json.load(fh)
            ys.append(float(extractor(member_dir, summary, t_cmp)))
            xs.append(float(value))
        fits[metric] = fit_loglog(xs, ys)
    return {"t_compare": t_cmp, "fits": fits}


# ---------------------------------------------------------------------------
# self-convergence


def self_convergence_order(
    cfg: ModelConfig,
    runner: Callable,
    extract: Callable,
    factors=(1.0, 0.5, 0.25),
) -> float:
    """Richardson order from consecutive differences of a dt-refinement family.

    ``runner(cfg)`` propagates to t_end at the member's dt; ``extract`` maps
    its result to a vector of comparables.
    """
    results = []
    for f in factors:
        member = replace(cfg, dt=cfg.dt * f)
        results.append(np.asarray(extract(runner(member)), dtype=float))
    e1 = float(np.linalg.norm(results[0] - results[1]))
    e2 = float(np.linalg.norm(results[1] - results[2]))
    if e2 == 0:
        raise ValidationError("refinement differences vanished; cannot estimate order")
    return math.log2(e1 / e2)


# ---------------------------------------------------------------------------
# quick invariant checks (the CLI `check` subcommand)


def run_checks(verbose: bool = True) -> list:
    """Fast invariant suite; returns [(name, ok, detail), ...]."""
    from . import fields
    from .fields import DensityMatrix, Field, Grid, ManyBodyField, operator_norm, project, spectral_transform
    from .model import BumpSpec, bump_eval, bump_grad

    results = []

    def record(name, ok, detail=""):
        results.append((name, bool(ok), detail))
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")

    rng = np.random.default_rng(12345)
    grid = Grid(d=1, n=64, box=8.0)

    worst_p, worst_rt = 0.0, 0.0
    for _ in range(20):
        vals = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        f = Field(grid, vals)
        g = spectral_transform(f)
        worst_p = max(worst_p, abs(f.l2_norm() - g.l2_norm()) / f.l2_norm())
        back = spectral_transform(g, "inverse")
        worst_rt = max(
            worst_rt,
            float(np.max(np.abs(back.values - f.values)) / np.max(np.abs(f.values))),
        )
    record("parseval", worst_p < 1e-12, f"max rel defect {worst_p:.2e}")
    record("fft roundtrip", worst_rt < 1e-12, f"max rel defect {worst_rt:.2e}")

    phi_vals = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    phi = Field(grid, phi_vals)
    phi = Field(grid, phi.values / phi.l2_norm())
    psi = ManyBodyField(
        grid, 1, rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
    )
    p_psi = project(phi, psi, 1, "p")
    q_psi = project(phi, psi, 1, "q")
    sum_defect = float(np.max(np.abs(p_psi.values + q_psi.values - psi.values)))
    idem = float(np.max(np.abs(project(phi, p_psi, 1, "p").values - p_psi.values)))
    ortho = float(np.max(np.abs(project(phi, q_psi, 1, "p").values)))
    record("projector p+q=1", sum_defect < 1e-10, f"defect {sum_defect:.2e}")
    record("projector idempotent", idem < 1e-10, f"defect {idem:.2e}")
    record("projector pq=0", ortho < 1e-10, f"defect {ortho:.2e}")

    g16 = Grid(d=1, n=16, box=4.0)
    fv = rng.standard_normal(g16.shape) + 1j * rng.standard_normal(g16.shape)
    gv = rng.standard_normal(g16.shape) + 1j * rng.standard_normal(g16.shape)
    spectral = fields.convolve(Field(g16, fv), Field(g16, gv)).values
    coords = g16.axis_coords()
    direct = np.zeros(16, dtype=complex)
    for i in range(16):
        for j in range(16):
            disp = coords[i] - coords[j]
            disp = (disp + 0.5 * g16.box) % g16.box - 0.5 * g16.box
            k = int(round((disp + 0.5 * g16.box) / g16.h)) % 16
            direct[i] += fv[k] * gv[j] * g16.cell_volume
    conv_defect = float(np.max(np.abs(spectral - direct)))
    record("convolution vs direct sum", conv_defect < 1e-10, f"defect {conv_defect:.2e}")

    a = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    herm = a + a.conj().T
    g8 = Grid(d=1, n=8, box=2.0)
    pn = operator_norm(DensityMatrix(g8, herm))
    ev = float(np.max(np.abs(np.linalg.eigvalsh(herm)))) * g8.cell_volume
    record("operator norm vs eigh", abs(pn - ev) < 1e-7, f"|diff| {abs(pn - ev):.2e}")

    spec = BumpSpec(amplitude=1.3, radius=0.9)
    worst = 0.0
    for _ in range(50):
        x = rng.uniform(-1.1, 1.1, size=(1,))
        h = 1e-5 * spec.radius
        fd = (bump_eval(spec, x + h) - bump_eval(spec, x - h)) / (2 * h)
        worst = max(worst, float(abs(fd - bump_grad(spec, x)[0])))
    record("bump gradient vs FD", worst < 1e-6, f"max defect {worst:.2e}")

    return results
