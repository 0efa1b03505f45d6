"""Per-time diagnostics: the composite error functionals, the theorem's
distances, the Ehrenfest residual, and the explicit-constant bound margins.

All bound right-hand sides are assembled from quantities measured on the
realized run (sup norms of the reference field, potential norms on the grid,
mode sums of the initial gas state); no abstract constants are involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import StructuralError
from .fields import Field, grad_linf, inner, operator_norm, outer_density_matrix
from .macro import MacroState
from .micro import MicroObservables, MicroState, QExpectations, excitation_density_matrix
from .model import ModelConfig


# ---------------------------------------------------------------------------
# measured model constants


@dataclass(frozen=True)
class ModelNorms:
    """Grid norms of W and mode sums of the initial gas state."""

    w_l1: float
    w_l2: float
    w_linf: float
    fourier_l1_phi0: float
    fourier_l1_grad_phi0: float
    d: int

    @property
    def free_sup_bound(self) -> float:
        """Exact bound on sup |exp(i Lap t) phi0| for every t."""
        return (2.0 * math.pi) ** (-self.d / 2.0) * self.fourier_l1_phi0

    @property
    def free_grad_sup_bound(self) -> float:
        return (2.0 * math.pi) ** (-self.d / 2.0) * self.fourier_l1_grad_phi0


def model_norms(cfg: ModelConfig, phi0: Field, fourier_l1_phi0: float,
                fourier_l1_grad_phi0: float) -> ModelNorms:
    from .model import potential_on_grid

    grid = phi0.grid
    w_vals = potential_on_grid(cfg.potentials.W, grid)
    cv = grid.cell_volume
    return ModelNorms(
        w_l1=float(cv * np.sum(np.abs(w_vals))),
        w_l2=float(np.sqrt(cv * np.sum(w_vals ** 2))),
        w_linf=float(np.max(np.abs(w_vals))),
        fourier_l1_phi0=fourier_l1_phi0,
        fourier_l1_grad_phi0=fourier_l1_grad_phi0,
        d=grid.d,
    )


class RunningSups:
    """Tracks the running sup norms the bound chains need."""

    def __init__(self):
        self.phi_ref_linf = 0.0
        self.eps_l2 = 0.0
        self.free_linf = 0.0

    def update(self, phi_ref_linf: float, eps_l2: float, free_linf: float) -> None:
        self.phi_ref_linf = max(self.phi_ref_linf, phi_ref_linf)
        self.eps_l2 = max(self.eps_l2, eps_l2)
        self.free_linf = max(self.free_linf, free_linf)


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class AlphaRecord:
    var_x: float
    var_v: float
    q1_scaled: float
    q1q2_scaled: Optional[float]   # None when N < 2 (term omitted, flagged)
    total: float


@dataclass(frozen=True)
class BetaRecord:
    traj_gap: float
    vel_gap: float
    field_gap: float
    total: float


@dataclass(frozen=True)
class BoundMargins:
    lemA1_i: float
    lemA1_ii_ref: float
    lemA1_ii_grad: float
    lemA2_i: float
    lemA2_ii: float

    def all_nonnegative(self, tol: float = 1e-6) -> bool:
        return all(
            m >= -tol
            for m in (
                self.lemA1_i,
                self.lemA1_ii_ref,
                self.lemA1_ii_grad,
                self.lemA2_i,
                self.lemA2_ii,
            )
        )


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    alpha: AlphaRecord
    beta: BetaRecord
    dm_distance: float
    ehrenfest_residual: float
    margins: BoundMargins

    CSV_COLUMNS = (
        "t", "var_x", "var_v", "q1_scaled", "q1q2_scaled", "alpha_total",
        "traj_gap", "vel_gap", "field_gap", "beta_total", "dm_distance",
        "ehrenfest_residual", "lemA1_i_margin", "lemA1_ii_ref_margin",
        "lemA1_ii_grad_margin", "lemA2_i_margin", "lemA2_ii_margin",
    )

    def csv_row(self) -> list:
        q12 = 0.0 if self.alpha.q1q2_scaled is None else self.alpha.q1q2_scaled
        return [
            self.t, self.alpha.var_x, self.alpha.var_v, self.alpha.q1_scaled,
            q12, self.alpha.total, self.beta.traj_gap, self.beta.vel_gap,
            self.beta.field_gap, self.beta.total, self.dm_distance,
            self.ehrenfest_residual, self.margins.lemA1_i,
            self.margins.lemA1_ii_ref, self.margins.lemA1_ii_grad,
            self.margins.lemA2_i, self.margins.lemA2_ii,
        ]


# ---------------------------------------------------------------------------
# alpha and beta


def alpha_from_parts(var_x: float, var_v: float, q1_scaled: float,
                     q1q2_scaled: Optional[float]) -> AlphaRecord:
    terms = [var_x ** 2, var_v ** 2, q1_scaled ** 2]
    if q1q2_scaled is not None:
        terms.append(q1q2_scaled ** 2)
    return AlphaRecord(
        var_x=var_x,
        var_v=var_v,
        q1_scaled=q1_scaled,
        q1q2_scaled=q1q2_scaled,
        total=float(math.sqrt(sum(terms))),
    )


def compute_alpha(
    obs: MicroObservables,
    qexp: QExpectations,
    cfg: ModelConfig,
    t_state: float,
    t_phi: float,
) -> AlphaRecord:
    """Variance and scaled bad-particle terms; the two times must agree."""
    if abs(t_state - t_phi) > 0.5 * cfg.dt:
        raise StructuralError(
            f"state time {t_state} and Hartree-field time {t_phi} differ by more "
            f"than dt/2"
        )
    lam = cfg.lambda_vol
    q1q2 = None if qexp.q1q2 is None else lam ** 2 * qexp.q1q2
    return alpha_from_parts(obs.var_x, obs.var_v, lam * qexp.q1, q1q2)


def compute_beta(
    macro: MacroState,
    mean_x: np.ndarray,
    mean_v: np.ndarray,
    phi_t: Field,
    cfg: ModelConfig,
) -> BetaRecord:
    """Trajectory, velocity, and field gaps between the two descriptions.

    The velocity gap uses the exact identities Xdot and <p>/rho on the two
    sides instead of numerical differentiation.
    """
    if phi_t.grid != macro.eps.grid:
        raise StructuralError("Hartree field and excitation field grids differ")
    traj_gap = float(np.linalg.norm(macro.X[0] - np.asarray(mean_x)))
    vel_gap = float(np.linalg.norm(macro.Xdot[0] - np.asarray(mean_v)))
    diff = (
        macro.phi_ref.values
        + macro.eps.values
        - math.sqrt(cfg.lambda_vol) * phi_t.values
    )
    cv = phi_t.grid.cell_volume
    field_gap = float(np.sqrt(cv * np.sum(np.abs(diff) ** 2)))
    return BetaRecord(
        traj_gap=traj_gap,
        vel_gap=vel_gap,
        field_gap=field_gap,
        total=float(math.sqrt(traj_gap ** 2 + vel_gap ** 2 + field_gap ** 2)),
    )


# ---------------------------------------------------------------------------
# theorem distances


@dataclass(frozen=True)
class TheoremDistances:
    dm_distance: float
    traj_distance: float


def theorem_distances(
    micro: MicroState,
    macro: MacroState,
    mean_x: np.ndarray,
    mean_v: np.ndarray,
    cfg: ModelConfig,
) -> TheoremDistances:
    """Operator-norm distance of the excitation density matrices and the
    position-plus-velocity gap of the tracer."""
    rho_micro = excitation_density_matrix(micro, macro.phi_ref, cfg.lambda_vol)
    rho_macro = outer_density_matrix(macro.eps)
    dm = operator_norm(rho_micro - rho_macro)
    traj = float(
        np.linalg.norm(macro.X[0] - np.asarray(mean_x))
        + np.linalg.norm(macro.Xdot[0] - np.asarray(mean_v))
    )
    return TheoremDistances(dm_distance=dm, traj_distance=traj)


# ---------------------------------------------------------------------------
# Ehrenfest residual


def ehrenfest_residual_series(
    times: np.ndarray, mean_x: np.ndarray, force_exp: np.ndarray
) -> np.ndarray:
    """|second difference of <x> minus the expected force| per sample.

    Centered stencil at interior samples; the residual is undefined at the
    two endpoints, which inherit the nearest interior value so every row
    stays finite.  Requires a uniform stride.
    """
    times = np.asarray(times, dtype=float)
    mean_x = np.asarray(mean_x, dtype=float)
    force_exp = np.asarray(force_exp, dtype=float)
    if mean_x.ndim == 1:
        mean_x = mean_x[:, None]
    if force_exp.ndim == 1:
        force_exp = force_exp[:, None]
    if mean_x.shape[0] != times.size or force_exp.shape != mean_x.shape:
        raise StructuralError("series lengths disagree")
    if times.size < 3:
        raise StructuralError("need at least 3 samples for a second difference")
    steps = np.diff(times)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(abs(steps[0]), 1e-30):
        raise StructuralError("Ehrenfest residual requires a uniform sample stride")
    h = steps[0]
    second = (mean_x[2:] - 2.0 * mean_x[1:-1] + mean_x[:-2]) / h ** 2
    res = np.empty(times.size)
    res[1:-1] = np.linalg.norm(second - force_exp[1:-1], axis=1)
    res[0] = res[1]
    res[-1] = res[-2]
    return res


# ---------------------------------------------------------------------------
# appendix bound margins


def appendix_margins(
    t: float,
    cfg: ModelConfig,
    norms_w: ModelNorms,
    sups: RunningSups,
    free_linf: float,
    diff_l2: float,
    phi_ref_linf: float,
    phi_ref_grad_linf: float,
    eps_l2: float,
    overlap_abs: float,
) -> BoundMargins:
    """Explicit bound minus measured value, one entry per appendix estimate.

    * propagation (i): sup|free phi| + |phi_t - free phi|_2 against the mode
      sum of phi0 plus the Gronwall chain exp(|W|_inf t) * t * |W|_2 *
      sup_s sup|free phi_s|;
    * propagation (ii): sup norms of the reference field and its gradient
      against sqrt(lambda_vol) times the respective initial mode sums;
    * excitation (i): |eps_t|_2 against t * |W|_2 * sup_s sup|phi_ref_s|;
    * excitation (ii): the reference-excitation overlap against
      (t/sqrt(lambda_vol)) * (C_ref |W|_2 C_eps + C_ref^2 |W|_1) with
      C_ref, C_eps the measured running sups.
    """
    lam = cfg.lambda_vol
    c_ref = sups.phi_ref_linf
    c_eps = sups.eps_l2
    gronwall = math.exp(norms_w.w_linf * t) * t * norms_w.w_l2 * sups.free_linf
    lem_a1_i = (norms_w.free_sup_bound + gronwall) - (free_linf + diff_l2)
    lem_a1_ii_ref = math.sqrt(lam) * norms_w.free_sup_bound - phi_ref_linf
    lem_a1_ii_grad = math.sqrt(lam) * norms_w.free_grad_sup_bound - phi_ref_grad_linf
    lem_a2_i = t * norms_w.w_l2 * c_ref - eps_l2
    lem_a2_ii = (
        t / math.sqrt(lam) * (c_ref * norms_w.w_l2 * c_eps + c_ref ** 2 * norms_w.w_l1)
        - overlap_abs
    )
    return BoundMargins(
        lemA1_i=lem_a1_i,
        lemA1_ii_ref=lem_a1_ii_ref,
        lemA1_ii_grad=lem_a1_ii_grad,
        lemA2_i=lem_a2_i,
        lemA2_ii=lem_a2_ii,
    )


def phi_ref_sup_norms(phi_ref: Field) -> tuple[float, float]:
    """(sup |phi_ref|, sup |grad phi_ref|) on the grid."""
    return float(np.max(np.abs(phi_ref.values))), grad_linf(phi_ref)
