"""Split-step propagation of the (tracer + N gas)-body Schrodinger equation.

The Hamiltonian acts as -Lap_x/(2*rho) + rho*V(x) - sum_k Lap_{y_k}
+ sum_k W(x - y_k); kinetic parts are Fourier multipliers, the potential is
a position-space phase.  One step is Strang: half kinetic, full potential,
half kinetic (second order in dt, exactly norm-preserving).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.fft as sfft

from .errors import NumericalError, StructuralError, ValidationError
from .fields import DensityMatrix, Field, ManyBodyField
from .model import (
    ModelConfig,
    bump_eval,
    bump_grad,
    potential_on_grid,
    potential_gradient_on_grid,
)
from . import fields

# Above this sample count the full-shape multiplier arrays are not
# materialized and the factored (per-coordinate broadcast) path is used.
_MATERIALIZE_LIMIT = 2 ** 26


@dataclass(frozen=True, eq=False)
class MicroState:
    psi: ManyBodyField
    t: float


def _pair_displacement(grid) -> np.ndarray:
    """x - y wrapped to the nearest image, shape gridshape + gridshape + (d,)."""
    pts = grid.coord_mesh()
    d = grid.d
    x = pts.reshape(grid.shape + (1,) * d + (d,))
    y = pts.reshape((1,) * d + grid.shape + (d,))
    disp = x - y
    return (disp + 0.5 * grid.box) % grid.box - 0.5 * grid.box


class MicroPropagator:
    """Caches the Strang multipliers for a fixed configuration and dt."""

    def __init__(self, cfg: ModelConfig, dt: Optional[float] = None):
        self.cfg = cfg
        self.grid = cfg.make_grid()
        self.dt = cfg.dt if dt is None else dt
        self.n_coords = cfg.N + 1
        grid = self.grid
        d, n = grid.d, grid.n
        self._full_shape = (n,) * (d * self.n_coords)
        total = n ** (d * self.n_coords)
        self._materialize = total <= _MATERIALIZE_LIMIT

        k2 = grid.axis_freqs() ** 2
        # kinetic coefficient per axis: 1/(2*rho) on tracer axes, 1 on gas axes
        self._axis_coeff = [1.0 / (2.0 * cfg.rho)] * d + [1.0] * (d * cfg.N)
        self._half_kin_1d = [
            np.exp(-0.5j * self.dt * c * k2) for c in self._axis_coeff
        ]
        v_vals = cfg.rho * potential_on_grid(cfg.potentials.V, grid)
        w_pair = bump_eval(cfg.potentials.W, _pair_displacement(grid))
        self._phase_v = np.exp(-1j * self.dt * v_vals)
        self._phase_w = np.exp(-1j * self.dt * w_pair)
        if self._materialize:
            self._half_kin = self._broadcast_product(self._half_kin_1d)
            self._pot_phase = self._materialized_potential_phase()
        else:
            self._half_kin = None
            self._pot_phase = None

    # -- multiplier assembly ------------------------------------------------

    def _axis_view(self, arr_1d: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * (self.grid.d * self.n_coords)
        shape[axis] = self.grid.n
        return arr_1d.reshape(shape)

    def _broadcast_product(self, per_axis) -> np.ndarray:
        out = np.ones(self._full_shape, dtype=np.complex128)
        for axis, arr in enumerate(per_axis):
            out = out * self._axis_view(arr, axis)
        return out

    def _pair_view(self, arr, gas_index: int) -> np.ndarray:
        """Broadcast a (x, y_k) pair array to the full tensor shape."""
        d, n = self.grid.d, self.grid.n
        shape = [1] * (d * self.n_coords)
        for i in range(d):
            shape[i] = n
            shape[gas_index * d + i] = n
        # pair arrays carry axes (x_0..x_{d-1}, y_0..y_{d-1}) in order
        return arr.reshape(shape)

    def _materialized_potential_phase(self) -> np.ndarray:
        d = self.grid.d
        out = np.broadcast_to(
            self._phase_v.reshape(self.grid.shape + (1,) * (d * self.cfg.N)),
            self._full_shape,
        ).copy()
        for k in range(1, self.cfg.N + 1):
            out *= self._pair_view(self._phase_w, k)
        return out

    # -- stepping -----------------------------------------------------------

    def _apply_half_kinetic(self, spec: np.ndarray) -> np.ndarray:
        if self._materialize:
            spec *= self._half_kin
        else:
            for axis, arr in enumerate(self._half_kin_1d):
                spec *= self._axis_view(arr, axis)
        return spec

    def _apply_potential(self, vals: np.ndarray) -> np.ndarray:
        if self._materialize:
            vals *= self._pot_phase
        else:
            d = self.grid.d
            vals *= self._phase_v.reshape(self.grid.shape + (1,) * (d * self.cfg.N))
            for k in range(1, self.cfg.N + 1):
                vals *= self._pair_view(self._phase_w, k)
        return vals

    def step(self, state: MicroState) -> MicroState:
        """One Strang step; raises NumericalError on norm drift > 1e-6."""
        if state.psi.values.shape != self._full_shape:
            raise StructuralError("state shape does not match propagator configuration")
        norm_in = state.psi.l2_norm()
        spec = sfft.fftn(state.psi.values, norm="ortho", workers=-1)
        spec = self._apply_half_kinetic(spec)
        vals = sfft.ifftn(spec, norm="ortho", workers=-1, overwrite_x=True)
        vals = self._apply_potential(vals)
        spec = sfft.fftn(vals, norm="ortho", workers=-1, overwrite_x=True)
        spec = self._apply_half_kinetic(spec)
        vals = sfft.ifftn(spec, norm="ortho", workers=-1, overwrite_x=True)
        out = ManyBodyField(self.grid, self.cfg.N, vals)
        drift = abs(out.l2_norm() - norm_in)
        if not drift <= 1e-6:   # catches NaN as well

            raise NumericalError(
                f"norm drifted by {drift:.3e} in one step; use a smaller dt",
                last_value=out.l2_norm(),
                residual=drift,
            )
        return MicroState(psi=out, t=state.t + self.dt)

    def run(self, state: MicroState, n_steps: int) -> MicroState:
        for _ in range(n_steps):
            state = self.step(state)
        return state


def micro_step(state: MicroState, cfg: ModelConfig, dt: float) -> MicroState:
    """Single Strang step as a pure function (builds throwaway multipliers)."""
    return MicroPropagator(cfg, dt=dt).step(state)


# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class MicroObservables:
    mean_x: np.ndarray     # (d,)
    mean_v: np.ndarray     # (d,) = <p>/rho
    var_x: float           # <|x - <x>|^2>
    var_v: float           # <|(p - <p>)/rho|^2>
    energy: float
    l2: float
    force_exp: np.ndarray  # (d,) <-grad V(x) - (1/rho) sum_k grad W(x - y_k)>


class MicroObserver:
    """Precomputes the small pair-potential arrays the observables contract with."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.grid = cfg.make_grid()
        grid = self.grid
        self._coords = grid.coord_mesh()
        self._v = potential_on_grid(cfg.potentials.V, grid)
        self._grad_v = potential_gradient_on_grid(cfg.potentials.V, grid)
        disp = _pair_displacement(grid)
        self._w_pair = bump_eval(cfg.potentials.W, disp)
        self._grad_w_pair = bump_grad(cfg.potentials.W, disp)
        self._k2 = grid.axis_freqs() ** 2

    def _pair_pmf(self, dens: np.ndarray, k: int, cv_pow: float) -> np.ndarray:
        """Joint pmf of (x, y_k), axes (x..., y_k...)."""
        d = self.grid.d
        keep = tuple(range(d)) + tuple(range(k * d, (k + 1) * d))
        other = tuple(a for a in range(dens.ndim) if a not in keep)
        pm = dens.sum(axis=other) * cv_pow
        return pm

    def observables(self, state: MicroState) -> MicroObservables:
        cfg = self.cfg
        grid = self.grid
        d = grid.d
        cv = grid.cell_volume
        m = cfg.N + 1
        vals = state.psi.values
        dens = np.abs(vals) ** 2
        cv_pow = cv ** m

        # tracer position marginal
        pmf_x = dens.sum(axis=tuple(range(d, d * m))) * cv_pow
        total = float(pmf_x.sum())
        mean_x = np.tensordot(pmf_x, self._coords, axes=(tuple(range(d)), tuple(range(d)))) / total
        centered = self._coords - mean_x
        var_x = float(np.sum(pmf_x * np.sum(centered ** 2, axis=-1)) / total)

        # tracer momentum marginal (FFT over tracer axes only)
        spec = sfft.fftn(vals, axes=tuple(range(d)), norm="ortho", workers=-1)
        pmf_k = (np.abs(spec) ** 2).sum(axis=tuple(range(d, d * m))) * cv_pow
        ktot = float(pmf_k.sum())
        kfreq = grid.axis_freqs()
        mean_p = np.empty(d)
        var_p = 0.0
        for axis in range(d):
            shape = [1] * d
            shape[axis] = grid.n
            ka = kfreq.reshape(shape)
            mean_p[axis] = float(np.sum(pmf_k * ka) / ktot)
            var_p += float(np.sum(pmf_k * (ka - mean_p[axis]) ** 2) / ktot)

        # energy: kinetic from per-axis spectral marginals, potential from pair pmfs
        spec_full = sfft.fftn(vals, norm="ortho", workers=-1)
        sdens = np.abs(spec_full) ** 2 * cv_pow
        kinetic = 0.0
        for axis in range(d * m):
            marg = sdens.sum(axis=tuple(a for a in range(d * m) if a != axis))
            kinetic += self._axis_coeff(axis) * float(np.sum(marg * self._k2))
        potential = cfg.rho * float(np.sum(pmf_x * self._v))
        force = -np.tensordot(
            pmf_x, self._grad_v, axes=(tuple(range(d)), tuple(range(d)))
        )
        for k in range(1, cfg.N + 1):
            pm = self._pair_pmf(dens, k, cv_pow)
            potential += float(np.sum(pm * self._w_pair))
            force = force - np.tensordot(
                pm, self._grad_w_pair, axes=(tuple(range(2 * d)), tuple(range(2 * d)))
            ) / cfg.rho
        energy = kinetic + potential

        return MicroObservables(
            mean_x=np.asarray(mean_x, dtype=float),
            mean_v=mean_p / cfg.rho,
            var_x=var_x,
            var_v=var_p / cfg.rho ** 2,
            energy=energy,
            l2=state.psi.l2_norm(),
            force_exp=np.asarray(force, dtype=float),
        )

    def _axis_coeff(self, axis: int) -> float:
        return 1.0 / (2.0 * self.cfg.rho) if axis < self.grid.d else 1.0


def micro_observables(state: MicroState, cfg: ModelConfig) -> MicroObservables:
    return MicroObserver(cfg).observables(state)


@dataclass(frozen=True)
class QExpectations:
    q1: float
    q1q2: Optional[float]   # None when N < 2


def q_expectations(state: MicroState, phi: Field) -> QExpectations:
    """<q_1> and (for N >= 2) <q_1 q_2> with respect to ``phi``."""
    psi = state.psi
    q1_psi = fields.project(phi, psi, 1, "q")
    q1 = float(np.real(fields.inner(q1_psi, q1_psi)))
    q1q2 = None
    if psi.n_gas >= 2:
        q12_psi = fields.project(phi, q1_psi, 2, "q")
        q1q2 = float(np.real(fields.inner(q12_psi, q12_psi)))
    return QExpectations(q1=q1, q1q2=q1q2)


def excitation_density_matrix(
    state: MicroState, phi_ref: Field, lambda_vol: float
) -> DensityMatrix:
    """Reduced one-gas-particle kernel of |Lambda| |psi><psi|, sandwiched by q_ref.

    Traces out the tracer and gas slots 2..N with the cell-volume measure,
    scales by lambda_vol, then projects out phi_ref/sqrt(lambda_vol) on both
    sides.
    """
    psi = state.psi
    grid = psi.grid
    if phi_ref.grid != grid:
        raise StructuralError("reference field and state live on different grids")
    ref_norm = phi_ref.l2_norm()
    if abs(ref_norm / np.sqrt(lambda_vol) - 1.0) > 1e-6:
        raise ValidationError(
            f"|phi_ref|_2 = {ref_norm:.8f}, expected sqrt(lambda_vol) = "
            f"{np.sqrt(lambda_vol):.8f}"
        )
    d = grid.d
    cv = grid.cell_volume
    size = grid.size
    y1_axes = psi.coord_axes(1)
    mat = np.moveaxis(psi.values, y1_axes, tuple(range(d))).reshape(size, -1)
    reduced = lambda_vol * cv ** psi.n_gas * (mat @ mat.conj().T)

    u = (phi_ref.values / ref_norm).ravel()
    ru = cv * (reduced @ u)
    ur = cv * (u.conj() @ reduced)
    uru = cv * np.vdot(u, ru)
    sandwiched = (
        reduced
        - np.outer(u, ur)
        - np.outer(ru, u.conj())
        + uru * np.outer(u, u.conj())
    )
    return DensityMatrix(grid, sandwiched)
