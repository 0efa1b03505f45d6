"""Effective dynamics: free reference field, sourced excitation field, classical tracer.

The coupled system integrated here is

    i dt eps   = (-Lap + W(X - .)) eps + W(X - .) phi_ref
    d2/dt2 X   = -grad V(X) - (grad W * |eps|^2)(X)
                 - 2 Re (grad W * (conj(phi_ref) eps))(X)
    i dt phi_ref = -Lap phi_ref          (solved exactly in Fourier space)

with eps(0) = 0.  One step is velocity Verlet for X interleaved with a
Strang step for eps: half free flight, then the position-diagonal part
(potential plus inhomogeneity, both frozen at the window midpoint) solved
exactly in closed form, then half free flight.  Solving the sourced
position substep exactly keeps the step second order uniformly in the
spectral content of the fields; an interaction-picture quadrature of the
source degrades to first order once modes with |k|^2 dt = O(1) carry
weight.  Self-convergence is second order in dt.

With m_tracers = M > 1 the source and the Hartree forces are summed over
tracers and a pair potential I couples the tracers directly (macroscopic
side only).  The ``inhomogeneity_at_X`` flag replaces the source
W(X - y) phi_ref(y) by W(X - y) phi_ref(X), exploiting that phi_ref varies
slowly near the tracer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import ValidityError
from .fields import ConvolutionKernel, Field, interpolate
from .model import ModelConfig, bump_eval, bump_grad, wrap_displacement


@dataclass(frozen=True, eq=False)
class MacroState:
    X: np.ndarray        # (M, d) tracer positions
    Xdot: np.ndarray     # (M, d) tracer velocities
    eps: Field
    phi_ref: Field
    t: float


def initial_macro_state(cfg: ModelConfig, mean_x, mean_v, phi_ref0: Field) -> MacroState:
    """eps = 0, X = <x>_0, Xdot = <p/rho>_0; extra tracers start offset by x0."""
    m = cfg.variant_flags.m_tracers
    grid = phi_ref0.grid
    X = np.tile(np.asarray(mean_x, dtype=float), (m, 1))
    Xdot = np.tile(np.asarray(mean_v, dtype=float), (m, 1))
    zero = Field(grid, np.zeros(grid.shape, dtype=np.complex128))
    return MacroState(X=X, Xdot=Xdot, eps=zero, phi_ref=phi_ref0, t=0.0)


def propagate_phi_ref(phi_ref: Field, dt: float) -> Field:
    """Exact free step exp(-i dt |k|^2) applied in Fourier space."""
    grid = phi_ref.grid
    spec = sfft.fftn(phi_ref.values, norm="ortho", workers=-1)
    spec *= np.exp(-1j * dt * grid.freq_sq_mesh())
    return Field(grid, sfft.ifftn(spec, norm="ortho", workers=-1, overwrite_x=True))


class MacroPropagator:
    def __init__(self, cfg: ModelConfig, dt: float | None = None):
        self.cfg = cfg
        self.grid = cfg.make_grid()
        self.dt = cfg.dt if dt is None else dt
        grid = self.grid
        self._k2 = grid.freq_sq_mesh()
        self._free_mult = np.exp(-1j * self.dt * self._k2)
        self._half_kin = np.exp(-0.5j * self.dt * self._k2)
        self._coords = grid.coord_mesh()
        # convolution kernels for the Hartree force, one per component
        grad_w = bump_grad(cfg.potentials.W, self._coords)
        self._grad_w_kernels = [
            ConvolutionKernel(grid, grad_w[..., i]) for i in range(grid.d)
        ]
        # the tracer must stay this far from the box edge
        self._safe = 0.5 * grid.box - cfg.potentials.W.radius

    # -- force ----------------------------------------------------------------

    def force(self, X: np.ndarray, eps: Field, phi_ref: Field) -> np.ndarray:
        """Newton force on every tracer, shape (M, d)."""
        cfg = self.cfg
        grid = self.grid
        # grad W convolved against the real excitation density
        density = np.abs(eps.values) ** 2 + 2.0 * np.real(
            phi_ref.values.conj() * eps.values
        )
        conv = [k.apply(density) for k in self._grad_w_kernels]
        out = np.empty_like(X)
        for m in range(X.shape[0]):
            f = -bump_grad(cfg.potentials.V, X[m])
            for i in range(grid.d):
                f[i] -= float(np.real(interpolate(conv[i], grid, X[m])))
            if cfg.potentials.I is not None and X.shape[0] > 1:
                for j in range(X.shape[0]):
                    if j != m:
                        f = f - bump_grad(
                            cfg.potentials.I,
                            wrap_displacement(X[m] - X[j], grid.box),
                        )
            out[m] = f
        return out

    # -- source and potential ---------------------------------------------------

    def _w_sum_at(self, X: np.ndarray) -> np.ndarray:
        """sum_k W(X_k - y) sampled on the grid."""
        out = np.zeros(self.grid.shape)
        for m in range(X.shape[0]):
            disp = wrap_displacement(X[m] - self._coords, self.grid.box)
            out += bump_eval(self.cfg.potentials.W, disp)
        return out

    def _source(self, X: np.ndarray, phi_ref: Field) -> np.ndarray:
        if not self.cfg.variant_flags.inhomogeneity_at_X:
            return self._w_sum_at(X) * phi_ref.values
        out = np.zeros(self.grid.shape, dtype=np.complex128)
        for m in range(X.shape[0]):
            disp = wrap_displacement(X[m] - self._coords, self.grid.box)
            out += bump_eval(self.cfg.potentials.W, disp) * interpolate(
                phi_ref.values, self.grid, X[m]
            )
        return out

    def _eps_step(
        self, eps: Field, x_mid: np.ndarray, s_mid: np.ndarray
    ) -> Field:
        """Strang step of (-Lap + W(x_mid - .)) with the sourced position
        substep solved exactly:  d/dt e = -i U e - i S  has the closed form
        e(dt) = exp(-i dt U) e(0) - i dt phi1(-i dt U) S."""
        u = self._w_sum_at(x_mid)
        z = -1j * self.dt * u
        pot_phase = np.exp(z)
        small = np.abs(z) < 1e-6
        phi1 = np.where(small, 1.0 + z / 2.0 + z * z / 6.0,
                        (pot_phase - 1.0) / np.where(small, 1.0, z))
        spec = sfft.fftn(eps.values, norm="ortho", workers=-1)
        spec *= self._half_kin
        vals = sfft.ifftn(spec, norm="ortho", workers=-1, overwrite_x=True)
        vals = pot_phase * vals + (-1j * self.dt) * phi1 * s_mid
        spec = sfft.fftn(vals, norm="ortho", workers=-1, overwrite_x=True)
        spec *= self._half_kin
        vals = sfft.ifftn(spec, norm="ortho", workers=-1, overwrite_x=True)
        return Field(self.grid, vals)

    # -- step -------------------------------------------------------------------

    def step(self, state: MacroState) -> MacroState:
        dt = self.dt
        f0 = self.force(state.X, state.eps, state.phi_ref)
        xdot_half = state.Xdot + 0.5 * dt * f0
        x_new = state.X + dt * xdot_half
        if np.any(np.abs(x_new) > self._safe):
            raise ValidityError(
                f"tracer left the safe interior at t = {state.t + dt:.6g}: "
                f"|X| max {np.max(np.abs(x_new)):.4g} > {self._safe:.4g}"
            )
        x_mid = 0.5 * (state.X + x_new)
        phi_ref_half = propagate_phi_ref(state.phi_ref, 0.5 * dt)
        phi_ref_new = propagate_phi_ref(phi_ref_half, 0.5 * dt)
        s_mid = self._source(x_mid, phi_ref_half)
        eps_new = self._eps_step(state.eps, x_mid, s_mid)
        f1 = self.force(x_new, eps_new, phi_ref_new)
        xdot_new = xdot_half + 0.5 * dt * f1
        return MacroState(
            X=x_new, Xdot=xdot_new, eps=eps_new, phi_ref=phi_ref_new, t=state.t + dt
        )

    def run(self, state: MacroState, n_steps: int) -> MacroState:
        for _ in range(n_steps):
            state = self.step(state)
        return state


def macro_step(state: MacroState, cfg: ModelConfig, dt: float) -> MacroState:
    return MacroPropagator(cfg, dt=dt).step(state)


@dataclass(frozen=True)
class MacroReport:
    eps_l2: float
    force_mag: float       # Euclidean norm over all tracers
    overlap: complex       # <phi_ref / sqrt(lambda_vol), eps>


def macro_energy_report(state: MacroState, cfg: ModelConfig,
                        propagator: MacroPropagator | None = None) -> MacroReport:
    """Monitoring scalars; the inhomogeneous system has no conserved energy."""
    prop = propagator if propagator is not None else MacroPropagator(cfg)
    f = prop.force(state.X, state.eps, state.phi_ref)
    cv = state.eps.grid.cell_volume
    overlap = cv * np.vdot(state.phi_ref.values, state.eps.values) / np.sqrt(
        cfg.lambda_vol
    )
    return MacroReport(
        eps_l2=state.eps.l2_norm(),
        force_mag=float(np.linalg.norm(f)),
        overlap=complex(overlap),
    )
