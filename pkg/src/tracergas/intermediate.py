"""One-particle Hartree dynamics driven by a recorded tracer trajectory.

The field obeys i dt phi = (-Lap + W(c(t) - y)) phi where c(t) is the mean
tracer position, linearly interpolated between trajectory knots; the Strang
potential is frozen at the window midpoint.  Comparing against the exact
free evolution of the initial state gives the product-structure diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import StructuralError
from .fields import Field
from .model import BumpSpec, bump_eval, wrap_displacement


@dataclass
class DrivenTrajectory:
    """Strictly increasing sample times with d-vector positions."""

    times: np.ndarray
    positions: np.ndarray   # (T, d)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.positions.shape[0] != self.times.shape[0]:
            raise StructuralError("trajectory times and positions disagree in length")
        if self.times.size == 0:
            raise StructuralError("trajectory is empty")
        if np.any(np.diff(self.times) <= 0):
            raise StructuralError("trajectory times must be strictly increasing")
        if not np.all(np.isfinite(self.positions)):
            raise StructuralError("trajectory contains non-finite positions")

    def covers(self, t: float, tol: float = 1e-9) -> bool:
        return self.times[0] - tol <= t <= self.times[-1] + tol

    def position(self, t: float) -> np.ndarray:
        if not self.covers(t):
            raise StructuralError(
                f"time {t} outside trajectory cover "
                f"[{self.times[0]}, {self.times[-1]}]"
            )
        t = min(max(t, self.times[0]), self.times[-1])
        out = np.empty(self.positions.shape[1])
        for i in range(self.positions.shape[1]):
            out[i] = np.interp(t, self.times, self.positions[:, i])
        return out

    def append(self, t: float, x) -> None:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if t <= self.times[-1]:
            raise StructuralError("appended time must increase")
        self.times = np.append(self.times, t)
        self.positions = np.vstack([self.positions, x])


class IntermediatePropagator:
    def __init__(self, grid, w: BumpSpec, dt: float):
        self.grid = grid
        self.w = w
        self.dt = dt
        self._half_kin = np.exp(-0.5j * dt * grid.freq_sq_mesh())
        self._coords = grid.coord_mesh()

    def step(self, phi: Field, traj: DrivenTrajectory, t: float) -> Field:
        """Advance phi from t to t + dt with the potential frozen at t + dt/2."""
        if phi.grid != self.grid:
            raise StructuralError("field grid does not match propagator grid")
        if not (traj.covers(t) and traj.covers(t + self.dt)):
            raise StructuralError(
                f"window [{t}, {t + self.dt}] not covered by the driving trajectory"
            )
        center = traj.position(t + 0.5 * self.dt)
        disp = wrap_displacement(center - self._coords, self.grid.box)
        pot_phase = np.exp(-1j * self.dt * bump_eval(self.w, disp))
        spec = sfft.fftn(phi.values, norm="ortho", workers=-1)
        spec *= self._half_kin
        vals = sfft.ifftn(spec, norm="ortho", workers=-1, overwrite_x=True)
        vals *= pot_phase
        spec = sfft.fftn(vals, norm="ortho", workers=-1, overwrite_x=True)
        spec *= self._half_kin
        vals = sfft.ifftn(spec, norm="ortho", workers=-1, overwrite_x=True)
        return Field(self.grid, vals)

    def run(self, phi: Field, traj: DrivenTrajectory, t: float, n_steps: int) -> Field:
        for i in range(n_steps):
            phi = self.step(phi, traj, t + i * self.dt)
        return phi


def intermediate_step(
    phi: Field, traj: DrivenTrajectory, t: float, dt: float, w: BumpSpec
) -> Field:
    return IntermediatePropagator(phi.grid, w, dt).step(phi, traj, t)


def free_evolution(phi0: Field, t: float) -> Field:
    """exp(i Lap t) phi0, evaluated exactly in one spectral shot."""
    grid = phi0.grid
    spec = sfft.fftn(phi0.values, norm="ortho", workers=-1)
    spec *= np.exp(-1j * t * grid.freq_sq_mesh())
    return Field(grid, sfft.ifftn(spec, norm="ortho", workers=-1, overwrite_x=True))


@dataclass(frozen=True)
class HartreeVsFree:
    free_linf: float   # sup norm of the freely evolved initial state
    diff_l2: float     # L2 distance of the driven field from the free one


def hartree_vs_free(phi_t: Field, phi0: Field, t: float) -> HartreeVsFree:
    if phi_t.grid != phi0.grid:
        raise StructuralError("fields live on different grids")
    free = free_evolution(phi0, t)
    diff = phi_t.values - free.values
    cv = phi_t.grid.cell_volume
    return HartreeVsFree(
        free_linf=float(np.max(np.abs(free.values))),
        diff_l2=float(np.sqrt(cv * np.sum(np.abs(diff) ** 2))),
    )
