"""Physical configuration, smooth bump potentials, and admissible initial states."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import StructuralError, ValidationError
from .fields import (
    Field,
    Grid,
    ManyBodyField,
    fourier_l1,
    fourier_l1_gradient,
    memory_cap_samples,
    position_moments,
    momentum_moments,
)


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class BumpSpec:
    """Standard smooth bump: amplitude at the center, support radius ``radius``."""

    amplitude: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError(f"bump radius must be positive, got {self.radius}")


def _point_array(x) -> np.ndarray:
    """Coerce input to shape (..., dim); scalars become 1-D points."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


def bump_eval(spec: BumpSpec, x):
    """w0 * exp(1 - 1/(1 - |x/r|^2)) inside |x| < r, zero outside.

    ``x`` has the spatial components along its last axis; a scalar is read
    as a 1-D point.  Smooth (C-infinity) across the support boundary.
    """
    pts = _point_array(x)
    lead = pts.shape[:-1]
    flat = pts.reshape(-1, pts.shape[-1])
    s = np.sum((flat / spec.radius) ** 2, axis=-1)
    out = np.zeros(s.shape)
    inside = s < 1.0
    out[inside] = spec.amplitude * np.exp(1.0 - 1.0 / (1.0 - s[inside]))
    out = out.reshape(lead)
    return float(out) if out.ndim == 0 else out


def bump_grad(spec: BumpSpec, x) -> np.ndarray:
    """Analytic gradient of ``bump_eval``, shape (..., dim)."""
    pts = _point_array(x)
    lead = pts.shape[:-1]
    dim = pts.shape[-1]
    flat = pts.reshape(-1, dim)
    s = np.sum((flat / spec.radius) ** 2, axis=-1)
    out = np.zeros_like(flat)
    inside = s < 1.0
    one_minus = 1.0 - s[inside]
    factor = (
        spec.amplitude
        * np.exp(1.0 - 1.0 / one_minus)
        * (-2.0 / (spec.radius ** 2 * one_minus ** 2))
    )
    out[inside] = factor[:, None] * flat[inside]
    return out.reshape(lead + (dim,))


def wrap_displacement(disp: np.ndarray, box: float) -> np.ndarray:
    """Minimal-image displacement: wrap each component into [-box/2, box/2)."""
    return (disp + 0.5 * box) % box - 0.5 * box


def potential_on_grid(spec: BumpSpec, grid: Grid, center=None) -> np.ndarray:
    """Sample spec(x - center) on the grid with periodic minimal-image distance."""
    pts = grid.coord_mesh()
    if center is not None:
        pts = wrap_displacement(pts - np.asarray(center, dtype=float), grid.box)
    return bump_eval(spec, pts)


def potential_gradient_on_grid(spec: BumpSpec, grid: Grid) -> np.ndarray:
    """Sample grad spec at grid points, shape grid.shape + (d,)."""
    return bump_grad(spec, grid.coord_mesh())


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TracerSpec:
    """Initial tracer wave packet.

    ``sigma`` is the squared position spread (per-axis variance) of the
    packet; when omitted it defaults to rho**(-gamma).  The packet carries
    mean momentum rho * v0 so its mean velocity is v0.
    """

    x0: tuple
    v0: tuple
    sigma: Optional[float] = None
    gamma: float = 0.5


@dataclass(frozen=True)
class GridSpec:
    n: int
    box: float


@dataclass(frozen=True)
class Potentials:
    V: BumpSpec
    W: BumpSpec
    I: Optional[BumpSpec] = None


@dataclass(frozen=True)
class VariantFlags:
    inhomogeneity_at_X: bool = False
    m_tracers: int = 1


@dataclass(frozen=True)
class ModelConfig:
    d: int
    N: int
    lambda_vol: float
    delta: float
    tracer: TracerSpec
    potentials: Potentials
    grid: GridSpec
    dt: float
    t_end: float
    variant_flags: VariantFlags = field(default_factory=VariantFlags)
    stride: int = 10

    def __post_init__(self):
        if self.N < 1:
            raise ValidationError(f"N must be >= 1, got {self.N}")
        if not self.lambda_vol > 0:
            raise ValidationError(f"lambda_vol must be positive, got {self.lambda_vol}")
        if self.rho <= 1.0:
            raise ValidationError(
                f"rho = N/lambda_vol = {self.rho} must exceed 1"
            )
        if not 0.0 < self.delta <= 1.0:
            raise ValidationError(f"delta must be in (0, 1], got {self.delta}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ValidationError(f"t_end must be >= 0, got {self.t_end}")
        if self.stride < 1:
            raise ValidationError(f"stride must be >= 1, got {self.stride}")
        if self.variant_flags.m_tracers < 1:
            raise ValidationError("m_tracers must be >= 1")
        if len(self.tracer.x0) != self.d or len(self.tracer.v0) != self.d:
            raise ValidationError("tracer x0/v0 must have one component per dimension")
        side = self.lambda_side
        margin = 0.5 * (self.grid.box - side)
        if margin < 2.0 * self.potentials.W.radius:
            raise ValidationError(
                f"gas cube side {side:.4g} leaves margin {margin:.4g} in box "
                f"{self.grid.box}; need >= 2 * W radius = {2 * self.potentials.W.radius:.4g}"
            )

    @property
    def rho(self) -> float:
        return self.N / self.lambda_vol

    @property
    def lambda_side(self) -> float:
        return self.lambda_vol ** (1.0 / self.d)

    @property
    def sigma(self) -> float:
        if self.tracer.sigma is not None:
            return self.tracer.sigma
        return self.rho ** (-self.tracer.gamma)

    def make_grid(self) -> Grid:
        return Grid(d=self.d, n=self.grid.n, box=self.grid.box)

    def many_body_samples(self) -> int:
        return self.grid.n ** (self.d * (self.N + 1))


# Tensor-grid sizes beyond which the many-body propagation is not attempted,
# independent of the raw memory cap: d=1 up to N=3, d=2 only N=1.
_MICRO_ENVELOPE = {(1, 1): 128, (1, 2): 128, (1, 3): 32, (2, 1): 128}


def micro_feasible(cfg: ModelConfig) -> tuple[bool, str]:
    """Whether the (N+1)-body propagation is within the desk-scale envelope."""
    if cfg.variant_flags.m_tracers != 1:
        return False, "micro_multi_tracer_out_of_scope"
    n_max = _MICRO_ENVELOPE.get((cfg.d, cfg.N))
    if n_max is None:
        return False, f"micro_envelope_excludes_d{cfg.d}_N{cfg.N}"
    if cfg.grid.n > n_max:
        return False, f"micro_envelope_n_limit_{n_max}"
    if cfg.many_body_samples() > memory_cap_samples():
        return False, "memory_cap_exceeded"
    return True, ""


# ---------------------------------------------------------------------------
# initial states


@dataclass(frozen=True)
class TracerState:
    field: Field
    var_x: float          # measured <|x - <x>|^2>
    var_v: float          # measured <|(p - <p>)/rho|^2>
    spread: float         # var_x + var_v
    c_delta: float        # spread * rho**delta, the recorded constant


def build_tracer_state(cfg: ModelConfig) -> TracerState:
    """Normalized Gaussian packet at x0 with mean momentum rho*v0 and variance sigma.

    The grid must resolve the packet width sqrt(sigma) with at least 6 cells.
    """
    grid = cfg.make_grid()
    sigma = cfg.sigma
    width = float(np.sqrt(sigma))
    if width < 6.0 * grid.h:
        raise ValidationError(
            f"packet width {width:.4g} under-resolved: need >= 6 cells, "
            f"h = {grid.h:.4g}"
        )
    x0 = np.asarray(cfg.tracer.x0, dtype=float)
    v0 = np.asarray(cfg.tracer.v0, dtype=float)
    p0 = cfg.rho * v0
    pts = grid.coord_mesh()
    centered = pts - x0
    envelope = np.exp(-np.sum(centered ** 2, axis=-1) / (4.0 * sigma))
    phase = np.exp(1j * np.tensordot(pts, p0, axes=([-1], [0])))
    values = envelope * phase
    f = Field(grid, values)
    f = Field(grid, f.values / f.l2_norm())

    pos = position_moments(f)
    mom = momentum_moments(f)
    var_v = mom.var / cfg.rho ** 2
    spread = pos.var + var_v
    return TracerState(
        field=f,
        var_x=pos.var,
        var_v=var_v,
        spread=spread,
        c_delta=spread * cfg.rho ** cfg.delta,
    )


def _smoothstep(u: np.ndarray) -> np.ndarray:
    """C-infinity monotone step: 0 for u<=0, 1 for u>=1."""
    def f(v):
        out = np.zeros_like(v)
        pos = v > 0
        out[pos] = np.exp(-1.0 / v[pos])
        return out

    u = np.clip(u, 0.0, 1.0)
    a = f(u)
    b = f(1.0 - u)
    return a / (a + b)


@dataclass(frozen=True)
class GasState:
    phi0: Field            # L2-normalized flat state supported in the gas cube
    phi_ref0: Field        # sqrt(lambda_vol) * phi0, sup-norm O(1)
    fourier_l1_phi0: float
    fourier_l1_grad_phi0: float
    plateau_sup: float     # max |phi_ref0|


def build_gas_state(cfg: ModelConfig) -> GasState:
    """Mollified indicator of the centered cube of volume lambda_vol.

    Plateau value lambda_vol**(-1/2) before normalization; the roll-off to
    zero takes 10% of the cube side, entirely inside the cube.
    """
    grid = cfg.make_grid()
    side = cfg.lambda_side
    w = 0.1 * side
    coords = np.abs(grid.axis_coords())
    profile = _smoothstep((0.5 * side - coords) / w)
    values = np.ones(grid.shape, dtype=np.complex128)
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.n
        values = values * profile.reshape(shape)
    phi0 = Field(grid, values)
    nrm = phi0.l2_norm()
    if nrm == 0.0:
        raise ValidationError("gas cube is not resolved by the grid")
    phi0 = Field(grid, phi0.values / nrm)
    phi_ref0 = Field(grid, np.sqrt(cfg.lambda_vol) * phi0.values)
    return GasState(
        phi0=phi0,
        phi_ref0=phi_ref0,
        fourier_l1_phi0=fourier_l1(phi0),
        fourier_l1_grad_phi0=fourier_l1_gradient(phi0),
        plateau_sup=float(np.max(np.abs(phi_ref0.values))),
    )


def build_product_state(chi: Field, phi: Field, n_gas: int) -> ManyBodyField:
    """Tensor product chi(x) * prod_k phi(y_k) on the (N+1)-coordinate grid."""
    if chi.grid != phi.grid:
        raise StructuralError("tracer and gas factors live on different grids")
    values = chi.values
    for _ in range(n_gas):
        values = np.multiply.outer(values, phi.values)
    state = ManyBodyField(chi.grid, n_gas, values)
    nrm = state.l2_norm()
    if abs(nrm - 1.0) > 1e-8:
        raise ValidationError(f"product state norm {nrm:.12f} deviates from 1")
    return state
