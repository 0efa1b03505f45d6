"""Periodic grids, complex scalar fields, and the spectral/projector algebra.

Conventions used throughout:

* The box is the cube [-box/2, box/2)^d sampled at n points per axis,
  h = box/n, cell_volume = h^d.
* Discrete L2 inner product: <f, g> = cell_volume^m * sum(conj(f) * g),
  with m the number of d-dimensional coordinates a field carries.
* Spectral transforms are unitary (norm="ortho"); the frequency of index j
  is k_j = 2*pi*wrap(j)/box with wrap(j) in {-n/2, ..., n/2-1}.
* ``fourier_l1`` carries the measure weight (2*pi/n)^(d/2) so it reproduces
  the continuum L1 norm of the unitary-convention Fourier transform,
  i.e. sum_j |f_hat(k_j)| * (2*pi/box)^d with f_hat(k) =
  (2*pi)^(-d/2) * integral f(x) exp(-i k x) dx.  With this convention the
  sup-norm bound  max|f| <= (2*pi)^(-d/2) * fourier_l1(f)  is exact on the
  grid, which the bound-margin diagnostics rely on.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.fft as sfft

from .errors import NumericalError, StructuralError, ValidationError

DEFAULT_MEMORY_CAP_SAMPLES = 2 ** 28
MEMORY_CAP_ENV = "SIM_MEMORY_CAP_SAMPLES"


def memory_cap_samples() -> int:
    """Current cap on ManyBodyField sample count (env-overridable)."""
    raw = os.environ.get(MEMORY_CAP_ENV)
    if raw is None:
        return DEFAULT_MEMORY_CAP_SAMPLES
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValidationError(f"{MEMORY_CAP_ENV}={raw!r} is not an integer") from exc
    if cap <= 0:
        raise ValidationError(f"{MEMORY_CAP_ENV} must be positive, got {cap}")
    return cap


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid: d axes, n points each, side length ``box``."""

    d: int
    n: int
    box: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValidationError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 8 or self.n & (self.n - 1) != 0:
            raise ValidationError(f"n must be a power of two >= 8, got {self.n}")
        if not self.box > 0:
            raise ValidationError(f"box must be positive, got {self.box}")

    @property
    def h(self) -> float:
        return self.box / self.n

    @property
    def cell_volume(self) -> float:
        return (self.box / self.n) ** self.d

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n ** self.d

    def axis_coords(self) -> np.ndarray:
        """Sample coordinates along one axis, centered: -box/2 + j*h."""
        return -0.5 * self.box + self.h * np.arange(self.n)

    def axis_freqs(self) -> np.ndarray:
        """Angular frequencies 2*pi*wrap(j)/box in FFT storage order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    def coord_mesh(self) -> np.ndarray:
        """Coordinates of every grid point, shape grid.shape + (d,)."""
        axes = [self.axis_coords()] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def freq_sq_mesh(self) -> np.ndarray:
        """|k|^2 at every grid point, shape grid.shape."""
        k = self.axis_freqs()
        out = np.zeros(self.shape)
        for axis in range(self.d):
            shape = [1] * self.d
            shape[axis] = self.n
            out = out + (k ** 2).reshape(shape)
        return out


def _as_complex(values) -> np.ndarray:
    return np.ascontiguousarray(values, dtype=np.complex128)


@dataclass(frozen=True, eq=False)
class Field:
    """One-particle complex field sampled on a grid.

    ``values`` has shape grid.shape (row-major over axes).  Treated as
    immutable: operations always allocate fresh arrays.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = _as_complex(self.values)
        if vals.shape != self.grid.shape:
            raise StructuralError(
                f"field shape {vals.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(vals.view(np.float64))):
            raise ValidationError("field contains non-finite samples")
        object.__setattr__(self, "values", vals)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.cell_volume * np.sum(np.abs(self.values) ** 2)))

    def is_normalized(self, tol: float = 1e-10) -> bool:
        return abs(self.l2_norm() - 1.0) <= tol


@dataclass(frozen=True, eq=False)
class ManyBodyField:
    """Complex field on the tensor grid of (tracer + n_gas) coordinates.

    Coordinate order is (x, y_1, ..., y_N); each coordinate contributes d
    consecutive axes of length n.  Construction fails fast once the sample
    count exceeds the configured memory cap.
    """

    grid: Grid
    n_gas: int
    values: np.ndarray

    def __post_init__(self):
        if self.n_gas < 0:
            raise ValidationError(f"n_gas must be >= 0, got {self.n_gas}")
        total_axes = self.grid.d * (self.n_gas + 1)
        expected = (self.grid.n,) * total_axes
        samples = self.grid.n ** total_axes
        cap = memory_cap_samples()
        if samples > cap:
            raise StructuralError(
                f"many-body field needs {samples} complex samples, cap is {cap} "
                f"(override with {MEMORY_CAP_ENV})"
            )
        vals = _as_complex(self.values)
        if vals.shape != expected:
            raise StructuralError(
                f"many-body field shape {vals.shape}, expected {expected}"
            )
        object.__setattr__(self, "values", vals)

    @property
    def n_coords(self) -> int:
        return self.n_gas + 1

    def coord_axes(self, coord: int) -> tuple:
        """Array axes of coordinate ``coord`` (0 = tracer, k>=1 = gas k)."""
        d = self.grid.d
        return tuple(range(coord * d, (coord + 1) * d))

    def l2_norm(self) -> float:
        cv = self.grid.cell_volume
        return float(np.sqrt(cv ** self.n_coords * np.sum(np.abs(self.values) ** 2)))

    def exchange_defect(self, i: int = 1, j: int = 2) -> float:
        """L2 distance between the state and itself with gas slots i, j swapped."""
        if not (1 <= i <= self.n_gas and 1 <= j <= self.n_gas):
            raise StructuralError(f"gas indices {i},{j} out of range 1..{self.n_gas}")
        swapped = np.moveaxis(
            self.values, self.coord_axes(i) + self.coord_axes(j),
            self.coord_axes(j) + self.coord_axes(i),
        )
        diff = self.values - swapped
        cv = self.grid.cell_volume
        return float(np.sqrt(cv ** self.n_coords * np.sum(np.abs(diff) ** 2)))


@dataclass(eq=False)
class DensityMatrix:
    """Kernel A(y, y') of an integral operator on one-particle fields.

    The operator action is (A eta)(y) = cell_volume * sum_{y'} A(y, y') eta(y').
    """

    grid: Grid
    entries: np.ndarray

    HERMITIAN_RTOL = 1e-8

    def __post_init__(self):
        m = self.grid.size
        entries = _as_complex(self.entries).reshape(m, m)
        scale = np.linalg.norm(entries)
        if scale > 0:
            defect = np.linalg.norm(entries - entries.conj().T) / scale
            if defect > self.HERMITIAN_RTOL:
                raise ValidationError(
                    f"density matrix not Hermitian: relative defect {defect:.3e}"
                )
        self.entries = entries

    def __sub__(self, other: "DensityMatrix") -> "DensityMatrix":
        if other.grid != self.grid:
            raise StructuralError("density matrices live on different grids")
        return DensityMatrix(self.grid, self.entries - other.entries)

    def trace(self) -> float:
        return float(np.real(self.grid.cell_volume * np.trace(self.entries)))

    def apply(self, f: Field) -> Field:
        if f.grid != self.grid:
            raise StructuralError("field grid does not match density matrix grid")
        out = self.grid.cell_volume * (self.entries @ f.values.ravel())
        return Field(self.grid, out.reshape(self.grid.shape))


def outer_density_matrix(f: Field) -> DensityMatrix:
    """Rank-one kernel |f><f|."""
    v = f.values.ravel()
    return DensityMatrix(f.grid, np.outer(v, v.conj()))


# ---------------------------------------------------------------------------
# spectral transforms


def _fftn(values: np.ndarray, inverse: bool) -> np.ndarray:
    fn = sfft.ifftn if inverse else sfft.fftn
    return fn(values, norm="ortho", workers=-1)


def spectral_transform(f, direction: str = "forward"):
    """Unitary DFT over all axes of a Field or ManyBodyField."""
    if direction not in ("forward", "inverse"):
        raise StructuralError(f"unknown direction {direction!r}")
    inverse = direction == "inverse"
    if isinstance(f, Field):
        return Field(f.grid, _fftn(f.values, inverse))
    if isinstance(f, ManyBodyField):
        return ManyBodyField(f.grid, f.n_gas, _fftn(f.values, inverse))
    raise StructuralError(f"cannot transform object of type {type(f).__name__}")


def inner(f, g) -> complex:
    """Discrete L2 inner product, conjugate-linear in the first argument."""
    if type(f) is not type(g):
        raise StructuralError("inner product requires two fields of the same kind")
    if f.grid != g.grid:
        raise StructuralError("inner product requires a shared grid")
    if isinstance(f, ManyBodyField):
        if f.n_gas != g.n_gas:
            raise StructuralError("many-body fields have different particle numbers")
        m = f.n_coords
    else:
        m = 1
    return complex(f.grid.cell_volume ** m * np.vdot(f.values, g.values))


# ---------------------------------------------------------------------------
# norms


@dataclass(frozen=True)
class FieldNorms:
    l2: float
    linf: float
    fourier_l1: float
    grad_linf: float


def _fourier_l1_weight(grid: Grid) -> float:
    return (2.0 * np.pi / grid.n) ** (grid.d / 2.0)


def fourier_l1(f: Field) -> float:
    """Mode-sum sum_j |f_hat(k_j)| * (2*pi/box)^d in the unitary convention."""
    spec = _fftn(f.values, inverse=False)
    return float(_fourier_l1_weight(f.grid) * np.sum(np.abs(spec)))


def fourier_l1_gradient(f: Field) -> float:
    """Same mode sum weighted by |k|; bounds max|grad f| * (2*pi)^(d/2)."""
    spec = _fftn(f.values, inverse=False)
    kabs = np.sqrt(f.grid.freq_sq_mesh())
    return float(_fourier_l1_weight(f.grid) * np.sum(kabs * np.abs(spec)))


def spectral_gradient(f: Field) -> np.ndarray:
    """Gradient of the trigonometric interpolant, shape grid.shape + (d,)."""
    grid = f.grid
    spec = _fftn(f.values, inverse=False)
    k = grid.axis_freqs()
    comps = []
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.n
        comps.append(_fftn(1j * k.reshape(shape) * spec, inverse=True))
    return np.stack(comps, axis=-1)


def grad_linf(f: Field) -> float:
    g = spectral_gradient(f)
    return float(np.max(np.sqrt(np.sum(np.abs(g) ** 2, axis=-1))))


def norms(f: Field) -> FieldNorms:
    return FieldNorms(
        l2=f.l2_norm(),
        linf=float(np.max(np.abs(f.values))),
        fourier_l1=fourier_l1(f),
        grad_linf=grad_linf(f),
    )


def sup_norm_bound(f_l1: float, d: int) -> float:
    """Exact grid inequality max|f| <= (2*pi)^(-d/2) * fourier_l1(f)."""
    return (2.0 * np.pi) ** (-d / 2.0) * f_l1


def mass_near_boundary(f: Field, shell: float = 0.05) -> float:
    """Fraction of |f|^2 mass within ``shell``*box of the box boundary."""
    grid = f.grid
    coords = np.abs(grid.axis_coords())
    edge = 0.5 * grid.box * (1.0 - 2.0 * shell)
    outside = coords >= edge
    dens = np.abs(f.values) ** 2
    total = float(np.sum(dens))
    if total == 0.0:
        return 0.0
    mask = np.zeros(grid.shape, dtype=bool)
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.n
        mask |= outside.reshape(shape)
    return float(np.sum(dens[mask]) / total)


# ---------------------------------------------------------------------------
# projectors


def project(phi: Field, psi: ManyBodyField, k: int, which: str) -> ManyBodyField:
    """Apply the rank-one projector p_k onto ``phi`` in gas slot k, or q_k = 1 - p_k."""
    if which not in ("p", "q"):
        raise StructuralError(f"projector kind must be 'p' or 'q', got {which!r}")
    if not (1 <= k <= psi.n_gas):
        raise StructuralError(f"gas index {k} out of range 1..{psi.n_gas}")
    if phi.grid != psi.grid:
        raise StructuralError("projector field and state live on different grids")
    if abs(phi.l2_norm() - 1.0) > 1e-6:
        raise ValidationError(
            f"projector direction is not normalized: |phi|_2 = {phi.l2_norm():.12f}"
        )
    d = phi.grid.d
    axes = psi.coord_axes(k)
    overlap = phi.grid.cell_volume * np.tensordot(
        phi.values.conj(), psi.values, axes=(tuple(range(d)), axes)
    )
    projected = np.multiply.outer(phi.values, overlap)
    projected = np.moveaxis(projected, tuple(range(d)), axes)
    if which == "q":
        projected = psi.values - projected
    return ManyBodyField(psi.grid, psi.n_gas, projected)


# ---------------------------------------------------------------------------
# convolution


def convolve(f: Field, g: Field) -> Field:
    """Periodic convolution (f*g)(x) = cell_volume * sum_y f(x-y) g(y).

    Computed spectrally; the ifftshift re-indexes f from centered coordinates
    to displacement (lattice) coordinates so the result is sampled at the
    same centered points as the inputs.
    """
    if f.grid != g.grid:
        raise StructuralError("convolution requires a shared grid")
    grid = f.grid
    f_disp = np.fft.ifftshift(f.values)
    spec = _fftn(f_disp, inverse=False) * _fftn(g.values, inverse=False)
    scale = grid.cell_volume * grid.n ** (grid.d / 2.0)
    return Field(grid, scale * _fftn(spec, inverse=True))


class ConvolutionKernel:
    """Pre-transformed convolution kernel for repeated (kernel * density)(x) evaluations."""

    def __init__(self, grid: Grid, kernel_values: np.ndarray):
        self.grid = grid
        self._spec = _fftn(np.fft.ifftshift(_as_complex(kernel_values)), inverse=False)
        self._scale = grid.cell_volume * grid.n ** (grid.d / 2.0)

    def apply(self, density: np.ndarray) -> np.ndarray:
        spec = self._spec * _fftn(_as_complex(density), inverse=False)
        return self._scale * _fftn(spec, inverse=True)


# ---------------------------------------------------------------------------
# interpolation


def interpolate(f_values: np.ndarray, grid: Grid, point: np.ndarray):
    """d-linear periodic interpolation of grid samples at an off-grid point."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if point.shape != (grid.d,):
        raise StructuralError(f"point shape {point.shape}, expected ({grid.d},)")
    frac = (point + 0.5 * grid.box) / grid.h
    base = np.floor(frac).astype(int)
    w = frac - base
    out = 0.0
    for corner in range(2 ** grid.d):
        idx = []
        weight = 1.0
        for axis in range(grid.d):
            bit = (corner >> axis) & 1
            idx.append((base[axis] + bit) % grid.n)
            weight *= w[axis] if bit else (1.0 - w[axis])
        out = out + weight * f_values[tuple(idx)]
    return out


# ---------------------------------------------------------------------------
# operator norm


def operator_norm(a: DensityMatrix, rtol: float = 1e-8, max_iter: int = 10_000) -> float:
    """Largest singular value of the integral operator with kernel ``a``.

    Power iteration on A^dagger A with a deterministic all-ones start vector.
    Raises NumericalError (carrying the last iterate and residual) on
    non-convergence.
    """
    m = a.entries
    if not np.all(np.isfinite(m.view(np.float64))):
        raise ValidationError("operator norm of a matrix with non-finite entries")
    cv = a.grid.cell_volume
    size = m.shape[0]
    v = np.ones(size, dtype=np.complex128) / np.sqrt(size)
    lam = 0.0
    residual = np.inf
    for _ in range(max_iter):
        w = m.conj().T @ (m @ v)
        lam = float(np.real(np.vdot(v, w)))   # Rayleigh quotient of the PSD A^dag A
        if lam < 1e-300:
            return 0.0
        residual = float(np.linalg.norm(w - lam * v))
        if residual <= rtol * lam:
            return cv * float(np.sqrt(lam))
        v = w / float(np.linalg.norm(w))
    raise NumericalError(
        f"power iteration did not converge in {max_iter} iterations",
        last_value=cv * float(np.sqrt(lam)),
        residual=residual,
    )


# ---------------------------------------------------------------------------
# moments of one-particle fields (used by the state builders and observables)


@dataclass(frozen=True)
class Moments:
    mean: np.ndarray   # (d,)
    var: float         # total variance <|x - <x>|^2>


def position_moments(f: Field) -> Moments:
    grid = f.grid
    dens = np.abs(f.values) ** 2 * grid.cell_volume
    total = float(np.sum(dens))
    coords = grid.coord_mesh()
    mean = np.tensordot(dens, coords, axes=(tuple(range(grid.d)), tuple(range(grid.d)))) / total
    centered = coords - mean
    var = float(np.sum(dens * np.sum(centered ** 2, axis=-1)) / total)
    return Moments(mean=mean, var=var)


def momentum_moments(f: Field) -> Moments:
    grid = f.grid
    spec = _fftn(f.values, inverse=False)
    dens = np.abs(spec) ** 2 * grid.cell_volume
    total = float(np.sum(dens))
    k = grid.axis_freqs()
    mean = np.empty(grid.d)
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.n
        mean[axis] = float(np.sum(dens * k.reshape(shape)) / total)
    var = 0.0
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.n
        var += float(np.sum(dens * (k.reshape(shape) - mean[axis]) ** 2) / total)
    return Moments(mean=mean, var=var)
