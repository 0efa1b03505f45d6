import numpy as np
import pytest

from tracergas.fields import Field, Grid, ManyBodyField
from tracergas.model import (
    BumpSpec,
    GridSpec,
    ModelConfig,
    Potentials,
    TracerSpec,
)


@pytest.fixture
def grid64():
    return Grid(d=1, n=64, box=8.0)


@pytest.fixture
def grid16():
    return Grid(d=1, n=16, box=4.0)


def random_field(grid, seed=0):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    return Field(grid, vals)


def random_unit_field(grid, seed=0):
    f = random_field(grid, seed)
    return Field(grid, f.values / f.l2_norm())


def random_many_body(grid, n_gas, seed=0, normalized=True):
    rng = np.random.default_rng(seed)
    shape = (grid.n,) * (grid.d * (n_gas + 1))
    vals = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    psi = ManyBodyField(grid, n_gas, vals)
    if normalized:
        psi = ManyBodyField(grid, n_gas, psi.values / psi.l2_norm())
    return psi


def make_config(
    d=1,
    N=2,
    lambda_vol=1.0,
    delta=0.5,
    n=32,
    box=4.0,
    dt=0.005,
    t_end=0.2,
    v_amp=0.5,
    v_rad=2.0,
    w_amp=0.4,
    w_rad=0.5,
    x0=None,
    v0=None,
    sigma=None,
    gamma=0.5,
    stride=10,
    **kwargs,
):
    x0 = tuple([0.0] * d) if x0 is None else tuple(x0)
    v0 = tuple([0.0] * d) if v0 is None else tuple(v0)
    return ModelConfig(
        d=d,
        N=N,
        lambda_vol=lambda_vol,
        delta=delta,
        tracer=TracerSpec(x0=x0, v0=v0, sigma=sigma, gamma=gamma),
        potentials=Potentials(
            V=BumpSpec(v_amp, v_rad), W=BumpSpec(w_amp, w_rad)
        ),
        grid=GridSpec(n=n, box=box),
        dt=dt,
        t_end=t_end,
        stride=stride,
        **kwargs,
    )
