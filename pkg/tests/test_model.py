import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracergas.errors import ValidationError
from tracergas.fields import inner, project
from tracergas.harness import fit_loglog
from tracergas.model import (
    BumpSpec,
    build_gas_state,
    build_product_state,
    build_tracer_state,
    bump_eval,
    bump_grad,
)

from conftest import make_config


class TestBump:
    def test_center_value(self):
        spec = BumpSpec(amplitude=2.5, radius=1.0)
        assert bump_eval(spec, 0.0) == pytest.approx(2.5, abs=1e-14)

    def test_support_boundary(self):
        spec = BumpSpec(amplitude=1.0, radius=0.7)
        assert bump_eval(spec, 0.7) == 0.0
        assert bump_eval(spec, 1.3) == 0.0
        assert np.all(bump_grad(spec, np.array([0.7])) == 0.0)

    def test_half_radius_value(self):
        # [DERIVED] closed form at |x| = r/2: exp(1 - 1/(1 - 1/4)) = exp(-1/3)
        spec = BumpSpec(amplitude=1.0, radius=1.0)
        assert bump_eval(spec, 0.5) == pytest.approx(0.7165313105737893, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        spec = BumpSpec(amplitude=1.7, radius=1.3)
        rng = np.random.default_rng(42)
        h = 1e-5 * spec.radius
        for _ in range(100):
            x = rng.uniform(-1.5, 1.5, size=2)
            grad = bump_grad(spec, x)
            for axis in range(2):
                e = np.zeros(2)
                e[axis] = h
                fd = (bump_eval(spec, x + e) - bump_eval(spec, x - e)) / (2 * h)
                assert abs(fd - grad[axis]) < 1e-6

    @given(r=st.floats(0.2, 3.0), amp=st.floats(-2.0, 2.0))
    @settings(max_examples=25, deadline=None)
    def test_continuous_at_boundary(self, r, amp):
        spec = BumpSpec(amplitude=amp, radius=r)
        just_inside = bump_eval(spec, r * (1 - 1e-8))
        assert abs(just_inside) < 1e-6 * max(abs(amp), 1.0)


class TestTracerState:
    def test_centered_packet_moments(self):
        from tracergas.fields import momentum_moments, position_moments

        # sigma small enough that the packet tails vanish at the box edge
        cfg = make_config(d=1, N=2, n=128, box=8.0, x0=(0.0,), v0=(0.0,), sigma=0.25)
        state = build_tracer_state(cfg)
        pos = position_moments(state.field)
        mom = momentum_moments(state.field)
        assert abs(pos.mean[0]) < 1e-8
        assert abs(mom.mean[0]) < 1e-8

    def test_variance_matches_analytic(self):
        # packet exp(-x^2/(4*sigma)) has position variance exactly sigma
        cfg = make_config(d=1, N=2, n=128, box=8.0, sigma=0.25)
        state = build_tracer_state(cfg)
        assert abs(state.var_x - 0.25) < 1e-6
        # Heisenberg-conjugate momentum variance 1/(4*sigma), velocity /rho^2
        assert abs(state.var_v - 1.0 / (4 * 0.25 * cfg.rho ** 2)) < 1e-6

    def test_mean_velocity(self):
        cfg = make_config(d=1, N=2, n=128, box=8.0, v0=(0.3,), sigma=0.25)
        from tracergas.fields import momentum_moments

        state = build_tracer_state(cfg)
        mom = momentum_moments(state.field)
        assert abs(mom.mean[0] / cfg.rho - 0.3) < 1e-7

    def test_spread_scaling_under_rho_doubling(self):
        # [DERIVED] default sigma = rho**(-gamma), gamma = 1/2: the spread
        # var_x + var_v is dominated by var_x = rho**(-1/2), so doubling rho
        # scales it by 2**(-1/2)
        spreads = {}
        for n_gas in (2, 4):
            cfg = make_config(d=1, N=n_gas, lambda_vol=1.0, n=128, box=8.0)
            spreads[n_gas] = build_tracer_state(cfg).spread
        ratio = spreads[4] / spreads[2]
        assert abs(ratio - 2 ** -0.5) < 0.1 * 2 ** -0.5

    def test_recorded_constant(self):
        cfg = make_config(d=1, N=2, n=128, box=8.0)
        state = build_tracer_state(cfg)
        assert state.c_delta == pytest.approx(state.spread * cfg.rho ** cfg.delta)
        assert state.spread <= state.c_delta / cfg.rho ** cfg.delta + 1e-12

    def test_under_resolved_sigma_rejected(self):
        cfg = make_config(d=1, N=2, n=32, box=16.0, sigma=0.01)
        with pytest.raises(ValidationError):
            build_tracer_state(cfg)


class TestGasState:
    def test_normalized(self):
        cfg = make_config(d=1, N=2, n=128, box=8.0, lambda_vol=1.0)
        gas = build_gas_state(cfg)
        assert abs(gas.phi0.l2_norm() - 1.0) < 1e-10

    def test_plateau_sup_order_one(self):
        for lam, n_gas in ((1.0, 2), (4.0, 8)):
            cfg = make_config(
                d=1, N=n_gas, lambda_vol=lam, n=512, box=16.0, w_rad=0.5
            )
            gas = build_gas_state(cfg)
            assert 0.9 <= gas.plateau_sup <= 1.1

    def test_fourier_l1_lambda_scaling(self):
        # [DERIVED] sweep lambda_vol in {4, 8, 16, 32} and regress log-log;
        # the flat-state construction gives exponent -1/2 in d = 1
        lams = [4.0, 8.0, 16.0, 32.0]
        vals = []
        for lam in lams:
            cfg = make_config(
                d=1, N=int(2 * lam), lambda_vol=lam, n=2048, box=64.0, w_rad=0.5
            )
            vals.append(build_gas_state(cfg).fourier_l1_phi0)
        fit = fit_loglog(lams, vals)
        assert abs(fit.exponent - (-0.5)) < 0.1

    def test_grad_fourier_l1_decays_faster(self):
        # d=1 construction: gradient mode sum scales like lambda**(-3/2)
        lams = [4.0, 8.0, 16.0, 32.0]
        vals = []
        for lam in lams:
            cfg = make_config(
                d=1, N=int(2 * lam), lambda_vol=lam, n=2048, box=64.0, w_rad=0.5
            )
            vals.append(build_gas_state(cfg).fourier_l1_grad_phi0)
        fit = fit_loglog(lams, vals)
        assert fit.exponent < -1.0


class TestProductState:
    def test_inner_against_itself(self, grid16):
        cfg = make_config(d=1, N=1, n=64, box=4.0, lambda_vol=0.5, sigma=0.16)
        tracer = build_tracer_state(cfg)
        gas = build_gas_state(cfg)
        psi = build_product_state(tracer.field, gas.phi0, 1)
        assert abs(inner(psi, psi) - 1.0) < 1e-8

    def test_q1_annihilates(self):
        cfg = make_config(d=1, N=2, n=32, box=4.0, lambda_vol=1.0)
        tracer = build_tracer_state(cfg)
        gas = build_gas_state(cfg)
        psi = build_product_state(tracer.field, gas.phi0, 2)
        q1 = project(gas.phi0, psi, 1, "q")
        assert np.max(np.abs(q1.values)) < 1e-10

    def test_exchange_symmetry_exact(self):
        cfg = make_config(d=1, N=3, n=32, box=4.0, lambda_vol=1.0, sigma=0.6)
        tracer = build_tracer_state(cfg)
        gas = build_gas_state(cfg)
        psi = build_product_state(tracer.field, gas.phi0, 3)
        assert psi.exchange_defect(1, 3) < 1e-12


class TestConfigInvariants:
    def test_rho_must_exceed_one(self):
        with pytest.raises(ValidationError):
            make_config(d=1, N=1, lambda_vol=2.0)

    def test_gas_cube_margin(self):
        with pytest.raises(ValidationError):
            make_config(d=1, N=8, lambda_vol=3.5, box=4.0, w_rad=0.5)

    def test_rho_derived_exactly(self):
        cfg = make_config(d=1, N=3, lambda_vol=1.5)
        assert cfg.rho == 3 / 1.5
