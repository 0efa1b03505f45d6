import numpy as np
import pytest
from scipy.integrate import solve_ivp

from tracergas.errors import ValidityError
from tracergas.fields import Field
from tracergas.macro import (
    MacroPropagator,
    MacroState,
    initial_macro_state,
    macro_energy_report,
    propagate_phi_ref,
)
from tracergas.model import build_gas_state, bump_grad, VariantFlags

from conftest import make_config, random_unit_field


def fresh_macro(cfg, x0=None, v0=None):
    gas = build_gas_state(cfg)
    x0 = np.asarray(cfg.tracer.x0 if x0 is None else x0, dtype=float)
    v0 = np.asarray(cfg.tracer.v0 if v0 is None else v0, dtype=float)
    return initial_macro_state(cfg, x0, v0, gas.phi_ref0), gas


class TestPhiRef:
    def test_constant_field_unchanged(self, grid64):
        f = Field(grid64, np.full(grid64.shape, 0.7 + 0.1j))
        out = propagate_phi_ref(f, 0.37)
        assert np.max(np.abs(out.values - f.values)) < 1e-13

    def test_norm_constant_over_1000_steps(self, grid64):
        f = random_unit_field(grid64, seed=1)
        for _ in range(1000):
            f = propagate_phi_ref(f, 0.01)
        assert abs(f.l2_norm() - 1.0) < 1e-10

    def test_plane_wave_phase_advance(self, grid64):
        k1 = 2 * np.pi * 3 / grid64.box
        f = Field(grid64, np.exp(1j * k1 * grid64.axis_coords()))
        dt = 0.2
        out = propagate_phi_ref(f, dt)
        expected = np.exp(-1j * k1 ** 2 * dt) * f.values
        assert np.max(np.abs(out.values - expected)) < 1e-12


class TestDecoupled:
    def test_w_zero_eps_identically_zero(self):
        cfg = make_config(d=1, N=2, n=64, box=8.0, w_amp=0.0, v_amp=0.8,
                          dt=0.005, t_end=0.3)
        state, _ = fresh_macro(cfg, x0=(0.1,), v0=(0.0,))
        prop = MacroPropagator(cfg)
        for _ in range(60):
            state = prop.step(state)
            assert np.max(np.abs(state.eps.values)) == 0.0

    def test_w_zero_newton_ode_oracle(self):
        # [DERIVED] high-accuracy RK45 integration of xddot = -V'(x)
        cfg = make_config(d=1, N=2, n=64, box=8.0, w_amp=0.0, v_amp=0.8,
                          v_rad=2.0, dt=0.002, t_end=0.5)
        x0, v0 = 0.3, 0.2
        state, _ = fresh_macro(cfg, x0=(x0,), v0=(v0,))
        prop = MacroPropagator(cfg)
        state = prop.run(state, 250)

        def rhs(t, y):
            return [y[1], -bump_grad(cfg.potentials.V, np.array([y[0]]))[0]]

        sol = solve_ivp(rhs, (0, 0.5), [x0, v0], rtol=1e-11, atol=1e-13,
                        dense_output=True)
        ref_x, ref_v = sol.y[0, -1], sol.y[1, -1]
        assert abs(state.X[0, 0] - ref_x) < 5e-6
        assert abs(state.Xdot[0, 0] - ref_v) < 5e-6

    def test_fully_free_motion_exact(self):
        cfg = make_config(d=1, N=2, n=32, box=8.0, w_amp=0.0, v_amp=0.0,
                          dt=0.01, t_end=0.5)
        state, _ = fresh_macro(cfg, x0=(0.2,), v0=(0.5,))
        prop = MacroPropagator(cfg)
        state = prop.run(state, 50)
        assert state.X[0, 0] == pytest.approx(0.2 + 0.5 * 0.5, abs=1e-13)
        assert state.Xdot[0, 0] == pytest.approx(0.5, abs=1e-13)


class TestCoupled:
    def _run_at_dt(self, dt):
        cfg = make_config(d=1, N=2, n=128, box=8.0, w_amp=0.5, v_amp=0.5,
                          dt=dt, t_end=0.25, x0=(0.2,), v0=(0.3,))
        state, _ = fresh_macro(cfg)
        prop = MacroPropagator(cfg)
        state = prop.run(state, int(round(0.25 / dt)))
        return np.array([state.X[0, 0], state.Xdot[0, 0], state.eps.l2_norm()])

    def test_richardson_order_two(self):
        # [DERIVED] self-convergence of (X, Xdot, |eps|_2) under dt halving
        v1 = self._run_at_dt(0.01)
        v2 = self._run_at_dt(0.005)
        v3 = self._run_at_dt(0.0025)
        order = np.log2(np.linalg.norm(v1 - v2) / np.linalg.norm(v2 - v3))
        assert order == pytest.approx(2.0, abs=0.3)

    def test_eps_bound_at_strides(self):
        # |eps_t|_2 <= t * |W|_2 * sup_s |phi_ref_s|_inf + 1e-6
        cfg = make_config(d=1, N=2, n=128, box=8.0, w_amp=0.6, v_amp=0.4,
                          dt=0.005, t_end=0.5)
        state, gas = fresh_macro(cfg)
        prop = MacroPropagator(cfg)
        from tracergas.diagnostics import model_norms

        nw = model_norms(cfg, gas.phi0, gas.fourier_l1_phi0, gas.fourier_l1_grad_phi0)
        c_ref = float(np.max(np.abs(gas.phi_ref0.values)))
        for step in range(1, 101):
            state = prop.step(state)
            c_ref = max(c_ref, float(np.max(np.abs(state.phi_ref.values))))
            if step % 10 == 0:
                assert state.eps.l2_norm() <= state.t * nw.w_l2 * c_ref + 1e-6

    def test_overlap_bound_at_strides(self):
        # [DERIVED] explicit chain with measured constants
        cfg = make_config(d=1, N=2, n=128, box=8.0, w_amp=0.6, v_amp=0.4,
                          dt=0.005, t_end=0.5)
        state, gas = fresh_macro(cfg)
        prop = MacroPropagator(cfg)
        from tracergas.diagnostics import model_norms

        nw = model_norms(cfg, gas.phi0, gas.fourier_l1_phi0, gas.fourier_l1_grad_phi0)
        c_ref = float(np.max(np.abs(gas.phi_ref0.values)))
        c_eps = 0.0
        cv = state.eps.grid.cell_volume
        for step in range(1, 101):
            state = prop.step(state)
            c_ref = max(c_ref, float(np.max(np.abs(state.phi_ref.values))))
            c_eps = max(c_eps, state.eps.l2_norm())
            if step % 10 == 0:
                overlap = abs(
                    cv * np.vdot(state.phi_ref.values, state.eps.values)
                ) / np.sqrt(cfg.lambda_vol)
                bound = (
                    state.t / np.sqrt(cfg.lambda_vol)
                    * (c_ref * nw.w_l2 * c_eps + c_ref ** 2 * nw.w_l1)
                )
                assert overlap <= bound + 1e-6

    def test_symmetric_data_keeps_x_zero(self):
        cfg = make_config(d=1, N=2, n=64, box=8.0, w_amp=0.5, v_amp=0.5,
                          dt=0.005, t_end=0.3, x0=(0.0,), v0=(0.0,))
        state, _ = fresh_macro(cfg)
        prop = MacroPropagator(cfg)
        for _ in range(60):
            state = prop.step(state)
            assert abs(state.X[0, 0]) < 1e-8

    def test_validity_abort_when_tracer_escapes(self):
        cfg = make_config(d=1, N=2, n=32, box=4.0, w_amp=0.0, v_amp=0.0,
                          dt=0.01, t_end=2.0, v0=(2.0,))
        state, _ = fresh_macro(cfg)
        prop = MacroPropagator(cfg)
        with pytest.raises(ValidityError):
            prop.run(state, 200)


class TestVariants:
    def test_multi_tracer_identical_matches_single(self):
        base = make_config(d=1, N=2, n=64, box=8.0, w_amp=0.5, v_amp=0.5,
                           dt=0.005, t_end=0.2, x0=(0.2,), v0=(0.1,))
        multi = make_config(d=1, N=2, n=64, box=8.0, w_amp=0.5, v_amp=0.5,
                            dt=0.005, t_end=0.2, x0=(0.2,), v0=(0.1,),
                            variant_flags=VariantFlags(m_tracers=3))
        s1, _ = fresh_macro(base)
        s3, _ = fresh_macro(multi)
        p1, p3 = MacroPropagator(base), MacroPropagator(multi)
        for _ in range(40):
            s1 = p1.step(s1)
            s3 = p3.step(s3)
            # note: with M identical tracers the eps source triples, so only
            # the I = 0 pair-force decoupling of trajectories is exact when
            # the tracers see the same fields; compare tracers to each other
            assert np.max(np.abs(s3.X - s3.X[0])) < 1e-9
            assert np.max(np.abs(s3.Xdot - s3.Xdot[0])) < 1e-9

    def test_multi_tracer_with_pair_potential_repels(self):
        from tracergas.model import BumpSpec, Potentials

        cfg = make_config(d=1, N=2, n=64, box=8.0, w_amp=0.0, v_amp=0.0,
                          dt=0.005, t_end=0.2,
                          variant_flags=VariantFlags(m_tracers=2))
        cfg = cfg.__class__(
            **{**cfg.__dict__,
               "potentials": Potentials(
                   V=cfg.potentials.V, W=cfg.potentials.W,
                   I=BumpSpec(amplitude=1.0, radius=1.0))},
        )
        gas = build_gas_state(cfg)
        state = initial_macro_state(cfg, np.zeros(1), np.zeros(1), gas.phi_ref0)
        # place the tracers asymmetrically inside the pair-potential range
        state = MacroState(
            X=np.array([[-0.3], [0.3]]), Xdot=np.zeros((2, 1)),
            eps=state.eps, phi_ref=state.phi_ref, t=0.0,
        )
        prop = MacroPropagator(cfg)
        state = prop.run(state, 40)
        # repulsive bump: the tracers move apart symmetrically
        assert state.X[1, 0] - state.X[0, 0] > 0.6
        assert abs(state.X[1, 0] + state.X[0, 0]) < 1e-10

    def test_inhomogeneity_at_x_variant_close_to_default(self):
        base = make_config(d=1, N=8, lambda_vol=4.0, n=256, box=16.0,
                           w_amp=0.5, v_amp=0.3, dt=0.005, t_end=0.2)
        var = make_config(d=1, N=8, lambda_vol=4.0, n=256, box=16.0,
                          w_amp=0.5, v_amp=0.3, dt=0.005, t_end=0.2,
                          variant_flags=VariantFlags(inhomogeneity_at_X=True))
        sb, _ = fresh_macro(base)
        sv, _ = fresh_macro(var)
        pb, pv = MacroPropagator(base), MacroPropagator(var)
        sb = pb.run(sb, 40)
        sv = pv.run(sv, 40)
        # phi_ref is flat near the tracer, so the two source forms agree
        # to within the plateau variation
        diff = np.sqrt(
            sb.eps.grid.cell_volume
            * np.sum(np.abs(sb.eps.values - sv.eps.values) ** 2)
        )
        assert sv.eps.l2_norm() > 0.0
        assert diff < 0.1 * max(sb.eps.l2_norm(), 1e-12)


class TestReport:
    def test_initial_report(self):
        cfg = make_config(d=1, N=2, n=64, box=8.0)
        state, _ = fresh_macro(cfg)
        rep = macro_energy_report(state, cfg)
        assert rep.eps_l2 == 0.0
        assert abs(rep.overlap) == 0.0

    def test_w_zero_overlap_stays_zero(self):
        cfg = make_config(d=1, N=2, n=64, box=8.0, w_amp=0.0, v_amp=0.5)
        state, _ = fresh_macro(cfg, x0=(0.1,))
        prop = MacroPropagator(cfg)
        state = prop.run(state, 30)
        rep = macro_energy_report(state, cfg, propagator=prop)
        assert abs(rep.overlap) == 0.0
