import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pvmppt.buck import BuckParams, BuckState, derivatives, equilibrium, saturate, step
from pvmppt.errors import UnstableStep


def run(state, u, v_in, dt, params, n):
    for _ in range(n):
        state = step(state, u, v_in, dt, params)
    return state


def slowest_time_constant(p: BuckParams) -> float:
    """1 / |slowest eigenvalue real part| of the averaged RLC dynamics."""
    a = np.array([[0.0, -p.k1], [p.k2, -p.k3]])
    return 1.0 / np.min(np.abs(np.linalg.eigvals(a).real))


class TestParams:
    def test_gains_follow_components(self):
        p = BuckParams(l=2e-3, c=1e-4, r=5.0)
        assert (p.k1, p.k2, p.k3) == (500.0, 1e4, 1.0 / (5.0 * 1e-4))

    @pytest.mark.parametrize("field", ["l", "c", "r"])
    def test_rejects_non_positive(self, field):
        with pytest.raises(ValueError):
            BuckParams(**{field: 0.0})

    def test_unknown_mapping_key(self):
        with pytest.raises(KeyError, match="esr"):
            BuckParams.from_mapping({"l": 1e-3, "esr": 0.1})


class TestDerivatives:
    def test_hand_evaluated(self):
        d = derivatives(BuckState(0.0, 0.0), 0.5, 26.0, BuckParams(l=1e-3, c=1e-4, r=10.0))
        assert d == pytest.approx((13000.0, 0.0), abs=1e-9)

    def test_dead_system(self):
        assert derivatives(BuckState(), 0.0, 26.0, BuckParams()) == (0.0, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(u=st.floats(0.0, 1.0), v_in=st.floats(0.0, 40.0))
    def test_zero_at_equilibrium(self, u, v_in):
        p = BuckParams()
        di, dv = derivatives(equilibrium(u, v_in, p), u, v_in, p)
        assert abs(di) < 1e-12 * max(1.0, p.k1 * v_in) and abs(dv) < 1e-12 * max(1.0, p.k2 * v_in)


class TestEquilibrium:
    def test_closed_form(self):
        assert equilibrium(0.0, 26.0, BuckParams()) == BuckState(0.0, 0.0)
        assert equilibrium(1.0, 26.0, BuckParams(r=10.0)) == BuckState(2.6, 26.0)
        eq = equilibrium(0.5, 30.0, BuckParams(r=6.0))
        assert (eq.i_l, eq.v_out) == pytest.approx((2.5, 15.0))

    def test_long_horizon_settling_reaches_closed_form(self):
        p = BuckParams(r=6.0)
        end = run(BuckState(), 0.5, 30.0, 1e-5, p, int(10 * slowest_time_constant(p) / 1e-5))
        assert (end.i_l, end.v_out) == pytest.approx((2.5, 15.0), rel=1e-3)

    @settings(max_examples=100, deadline=None)
    @given(u=st.floats(0.01, 1.0), v_in=st.floats(1.0, 40.0))
    def test_power_balance(self, u, v_in):
        p = BuckParams()
        eq = equilibrium(u, v_in, p)
        assert v_in * u * eq.i_l == pytest.approx(eq.v_out**2 / p.r, rel=1e-9)


class TestStep:
    def test_equilibrium_is_preserved(self):
        p = BuckParams()
        eq = equilibrium(0.7, 26.0, p)
        end = run(eq, 0.7, 26.0, 1e-5, p, 100)
        assert (end.i_l, end.v_out) == pytest.approx((eq.i_l, eq.v_out), abs=1e-9)

    def test_richardson_ratio_is_fourth_order(self):
        p = BuckParams()
        s0, dt, horizon = BuckState(0.3, 2.0), 1.6e-5, 3.2e-3
        ref = run(s0, 0.6, 26.0, dt / 64, p, int(round(horizon / (dt / 64))))
        err = []
        for h in (dt, dt / 2):
            s = run(s0, 0.6, 26.0, h, p, int(round(horizon / h)))
            err.append(math.hypot(s.i_l - ref.i_l, s.v_out - ref.v_out))
        assert err[0] / err[1] == pytest.approx(16.0, abs=4.0)

    def test_step_response_matches_analytic(self):
        # second-order RLC step response, written out from its eigen-decomposition
        p = BuckParams()
        a = np.array([[0.0, -p.k1], [p.k2, -p.k3]])
        x_eq = np.array([26.0 / p.r, 26.0])
        t_end = 5 * slowest_time_constant(p)
        w, vecs = np.linalg.eig(a)
        coeff = np.linalg.solve(vecs, -x_eq)
        x = (vecs @ (coeff * np.exp(w * t_end))).real + x_eq
        dt = 1e-5
        end = run(BuckState(), 1.0, 26.0, dt, p, int(round(t_end / dt)))
        assert end.v_out == pytest.approx(x[1], abs=1e-6)
        assert end.v_out == pytest.approx(26.0, rel=0.01)

    def test_guard_rejects_large_step(self):
        p = BuckParams()
        with pytest.raises(UnstableStep):
            step(BuckState(), 0.5, 26.0, 2 * p.max_stable_dt(), p)
        with pytest.raises(UnstableStep):
            step(BuckState(), 0.5, 26.0, 0.0, p)

    def test_output_voltage_clamped(self):
        p = BuckParams()
        s = step(BuckState(-50.0, 0.0), 0.0, 0.0, 1e-5, p)
        assert s.v_out == 0.0

    @settings(max_examples=100, deadline=None)
    @given(u=st.floats(-2.0, 3.0), i_l=st.floats(0.0, 5.0), v=st.floats(0.0, 30.0))
    def test_duty_saturation(self, u, i_l, v):
        p = BuckParams()
        s = BuckState(i_l, v)
        assert step(s, u, 26.0, 1e-5, p) == step(s, saturate(u), 26.0, 1e-5, p)

    def test_saturate(self):
        assert (saturate(1.3), saturate(-0.2), saturate(0.4)) == (1.0, 0.0, 0.4)
