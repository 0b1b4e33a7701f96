import math

import numpy as np
import pytest

import sparselogit as sl
from sparselogit import riccati, risk
from sparselogit.kernels import active as K, record_steps
from sparselogit.model import RngStream

KAPPA = 0.20662096414190703726


@pytest.fixture(scope="module")
def flat_target():
    return sl.sample_target(50, 5, RngStream(300))


@pytest.fixture(scope="module")
def zero_noise_model(flat_target):
    return riccati.EnvelopeModel.synthetic(flat_target, np.zeros(50), n=1000)


@pytest.fixture(scope="module")
def measured_model(flat_target):
    D = sl.sample_dataset(flat_target, 1000, RngStream(301))
    return riccati.EnvelopeModel.from_dataset(flat_target, D)


class TestEnvelopeClosedForms:
    def test_both_start_at_one_over_d(self, measured_model):
        m = measured_model
        i = int(m.support[0])
        assert riccati.upper_envelope_active(0.0, i, m) == pytest.approx(1 / 50, abs=0)
        assert riccati.lower_envelope_active(0.0, i, m) == pytest.approx(1 / 50, abs=0)
        j = int(m.w_star.inactive[0])
        assert riccati.upper_envelope_inactive(0.0, j, m) == pytest.approx(1 / 50, abs=0)

    def test_limits(self, measured_model):
        m = measured_model
        i = int(m.support[0])
        pos = int(np.nonzero(m.support == i)[0][0])
        wi = m.w_star.values[pos]
        up_inf = riccati.upper_envelope_active(1e5, i, m)
        lo_inf = riccati.lower_envelope_active(1e5, i, m)
        assert up_inf == pytest.approx(wi + m.zeta[i] / m.a_star, rel=1e-9)
        assert lo_inf == pytest.approx(4 * (wi * m.a_star + m.zeta[i]), rel=1e-9)

    def test_drift_sign_flagged(self, flat_target):
        # a large negative noise entry kills the active drift: assumption A1
        zeta = np.zeros(50)
        zeta[flat_target.support[0]] = -1.0
        m = riccati.EnvelopeModel.synthetic(flat_target, zeta, n=1000)
        assert not m.assumption_flags["active_drift_positive"]
        with pytest.raises(ValueError, match="A1"):
            riccati.upper_envelope_active(1.0, int(flat_target.support[0]), m)

    def test_inactive_negative_noise_decays(self, flat_target):
        zeta = np.zeros(50)
        j = int(flat_target.inactive[0])
        zeta[j] = -0.05
        m = riccati.EnvelopeModel.synthetic(flat_target, zeta, n=1000)
        t = np.linspace(0, 40, 200)
        env = riccati.upper_envelope_inactive(t, j, m)
        assert np.all(np.diff(env) < 0)
        assert np.all(env > 0)

    def test_inactive_envelope_below_exponential_bound(self, flat_target):
        zeta = np.zeros(50)
        j = int(flat_target.inactive[0])
        zeta[j] = 0.04
        m = riccati.EnvelopeModel.synthetic(flat_target, zeta, n=1000)
        t = np.linspace(0, 40, 200)
        env = riccati.upper_envelope_inactive(t, j, m)
        bound = riccati.inactive_exponential_bound(t, j, m)
        assert np.all(env <= bound + 1e-15)

    def test_zero_drift_limit_continuous(self):
        # b -> 0 closed form approaches w0 / (1 + c w0 t)
        t = np.linspace(0.0, 10.0, 50)
        near = riccati.riccati_solution(t, 1e-13, 0.25, 0.02)
        exact = riccati.riccati_solution(t, 0.0, 0.25, 0.02)
        np.testing.assert_allclose(near, exact, rtol=1e-9)

    def test_matches_spec_closed_form_expressions(self, measured_model):
        # same algebra, written the way the envelopes are usually displayed
        m = measured_model
        i = int(m.support[0])
        pos = int(np.nonzero(m.support == i)[0][0])
        wi = m.w_star.values[pos]
        b = wi * m.a_star + m.zeta[i]
        t = np.linspace(0.0, 30.0, 100)
        up_ref = (wi + m.zeta[i] / m.a_star) / (
            1.0 + (50 * (wi + m.zeta[i] / m.a_star) - 1.0) * np.exp(-b * t))
        lo_ref = 4 * b / (1.0 + (4 * 50 * b - 1.0) * np.exp(-b * t))
        np.testing.assert_allclose(riccati.upper_envelope_active(t, i, m), up_ref, rtol=1e-12)
        np.testing.assert_allclose(riccati.lower_envelope_active(t, i, m), lo_ref, rtol=1e-12)


class TestStoppingTime:
    def test_self_consistency(self, zero_noise_model):
        m = zero_noise_model
        i_min = int(m.support[np.argmin(m.w_star.values)])
        for eps in (0.3, 0.5, 0.7):
            T = riccati.stopping_time(eps, m)
            low = riccati.lower_envelope_active(T, i_min, m)
            assert abs(low - (1 - eps) * m.w_star.w_min) < 1e-9

    def test_monotone_in_accuracy(self, zero_noise_model):
        times = [riccati.stopping_time(e, zero_noise_model) for e in (0.7, 0.5, 0.3)]
        assert times[0] < times[1] < times[2]

    def test_reachability_error_names_assumption(self, flat_target):
        m = riccati.EnvelopeModel.synthetic(flat_target, np.zeros(50), n=1000)
        # (1-eps) w_min above the envelope limit 4 w_min a* is unreachable
        eps_bad = 1.0 - 4.0 * m.a_star - 1e-3
        with pytest.raises(ValueError, match="A2"):
            riccati.stopping_time(eps_bad, m)

    def test_rejects_eps_out_of_range(self, zero_noise_model):
        with pytest.raises(ValueError):
            riccati.stopping_time(1.5, zero_noise_model)


class TestTheoremBound:
    def test_signal_term_vanishes_at_zero_eps(self, measured_model):
        out = riccati.theorem51_bound(measured_model, 0.0)
        assert out["term_signal"] == 0.0

    def test_noise_term_pinned_arithmetic(self, zero_noise_model):
        # 16 * 5 * log(2000) / (1000 * (kappa/sqrt(5))^2), frozen independently
        out = riccati.theorem51_bound(zero_noise_model, 0.5, n=1000, eta=0.05)
        expected = 16 * 5 * math.log(2000.0) / (1000.0 * (KAPPA / math.sqrt(5.0)) ** 2)
        assert out["term_noise"] == pytest.approx(expected, rel=1e-12)
        assert out["term_signal"] == pytest.approx(0.25, rel=1e-12)

    def test_doubling_n_halves_noise_term(self, zero_noise_model):
        a = riccati.theorem51_bound(zero_noise_model, 0.5, n=1000)["term_noise"]
        b = riccati.theorem51_bound(zero_noise_model, 0.5, n=2000)["term_noise"]
        assert b == pytest.approx(a / 2, rel=1e-12)

    def test_inactive_term_requires_fit(self, measured_model):
        out = riccati.theorem51_bound(measured_model, 0.5)
        assert "term_inactive" not in out
        out = riccati.theorem51_bound(measured_model, 0.5, c2_fit=1.0)
        assert out["total"] > out["term_signal"]


class TestWeakestCoordinate:
    def test_flat_profile_hits_eps_exactly(self, zero_noise_model):
        assert riccati.weakest_coordinate_dominance(zero_noise_model, 0.5)

    def test_heterogeneous_profile_strictly_better(self):
        w = sl.sample_target(20, 2, RngStream(303), values=[0.3, 0.954])
        m = riccati.EnvelopeModel.synthetic(w, np.zeros(20), n=4000)
        eps = 0.5
        T = riccati.stopping_time(eps, m)
        rel = []
        for pos, i in enumerate(m.support):
            low = riccati.lower_envelope_active(T, int(i), m)
            rel.append(abs(low - w.values[pos]) / w.values[pos])
        weak = int(np.argmin(w.values))
        strong = 1 - weak
        assert rel[weak] == pytest.approx(eps, abs=1e-9)
        assert rel[strong] < rel[weak]
        assert riccati.weakest_coordinate_dominance(m, eps)

    def test_single_active_coordinate(self):
        w = sl.sample_target(10, 1, RngStream(304))
        m = riccati.EnvelopeModel.synthetic(w, np.zeros(10), n=1000)
        assert riccati.weakest_coordinate_dominance(m, 0.4)


class TestRiccatiFlow:
    def test_scalar_flow_converges_to_root(self):
        # independent oracle: bisection on x * a(x) = b
        gx, gw = risk.hermgauss(64)
        b = 0.15
        rec = record_steps(40_000)
        W, n_rec, status, _, _ = K.riccati_rk4(np.array([b]), np.array([0.02]),
                                               gx, gw, 1e-2, 40_000, rec)
        assert status == 0
        lo, hi = 0.01, 3.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid * risk.a_of_norm(mid) < b:
                lo = mid
            else:
                hi = mid
        assert abs(W[n_rec - 1][0] - lo) < 1e-9

    def test_inactive_coordinates_decay_monotonically(self, zero_noise_model):
        traj = riccati.riccati_flow(zero_noise_model, 20.0, 1e-2)
        off = zero_noise_model.w_star.inactive
        diffs = np.diff(traj.iterates[:, off], axis=0)
        assert np.all(diffs < 0)

    def test_matches_population_driven_factored_flow(self, zero_noise_model):
        # independent RK4 oracles on the predictor forms; the (u, v) system
        # runs at twice the coordinate rate, so compare at half the horizon
        m = zero_noise_model
        traj = riccati.riccati_flow(m, 8.0, 1e-2)

        def pop_grad(w):
            return sl.population_grad_stein(w, m.w_star, m.nodes)

        def rk4(f, w0, t_end, dt):
            w = w0.copy()
            for _ in range(int(round(t_end / dt))):
                k1 = f(w)
                k2 = f(w + 0.5 * dt * k1)
                k3 = f(w + 0.5 * dt * k2)
                k4 = f(w + dt * k3)
                w = w + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            return w

        w0 = np.full(50, 1 / 50)
        direct = rk4(lambda w: -np.abs(w) * pop_grad(w), w0, 8.0, 1e-2)
        np.testing.assert_allclose(traj.iterates[-1], direct, atol=1e-6)
        uv = rk4(lambda w: -2.0 * np.abs(w) * pop_grad(w), w0, 4.0, 1e-2)
        np.testing.assert_allclose(traj.iterates[-1], uv, atol=1e-6)

    def test_curvature_strip_along_trajectory(self, measured_model):
        T = riccati.stopping_time(0.5, measured_model)
        traj = riccati.riccati_flow(measured_model, T, 1e-2)
        a_min, a_max = traj.a_range
        assert a_min >= KAPPA - 1e-6
        assert a_max <= 0.25 + 1e-12

    def test_comparison_principle_synthetic_noise(self, flat_target):
        # small synthetic noise keeps the trajectory inside the unit ball,
        # where the [a*, 1/4] strip makes the sandwich rigorous
        gen = RngStream(305).generator()
        zeta = gen.uniform(-0.02, 0.02, size=50)
        m = riccati.EnvelopeModel.synthetic(flat_target, zeta, n=1000)
        rep = riccati.sandwich_report(m, 0.5, dt=1e-2)
        assert rep["max_lower_violation"] <= 1e-6
        assert rep["max_upper_violation"] <= 1e-6


class TestExports:
    def test_envelope_csv_schema(self, measured_model, tmp_path):
        traj = riccati.riccati_flow(measured_model, 5.0, 1e-2)
        path = tmp_path / "env.csv"
        riccati.export_envelope_curves(measured_model, traj, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,i,role,lower,upper,flow_value"
        assert len(lines) > 50 * 100

    def test_bound_report_json(self, measured_model, tmp_path):
        import json

        path = tmp_path / "bound.json"
        riccati.export_bound_report(measured_model, 0.5, path, c2_fit=0.8)
        data = json.loads(path.read_text())
        assert data["assumption_flags"]["noise_within_gamma"]
        assert data["bound"]["total"] > 0

    def test_curvature_floor_diagnostic(self):
        val = riccati.curvature_floor_diagnostic(radius=1.0)
        assert 0.0 < val < 0.25


class TestFittedConstants:
    def test_fit_recovers_planted_constant(self):
        delta = 0.3
        c2 = 1.7
        mass = {d: c2 * d ** -(0.5 + delta) for d in (25, 50, 100)}
        assert riccati.fit_inactive_constant(mass, delta) == pytest.approx(c2, rel=1e-12)

    def test_bound_window_contains_stopping_time(self, measured_model):
        win = riccati.empirical_bound_window(measured_model, 0.5)
        assert win["holds_at_stopping_time"]
        assert win["t_lo"] < win["t_hi"]
        assert win["center"] > 0
