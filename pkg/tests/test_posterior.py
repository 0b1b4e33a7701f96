import math

import numpy as np
import pytest

import sparselogit as sl
from sparselogit import posterior
from sparselogit.model import RngStream

# E||x||^3 / (kappa d) from chi moments at 40 digits
R_D50 = 34.732773361764410609
THIRD_MOMENT_D50 = 358.82595596650541123


@pytest.fixture(scope="module")
def chart10():
    w = sl.sample_target(10, 3, RngStream(400))
    return w, posterior.TangentChart.at(w)


class TestChart:
    def test_basis_orthonormal_and_tangent(self, chart10):
        w, chart = chart10
        B = chart.basis
        assert np.abs(B.T @ B - np.eye(9)).max() < 1e-12
        assert np.abs(B.T @ w.dense()).max() < 1e-12

    def test_origin_maps_to_target(self, chart10):
        w, chart = chart10
        np.testing.assert_allclose(chart.map(np.zeros(9)), w.dense(), atol=1e-15)

    def test_displacement_bounded_by_z(self, chart10):
        w, chart = chart10
        gen = RngStream(401).generator()
        for _ in range(50):
            z = gen.standard_normal(9)
            z *= gen.uniform(0, 0.5) / np.linalg.norm(z)
            v = chart.map(z) - w.dense()
            assert np.linalg.norm(v) <= np.linalg.norm(z) + 1e-15

    def test_normal_component_closed_form(self, chart10):
        w, chart = chart10
        gen = RngStream(402).generator()
        for _ in range(20):
            z = gen.standard_normal(9)
            inner = float((chart.map(z) - w.dense()) @ w.dense())
            assert inner == pytest.approx(1 / math.sqrt(1 + z @ z) - 1, abs=1e-12)

    def test_round_trip(self, chart10):
        _, chart = chart10
        gen = RngStream(403).generator()
        for scale in (0.1, 1.0, 10.0):
            z = gen.standard_normal(9)
            z *= scale / np.linalg.norm(z)
            np.testing.assert_allclose(chart.pullback(chart.map(z)), z, atol=1e-10)

    def test_pullback_rejects_far_hemisphere(self, chart10):
        w, chart = chart10
        with pytest.raises(ValueError):
            chart.pullback(-w.dense())

    def test_mapped_points_unit_norm(self, chart10):
        _, chart = chart10
        Z = RngStream(404).generator().standard_normal((100, 9)) * 3
        norms = np.linalg.norm(chart.map_batch(Z), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)


class TestJacobian:
    def test_unit_at_origin(self):
        assert posterior.chart_jacobian(np.zeros(4), 5) == 1.0

    def test_matches_finite_difference_gram(self):
        w = sl.sample_target(3, 2, RngStream(405))
        chart = posterior.TangentChart.at(w)
        gen = RngStream(406).generator()
        h = 1e-5
        for _ in range(20):
            z = gen.standard_normal(2)
            J = np.zeros((3, 2))
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                J[:, i] = (chart.map(z + e) - chart.map(z - e)) / (2 * h)
            fd = math.sqrt(np.linalg.det(J.T @ J))
            assert fd == pytest.approx(posterior.chart_jacobian(z, 3), rel=1e-5)

    def test_scaling_identity(self):
        gen = RngStream(407).generator()
        for d in (3, 8, 20):
            z = gen.standard_normal(d - 1)
            val = posterior.chart_jacobian(2 * z, d) * (1 + 4 * float(z @ z)) ** (d / 2)
            assert val == pytest.approx(1.0, rel=1e-12)


class TestLogPosterior:
    def test_at_origin_is_minus_n_risk(self, chart10):
        w, chart = chart10
        D = sl.sample_dataset(w, 150, RngStream(408))
        lp = posterior.log_posterior(np.zeros(9), D, chart)
        assert lp == pytest.approx(-150 * sl.empirical_risk(w.dense(), D), rel=1e-12)

    def test_no_data_reduces_to_jacobian(self, chart10):
        _, chart = chart10
        z = RngStream(409).generator().standard_normal(9)
        lp = posterior.log_posterior(z, None, chart)
        assert lp == pytest.approx(-5.0 * math.log1p(float(z @ z)), rel=1e-12)

    def test_gradient_matches_finite_differences(self, chart10):
        w, chart = chart10
        D = sl.sample_dataset(w, 80, RngStream(410))
        gen = RngStream(411).generator()
        h = 1e-6
        for _ in range(10):
            z = gen.standard_normal(9) * 0.5
            g = posterior.log_posterior_grad(z, D, chart)
            fd = np.zeros(9)
            for i in range(9):
                e = np.zeros(9)
                e[i] = h
                fd[i] = (posterior.log_posterior(z + e, D, chart)
                         - posterior.log_posterior(z - e, D, chart)) / (2 * h)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


class TestSampler:
    def test_prior_only_chain_stays_on_hemisphere(self):
        w = sl.sample_target(3, 2, RngStream(412))
        chart = posterior.TangentChart.at(w)
        chain = posterior.sample_posterior(None, chart, 3000, 500, RngStream(413))
        assert np.all(chain.ws @ w.dense() > 0)
        assert 0.0 < chain.acceptance_rate < 1.0

    def test_posterior_contracts_with_sample_size(self):
        w = sl.sample_target(10, 3, RngStream(414))
        chart = posterior.TangentChart.at(w)
        second_moment = {}
        for n in (500, 5000):
            D = sl.sample_dataset(w, n, RngStream(415).child(n))
            chain = posterior.sample_posterior(D, chart, 20_000, 4_000,
                                               RngStream(416).child(n), thin=4)
            second_moment[n] = float(np.mean(np.sum(chain.zs ** 2, axis=1)))
        ratio = second_moment[500] / second_moment[5000]
        assert 5.0 <= ratio <= 20.0

    def test_independent_chains_agree(self):
        w = sl.sample_target(10, 3, RngStream(417))
        chart = posterior.TangentChart.at(w)
        D = sl.sample_dataset(w, 400, RngStream(418))
        ests = []
        for cs in (1, 2):
            chain = posterior.sample_posterior(D, chart, 20_000, 4_000,
                                               RngStream(419, cs), thin=4)
            ests.append(posterior.posterior_excess_risk(chain, w))
        combined = math.hypot(ests[0]["std_error"], ests[1]["std_error"])
        assert abs(ests[0]["mean"] - ests[1]["mean"]) < 3 * combined

    def test_rejects_bad_lengths(self, chart10):
        _, chart = chart10
        with pytest.raises(ValueError):
            posterior.sample_posterior(None, chart, 100, 100, RngStream(420))

    def test_antipodal_variant_covers_both_hemispheres(self):
        # with no data the sphere posterior is uniform: the two-chart sampler
        # must visit both hemispheres and keep <w, w*> centered
        w = sl.sample_target(4, 2, RngStream(440))
        chart = posterior.TangentChart.at(w)
        chain = posterior.sample_posterior_antipodal(None, chart, 20_000, 2_000,
                                                     RngStream(441), thin=2)
        inner = chain.ws @ w.dense()
        assert (inner > 0).any() and (inner < 0).any()
        assert abs(np.mean(inner)) < 0.1

    def test_antipodal_concentrates_with_data(self):
        w = sl.sample_target(6, 2, RngStream(442))
        chart = posterior.TangentChart.at(w)
        D = sl.sample_dataset(w, 300, RngStream(443))
        chain = posterior.sample_posterior_antipodal(D, chart, 8_000, 2_000,
                                                     RngStream(444), thin=2)
        assert np.mean(chain.ws @ w.dense() > 0) > 0.99

    def test_radial_law_matches_analytic_cdf(self):
        # detailed-balance smoke test: with no data the ||z|| marginal has
        # cdf 1 - (1 + r^2)^(-1/2) in the d = 3 chart
        w = sl.sample_target(3, 2, RngStream(421))
        chart = posterior.TangentChart.at(w)
        chain = posterior.sample_posterior(None, chart, 110_000, 10_000, RngStream(422))
        rho = np.sort(np.linalg.norm(chain.zs, axis=1))
        emp = np.arange(1, len(rho) + 1) / len(rho)
        ks = np.abs(emp - (1 - 1 / np.sqrt(1 + rho ** 2))).max()
        assert ks < 0.05


class TestPosteriorExcess:
    def test_degenerate_chain_at_target_gives_zero(self, chart10):
        w, chart = chart10
        zs = np.zeros((4, 9))
        chain = posterior.PosteriorChain(
            zs=zs, ws=chart.map_batch(zs), logps=np.zeros(4),
            accept_flags=np.zeros(4, dtype=np.uint8), acceptance_rate=0.5,
            step_size=0.1, burn_in=0, thin=1, seed=None)
        est = posterior.posterior_excess_risk(chain, w)
        assert est["mean"] == pytest.approx(0.0, abs=1e-12)

    def test_nonnegative_within_noise(self):
        w = sl.sample_target(8, 2, RngStream(423))
        chart = posterior.TangentChart.at(w)
        D = sl.sample_dataset(w, 300, RngStream(424))
        chain = posterior.sample_posterior(D, chart, 6000, 1000, RngStream(425), thin=2)
        est = posterior.posterior_excess_risk(chain, w)
        assert est["mean"] >= -2 * est["std_error"]


class TestGeometryChecks:
    def test_tangent_hessian_isotropy(self):
        w = sl.sample_target(10, 3, RngStream(426))
        rep = posterior.tangent_hessian_check(w, 128, 1_000_000, RngStream(427))
        assert rep["max_offdiag_se_units"] < 3.0
        assert rep["kappa_hat"] == pytest.approx(rep["kappa"], abs=3e-3)

    def test_third_moment_closed_form(self):
        # cross-check the chi-moment formula by Monte Carlo at d = 50
        assert posterior.gaussian_norm_third_moment(50) == pytest.approx(
            THIRD_MOMENT_D50, rel=1e-12)
        gen = RngStream(428).generator()
        X = gen.standard_normal((200_000, 50))
        mc = np.mean(np.linalg.norm(X, axis=1) ** 3)
        assert mc == pytest.approx(THIRD_MOMENT_D50, rel=2e-3)

    def test_self_concordance_radius_d50(self):
        r, R = posterior.self_concordance_radius(50, 128)
        assert R == pytest.approx(R_D50, rel=1e-10)
        assert r == pytest.approx(1.0 / R_D50, rel=1e-10)

    def test_quadratic_lower_bound_all_pass(self):
        w = sl.sample_target(10, 3, RngStream(429))
        rep = posterior.quadratic_lower_check(w, 128, 500, RngStream(430))
        assert rep["pass_fraction"] == 1.0
        assert rep["min_margin"] > 0.0

    def test_quadratic_lower_equality_at_origin(self):
        w = sl.sample_target(6, 2, RngStream(431))
        ex = posterior.excess_risk_on_sphere(w.dense()[None, :], w, 64)[0]
        assert abs(ex) < 1e-12


class TestCurvatureInvariants:
    def test_local_log_concavity_and_smoothness(self):
        # V = -log posterior: psd at the mode, top eigenvalue within the
        # sample-covariance bound; one failure tolerated across 20 datasets
        from sparselogit.model import is_linearly_separable

        t_conf = math.log(6 / 0.05)
        fails_lc = fails_sm = 0
        n, d = 200, 8
        checked = 0
        for seed in range(20):
            w = sl.sample_target(d, 3, RngStream(432, seed))
            D = sl.sample_dataset(w, n, RngStream(433, seed))
            if is_linearly_separable(D) or np.linalg.matrix_rank(D.X) < d:
                continue
            checked += 1
            chart = posterior.TangentChart.at(w)
            H = posterior.numeric_hessian_V(np.zeros(d - 1), D, chart)
            eigs = np.linalg.eigvalsh(H)
            bound = n / 4 * (1 + math.sqrt(d / n) + math.sqrt(t_conf / n)) ** 2 + d
            fails_lc += eigs.min() < -1e-6
            fails_sm += eigs.max() > bound
        assert checked >= 15
        assert fails_lc == 0
        assert fails_sm <= 1


class TestChainExport:
    def test_csv_schema(self, tmp_path):
        w = sl.sample_target(6, 2, RngStream(434))
        chart = posterior.TangentChart.at(w)
        D = sl.sample_dataset(w, 100, RngStream(435))
        chain = posterior.sample_posterior(D, chart, 1500, 500, RngStream(436), thin=5)
        path = tmp_path / "chain.csv"
        posterior.export_chain_csv(chain, w, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "idx,accept,logpost,znorm,excess"
        assert len(lines) == 1 + len(chain)
