import numpy as np
import pytest

import sparselogit as sl
from sparselogit import kernels, risk
from sparselogit.kernels import numpy_kernels, record_steps
from sparselogit.model import RngStream
from sparselogit.posterior import TangentChart


@pytest.fixture(scope="module")
def problem():
    rng = RngStream(500)
    w = sl.sample_target(12, 3, rng.child(0))
    D = sl.sample_dataset(w, 150, rng.child(1))
    return w, np.asarray(D.signed)


needs_numba = pytest.mark.skipif(kernels.numba_kernels is None,
                                 reason="numba backend not active")


class TestRecordSteps:
    def test_dense_below_cap(self):
        rec = record_steps(100, max_records=1000)
        np.testing.assert_array_equal(rec, np.arange(101))

    def test_thinned_above_cap(self):
        rec = record_steps(100_000, max_records=500)
        assert rec[0] == 0
        assert rec[-1] == 100_000
        assert len(rec) <= 500
        assert np.all(np.diff(rec) > 0)

    def test_zero_steps(self):
        np.testing.assert_array_equal(record_steps(0), [0])


@needs_numba
class TestBackendParity:
    def test_scalar_helpers(self, problem):
        # the two exp/log1p implementations differ by ~1 ulp
        _, Z = problem
        t = np.linspace(-40, 40, 101)
        np.testing.assert_allclose(numpy_kernels.sigmoid_arr(t),
                                   kernels.numba_kernels.sigmoid_arr(t),
                                   rtol=5e-15, atol=0)
        np.testing.assert_allclose(numpy_kernels.softplus_arr(t),
                                   kernels.numba_kernels.softplus_arr(t),
                                   rtol=5e-15, atol=0)

    def test_risk_and_gradient(self, problem):
        _, Z = problem
        w = RngStream(501).generator().standard_normal(12)
        assert numpy_kernels.emp_risk(Z, w) == pytest.approx(
            kernels.numba_kernels.emp_risk(Z, w), abs=1e-14)
        np.testing.assert_allclose(numpy_kernels.emp_grad(Z, w),
                                   kernels.numba_kernels.emp_grad(Z, w), atol=1e-15)

    def test_flows(self, problem):
        _, Z = problem
        Zv = np.zeros((0, 12))
        rec = record_steps(400)
        a = numpy_kernels.flow_single(Z, Zv, np.zeros(12), 1e-2, 400, rec)
        b = kernels.numba_kernels.flow_single(Z, Zv, np.zeros(12), 1e-2, 400, rec)
        np.testing.assert_allclose(a[0], b[0], atol=1e-12)
        u0 = np.full(12, 12 ** -0.5)
        a = numpy_kernels.flow_spindly(Z, Zv, u0, u0, 1e-2, 400, rec)
        b = kernels.numba_kernels.flow_spindly(Z, Zv, u0, u0, 1e-2, 400, rec)
        np.testing.assert_allclose(a[0], b[0], atol=1e-12)

    def test_riccati(self, problem):
        w, _ = problem
        gx, gw = risk.hermgauss(64)
        drift = np.full(12, 0.02)
        drift[w.support] += w.values * 0.2
        rec = record_steps(400)
        a = numpy_kernels.riccati_rk4(drift, np.full(12, 1 / 12), gx, gw, 1e-2, 400, rec)
        b = kernels.numba_kernels.riccati_rk4(drift, np.full(12, 1 / 12), gx, gw,
                                              1e-2, 400, rec)
        np.testing.assert_allclose(a[0], b[0], atol=1e-12)

    def test_mcmc_same_stream_same_chain(self, problem):
        w, Z = problem
        chart = TangentChart.at(w)
        basis = np.ascontiguousarray(chart.basis)
        args = (Z, chart.w_star, basis, 12, 3000, 500, 2, 0.1, 0.3)
        a = numpy_kernels.mcmc_chain(*args, RngStream(502).generator())
        b = kernels.numba_kernels.mcmc_chain(*args, RngStream(502).generator())
        np.testing.assert_allclose(a[0], b[0], atol=1e-9)
        assert a[4] == b[4]


class TestBackendSelection:
    def test_env_override(self):
        import subprocess
        import sys

        out = subprocess.run(
            [sys.executable, "-c",
             "from sparselogit import kernels; print(kernels.BACKEND)"],
            capture_output=True, text=True,
            env={"PATH": "/usr/bin:/bin", "SPARSELOGIT_BACKEND": "numpy"})
        assert out.stdout.strip() == "numpy"

    def test_rejects_unknown_backend(self):
        import subprocess
        import sys

        out = subprocess.run(
            [sys.executable, "-c", "import sparselogit.kernels"],
            capture_output=True, text=True,
            env={"PATH": "/usr/bin:/bin", "SPARSELOGIT_BACKEND": "fortran"})
        assert out.returncode != 0
