"""Hot numerical kernels: numba-jitted fast path with a pure-numpy fallback.

Every kernel is written once, against the numpy subset that numba supports,
and compiled twice by a small factory: once as plain Python/numpy and once
under ``numba.njit``. The active backend is chosen at import time from the
``SPARSELOGIT_BACKEND`` environment variable:

    SPARSELOGIT_BACKEND=numba   require the JIT path (error if numba missing)
    SPARSELOGIT_BACKEND=numpy   force the fallback
    unset                       numba if importable, else numpy

Both backends consume random draws in the same order, so chains and flows
agree across backends to floating-point roundoff. ``numpy_kernels`` and
``numba_kernels`` stay importable side by side for parity tests and for
``benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import math
import os
from types import SimpleNamespace

import numpy as np

BACKEND_ENV = "SPARSELOGIT_BACKEND"

#: abort integration when the iterate norm passes this (separable data / bad step)
DIVERGENCE_GUARD = 1.0e6

_SQRT2 = math.sqrt(2.0)
_SQRTPI = math.sqrt(math.pi)


def _pick_backend() -> str:
    choice = os.environ.get(BACKEND_ENV, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _pick_backend()


def _make_kernels(jit):
    """Instantiate the kernel set under a decorator (identity or numba.njit)."""

    @jit
    def sigmoid_arr(t):
        # stable on both tails: never exponentiates a positive argument
        et = np.exp(-np.abs(t))
        return np.where(t >= 0.0, 1.0 / (1.0 + et), et / (1.0 + et))

    @jit
    def softplus_arr(t):
        # log(1 + e^t) without overflow
        return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))

    @jit
    def emp_risk(Z, w):
        # Z rows are y_i * x_i; risk = mean log(1 + exp(-y_i x_i.w))
        t = Z.dot(w)
        return np.mean(np.maximum(-t, 0.0) + np.log1p(np.exp(-np.abs(t))))

    @jit
    def emp_grad(Z, w):
        t = Z.dot(w)
        s = sigmoid_arr(-t)
        return -(s.dot(Z)) / Z.shape[0]

    @jit
    def a_of_norm(r, gx, gw):
        # a(w) = E[sigma'(<x, w>)] depends on w only through r = ||w||_2;
        # Gauss-Hermite over N(0, r^2). Exact 1/4 at r = 0.
        if r == 0.0:
            return 0.25
        t = (_SQRT2 * r) * gx
        s = sigmoid_arr(t)
        return float(np.sum(gw * (s * (1.0 - s))) / _SQRTPI)

    @jit
    def flow_single(Ztr, Zval, w0, dt, n_steps, rec):
        """RK4 on w' = -grad(emp risk), recording at step indices ``rec``.

        Returns (W, train, val, n_recorded, status); status 1 = diverged.
        """
        d = w0.size
        n_rec = rec.size
        W = np.zeros((n_rec, d))
        train = np.full(n_rec, np.nan)
        val = np.full(n_rec, np.nan)
        w = w0.copy()
        ri = 0
        status = 0
        if n_rec > 0 and rec[0] == 0:
            W[0] = w
            train[0] = emp_risk(Ztr, w)
            if Zval.shape[0] > 0:
                val[0] = emp_risk(Zval, w)
            ri = 1
        for k in range(1, n_steps + 1):
            k1 = -emp_grad(Ztr, w)
            k2 = -emp_grad(Ztr, w + (0.5 * dt) * k1)
            k3 = -emp_grad(Ztr, w + (0.5 * dt) * k2)
            k4 = -emp_grad(Ztr, w + dt * k3)
            w = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if math.sqrt(w.dot(w)) > DIVERGENCE_GUARD:
                status = 1
                break
            if ri < n_rec and rec[ri] == k:
                W[ri] = w
                train[ri] = emp_risk(Ztr, w)
                if Zval.shape[0] > 0:
                    val[ri] = emp_risk(Zval, w)
                ri += 1
        return W, train, val, ri, status

    @jit
    def flow_spindly(Ztr, Zval, u0, v0, dt, n_steps, rec):
        """RK4 on the factored system u' = -v*g(u*v), v' = -u*g(u*v)."""
        d = u0.size
        n_rec = rec.size
        U = np.zeros((n_rec, d))
        V = np.zeros((n_rec, d))
        train = np.full(n_rec, np.nan)
        val = np.full(n_rec, np.nan)
        u = u0.copy()
        v = v0.copy()
        ri = 0
        status = 0
        if n_rec > 0 and rec[0] == 0:
            U[0] = u
            V[0] = v
            train[0] = emp_risk(Ztr, u * v)
            if Zval.shape[0] > 0:
                val[0] = emp_risk(Zval, u * v)
            ri = 1
        for k in range(1, n_steps + 1):
            g1 = emp_grad(Ztr, u * v)
            ku1 = -(v * g1)
            kv1 = -(u * g1)
            u2 = u + (0.5 * dt) * ku1
            v2 = v + (0.5 * dt) * kv1
            g2 = emp_grad(Ztr, u2 * v2)
            ku2 = -(v2 * g2)
            kv2 = -(u2 * g2)
            u3 = u + (0.5 * dt) * ku2
            v3 = v + (0.5 * dt) * kv2
            g3 = emp_grad(Ztr, u3 * v3)
            ku3 = -(v3 * g3)
            kv3 = -(u3 * g3)
            u4 = u + dt * ku3
            v4 = v + dt * kv3
            g4 = emp_grad(Ztr, u4 * v4)
            ku4 = -(v4 * g4)
            kv4 = -(u4 * g4)
            u = u + (dt / 6.0) * (ku1 + 2.0 * ku2 + 2.0 * ku3 + ku4)
            v = v + (dt / 6.0) * (kv1 + 2.0 * kv2 + 2.0 * kv3 + kv4)
            w = u * v
            if math.sqrt(w.dot(w)) > DIVERGENCE_GUARD:
                status = 1
                break
            if ri < n_rec and rec[ri] == k:
                U[ri] = u
                V[ri] = v
                train[ri] = emp_risk(Ztr, w)
                if Zval.shape[0] > 0:
                    val[ri] = emp_risk(Zval, w)
                ri += 1
        return U, V, train, val, ri, status

    @jit
    def flow_reduced(Ztr, Zval, w0, rate, dt, n_steps, rec):
        """RK4 on the predictor-space form w' = -rate * |w| * grad(emp risk)."""
        d = w0.size
        n_rec = rec.size
        W = np.zeros((n_rec, d))
        train = np.full(n_rec, np.nan)
        val = np.full(n_rec, np.nan)
        w = w0.copy()
        ri = 0
        status = 0
        if n_rec > 0 and rec[0] == 0:
            W[0] = w
            train[0] = emp_risk(Ztr, w)
            if Zval.shape[0] > 0:
                val[0] = emp_risk(Zval, w)
            ri = 1
        for k in range(1, n_steps + 1):
            k1 = -rate * np.abs(w) * emp_grad(Ztr, w)
            w2 = w + (0.5 * dt) * k1
            k2 = -rate * np.abs(w2) * emp_grad(Ztr, w2)
            w3 = w + (0.5 * dt) * k2
            k3 = -rate * np.abs(w3) * emp_grad(Ztr, w3)
            w4 = w + dt * k3
            k4 = -rate * np.abs(w4) * emp_grad(Ztr, w4)
            w = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if math.sqrt(w.dot(w)) > DIVERGENCE_GUARD:
                status = 1
                break
            if ri < n_rec and rec[ri] == k:
                W[ri] = w
                train[ri] = emp_risk(Ztr, w)
                if Zval.shape[0] > 0:
                    val[ri] = emp_risk(Zval, w)
                ri += 1
        return W, train, val, ri, status

    @jit
    def gd_single(Ztr, Zval, w0, eta, n_steps, rec):
        d = w0.size
        n_rec = rec.size
        W = np.zeros((n_rec, d))
        train = np.full(n_rec, np.nan)
        val = np.full(n_rec, np.nan)
        w = w0.copy()
        ri = 0
        status = 0
        if n_rec > 0 and rec[0] == 0:
            W[0] = w
            train[0] = emp_risk(Ztr, w)
            if Zval.shape[0] > 0:
                val[0] = emp_risk(Zval, w)
            ri = 1
        for k in range(1, n_steps + 1):
            w = w - eta * emp_grad(Ztr, w)
            if math.sqrt(w.dot(w)) > DIVERGENCE_GUARD:
                status = 1
                break
            if ri < n_rec and rec[ri] == k:
                W[ri] = w
                train[ri] = emp_risk(Ztr, w)
                if Zval.shape[0] > 0:
                    val[ri] = emp_risk(Zval, w)
                ri += 1
        return W, train, val, ri, status

    @jit
    def gd_spindly(Ztr, Zval, u0, v0, eta, n_steps, rec):
        d = u0.size
        n_rec = rec.size
        U = np.zeros((n_rec, d))
        V = np.zeros((n_rec, d))
        train = np.full(n_rec, np.nan)
        val = np.full(n_rec, np.nan)
        u = u0.copy()
        v = v0.copy()
        ri = 0
        status = 0
        if n_rec > 0 and rec[0] == 0:
            U[0] = u
            V[0] = v
            train[0] = emp_risk(Ztr, u * v)
            if Zval.shape[0] > 0:
                val[0] = emp_risk(Zval, u * v)
            ri = 1
        for k in range(1, n_steps + 1):
            g = emp_grad(Ztr, u * v)
            un = u - eta * (v * g)
            vn = v - eta * (u * g)
            u = un
            v = vn
            w = u * v
            if math.sqrt(w.dot(w)) > DIVERGENCE_GUARD:
                status = 1
                break
            if ri < n_rec and rec[ri] == k:
                U[ri] = u
                V[ri] = v
                train[ri] = emp_risk(Ztr, w)
                if Zval.shape[0] > 0:
                    val[ri] = emp_risk(Zval, w)
                ri += 1
        return U, V, train, val, ri, status

    @jit
    def riccati_rk4(drift, w0, gx, gw, dt, n_steps, rec):
        """RK4 on the coupled scalar system w_i' = drift_i w_i - a(||w||) w_i^2."""
        d = w0.size
        n_rec = rec.size
        W = np.zeros((n_rec, d))
        a_min = 1.0
        a_max = 0.0
        w = w0.copy()
        ri = 0
        status = 0
        if n_rec > 0 and rec[0] == 0:
            W[0] = w
            ri = 1
        for k in range(1, n_steps + 1):
            a1 = a_of_norm(math.sqrt(w.dot(w)), gx, gw)
            k1 = drift * w - a1 * w * w
            w2 = w + (0.5 * dt) * k1
            a2 = a_of_norm(math.sqrt(w2.dot(w2)), gx, gw)
            k2 = drift * w2 - a2 * w2 * w2
            w3 = w + (0.5 * dt) * k2
            a3 = a_of_norm(math.sqrt(w3.dot(w3)), gx, gw)
            k3 = drift * w3 - a3 * w3 * w3
            w4 = w + dt * k3
            a4 = a_of_norm(math.sqrt(w4.dot(w4)), gx, gw)
            k4 = drift * w4 - a4 * w4 * w4
            w = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if a1 < a_min:
                a_min = a1
            if a1 > a_max:
                a_max = a1
            if math.sqrt(w.dot(w)) > DIVERGENCE_GUARD:
                status = 1
                break
            if ri < n_rec and rec[ri] == k:
                W[ri] = w
                ri += 1
        return W, ri, status, a_min, a_max

    @jit
    def mcmc_chain(Z, w_star, basis, d_model, n_steps, burn_in, thin,
                   step0, target_accept, gen):
        """Random-walk Metropolis in tangent-chart coordinates.

        Target: exp(-n*emp_risk(w(z))) * (1 + ||z||^2)^(-d/2) with
        w(z) = (w_star + basis z) / sqrt(1 + ||z||^2). Step size follows
        Robbins-Monro on log(step) toward ``target_accept`` during burn-in
        and is frozen afterwards. Post-burn-in states are kept every
        ``thin`` steps. Draw order: (d-1) normals then one uniform per step.
        """
        dm = basis.shape[1]
        n_keep = (n_steps - burn_in) // thin
        zs = np.zeros((n_keep, dm))
        logps = np.zeros(n_keep)
        acc_flags = np.zeros(n_keep, dtype=np.uint8)
        z = np.zeros(dm)

        # unnormalized log posterior at z
        znorm2 = 0.0
        w = w_star / math.sqrt(1.0 + znorm2)
        lp = -(0.5 * d_model) * math.log1p(znorm2)
        if Z.shape[0] > 0:
            t = Z.dot(w)
            lp -= np.sum(np.maximum(-t, 0.0) + np.log1p(np.exp(-np.abs(t))))

        log_step = math.log(step0)
        kept = 0
        n_acc_post = 0
        for k in range(n_steps):
            step = math.exp(log_step)
            eps = gen.standard_normal(dm)
            zp = z + step * eps
            zn2 = zp.dot(zp)
            wp = (w_star + basis.dot(zp)) / math.sqrt(1.0 + zn2)
            lpp = -(0.5 * d_model) * math.log1p(zn2)
            if Z.shape[0] > 0:
                t = Z.dot(wp)
                lpp -= np.sum(np.maximum(-t, 0.0) + np.log1p(np.exp(-np.abs(t))))
            log_ratio = lpp - lp
            alpha = 1.0 if log_ratio >= 0.0 else math.exp(log_ratio)
            u = gen.random()
            accepted = u < alpha
            if accepted:
                z = zp
                lp = lpp
            if k < burn_in:
                gamma = 1.0 / (1.0 + k) ** 0.6
                log_step += gamma * (alpha - target_accept)
            else:
                if accepted:
                    n_acc_post += 1
                j = k - burn_in
                if (j + 1) % thin == 0 and kept < n_keep:
                    zs[kept] = z
                    logps[kept] = lp
                    acc_flags[kept] = 1 if accepted else 0
                    kept += 1
        return zs, logps, acc_flags, kept, n_acc_post, math.exp(log_step)

    return SimpleNamespace(
        sigmoid_arr=sigmoid_arr,
        softplus_arr=softplus_arr,
        emp_risk=emp_risk,
        emp_grad=emp_grad,
        a_of_norm=a_of_norm,
        flow_single=flow_single,
        flow_spindly=flow_spindly,
        flow_reduced=flow_reduced,
        gd_single=gd_single,
        gd_spindly=gd_spindly,
        riccati_rk4=riccati_rk4,
        mcmc_chain=mcmc_chain,
    )


numpy_kernels = _make_kernels(lambda f: f)

if BACKEND == "numba":
    import numba

    # closures cannot be disk-cached; nogil lets sweep threads overlap
    numba_kernels = _make_kernels(numba.njit(cache=False, fastmath=False, nogil=True))
    active = numba_kernels
else:
    numba_kernels = None
    active = numpy_kernels


def record_steps(n_steps: int, max_records: int = 10_000) -> np.ndarray:
    """Step indices to record: every step up to the cap, then log-thinned."""
    if n_steps <= 0:
        return np.array([0], dtype=np.int64)
    if n_steps + 1 <= max_records:
        return np.arange(n_steps + 1, dtype=np.int64)
    grid = np.geomspace(1.0, float(n_steps), max_records - 1)
    steps = np.unique(np.concatenate(([0], np.rint(grid).astype(np.int64))))
    steps[-1] = n_steps
    return np.unique(steps)
