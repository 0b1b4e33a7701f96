"""Spherical Gibbs posterior in tangent-chart coordinates.

The posterior exp(-n * emp_risk(w)) restricted to the unit sphere is pulled
back through the normalization chart w(z) = (w* + z)/||w* + z|| on the
tangent hyperplane at w*, where its density gains the Jacobian factor
(1 + ||z||^2)^(-d/2). A random-walk Metropolis chain in z, with step size
adapted only during burn-in, feeds Monte Carlo estimates of the posterior
expected excess risk.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from . import kernels, risk
from .model import Dataset, RngStream, TargetVector, _as_generator, logistic_loss, sigmoid


@dataclass(frozen=True)
class TangentChart:
    """Base point on the sphere with an orthonormal basis of its tangent space."""

    w_star: np.ndarray
    basis: np.ndarray

    @classmethod
    def at(cls, w_star) -> "TangentChart":
        if isinstance(w_star, TargetVector):
            w_star = w_star.dense()
        w = np.asarray(w_star, dtype=np.float64)
        d = w.size
        # Householder reflection mapping e_1 to w; its remaining columns are
        # an exact orthonormal basis of the hyperplane orthogonal to w.
        e1 = np.zeros(d)
        e1[0] = 1.0
        u = w - e1
        nu = u @ u
        H = np.eye(d) if nu < 1e-30 else np.eye(d) - 2.0 * np.outer(u, u) / nu
        return cls(w_star=w, basis=H[:, 1:])

    @property
    def d(self) -> int:
        return self.w_star.size

    def map(self, z: np.ndarray) -> np.ndarray:
        """z in basis coordinates -> unit vector on the open hemisphere."""
        z = np.asarray(z, dtype=np.float64)
        raw = self.w_star + self.basis @ z
        return raw / np.sqrt(1.0 + z @ z)

    def map_batch(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        raw = self.w_star[None, :] + Z @ self.basis.T
        return raw / np.sqrt(1.0 + np.sum(Z * Z, axis=1))[:, None]

    def pullback(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        c = float(w @ self.w_star)
        if c <= 0.0:
            raise ValueError("pullback defined only on the open hemisphere <w, w*> > 0")
        return self.basis.T @ (w / c - self.w_star)


def chart_jacobian(z, d: int) -> float:
    """Volume element of the normalization chart: (1 + ||z||^2)^(-d/2)."""
    z = np.asarray(z, dtype=np.float64)
    return float((1.0 + z @ z) ** (-d / 2.0))


def log_chart_jacobian(z, d: int) -> float:
    z = np.asarray(z, dtype=np.float64)
    return -0.5 * d * math.log1p(float(z @ z))


def log_posterior(z, D: Dataset | None, chart: TangentChart) -> float:
    """Unnormalized log density: -n * emp_risk(w(z)) + log Jacobian."""
    z = np.asarray(z, dtype=np.float64)
    lp = log_chart_jacobian(z, chart.d)
    if D is not None and D.n > 0:
        lp -= D.n * risk.empirical_risk(chart.map(z), D)
    return float(lp)


def log_posterior_grad(z, D: Dataset | None, chart: TangentChart) -> np.ndarray:
    """Analytic gradient of :func:`log_posterior` in chart coordinates."""
    z = np.asarray(z, dtype=np.float64)
    zn2 = float(z @ z)
    g = -chart.d * z / (1.0 + zn2)
    if D is not None and D.n > 0:
        w = chart.map(z)
        gw = risk.empirical_grad(w, D)
        rho = math.sqrt(1.0 + zn2)
        # J^T gw with J = basis/rho - w z^T / rho^2
        g -= D.n * ((chart.basis.T @ gw) / rho - z * float(w @ gw) / rho ** 2)
    return g


@dataclass(frozen=True)
class PosteriorChain:
    zs: np.ndarray
    ws: np.ndarray
    logps: np.ndarray
    accept_flags: np.ndarray
    acceptance_rate: float
    step_size: float
    burn_in: int
    thin: int
    seed: int | None

    def __len__(self) -> int:
        return len(self.zs)


def sample_posterior(D: Dataset | None, chart: TangentChart, steps: int,
                     burn_in: int, rng, target_accept: float = 0.3,
                     thin: int = 1, step0: float | None = None) -> PosteriorChain:
    """Random-walk Metropolis with burn-in-only Robbins-Monro step adaptation.

    Freezing the step after burn-in preserves detailed balance for every
    retained sample. Proposals live in z-space, so the hemisphere constraint
    is enforced by the chart itself.
    """
    if not steps > burn_in >= 0:
        raise ValueError("need steps > burn_in >= 0")
    d = chart.d
    n = 0 if D is None else D.n
    if step0 is None:
        # RW scale ~ 2.4/sqrt(dim * curvature); curvature ~ n kappa/3 + d
        curv = n * 0.2066 / 3.0 + d
        step0 = 2.4 / math.sqrt(max(d - 1, 1) * curv)
    gen = _as_generator(rng)
    Z = np.zeros((0, d)) if D is None else np.asarray(D.signed)
    basis = np.ascontiguousarray(chart.basis)
    zs, logps, flags, kept, n_acc, step = kernels.active.mcmc_chain(
        Z, chart.w_star, basis, d, int(steps), int(burn_in), int(thin),
        float(step0), float(target_accept), gen)
    zs = zs[:kept]
    post_steps = steps - burn_in
    rate = n_acc / post_steps if post_steps > 0 else float("nan")
    if rate < 0.05 or rate > 0.95:
        warnings.warn(f"post-adaptation acceptance rate {rate:.3f} outside (0.05, 0.95)")
    seed = rng.seed if isinstance(rng, RngStream) else None
    return PosteriorChain(zs=zs, ws=chart.map_batch(zs), logps=logps[:kept],
                          accept_flags=flags[:kept], acceptance_rate=float(rate),
                          step_size=float(step), burn_in=int(burn_in),
                          thin=int(thin), seed=seed)


def sample_posterior_antipodal(D: Dataset | None, chart: TangentChart, steps: int,
                               burn_in: int, rng, target_accept: float = 0.3,
                               thin: int = 1, step0: float | None = None,
                               flip_prob: float = 0.1) -> PosteriorChain:
    """Two-chart variant for tiny n: the chart covers only the hemisphere
    <w, w*> > 0, so a symmetric sign-flip proposal w -> -w mixes across both
    hemispheres. State is (sign, z); density at (s, z) is
    exp(-n emp_risk(s w(z))) (1+||z||^2)^(-d/2)."""
    if not steps > burn_in >= 0:
        raise ValueError("need steps > burn_in >= 0")
    gen = _as_generator(rng)
    d = chart.d
    dm = d - 1
    n = 0 if D is None else D.n
    if step0 is None:
        step0 = 2.4 / math.sqrt(max(dm, 1) * (n * 0.2066 / 3.0 + d))

    def logp(sign, z):
        lp = log_chart_jacobian(z, d)
        if D is not None and D.n > 0:
            lp -= D.n * risk.empirical_risk(sign * chart.map(z), D)
        return lp

    z = np.zeros(dm)
    sign = 1.0
    lp = logp(sign, z)
    log_step = math.log(step0)
    keep = (steps - burn_in) // thin
    zs = np.zeros((keep, dm))
    ws = np.zeros((keep, d))
    logps = np.zeros(keep)
    flags = np.zeros(keep, dtype=np.uint8)
    kept = 0
    n_acc_post = 0
    for k in range(steps):
        if gen.random() < flip_prob:
            cand_sign, cand_z = -sign, z
        else:
            cand_sign, cand_z = sign, z + math.exp(log_step) * gen.standard_normal(dm)
        lpp = logp(cand_sign, cand_z)
        alpha = min(1.0, math.exp(min(lpp - lp, 0.0)))
        accepted = gen.random() < alpha
        if accepted:
            sign, z, lp = cand_sign, cand_z, lpp
        if k < burn_in:
            log_step += (alpha - target_accept) / (1.0 + k) ** 0.6
        else:
            n_acc_post += accepted
            j = k - burn_in
            if (j + 1) % thin == 0 and kept < keep:
                zs[kept] = z
                ws[kept] = sign * chart.map(z)
                logps[kept] = lp
                flags[kept] = accepted
                kept += 1
    rate = n_acc_post / (steps - burn_in)
    seed = rng.seed if isinstance(rng, RngStream) else None
    return PosteriorChain(zs=zs[:kept], ws=ws[:kept], logps=logps[:kept],
                          accept_flags=flags[:kept], acceptance_rate=float(rate),
                          step_size=math.exp(log_step), burn_in=burn_in,
                          thin=thin, seed=seed)


def excess_risk_on_sphere(ws: np.ndarray, w_star: TargetVector,
                          nodes: int = risk.DEFAULT_NODES,
                          chunk: int = 256) -> np.ndarray:
    """Population excess risk for a batch of unit vectors.

    On the sphere the risk depends on w only through c = <w, w*>, so the 2-D
    quadrature is evaluated for a batch of c values at once.
    """
    ws = np.atleast_2d(np.asarray(ws, dtype=np.float64))
    c = ws @ w_star.dense()
    x, gw = risk.hermgauss(nodes)
    s = math.sqrt(2.0) * x
    g = math.sqrt(2.0) * x
    ps = sigmoid(s)
    bayes = risk.bayes_risk(w_star, nodes)
    out = np.empty(len(c))
    for lo in range(0, len(c), chunk):
        cc = c[lo:lo + chunk]
        sig_perp = np.sqrt(np.maximum(1.0 - cc * cc, 0.0))
        t = cc[:, None, None] * s[None, :, None] + sig_perp[:, None, None] * g[None, None, :]
        vals = ps[None, :, None] * logistic_loss(t) + (1.0 - ps)[None, :, None] * logistic_loss(-t)
        out[lo:lo + chunk] = np.einsum("i,kij,j->k", gw, vals, gw) / math.pi - bayes
    return out


def posterior_excess_risk(chain: PosteriorChain, w_star: TargetVector,
                          nodes: int = risk.DEFAULT_NODES,
                          n_batches: int = 50) -> dict:
    """Monte Carlo posterior mean of the excess risk with batch-means s.e."""
    if len(chain) == 0:
        raise ValueError("chain has no retained samples")
    ex = excess_risk_on_sphere(chain.ws, w_star, nodes)
    mean = float(np.mean(ex))
    k = min(n_batches, len(ex))
    usable = (len(ex) // k) * k
    if k >= 2 and usable >= k:
        bm = ex[:usable].reshape(k, -1).mean(axis=1)
        se = float(np.std(bm, ddof=1) / math.sqrt(k))
    else:
        se = float(np.std(ex, ddof=1) / math.sqrt(len(ex))) if len(ex) > 1 else float("nan")
    return {"mean": mean, "std_error": se, "n_samples": int(len(ex))}


def tangent_hessian_check(w_star: TargetVector, nodes: int, mc_samples: int,
                          rng, chunk: int = 200_000) -> dict:
    """Monte Carlo estimate of P_T E[sigma'(x.w*) x x^T] P_T against kappa P_T.

    Works in the tangent basis, so the claim under test reads: diagonal
    entries equal kappa, off-diagonals vanish, trace/(d-1) equals kappa.
    """
    chart = TangentChart.at(w_star)
    d = w_star.d
    gen = _as_generator(rng)
    dm = d - 1
    acc = np.zeros((dm, dm))
    acc_sq = np.zeros((dm, dm))
    done = 0
    while done < mc_samples:
        m = min(chunk, mc_samples - done)
        X = gen.standard_normal((m, d))
        t = X @ w_star.dense()
        s = sigmoid(t)
        a = s * (1.0 - s)
        Xi = X @ chart.basis
        acc += (Xi * a[:, None]).T @ Xi
        acc_sq += ((Xi * a[:, None]) ** 2).T @ (Xi ** 2)
        done += m
    M = acc / mc_samples
    second = acc_sq / mc_samples
    se = np.sqrt(np.maximum(second - M * M, 0.0) / mc_samples)
    kappa = risk.a_of_norm(1.0, nodes)
    off = ~np.eye(dm, dtype=bool)
    return {
        "kappa": kappa,
        "kappa_hat": float(np.trace(M) / dm),
        "max_offdiag": float(np.max(np.abs(M[off]))),
        "max_diag_dev": float(np.max(np.abs(np.diag(M) - kappa))),
        "max_offdiag_se_units": float(np.max(np.abs(M[off]) / se[off])),
        "max_diag_dev_se_units": float(np.max(np.abs(np.diag(M) - kappa) / np.diag(se))),
        "mc_samples": int(mc_samples),
    }


def gaussian_norm_third_moment(d: int) -> float:
    """E||x||^3 for x ~ N(0, I_d): 2^{3/2} Gamma((d+3)/2) / Gamma(d/2)."""
    return float(2.0 ** 1.5 * math.exp(gammaln((d + 3) / 2.0) - gammaln(d / 2.0)))


def self_concordance_radius(d: int, nodes: int = risk.DEFAULT_NODES) -> tuple[float, float]:
    """(r, R) with R = E||x||^3 / (kappa E||x||^2) and r = min(1/2, 1/R)."""
    kappa = risk.a_of_norm(1.0, nodes)
    R = gaussian_norm_third_moment(d) / (kappa * d)
    return min(0.5, 1.0 / R), R


def quadratic_lower_check(w_star: TargetVector, nodes: int, trials: int, rng,
                          r: float | None = None) -> dict:
    """Sample z in the radius-r tangent ball and test the quadratic lower
    bound excess(w(z)) >= C * kappa * ||z||^2 with the lemma's case constant
    C = min(4/15, (1/3) / (1 + 1/R^2))."""
    d = w_star.d
    r_auto, R = self_concordance_radius(d, nodes)
    if r is None:
        r = r_auto
    C = min(4.0 / 15.0, (1.0 / 3.0) / (1.0 + 1.0 / R ** 2))
    kappa = risk.a_of_norm(1.0, nodes)
    chart = TangentChart.at(w_star)
    gen = _as_generator(rng)
    dirs = gen.standard_normal((trials, d - 1))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    radii = r * gen.random(trials) ** (1.0 / (d - 1))
    Z = dirs * radii[:, None]
    ex = excess_risk_on_sphere(chart.map_batch(Z), w_star, nodes)
    bound = C * kappa * np.sum(Z * Z, axis=1)
    passed = ex >= bound - 1e-14
    return {
        "pass_fraction": float(np.mean(passed)),
        "radius": float(r),
        "R": float(R),
        "constant": float(C),
        "min_margin": float(np.min(ex - bound)),
        "trials": int(trials),
    }


def numeric_hessian_V(z0: np.ndarray, D: Dataset | None, chart: TangentChart,
                      h: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian of V(z) = -log_posterior(z)."""
    z0 = np.asarray(z0, dtype=np.float64)
    dm = z0.size

    def V(z):
        return -log_posterior(z, D, chart)

    H = np.zeros((dm, dm))
    for i in range(dm):
        for j in range(i, dm):
            ei = np.zeros(dm)
            ej = np.zeros(dm)
            ei[i] = h
            ej[j] = h
            val = (V(z0 + ei + ej) - V(z0 + ei - ej)
                   - V(z0 - ei + ej) + V(z0 - ei - ej)) / (4.0 * h * h)
            H[i, j] = H[j, i] = val
    return H


def export_chain_csv(chain: PosteriorChain, w_star: TargetVector, path,
                     nodes: int = risk.DEFAULT_NODES) -> None:
    """Write `idx,accept,logpost,znorm,excess` for every retained sample."""
    ex = excess_risk_on_sphere(chain.ws, w_star, nodes)
    znorm = np.linalg.norm(chain.zs, axis=1)
    rows = [f"{i},{int(chain.accept_flags[i])},{chain.logps[i]:.17g},"
            f"{znorm[i]:.17g},{ex[i]:.17g}" for i in range(len(chain))]
    Path(path).write_text("idx,accept,logpost,znorm,excess\n" + "\n".join(rows) + "\n")
