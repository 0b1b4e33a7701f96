"""Independent brute-force oracles for the identities the other modules rely on.

Every check here recomputes its target quantity by a route disjoint from the
implementation it validates: Monte Carlo against quadrature, damped Newton
against gradient flow, finite differences against closed forms.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import risk
from .model import (RngStream, TargetVector, _as_generator, sigmoid,
                    sample_target, sample_dataset, is_linearly_separable)
from .posterior import TangentChart


@dataclass
class OracleReport:
    name: str
    passed: bool
    discrepancy: float
    tolerance: float
    seconds: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def newton_minimize(grad_fn, hess_fn, w0: np.ndarray, grad_tol: float = 1e-10,
                    max_iter: int = 200) -> tuple[np.ndarray, bool]:
    """Damped Newton with Levenberg fallback; converged iff ||grad|| < tol."""
    w = np.asarray(w0, dtype=np.float64).copy()
    lam = 0.0
    for _ in range(max_iter):
        g = grad_fn(w)
        gn = float(np.linalg.norm(g))
        if gn < grad_tol:
            return w, True
        H = hess_fn(w)
        d = H.shape[0]
        for _ in range(60):
            try:
                step = np.linalg.solve(H + lam * np.eye(d), -g)
            except np.linalg.LinAlgError:
                lam = max(10.0 * lam, 1e-10)
                continue
            g_new = grad_fn(w + step)
            if np.linalg.norm(g_new) < gn or lam > 1e8:
                w = w + step
                lam = lam / 4.0 if lam > 1e-12 else 0.0
                break
            lam = max(10.0 * lam, 1e-10)
    return w, float(np.linalg.norm(grad_fn(w))) < grad_tol


def mc_population_gradient(w: np.ndarray, w_star: TargetVector, mc_samples: int,
                           rng, chunk: int = 1_000_000) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo of E[x_j (sigma(x.w) - sigma(x_S.w*_S))]; returns (mean, se)."""
    gen = _as_generator(rng)
    d = w_star.d
    ws = w_star.dense()
    acc = np.zeros(d)
    acc2 = np.zeros(d)
    done = 0
    while done < mc_samples:
        m = min(chunk, mc_samples - done)
        X = gen.standard_normal((m, d))
        diff = sigmoid(X @ w) - sigmoid(X @ ws)
        term = X * diff[:, None]
        acc += term.sum(axis=0)
        acc2 += (term * term).sum(axis=0)
        done += m
    mean = acc / mc_samples
    var = np.maximum(acc2 / mc_samples - mean * mean, 0.0)
    return mean, np.sqrt(var / mc_samples)


def mc_population_risk(w: np.ndarray, w_star: TargetVector, mc_samples: int,
                       rng, chunk: int = 1_000_000) -> tuple[float, float]:
    """Monte Carlo population risk E[sigma(s) loss(t) + sigma(-s) loss(-t)]
    with full-dimensional x draws; returns (mean, se)."""
    from .model import logistic_loss

    gen = _as_generator(rng)
    ws = w_star.dense()
    acc = 0.0
    acc2 = 0.0
    done = 0
    while done < mc_samples:
        m = min(chunk, mc_samples - done)
        X = gen.standard_normal((m, w_star.d))
        s = X @ ws
        t = X @ w
        ps = sigmoid(s)
        vals = ps * logistic_loss(t) + (1.0 - ps) * logistic_loss(-t)
        acc += vals.sum()
        acc2 += (vals * vals).sum()
        done += m
    mean = acc / mc_samples
    var = max(acc2 / mc_samples - mean * mean, 0.0)
    return float(mean), float(math.sqrt(var / mc_samples))


def check_stein_identity(d: int = 8, s: int = 3, mc_samples: int = 10_000_000,
                         rng: RngStream | None = None, n_probe: int = 5,
                         tol: float = 1e-2) -> OracleReport:
    """Closed-form population gradient vs Monte Carlo at random probe points.

    Probe coordinates are drawn bounded away from zero so the per-coordinate
    relative error criterion stays well-posed.
    """
    t0 = time.perf_counter()
    rng = RngStream(20260401) if rng is None else rng
    w_star = sample_target(d, s, rng.child(0))
    gen = rng.child(1).generator()
    worst = 0.0
    details = []
    for k in range(n_probe):
        # redraw probes whose closed-form gradient nearly cancels on some
        # coordinate; the per-coordinate relative criterion needs |g_j| >> MC s.e.
        for _ in range(100):
            mag = gen.uniform(0.3, 1.0, size=d)
            sign = np.where(gen.random(d) < 0.5, -1.0, 1.0)
            w = mag * sign
            closed = risk.population_grad_stein(w, w_star, nodes=128)
            if np.abs(closed).min() >= 0.03:
                break
        mc, se = mc_population_gradient(w, w_star, mc_samples, rng.child(10 + k))
        rel = np.abs(mc - closed) / np.abs(closed)
        worst = max(worst, float(rel.max()))
        details.append({"max_rel_err": float(rel.max()),
                        "min_abs_coord": float(np.abs(closed).min()),
                        "max_se": float(se.max())})
    return OracleReport(
        name="stein_identity",
        passed=worst < tol,
        discrepancy=worst,
        tolerance=tol,
        seconds=time.perf_counter() - t0,
        details={"probes": details, "mc_samples": mc_samples, "d": d, "s": s},
    )


def check_soft_vs_hard_minimizers(d: int = 10, s: int = 3, n: int = 200,
                                  rng: RngStream | None = None,
                                  soft_tol: float = 1e-8,
                                  hard_gap: float = 1e-3) -> OracleReport:
    """Newton on both empirical risks: soft labels recover w*, hard do not."""
    t0 = time.perf_counter()
    rng = RngStream(7) if rng is None else rng
    w_star = sample_target(d, s, rng.child(0))
    resamples = 0
    stream = 1
    while True:
        D = sample_dataset(w_star, n, rng.child(stream), with_soft=True)
        if np.linalg.matrix_rank(D.X) == d and not is_linearly_separable(D):
            break
        resamples += 1
        stream += 1
        if resamples > 50:
            raise RuntimeError("could not draw non-separable full-rank data")
    w_soft, ok_soft = newton_minimize(
        lambda w: risk.soft_label_grad(w, D), lambda w: risk.soft_label_hessian(w, D),
        np.zeros(d))
    w_hard, ok_hard = newton_minimize(
        lambda w: risk.empirical_grad(w, D), lambda w: risk.empirical_hessian(w, D),
        np.zeros(d))
    ws = w_star.dense()
    dist_soft = float(np.linalg.norm(w_soft - ws))
    dist_hard = float(np.linalg.norm(w_hard - ws))
    grad_at_star = float(np.linalg.norm(risk.empirical_grad(ws, D)))
    passed = ok_soft and ok_hard and dist_soft < soft_tol and dist_hard > hard_gap \
        and grad_at_star > 0.0
    return OracleReport(
        name="soft_vs_hard_minimizers",
        passed=passed,
        discrepancy=dist_soft,
        tolerance=soft_tol,
        seconds=time.perf_counter() - t0,
        details={"dist_soft": dist_soft, "dist_hard": dist_hard,
                 "hard_grad_at_target": grad_at_star, "resamples": resamples,
                 "newton_converged": bool(ok_soft and ok_hard)},
    )


def check_hessian_concentration(d: int = 20, n: int = 500, trials: int = 100,
                                rng: RngStream | None = None,
                                delta: float = 0.05) -> OracleReport:
    """Empirical tangent Hessian spectrum around kappa across trials.

    Reports the smallest c such that the spectral deviation stays within
    c * sqrt((d + log(1/delta))/n) * kappa on 95% of trials. No target value
    exists; the check passes when the fitted constant is moderate.
    """
    t0 = time.perf_counter()
    rng = RngStream(11) if rng is None else rng
    kappa = risk.a_of_norm(1.0, 128)
    devs = []
    for k in range(trials):
        w_star = sample_target(d, min(3, d - 1), rng.child(2 * k))
        D = sample_dataset(w_star, n, rng.child(2 * k + 1))
        chart = TangentChart.at(w_star)
        t = D.X @ w_star.dense()
        sd = sigmoid(t)
        a = sd * (1.0 - sd)
        Xi = D.X @ chart.basis
        M = (Xi * a[:, None]).T @ Xi / n
        eig = np.linalg.eigvalsh(M)
        devs.append(max(abs(eig[-1] / kappa - 1.0), abs(1.0 - eig[0] / kappa)))
    devs = np.asarray(devs)
    scale = math.sqrt((d + math.log(1.0 / delta)) / n)
    c_hat = float(np.quantile(devs / scale, 0.95))
    return OracleReport(
        name="hessian_concentration",
        passed=c_hat < 10.0,
        discrepancy=c_hat,
        tolerance=10.0,
        seconds=time.perf_counter() - t0,
        details={"c_hat": c_hat, "median_dev": float(np.median(devs)),
                 "kappa": kappa, "trials": trials, "d": d, "n": n},
    )


def check_annihilates_target(d: int = 20, n: int = 500,
                             rng: RngStream | None = None) -> OracleReport:
    """Projector algebra: the tangent-restricted Hessian kills w*."""
    t0 = time.perf_counter()
    rng = RngStream(13) if rng is None else rng
    w_star = sample_target(d, 3, rng.child(0))
    D = sample_dataset(w_star, n, rng.child(1))
    ws = w_star.dense()
    P = np.eye(d) - np.outer(ws, ws)
    t = D.X @ ws
    sd = sigmoid(t)
    a = sd * (1.0 - sd)
    H = P @ ((D.X * a[:, None]).T @ D.X / n) @ P
    resid = float(np.linalg.norm(H @ ws))
    return OracleReport(
        name="tangent_hessian_annihilates_target",
        passed=resid < 1e-10,
        discrepancy=resid,
        tolerance=1e-10,
        seconds=time.perf_counter() - t0,
    )


_CHECKS = {
    "stein_identity": check_stein_identity,
    "soft_vs_hard_minimizers": check_soft_vs_hard_minimizers,
    "hessian_concentration": check_hessian_concentration,
    "tangent_hessian_annihilates_target": check_annihilates_target,
}


def run_all(config: dict) -> list[OracleReport]:
    """Execute the configured oracle suite; see ``_CHECKS`` for names."""
    if not config:
        raise ValueError("empty verification config")
    suite = config.get("suite", "all")
    seed = int(config.get("seed", 0))
    names = list(_CHECKS) if suite == "all" else [s.strip() for s in suite.split(",")]
    sizes = config.get("sizes", {})
    reports = []
    for idx, name in enumerate(names):
        if name not in _CHECKS:
            raise ValueError(f"unknown check {name!r}; available: {sorted(_CHECKS)}")
        kwargs = dict(sizes.get(name, {}))
        kwargs["rng"] = RngStream(seed, 1000 + idx)
        reports.append(_CHECKS[name](**kwargs))
    return reports


def save_reports(reports: list[OracleReport], path) -> bool:
    """Write the JSON report; returns True iff every check passed."""
    ok = all(r.passed for r in reports)
    payload = {"passed": ok, "reports": [r.to_dict() for r in reports]}
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2))
    return ok
