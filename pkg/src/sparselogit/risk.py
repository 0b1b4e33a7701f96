"""Empirical, soft-label, and population logistic risks with their gradients.

Population quantities exploit the Gaussian design: scores (x.w*, x.w) are
jointly Gaussian, so every expectation reduces to one or two dimensions and
is evaluated by Gauss-Hermite quadrature instead of high-dimensional Monte
Carlo. Monte Carlo versions live in :mod:`sparselogit.verify` as oracles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np

from . import kernels
from .model import Dataset, TargetVector, sigmoid, logistic_loss

_SQRT2 = math.sqrt(2.0)
_SQRTPI = math.sqrt(math.pi)

DEFAULT_NODES = 64
MIN_NODES = 16

#: excess risk may only be negative by quadrature noise
EXCESS_CLIP = 1e-10


@lru_cache(maxsize=32)
def hermgauss(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Physicists' Gauss-Hermite nodes/weights (cached, read-only)."""
    if nodes < MIN_NODES:
        raise ValueError(f"need at least {MIN_NODES} quadrature nodes")
    x, w = np.polynomial.hermite.hermgauss(nodes)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_expectation(f, nodes: int = DEFAULT_NODES) -> float:
    """E[f(G)] for G ~ N(0,1) by Gauss-Hermite quadrature."""
    x, w = hermgauss(nodes)
    return float(np.sum(w * f(_SQRT2 * x)) / _SQRTPI)


@dataclass(frozen=True)
class CurvatureScalars:
    """Link-curvature scalars a(w) = E[sigma'(x.w)], a* at the target, kappa."""

    a_of_w: float
    a_star: float
    kappa: float
    nodes: int


@dataclass(frozen=True)
class RiskReport:
    value: float
    method: str
    size: int
    gradient: list | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def a_of_norm(r: float, nodes: int = DEFAULT_NODES) -> float:
    """a(w) as a function of ||w||_2 alone; exactly 1/4 at r = 0."""
    x, w = hermgauss(nodes)
    return kernels.active.a_of_norm(float(abs(r)), x, w)


def curvature_scalars(w, w_star: TargetVector, nodes: int = DEFAULT_NODES) -> CurvatureScalars:
    w = np.asarray(w, dtype=np.float64)
    a_w = a_of_norm(float(np.linalg.norm(w)), nodes)
    a_star = a_of_norm(float(np.linalg.norm(w_star.dense())), nodes)
    return CurvatureScalars(a_of_w=a_w, a_star=a_star, kappa=a_of_norm(1.0, nodes), nodes=nodes)


def empirical_risk(w, D: Dataset) -> float:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (D.d,):
        raise ValueError("dimension mismatch")
    return float(kernels.active.emp_risk(D.signed, w))


def empirical_grad(w, D: Dataset) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (D.d,):
        raise ValueError("dimension mismatch")
    return np.asarray(kernels.active.emp_grad(D.signed, w))


def empirical_hessian(w, D: Dataset) -> np.ndarray:
    """(1/n) sum sigma'(x_i.w) x_i x_i^T (labels drop out of sigma')."""
    t = D.X @ np.asarray(w, dtype=np.float64)
    s = sigmoid(t)
    a = s * (1.0 - s)
    return (D.X * a[:, None]).T @ D.X / D.n


def soft_label_risk(w, D: Dataset) -> float:
    if D.soft is None:
        raise ValueError("dataset carries no soft labels")
    t = D.X @ np.asarray(w, dtype=np.float64)
    return float(np.mean(D.soft * logistic_loss(t) + (1.0 - D.soft) * logistic_loss(-t)))


def soft_label_grad(w, D: Dataset) -> np.ndarray:
    if D.soft is None:
        raise ValueError("dataset carries no soft labels")
    t = D.X @ np.asarray(w, dtype=np.float64)
    return (sigmoid(t) - D.soft) @ D.X / D.n


def soft_label_hessian(w, D: Dataset) -> np.ndarray:
    t = D.X @ np.asarray(w, dtype=np.float64)
    s = sigmoid(t)
    a = s * (1.0 - s)
    return (D.X * a[:, None]).T @ D.X / D.n


def population_risk(w, w_star: TargetVector, nodes: int = DEFAULT_NODES) -> float:
    """E[loss(y x.w)] under the model via a 2-D Gaussian reduction.

    With s = x.w* ~ N(0,1) and t = x.w = c*s + sqrt(||w||^2 - c^2) g for
    independent g ~ N(0,1), c = <w, w*>, the risk is
    E[sigma(s) loss(t) + sigma(-s) loss(-t)].
    """
    w = np.asarray(w, dtype=np.float64)
    ws = w_star.dense()
    c = float(w @ ws)
    var_perp = max(float(w @ w) - c * c, 0.0)
    x, gw = hermgauss(nodes)
    s = _SQRT2 * x
    ps = sigmoid(s)
    if var_perp < 1e-28:
        t = c * s
        vals = ps * logistic_loss(t) + (1.0 - ps) * logistic_loss(-t)
        return float(np.sum(gw * vals) / _SQRTPI)
    g = _SQRT2 * x
    t = c * s[:, None] + math.sqrt(var_perp) * g[None, :]
    vals = ps[:, None] * logistic_loss(t) + (1.0 - ps)[:, None] * logistic_loss(-t)
    return float(gw @ vals @ gw / math.pi)


def bayes_risk(w_star: TargetVector, nodes: int = DEFAULT_NODES) -> float:
    return population_risk(w_star.dense(), w_star, nodes)


def excess_risk(w, w_star: TargetVector, nodes: int = DEFAULT_NODES) -> float:
    """population_risk(w) - population_risk(w*), clipped only within noise."""
    gap = population_risk(w, w_star, nodes) - bayes_risk(w_star, nodes)
    if gap < -EXCESS_CLIP:
        raise ValueError(f"negative excess risk {gap}: quadrature misconfigured")
    return max(gap, 0.0)


def population_grad_stein(w, w_star: TargetVector, nodes: int = DEFAULT_NODES) -> np.ndarray:
    """Closed-form population gradient: w_j a(w) off-support, minus w*_j a* on it."""
    w = np.asarray(w, dtype=np.float64)
    a_w = a_of_norm(float(np.linalg.norm(w)), nodes)
    a_star = a_of_norm(float(np.linalg.norm(w_star.dense())), nodes)
    g = w * a_w
    g[w_star.support] -= w_star.values * a_star
    return g


def noise_vector(w, D: Dataset, w_star: TargetVector, nodes: int = DEFAULT_NODES) -> np.ndarray:
    """Gradient sampling noise: empirical gradient minus Stein closed form."""
    return empirical_grad(w, D) - population_grad_stein(w, w_star, nodes)


def noise_bound_gamma(n: int, d: int, eta: float) -> float:
    """High-probability uniform bound 4 sqrt(log(2d/eta)/n) on |noise_j|."""
    if not (0.0 < eta < 1.0):
        raise ValueError("confidence eta must lie in (0, 1)")
    return 4.0 * math.sqrt(math.log(2.0 * d / eta) / n)
