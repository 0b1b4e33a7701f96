"""Gradient dynamics on the empirical risk and their trajectory records.

Two parameterizations of the same linear predictor:

* single layer: w' = -grad(emp_risk), w(0) = 0 (rotation invariant);
* spindly / factored: w = u * v trained by flow or GD on (u, v) from the
  balanced start u(0) = v(0) = alpha * ones, which keeps u = v and makes the
  predictor follow w' = -2|w| * grad(emp_risk).

All integrators are fixed-step (RK4 for flows, explicit steps for GD) with a
divergence guard; records are dense up to a cap, then log-thinned.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .model import Dataset, _as_generator

#: balanced (u, v) flow conserves u*u - v*v, so w = u*v obeys
#: w' = -(u*u + v*v) grad = -2|w| grad; the factor 2 matters when comparing
#: against the factored integrator.
SPINDLY_RATE = 2.0

MAX_RECORDS_DEFAULT = 10_000


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    iterates: np.ndarray
    train_loss: np.ndarray
    val_loss: np.ndarray
    norm_S: np.ndarray
    norm_Sc: np.ndarray
    algo: str
    step_size: float
    init_scale: float
    support: np.ndarray
    diverged: bool = False
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    a_range: tuple | None = None

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class StopSelection:
    index: int
    w: np.ndarray
    val_loss: float
    time: float


def _subspace_norms(W: np.ndarray, support: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = np.zeros(W.shape[1], dtype=bool)
    mask[support] = True
    norm_s = np.sum(W[:, mask] ** 2, axis=1)
    norm_sc = np.sum(W[:, ~mask] ** 2, axis=1)
    return norm_s, norm_sc


def _build_trajectory(W, train, val, n_rec, status, *, times, algo,
                      step_size, init_scale, support, U=None, V=None,
                      a_range=None) -> Trajectory:
    sl = slice(0, n_rec)
    norm_s, norm_sc = _subspace_norms(W[sl], support)
    return Trajectory(
        times=times[sl],
        iterates=W[sl],
        train_loss=train[sl],
        val_loss=val[sl],
        norm_S=norm_s,
        norm_Sc=norm_sc,
        algo=algo,
        step_size=step_size,
        init_scale=init_scale,
        support=np.asarray(support, dtype=np.int64),
        diverged=bool(status),
        u=None if U is None else U[sl],
        v=None if V is None else V[sl],
        a_range=a_range,
    )


def _signed_or_empty(D: Dataset | None, d: int) -> np.ndarray:
    if D is None:
        return np.zeros((0, d))
    return np.asarray(D.signed)


def flow_single_layer(D: Dataset, t_end: float, dt: float, val: Dataset | None = None,
                      support=None, max_records: int = MAX_RECORDS_DEFAULT) -> Trajectory:
    """Integrate w' = -grad(emp_risk) from w(0) = 0 with RK4."""
    if dt <= 0 or t_end < dt:
        raise ValueError("need dt > 0 and t_end >= dt")
    n_steps = int(round(t_end / dt))
    rec = kernels.record_steps(n_steps, max_records)
    w0 = np.zeros(D.d)
    W, train, vl, n_rec, status = kernels.active.flow_single(
        np.asarray(D.signed), _signed_or_empty(val, D.d), w0, dt, n_steps, rec)
    support = np.arange(0) if support is None else support
    return _build_trajectory(W, train, vl, n_rec, status,
                             times=rec * dt, algo="single_gf", step_size=dt,
                             init_scale=0.0, support=support)


def flow_spindly(D: Dataset, alpha: float | None = None, t_end: float = 10.0,
                 dt: float = 1e-2, val: Dataset | None = None, support=None,
                 max_records: int = MAX_RECORDS_DEFAULT,
                 u0: np.ndarray | None = None, v0: np.ndarray | None = None) -> Trajectory:
    """Integrate the factored system from u(0) = v(0) = alpha * ones.

    Default alpha = 1/sqrt(d), so the predictor starts at (1/d) * ones.
    ``u0``/``v0`` override the balanced start (used by conservation checks).
    """
    if dt <= 0 or t_end < dt:
        raise ValueError("need dt > 0 and t_end >= dt")
    if alpha is None:
        alpha = 1.0 / np.sqrt(D.d)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n_steps = int(round(t_end / dt))
    rec = kernels.record_steps(n_steps, max_records)
    u_init = np.full(D.d, alpha) if u0 is None else np.asarray(u0, dtype=np.float64)
    v_init = np.full(D.d, alpha) if v0 is None else np.asarray(v0, dtype=np.float64)
    U, V, train, vl, n_rec, status = kernels.active.flow_spindly(
        np.asarray(D.signed), _signed_or_empty(val, D.d), u_init, v_init, dt, n_steps, rec)
    support = np.arange(0) if support is None else support
    return _build_trajectory(U * V, train, vl, n_rec, status,
                             times=rec * dt, algo="spindly_gf", step_size=dt,
                             init_scale=alpha, support=support, U=U, V=V)


def flow_spindly_reduced(D: Dataset, alpha: float | None = None, t_end: float = 10.0,
                         dt: float = 1e-2, val: Dataset | None = None, support=None,
                         rate: float = SPINDLY_RATE,
                         max_records: int = MAX_RECORDS_DEFAULT) -> Trajectory:
    """Predictor-space form w' = -rate * |w| * grad, w(0) = alpha^2 * ones."""
    if dt <= 0 or t_end < dt:
        raise ValueError("need dt > 0 and t_end >= dt")
    if alpha is None:
        alpha = 1.0 / np.sqrt(D.d)
    n_steps = int(round(t_end / dt))
    rec = kernels.record_steps(n_steps, max_records)
    w0 = np.full(D.d, alpha * alpha)
    W, train, vl, n_rec, status = kernels.active.flow_reduced(
        np.asarray(D.signed), _signed_or_empty(val, D.d), w0, rate, dt, n_steps, rec)
    support = np.arange(0) if support is None else support
    return _build_trajectory(W, train, vl, n_rec, status,
                             times=rec * dt, algo="spindly_gf", step_size=dt,
                             init_scale=alpha, support=support)


def gd_single_layer(D: Dataset, eta: float, steps: int, val: Dataset | None = None,
                    support=None, max_records: int = MAX_RECORDS_DEFAULT) -> Trajectory:
    if eta <= 0:
        raise ValueError("step size must be positive")
    rec = kernels.record_steps(steps, max_records)
    w0 = np.zeros(D.d)
    W, train, vl, n_rec, status = kernels.active.gd_single(
        np.asarray(D.signed), _signed_or_empty(val, D.d), w0, eta, steps, rec)
    support = np.arange(0) if support is None else support
    return _build_trajectory(W, train, vl, n_rec, status,
                             times=rec * eta, algo="single_gd", step_size=eta,
                             init_scale=0.0, support=support)


def gd_spindly(D: Dataset, eta: float, steps: int, alpha: float | None = None,
               val: Dataset | None = None, support=None,
               max_records: int = MAX_RECORDS_DEFAULT) -> Trajectory:
    if eta <= 0:
        raise ValueError("step size must be positive")
    if alpha is None:
        alpha = 1.0 / np.sqrt(D.d)
    rec = kernels.record_steps(steps, max_records)
    u0 = np.full(D.d, alpha)
    v0 = np.full(D.d, alpha)
    U, V, train, vl, n_rec, status = kernels.active.gd_spindly(
        np.asarray(D.signed), _signed_or_empty(val, D.d), u0, v0, eta, steps, rec)
    support = np.arange(0) if support is None else support
    return _build_trajectory(U * V, train, vl, n_rec, status,
                             times=rec * eta, algo="spindly_gd", step_size=eta,
                             init_scale=alpha, support=support, U=U, V=V)


def early_stop_select(traj: Trajectory) -> StopSelection:
    """Iterate with minimal recorded validation loss; ties go to earlier time."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    if np.all(np.isnan(traj.val_loss)):
        raise ValueError("trajectory has no validation losses")
    idx = int(np.nanargmin(traj.val_loss))
    return StopSelection(index=idx, w=traj.iterates[idx],
                         val_loss=float(traj.val_loss[idx]),
                         time=float(traj.times[idx]))


def sample_rotation(d: int, rng) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian with sign fix."""
    gen = _as_generator(rng)
    A = gen.standard_normal((d, d))
    Q, R = np.linalg.qr(A)
    return Q * np.sign(np.diag(R))


def sample_signed_permutation(d: int, rng, flip_signs: bool = True) -> np.ndarray:
    gen = _as_generator(rng)
    P = np.zeros((d, d))
    perm = gen.permutation(d)
    signs = np.where(gen.random(d) < 0.5, -1.0, 1.0) if flip_signs else np.ones(d)
    P[np.arange(d), perm] = signs
    return P


def rotate_dataset(D: Dataset, U: np.ndarray) -> Dataset:
    """Map rows x_i to U x_i; labels (and soft labels) unchanged."""
    return Dataset(X=D.X @ U.T, y=D.y, seed=D.seed, soft=D.soft)


_ALGOS = {
    "single_gf": lambda D, t_end, dt: flow_single_layer(D, t_end, dt),
    "spindly_gf": lambda D, t_end, dt: flow_spindly(D, t_end=t_end, dt=dt),
}


def equivariance_gap(algo: str, D: Dataset, U: np.ndarray, t_end: float, dt: float) -> float:
    """sup_t || w_{UD}(t) - U w_D(t) ||_2 over recorded times."""
    if algo not in _ALGOS:
        raise ValueError(f"unknown algo {algo!r}; choose from {sorted(_ALGOS)}")
    run = _ALGOS[algo]
    traj_a = run(D, t_end, dt)
    traj_b = run(rotate_dataset(D, U), t_end, dt)
    n = min(len(traj_a), len(traj_b))
    diff = traj_b.iterates[:n] - traj_a.iterates[:n] @ U.T
    return float(np.max(np.linalg.norm(diff, axis=1)))


def save_trajectory_csv(traj: Trajectory, path, include_coords: bool = False) -> None:
    """Write `t,train_loss,val_loss,norm_S,norm_Sc[,w_0..w_{d-1}]`."""
    path = Path(path)
    cols = ["t", "train_loss", "val_loss", "norm_S", "norm_Sc"]
    mat = [traj.times[:, None], traj.train_loss[:, None], traj.val_loss[:, None],
           traj.norm_S[:, None], traj.norm_Sc[:, None]]
    if include_coords:
        cols += [f"w_{j}" for j in range(traj.iterates.shape[1])]
        mat.append(traj.iterates)
    np.savetxt(path, np.hstack(mat), fmt="%.17g", delimiter=",",
               header=",".join(cols), comments="")
