"""Sparse logistic data model: targets, sampled datasets, link/loss scalars.

Labels follow P(y=1|x) = sigmoid(<x, w*>) with x ~ N(0, I_d) and a unit-norm
s-sparse target w* whose support values are strictly positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from . import kernels

_MASK64 = (1 << 64) - 1

UNIT_NORM_TOL = 1e-12


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream id).

    Identical keys reproduce identical draws bit-for-bit, independent of
    creation order, so parallel sweep cells stay reproducible.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = (int(self.seed) & _MASK64, int(self.stream) & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(int(rng)).generator()


def sigmoid(t):
    """Logistic link 1 / (1 + exp(-t)), stable on both tails."""
    t = np.asarray(t, dtype=np.float64)
    out = kernels.active.sigmoid_arr(np.atleast_1d(t))
    return float(out[0]) if t.ndim == 0 else out


def logistic_loss(t):
    """log(1 + exp(-t)) evaluated without overflow."""
    t = np.asarray(t, dtype=np.float64)
    out = kernels.active.softplus_arr(np.atleast_1d(-t))
    return float(out[0]) if t.ndim == 0 else out


@dataclass(frozen=True)
class TargetVector:
    """Unit-norm s-sparse target: positive values on an ordered support set."""

    d: int
    s: int
    support: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "values", values)
        if not (1 <= self.s < self.d):
            raise ValueError(f"need 1 <= s < d, got s={self.s}, d={self.d}")
        if support.shape != (self.s,) or values.shape != (self.s,):
            raise ValueError("support/values must have length s")
        if np.unique(support).size != self.s:
            raise ValueError("support indices must be distinct")
        if support.min() < 0 or support.max() >= self.d:
            raise ValueError("support indices out of range")
        if not np.all(np.diff(support) > 0):
            raise ValueError("support must be sorted ascending")
        if np.any(values <= 0):
            raise ValueError("support values must be strictly positive")
        norm = float(np.sqrt(values @ values))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"target must have unit norm, got {norm!r}")

    @cached_property
    def w_min(self) -> float:
        return float(self.values.min())

    @cached_property
    def _dense(self) -> np.ndarray:
        w = np.zeros(self.d)
        w[self.support] = self.values
        w.setflags(write=False)
        return w

    def dense(self) -> np.ndarray:
        return self._dense

    @cached_property
    def inactive(self) -> np.ndarray:
        mask = np.ones(self.d, dtype=bool)
        mask[self.support] = False
        return np.nonzero(mask)[0]


def sample_target(d: int, s: int, rng, values=None) -> TargetVector:
    """Draw a target: uniform support, flat 1/sqrt(s) profile or custom values.

    Custom values must be positive; they are renormalized to unit norm.
    """
    if not (1 <= s < d):
        raise ValueError(f"need 1 <= s < d, got s={s}, d={d}")
    gen = _as_generator(rng)
    support = np.sort(gen.choice(d, size=s, replace=False))
    if values is None:
        vals = np.full(s, 1.0 / np.sqrt(s))
    else:
        vals = np.asarray(values, dtype=np.float64)
        if vals.shape != (s,):
            raise ValueError("custom profile must supply s values")
        if np.any(vals <= 0):
            raise ValueError("custom profile values must be positive")
        vals = vals / np.sqrt(vals @ vals)
    return TargetVector(d=d, s=s, support=support, values=vals)


@dataclass(frozen=True)
class Dataset:
    """Design matrix with +-1 labels and optional soft labels sigma(x.w*)."""

    X: np.ndarray
    y: np.ndarray
    seed: int | None = None
    soft: np.ndarray | None = None

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if X.ndim != 2:
            raise ValueError("X must be n x d")
        if y.shape != (X.shape[0],):
            raise ValueError("y length must match X rows")
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("labels must be +-1")
        if self.soft is not None:
            soft = np.asarray(self.soft, dtype=np.float64)
            object.__setattr__(self, "soft", soft)
            if soft.shape != y.shape:
                raise ValueError("soft labels must match y shape")
            if np.any(soft <= 0.0) or np.any(soft >= 1.0):
                raise ValueError("soft labels must lie strictly in (0, 1)")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @cached_property
    def signed(self) -> np.ndarray:
        """Rows y_i * x_i, the only form the loss and its gradient need."""
        Z = self.X * self.y[:, None]
        Z.setflags(write=False)
        return Z


def sample_dataset(w_star: TargetVector, n: int, rng, with_soft: bool = False) -> Dataset:
    """Draw n rows x ~ N(0, I) and labels y = +1 w.p. sigmoid(x.w*)."""
    if n < 1:
        raise ValueError("need n >= 1")
    gen = _as_generator(rng)
    X = gen.standard_normal((n, w_star.d))
    p = sigmoid(X @ w_star.dense())
    y = np.where(gen.random(n) < p, 1.0, -1.0)
    seed = rng.seed if isinstance(rng, RngStream) else None
    return Dataset(X=X, y=y, seed=seed, soft=p if with_soft else None)


def _perceptron_separates(Z: np.ndarray, max_updates: int) -> bool:
    """True iff the perceptron finds a separator within the update budget."""
    n, d = Z.shape
    w = np.zeros(d)
    for _ in range(max_updates):
        margins = Z @ w
        bad = np.nonzero(margins <= 0.0)[0]
        if bad.size == 0:
            return True
        w = w + Z[bad[0]]
    return False


def is_linearly_separable(D: Dataset, perceptron_updates: int | None = None) -> bool:
    """Decide existence of w with y_i x_i.w > 0 for all i.

    Fast path: perceptron with an update cap (a found separator is an exact
    certificate). Exact fallback: LP feasibility of y_i x_i.w >= 1, which is
    equivalent to strict separability by rescaling.
    """
    Z = np.asarray(D.signed)
    if perceptron_updates is None:
        perceptron_updates = 20 * D.n
    if _perceptron_separates(Z, perceptron_updates):
        return True
    res = linprog(
        c=np.zeros(D.d),
        A_ub=-Z,
        b_ub=-np.ones(D.n),
        bounds=[(None, None)] * D.d,
        method="highs",
    )
    if res.status == 0:
        return True
    if res.status == 2:
        return False
    raise RuntimeError(f"separability undecided: LP solver status {res.status}")


def save_dataset_csv(D: Dataset, w_star: TargetVector, path) -> None:
    """Write `x0,...,x{d-1},y[,soft]` rows plus a metadata sidecar JSON."""
    path = Path(path)
    cols = [f"x{j}" for j in range(D.d)] + ["y"]
    mat = [D.X, D.y[:, None]]
    if D.soft is not None:
        cols.append("soft")
        mat.append(D.soft[:, None])
    np.savetxt(path, np.hstack(mat), fmt="%.17g", delimiter=",",
               header=",".join(cols), comments="")
    meta = {
        "d": D.d,
        "s": w_star.s,
        "n": D.n,
        "seed": D.seed,
        "support": w_star.support.tolist(),
        "values": w_star.values.tolist(),
    }
    path.with_suffix(".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2))


def load_dataset_csv(path) -> tuple[Dataset, TargetVector]:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    has_soft = header[-1] == "soft"
    d = len(header) - (2 if has_soft else 1)
    X = raw[:, :d]
    y = raw[:, d]
    soft = raw[:, d + 1] if has_soft else None
    meta = json.loads(path.with_suffix(".meta.json").read_text())
    target = TargetVector(
        d=meta["d"],
        s=meta["s"],
        support=np.asarray(meta["support"], dtype=np.int64),
        values=np.asarray(meta["values"], dtype=np.float64),
    )
    return Dataset(X=X, y=y, seed=meta["seed"], soft=soft), target
