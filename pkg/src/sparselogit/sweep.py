"""Experiment driver: training curves, excess-risk-vs-dimension, posterior sweeps.

Cells of a sweep are independent jobs over (d, seed, algo); a thread pool
executes them and results are merged in sorted order, so reruns with the same
config produce byte-identical CSV output regardless of scheduling.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import posterior, risk, trainers
from .model import RngStream, sample_dataset, sample_target

#: rng sub-stream ids per cell
_STREAM_TRAIN, _STREAM_VAL, _STREAM_TEST, _STREAM_CHAIN = 1, 2, 3, 4

DEFAULT_ETA = {"single_gd": 1.0, "spindly_gd": 0.1}
DEFAULT_STEPS = {"single_gd": 1500, "spindly_gd": 2500}


@dataclass
class ExperimentConfig:
    d_list: list[int] = field(default_factory=lambda: [50])
    s: int = 5
    n: int = 1000
    n_test: int = 1000
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    algos: list[str] = field(default_factory=lambda: ["single_gd", "spindly_gd"])
    eta: dict | None = None
    steps: dict | None = None
    alpha: float | None = None
    nodes: int = 64
    target_seed: int = 424242
    mcmc_steps: int = 20_000
    burn_in: int = 4_000
    thin: int = 4
    target_accept: float = 0.3
    jobs: int = 1

    def __post_init__(self):
        self.eta = dict(DEFAULT_ETA, **(self.eta or {}))
        self.steps = dict(DEFAULT_STEPS, **(self.steps or {}))
        if any(d <= self.s for d in self.d_list):
            raise ValueError("every d must exceed the sparsity s")
        if sorted(set(self.d_list)) != list(self.d_list):
            raise ValueError("d_list must be strictly increasing")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.n < 1 or self.n_test < 1 or self.nodes < 16 or self.jobs < 1:
            raise ValueError("sizes must be positive (nodes >= 16)")
        for algo in self.algos:
            if algo not in ("single_gd", "spindly_gd", "single_gf", "spindly_gf"):
                raise ValueError(f"unknown algo {algo!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def target_for(cfg: ExperimentConfig, d: int):
    """One fixed target per dimension; datasets vary with the seed."""
    return sample_target(d, cfg.s, RngStream(cfg.target_seed, d))


def _train_cell(cfg: ExperimentConfig, d: int, seed: int, algo: str):
    w_star = target_for(cfg, d)
    rng = RngStream(seed)
    D = sample_dataset(w_star, cfg.n, rng.child(_STREAM_TRAIN))
    val = sample_dataset(w_star, cfg.n_test, rng.child(_STREAM_VAL))
    eta = cfg.eta[algo]
    steps = cfg.steps[algo]
    if algo == "single_gd":
        traj = trainers.gd_single_layer(D, eta, steps, val=val, support=w_star.support)
    elif algo == "spindly_gd":
        traj = trainers.gd_spindly(D, eta, steps, alpha=cfg.alpha, val=val,
                                   support=w_star.support)
    elif algo == "single_gf":
        traj = trainers.flow_single_layer(D, eta * steps, eta, val=val,
                                          support=w_star.support)
    else:
        traj = trainers.flow_spindly(D, alpha=cfg.alpha, t_end=eta * steps, dt=eta,
                                     val=val, support=w_star.support)
    sel = trainers.early_stop_select(traj)
    excess = risk.excess_risk(sel.w, w_star, cfg.nodes)
    test = sample_dataset(w_star, cfg.n_test, rng.child(_STREAM_TEST))
    excess_test = risk.empirical_risk(sel.w, test) - risk.empirical_risk(w_star.dense(), test)
    return {
        "d": d, "seed": seed, "algo": algo, "excess": excess,
        "stop_time": sel.time, "val_loss": sel.val_loss, "excess_test": excess_test,
    }


def _posterior_cell(cfg: ExperimentConfig, d: int, seed: int):
    w_star = target_for(cfg, d)
    rng = RngStream(seed)
    D = sample_dataset(w_star, cfg.n, rng.child(_STREAM_TRAIN))
    chart = posterior.TangentChart.at(w_star)
    chain = posterior.sample_posterior(D, chart, cfg.mcmc_steps, cfg.burn_in,
                                       rng.child(_STREAM_CHAIN),
                                       target_accept=cfg.target_accept, thin=cfg.thin)
    est = posterior.posterior_excess_risk(chain, w_star, cfg.nodes)
    return {
        "d": d, "seed": seed, "excess": est["mean"], "stderr": est["std_error"],
        "acceptance": chain.acceptance_rate,
    }


def _run_cells(cells, worker, jobs: int):
    if jobs <= 1:
        return [worker(*c) for c in cells]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda c: worker(*c), cells))


def _write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    def fmt(v):
        return f"{v:.17g}" if isinstance(v, float) else str(v)

    lines = [",".join(header)]
    lines += [",".join(fmt(r[h]) for h in header) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def _summarize(rows: list[dict], key_fields: tuple[str, ...]) -> list[dict]:
    keys = sorted({tuple(r[k] for k in key_fields) for r in rows})
    out = []
    for key in keys:
        vals = np.array([r["excess"] for r in rows
                         if tuple(r[k] for k in key_fields) == key])
        summary = dict(zip(key_fields, key))
        summary["mean_excess"] = float(vals.mean())
        summary["stderr"] = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        out.append(summary)
    return out


def run_dimension_sweep(cfg: ExperimentConfig, out_dir) -> dict:
    """Train, early-stop, and score both algorithms on a dimension grid.

    Writes sweep.csv (quadrature excess), sweep_testset.csv (finite test-set
    estimate, for fidelity with a held-out-sample protocol), summary.csv, and
    the echoed config.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(cfg, d, seed, algo) for d in cfg.d_list for seed in cfg.seeds
             for algo in cfg.algos]
    rows = _run_cells(cells, _train_cell, cfg.jobs)
    if len(rows) != len(cells):
        raise RuntimeError("sweep lost cells; refusing to aggregate")
    rows.sort(key=lambda r: (r["d"], r["seed"], r["algo"]))
    base = ["d", "seed", "algo", "excess", "stop_time", "val_loss"]
    _write_csv(out / "sweep.csv", base, rows)
    test_rows = [dict(r, excess=r["excess_test"]) for r in rows]
    _write_csv(out / "sweep_testset.csv", base, test_rows)
    summary = _summarize(rows, ("d", "algo"))
    _write_csv(out / "summary.csv", ["d", "algo", "mean_excess", "stderr"], summary)
    (out / "config.json").write_text(cfg.to_json())
    return {"rows": rows, "summary": summary}


def run_posterior_sweep(cfg: ExperimentConfig, out_dir) -> dict:
    """Posterior excess-risk estimates per (d, seed) plus a per-d summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(cfg, d, seed) for d in cfg.d_list for seed in cfg.seeds]
    rows = _run_cells(cells, _posterior_cell, cfg.jobs)
    if len(rows) != len(cells):
        raise RuntimeError("sweep lost cells; refusing to aggregate")
    rows.sort(key=lambda r: (r["d"], r["seed"]))
    _write_csv(out / "posterior_sweep.csv",
               ["d", "seed", "excess", "stderr", "acceptance"], rows)
    summary = _summarize(rows, ("d",))
    for r in summary:
        r["algo"] = "posterior"
    _write_csv(out / "posterior_summary.csv",
               ["d", "algo", "mean_excess", "stderr"], summary)
    (out / "config.json").write_text(cfg.to_json())
    return {"rows": rows, "summary": summary}


def run_training_curves(cfg: ExperimentConfig, out_dir, include_coords: bool = True) -> dict:
    """Single-configuration training curves for both algorithms.

    Emits one trajectory CSV per algorithm (with coordinate columns when
    requested), the Bayes-risk reference, and run metadata.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = cfg.d_list[0]
    seed = cfg.seeds[0]
    w_star = target_for(cfg, d)
    rng = RngStream(seed)
    D = sample_dataset(w_star, cfg.n, rng.child(_STREAM_TRAIN))
    val = sample_dataset(w_star, cfg.n_test, rng.child(_STREAM_VAL))
    paths = {}
    for algo in cfg.algos:
        if algo == "single_gd":
            traj = trainers.gd_single_layer(D, cfg.eta[algo], cfg.steps[algo],
                                            val=val, support=w_star.support)
        elif algo == "spindly_gd":
            traj = trainers.gd_spindly(D, cfg.eta[algo], cfg.steps[algo],
                                       alpha=cfg.alpha, val=val, support=w_star.support)
        else:
            raise ValueError("training curves expect the GD algorithms")
        path = out / f"curves_{algo}.csv"
        trainers.save_trajectory_csv(traj, path, include_coords=include_coords)
        paths[algo] = str(path)
    bayes = risk.bayes_risk(w_star, cfg.nodes)
    (out / "bayes.json").write_text(json.dumps({"bayes_risk": bayes}, sort_keys=True))
    meta = {
        "d": d, "s": cfg.s, "n": cfg.n, "seed": seed,
        "support": w_star.support.tolist(), "bayes_risk": bayes,
    }
    (out / "curves_meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2))
    (out / "config.json").write_text(cfg.to_json())
    return {"paths": paths, "bayes_risk": bayes}


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=np.float64))
    ly = np.log(np.asarray(y, dtype=np.float64))
    return float(np.polyfit(lx, ly, 1)[0])
