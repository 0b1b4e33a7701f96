"""Command-line entry point: one executable, one subcommand per module.

Every run writes a ``metadata.json`` next to its outputs echoing the resolved
configuration (file values overridden by flags) and the seed. Exit codes:
0 success, 1 a verification suite reported failure, 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import kernels, posterior, riccati, risk, sweep, trainers, verify
from .model import (RngStream, sample_dataset, sample_target,
                    save_dataset_csv)

_ALGOS = ("single_gf", "spindly_gf", "single_gd", "spindly_gd")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--out", type=str, default="out", help="output directory")
    p.add_argument("--config", type=str, default=None,
                   help="JSON config file with flat keys mirroring the flags")


def _sub(subparsers, name, **kw):
    return subparsers.add_parser(
        name, formatter_class=argparse.ArgumentDefaultsHelpFormatter, **kw)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sparselogit",
        description="Sparse logistic regression laboratory: data simulation, "
                    "training dynamics, Riccati envelopes, spherical posteriors, "
                    "sweeps, and verification oracles.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = _sub(sub, "simulate", help="sample a dataset and write CSV + metadata")
    p.add_argument("--d", type=int, default=50, help="ambient dimension")
    p.add_argument("--s", type=int, default=5, help="sparsity of the target")
    p.add_argument("--n", type=int, default=1000, help="number of samples")
    p.add_argument("--soft", action="store_true", help="also store soft labels")
    _add_common(p)

    p = _sub(sub, "train", help="run one training trajectory and early stopping")
    p.add_argument("--algo", choices=_ALGOS, default="spindly_gd",
                   help="parameterization and optimizer")
    p.add_argument("--d", type=int, default=50, help="ambient dimension")
    p.add_argument("--s", type=int, default=5, help="sparsity of the target")
    p.add_argument("--n", type=int, default=1000, help="training samples")
    p.add_argument("--n-val", type=int, default=1000, help="fresh validation size")
    p.add_argument("--eta", type=float, default=None,
                   help="GD step size (per-algo default when omitted)")
    p.add_argument("--steps", type=int, default=None,
                   help="GD steps / flow steps (per-algo default when omitted)")
    p.add_argument("--dt", type=float, default=1e-2,
                   help="flow integration step (time units)")
    p.add_argument("--alpha", type=float, default=None,
                   help="factored init scale (default 1/sqrt(d))")
    p.add_argument("--coords", action="store_true",
                   help="include per-coordinate columns in the trajectory CSV")
    _add_common(p)

    p = _sub(sub, "envelopes", help="Riccati flow vs closed-form envelopes")
    p.add_argument("--d", type=int, default=50, help="ambient dimension")
    p.add_argument("--s", type=int, default=5, help="sparsity of the target")
    p.add_argument("--n", type=int, default=1000, help="samples for the noise measurement")
    p.add_argument("--eps", type=float, default=0.5,
                   help="stopping-time accuracy target in (0, 1)")
    p.add_argument("--eta-conf", type=float, default=0.05,
                   help="confidence level for the noise bound gamma")
    p.add_argument("--dt", type=float, default=1e-2,
                   help="flow integration step (time units)")
    _add_common(p)

    p = _sub(sub, "posterior", help="sample the spherical Gibbs posterior")
    p.add_argument("--d", type=int, default=10, help="ambient dimension")
    p.add_argument("--s", type=int, default=3, help="sparsity of the target")
    p.add_argument("--n", type=int, default=400, help="training samples")
    p.add_argument("--mcmc-steps", type=int, default=20000, help="total chain length")
    p.add_argument("--burnin", type=int, default=4000,
                   help="adaptation steps discarded from the front")
    p.add_argument("--target-accept", type=float, default=0.3,
                   help="acceptance rate targeted during burn-in")
    _add_common(p)

    p = _sub(sub, "sweep", help="seed-averaged experiment grids")
    p.add_argument("kind", nargs="?", choices=("dimension", "posterior", "curves"),
                   default="dimension", help="which experiment grid to run")
    p.add_argument("--d-list", type=str, default="10,20,40,80",
                   help="comma-separated dimensions")
    p.add_argument("--s", type=int, default=5, help="sparsity of the target")
    p.add_argument("--n", type=int, default=1000, help="training samples per cell")
    p.add_argument("--n-val", type=int, default=1000, help="validation/test size")
    p.add_argument("--seeds", type=str, default="0,1,2,3,4,5,6,7,8,9",
                   help="comma-separated dataset seeds")
    p.add_argument("--eta", type=float, default=None,
                   help="GD step size override for both algorithms")
    p.add_argument("--steps", type=int, default=None,
                   help="GD step count override for both algorithms")
    p.add_argument("--alpha", type=float, default=None,
                   help="factored init scale (default 1/sqrt(d))")
    p.add_argument("--mcmc-steps", type=int, default=20000,
                   help="chain length for the posterior kind")
    p.add_argument("--burnin", type=int, default=4000,
                   help="chain burn-in for the posterior kind")
    p.add_argument("--target-accept", type=float, default=0.3,
                   help="acceptance rate targeted during burn-in")
    p.add_argument("--jobs", type=int, default=1, help="concurrent sweep cells")
    _add_common(p)

    p = _sub(sub, "verify", help="run the independent oracle suite")
    p.add_argument("--suite", type=str, default="all",
                   help="'all' or comma-separated check names")
    _add_common(p)
    return ap


def _resolve_args(parser: argparse.ArgumentParser, argv) -> dict:
    """Resolution order: command-line flags, then config file, then defaults."""
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    resolved = vars(args)
    if not args.config:
        return resolved

    def explicitly_passed(dest: str) -> bool:
        flag = "--" + dest.replace("_", "-")
        return any(a == flag or a.startswith(flag + "=") for a in argv)

    file_cfg = json.loads(Path(args.config).read_text())
    for key, val in file_cfg.items():
        dest = key.replace("-", "_")
        if dest not in resolved:
            parser.error(f"unknown config key {key!r}")
        if not explicitly_passed(dest):
            resolved[dest] = val
    return resolved


def _write_metadata(out: Path, cfg: dict) -> None:
    meta = dict(cfg)
    meta["backend"] = kernels.BACKEND
    out.mkdir(parents=True, exist_ok=True)
    (out / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=2))


def _cmd_simulate(cfg) -> int:
    out = Path(cfg["out"])
    _write_metadata(out, cfg)
    rng = RngStream(cfg["seed"])
    w_star = sample_target(cfg["d"], cfg["s"], rng.child(0))
    D = sample_dataset(w_star, cfg["n"], rng.child(1), with_soft=cfg["soft"])
    save_dataset_csv(D, w_star, out / "dataset.csv")
    return 0


def _cmd_train(cfg) -> int:
    out = Path(cfg["out"])
    _write_metadata(out, cfg)
    rng = RngStream(cfg["seed"])
    w_star = sample_target(cfg["d"], cfg["s"], rng.child(0))
    D = sample_dataset(w_star, cfg["n"], rng.child(1))
    val = sample_dataset(w_star, cfg["n_val"], rng.child(2))
    algo = cfg["algo"]
    eta = cfg["eta"] if cfg["eta"] is not None else sweep.DEFAULT_ETA.get(algo, 0.1)
    steps = cfg["steps"] if cfg["steps"] is not None else sweep.DEFAULT_STEPS.get(algo, 1000)
    if algo == "single_gd":
        traj = trainers.gd_single_layer(D, eta, steps, val=val, support=w_star.support)
    elif algo == "spindly_gd":
        traj = trainers.gd_spindly(D, eta, steps, alpha=cfg["alpha"], val=val,
                                   support=w_star.support)
    elif algo == "single_gf":
        traj = trainers.flow_single_layer(D, cfg["dt"] * steps, cfg["dt"], val=val,
                                          support=w_star.support)
    else:
        traj = trainers.flow_spindly(D, alpha=cfg["alpha"], t_end=cfg["dt"] * steps,
                                     dt=cfg["dt"], val=val, support=w_star.support)
    trainers.save_trajectory_csv(traj, out / "trajectory.csv",
                                 include_coords=cfg["coords"])
    sel = trainers.early_stop_select(traj)
    excess = risk.excess_risk(sel.w, w_star)
    (out / "selection.json").write_text(json.dumps({
        "index": sel.index, "time": sel.time, "val_loss": sel.val_loss,
        "excess_risk": excess, "w": sel.w.tolist(),
    }, sort_keys=True, indent=2))
    return 0


def _cmd_envelopes(cfg) -> int:
    out = Path(cfg["out"])
    _write_metadata(out, cfg)
    rng = RngStream(cfg["seed"])
    w_star = sample_target(cfg["d"], cfg["s"], rng.child(0))
    D = sample_dataset(w_star, cfg["n"], rng.child(1))
    model = riccati.EnvelopeModel.from_dataset(w_star, D, eta_conf=cfg["eta_conf"])
    T = riccati.stopping_time(cfg["eps"], model)
    traj = riccati.riccati_flow(model, T, cfg["dt"])
    riccati.export_envelope_curves(model, traj, out / "envelopes.csv")
    riccati.export_bound_report(model, cfg["eps"], out / "bound.json")
    report = riccati.sandwich_report(model, cfg["eps"], cfg["dt"])
    (out / "sandwich.json").write_text(json.dumps(report, sort_keys=True, indent=2))
    return 0


def _cmd_posterior(cfg) -> int:
    out = Path(cfg["out"])
    _write_metadata(out, cfg)
    rng = RngStream(cfg["seed"])
    w_star = sample_target(cfg["d"], cfg["s"], rng.child(0))
    D = sample_dataset(w_star, cfg["n"], rng.child(1))
    chart = posterior.TangentChart.at(w_star)
    chain = posterior.sample_posterior(D, chart, cfg["mcmc_steps"], cfg["burnin"],
                                       rng.child(2), target_accept=cfg["target_accept"])
    posterior.export_chain_csv(chain, w_star, out / "chain.csv")
    est = posterior.posterior_excess_risk(chain, w_star)
    (out / "summary.json").write_text(json.dumps({
        "mean_excess": est["mean"], "std_error": est["std_error"],
        "n_samples": est["n_samples"], "acceptance_rate": chain.acceptance_rate,
        "step_size": chain.step_size,
    }, sort_keys=True, indent=2))
    return 0


def _cmd_sweep(cfg) -> int:
    out = Path(cfg["out"])
    _write_metadata(out, cfg)
    d_list = [int(x) for x in str(cfg["d_list"]).split(",") if x]
    seeds = [int(x) for x in str(cfg["seeds"]).split(",") if x]
    overrides = {}
    if cfg["eta"] is not None:
        overrides["eta"] = {a: cfg["eta"] for a in ("single_gd", "spindly_gd")}
    if cfg["steps"] is not None:
        overrides["steps"] = {a: cfg["steps"] for a in ("single_gd", "spindly_gd")}
    config = sweep.ExperimentConfig(
        d_list=d_list, s=cfg["s"], n=cfg["n"], n_test=cfg["n_val"], seeds=seeds,
        alpha=cfg["alpha"], mcmc_steps=cfg["mcmc_steps"], burn_in=cfg["burnin"],
        target_accept=cfg["target_accept"], jobs=cfg["jobs"], **overrides)
    kind = cfg["kind"]
    if kind == "dimension":
        sweep.run_dimension_sweep(config, out)
    elif kind == "posterior":
        sweep.run_posterior_sweep(config, out)
    else:
        sweep.run_training_curves(config, out)
    return 0


def _cmd_verify(cfg) -> int:
    out = Path(cfg["out"])
    _write_metadata(out, cfg)
    reports = verify.run_all({"suite": cfg["suite"], "seed": cfg["seed"]})
    ok = verify.save_reports(reports, out / "verify.json")
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  "
              f"discrepancy={r.discrepancy:.3e}  tol={r.tolerance:.3e}  "
              f"({r.seconds:.1f}s)")
    return 0 if ok else 1


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "envelopes": _cmd_envelopes,
    "posterior": _cmd_posterior,
    "sweep": _cmd_sweep,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    resolved = _resolve_args(parser, argv)
    cfg = {k: v for k, v in resolved.items() if k != "config"}
    return _COMMANDS[cfg["command"]](cfg)


if __name__ == "__main__":
    sys.exit(main())
