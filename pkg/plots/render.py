#!/usr/bin/env python3
"""Render figures from the laboratory's CSV outputs.

Pure consumer: reads the CSV/JSON files the CLI emits, validates their
schemas, and writes a PNG/SVG. No numerical logic lives here.

    render.py --kind curves    --in curves_single_gd.csv curves_spindly_gd.csv \
              --bayes bayes.json --out fig2.png
    render.py --kind coords    --in curves_spindly_gd.csv --meta curves_meta.json \
              --out fig4.png
    render.py --kind sweep     --in summary.csv --out fig5.png --logx --logy
    render.py --kind posterior --in posterior_summary.csv --out lower.png
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REQUIRED_COLUMNS = {
    "curves": ["t", "train_loss", "val_loss", "norm_S", "norm_Sc"],
    "coords": ["t", "train_loss", "val_loss", "norm_S", "norm_Sc", "w_0"],
    "sweep": ["d", "algo", "mean_excess", "stderr"],
    "posterior": ["d", "algo", "mean_excess", "stderr"],
}

STYLE = {"single_gd": dict(color="0.4", marker="o"),
         "spindly_gd": dict(color="crimson", marker="s"),
         "posterior": dict(color="navy", marker="d")}


class SchemaError(ValueError):
    pass


def load_table(path: Path, kind: str) -> dict[str, list]:
    if not path.exists():
        raise SchemaError(f"input file {path} does not exist")
    with open(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path} is empty: no header row")
        missing = [c for c in REQUIRED_COLUMNS[kind] if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path} is missing required column(s) {missing} "
                              f"for kind {kind!r}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path} has a header but no data rows")
    table = {name: [] for name in reader.fieldnames}
    for row in rows:
        for name in reader.fieldnames:
            table[name].append(row[name])
    return table


def floats(xs):
    return [float(x) for x in xs]


def _label(path: Path) -> str:
    name = path.stem
    return name.removeprefix("curves_")


def render_curves(args, fig, axes):
    ax_train, ax_val = axes
    for path in args.inputs:
        table = load_table(path, "curves")
        t = floats(table["t"])
        label = _label(path)
        style = STYLE.get(label, {})
        color = style.get("color")
        ax_train.plot(t, floats(table["train_loss"]), label=label, color=color)
        ax_val.plot(t, floats(table["val_loss"]), label=label, color=color)
    if args.bayes:
        bayes = json.loads(Path(args.bayes).read_text())["bayes_risk"]
        ax_val.axhline(bayes, linestyle="--", color="black", label="bayes risk")
    ax_train.set_ylabel("training loss")
    ax_val.set_ylabel("validation loss")
    ax_val.set_xlabel("time")
    ax_train.legend()
    ax_val.legend()


def render_coords(args, fig, axes):
    (ax,) = axes
    path = args.inputs[0]
    table = load_table(path, "coords")
    support = []
    if args.meta:
        support = json.loads(Path(args.meta).read_text()).get("support", [])
    t = floats(table["t"])
    coords = sorted(int(c[2:]) for c in table if c.startswith("w_"))
    for j in coords:
        active = j in support
        ax.plot(t, [abs(v) for v in floats(table[f"w_{j}"])],
                color="crimson" if active else "0.7",
                linewidth=1.4 if active else 0.7, zorder=2 if active else 1)
    ax.set_xlabel("time")
    ax.set_ylabel("|w_i(t)|")
    ax.plot([], [], color="crimson", label="active")
    ax.plot([], [], color="0.7", label="inactive")
    ax.legend()


def _render_errorbars(args, ax, kind):
    table = load_table(args.inputs[0], kind)
    algos = sorted(set(table["algo"]))
    for algo in algos:
        idx = [i for i, a in enumerate(table["algo"]) if a == algo]
        d = [float(table["d"][i]) for i in idx]
        mean = [float(table["mean_excess"][i]) for i in idx]
        err = [float(table["stderr"][i]) for i in idx]
        order = sorted(range(len(d)), key=lambda i: d[i])
        ax.errorbar([d[i] for i in order], [mean[i] for i in order],
                    yerr=[err[i] for i in order], capsize=3, label=algo,
                    **STYLE.get(algo, {}))
    ax.set_xlabel("dimension d")
    ax.set_ylabel("excess risk")
    ax.legend()


def render(args) -> Path:
    if args.kind == "curves":
        fig, axes = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
        render_curves(args, fig, axes)
    elif args.kind == "coords":
        fig, ax = plt.subplots(figsize=(6, 4))
        render_coords(args, fig, (ax,))
        axes = (ax,)
    else:
        fig, ax = plt.subplots(figsize=(6, 4))
        _render_errorbars(args, ax, args.kind)
        axes = (ax,)
    for ax in (axes if isinstance(axes, (tuple, list)) else axes.ravel()):
        if args.logx:
            ax.set_xscale("log")
        if args.logy:
            ax.set_yscale("log")
    fig.tight_layout()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--kind", required=True,
                    choices=("curves", "coords", "sweep", "posterior"))
    ap.add_argument("--in", dest="inputs", nargs="+", required=True, type=Path,
                    help="input CSV file(s)")
    ap.add_argument("--out", required=True, help="output image path (.png/.svg)")
    ap.add_argument("--bayes", default=None, help="bayes.json for the reference line")
    ap.add_argument("--meta", default=None, help="metadata JSON with support indices")
    ap.add_argument("--logx", action="store_true")
    ap.add_argument("--logy", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = render(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
