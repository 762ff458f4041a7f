"""Command-line interface.

    wienerqgs simulate  --config cfg.json --seed 3 --out run/
    wienerqgs filter    --config cfg.json --out run/ [--data run/trajectory.csv]
    wienerqgs smooth    --config cfg.json --out run/
    wienerqgs mc        --config cfg.json --out mc/ [--algos qgsf,ekf]
    wienerqgs benchmark --config cfg.json
    wienerqgs rule      --order 10
    wienerqgs presets

Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import config as cfgmod
from . import experiments as ex
from . import nonlinearity as nlmod
from .metrics import mse
from .model import EXAMPLES, Trajectory, simulate
from .quadrature import legendre_rule


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, algos=False):
    p.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
    p.add_argument("--seed", type=_u64, metavar="U64", help="base seed (overrides the config)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    p.add_argument("--grid", metavar="LO:HI:POINTS", help="PDF grid (empty LO/HI use the default)")
    if algos:
        p.add_argument("--algos", metavar="LIST", help="comma-separated: " + ",".join(cfgmod.ALGOS))


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed out of range: {text}")
    return v


def build_parser():
    p = _Parser(prog="wienerqgs", description="Quadrature Gaussian sum filtering and smoothing for Wiener systems")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    s = sub.add_parser("simulate", help="simulate a trajectory")
    _common(s)
    for name, helptext in (("filter", "run the filter"), ("smooth", "run the filter and the smoother")):
        s = sub.add_parser(name, help=helptext)
        _common(s)
        s.add_argument("--data", metavar="CSV", help="trajectory CSV (default: simulate from the config)")
    s = sub.add_parser("mc", help="Monte Carlo study")
    _common(s, algos=True)
    s = sub.add_parser("benchmark", help="median wall-clock per algorithm")
    _common(s, algos=True)
    s = sub.add_parser("rule", help="print Gauss-Legendre nodes and weights")
    s.add_argument("--order", type=int, required=True, metavar="L")
    sub.add_parser("presets", help="list model and nonlinearity presets")
    return p


def _load(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    over = {"seed": args.seed, "output": args.out}
    if getattr(args, "algos", None):
        over["algos"] = cfgmod.parse_algos(args.algos)
    if args.grid:
        over["grid"] = cfgmod.GridSpec.parse(args.grid)
    return cfg.with_overrides(**over)


def read_trajectory(path, model):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    head, data = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
    col = {h: i for i, h in enumerate(head)}
    try:
        u = data[:, [col[f"u_{i + 1}"] for i in range(model.m)]]
        y = data[:, col["y"]]
    except KeyError as exc:
        raise cfgmod.ConfigError(f"{path}: missing column {exc}") from None
    N = y.size
    if all(f"x_{i + 1}" in col for i in range(model.n)):
        x = data[:, [col[f"x_{i + 1}"] for i in range(model.n)]]
    else:
        x = np.full((N, model.n), np.nan)
    r = data[:, col["r"]] if "r" in col else np.full(N, np.nan)
    z = data[:, col["z"]] if "z" in col else np.full(N, np.nan)
    return Trajectory(u, x, r, z, y, -1)


def _trajectory(args, cfg, model, nl):
    if getattr(args, "data", None):
        return read_trajectory(args.data, model)
    return simulate(model, nl, cfg.N, cfg.input, cfg.seed)


def cmd_simulate(args, cfg):
    model, nl = cfg.build()
    traj = simulate(model, nl, cfg.N, cfg.input, cfg.seed)
    os.makedirs(cfg.output, exist_ok=True)
    path = os.path.join(cfg.output, "trajectory.csv")
    ex.write_trajectory(path, traj)
    print(path)


def cmd_estimate(args, cfg, algos):
    model, nl = cfg.build()
    traj = _trajectory(args, cfg, model, nl)
    outputs = ex.run_algorithms(model, nl, traj, cfg.algorithms, algos)
    os.makedirs(cfg.output, exist_ok=True)
    for name in algos:
        path = os.path.join(cfg.output, f"{name}_states.csv")
        ex.write_states(path, traj.x, outputs[name])
        if np.all(np.isfinite(traj.x)):
            print(f"{name}: mse={mse(traj.x, outputs[name].means):.6g} -> {path}")
        else:
            print(f"{name} -> {path}")
    times = [t for t in cfg.pdf_times if t <= traj.N]
    picked = {k: v for k, v in outputs.items() if k in algos}
    for (name, t), (grid, dens) in sorted(ex.pdf_grids(picked, times, cfg.grid).items()):
        ex.write_pdf(os.path.join(cfg.output, f"pdf_{name}_t{t:04d}.csv"), name, t, grid, dens)


def _summary(rep):
    algos = sorted({a for r in rep.records for a in r.mse})
    for a in algos:
        print(f"{a:12s} median mse {rep.median_mse(a):.6g}")
    for r in rep.failures:
        print(f"run {r.index} (seed {r.seed}) failed: {r.error}", file=sys.stderr)


def cmd_mc(args, cfg):
    rep = ex.monte_carlo(cfg)
    ex.write_report(rep, cfg.output)
    model, nl = cfg.build()
    ex.write_run_detail(cfg, 0, cfg.output, model, nl)
    _summary(rep)
    return 2 if len(rep.failures) == len(rep.records) else 0


def cmd_benchmark(args, cfg):
    table, ratios, rep = ex.benchmark(cfg)
    print(f"{'algorithm':12s} {'median s':>12s} {'ratio':>8s}")
    for a in sorted(table):
        print(f"{a:12s} {table[a]:12.4f} {ratios[a]:8.3f}")
    if args.out:
        ex.write_report(rep, cfg.output)
    return 2 if len(rep.failures) == len(rep.records) else 0


def cmd_rule(args):
    rule = legendre_rule(args.order)
    for x, w in zip(rule.nodes, rule.weights):
        print(f"{float(x)!r} {float(w)!r}")


def cmd_presets():
    print("models:")
    for name in EXAMPLES:
        print(f"  {name}")
    print("nonlinearities:")
    for name in nlmod.preset_names():
        print(f"  {name}")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        if args.cmd == "rule":
            cmd_rule(args)
            return 0
        if args.cmd == "presets":
            cmd_presets()
            return 0
        cfg = _load(args)
    except (cfgmod.ConfigError, ValueError, OSError) as exc:
        print(f"wienerqgs: {exc}", file=sys.stderr)
        return 1
    try:
        if args.cmd == "simulate":
            cmd_simulate(args, cfg)
        elif args.cmd == "filter":
            cmd_estimate(args, cfg, ("qgsf",))
        elif args.cmd == "smooth":
            cmd_estimate(args, cfg, ("qgsf", "qgss"))
        elif args.cmd == "mc":
            return cmd_mc(args, cfg)
        elif args.cmd == "benchmark":
            return cmd_benchmark(args, cfg)
    except cfgmod.ConfigError as exc:
        print(f"wienerqgs: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"wienerqgs: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
