"""Monte Carlo runs, the particle ground truth, benchmarks and file output."""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import baselines as bl
from .backward import BackwardOptions, run_backward
from .gauss import GaussianMixture
from .metrics import default_grid, marginal_density, mse, pdf_distance
from .model import simulate
from .qgsf import run_filter
from .qgss import run_smoother

WORKERS_ENV = "WIENERQGS_WORKERS"
GT_PATHS = 2000


def fmt(v):
    return format(float(v), ".17g")


@dataclass
class AlgoOutput:
    name: str
    means: np.ndarray  # (N, n)
    variances: np.ndarray  # (N, n)
    seconds: float
    # density(t, grid) for the first state coordinate, t 1-based
    density: Optional[object] = None


@dataclass
class RunRecord:
    index: int
    seed: int
    mse: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)
    pdf_l1: dict = field(default_factory=dict)  # (algo, t) -> L1 vs GT
    error: Optional[str] = None


@dataclass
class MCReport:
    config: object
    records: list

    def mse_table(self, algo):
        return np.array([r.mse.get(algo, np.nan) for r in self.records])

    def median_mse(self, algo):
        return float(np.nanmedian(self.mse_table(algo)))

    @property
    def failures(self):
        return [r for r in self.records if r.error]


def run_seed(base, i):
    return int(base) ^ int(i)


def _mixture_density(mixtures):
    def density(t, grid):
        return marginal_density(mixtures[t - 1], grid)

    return density


def _gauss_density(means, covs):
    def density(t, grid):
        m = GaussianMixture([0.0], means[t - 1, :1][None], covs[t - 1, :1, :1][None], normalized=True)
        return marginal_density(m, grid)

    return density


def _kde_filter(pf):
    def density(t, grid):
        return bl.kde_density(pf.particles[t - 1, :, 0], grid, np.exp(pf.log_weights[t - 1]))

    return density


def _kde_paths(paths):
    def density(t, grid):
        return bl.kde_density(paths.paths[:, t - 1, 0], grid)

    return density


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def ground_truth(model, nl, traj, n_particles=20000, n_paths=GT_PATHS, seed=None, smoother=True):
    """High-particle filter (grid-convolution likelihood) and, optionally, a
    backward-simulation smoother with ``n_paths`` trajectories."""
    seed = traj.seed if seed is None else seed
    pf = bl.particle_filter(model, nl, traj.y, traj.u, n_particles, seed=seed, likelihood="grid")
    ps = bl.particle_smoother(pf, model, traj.u, n_paths=n_paths, seed=seed) if smoother else None
    return pf, ps


def run_algorithms(model, nl, traj, settings, algos):
    """Run the requested estimators on one trajectory."""
    out = {}
    opts = BackwardOptions(L1=settings.L1, L2=settings.L2, max_components=settings.max_components)
    fwd = None
    if "qgsf" in algos or "qgss" in algos:
        fwd, dt = _timed(lambda: run_filter(model, nl, traj.y, traj.u, opts))
        m, c = fwd.moments()
        mix = [s.filtered for s in fwd.states]
        out["qgsf"] = AlgoOutput("qgsf", m, np.diagonal(c, axis1=1, axis2=2), dt, _mixture_density(mix))
    if "qgss" in algos:
        def smooth():
            bwd = run_backward(model, nl, traj.y, traj.u, opts)
            return run_smoother(fwd, bwd, model, traj.u, opts, joint=False)

        sm, dt = _timed(smooth)
        m, c = sm.moments()
        mix = [s.posterior for s in sm.marginals]
        out["qgss"] = AlgoOutput("qgss", m, np.diagonal(c, axis1=1, axis2=2), dt + out["qgsf"].seconds,
                                 _mixture_density(mix))
    if "ekf" in algos or "eks" in algos:
        ext = bl.build_extended_system(model)
        e, dt = _timed(lambda: bl.ekf(ext, nl, traj.y, traj.u))
        n = model.n
        fm, fc = e.filt_means[:, :n], e.filt_covs[:, :n, :n]
        out["ekf"] = AlgoOutput("ekf", fm, np.diagonal(fc, axis1=1, axis2=2), dt, _gauss_density(fm, fc))
        if "eks" in algos:
            (sm, sc), ds = _timed(lambda: bl.eks(e, ext))
            sm, sc = sm[:, :n], sc[:, :n, :n]
            out["eks"] = AlgoOutput("eks", sm, np.diagonal(sc, axis1=1, axis2=2), dt + ds, _gauss_density(sm, sc))
    if "pf" in algos or "ps" in algos:
        pf, dt = _timed(lambda: bl.particle_filter(model, nl, traj.y, traj.u, settings.particles,
                                                   seed=traj.seed, L=settings.pf_order))
        out["pf"] = AlgoOutput("pf", pf.means, np.diagonal(pf.covs(), axis1=1, axis2=2), dt, _kde_filter(pf))
        if "ps" in algos:
            ps, ds = _timed(lambda: bl.particle_smoother(pf, model, traj.u, seed=traj.seed))
            out["ps"] = AlgoOutput("ps", ps.means, ps.paths.var(axis=0), dt + ds, _kde_paths(ps))
    if "gt" in algos:
        (pf, ps), dt = _timed(lambda: ground_truth(model, nl, traj, settings.gt_particles))
        out["gt_filter"] = AlgoOutput("gt_filter", pf.means, np.diagonal(pf.covs(), axis1=1, axis2=2), dt,
                                      _kde_filter(pf))
        out["gt_smoother"] = AlgoOutput("gt_smoother", ps.means, ps.paths.var(axis=0), dt, _kde_paths(ps))
    return out


SMOOTHERS = ("qgss", "eks", "ps", "gt_smoother")


def gt_grid(gt, t, grid_spec):
    sd = float(np.sqrt(gt.variances[t - 1, 0]))
    return default_grid(float(gt.means[t - 1, 0]), sd, grid_spec.points, grid_spec.lo, grid_spec.hi)


def pdf_grids(outputs, times, grid_spec):
    """``{(algo, t): (grid, density)}`` on the GT-based grid of each family."""
    res = {}
    for t in times:
        grids = {}
        for fam in ("gt_filter", "gt_smoother"):
            if fam in outputs:
                grids[fam] = gt_grid(outputs[fam], t, grid_spec)
        for name, o in outputs.items():
            if o.density is None:
                continue
            ref = "gt_smoother" if name in SMOOTHERS else "gt_filter"
            ref_out = outputs.get(ref) or o
            grid = grids.get(ref)
            if grid is None:
                grid = gt_grid(ref_out, t, grid_spec)
            res[(name, t)] = (grid, o.density(t, grid))
    return res


def run_once(cfg, index, model=None, nl=None, keep_outputs=False):
    if model is None:
        model, nl = cfg.build()
    seed = run_seed(cfg.seed, index)
    rec = RunRecord(index, seed)
    try:
        traj = simulate(model, nl, cfg.N, cfg.input, seed)
        outputs = run_algorithms(model, nl, traj, cfg.algorithms, cfg.algos)
    except Exception as exc:  # recorded per run, not fatal
        rec.error = f"{type(exc).__name__}: {exc}"
        return (rec, None, None) if keep_outputs else rec
    for name, o in outputs.items():
        rec.mse[name] = mse(traj.x, o.means)
        rec.seconds[name] = o.seconds
    times = [t for t in cfg.pdf_times if t <= cfg.N]
    if times and ("gt_filter" in outputs):
        grids = pdf_grids(outputs, times, cfg.grid)
        for (name, t), (grid, dens) in grids.items():
            if name.startswith("gt_"):
                continue
            ref = "gt_smoother" if name in SMOOTHERS else "gt_filter"
            rec.pdf_l1[(name, t)] = pdf_distance(dens, grids[(ref, t)][1], grid)
    if keep_outputs:
        return rec, traj, outputs
    return rec


def _run_index(args):
    cfg, i = args
    return run_once(cfg, i)


def monte_carlo(cfg, workers=None):
    """All runs of ``cfg``; run ``i`` uses seed ``cfg.seed ^ i``."""
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    if workers > 1 and cfg.runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_run_index, [(cfg, i) for i in range(cfg.runs)]))
    else:
        model, nl = cfg.build()
        records = [run_once(cfg, i, model, nl) for i in range(cfg.runs)]
    return MCReport(cfg, records)


def benchmark(cfg):
    """Median wall-clock per algorithm over ``cfg.runs`` runs, with ratios to QGSF."""
    rep = monte_carlo(cfg, workers=1)
    table = {}
    for algo in sorted({a for r in rep.records for a in r.seconds}):
        secs = np.array([r.seconds[algo] for r in rep.records if algo in r.seconds])
        table[algo] = float(np.median(secs))
    base = table.get("qgsf")
    ratios = {a: (v / base if base else np.nan) for a, v in table.items()}
    return table, ratios, rep


# -- file output ---------------------------------------------------------------


def write_states(path, traj_x, out):
    N, n = traj_x.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_true_{i + 1}" for i in range(n)] + [f"xhat_{i + 1}" for i in range(n)]
                   + [f"var_{i + 1}" for i in range(n)])
        for t in range(N):
            w.writerow([t + 1] + [fmt(v) for v in traj_x[t]] + [fmt(v) for v in out.means[t]]
                       + [fmt(v) for v in out.variances[t]])


def read_states(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    head = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    n = sum(h.startswith("x_true_") for h in head)
    return data[:, 1 : 1 + n], data[:, 1 + n : 1 + 2 * n], data[:, 1 + 2 * n :]


def write_pdf(path, algo, t, grid, dens):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# algorithm={algo} t={t}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "density"])
        for x, d in zip(grid, dens):
            w.writerow([fmt(x), fmt(d)])


def write_trajectory(path, traj):
    N = traj.N
    m, n = traj.u.shape[1], traj.x.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"u_{i + 1}" for i in range(m)] + [f"x_{i + 1}" for i in range(n)] + ["r", "z", "y"])
        for t in range(N):
            w.writerow([t + 1] + [fmt(v) for v in traj.u[t]] + [fmt(v) for v in traj.x[t]]
                       + [fmt(traj.r[t]), fmt(traj.z[t]), fmt(traj.y[t])])


def write_report(rep, outdir, detail_runs=1):
    """``metrics.csv`` and ``pdf_l1.csv`` for all runs; state and PDF grid
    files for the first ``detail_runs`` runs (timings are not written, so the
    files depend on the configuration and seed only)."""
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "metrics.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "seed", "algorithm", "mse", "status"])
        for r in rep.records:
            if r.error:
                w.writerow([r.index, r.seed, "", "", r.error])
            for a in sorted(r.mse):
                w.writerow([r.index, r.seed, a, fmt(r.mse[a]), "ok"])
    with open(os.path.join(outdir, "pdf_l1.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "t", "algorithm", "l1_vs_gt"])
        for r in rep.records:
            for (a, t) in sorted(r.pdf_l1):
                w.writerow([r.index, t, a, fmt(r.pdf_l1[(a, t)])])


def write_run_detail(cfg, index, outdir, model=None, nl=None):
    """Re-run one index and write its trajectory, state files and PDF grids."""
    rec, traj, outputs = run_once(cfg, index, model, nl, keep_outputs=True)
    if rec.error:
        return rec
    d = os.path.join(outdir, f"run{index:03d}")
    os.makedirs(d, exist_ok=True)
    write_trajectory(os.path.join(d, "trajectory.csv"), traj)
    for name, o in sorted(outputs.items()):
        write_states(os.path.join(d, f"{name}_states.csv"), traj.x, o)
    times = [t for t in cfg.pdf_times if t <= cfg.N]
    for (name, t), (grid, dens) in sorted(pdf_grids(outputs, times, cfg.grid).items()):
        write_pdf(os.path.join(d, f"pdf_{name}_t{t:04d}.csv"), name, t, grid, dens)
    return rec
