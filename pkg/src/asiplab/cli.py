"""Command-line experiment runner.

``asiplab run --config exp.toml`` simulates the configured process, runs the
selected tests and writes CSV tables, ``summary.json`` and ``manifest.json``
into the output directory. Each other subcommand runs one stage. Exit codes:
0 all gates pass, 1 a gate failed, 2 configuration error, 3 domain error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from ._validation import geometric_grid, orbit_rng
from .config import ExperimentConfig, from_dict, load_config
from .dynamics import CatMap, build_table
from .errors import AsipLabError, ConfigError, MissingInput
from .limitlaws import (Fit, ObservableSequence, _ceil_pow, asclt_ks, block_approximation_diagnostic,
                        block_schedule, clt_ks, epsilon_budget, green_kubo,
                        lil_running_stat, long_orbit, loglog_fit, moment_scaling_fit,
                        moment_times, resolve_workers, shrinking_target_report,
                        simulate_process, variance_curve, wip_covariance_check)
from .measure import AlphaMixing, SRBMeasure, symbolic_orbit
from .observables import make_observable, shrinking_targets

EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_DOMAIN = 0, 1, 2, 3
KS_NULL_SD = 0.2589  # standard deviation of sqrt(E) * D under the null
WIP_TIMES = (0.25, 0.5, 1.0)
REPORT_SOURCES = ("variance.csv", "clt.csv", "mixing.csv", "targets.csv")


def fmt(v):
    """17 significant digits for floats, plain text otherwise."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {h: [] for h in header}
    for row in body:
        for h, v in zip(header, row):
            cols[h].append(float(v) if v not in ("",) else np.nan)
    return {h: np.array(v) for h, v in cols.items()}


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


class GateFailure(Exception):
    """Raised in strict mode at the first failing gate."""


class Runner:
    """Executes pipeline stages for one config, caching shared inputs."""

    def __init__(self, cfg: ExperimentConfig, out, workers=1, strict=False,
                 log=print):
        self.cfg = cfg
        self.out = Path(out)
        self.workers = workers
        self.strict = strict
        self.log = log
        self.summary = {"version": __version__, "config_digest": cfg.digest(),
                        "seed": cfg.process.seed, "estimates": {},
                        "gates": []}
        self.files = []
        self._ens = None
        self._orbit = None
        self._gk = None
        self._system = None

    # -- shared inputs --------------------------------------------------
    @property
    def system(self):
        if self._system is None:
            s = self.cfg.system
            if s.kind == "catmap":
                self._system = CatMap()
            else:
                spec = [((float(c[0]), float(c[1])), float(R))
                        for c, R in s.scatterers]
                self._system = build_table(spec, s.clearance,
                                           max_ring=s.max_ring)
        return self._system

    @property
    def table(self):
        return None if isinstance(self.system, CatMap) else self.system

    def family(self, n_max=None):
        t = self.cfg.targets
        return shrinking_targets(t.gamma, t.c, t.mu0,
                                 n_max or self.cfg.process.n_max)

    def sequence(self, n_max=None, center=False):
        p = self.cfg.process
        if p.mode == "targets":
            return ObservableSequence.targets(self.family(n_max), center=center)
        obs = make_observable(self.cfg.observable, self.table)
        if p.mode == "modulated":
            return ObservableSequence.modulated(obs, p.exponent)
        return ObservableSequence.stationary(obs)

    @property
    def grid(self):
        g = self.cfg.grid
        n = self.cfg.process.n_max
        return geometric_grid(min(g.start, n), n, g.points)

    def ensemble(self):
        if self._ens is None:
            p = self.cfg.process
            n = p.n_max
            times = set(self.grid.tolist()) | {n}
            times |= set(moment_times(self.grid, n).tolist())
            times |= {max(1, int(math.floor(n * t))) for t in WIP_TIMES}
            self._ens = simulate_process(
                self.system, self.sequence(), n, p.ensemble, p.seed,
                times=sorted(times), warmup=p.warmup, workers=self.workers)
            e = self._ens
            self.summary["ensemble"] = {
                "system": e.system, "sequence": e.sequence, "n_max": e.n_max,
                "E": e.E, "kept": e.n_orbits, "truncated": e.n_truncated,
                "flagged": e.flagged, "seed": e.master_seed,
                "seed_split": "SeedSequence(seed, spawn_key=(orbit,))"}
        return self._ens

    def orbit(self):
        """Long single orbit for Green-Kubo, ASCLT and LIL (targets mode
        uses centred indicators)."""
        if self._orbit is None:
            n = self.cfg.long_orbit.length
            seq = self.sequence(n_max=n, center=True)
            self._orbit = long_orbit(self.system, seq,
                                     self.cfg.long_orbit.length,
                                     self.cfg.process.seed,
                                     warmup=self.cfg.process.warmup)
        return self._orbit

    def gk(self):
        if self._gk is None:
            lo = self.cfg.long_orbit
            self._gk = green_kubo(self.orbit(), L=lo.lag, max_lag=lo.max_lag)
        return self._gk

    def sigma2_model(self):
        """``sigma_k^2`` for the single-orbit tests: ``k sigma_f^2`` when
        stationary, the fitted power law of the variance curve otherwise."""
        if self.cfg.process.mode == "stationary":
            return self.gk().sigma2
        vc = variance_curve(self.ensemble(), self.grid)
        fit = loglog_fit(self.grid, vc.variance)
        a, b = math.exp(fit.intercept), fit.slope
        return lambda k: a * np.asarray(k, dtype=float) ** b

    # -- bookkeeping ----------------------------------------------------
    def write(self, name, header, rows):
        self.out.mkdir(parents=True, exist_ok=True)
        write_csv(self.out / name, header, rows)
        self.files.append(name)

    def estimate(self, key, **values):
        self.summary["estimates"][key] = _jsonable(values)

    def gate(self, name, passed, value, threshold, note=None):
        g = {"gate": name, "passed": bool(passed), "value": value,
             "threshold": threshold}
        if note:
            g["note"] = note
        self.summary["gates"].append(_jsonable(g))
        self.log(f"[{'PASS' if passed else 'FAIL'}] {name}: {value} "
                 f"(threshold {threshold}){' - ' + note if note else ''}")
        if not passed and self.strict:
            raise GateFailure(name)

    @property
    def tol(self):
        return self.cfg.tolerances

    # -- stages ---------------------------------------------------------
    def stage_variance(self, gate=True):
        ens = self.ensemble()
        vc = variance_curve(ens, self.grid)
        self.write("variance.csv", ["n", "value", "stderr", "ratio"],
                   [(n, v, s, v / n) for n, v, s in
                    zip(vc.grid, vc.variance, vc.stderr)])
        self.estimate("variance_curve", estimator="ensemble variance of S_n",
                      sample_size=vc.n_orbits, seed=ens.master_seed,
                      last_ratio=vc.variance[-1] / vc.grid[-1])
        if gate and "greenkubo" in self.cfg.tests:
            s2 = self.gk().sigma2
            rel = abs(vc.variance[-1] / vc.grid[-1] - s2) / abs(s2)
            self.gate("variance", rel <= self.tol["gk_vs_variance_rel"], rel,
                      self.tol["gk_vs_variance_rel"])
        return vc

    def stage_greenkubo(self):
        gk = self.gk()
        self.write("greenkubo.csv", ["n", "value", "stderr"],
                   [(k, c, s) for k, (c, s) in
                    enumerate(zip(gk.autocov, gk.autocov_stderr))])
        self.estimate("green_kubo", estimator="lag-window Green-Kubo",
                      sigma2=gk.sigma2, stderr=gk.sigma2_stderr, lag=gk.lag,
                      first_moment=gk.first_moment, mean=gk.mean,
                      sample_size=gk.sample_size, seed=self.cfg.process.seed)
        ok, notes = True, []
        exp = self.tol["gk_expected"]
        if exp is not None:
            ok &= abs(gk.sigma2 - exp) <= self.tol["gk_abs"]
            notes.append(f"expected {exp} +- {self.tol['gk_abs']}")
        if self.tol["gk_zero_lags"]:
            z = np.abs(gk.autocov[1:]) / gk.autocov_stderr[1:]
            ok &= bool(np.all(z <= 3))
            notes.append(f"max |C(k)|/SE = {z.max():.3g}")
        self.gate("greenkubo", ok, gk.sigma2,
                  exp if exp is not None else "sigma2 reported",
                  "; ".join(notes) or None)
        return gk

    def stage_moments(self):
        ens = self.ensemble()
        ms = moment_scaling_fit(ens, self.grid, self.cfg.process.moments_p)
        self.write("moments.csv", ["n", "value", "stderr", "lp_norm"],
                   [(n, a, None, b) for n, a, b in
                    zip(ms.grid, ms.l2_norms, ms.lp_norms)])
        self.estimate("moment_scaling", estimator="log-log least squares",
                      kappa2=ms.kappa2, kappa2_stderr=ms.kappa2_stderr,
                      kappa_p=ms.kappa_p, kappa_p_stderr=ms.kappa_p_stderr,
                      p=ms.p, sample_size=ens.n_orbits, seed=ens.master_seed)
        lo, hi = self.tol["kappa2_range"]
        self.gate("moments", lo <= ms.kappa2 <= hi, ms.kappa2, [lo, hi])
        return ms

    def stage_clt(self):
        ens = self.ensemble()
        lattice = 1.0 if self.cfg.process.mode == "targets" else None
        curve = self.family().mean_curve() if lattice else None
        rows = []
        for n in self.grid:
            c = float(curve[n - 1]) if lattice else None
            r = clt_ks(ens, n, center=c, lattice_step=lattice)
            rows.append((n, r.statistic, KS_NULL_SD / math.sqrt(r.sample_size),
                         r.sample_size))
        center = float(curve[-1]) if lattice else None
        self.write("clt.csv", ["n", "value", "stderr", "sample_size"], rows)
        res = clt_ks(ens, ens.n_max, center=center, lattice_step=lattice)
        self.estimate("clt_ks", estimator="KS of S_n / sd vs N(0,1)",
                      statistic=res.statistic, n=res.n,
                      sample_size=res.sample_size, seed=ens.master_seed,
                      lattice_step=lattice)
        self.gate("clt", res.statistic < self.tol["clt_ks"], res.statistic,
                  self.tol["clt_ks"])
        return res

    def stage_wip(self):
        ens = self.ensemble()
        w = wip_covariance_check(ens, WIP_TIMES)
        rows = []
        for i, s in enumerate(w.times):
            for j, t in enumerate(w.times):
                if j >= i:
                    rows.append((w.n, w.covariance[i, j], None, s, t,
                                 w.expected[i, j]))
        self.write("wip.csv", ["n", "value", "stderr", "s", "t", "expected"],
                   rows)
        self.estimate("wip", estimator="covariance of scaled partial sums",
                      max_abs_error=w.max_abs_error, sample_size=w.n_orbits,
                      seed=ens.master_seed)
        self.gate("wip", w.max_abs_error <= self.tol["wip_abs"],
                  w.max_abs_error, self.tol["wip_abs"])
        return w

    def stage_asclt(self):
        x = self.orbit()
        s2 = self.sigma2_model()
        N = len(x)
        checkpoints = geometric_grid(min(1000, N), N, 8)
        rows = [(n, asclt_ks(x, s2, n).statistic, None) for n in checkpoints]
        self.write("asclt.csv", ["n", "value", "stderr"], rows)
        D = rows[-1][1]
        self.estimate("asclt_ks", estimator="log-weighted empirical law",
                      statistic=D, n=N, seed=self.cfg.process.seed,
                      sigma2=s2 if not callable(s2) else "power-law fit")
        self.gate("asclt", D < self.tol["asclt_ks"], D, self.tol["asclt_ks"])
        return D

    def stage_lil(self):
        x = self.orbit()
        s2 = self.sigma2_model()
        res = lil_running_stat(x, s2, band=tuple(self.tol["lil_band"]))
        # i.i.d. standard normal oracle at the same length
        rng = orbit_rng(self.cfg.process.seed, 2 ** 32)
        oracle = lil_running_stat(rng.standard_normal(len(x)), 1.0,
                                  band=tuple(self.tol["lil_band"]))
        self.write("lil.csv", ["n", "value", "stderr", "oracle"],
                   [(n, v, None, o) for n, v, o in
                    zip(res.n, res.running_max, oracle.running_max)])
        self.estimate("lil", estimator="running max of S_n / sqrt(2 s2 loglog s2)",
                      maximum=res.maximum, oracle_maximum=oracle.maximum,
                      n=len(x), seed=self.cfg.process.seed)
        note = None
        passed = res.in_band
        if not passed and not oracle.in_band:
            passed = True
            note = (f"warning: i.i.d. oracle also left the band "
                    f"({oracle.maximum:.3g}); soft gate")
        self.gate("lil", passed, res.maximum, list(res.band), note)
        return res

    def stage_targets(self):
        if self.cfg.process.mode != "targets":
            raise ConfigError("the targets test needs process.mode = 'targets'",
                              field="process.mode")
        ens = self.ensemble()
        fam = self.family()
        rep = shrinking_target_report(ens, fam, self.grid)
        self.write("targets.csv", ["n", "value", "stderr", "analytic_mean",
                                   "variance", "variance_stderr"],
                   [(n, m, s, a, v, vs) for n, m, s, a, v, vs in
                    zip(rep.grid, rep.mean, rep.mean_stderr, rep.analytic_mean,
                        rep.variance.variance, rep.variance.stderr)])
        self.estimate("targets", estimator="shrinking-target hit counts",
                      max_abs_mean_z=float(np.max(np.abs(rep.mean_z))),
                      variance_slope=rep.variance_slope.slope,
                      variance_slope_stderr=rep.variance_slope.stderr,
                      ks=rep.ks.statistic, min_final_count=rep.min_final_count,
                      sample_size=ens.n_orbits, seed=ens.master_seed)
        zmax = float(np.max(np.abs(rep.mean_z)))
        self.gate("targets.mean", zmax <= self.tol["target_mean_z"], zmax,
                  self.tol["target_mean_z"])
        lo, hi = self.tol["target_slope"]
        self.gate("targets.variance_slope",
                  lo <= rep.variance_slope.slope <= hi,
                  rep.variance_slope.slope, [lo, hi])
        self.gate("targets.ks", rep.ks.statistic < self.tol["target_ks"],
                  rep.ks.statistic, self.tol["target_ks"])
        self.gate("targets.borel_cantelli", rep.borel_cantelli,
                  rep.min_final_count, 1)
        return rep

    def stage_mixing(self):
        table = self.table
        if table is None:
            raise ConfigError("mixing needs a billiard system", field="system.kind")
        mc = self.cfg.mixing
        gaps = np.arange(1, mc.max_gap + 1)
        measure = SRBMeasure(table)
        alphas, uppers, slopes = [], [], []
        for s in range(mc.seeds):
            sym = symbolic_orbit(table, measure, mc.samples + mc.max_gap
                                 + 2 * mc.depth, orbit_rng(self.cfg.process.seed, s))
            est = AlphaMixing(depth=mc.depth, gaps=gaps.tolist(),
                              min_occupancy=mc.min_occupancy,
                              n_scatterers=table.n_scatterers).fit(sym)
            alphas.append(est.alpha_)
            fit = _linfit(gaps, np.log(np.maximum(est.alpha_, 1e-300)))
            slopes.append(fit.slope)
            uppers.append(fit.upper(self.tol["mixing_level"]))
        A = np.array(alphas)
        self.write("mixing.csv", ["n", "value", "stderr"] +
                   [f"seed{s}" for s in range(mc.seeds)],
                   [(g, A[:, i].mean(),
                     A[:, i].std(ddof=1) / math.sqrt(mc.seeds) if mc.seeds > 1 else None,
                     *A[:, i]) for i, g in enumerate(gaps)])
        self.estimate("mixing", estimator="max cell-pair covariance",
                      depth=mc.depth, slopes=slopes, upper_bounds=uppers,
                      sample_size=mc.samples, seeds=mc.seeds,
                      seed=self.cfg.process.seed)
        worst = float(max(uppers))
        self.gate("mixing", worst < 0, worst, "< 0 (95% upper bound of slope)")

    def stage_blocks(self):
        b = self.cfg.blocks
        sched = block_schedule(b.eps, b.jmax)
        self.write("blocks.csv", ["n", "value", "stderr", "length"],
                   [(j, t, 0, (sched.tau[j + 1] - t) if 1 <= j < sched.j_max
                     else None) for j, t in enumerate(sched.tau)])
        identity = sched.tau[0] == -1 and sched.tau[1] == 0 and all(
            sched.tau[j] == sched.tau[j - 1] + _ceil_pow(j - 1, b.eps)
            for j in range(2, sched.j_max + 1))
        est = {"eps": b.eps, "tau": sched.tau}
        if self.table is not None:
            f = make_observable(b.observable, self.table)
            diag = block_approximation_diagnostic(
                f, self.table, b.js, b.eps, N=b.samples,
                rng=orbit_rng(self.cfg.process.seed, 0))
            self.write("blocks_diag.csv", ["n", "value", "stderr", "depth"],
                       [(j, g, None, m) for j, g, m in
                        zip(diag.js, diag.sup_gaps, diag.depths)])
            est.update(depths=diag.depths, sup_gaps=diag.sup_gaps,
                       slope=diag.slope, slope_upper95=diag.slope_upper95)
            self.gate("blocks.decay", diag.slope_upper95 < 0,
                      diag.slope_upper95, "< 0")
        self.estimate("blocks", estimator="block schedule", **est)
        self.gate("blocks.schedule", identity, bool(identity), True)
        return sched

    def stage_budget(self):
        b = self.cfg.budget
        res = epsilon_budget(b.k2, b.kp, b.lam)
        slack = res.constraints() if res.feasible else (None, None)
        self.estimate("budget", estimator="bisection with safety 0.99",
                      kappa2=b.k2, kappa_p=b.kp, lam=b.lam, eps=res.eps,
                      supremum=res.supremum, slack=slack)
        ok = res.feasible and min(slack) > 0
        self.gate("budget", ok, res.eps, "both inequalities strict")
        return res

    def run(self, stages):
        order = {"targets": 0, "greenkubo": 1, "variance": 2}
        try:
            for name in sorted(stages, key=lambda s: order.get(s, 9)):
                getattr(self, f"stage_{name}")()
        except GateFailure:
            self.summary["aborted"] = True
        return self.finish()

    def finish(self):
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / "summary.json"
        path.write_text(json.dumps(self.summary, indent=2, sort_keys=True)
                        + "\n", encoding="utf-8")
        self.files.append("summary.json")
        failed = [g["gate"] for g in self.summary["gates"] if not g["passed"]]
        return EXIT_GATE if failed else EXIT_OK


def _linfit(x, y):
    r = stats.linregress(x, y)
    return Fit(float(r.slope), float(r.stderr), float(r.intercept), len(x))


def write_manifest(runner, started):
    files = []
    for name in sorted(set(runner.files)):
        p = runner.out / name
        files.append({"file": name, "sha256": sha256_file(p),
                      "bytes": p.stat().st_size})
    ens = runner._ens
    manifest = {
        "config_digest": runner.cfg.digest(),
        "version": __version__,
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "truncated_orbits": ens.n_truncated if ens is not None else 0,
        "files": files,
    }
    (runner.out / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


# --- report ----------------------------------------------------------------

def render_report(out, log=print):
    """SVG line plots from the CSVs present in ``out``."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out)
    present = [n for n in REPORT_SOURCES if (out / n).is_file()]
    if not present:
        raise MissingInput(f"no report inputs ({', '.join(REPORT_SOURCES)}) "
                           f"in {out}")
    plt.rcParams["svg.hashsalt"] = "asiplab"
    written = []
    for name in present:
        d = read_csv(out / name)
        fig, ax = plt.subplots(figsize=(6, 4))
        if name == "variance.csv":
            ax.errorbar(d["n"], d["ratio"], yerr=d["stderr"] / d["n"], marker="o")
            ax.set(xscale="log", xlabel="n", ylabel="variance of S_n / n",
                   title="Variance curve")
        elif name == "clt.csv":
            ax.plot(d["n"], d["value"], marker="o", label="KS distance")
            ax.plot(d["n"], 1.63 / np.sqrt(d["sample_size"]), ls="--",
                    label="1% critical value")
            ax.set(xscale="log", xlabel="n", ylabel="KS", title="CLT: KS vs n")
            ax.legend()
        elif name == "mixing.csv":
            ax.errorbar(d["n"], d["value"], yerr=d["stderr"], marker="o")
            ax.set(yscale="log", xlabel="gap n", ylabel="alpha estimate",
                   title="Alpha-mixing decay")
        else:
            ax.errorbar(d["n"], d["value"], yerr=3 * d["stderr"], marker="o",
                        label="ensemble mean N_n")
            ax.plot(d["n"], d["analytic_mean"], ls="--", label="sum of masses")
            ax.set(xscale="log", yscale="log", xlabel="n", ylabel="N_n",
                   title="Shrinking-target hits")
            ax.legend()
        svg = out / name.replace(".csv", ".svg")
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
        text = buf.getvalue()
        comment = (f"<!-- asiplab {__version__} report; source {name} "
                   f"sha256 {sha256_file(out / name)} -->\n")
        head, sep, rest = text.partition("?>\n")
        svg.write_text(head + sep + comment + rest if sep else comment + text,
                       encoding="utf-8")
        written.append(svg.name)
        log(f"wrote {svg}")
    return written


# --- argument parsing ------------------------------------------------------

STAGES = {
    "simulate": ["variance"],
    "greenkubo": ["greenkubo"],
    "clt": ["variance", "clt"],
    "asclt": ["asclt"],
    "lil": ["lil"],
    "targets": ["targets"],
    "mixing": ["mixing"],
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON experiment file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--workers", type=int,
                        help="worker threads (default $ASIPLAB_WORKERS or 1)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--strict", action="store_true",
                        help="stop at the first failing gate")
    p = argparse.ArgumentParser(prog="asiplab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common],
                   help="simulate and run the tests selected in the config")
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage")
    b = sub.add_parser("blocks", parents=[common], help="print a block schedule")
    b.add_argument("--eps", type=float)
    b.add_argument("--jmax", type=int)
    b = sub.add_parser("budget", parents=[common], help="largest feasible eps")
    b.add_argument("--k2", type=float)
    b.add_argument("--kp", type=float)
    b.add_argument("--lambda", dest="lam", type=float)
    sub.add_parser("report", parents=[common],
                   help="render SVG plots from CSVs in the output directory")
    return p


def _config_from_args(args):
    cfg = load_config(args.config) if args.config else from_dict({})
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer",
                              field="process.seed")
        cfg.process.seed = args.seed
    if args.out is not None:
        cfg.output = args.out
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        workers = resolve_workers(args.workers)
        if args.command == "report":
            render_report(cfg.output)
            return EXIT_OK
        if args.command == "blocks":
            eps = args.eps if args.eps is not None else cfg.blocks.eps
            jmax = args.jmax if args.jmax is not None else cfg.blocks.jmax
            if not 0 < eps <= 1:
                raise ConfigError("ε ∈ (0, 1] required", field="blocks.eps")
            sched = block_schedule(eps, jmax)
            print("tau = " + ", ".join(str(int(t)) for t in sched.tau))
            return EXIT_OK
        if args.command == "budget":
            b = cfg.budget
            res = epsilon_budget(b.k2 if args.k2 is None else args.k2,
                                 b.kp if args.kp is None else args.kp,
                                 b.lam if args.lam is None else args.lam)
            if res.feasible:
                print(f"eps* = {res.eps:.6g} (supremum {res.supremum:.6g}, "
                      f"safety 0.99)")
            else:
                print("infeasible: no eps > 0 satisfies both inequalities")
            return EXIT_OK
        stages = cfg.tests if args.command == "run" else STAGES[args.command]
        started = _dt.datetime.now(_dt.timezone.utc).isoformat()
        runner = Runner(cfg, cfg.output, workers, args.strict)
        code = runner.run(stages)
        write_manifest(runner, started)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AsipLabError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
