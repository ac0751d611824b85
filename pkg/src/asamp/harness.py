"""Experiment orchestration: seeded replications, per-iteration trace
aggregation, and delimited output.

Determinism contract: (config, base_seed) fully determines the trace and
summary CSVs, so two runs of the same config are byte-identical.  Wall
times are inherently non-deterministic and therefore live in a companion
timings CSV that is excluded from that contract.
"""

import concurrent.futures
import csv
import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import asm, splitting, theory
from .metrics import EmptyInput, median_curve, window_min
from .problems import (BGPriorParams, HMCPriorParams, instance_from_spec,
                       make_channel_instance, make_lasso_instance,
                       prior_from_dict)

TRACE_COLUMNS = ["experiment", "solver", "replication", "iter", "kkt_residual",
                 "nmse_db", "support_size", "v", "v_hat", "exploded"]

LASSO_SOLVERS = ("asamp-l1", "vamp", "admm", "ista", "diag-vamp", "mps")
CHANNEL_SOLVERS = ("asamp-bg", "asamp-hmc", "vamp-bg", "vamp-hmc")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class SolverSpec:
    name: str
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment batch.

    `kind` is "lasso" or "channel"; `prior` holds the signal prior as a
    plain dict so configs serialize to a flat JSON file.  Replication r
    uses seed base_seed + r for instance generation.
    """

    name: str
    kind: str
    ensemble: str
    m: int
    n: int
    prior: dict
    snr_db: float
    solvers: list
    reps: int = 20
    base_seed: int = 0
    max_iters: int = 4000
    kkt_stop: float = 1e-6
    lam_scale: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.m < 1 or self.n < 1:
            raise ConfigError("dimensions must be positive")
        if self.kind not in ("lasso", "channel"):
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        self.solvers = [s if isinstance(s, SolverSpec) else SolverSpec(**s)
                        for s in self.solvers]
        for s in self.solvers:
            known = LASSO_SOLVERS if self.kind == "lasso" else CHANNEL_SOLVERS
            if s.name not in known:
                raise ConfigError(f"solver {s.name!r} not available for {self.kind}")

    def to_dict(self):
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class RunRecord:
    solver: str
    replication: int
    trace: object


@dataclass
class Report:
    config: ExperimentConfig
    runs: list

    def traces(self, solver):
        return [r.trace for r in self.runs if r.solver == solver]

    def solver_names(self):
        seen = []
        for r in self.runs:
            if r.solver not in seen:
                seen.append(r.solver)
        return seen

    def median(self, solver, metric, upto=None):
        return median_curve(self.traces(solver), metric, upto=upto)

    def figure_points(self, solver, metric, width=5, upto=None):
        its, vals = self.median(solver, metric, upto=upto)
        return window_min(its, vals, width=width)

    def iterations_to(self, solver, kkt_level):
        """Per-replication iteration count to reach a residual level;
        censored at the last recorded iteration when never reached."""
        out = []
        for t in self.traces(solver):
            arr = np.asarray(t.kkt)
            hit = np.flatnonzero(arr <= kkt_level)
            out.append(int(t.iters[hit[0]]) if hit.size else int(t.iters[-1]))
        return out


def make_instance(cfg, replication):
    seed = cfg.base_seed + replication
    prior = prior_from_dict(cfg.prior)
    if cfg.kind == "lasso":
        return make_lasso_instance(cfg.ensemble, cfg.m, cfg.n, prior,
                                   cfg.snr_db, seed, cfg.lam_scale)
    return make_channel_instance(cfg.m, cfg.n, prior, cfg.snr_db, seed,
                                 cfg.lam_scale)


def _run_solver(spec, instance, cfg, warm=None):
    p = dict(spec.params)
    name = spec.name
    if name == "asamp-l1":
        v_def = p.get("v", asm.DEFAULT_V_L1)
        sched = asm.QuasiVarianceSchedule(
            strategy=p.get("schedule", "mix_hatv"),
            v_fixed=v_def, v_hat_fixed=p.get("v_hat", v_def),
            rho0=p.get("rho0", 0.7), c_guard=p.get("c_guard", 0.5),
            s_window=p.get("s_window", 4), eps_stab=p.get("eps_stab", 1e-3))
        avg = asm.AveragingConfig(mode=p.get("averaging", "iterations"),
                                  d=p.get("d", 0.5))
        _, trace = asm.run_asamp_l1(instance, sched=sched, avg=avg,
                                    max_iters=cfg.max_iters,
                                    kkt_stop=cfg.kkt_stop, warm=warm)
    elif name == "vamp":
        _, trace = splitting.run_vamp(instance, v0=p.get("v0", 1.0),
                                      max_iters=cfg.max_iters,
                                      kkt_stop=cfg.kkt_stop, warm=warm)
    elif name == "admm":
        _, trace = splitting.run_admm(instance, v0=p.get("v0", 1.0),
                                      max_iters=cfg.max_iters,
                                      kkt_stop=cfg.kkt_stop, warm=warm)
    elif name == "ista":
        _, trace = splitting.run_ista(instance, v=p.get("v"),
                                      max_iters=cfg.max_iters,
                                      kkt_stop=cfg.kkt_stop, warm=warm)
    elif name == "diag-vamp":
        _, trace = splitting.run_diag_vamp(instance, v0=p.get("v0", 1.0),
                                           rho_bar=p.get("rho_bar", 0.9),
                                           max_iters=cfg.max_iters,
                                           kkt_stop=cfg.kkt_stop)
    elif name == "mps":
        tau = warm.tau_max  # normalized-spectrum maximum
        v2 = p.get("v2", 2.0 / tau)
        v1 = p.get("v1", v2 - 1.0 / tau)
        _, _, trace = splitting.run_mps_lasso(instance, v1, v2,
                                              max_iters=cfg.max_iters,
                                              kkt_stop=cfg.kkt_stop, warm=warm)
    elif name in ("asamp-bg", "asamp-hmc"):
        prior = prior_from_dict(cfg.prior)
        sched = asm.QuasiVarianceSchedule(strategy=p.get("schedule", "subspace_mm"),
                                          alpha=p.get("alpha", 0.9))
        avg = asm.AveragingConfig(mode=p.get("averaging", "iterations"),
                                  d=p.get("d", 0.5))
        _, trace = asm.run_asamp_mmse(instance, prior,
                                      denoiser=name.split("-")[1],
                                      c=p.get("c", 0.5), sched=sched, avg=avg,
                                      max_iters=cfg.max_iters)
    elif name in ("vamp-bg", "vamp-hmc"):
        prior = prior_from_dict(cfg.prior)
        _, trace = splitting.run_vamp_mmse(instance, prior,
                                           denoiser=name.split("-")[1],
                                           max_iters=cfg.max_iters,
                                           averaging_d=p.get("d", 0.5),
                                           alpha=p.get("alpha", 0.5))
    else:
        raise ConfigError(f"unknown solver {name!r}")
    trace.solver = name
    return trace


def _run_replication(cfg, replication):
    """One replication end-to-end: generate the instance, run every solver
    on it.  Instance generation happens before the solver clocks start;
    the shared warm-up is built for the normalized matrix the lasso
    drivers iterate on."""
    instance = make_instance(cfg, replication)
    warm = None
    if cfg.kind == "lasso":
        warm = splitting.LmmseWarmup.from_matrix(instance.normalized().A)
    records = []
    for spec in cfg.solvers:
        trace = _run_solver(spec, instance, cfg, warm=warm)
        trace.replication = replication
        records.append(RunRecord(spec.name, replication, trace))
    return records


def run_experiment(cfg):
    """Run the full batch; replications may execute on worker processes
    but results merge in replication order so the report is deterministic."""
    if cfg.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            chunks = list(ex.map(_run_replication, [cfg] * cfg.reps,
                                 range(cfg.reps)))
    else:
        chunks = [_run_replication(cfg, r) for r in range(cfg.reps)]
    runs = []
    order = {s.name: i for i, s in enumerate(cfg.solvers)}
    for chunk in chunks:
        runs.extend(chunk)
    runs.sort(key=lambda r: (order[r.solver], r.replication))
    return Report(config=cfg, runs=runs)


def reference_lasso_solution(problem, **kwargs):
    """Exact optimum for acceptance checks; see theory.oracle_solution."""
    return theory.oracle_solution(problem, **kwargs)


# ---------------------------------------------------------------------------
# delimited output


def _fmt(x):
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def emit_csv(report, path):
    """Long-format trace CSV, one row per (solver, replication, iteration).

    Numbers carry 17 significant digits so a round-trip parse reproduces
    the in-memory trace exactly.  Wall times are written separately by
    emit_timings_csv to keep this file deterministic.
    """
    name = report.config.name
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for rec in report.runs:
            t = rec.trace
            for i in range(len(t)):
                w.writerow([name, rec.solver, rec.replication, t.iters[i],
                            _fmt(t.kkt[i]), _fmt(t.nmse[i]), t.support_size[i],
                            _fmt(t.v[i]), _fmt(t.v_hat[i]),
                            int(t.exploded[i])])


def emit_summary_csv(report, path, width=5):
    """Median-over-replications curves, one figure point per window of
    `width` iterations (the minimum inside the window)."""
    name = report.config.name
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "solver", "iter", "median_kkt_min",
                    "median_nmse_min"])
        for solver in report.solver_names():
            try:
                its_k, kk = report.figure_points(solver, "kkt", width=width)
                _, nn = report.figure_points(solver, "nmse", width=width)
            except EmptyInput:
                continue
            for i in range(len(its_k)):
                w.writerow([name, solver, int(its_k[i]), _fmt(float(kk[i])),
                            _fmt(float(nn[i]))])


def emit_timings_csv(report, path):
    """Per-run wall times (seconds), excluded from the determinism
    contract on purpose."""
    name = report.config.name
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "solver", "replication", "elapsed_s"])
        for rec in report.runs:
            w.writerow([name, rec.solver, rec.replication,
                        _fmt(rec.trace.final_elapsed)])


def load_trace_csv(path):
    """Parse a trace CSV back into {(solver, replication): RunTrace}."""
    from .metrics import RunTrace

    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["solver"], int(row["replication"]))
            t = out.setdefault(key, RunTrace(solver=row["solver"],
                                             replication=int(row["replication"])))
            t.record(int(row["iter"]), kkt=float(row["kkt_residual"]),
                     nmse=float(row["nmse_db"]),
                     support_size=int(row["support_size"]), v=float(row["v"]),
                     v_hat=float(row["v_hat"]),
                     exploded=bool(int(row["exploded"])))
    return out


def write_report(report, out_dir, stem=None, width=5, timings=True):
    os.makedirs(out_dir, exist_ok=True)
    stem = stem or report.config.name
    paths = {
        "trace": os.path.join(out_dir, f"{stem}_trace.csv"),
        "summary": os.path.join(out_dir, f"{stem}_summary.csv"),
    }
    emit_csv(report, paths["trace"])
    emit_summary_csv(report, paths["summary"], width=width)
    if timings:
        paths["timings"] = os.path.join(out_dir, f"{stem}_timings.csv")
        emit_timings_csv(report, paths["timings"])
    return paths


# ---------------------------------------------------------------------------
# preset configurations


def lasso_config(ensemble="row_orthogonal", m=200, n=400, epsilon=0.25,
                 snr_db=30.0, solvers=("asamp-l1", "vamp", "admm", "ista"),
                 reps=20, base_seed=0, max_iters=4000, kkt_stop=1e-6,
                 workers=1, name=None):
    name = name or f"lasso-{ensemble}-{int(snr_db)}dB-n{n}"
    return ExperimentConfig(
        name=name, kind="lasso", ensemble=ensemble, m=m, n=n,
        prior={"type": "bg", "epsilon": epsilon, "sigma0_2": 1.0},
        snr_db=snr_db, solvers=[SolverSpec(s) for s in solvers], reps=reps,
        base_seed=base_seed, max_iters=max_iters, kkt_stop=kkt_stop,
        workers=workers)


def channel_config(m=200, n=400, p01=1.0 / 750.0, p10=1.0 / 250.0,
                   snr_db=30.0, solvers=("asamp-hmc", "asamp-bg"), reps=20,
                   base_seed=0, max_iters=100, workers=1, name=None):
    sigma0_2 = (p01 + p10) / p01
    name = name or f"channel-{int(snr_db)}dB-n{n}"
    return ExperimentConfig(
        name=name, kind="channel", ensemble="pdft_rp", m=m, n=n,
        prior={"type": "hmc", "p01": p01, "p10": p10, "sigma0_2": sigma0_2},
        snr_db=snr_db, solvers=[SolverSpec(s) for s in solvers], reps=reps,
        base_seed=base_seed, max_iters=max_iters, kkt_stop=0.0,
        workers=workers)


def solve_instance_file(path, solver="asamp-l1", max_iters=4000,
                        kkt_stop=1e-6):
    """Replay one instance from its JSON recipe and solve it."""
    from .problems import load_instance_spec

    spec = load_instance_spec(path)
    instance = instance_from_spec(spec)
    cfg_kind = spec["kind"]
    prior = spec["prior"]
    cfg = ExperimentConfig(
        name=f"solve-{os.path.basename(path)}", kind=cfg_kind,
        ensemble=spec["ensemble"], m=spec["m"], n=spec["n"], prior=prior,
        snr_db=spec["snr_db"], solvers=[SolverSpec(solver)], reps=1,
        base_seed=spec["seed"], max_iters=max_iters, kkt_stop=kkt_stop)
    warm = None
    if cfg_kind == "lasso":
        warm = splitting.LmmseWarmup.from_matrix(instance.A)
    trace = _run_solver(SolverSpec(solver), instance, cfg, warm=warm)
    return instance, trace
