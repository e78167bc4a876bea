"""Pipelines behind the CLI and the report bundle they write.

Every pipeline writes its CSV tables and ``summary.json`` into the output
directory, then ``manifest.json`` (config echo, seeds, versions,
wall-clock).  Feeding the manifest back as the config reproduces the CSV and
summary files byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import metadata

import numpy as np
import scipy
import yaml

from .. import analysis, diffusion
from ..costs import NoiseProfile, all_quadratic, estimate_noise_profile
from ..graph import write_coordinates, write_edge_list
from .classify import run_classification
from .config import (
    POSITIVITY_LIMIT,
    PIPELINES,
    ConfigError,
    ExperimentConfig,
    knn_points,
    make_costs,
    make_network,
    resolve_eta,
)
from .data import (
    DatasetSchema,
    generate_logistic_dataset,
    generate_synthetic_tasks,
    ingest_dataset,
    write_dataset,
    write_tasks,
)

log = logging.getLogger(__name__)


class VerificationFailed(RuntimeError):
    """Raised after a completed verify-bounds run whose checks did not all pass."""


def point_seeds(seed: int, n: int) -> list[int]:
    """Independent integer seeds for ``n`` grid points, derived from ``seed``."""
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _r(x) -> str:
    return repr(float(x))


class Report:
    """Collects output files (written in deterministic order) and the summary."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.files: list[str] = []
        self.summary: dict = {}

    def path(self, name: str) -> str:
        if name not in self.files:
            self.files.append(name)
        return os.path.join(self.out_dir, name)

    def write_csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    def write_json(self, name: str, payload) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")

    def digests(self) -> dict:
        out = {}
        for name in sorted(self.files):
            if not os.path.exists(os.path.join(self.out_dir, name)):
                continue
            with open(os.path.join(self.out_dir, name), "rb") as fh:
                out[name] = hashlib.sha256(fh.read()).hexdigest()
        return out


def _map(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _grid(cfg: ExperimentConfig, network):
    return [(mu, eta, resolve_eta(eta, mu, network)) for mu in cfg.params.mu for eta in cfg.params.eta]


# -- simulate -----------------------------------------------------------------

def simulate(cfg: ExperimentConfig, report: Report, threads: int = 1) -> None:
    network = make_network(cfg)
    costs = make_costs(cfg, network)
    grid = _grid(cfg, network)
    seeds = point_seeds(cfg.seed, len(grid))
    init = cfg.run.init or "gaussian"
    rows = [None] * len(grid)

    def point(j):
        mu, label, eta = grid[j]
        params = diffusion.AlgorithmParams(mu, eta)
        ref = analysis.limiting_point(network, costs, eta).w_eta
        traj = diffusion.run(network, costs, params, cfg.run.n_iter, seeds[j], init=init,
                             record=("smoothness", "cost"), thin=cfg.outputs.thinning)
        traj.to_csv(report.path(f"trajectory_{j:03d}.csv"), ref)
        msd = float(np.mean(traj.squared_errors(ref)[-1]))
        rows[j] = [j, _r(mu), _r(eta), seeds[j], _r(msd), _r(traj.smoothness[-1]), _r(traj.cost[-1])]

    # trajectory files are registered in grid order before any thread writes
    for j in range(len(grid)):
        report.path(f"trajectory_{j:03d}.csv")
    _map(point, list(range(len(grid))), threads)
    report.write_csv("simulate.csv", ["point", "mu", "eta", "seed", "final_msd", "final_smoothness", "final_cost"], rows)
    report.summary["points"] = [
        {"point": r[0], "mu": float(r[1]), "eta": float(r[2]), "seed": r[3], "final_msd": float(r[4])} for r in rows
    ]


# -- sweep-eta ----------------------------------------------------------------

def sweep_eta(cfg: ExperimentConfig, report: Report, threads: int = 1) -> None:
    network = make_network(cfg)
    costs = make_costs(cfg, network)
    seeds = point_seeds(cfg.seed, len(cfg.params.mu))
    init = cfg.run.init or "gaussian"
    rows, best = [], []
    for i, mu in enumerate(cfg.params.mu):
        etas = [resolve_eta(e, mu, network) for e in cfg.params.eta]
        table = analysis.eta_sweep(network, costs, diffusion.AlgorithmParams(mu, 0.0), etas, cfg.run.n_iter,
                                   cfg.run.runs, seeds[i], init, threads)
        for r in table:
            rows.append([_r(mu), _r(r.eta), _r(r.gap_individual), _r(r.gap_single_task),
                         "" if r.msd is None else _r(r.msd), int(r.skipped), r.note])
        done = [r for r in table if r.msd is not None]
        best.append({"mu": mu, "seed": seeds[i],
                     "best_eta": None if not done else min(done, key=lambda r: r.msd).eta,
                     "skipped": [r.eta for r in table if r.skipped]})
    report.write_csv("eta_sweep.csv", ["mu", "eta", "gap_individual", "gap_single_task", "msd", "skipped", "note"], rows)
    report.summary["sweeps"] = best


# -- verify-bounds ------------------------------------------------------------

def _noise_profile(cfg: ExperimentConfig, costs, w_eta, seed) -> NoiseProfile:
    if cfg.bounds.noise == "declared":
        return NoiseProfile.from_costs(costs)
    rng = np.random.default_rng(seed)
    entries = []
    for k, c in enumerate(costs):
        direction = rng.standard_normal(c.dim)
        direction /= np.linalg.norm(direction)
        radius = 2.0 * max(1.0, float(np.linalg.norm(w_eta[k])))
        probes = np.outer(np.linspace(0.0, radius, cfg.bounds.probes), direction)
        entries.append(estimate_noise_profile(c, probes, cfg.bounds.samples, rng))
    return NoiseProfile.from_entries(entries)


def _check(name, value, threshold, passed) -> dict:
    return {"name": name, "value": _num(value), "threshold": _num(threshold), "pass": bool(passed)}


def verify_bounds(cfg: ExperimentConfig, report: Report, threads: int = 1) -> None:
    if cfg.run.runs < analysis.MIN_RUNS:
        raise ConfigError(f"run.runs: verify-bounds needs at least {analysis.MIN_RUNS} runs")
    network = make_network(cfg)
    costs = make_costs(cfg, network)
    grid = _grid(cfg, network)
    seeds = point_seeds(cfg.seed, len(grid))
    init = cfg.run.init or "zeros"
    quadratic = all_quadratic(costs)
    N = network.n_agents
    results = [None] * len(grid)

    def point(j):
        mu, label, eta = grid[j]
        params = diffusion.AlgorithmParams(mu, eta)
        checks = []
        lp = analysis.limiting_point(network, costs, eta)
        checks.append(_check("limiting_point_residual", lp.residual, 1e-10, lp.residual <= 1e-10))
        blocks = analysis.spectral_blocks(network, costs, eta, lp.w_eta)
        err = float(np.max(np.abs(blocks.w_eta - lp.w_eta)) / max(1.0, float(np.max(np.abs(lp.w_eta)))))
        checks.append(_check("spectral_block_formula", err, 1e-8, err <= 1e-8))
        checks.append(_check("k_norm_bound", blocks.k_norm, blocks.k_bound, blocks.within_bound))
        C = diffusion.combination_matrix(network, params)
        checks.append(_check("combination_doubly_stochastic", float(np.max(np.abs(C.row_sums() - 1))), 1e-12,
                             C.is_doubly_stochastic()))
        fp = diffusion.fixed_point(network, costs, params, tol=cfg.run.tol)
        if quadratic:
            bias = analysis.bias_closed_form(network, costs, params, lp.w_eta)
            gap = float(np.max(np.abs((lp.w_eta - fp.state) - bias)))
            checks.append(_check("bias_closed_form", gap, 1e-9, gap <= 1e-9))
        rng = np.random.default_rng(seeds[j])
        cc = diffusion.contraction_check(network, costs, params, cfg.bounds.contraction_pairs, rng)
        checks.append(_check("contraction", cc.max_ratio, cc.gamma, cc.ok))
        noise = _noise_profile(cfg, costs, lp.w_eta, seeds[j])
        if init == "zeros":
            im = analysis.init_moments_deterministic(fp.state, np.zeros_like(fp.state))
        else:
            im = analysis.init_moments_gaussian(fp.state)
        bt = analysis.bound_recursions(network, costs, noise, params, lp.w_eta, fp.state, cfg.run.n_iter, im,
                                       epsilon=cfg.bounds.epsilon)
        checks.append(_check("msp_recursion_stable", bt.rho_msp, 1.0, not bt.divergent))
        em = analysis.empirical_moments(network, costs, params, cfg.run.n_iter, cfg.run.runs, seeds[j], init,
                                        fp.state)
        dom = em.dominance(bt, cfg.bounds.n_se)
        for name in ("msp", "mfp", "smp"):
            checks.append(_check(f"{name}_dominance", dom[name]["max_excess"], 0.0, dom[name]["holds"]))
        stride = diffusion.thinning_stride(cfg.run.n_iter) if cfg.outputs.thinning else 1
        keep = sorted(set(range(0, cfg.run.n_iter + 1, stride)) | {cfg.run.n_iter})
        header = ["iteration"]
        for name in ("msp", "mfp", "smp"):
            header += [f"{name}_{k}" for k in range(N)] + [f"{name}_se_{k}" for k in range(N)]
            header += [f"bound_{name}_{k}" for k in range(N)]
        rows = []
        for i in keep:
            row = [i]
            for name in ("msp", "mfp", "smp"):
                row += [_r(x) for x in getattr(em, name)[i]] + [_r(x) for x in getattr(em, name + "_se")[i]]
                row += [_r(x) for x in getattr(bt, name)[i]]
            rows.append(row)
        report.write_csv(f"moments_{j:03d}.csv", header, rows)
        results[j] = {
            "point": j, "mu": mu, "eta": eta, "seed": seeds[j],
            "fixed_point_iterations": fp.iterations,
            "contraction_gamma": cc.gamma,
            "bounds": {k: _num(v) if not isinstance(v, bool) else v for k, v in bt.summary().items()},
            "steady_empirical_msp_max": float(np.max(em.steady("msp"))),
            "checks": checks,
            "passed": all(c["pass"] for c in checks),
        }

    for j in range(len(grid)):
        report.path(f"moments_{j:03d}.csv")
    _map(point, list(range(len(grid))), threads)
    report.summary["points"] = results
    report.summary["all_passed"] = all(r["passed"] for r in results)


# -- classify -----------------------------------------------------------------

def _classification_data(cfg: ExperimentConfig, network, seed):
    rng = np.random.default_rng(seed)
    if cfg.costs.dataset is not None:
        d = cfg.costs.dataset
        data = ingest_dataset(cfg.resolve_path(d.path), DatasetSchema(
            d.agent_column, d.label_column, None if d.feature_columns is None else tuple(d.feature_columns),
            d.train_fraction, network.n_agents))
        return data, d.rho, None, rng
    s = cfg.costs.synthetic
    if s is None or s.type != "logistic":
        raise ConfigError("classify needs costs.dataset or costs.synthetic with type logistic")
    ss = np.random.SeedSequence(seed).spawn(3)
    tasks = generate_synthetic_tasks(network, s.smoothness, s.base_task, ss[0], s.dim)
    data = generate_logistic_dataset(tasks.minimizers, cfg.data.n_train, cfg.data.n_test,
                                     np.random.default_rng(ss[1]), cfg.data.label_rule)
    return data, s.rho, tasks, np.random.default_rng(ss[2])


def classify(cfg: ExperimentConfig, report: Report, threads: int = 1) -> None:
    network = make_network(cfg)
    seeds = point_seeds(cfg.seed, cfg.run.seeds)
    labels = cfg.params.eta

    def replicate(r):
        data, rho, _, rng = _classification_data(cfg, network, seeds[r])
        init = rng.standard_normal((network.n_agents, data.dim))
        out = []
        for mu in cfg.params.mu:
            etas = [resolve_eta(e, mu, network) for e in labels]
            res = run_classification(network, data, mu, etas, rho, init, cfg.run.average_last)
            out.append((mu, etas, [x.error for x in res]))
        return out

    per_rep = _map(replicate, list(range(cfg.run.seeds)), threads)
    rows = []
    stats = []
    for mi, mu in enumerate(cfg.params.mu):
        errs = np.array([per_rep[r][mi][2] for r in range(cfg.run.seeds)])   # (replicates, etas)
        etas = per_rep[0][mi][1]
        for r in range(cfg.run.seeds):
            for e, label in enumerate(labels):
                rows.append([r, seeds[r], _r(mu), _r(etas[e]), str(label), _r(errs[r, e])])
        entry = {"mu": mu, "etas": etas, "mean_error": errs.mean(axis=0).tolist()}
        zero = [e for e, x in enumerate(labels) if x == 0.0]
        limit = [e for e, x in enumerate(labels) if x == POSITIVITY_LIMIT]
        interior = [e for e, x in enumerate(labels) if x != POSITIVITY_LIMIT and x > 0.0]
        if zero:
            positive = [e for e, x in enumerate(labels) if x == POSITIVITY_LIMIT or x > 0.0]
            if positive:
                entry["positive_beats_zero"] = int(np.sum(errs[:, positive].min(axis=1) < errs[:, zero[0]]))
        if limit and interior:
            entry["limit_worse_than_best_interior"] = int(np.sum(errs[:, limit[0]] > errs[:, interior].min(axis=1)))
        stats.append(entry)
    report.write_csv("classification.csv", ["replicate", "seed", "mu", "eta", "eta_label", "error"], rows)
    report.summary["replicates"] = cfg.run.seeds
    report.summary["seeds"] = seeds
    report.summary["results"] = stats


# -- gen-data -----------------------------------------------------------------

def gen_data(cfg: ExperimentConfig, report: Report, threads: int = 1) -> None:
    network = make_network(cfg)
    write_edge_list(network, report.path("edges.txt"))
    pts = knn_points(cfg)
    if pts is not None:
        write_coordinates(pts, report.path("coordinates.csv"))
    s = cfg.costs.synthetic
    if s is None:
        raise ConfigError("gen-data needs costs.synthetic")
    if s.type == "logistic":
        data, _, tasks, _ = _classification_data(cfg, network, cfg.seed)
        write_dataset(data, report.path("dataset.csv"))
        report.summary["train_fraction"] = cfg.data.n_train / (cfg.data.n_train + cfg.data.n_test)
    else:
        ss = np.random.SeedSequence(s.seed).spawn(2)
        tasks = generate_synthetic_tasks(network, s.smoothness, s.base_task, ss[0], s.dim)
    write_tasks(tasks.minimizers, report.path("tasks.csv"))
    report.summary["smoothness"] = tasks.smoothness
    report.summary["n_agents"] = network.n_agents


PIPELINE_FUNCS = {
    "simulate": simulate,
    "sweep-eta": sweep_eta,
    "verify-bounds": verify_bounds,
    "classify": classify,
    "gen-data": gen_data,
}


def versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "pyyaml": yaml.__version__, "package": pkg}


def run_suite(cfg: ExperimentConfig, pipeline: str, out_dir: str | None = None, threads: int = 1) -> Report:
    """Run one pipeline, write its report bundle and manifest, and return the report.

    Sub-stage errors still flush ``summary.json`` (with ``status: error``)
    and the manifest before propagating.  A verify-bounds run with failing
    checks raises :class:`VerificationFailed` after writing everything.
    """
    if pipeline not in PIPELINES:
        raise ConfigError(f"unknown pipeline {pipeline!r}; choose from {', '.join(PIPELINES)}")
    out_dir = out_dir or cfg.resolve_path(cfg.outputs.directory)
    report = Report(out_dir)
    started = time.time()
    status, error = "ok", None
    try:
        PIPELINE_FUNCS[pipeline](cfg, report, threads)
    except Exception as exc:
        status, error = "error", f"{type(exc).__name__}: {exc}"
        raise
    finally:
        report.summary["pipeline"] = pipeline
        report.summary["status"] = status
        if error:
            report.summary["error"] = error
        try:
            report.write_json("summary.json", report.summary)
        except ValueError:
            report.write_json("summary.json", {"pipeline": pipeline, "status": "error",
                                               "error": error or "summary not serializable"})
        manifest = {
            "pipeline": pipeline,
            "config": cfg.to_dict(),
            "base_dir": cfg.base_dir,
            "seed": cfg.seed,
            "threads": threads,
            "versions": versions(),
            "argv": sys.argv,
            "wall_clock_seconds": time.time() - started,
            "started_unix": started,
            "outputs": report.digests(),
        }
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
    if pipeline == "verify-bounds" and not report.summary.get("all_passed", True):
        raise VerificationFailed("one or more verification checks failed; see summary.json")
    return report


def with_overrides(cfg: ExperimentConfig, seed: int | None = None) -> ExperimentConfig:
    return cfg if seed is None else dataclasses.replace(cfg, seed=seed)
