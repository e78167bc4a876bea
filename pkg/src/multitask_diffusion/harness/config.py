"""Experiment configuration: strict YAML schema, defaults, and materialization.

Top-level sections (all keys optional unless noted)::

    seed: 0
    graph:      one of  edges (+ n_agents) | edge_list | knn
    costs:      one of  agents | synthetic | dataset
    params:     mu: [..] (required), eta: [..] (numbers or "positivity-limit")
    run:        n_iter, runs, init, tol, seeds, average_last
    bounds:     epsilon, n_se, contraction_pairs, noise, probes, samples
    data:       n_train, n_test, train_fraction, label_rule
    outputs:    directory, thinning

Unknown keys are rejected.  Relative file paths resolve against the
config file's directory.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import types
import typing
from dataclasses import dataclass, field

import numpy as np
import yaml

from ..costs import CostError, LogisticCost, QuadraticCost
from ..diffusion import LIMIT_LABELS, AlgorithmParams, stability_limits
from ..graph import (
    GraphError,
    Network,
    build_network,
    knn_gaussian_network,
    read_coordinates,
    read_edge_list,
)

POSITIVITY_LIMIT = "positivity-limit"
PIPELINES = ("simulate", "sweep-eta", "verify-bounds", "classify", "gen-data")


class ConfigError(ValueError):
    pass


@dataclass
class KnnSpec:
    k_neighbors: int
    coordinates: str | None = None
    points: list | None = None
    random_points: int | None = None
    points_seed: int = 0
    box: float = 1.0
    distance_scale: float = 1.0


@dataclass
class GraphSpec:
    n_agents: int | None = None
    edges: list | None = None
    edge_list: str | None = None
    knn: KnnSpec | None = None


@dataclass
class AgentSpec:
    type: str
    hessian: list | None = None
    minimizer: list | None = None
    beta_sq: float = 0.0
    sigma_sq: float = 0.0
    separator: list | None = None
    feature_mean: list | None = None
    feature_cov: list | None = None
    rho: float = 1e-3
    label_rule: str = "logistic"
    oracle_samples: int = 100_000
    oracle_seed: int = 0


@dataclass
class SyntheticSpec:
    type: str
    dim: int
    smoothness: float = 1.0
    base_task: list | None = None
    seed: int = 0
    hessian_eigs: list = field(default_factory=lambda: [1.0, 3.0])
    beta_sq: float = 0.0
    sigma_sq: float = 0.0
    rho: float = 1e-3
    label_rule: str = "logistic"
    oracle_samples: int = 100_000


@dataclass
class DatasetSpec:
    path: str
    rho: float = 1e-3
    train_fraction: float = 0.5
    agent_column: str = "agent"
    label_column: str = "label"
    feature_columns: list | None = None


@dataclass
class CostsSpec:
    agents: list | None = None
    synthetic: SyntheticSpec | None = None
    dataset: DatasetSpec | None = None


@dataclass
class ParamsSpec:
    mu: list
    eta: list = field(default_factory=lambda: [0.0])


@dataclass
class RunSpec:
    n_iter: int = 1000
    runs: int = 50
    init: str | None = None
    tol: float = 1e-12
    seeds: int = 1
    average_last: int = 200


@dataclass
class BoundsSpec:
    epsilon: float = 1.0
    n_se: float = 3.0
    contraction_pairs: int = 100
    noise: str = "declared"
    probes: int = 5
    samples: int = 20_000


@dataclass
class DataSpec:
    n_train: int = 200
    n_test: int = 2000
    train_fraction: float | None = None
    label_rule: str = "logistic"


@dataclass
class OutputSpec:
    directory: str = "results"
    thinning: bool = True


@dataclass
class ExperimentConfig:
    graph: GraphSpec
    costs: CostsSpec
    params: ParamsSpec
    seed: int = 0
    run: RunSpec = field(default_factory=RunSpec)
    bounds: BoundsSpec = field(default_factory=BoundsSpec)
    data: DataSpec = field(default_factory=DataSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)
    base_dir: str = field(default=".", metadata={"internal": True})

    def resolve_path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return _strip_none(d)


def _strip_none(x):
    if isinstance(x, dict):
        return {k: _strip_none(v) for k, v in x.items() if v is not None}
    if isinstance(x, list):
        return [_strip_none(v) for v in x]
    return x


# -- generic strict builder ---------------------------------------------------

def _build(cls, raw, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if not f.metadata.get("internal")}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, f in fields.items():
        sub = f"{path}.{name}" if path else name
        if name not in raw:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(f"{sub}: required")
            continue
        kwargs[name] = _coerce(hints[name], raw[name], sub)
    return cls(**kwargs)


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponent literals without a dot (1e-12) as strings
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    if tp is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return value
    return value


# -- loading ------------------------------------------------------------------

def parse_config(raw: dict, base_dir: str = ".") -> ExperimentConfig:
    """Build a validated config from a mapping (a run manifest is accepted too)."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if "config" in raw and "pipeline" in raw:
        base_dir = raw.get("base_dir", base_dir)
        raw = raw["config"]
    cfg = _build(ExperimentConfig, raw, "")
    cfg.base_dir = base_dir
    _validate(cfg)
    return cfg


def load_config(path, check_stability: bool = True) -> ExperimentConfig:
    """Parse, validate and (by default) stability-check a YAML config or JSON run manifest."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            raw = json.load(fh) if path.endswith(".json") else yaml.safe_load(fh)
        except (yaml.YAMLError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
    cfg = parse_config(raw, os.path.dirname(os.path.abspath(path)))
    if check_stability:
        check_config_stability(cfg)
    return cfg


def _one_of(spec, names, path):
    chosen = [n for n in names if getattr(spec, n) is not None]
    if len(chosen) != 1:
        raise ConfigError(f"{path}: give exactly one of {', '.join(names)}")
    return chosen[0]


def _validate(cfg: ExperimentConfig) -> None:
    g = _one_of(cfg.graph, ("edges", "edge_list", "knn"), "graph")
    if g == "edges" and cfg.graph.n_agents is None:
        raise ConfigError("graph.n_agents: required with graph.edges")
    if g == "edge_list" and not os.path.isfile(cfg.resolve_path(cfg.graph.edge_list)):
        raise ConfigError(f"graph.edge_list: file not found: {cfg.graph.edge_list}")
    if g == "knn":
        _one_of(cfg.graph.knn, ("coordinates", "points", "random_points"), "graph.knn")
        if cfg.graph.knn.coordinates is not None and not os.path.isfile(cfg.resolve_path(cfg.graph.knn.coordinates)):
            raise ConfigError(f"graph.knn.coordinates: file not found: {cfg.graph.knn.coordinates}")
    c = _one_of(cfg.costs, ("agents", "synthetic", "dataset"), "costs")
    if c == "agents":
        cfg.costs.agents = [_build(AgentSpec, a, f"costs.agents[{i}]") for i, a in enumerate(cfg.costs.agents)]
        for i, a in enumerate(cfg.costs.agents):
            _check_agent(a, f"costs.agents[{i}]")
    elif c == "synthetic":
        s = cfg.costs.synthetic
        if s.type not in ("quadratic", "logistic"):
            raise ConfigError(f"costs.synthetic.type: expected quadratic or logistic, got {s.type!r}")
        if s.dim < 1:
            raise ConfigError("costs.synthetic.dim: must be >= 1")
        if s.smoothness < 0:
            raise ConfigError("costs.synthetic.smoothness: must be >= 0")
        if len(s.hessian_eigs) != 2 or not 0 < s.hessian_eigs[0] <= s.hessian_eigs[1]:
            raise ConfigError("costs.synthetic.hessian_eigs: expected [lo, hi] with 0 < lo <= hi")
    else:
        if not os.path.isfile(cfg.resolve_path(cfg.costs.dataset.path)):
            raise ConfigError(f"costs.dataset.path: file not found: {cfg.costs.dataset.path}")
    if not cfg.params.mu:
        raise ConfigError("params.mu: empty grid")
    if not cfg.params.eta:
        raise ConfigError("params.eta: empty grid")
    mus, etas = [], []
    for i, mu in enumerate(cfg.params.mu):
        mu = _grid_number(mu)
        if mu is None or not mu > 0:
            raise ConfigError(f"params.mu[{i}]: expected a positive number")
        mus.append(mu)
    for i, eta in enumerate(cfg.params.eta):
        if eta == POSITIVITY_LIMIT:
            etas.append(eta)
            continue
        eta = _grid_number(eta)
        if eta is None or not eta >= 0:
            raise ConfigError(f"params.eta[{i}]: expected a nonnegative number or {POSITIVITY_LIMIT!r}")
        etas.append(eta)
    cfg.params.mu, cfg.params.eta = mus, etas
    r = cfg.run
    if r.n_iter < 0 or r.runs < 1 or r.seeds < 1 or r.average_last < 1:
        raise ConfigError("run: n_iter >= 0, runs >= 1, seeds >= 1, average_last >= 1 required")
    if r.init not in (None, "zeros", "gaussian"):
        raise ConfigError(f"run.init: expected zeros or gaussian, got {r.init!r}")
    if cfg.bounds.noise not in ("declared", "estimate"):
        raise ConfigError("bounds.noise: expected declared or estimate")
    if cfg.data.label_rule not in ("logistic", "sign"):
        raise ConfigError("data.label_rule: expected logistic or sign")
    if cfg.data.train_fraction is not None and not 0 < cfg.data.train_fraction < 1:
        raise ConfigError("data.train_fraction: must be in (0, 1)")


def _grid_number(x) -> float | None:
    if isinstance(x, bool):
        return None
    if isinstance(x, str):
        try:
            x = float(x)
        except ValueError:
            return None
    if not isinstance(x, (int, float)) or not math.isfinite(x):
        return None
    return float(x)


def _check_agent(a: AgentSpec, path):
    if a.type == "quadratic":
        if a.hessian is None or a.minimizer is None:
            raise ConfigError(f"{path}: quadratic agents need hessian and minimizer")
        extra = [n for n in ("separator", "feature_mean", "feature_cov") if getattr(a, n) is not None]
    elif a.type == "logistic":
        if a.separator is None:
            raise ConfigError(f"{path}: logistic agents need separator")
        extra = [n for n in ("hessian", "minimizer") if getattr(a, n) is not None]
    else:
        raise ConfigError(f"{path}.type: expected quadratic or logistic, got {a.type!r}")
    if extra:
        raise ConfigError(f"{path}: key(s) {', '.join(extra)} do not apply to {a.type} agents")


# -- materialization ----------------------------------------------------------

def make_network(cfg: ExperimentConfig) -> Network:
    g = cfg.graph
    if g.edges is not None:
        return build_network(g.n_agents, [tuple(e) for e in g.edges])
    if g.edge_list is not None:
        return read_edge_list(cfg.resolve_path(g.edge_list), g.n_agents)
    knn = g.knn
    if knn.coordinates is not None:
        pts = read_coordinates(cfg.resolve_path(knn.coordinates))
    elif knn.points is not None:
        pts = np.asarray(knn.points, dtype=float)
    else:
        pts = np.random.default_rng(knn.points_seed).uniform(0.0, knn.box, (knn.random_points, 2))
    return knn_gaussian_network(pts, knn.k_neighbors, knn.distance_scale)


def knn_points(cfg: ExperimentConfig):
    knn = cfg.graph.knn
    if knn is None:
        return None
    if knn.coordinates is not None:
        return read_coordinates(cfg.resolve_path(knn.coordinates))
    if knn.points is not None:
        return np.asarray(knn.points, dtype=float)
    return np.random.default_rng(knn.points_seed).uniform(0.0, knn.box, (knn.random_points, 2))


def synthetic_hessians(n_agents: int, dim: int, eigs, rng: np.random.Generator) -> list[np.ndarray]:
    """Random rotations of diagonals with entries uniform in ``[lo, hi]``."""
    lo, hi = eigs
    out = []
    for _ in range(n_agents):
        Q, R = np.linalg.qr(rng.standard_normal((dim, dim)))
        Q = Q * np.sign(np.diag(R))
        H = Q @ np.diag(rng.uniform(lo, hi, dim)) @ Q.T
        out.append(0.5 * (H + H.T))
    return out


def make_costs(cfg: ExperimentConfig, network: Network, seed=None) -> list:
    """Agent costs.  ``seed`` overrides the synthetic task seed (per-replicate tasks)."""
    from .data import generate_synthetic_tasks

    c = cfg.costs
    N = network.n_agents
    try:
        if c.agents is not None:
            if len(c.agents) != N:
                raise ConfigError(f"costs.agents: {len(c.agents)} agents for a {N}-node graph")
            out = []
            for a in c.agents:
                if a.type == "quadratic":
                    out.append(QuadraticCost(a.hessian, a.minimizer, a.beta_sq, a.sigma_sq))
                else:
                    out.append(LogisticCost(a.separator, a.feature_mean, a.feature_cov, a.rho, a.label_rule,
                                            a.oracle_samples, a.oracle_seed))
            return out
        if c.synthetic is not None:
            s = c.synthetic
            ss = np.random.SeedSequence(s.seed if seed is None else seed).spawn(2)
            tasks = generate_synthetic_tasks(network, s.smoothness, s.base_task, ss[0], s.dim).minimizers
            if s.type == "quadratic":
                Hs = synthetic_hessians(N, s.dim, s.hessian_eigs, np.random.default_rng(ss[1]))
                return [QuadraticCost(Hs[k], tasks[k], s.beta_sq, s.sigma_sq) for k in range(N)]
            return [LogisticCost(tasks[k], rho=s.rho, label_rule=s.label_rule, oracle_samples=s.oracle_samples,
                                 oracle_seed=k) for k in range(N)]
    except CostError as exc:
        raise ConfigError(f"costs: {exc}") from None
    raise ConfigError("costs: dataset-driven configs only support the classify pipeline")


def resolve_eta(eta, mu: float, network: Network) -> float:
    """Numeric eta; ``"positivity-limit"`` is the largest eta allowed by the positivity limit."""
    if eta == POSITIVITY_LIMIT:
        return float(np.min(1.0 / network.degree) / mu)
    return float(eta)


def param_grid(cfg: ExperimentConfig, network: Network) -> list[AlgorithmParams]:
    return [AlgorithmParams(mu, resolve_eta(eta, mu, network)) for mu in cfg.params.mu for eta in cfg.params.eta]


def check_config_stability(cfg: ExperimentConfig) -> None:
    """Reject configs whose (mu, eta) grid breaks a step-size limit, naming the binding limit."""
    try:
        network = make_network(cfg)
    except GraphError as exc:
        raise ConfigError(f"graph: {exc}") from None
    if cfg.costs.dataset is not None:
        from .classify import stream_costs
        from .data import DatasetSchema, ingest_dataset

        d = cfg.costs.dataset
        data = ingest_dataset(cfg.resolve_path(d.path), DatasetSchema(
            d.agent_column, d.label_column, None if d.feature_columns is None else tuple(d.feature_columns),
            d.train_fraction, network.n_agents))
        costs = stream_costs(data, d.rho)
    else:
        costs = make_costs(cfg, network)
    limits = stability_limits(network, costs)
    for p in param_grid(cfg, network):
        bad = limits.violations(p)
        if bad:
            names = "; ".join(LIMIT_LABELS[b] for b in bad)
            raise ConfigError(f"params mu={p.mu}, eta={p.eta}: violates {names}")
        if not math.isfinite(p.eta):
            raise ConfigError(f"params mu={p.mu}: eta is not finite")
