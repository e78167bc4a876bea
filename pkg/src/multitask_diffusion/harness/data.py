"""Synthetic tasks, logistic classification datasets and their CSV format.

Dataset CSV: header ``agent,x0,...,x{M-1},label``; one record per row,
agents 0-based, labels in {-1, +1} (or {0, 1}, mapped to {-1, +1}).
Each agent's stream is its rows in file order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..graph import Network, igft, smoothness


class DatasetError(ValueError):
    pass


@dataclass
class SyntheticTasks:
    minimizers: np.ndarray
    base: np.ndarray
    coefficients: np.ndarray
    smoothness: float


def generate_synthetic_tasks(network: Network, smoothness_level: float, base_task=None, seed=0,
                             dim: int | None = None) -> SyntheticTasks:
    """Graph-smooth task vectors ``1 (x) base + s * igft(c_m / (1 + lambda_m))``.

    ``c`` has standard normal rows for ``m >= 2`` and a zero DC row, so
    ``base`` is the network mean of the tasks.  ``base_task=None`` draws the
    base from ``N(0, I_dim)`` with the same generator.
    """
    if not smoothness_level >= 0:
        raise ValueError("smoothness level must be nonnegative")
    rng = np.random.default_rng(seed)
    if base_task is None:
        if dim is None:
            raise ValueError("give base_task or dim")
        base = rng.standard_normal(dim)
    else:
        base = np.atleast_1d(np.array(base_task, dtype=float))
        if dim is not None and base.shape[0] != dim:
            raise ValueError(f"base_task has length {base.shape[0]}, expected {dim}")
    basis = network.spectral
    N, M = network.n_agents, base.shape[0]
    coeff = rng.standard_normal((N, M))
    coeff[0] = 0.0
    coeff /= (1.0 + basis.eigenvalues)[:, None]
    W = base[None, :] + smoothness_level * igft(basis, coeff)
    return SyntheticTasks(W, base, coeff, smoothness(network, W))


@dataclass
class ClassificationDataset:
    """Per-agent training and test records.

    ``train_rows`` / ``test_rows`` hold, per agent, the 0-based data-row
    numbers of the records (disjoint, together all rows of that agent).
    """

    train_features: list
    train_labels: list
    test_features: list
    test_labels: list
    train_rows: list
    test_rows: list

    @property
    def n_agents(self) -> int:
        return len(self.train_features)

    @property
    def dim(self) -> int:
        return self.train_features[0].shape[1]


def split_streams(features: list, labels: list, train_fraction: float, rows: list | None = None) -> ClassificationDataset:
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError("train_fraction must be in (0, 1)")
    trf, trl, tef, tel, trr, ter = [], [], [], [], [], []
    for k, (h, g) in enumerate(zip(features, labels)):
        n = g.shape[0]
        cut = int(math.floor(train_fraction * n + 1e-9))
        r = np.arange(n) if rows is None else np.asarray(rows[k])
        trf.append(h[:cut]), trl.append(g[:cut]), trr.append(r[:cut])
        tef.append(h[cut:]), tel.append(g[cut:]), ter.append(r[cut:])
    return ClassificationDataset(trf, trl, tef, tel, trr, ter)


@dataclass(frozen=True)
class DatasetSchema:
    agent_column: str = "agent"
    label_column: str = "label"
    feature_columns: tuple | None = None
    train_fraction: float = 0.5
    n_agents: int | None = None


def ingest_dataset(csv_path, schema: DatasetSchema = DatasetSchema()) -> ClassificationDataset:
    """Read a dataset CSV and split each agent's stream chronologically.

    Feature columns default to every column other than the agent and label
    columns, in header order.  Errors name the offending data row (1-based,
    header excluded).
    """
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise DatasetError(f"{csv_path}: empty file") from None
        for col in (schema.agent_column, schema.label_column):
            if col not in header:
                raise DatasetError(f"{csv_path}: missing column {col!r}")
        if schema.feature_columns is None:
            fcols = [c for c in header if c not in (schema.agent_column, schema.label_column)]
        else:
            fcols = list(schema.feature_columns)
            missing = [c for c in fcols if c not in header]
            if missing:
                raise DatasetError(f"{csv_path}: missing feature columns {missing}")
        if not fcols:
            raise DatasetError(f"{csv_path}: no feature columns")
        ia = header.index(schema.agent_column)
        il = header.index(schema.label_column)
        ifs = [header.index(c) for c in fcols]
        per_agent: dict[int, list] = {}
        for rowno, row in enumerate(reader, 1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"{csv_path}: row {rowno} has {len(row)} fields, expected {len(header)}")
            try:
                agent = int(row[ia])
            except ValueError:
                raise DatasetError(f"{csv_path}: row {rowno}: bad agent id {row[ia]!r}") from None
            if agent < 0 or (schema.n_agents is not None and agent >= schema.n_agents):
                raise DatasetError(f"{csv_path}: row {rowno}: unseen agent id {agent}")
            try:
                lab = float(row[il])
                feats = [float(row[j]) for j in ifs]
            except ValueError:
                raise DatasetError(f"{csv_path}: row {rowno}: non-numeric value") from None
            if lab == 0.0:
                lab = -1.0
            if lab not in (-1.0, 1.0):
                raise DatasetError(f"{csv_path}: row {rowno}: label {row[il]!r} not in {{-1, 1}} or {{0, 1}}")
            if not all(math.isfinite(x) for x in feats):
                raise DatasetError(f"{csv_path}: row {rowno}: non-finite feature")
            per_agent.setdefault(agent, []).append((rowno - 1, feats, lab))
    n_agents = schema.n_agents if schema.n_agents is not None else (max(per_agent) + 1 if per_agent else 0)
    absent = [k for k in range(n_agents) if k not in per_agent]
    if absent:
        raise DatasetError(f"{csv_path}: agents without records: {absent}")
    feats, labs, rows = [], [], []
    for k in range(n_agents):
        recs = per_agent[k]
        rows.append(np.array([r[0] for r in recs]))
        feats.append(np.array([r[1] for r in recs], dtype=float))
        labs.append(np.array([r[2] for r in recs], dtype=float))
    data = split_streams(feats, labs, schema.train_fraction, rows)
    if any(f.shape[0] == 0 for f in data.train_features):
        raise DatasetError(f"{csv_path}: an agent has no training records")
    return data


def write_dataset(data: ClassificationDataset, path) -> None:
    """Write records interleaved by time (training first), which ``ingest_dataset`` reads back exactly."""
    M = data.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent"] + [f"x{j}" for j in range(M)] + ["label"])
        for feats, labs in ((data.train_features, data.train_labels), (data.test_features, data.test_labels)):
            length = max(f.shape[0] for f in feats)
            for i in range(length):
                for k in range(data.n_agents):
                    if i < feats[k].shape[0]:
                        w.writerow([k] + [repr(float(x)) for x in feats[k][i]] + [int(labs[k][i])])


def generate_logistic_dataset(separators, n_train: int, n_test: int, rng: np.random.Generator,
                              label_rule: str = "logistic", feature_mean=None, feature_cov=None) -> ClassificationDataset:
    """Draw ``h ~ N(mean, cov)`` records per agent, labels from the agent's separator.

    ``"logistic"`` labels are +1 with probability ``sigmoid(h^T t_k)``;
    ``"sign"`` labels are ``sign(h^T t_k)`` with ``sign(0) = +1``.
    """
    T = np.atleast_2d(np.asarray(separators, dtype=float))
    N, M = T.shape
    mean = np.zeros(M) if feature_mean is None else np.asarray(feature_mean, dtype=float)
    cov = np.eye(M) if feature_cov is None else np.asarray(feature_cov, dtype=float)
    L = np.linalg.cholesky(cov)
    n = n_train + n_test
    feats, labs = [], []
    for k in range(N):
        h = mean + rng.standard_normal((n, M)) @ L.T
        z = h @ T[k]
        if label_rule == "logistic":
            g = np.where(rng.random(n) < expit(z), 1.0, -1.0)
        elif label_rule == "sign":
            g = np.where(z >= 0, 1.0, -1.0)
        else:
            raise ValueError(f"unknown label_rule {label_rule!r}")
        feats.append(h)
        labs.append(g)
    return split_streams(feats, labs, n_train / n)


def write_tasks(minimizers, path) -> None:
    W = np.asarray(minimizers, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent"] + [f"w{j}" for j in range(W.shape[1])])
        for k, row in enumerate(W):
            w.writerow([k] + [repr(float(x)) for x in row])
