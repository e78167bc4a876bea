"""Streaming logistic classification over a network."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..costs import EmpiricalLogisticCost, LogisticCost
from ..diffusion import AlgorithmParams, iterate, stability_limits
from ..graph import Network
from .data import ClassificationDataset

AVERAGE_LAST = 200


def prediction_error(W, test_features, test_labels) -> float:
    """Mean over agents of the test misclassification rate of ``sign(h^T w_k)``, ``sign(0) = +1``."""
    errs = []
    for k, (h, g) in enumerate(zip(test_features, test_labels)):
        if g.shape[0] == 0:
            raise ValueError(f"agent {k} has no test records")
        pred = np.where(h @ W[k] >= 0, 1.0, -1.0)
        errs.append(np.mean(pred != g))
    return float(np.mean(errs))


def stream_costs(data: ClassificationDataset, rho: float) -> list[EmpiricalLogisticCost]:
    return [EmpiricalLogisticCost(h, g, rho) for h, g in zip(data.train_features, data.train_labels)]


@dataclass
class StreamResult:
    eta: float
    mu: float
    w_avg: np.ndarray
    error: float
    n_iter: int
    n_averaged: int


def train_stream(network: Network, data: ClassificationDataset, params: AlgorithmParams, rho: float, init,
                 average_last: int = AVERAGE_LAST) -> StreamResult:
    """One pass over the training streams, one record per agent per iteration.

    Returns the average of the last ``average_last`` iterates (all of them,
    with a warning, when the stream is shorter) and its test error.
    """
    costs = stream_costs(data, rho)
    stability_limits(network, costs).check(params)
    lengths = {f.shape[0] for f in data.train_features}
    n_iter = min(lengths)
    if len(lengths) > 1:
        warnings.warn(f"unequal training streams; using the first {n_iter} records of each", RuntimeWarning)
    H = np.stack([f[:n_iter] for f in data.train_features], axis=1)   # (T, N, M)
    G = np.stack([g[:n_iter] for g in data.train_labels], axis=1)     # (T, N)
    n_avg = average_last
    if n_iter < average_last:
        warnings.warn(f"only {n_iter} training iterations; averaging all of them", RuntimeWarning)
        n_avg = n_iter
    start = n_iter - n_avg + 1
    acc = np.zeros_like(np.asarray(init, dtype=float))

    def grad(i, W):
        return LogisticCost.sample_gradient(W, H[i - 1], G[i - 1]) + 2.0 * rho * W

    def observe(i, W):
        nonlocal acc
        if i >= start and i > 0:
            acc = acc + W

    W_last = iterate(network, params, grad, init, n_iter, observe)
    w_avg = acc / n_avg if n_avg > 0 else np.asarray(W_last, dtype=float)
    err = prediction_error(w_avg, data.test_features, data.test_labels)
    return StreamResult(params.eta, params.mu, w_avg, err, n_iter, n_avg)


def run_classification(network: Network, data: ClassificationDataset, mu: float, eta_grid, rho: float,
                       init, average_last: int = AVERAGE_LAST) -> list[StreamResult]:
    """Test error per eta; every eta starts from the same ``init`` and sees the same streams."""
    return [train_stream(network, data, AlgorithmParams(mu, float(eta)), rho, init, average_last)
            for eta in eta_grid]
