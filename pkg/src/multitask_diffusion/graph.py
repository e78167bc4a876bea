"""Weighted undirected graphs, Laplacians and the graph Fourier transform.

Agents are indexed from 0 everywhere (API, edge-list files, coordinate files).
A network state is a float array of shape ``(N, M)``: row ``k`` is the
parameter vector of agent ``k``.  Flattening it row-major gives the stacked
block vector ``col{w_1, ..., w_N}`` so that ``(L kron I_M) @ W.ravel()`` equals
``(L @ W).ravel()``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

ZERO_EIGENVALUE_TOL = 1e-10


class GraphError(ValueError):
    """Invalid graph construction input."""


class DisconnectedGraphError(GraphError):
    def __init__(self, components: list[list[int]], hint: str = ""):
        self.components = components
        parts = ", ".join("{" + ",".join(str(k) for k in c) + "}" for c in components)
        msg = f"graph is disconnected: components {parts}"
        if hint:
            msg += f"; {hint}"
        super().__init__(msg)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Network:
    """Connected weighted undirected graph.

    Attributes
    ----------
    adjacency : (N, N) array
        Symmetric, zero diagonal, nonnegative weights ``a_kl``.
    degree : (N,) array
        Row sums of the adjacency.
    laplacian : (N, N) array
        ``L = D - A``.
    """

    adjacency: np.ndarray
    degree: np.ndarray
    laplacian: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.adjacency.shape[0]

    @property
    def spectral(self) -> "SpectralBasis":
        # cached on first use; the dataclass is frozen so go through __dict__
        basis = self.__dict__.get("_spectral")
        if basis is None:
            basis = spectral_decompose(self)
            object.__setattr__(self, "_spectral", basis)
        return basis

    def neighbors(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[k] > 0)

    def edges(self) -> list[tuple[int, int, float]]:
        rows, cols = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(k), int(l), float(self.adjacency[k, l])) for k, l in zip(rows, cols)]


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Eigendecomposition ``L = V diag(eigenvalues) V^T`` of a connected graph.

    ``eigenvectors[:, 0]`` is exactly ``1/sqrt(N)``.  ``reduced_eigenvalues``
    and ``reduced_eigenvectors`` drop the zero mode (eigenvalues 2..N and the
    matching columns).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def reduced_eigenvalues(self) -> np.ndarray:
        return self.eigenvalues[1:]

    @property
    def reduced_eigenvectors(self) -> np.ndarray:
        return self.eigenvectors[:, 1:]

    @property
    def algebraic_connectivity(self) -> float:
        return float(self.eigenvalues[1]) if self.n_agents > 1 else 0.0

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def _assemble(adjacency: np.ndarray, hint: str = "") -> Network:
    n = adjacency.shape[0]
    if n > 1:
        n_comp, labels = connected_components(adjacency > 0, directed=False)
        if n_comp > 1:
            components = [np.flatnonzero(labels == c).tolist() for c in range(n_comp)]
            components.sort(key=lambda c: c[0])
            raise DisconnectedGraphError(components, hint)
    degree = adjacency.sum(axis=1)
    laplacian = np.diag(degree) - adjacency
    return Network(_frozen(adjacency), _frozen(degree), _frozen(laplacian))


def build_network(n_agents: int, weighted_edges: Iterable[Sequence]) -> Network:
    """Build a connected network from ``(k, l, weight)`` triples (0-based).

    Raises
    ------
    GraphError
        On self-loops, out-of-range indices, nonpositive or non-finite weights,
        or an edge listed twice (in either orientation).
    DisconnectedGraphError
        If the graph has more than one connected component.
    """
    if int(n_agents) != n_agents or n_agents < 1:
        raise GraphError(f"n_agents must be a positive integer, got {n_agents!r}")
    n_agents = int(n_agents)
    A = np.zeros((n_agents, n_agents))
    seen: set[tuple[int, int]] = set()
    for edge in weighted_edges:
        if len(edge) != 3:
            raise GraphError(f"edge must be (k, l, weight), got {edge!r}")
        k, l, w = edge
        if int(k) != k or int(l) != l:
            raise GraphError(f"non-integer node index in edge {edge!r}")
        k, l, w = int(k), int(l), float(w)
        if not (0 <= k < n_agents and 0 <= l < n_agents):
            raise GraphError(f"edge {edge!r} references a node outside 0..{n_agents - 1}")
        if k == l:
            raise GraphError(f"self-loop at node {k}")
        if not math.isfinite(w) or w <= 0:
            raise GraphError(f"edge ({k}, {l}) has nonpositive weight {w}")
        key = (min(k, l), max(k, l))
        if key in seen:
            raise GraphError(f"duplicate edge ({k}, {l})")
        seen.add(key)
        A[k, l] = A[l, k] = w
    return _assemble(A)


def network_from_adjacency(adjacency) -> Network:
    A = np.array(adjacency, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise GraphError("adjacency must be square")
    if not np.all(np.isfinite(A)) or np.any(A < 0):
        raise GraphError("adjacency entries must be finite and nonnegative")
    if np.any(np.diag(A) != 0):
        raise GraphError("adjacency must have a zero diagonal")
    if not np.array_equal(A, A.T):
        raise GraphError("adjacency must be symmetric")
    return _assemble(A)


def knn_gaussian_network(
    coordinates, k_neighbors: int, distance_scale: float = 1.0
) -> Network:
    """Gaussian-kernel k-nearest-neighbor graph on points in the plane.

    For each node ``k`` let ``N_k`` be its ``k_neighbors`` nearest other
    nodes (ties broken by lowest index).  With ``d`` the Euclidean distance
    divided by ``distance_scale``::

        p_kl = exp(-d_kl^2) / sqrt(S_k * S_l),   S_k = sum_{m in N_k} exp(-d_km^2)

    for ``l in N_k`` and 0 otherwise; the weights are ``a_kl = (p_kl + p_lk)/2``.
    ``distance_scale=1`` uses raw distances.
    """
    X = np.asarray(coordinates, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise GraphError("coordinates must have shape (N, 2)")
    n = X.shape[0]
    k_neighbors = int(k_neighbors)
    if not (1 <= k_neighbors < n):
        raise GraphError(f"need N > k_neighbors >= 1, got N={n}, k={k_neighbors}")
    if distance_scale <= 0:
        raise GraphError("distance_scale must be positive")

    diff = X[:, None, :] - X[None, :, :]
    d2 = np.sum(diff**2, axis=-1) / distance_scale**2
    kernel = np.exp(-d2)

    member = np.zeros((n, n), dtype=bool)
    for k in range(n):
        order = np.argsort(d2[k], kind="stable")
        order = order[order != k]
        member[k, order[:k_neighbors]] = True

    S = np.where(member, kernel, 0.0).sum(axis=1)
    P = np.where(member, kernel / np.sqrt(np.outer(S, S)), 0.0)
    A = 0.5 * (P + P.T)
    return _assemble(A, hint="increase k_neighbors")


def spectral_decompose(network: Network) -> SpectralBasis:
    """Ordered eigendecomposition of the Laplacian with a fixed sign convention.

    Eigenvalues ascend; the first is snapped to 0 and its eigenvector set to
    ``1/sqrt(N)``.  Every other eigenvector has its first entry that is not
    numerically zero made positive.  Inside a repeated eigenvalue the basis is
    whatever LAPACK returns.
    """
    L = network.laplacian
    n = L.shape[0]
    try:
        lam, V = np.linalg.eigh(L)
    except np.linalg.LinAlgError as exc:
        raise GraphError(f"eigensolver failed: {exc}") from exc
    lam = lam.copy()
    V = V.copy()
    if abs(lam[0]) < ZERO_EIGENVALUE_TOL:
        lam[0] = 0.0
    if n > 1 and lam[1] <= ZERO_EIGENVALUE_TOL:
        raise GraphError(
            f"second Laplacian eigenvalue {lam[1]:.3e} <= {ZERO_EIGENVALUE_TOL}: "
            "graph is numerically disconnected"
        )
    V[:, 0] = 1.0 / math.sqrt(n)
    for m in range(1, n):
        col = V[:, m]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            V[:, m] = -col
    return SpectralBasis(_frozen(lam), _frozen(V))


def _as_state(state, n_agents: int) -> np.ndarray:
    W = np.asarray(state, dtype=float)
    if W.ndim == 1:
        if W.shape[0] % n_agents:
            raise ValueError(f"state of length {W.shape[0]} does not split into {n_agents} blocks")
        W = W.reshape(n_agents, -1)
    if W.ndim != 2 or W.shape[0] != n_agents:
        raise ValueError(f"state shape {W.shape} does not match {n_agents} agents")
    return W


def gft(basis: SpectralBasis, state) -> np.ndarray:
    """Graph Fourier transform: block ``m`` of the output is ``sum_k V[k, m] w_k``."""
    return basis.eigenvectors.T @ _as_state(state, basis.n_agents)


def igft(basis: SpectralBasis, transformed) -> np.ndarray:
    return basis.eigenvectors @ _as_state(transformed, basis.n_agents)


def smoothness(network: Network, state) -> float:
    """``W^T (L kron I) W``, evaluated as the half edge sum of squared differences."""
    W = _as_state(state, network.n_agents)
    diff = W[:, None, :] - W[None, :, :]
    return float(0.5 * np.sum(network.adjacency * np.sum(diff**2, axis=-1)))


def smoothness_spectral(basis: SpectralBasis, state) -> float:
    """Same quantity as :func:`smoothness`, as ``sum_m lambda_m ||wbar_m||^2``."""
    Wbar = gft(basis, state)
    return float(np.sum(basis.reduced_eigenvalues * np.sum(Wbar[1:] ** 2, axis=1)))


def is_consensus(state, atol: float = 0.0) -> bool:
    W = np.asarray(state, dtype=float)
    return bool(np.all(np.abs(W - W[0]) <= atol))


# -- file formats -------------------------------------------------------------

def read_edge_list(path, n_agents: int | None = None) -> Network:
    """Read ``k l weight`` lines (0-based, ``#`` comments)."""
    edges = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise GraphError(f"{path}:{lineno}: expected 'k l weight', got {raw.strip()!r}")
            try:
                edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from exc
    if n_agents is None:
        n_agents = 1 + max((max(k, l) for k, l, _ in edges), default=0)
    return build_network(n_agents, edges)


def write_edge_list(network: Network, path) -> None:
    with open(path, "w") as fh:
        fh.write("# k l weight\n")
        for k, l, w in network.edges():
            fh.write(f"{k} {l} {w!r}\n")


def read_coordinates(path) -> np.ndarray:
    """Read an ``id,x,y`` CSV; ids must be exactly ``0..N-1`` (any order)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["id", "x", "y"]:
            raise GraphError(f"{path}: header must be 'id,x,y'")
        rows = {}
        for lineno, row in enumerate(reader, 2):
            try:
                idx = int(row["id"])
                rows[idx] = (float(row["x"]), float(row["y"]))
            except (TypeError, ValueError) as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from exc
    if sorted(rows) != list(range(len(rows))):
        raise GraphError(f"{path}: ids must be 0..N-1")
    return np.array([rows[i] for i in range(len(rows))])


def write_coordinates(coordinates, path) -> None:
    X = np.asarray(coordinates, dtype=float)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y"])
        for i, (x, y) in enumerate(X):
            w.writerow([i, repr(float(x)), repr(float(y))])
