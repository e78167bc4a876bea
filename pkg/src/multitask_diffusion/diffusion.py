"""Laplacian-regularized adapt-then-combine diffusion.

One iteration, for every agent ``k``::

    psi_k = w_k - mu * g_k(w_k)                                  (adapt)
    w_k   = psi_k - mu*eta * sum_l a_kl (psi_k - psi_l)          (combine)

where ``g_k`` is a stochastic (or, for the deterministic map, exact)
gradient.  The combine step equals ``w = C psi`` with ``C = I - mu*eta*L``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .costs import CostError, NoiseProfile, all_quadratic, check_dims, stacked_gradient
from .graph import Network, smoothness

log = logging.getLogger(__name__)

LIMIT_LABELS = {
    "stability": "combination-matrix stability (mu*eta <= 2/lambda_max(L))",
    "positivity": "combination-matrix positivity (mu*eta <= min_k 1/degree_k)",
    "contraction": "contraction step size (mu < min_k 2/lambda_k,max)",
    "msp": "mean-square stability step size",
}
_REL_SLACK = 1e-12
THIN_THRESHOLD = 10_000


class StabilityError(ValueError):
    def __init__(self, violated: list[str], params: "AlgorithmParams"):
        self.violated = violated
        text = "; ".join(LIMIT_LABELS[v] for v in violated)
        super().__init__(f"mu={params.mu}, eta={params.eta} violates {text}")


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, seed=None):
        self.iteration = iteration
        self.seed = seed
        extra = f" (seed {seed})" if seed is not None else ""
        super().__init__(f"non-finite state at iteration {iteration}{extra}")


class FixedPointError(RuntimeError):
    def __init__(self, result: "FixedPointResult"):
        self.result = result
        super().__init__(
            f"fixed-point iteration stopped after {result.iterations} iterations "
            f"(displacement {result.displacement:.3e}, last ratio {result.last_ratio:.6f})"
        )


@dataclass(frozen=True)
class AlgorithmParams:
    mu: float
    eta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.mu) and self.mu > 0):
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise ValueError(f"eta must be nonnegative, got {self.eta}")

    @property
    def mu_eta(self) -> float:
        return self.mu * self.eta


@dataclass(frozen=True)
class StabilityLimits:
    """Step-size limits.

    ``mu_eta_stability`` and ``mu_eta_positivity`` bound the product mu*eta
    (inclusive); ``mu_contraction`` and ``mu_msp`` bound mu (strict).
    ``mu_msp`` is None when no noise profile is known.
    """

    mu_eta_stability: float
    mu_eta_positivity: float
    mu_contraction: float
    mu_msp: float | None

    def violations(self, params: AlgorithmParams, include_msp: bool = False) -> list[str]:
        out = []
        if params.mu_eta > self.mu_eta_stability * (1 + _REL_SLACK):
            out.append("stability")
        if params.mu_eta > self.mu_eta_positivity * (1 + _REL_SLACK):
            out.append("positivity")
        if not params.mu < self.mu_contraction:
            out.append("contraction")
        if include_msp and self.mu_msp is not None and not params.mu < self.mu_msp:
            out.append("msp")
        return out

    def check(self, params: AlgorithmParams, include_msp: bool = False) -> None:
        bad = self.violations(params, include_msp)
        if bad:
            raise StabilityError(bad, params)

    def max_mu_eta(self) -> float:
        return min(self.mu_eta_stability, self.mu_eta_positivity)

    def as_dict(self) -> dict:
        return {
            "mu_eta_stability": self.mu_eta_stability,
            "mu_eta_positivity": self.mu_eta_positivity,
            "mu_contraction": self.mu_contraction,
            "mu_msp": self.mu_msp,
        }


def msp_step_limit(costs: Sequence, noise: NoiseProfile) -> float:
    lims = []
    for c, b2 in zip(costs, noise.beta_sq):
        lo, hi = c.hessian_bounds()
        lims.append(min(2 * lo / (lo**2 + 3 * b2), 2 * hi / (hi**2 + 3 * b2)))
    return float(min(lims))


def stability_limits(network: Network, costs: Sequence, noise: NoiseProfile | None = None) -> StabilityLimits:
    check_dims(costs, network.n_agents)
    lam_max = network.spectral.lambda_max
    stab = 2.0 / lam_max if lam_max > 0 else math.inf
    deg = network.degree
    pos = float(np.min(1.0 / deg)) if np.all(deg > 0) else math.inf
    contraction = min(2.0 / c.hessian_bounds()[1] for c in costs)
    if noise is None:
        try:
            noise = NoiseProfile.from_costs(costs)
        except CostError:
            noise = None
    mu_msp = msp_step_limit(costs, noise) if noise is not None else None
    return StabilityLimits(stab, pos, contraction, mu_msp)


def contraction_factors(costs: Sequence, mu: float) -> np.ndarray:
    """Per-agent ``gamma_k = max(|1 - mu*lambda_min|, |1 - mu*lambda_max|)``."""
    out = []
    for c in costs:
        lo, hi = c.hessian_bounds()
        out.append(max(abs(1 - mu * lo), abs(1 - mu * hi)))
    return np.array(out)


@dataclass(frozen=True, eq=False)
class CombinationMatrix:
    matrix: np.ndarray

    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    def is_doubly_stochastic(self, atol: float = 1e-12) -> bool:
        return bool(
            np.all(np.abs(self.row_sums() - 1) <= atol)
            and np.all(np.abs(self.col_sums() - 1) <= atol)
            and np.all(self.matrix >= 0)
        )


def combination_matrix(network: Network, params: AlgorithmParams) -> CombinationMatrix:
    """``C = I - mu*eta*L``; rejects parameters violating the stability or positivity limits."""
    lam_max = network.spectral.lambda_max
    bad = []
    if lam_max > 0 and params.mu_eta > 2.0 / lam_max * (1 + _REL_SLACK):
        bad.append("stability")
    if np.any(network.degree > 0) and params.mu_eta > np.min(1.0 / network.degree[network.degree > 0]) * (1 + _REL_SLACK):
        bad.append("positivity")
    if bad:
        raise StabilityError(bad, params)
    C = np.eye(network.n_agents) - params.mu_eta * network.laplacian
    C.setflags(write=False)
    return CombinationMatrix(C)


def combination_norm(network: Network, params: AlgorithmParams) -> float:
    """Spectral norm of ``I - mu*eta*L`` from the Laplacian eigenvalues."""
    return float(np.max(np.abs(1.0 - params.mu_eta * network.spectral.eigenvalues)))


# -- the update ---------------------------------------------------------------

def combine_neighbor_sum(network: Network, params: AlgorithmParams, psi) -> np.ndarray:
    """``psi_k - mu*eta * sum_l a_kl (psi_k - psi_l)`` for every k (batch axes allowed)."""
    psi = np.asarray(psi, dtype=float)
    A = network.adjacency
    return psi - params.mu_eta * (network.degree[:, None] * psi - A @ psi)


def combine_matrix(C: CombinationMatrix, psi) -> np.ndarray:
    return C.matrix @ np.asarray(psi, dtype=float)


class _Combiner:
    def __init__(self, network: Network, params: AlgorithmParams, form: str):
        if form not in ("neighbor", "matrix"):
            raise ValueError(f"unknown combine form {form!r}")
        self.network, self.params, self.form = network, params, form
        self.C = combination_matrix(network, params)

    def __call__(self, psi):
        if self.params.eta == 0.0:
            return psi
        if self.form == "neighbor":
            return combine_neighbor_sum(self.network, self.params, psi)
        return combine_matrix(self.C, psi)


class NetworkOracle:
    """Stacked gradient oracles of all agents, vectorized for quadratic costs."""

    def __init__(self, costs: Sequence):
        self.costs = list(costs)
        self.dim = check_dims(self.costs)
        self.noise_dim = max(c.noise_dim for c in self.costs)
        self.quadratic = all_quadratic(self.costs)
        if self.quadratic:
            self.H = np.stack([c.H for c in self.costs])
            self.w_o = np.stack([c.w_o for c in self.costs])
            self.beta_sq = np.array([c.beta_sq for c in self.costs])
            self.sigma_sq = np.array([c.sigma_sq for c in self.costs])
            self.noiseless = not (np.any(self.beta_sq) or np.any(self.sigma_sq))

    def gradient(self, W) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        if self.quadratic:
            return np.einsum("kij,...kj->...ki", self.H, W - self.w_o)
        return stacked_gradient(self.costs, W)

    def noisy_gradient(self, W, Xi) -> np.ndarray:
        if self.quadratic:
            g = self.gradient(W)
            if self.noiseless:
                return g
            var = self.beta_sq * np.sum(W * W, axis=-1) + self.sigma_sq
            return g - np.sqrt(var / self.dim)[..., None] * Xi[..., : self.dim]
        return np.stack(
            [c.noisy_gradient(W[..., k, :], Xi[..., k, : c.noise_dim]) for k, c in enumerate(self.costs)],
            axis=-2,
        )

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Randomness for ``size`` iterations, shape ``(size, N, noise_dim)``, drawn agent by agent."""
        out = np.zeros((size, len(self.costs), self.noise_dim))
        for k, c in enumerate(self.costs):
            out[:, k, : c.noise_dim] = c.draw_noise(rng, size)
        return out


def atc_step(network: Network, state, costs: Sequence, params: AlgorithmParams,
             rng: np.random.Generator, form: str = "neighbor") -> np.ndarray:
    """One stochastic adapt-then-combine iteration."""
    W = np.asarray(state, dtype=float)
    grads = np.stack([c.stochastic_gradient(W[k], rng) for k, c in enumerate(costs)])
    return _Combiner(network, params, form)(W - params.mu * grads)


def deterministic_step(network: Network, state, costs: Sequence, params: AlgorithmParams,
                       form: str = "neighbor") -> np.ndarray:
    """The noiseless map ``W -> (I - mu*eta*L)(W - mu*col{grad J_k(w_k)})``."""
    W = np.asarray(state, dtype=float)
    return _Combiner(network, params, form)(W - params.mu * stacked_gradient(costs, W))


def iterate(
    network: Network,
    params: AlgorithmParams,
    gradient_fn: Callable[[int, np.ndarray], np.ndarray],
    init,
    n_iter: int,
    observer: Callable[[int, np.ndarray], None] | None = None,
    form: str = "neighbor",
    seed=None,
) -> np.ndarray:
    """Core loop shared by every simulation.

    ``gradient_fn(i, W)`` returns the (stochastic) gradients used at
    iteration ``i = 1..n_iter`` for the current state ``W`` (any leading batch
    axes).  ``observer(i, W)`` sees the state after each iteration and, with
    ``i = 0``, the initial state.
    """
    combine = _Combiner(network, params, form)
    W = np.array(init, dtype=float)
    if observer is not None:
        observer(0, W)
    mu = params.mu
    for i in range(1, n_iter + 1):
        W = combine(W - mu * gradient_fn(i, W))
        if not np.all(np.isfinite(W)):
            raise DivergenceError(i, seed)
        if observer is not None:
            observer(i, W)
    return W


class _ChunkedNoise:
    """Pre-draws oracle randomness in blocks, one generator per run."""

    def __init__(self, oracle: NetworkOracle, rngs: Sequence[np.random.Generator], chunk: int = 1024,
                 batched: bool = True):
        self.oracle, self.rngs, self.chunk, self.batched = oracle, list(rngs), chunk, batched
        self._start = 1
        self._buf = None

    def __call__(self, i: int) -> np.ndarray:
        j = i - self._start
        if self._buf is None or j >= self._buf.shape[0] or j < 0:
            self._start = i
            j = 0
            blocks = [self.oracle.draw(r, self.chunk) for r in self.rngs]
            self._buf = np.stack(blocks, axis=1) if self.batched else blocks[0]
        return self._buf[j]


# -- deterministic fixed point ------------------------------------------------

@dataclass
class FixedPointResult:
    state: np.ndarray
    iterations: int
    displacement: float
    ratios: np.ndarray
    converged: bool

    @property
    def last_ratio(self) -> float:
        return float(self.ratios[-1]) if self.ratios.size else float("nan")


def fixed_point(network: Network, costs: Sequence, params: AlgorithmParams, tol: float = 1e-12,
                max_iter: int = 1_000_000, init=None, form: str = "neighbor",
                raise_on_failure: bool = True) -> FixedPointResult:
    """Banach iteration of the noiseless map until ``||W_i - W_{i-1}|| <= tol``.

    Returns the fixed point together with the observed contraction ratios
    ``||W_{i+1} - W_i|| / ||W_i - W_{i-1}||``.
    """
    limits = stability_limits(network, costs)
    bad = [v for v in limits.violations(params) if v in ("stability", "contraction")]
    if bad:
        raise StabilityError(bad, params)
    oracle = NetworkOracle(costs)
    combine = _Combiner(network, params, form)
    W = np.zeros((network.n_agents, oracle.dim)) if init is None else np.array(init, dtype=float)
    ratios = []
    prev = None
    disp = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        W_new = combine(W - params.mu * oracle.gradient(W))
        disp = float(np.linalg.norm(W_new - W))
        if prev is not None and prev > 0:
            ratios.append(disp / prev)
        prev = disp
        W = W_new
        if not np.all(np.isfinite(W)):
            raise DivergenceError(it)
        if disp <= tol:
            break
    result = FixedPointResult(W, it, disp, np.array(ratios), disp <= tol)
    if not result.converged and raise_on_failure:
        raise FixedPointError(result)
    return result


def stacked_hessian(costs: Sequence, W=None) -> np.ndarray:
    """``diag{H_k(w_k)}`` as a dense ``(N*M, N*M)`` matrix."""
    return scipy.linalg.block_diag(*[c.hessian(None if W is None else W[k]) for k, c in enumerate(costs)])


def fixed_point_direct(network: Network, costs: Sequence, params: AlgorithmParams) -> np.ndarray:
    """Quadratic costs only: solve ``[I - C(I - mu H)] W = mu C H W_o`` directly."""
    if not all_quadratic(costs):
        raise CostError("direct fixed-point solve needs quadratic costs")
    M = check_dims(costs, network.n_agents)
    N = network.n_agents
    Ck = np.kron(combination_matrix(network, params).matrix, np.eye(M))
    H = stacked_hessian(costs)
    w_o = np.concatenate([c.w_o for c in costs])
    lhs = np.eye(N * M) - Ck @ (np.eye(N * M) - params.mu * H)
    return np.linalg.solve(lhs, params.mu * Ck @ (H @ w_o)).reshape(N, M)


# -- contraction check --------------------------------------------------------

@dataclass
class ContractionReport:
    gamma: float
    max_ratio: float
    ratios: np.ndarray
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def contraction_check(network: Network, costs: Sequence, params: AlgorithmParams, n_pairs: int,
                      rng: np.random.Generator, scale: float = 1.0, atol: float = 1e-10) -> ContractionReport:
    """Sample state pairs and verify ``||Y1 - Y2|| <= gamma ||X1 - X2|| + atol``."""
    if "stability" in stability_limits(network, costs).violations(params):
        raise StabilityError(["stability"], params)
    gamma = float(np.max(contraction_factors(costs, params.mu)))
    M = check_dims(costs, network.n_agents)
    shape = (network.n_agents, M)
    ratios = np.empty(n_pairs)
    violations = []
    for j in range(n_pairs):
        X1 = scale * rng.standard_normal(shape)
        X2 = scale * rng.standard_normal(shape)
        Y1 = deterministic_step(network, X1, costs, params)
        Y2 = deterministic_step(network, X2, costs, params)
        dx = np.linalg.norm(X1 - X2)
        dy = np.linalg.norm(Y1 - Y2)
        ratios[j] = dy / dx
        if dy > gamma * dx + atol:
            violations.append((X1, X2, ratios[j]))
    return ContractionReport(gamma, float(ratios.max()) if n_pairs else 0.0, ratios, violations)


# -- stochastic runs ----------------------------------------------------------

@dataclass
class Trajectory:
    """Stored iterates of one run (thinned beyond 10^4 iterations)."""

    iterations: np.ndarray
    states: np.ndarray
    smoothness: np.ndarray
    cost: np.ndarray | None
    n_iter: int
    seed: object

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def squared_errors(self, reference) -> np.ndarray:
        return np.sum((self.states - np.asarray(reference)) ** 2, axis=-1)

    def to_csv(self, path, reference) -> None:
        sq = self.squared_errors(reference)
        n = sq.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["iteration"] + [f"sqerr_{k}" for k in range(n)] + ["smoothness"]
            if self.cost is not None:
                header.append("cost")
            w.writerow(header)
            for j, it in enumerate(self.iterations):
                row = [int(it)] + [repr(float(x)) for x in sq[j]] + [repr(float(self.smoothness[j]))]
                if self.cost is not None:
                    row.append(repr(float(self.cost[j])))
                w.writerow(row)


def thinning_stride(n_iter: int) -> int:
    return 1 if n_iter < THIN_THRESHOLD else math.ceil(n_iter / THIN_THRESHOLD)


def global_cost(network: Network, costs: Sequence, W, eta: float) -> float:
    """``sum_k J_k(w_k) + eta/2 * S(W)``."""
    W = np.asarray(W, dtype=float)
    return float(sum(c.value(W[k]) for k, c in enumerate(costs)) + 0.5 * eta * smoothness(network, W))


def initial_state(init, n_agents: int, dim: int, rng: np.random.Generator | None, default: str) -> np.ndarray:
    if init is None:
        init = default
    if isinstance(init, str):
        if init == "zeros":
            return np.zeros((n_agents, dim))
        if init == "gaussian":
            if rng is None:
                raise ValueError("gaussian initialization needs a generator")
            return rng.standard_normal((n_agents, dim))
        raise ValueError(f"unknown init {init!r}")
    W0 = np.array(init, dtype=float)
    if W0.shape != (n_agents, dim):
        raise ValueError(f"init has shape {W0.shape}, expected {(n_agents, dim)}")
    return W0


def run(network: Network, costs: Sequence, params: AlgorithmParams, n_iter: int, seed,
        init=None, record: Sequence[str] = ("smoothness",), form: str = "neighbor",
        thin: bool = True) -> Trajectory:
    """Simulate one stochastic run from a seed.

    ``init`` is ``"gaussian"`` (default, ``N(0, I)`` per agent, drawn first
    from the run's generator), ``"zeros"`` or an explicit ``(N, M)`` state.
    ``record`` may contain ``"smoothness"`` and ``"cost"`` (the regularized
    global cost); both are evaluated only at stored iterates.  With ``thin``
    (default) long runs keep every ``ceil(n_iter / 10^4)``-th iterate.
    """
    M = check_dims(costs, network.n_agents)
    stability_limits(network, costs).check(params)
    rng = np.random.default_rng(seed)
    W0 = initial_state(init, network.n_agents, M, rng, "gaussian")
    oracle = NetworkOracle(costs)
    noise = _ChunkedNoise(oracle, [rng], batched=False)
    stride = thinning_stride(n_iter) if thin else 1
    kept_it, kept = [], []

    def observe(i, W):
        if i % stride == 0 or i == n_iter:
            kept_it.append(i)
            kept.append(W.copy())

    iterate(network, params, lambda i, W: oracle.noisy_gradient(W, noise(i)), W0, n_iter,
            observe, form, seed=seed)
    states = np.array(kept)
    smooth = np.array([smoothness(network, W) for W in states]) if "smoothness" in record else np.full(len(states), np.nan)
    cost = np.array([global_cost(network, costs, W, params.eta) for W in states]) if "cost" in record else None
    return Trajectory(np.array(kept_it), states, smooth, cost, n_iter, seed)


def run_batch(network: Network, costs: Sequence, params: AlgorithmParams, n_iter: int, seed, n_runs: int,
              init=None, observer=None, form: str = "neighbor") -> np.ndarray:
    """Evolve ``n_runs`` independent runs together, state shape ``(R, N, M)``.

    Run ``r`` owns the generator spawned as child ``r`` of
    ``SeedSequence(seed)``; results are deterministic in ``seed``.
    ``init`` is ``"zeros"``, ``"gaussian"`` (per-run draw) or one ``(N, M)``
    state shared by all runs.
    """
    M = check_dims(costs, network.n_agents)
    stability_limits(network, costs).check(params)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(n_runs)
    rngs = [np.random.default_rng(c) for c in children]
    if isinstance(init, str) and init == "gaussian":
        W0 = np.stack([r.standard_normal((network.n_agents, M)) for r in rngs])
    else:
        W0 = np.broadcast_to(initial_state(init, network.n_agents, M, None, "zeros"),
                             (n_runs, network.n_agents, M)).copy()
    oracle = NetworkOracle(costs)
    noise = _ChunkedNoise(oracle, rngs, batched=True)
    return iterate(network, params, lambda i, W: oracle.noisy_gradient(W, noise(i)), W0, n_iter,
                   observer, form, seed=seed)
