"""Per-agent risk models and their gradient oracles.

Every cost exposes the same surface:

``gradient(w)`` / ``hessian(w)`` / ``hessian_bounds()``
    exact (quadratic) or frozen large-sample (logistic) derivatives.
``draw_noise(rng, size)`` / ``noisy_gradient(w, xi)``
    the stochastic oracle split in two, so simulations can pre-draw the
    randomness ``xi`` in blocks and stay reproducible.
``stochastic_gradient(w, rng)``
    one fresh draw, ``noisy_gradient(w, draw_noise(rng))``.

The gradient noise is ``s = gradient(w) - noisy_gradient(w, xi)``.  All
``w`` arguments may carry leading batch axes, ``(..., M)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit


class CostError(ValueError):
    pass


@dataclass(frozen=True)
class AgentNoise:
    """Gradient-noise envelope of one agent.

    ``E||s||^2 <= beta_sq ||w||^2 + sigma_sq`` and
    ``E||s||^4 <= beta4 ||w||^4 + sigma4``.
    """

    beta_sq: float
    sigma_sq: float
    beta4: float
    sigma4: float

    def __post_init__(self):
        for name in ("beta_sq", "sigma_sq", "beta4", "sigma4"):
            if not getattr(self, name) >= 0:
                raise CostError(f"{name} must be nonnegative, got {getattr(self, name)}")


@dataclass(frozen=True, eq=False)
class NoiseProfile:
    """Per-agent noise envelopes stacked into length-N vectors."""

    beta_sq: np.ndarray
    sigma_sq: np.ndarray
    beta4: np.ndarray
    sigma4: np.ndarray

    def __post_init__(self):
        for name in ("beta_sq", "sigma_sq", "beta4", "sigma4"):
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim != 1 or np.any(~(a >= 0)):
                raise CostError(f"{name} must be a vector of nonnegative numbers")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_entries(cls, entries: Sequence[AgentNoise]) -> "NoiseProfile":
        return cls(
            np.array([e.beta_sq for e in entries]),
            np.array([e.sigma_sq for e in entries]),
            np.array([e.beta4 for e in entries]),
            np.array([e.sigma4 for e in entries]),
        )

    @classmethod
    def from_costs(cls, costs: Sequence) -> "NoiseProfile":
        """Declared profiles; every cost must carry one (quadratic costs do)."""
        entries = []
        for k, c in enumerate(costs):
            p = c.noise_profile()
            if p is None:
                raise CostError(f"cost {k} has no declared noise profile; estimate one")
            entries.append(p)
        return cls.from_entries(entries)

    @classmethod
    def zeros(cls, n_agents: int) -> "NoiseProfile":
        z = np.zeros(n_agents)
        return cls(z, z, z, z)

    def __len__(self) -> int:
        return self.beta_sq.shape[0]

    def agent(self, k: int) -> AgentNoise:
        return AgentNoise(
            float(self.beta_sq[k]), float(self.sigma_sq[k]),
            float(self.beta4[k]), float(self.sigma4[k]),
        )


class QuadraticCost:
    """``J(w) = 1/2 (w - w_o)^T H (w - w_o)`` with isotropic Gaussian gradient noise.

    The noise at ``w`` is ``N(0, (beta_sq ||w||^2 + sigma_sq) / M * I)`` so the
    second-moment envelope holds with equality.
    """

    kind = "quadratic"

    def __init__(self, hessian, minimizer, beta_sq: float = 0.0, sigma_sq: float = 0.0):
        H = np.atleast_2d(np.array(hessian, dtype=float))
        w_o = np.atleast_1d(np.array(minimizer, dtype=float))
        if H.shape != (w_o.shape[0], w_o.shape[0]):
            raise CostError(f"hessian shape {H.shape} does not match minimizer length {w_o.shape[0]}")
        if not np.allclose(H, H.T, rtol=0, atol=1e-12 * max(1.0, np.abs(H).max())):
            raise CostError("hessian must be symmetric")
        H = 0.5 * (H + H.T)
        eig = np.linalg.eigvalsh(H)
        if not eig[0] > 0:
            raise CostError(f"hessian must be positive definite (smallest eigenvalue {eig[0]:.3e})")
        if not (beta_sq >= 0 and sigma_sq >= 0):
            raise CostError("noise parameters must be nonnegative")
        H.setflags(write=False)
        w_o.setflags(write=False)
        self.H = H
        self.w_o = w_o
        self.beta_sq = float(beta_sq)
        self.sigma_sq = float(sigma_sq)
        self._bounds = (float(eig[0]), float(eig[-1]))

    def __repr__(self):
        return f"QuadraticCost(dim={self.dim}, bounds={self._bounds}, beta_sq={self.beta_sq}, sigma_sq={self.sigma_sq})"

    @property
    def dim(self) -> int:
        return self.w_o.shape[0]

    @property
    def noise_dim(self) -> int:
        return self.dim

    def minimizer(self) -> np.ndarray:
        return self.w_o

    def with_minimizer(self, minimizer) -> "QuadraticCost":
        return QuadraticCost(self.H, minimizer, self.beta_sq, self.sigma_sq)

    def with_noise(self, beta_sq: float, sigma_sq: float) -> "QuadraticCost":
        return QuadraticCost(self.H, self.w_o, beta_sq, sigma_sq)

    def value(self, w) -> np.ndarray:
        d = np.asarray(w, dtype=float) - self.w_o
        return 0.5 * np.einsum("...i,ij,...j->...", d, self.H, d)

    def gradient(self, w) -> np.ndarray:
        return (np.asarray(w, dtype=float) - self.w_o) @ self.H

    def hessian(self, w=None) -> np.ndarray:
        return self.H

    def hessian_bounds(self) -> tuple[float, float]:
        return self._bounds

    def noise_variance(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return self.beta_sq * np.sum(w * w, axis=-1) + self.sigma_sq

    def draw_noise(self, rng: np.random.Generator, size=()) -> np.ndarray:
        size = (size,) if np.isscalar(size) else tuple(size)
        return rng.standard_normal(size + (self.dim,))

    def gradient_noise(self, w, xi) -> np.ndarray:
        scale = np.sqrt(self.noise_variance(w) / self.dim)
        return np.asarray(scale)[..., None] * xi

    def noisy_gradient(self, w, xi) -> np.ndarray:
        if self.beta_sq == 0.0 and self.sigma_sq == 0.0:
            return self.gradient(w)
        return self.gradient(w) - self.gradient_noise(w, xi)

    def stochastic_gradient(self, w, rng: np.random.Generator) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return self.noisy_gradient(w, self.draw_noise(rng, w.shape[:-1]))

    def noise_profile(self) -> AgentNoise:
        # E||s||^4 = (1 + 2/M) v^2 for the Gaussian model, v = beta_sq |w|^2 + sigma_sq,
        # and v^2 <= 2 beta_sq^2 |w|^4 + 2 sigma_sq^2 (factor 1 if either term vanishes)
        c = 1.0 + 2.0 / self.dim
        f = 2.0 if (self.beta_sq > 0 and self.sigma_sq > 0) else 1.0
        return AgentNoise(self.beta_sq, self.sigma_sq, c * f * self.beta_sq**2, c * f * self.sigma_sq**2)

    def kappa_d(self, *args, **kwargs) -> float:
        return 0.0


class LogisticCost:
    """Regularized logistic risk ``E ln(1 + exp(-gamma h^T w)) + rho ||w||^2``.

    Features ``h ~ N(feature_mean, feature_cov)``.  Labels follow
    ``label_rule``: ``"logistic"`` draws ``gamma = +1`` with probability
    ``sigmoid(h^T separator)``; ``"sign"`` sets ``gamma = sign(h^T separator)``
    with ``sign(0) = +1``.

    The expectation has no closed form.  ``gradient``, ``hessian`` and
    ``value`` are averages over a frozen sample of ``oracle_samples`` draws
    generated from ``oracle_seed``; they are approximations of the population
    quantities, accurate to O(oracle_samples^-1/2).
    """

    kind = "logistic"

    def __init__(
        self,
        separator,
        feature_mean=None,
        feature_cov=None,
        rho: float = 1e-3,
        label_rule: str = "logistic",
        oracle_samples: int = 100_000,
        oracle_seed: int = 0,
    ):
        t = np.atleast_1d(np.array(separator, dtype=float))
        M = t.shape[0]
        mean = np.zeros(M) if feature_mean is None else np.atleast_1d(np.array(feature_mean, dtype=float))
        cov = np.eye(M) if feature_cov is None else np.atleast_2d(np.array(feature_cov, dtype=float))
        if mean.shape != (M,) or cov.shape != (M, M):
            raise CostError("feature_mean / feature_cov do not match the separator dimension")
        if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov)[0] < 0:
            raise CostError("feature_cov must be symmetric positive semi-definite")
        if not rho > 0:
            raise CostError("rho must be positive for strong convexity")
        if label_rule not in ("logistic", "sign"):
            raise CostError(f"unknown label_rule {label_rule!r}")
        self.separator = t
        self.feature_mean = mean
        self.feature_cov = cov
        self.rho = float(rho)
        self.label_rule = label_rule
        self.oracle_samples = int(oracle_samples)
        self.oracle_seed = oracle_seed
        self._chol = np.linalg.cholesky(cov) if np.linalg.eigvalsh(cov)[0] > 0 else None
        self._oracle = None
        self._minimizer = None

    def __repr__(self):
        return f"LogisticCost(dim={self.dim}, rho={self.rho}, label_rule={self.label_rule!r})"

    @property
    def dim(self) -> int:
        return self.separator.shape[0]

    @property
    def noise_dim(self) -> int:
        return self.dim + 1

    def sample(self, rng: np.random.Generator, size=()) -> tuple[np.ndarray, np.ndarray]:
        size = (size,) if np.isscalar(size) else tuple(size)
        if self._chol is not None:
            h = self.feature_mean + rng.standard_normal(size + (self.dim,)) @ self._chol.T
        else:
            h = rng.multivariate_normal(self.feature_mean, self.feature_cov, size=size or None)
        z = h @ self.separator
        if self.label_rule == "logistic":
            gamma = np.where(rng.random(size) < expit(z), 1.0, -1.0)
        else:
            gamma = np.where(z >= 0, 1.0, -1.0)
        return h, gamma

    def draw_noise(self, rng: np.random.Generator, size=()) -> np.ndarray:
        h, gamma = self.sample(rng, size)
        return np.concatenate([h, np.asarray(gamma)[..., None]], axis=-1)

    def _oracle_sample(self):
        if self._oracle is None:
            rng = np.random.default_rng(self.oracle_seed)
            self._oracle = self.sample(rng, self.oracle_samples)
        return self._oracle

    @staticmethod
    def sample_gradient(w, h, gamma) -> np.ndarray:
        """Gradient of ``ln(1 + exp(-gamma h^T w))`` for one (or a batch of) samples."""
        z = gamma * np.sum(h * w, axis=-1)
        return (-gamma * expit(-z))[..., None] * h

    def noisy_gradient(self, w, xi) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return self.sample_gradient(w, xi[..., : self.dim], xi[..., self.dim]) + 2.0 * self.rho * w

    def stochastic_gradient(self, w, rng: np.random.Generator) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return self.noisy_gradient(w, self.draw_noise(rng, w.shape[:-1]))

    def value(self, w) -> np.ndarray:
        h, gamma = self._oracle_sample()
        w = np.asarray(w, dtype=float)
        z = (w @ h.T) * gamma
        return np.mean(np.logaddexp(0.0, -z), axis=-1) + self.rho * np.sum(w * w, axis=-1)

    def gradient(self, w) -> np.ndarray:
        h, gamma = self._oracle_sample()
        w = np.asarray(w, dtype=float)
        z = (w @ h.T) * gamma
        coef = -gamma * expit(-z) / h.shape[0]
        return coef @ h + 2.0 * self.rho * w

    def hessian(self, w) -> np.ndarray:
        h, _ = self._oracle_sample()
        w = np.asarray(w, dtype=float)
        z = h @ w
        s = expit(z) * expit(-z)
        return (h.T * s) @ h / h.shape[0] + 2.0 * self.rho * np.eye(self.dim)

    def hessian_bounds(self) -> tuple[float, float]:
        second_moment = self.feature_cov + np.outer(self.feature_mean, self.feature_mean)
        return 2.0 * self.rho, 2.0 * self.rho + float(np.linalg.eigvalsh(second_moment)[-1]) / 4.0

    def minimizer(self, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
        """Minimizer of the frozen-sample risk, by Newton's method."""
        if self._minimizer is None:
            w = np.zeros(self.dim)
            for _ in range(max_iter):
                g = self.gradient(w)
                if np.linalg.norm(g) <= tol:
                    break
                w = w - np.linalg.solve(self.hessian(w), g)
            self._minimizer = w
        return self._minimizer

    def noise_profile(self):
        return None

    def kappa_d(self, center, epsilon: float = 0.1, n_probes: int = 100, seed: int = 0,
                safety: float = 1.5) -> float:
        """Hessian Lipschitz constant near ``center``, estimated by sampling.

        Largest ``||H(center + d) - H(center)|| / ||d||`` over ``n_probes``
        random ``d`` with ``||d|| <= epsilon``, times ``safety``.
        """
        rng = np.random.default_rng(seed)
        center = np.asarray(center, dtype=float)
        H0 = self.hessian(center)
        best = 0.0
        for _ in range(n_probes):
            d = rng.standard_normal(self.dim)
            d *= epsilon * rng.random() ** (1.0 / self.dim) / np.linalg.norm(d)
            nd = np.linalg.norm(d)
            if nd == 0:
                continue
            best = max(best, np.linalg.norm(self.hessian(center + d) - H0, 2) / nd)
        return safety * best


class EmpiricalLogisticCost:
    """Regularized logistic risk averaged over a fixed training set.

    Used when an agent is driven by a recorded data stream: the stochastic
    oracle is the single-sample gradient on the next record, and the exact
    quantities are averages over the whole training set.
    """

    kind = "logistic-empirical"

    def __init__(self, features, labels, rho: float = 1e-3):
        h = np.atleast_2d(np.array(features, dtype=float))
        g = np.asarray(labels, dtype=float).ravel()
        if h.shape[0] != g.shape[0] or h.shape[0] == 0:
            raise CostError("features and labels must have the same nonzero length")
        if not np.all(np.isin(g, (-1.0, 1.0))):
            raise CostError("labels must be -1 or +1")
        if not rho > 0:
            raise CostError("rho must be positive for strong convexity")
        self.features, self.labels, self.rho = h, g, float(rho)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def noise_dim(self) -> int:
        return self.dim + 1

    def draw_noise(self, rng: np.random.Generator, size=()) -> np.ndarray:
        size = (size,) if np.isscalar(size) else tuple(size)
        idx = rng.integers(0, self.labels.shape[0], size=size)
        return np.concatenate([self.features[idx], self.labels[idx][..., None]], axis=-1)

    def noisy_gradient(self, w, xi) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return LogisticCost.sample_gradient(w, xi[..., : self.dim], xi[..., self.dim]) + 2.0 * self.rho * w

    def stochastic_gradient(self, w, rng: np.random.Generator) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return self.noisy_gradient(w, self.draw_noise(rng, w.shape[:-1]))

    def value(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        z = (w @ self.features.T) * self.labels
        return np.mean(np.logaddexp(0.0, -z), axis=-1) + self.rho * np.sum(w * w, axis=-1)

    def gradient(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        z = (w @ self.features.T) * self.labels
        coef = -self.labels * expit(-z) / self.labels.shape[0]
        return coef @ self.features + 2.0 * self.rho * w

    def hessian(self, w) -> np.ndarray:
        h = self.features
        z = h @ np.asarray(w, dtype=float)
        s = expit(z) * expit(-z)
        return (h.T * s) @ h / h.shape[0] + 2.0 * self.rho * np.eye(self.dim)

    def hessian_bounds(self) -> tuple[float, float]:
        second_moment = self.features.T @ self.features / self.features.shape[0]
        return 2.0 * self.rho, 2.0 * self.rho + float(np.linalg.eigvalsh(second_moment)[-1]) / 4.0

    def minimizer(self, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
        w = np.zeros(self.dim)
        for _ in range(max_iter):
            g = self.gradient(w)
            if np.linalg.norm(g) <= tol:
                break
            w = w - np.linalg.solve(self.hessian(w), g)
        return w

    def noise_profile(self):
        return None

    def kappa_d(self, center, epsilon: float = 0.1, n_probes: int = 100, seed: int = 0,
                safety: float = 1.5) -> float:
        return LogisticCost.kappa_d(self, center, epsilon, n_probes, seed, safety)


def kappa_prime(cost, center, epsilon: float = 1.0) -> float:
    """``max(kappa_d, (lambda_max - lambda_min) / epsilon)`` for one agent."""
    lo, hi = cost.hessian_bounds()
    kd = cost.kappa_d(center)
    return max(kd, (hi - lo) / epsilon)


def estimate_noise_profile(cost, probe_points, n_samples: int, rng: np.random.Generator) -> AgentNoise:
    """Fit the gradient-noise envelopes of one agent from sampled gradients.

    At every probe ``w`` draw ``n_samples`` stochastic gradients and compute
    the sample moments ``m2 = mean ||g - gbar||^2`` and
    ``m4 = mean ||g - gbar||^4``.  Ordinary least squares of ``m2`` on
    ``||w||^2`` gives ``(beta_sq, sigma_sq)`` as (slope, intercept); ``m4``
    on ``||w||^4`` gives ``(beta4, sigma4)``.  Negative fits are clamped to
    zero with a warning.
    """
    P = np.atleast_2d(np.asarray(probe_points, dtype=float))
    if P.shape[0] < 2:
        raise CostError("need at least two probe points")
    norms2 = np.sum(P * P, axis=1)
    if np.ptp(norms2) <= 1e-12 * max(1.0, norms2.max()):
        raise CostError("probe points must have distinct norms")
    m2 = np.empty(P.shape[0])
    m4 = np.empty(P.shape[0])
    for j, w in enumerate(P):
        xi = cost.draw_noise(rng, n_samples)
        g = cost.noisy_gradient(np.broadcast_to(w, (n_samples, w.shape[0])), xi)
        d2 = np.sum((g - g.mean(axis=0)) ** 2, axis=1)
        m2[j] = d2.mean()
        m4[j] = np.mean(d2 * d2)

    def fit(x, y, names):
        X = np.column_stack([x, np.ones_like(x)])
        slope, intercept = np.linalg.lstsq(X, y, rcond=None)[0]
        out = []
        for name, v in zip(names, (slope, intercept)):
            if v < 0:
                warnings.warn(f"fitted {name} = {v:.3e} < 0, clamped to 0", RuntimeWarning, stacklevel=3)
                v = 0.0
            out.append(float(v))
        return out

    beta_sq, sigma_sq = fit(norms2, m2, ("beta_sq", "sigma_sq"))
    beta4, sigma4 = fit(norms2**2, m4, ("beta4", "sigma4"))
    return AgentNoise(beta_sq, sigma_sq, beta4, sigma4)


def stacked_gradient(costs: Sequence, W) -> np.ndarray:
    """``col{grad J_k(w_k)}`` as an ``(..., N, M)`` array."""
    W = np.asarray(W, dtype=float)
    return np.stack([c.gradient(W[..., k, :]) for k, c in enumerate(costs)], axis=-2)


def all_quadratic(costs: Sequence) -> bool:
    return all(c.kind == "quadratic" for c in costs)


def check_dims(costs: Sequence, n_agents: int | None = None) -> int:
    if not costs:
        raise CostError("no costs given")
    if n_agents is not None and len(costs) != n_agents:
        raise CostError(f"{len(costs)} costs for {n_agents} agents")
    dims = {c.dim for c in costs}
    if len(dims) != 1:
        raise CostError(f"agents have different dimensions {sorted(dims)}")
    return dims.pop()
