"""Analytical objects of the regularized multitask problem and their Monte Carlo counterparts.

States are ``(N, M)`` arrays throughout; stacked ``(N*M,)`` vectors follow
the row-major ravel of that layout, so ``L (x) I_M`` acts as ``L @ W``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .costs import CostError, NoiseProfile, all_quadratic, check_dims, kappa_prime, stacked_gradient
from .diffusion import (
    AlgorithmParams,
    DivergenceError,
    StabilityError,
    combination_matrix,
    contraction_factors,
    msp_step_limit,
    run_batch,
    stability_limits,
    stacked_hessian,
)
from .graph import Network, gft, igft, smoothness

log = logging.getLogger(__name__)

GAUSS_LEGENDRE_ORDER = 16
MIN_RUNS = 30


def individual_minimizers(costs: Sequence) -> np.ndarray:
    """``W_o = col{w_k^o}`` as an ``(N, M)`` array."""
    return np.stack([np.asarray(c.minimizer(), dtype=float) for c in costs])


def global_gradient(network: Network, costs: Sequence, W, eta: float) -> np.ndarray:
    """Gradient of ``sum_k J_k(w_k) + eta/2 W^T (L (x) I) W``: ``col{grad J_k} + eta L W``."""
    W = np.asarray(W, dtype=float)
    return stacked_gradient(costs, W) + eta * (network.laplacian @ W)


def global_objective(network: Network, costs: Sequence, W, eta: float) -> float:
    W = np.asarray(W, dtype=float)
    return float(sum(c.value(W[k]) for k, c in enumerate(costs)) + 0.5 * eta * smoothness(network, W))


# -- limiting point -----------------------------------------------------------

@dataclass
class LimitingPoint:
    w_eta: np.ndarray
    residual: float
    spectral: np.ndarray
    eta: float
    method: str
    iterations: int = 0


def limiting_point(network: Network, costs: Sequence, eta: float, tol: float = 1e-10,
                   max_iter: int = 200) -> LimitingPoint:
    """Minimizer ``W_eta`` of the regularized aggregate cost.

    Quadratic costs: direct solve of ``(H + eta*L) W = H W_o``.  Otherwise
    damped Newton with Armijo backtracking; if the line search stalls the
    solver falls back to gradient descent (step ``1/(max lambda_max + eta
    lambda_max(L))``) and says so in ``method``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    N = network.n_agents
    M = check_dims(costs, N)
    basis = network.spectral
    Lk = np.kron(network.laplacian, np.eye(M))
    if all_quadratic(costs):
        H = stacked_hessian(costs)
        W = np.linalg.solve(H + eta * Lk, H @ individual_minimizers(costs).ravel()).reshape(N, M)
        res = float(np.linalg.norm(global_gradient(network, costs, W, eta)))
        return LimitingPoint(W, res, gft(basis, W), eta, "direct", 0)

    W = individual_minimizers(costs).copy()
    method = "newton"
    it = 0
    g = global_gradient(network, costs, W, eta)
    res = float(np.linalg.norm(g))
    while res > tol and it < max_iter:
        it += 1
        Hs = stacked_hessian(costs, W) + eta * Lk
        step = np.linalg.solve(Hs, g.ravel()).reshape(N, M)
        f0 = global_objective(network, costs, W, eta)
        slope = float(np.sum(g * step))
        t = 1.0
        accepted = False
        while t > 1e-10:
            W_try = W - t * step
            if global_objective(network, costs, W_try, eta) <= f0 - 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # the objective is flat to machine precision: accept the full step if it reduces the residual
            g_try = global_gradient(network, costs, W - step, eta)
            if np.linalg.norm(g_try) < res:
                W_try, accepted = W - step, True
        if not accepted:
            method = "gradient-descent"
            break
        W = W_try
        g = global_gradient(network, costs, W, eta)
        res = float(np.linalg.norm(g))

    if method == "gradient-descent" or res > tol:
        method = "gradient-descent"
        lmax = max(c.hessian_bounds()[1] for c in costs) + eta * basis.lambda_max
        step = 1.0 / lmax
        gd_it = 0
        while res > tol and gd_it < 1_000_000:
            W = W - step * g
            g = global_gradient(network, costs, W, eta)
            res = float(np.linalg.norm(g))
            gd_it += 1
        it += gd_it
        log.warning("limiting point: Newton stalled, gradient descent reached residual %.3e", res)
    return LimitingPoint(W, res, gft(basis, W), eta, method, it)


def single_task_point(costs: Sequence, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Minimizer of ``sum_k J_k(w)`` by Newton's method (direct solve for quadratics)."""
    M = check_dims(costs)
    if all_quadratic(costs):
        Hs = sum(c.H for c in costs)
        return np.linalg.solve(Hs, sum(c.H @ c.w_o for c in costs))
    w = np.zeros(M)
    for _ in range(max_iter):
        g = sum(c.gradient(w) for c in costs)
        if np.linalg.norm(g) <= tol:
            return w
        w = w - np.linalg.solve(sum(c.hessian(w) for c in costs), g)
    raise RuntimeError(f"single-task Newton did not reach tol {tol}")


# -- spectral block form ------------------------------------------------------

def integrated_hessian(cost, start, end, order: int = GAUSS_LEGENDRE_ORDER) -> np.ndarray:
    """``int_0^1 hessian(start + t (end - start)) dt`` by Gauss-Legendre quadrature."""
    if cost.kind == "quadratic":
        return cost.H
    x, wts = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (x + 1.0)
    start = np.asarray(start, dtype=float)
    d = np.asarray(end, dtype=float) - start
    return sum(0.5 * wj * cost.hessian(start + tj * d) for tj, wj in zip(t, wts))


@dataclass
class SpectralBlocks:
    Q11: np.ndarray
    Q12: np.ndarray
    Q22: np.ndarray
    G: np.ndarray
    K: np.ndarray
    k_norm: float
    k_bound: float
    spectral: np.ndarray
    w_eta: np.ndarray

    @property
    def within_bound(self) -> bool:
        return self.k_norm <= self.k_bound * (1 + 1e-12)


def spectral_blocks(network: Network, costs: Sequence, eta: float, w_eta=None) -> SpectralBlocks:
    """Spectral block form of the limiting point.

    With ``Hbar = (V (x) I)^T diag{H_k,eta} (V (x) I)`` partitioned after the
    first ``M`` rows,

        Q11 = Hbar_11,  Q12 = Hbar_12,  Q22 = Hbar_22 + eta (Lambda_o (x) I)
        G   = (Q22 - Q12^T Q11^-1 Q12)^-1,   K = I - eta G (Lambda_o (x) I)

    and the spectral limiting point is
    ``[wbar_1 + Q11^-1 Q12 (I - K) wbar_R ; K wbar_R]`` where ``wbar`` is the
    transform of ``W_o``.  ``H_k,eta`` averages the Hessian along the segment
    from ``w_k^o`` to ``w_k,eta`` (exact for quadratics).  ``w_eta`` is only
    needed for non-quadratic costs; it is computed when omitted.
    """
    N = network.n_agents
    M = check_dims(costs, N)
    basis = network.spectral
    W_o = individual_minimizers(costs)
    if all_quadratic(costs):
        Hk = [c.H for c in costs]
    else:
        if w_eta is None:
            w_eta = limiting_point(network, costs, eta).w_eta
        Hk = [integrated_hessian(c, W_o[k], w_eta[k]) for k, c in enumerate(costs)]
    H = np.zeros((N * M, N * M))
    for k in range(N):
        H[k * M:(k + 1) * M, k * M:(k + 1) * M] = Hk[k]
    VI = np.kron(basis.eigenvectors, np.eye(M))
    Hbar = VI.T @ H @ VI
    Hbar = 0.5 * (Hbar + Hbar.T)
    lam_o = np.kron(np.diag(basis.reduced_eigenvalues), np.eye(M))
    Q11 = Hbar[:M, :M]
    Q12 = Hbar[:M, M:]
    Q22 = Hbar[M:, M:] + eta * lam_o
    if np.linalg.eigvalsh(Q11)[0] <= 0:
        raise CostError("Q11 is not positive definite; costs are not strongly convex")
    Q11_inv_Q12 = np.linalg.solve(Q11, Q12)
    G = np.linalg.inv(Q22 - Q12.T @ Q11_inv_Q12)
    K = np.eye(M * (N - 1)) - eta * G @ lam_o
    wbar = gft(basis, W_o)
    w1, wR = wbar[0], wbar[1:].ravel()
    KwR = K @ wR
    top = w1 + Q11_inv_Q12 @ (wR - KwR)
    spectral = np.vstack([top[None, :], KwR.reshape(N - 1, M)])
    bounds = np.array([c.hessian_bounds() for c in costs])
    lam2 = basis.algebraic_connectivity if N > 1 else 0.0
    k_bound = float(bounds[:, 1].max() / (eta * lam2 + bounds[:, 0].min()))
    k_norm = float(np.linalg.norm(K, 2)) if K.size else 0.0
    return SpectralBlocks(Q11, Q12, Q22, G, K, k_norm, k_bound, spectral, igft(basis, spectral))


# -- fixed-point bias ---------------------------------------------------------

def bias_closed_form(network: Network, costs: Sequence, params: AlgorithmParams, w_eta=None) -> np.ndarray:
    """Steady-state bias ``W_eta - W_inf`` for quadratic costs.

    ``mu^2 eta^2 [I - (I - mu eta L)(I - mu H)]^-1 L^2 W_eta``.
    """
    if not all_quadratic(costs):
        raise CostError("closed-form bias needs quadratic costs")
    N = network.n_agents
    M = check_dims(costs, N)
    bad = [v for v in stability_limits(network, costs).violations(params) if v in ("stability", "contraction")]
    if bad:
        raise StabilityError(bad, params)
    if params.eta == 0.0:
        return np.zeros((N, M))
    if w_eta is None:
        w_eta = limiting_point(network, costs, params.eta).w_eta
    Lk = np.kron(network.laplacian, np.eye(M))
    Ck = np.eye(N * M) - params.mu_eta * Lk
    A = np.eye(N * M) - Ck @ (np.eye(N * M) - params.mu * stacked_hessian(costs))
    rhs = params.mu_eta**2 * (Lk @ (Lk @ np.asarray(w_eta, dtype=float).ravel()))
    try:
        x = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise StabilityError(["contraction"], params) from exc
    return x.reshape(N, M)


# -- moment-bound recursions --------------------------------------------------

@dataclass
class InitMoments:
    msp: np.ndarray
    mfp: np.ndarray
    smp: np.ndarray


def init_moments_deterministic(w_inf, W0) -> InitMoments:
    """Moments of a known initial state."""
    d2 = np.sum((np.asarray(w_inf) - np.asarray(W0)) ** 2, axis=-1)
    return InitMoments(d2, d2**2, d2.copy())


def init_moments_gaussian(w_inf) -> InitMoments:
    """Moments of ``w_k,0 ~ N(0, I_M)``: ``||w_k,inf - w_k,0||^2`` is noncentral chi-square."""
    w_inf = np.asarray(w_inf, dtype=float)
    M = w_inf.shape[-1]
    lam = np.sum(w_inf**2, axis=-1)
    return InitMoments(lam + M, (lam + M) ** 2 + 2 * M + 4 * lam, lam.copy())


@dataclass
class BoundParams:
    gamma: np.ndarray
    G: np.ndarray
    b: np.ndarray
    G1: np.ndarray
    B: np.ndarray
    b1: np.ndarray
    G2: np.ndarray
    B1: np.ndarray
    kappa: np.ndarray
    zeta: np.ndarray


@dataclass
class BoundTrajectory:
    """Upper-bound recursions for the second, fourth and squared-first error moments.

    Arrays have shape ``(n_iter + 1, N)``; row ``i`` bounds iteration ``i``.
    """

    msp: np.ndarray
    mfp: np.ndarray
    smp: np.ndarray
    rho_msp: float
    rho_mfp: float
    rho_smp: float
    mu_limit: float
    divergent: bool
    params: BoundParams
    steady_msp: np.ndarray | None = None
    steady_mfp: np.ndarray | None = None
    steady_smp: np.ndarray | None = None

    def summary(self) -> dict:
        def mx(a):
            return None if a is None else float(np.max(a))
        return {
            "rho_msp": self.rho_msp,
            "rho_mfp": self.rho_mfp,
            "rho_smp": self.rho_smp,
            "mu_limit": self.mu_limit,
            "divergent": self.divergent,
            "steady_msp_max": mx(self.steady_msp),
            "steady_mfp_max": mx(self.steady_mfp),
            "steady_smp_max": mx(self.steady_smp),
        }


def _spectral_radius(A) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def bound_params(network: Network, costs: Sequence, noise: NoiseProfile, params: AlgorithmParams,
                 w_eta, w_inf, kappa=None, epsilon: float = 1.0) -> BoundParams:
    mu = params.mu
    N = network.n_agents
    check_dims(costs, N)
    if len(noise) != N:
        raise ValueError(f"noise profile has {len(noise)} agents, network has {N}")
    w_eta = np.asarray(w_eta, dtype=float)
    w_inf = np.asarray(w_inf, dtype=float)
    gamma = contraction_factors(costs, mu)
    b2, s2, b4, s4 = noise.beta_sq, noise.sigma_sq, noise.beta4, noise.sigma4
    n_eta2 = np.sum(w_eta**2, axis=1)
    gap2 = np.sum((w_eta - w_inf) ** 2, axis=1)
    b = s2 + 3 * b2 * n_eta2 + 3 * b2 * gap2
    G = gamma**2 + 3 * mu**2 * b2
    G1 = gamma**4 + 24 * mu**2 * gamma**2 * b2 + 81 * mu**4 * b4
    B = 8 * gamma**2 * b
    b1 = 3 * s4 + 81 * b4 * n_eta2**2 + 81 * b4 * gap2**2
    if kappa is None:
        kappa = np.array([kappa_prime(c, w_eta[k], epsilon) for k, c in enumerate(costs)])
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (N,)).copy()
    B1 = 2 * kappa**2 * gap2
    zeta = np.array([
        min(2 * lo - mu * lo**2 - 3 * mu * bb, 2 * hi - mu * hi**2 - 3 * mu * bb)
        for (lo, hi), bb in zip((c.hessian_bounds() for c in costs), b2)
    ])
    return BoundParams(gamma, G, b, G1, B, b1, gamma.copy(), B1, kappa, zeta)


def bound_recursions(network: Network, costs: Sequence, noise: NoiseProfile, params: AlgorithmParams,
                     w_eta, w_inf, n_iter: int, init_moments: InitMoments, kappa=None,
                     epsilon: float = 1.0) -> BoundTrajectory:
    """Evaluate the three moment-bound recursions element-wise, as written.

    ``C = I - mu*eta*L``::

        MSP_i = C G MSP_{i-1} + mu^2 C b
        MFP_i = C G' MFP_{i-1} + mu^2 C B MSP_{i-1} + mu^4 C b'
        SMP_i = C G'' SMP_{i-1} + mu^2 C (I - G'')^-1 B' MSP_{i-1}
                + mu^2 kappa'^2/2 C (I - G'')^-1 MFP_{i-1}

    ``kappa`` (per agent, or scalar) defaults to ``kappa_prime`` at ``w_eta``
    with tolerance radius ``epsilon``.  A spectral radius ``rho(CG) >= 1``
    marks the result divergent; the recursions are still evaluated.
    """
    mu = params.mu
    C = combination_matrix(network, params).matrix
    bp = bound_params(network, costs, noise, params, w_eta, w_inf, kappa, epsilon)
    N = network.n_agents
    CG, CG1, CG2 = C * bp.G, C * bp.G1, C * bp.G2
    inv_1mG2 = np.where(bp.G2 < 1, 1.0 / np.maximum(1 - bp.G2, 1e-300), np.inf)
    rho = (_spectral_radius(CG), _spectral_radius(CG1), _spectral_radius(CG2))
    divergent = rho[0] >= 1
    if divergent:
        log.warning("MSP bound recursion unstable: rho(CG) = %.6f", rho[0])

    f_msp = mu**2 * (C @ bp.b)
    f_mfp = mu**4 * (C @ bp.b1)
    CB = C * bp.B
    S_msp = mu**2 * C * (inv_1mG2 * bp.B1)
    S_mfp = mu**2 * C * (inv_1mG2 * 0.5 * bp.kappa**2)

    msp = np.empty((n_iter + 1, N))
    mfp = np.empty((n_iter + 1, N))
    smp = np.empty((n_iter + 1, N))
    msp[0], mfp[0], smp[0] = init_moments.msp, init_moments.mfp, init_moments.smp
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n_iter + 1):
            msp[i] = CG @ msp[i - 1] + f_msp
            mfp[i] = CG1 @ mfp[i - 1] + mu**2 * (CB @ msp[i - 1]) + f_mfp
            smp[i] = CG2 @ smp[i - 1] + S_msp @ msp[i - 1] + S_mfp @ mfp[i - 1]

    out = BoundTrajectory(msp, mfp, smp, rho[0], rho[1], rho[2], msp_step_limit(costs, noise), divergent, bp)
    if not divergent and rho[1] < 1 and rho[2] < 1:
        I = np.eye(N)
        out.steady_msp = np.linalg.solve(I - CG, f_msp)
        out.steady_mfp = np.linalg.solve(I - CG1, mu**2 * (CB @ out.steady_msp) + f_mfp)
        out.steady_smp = np.linalg.solve(I - CG2, S_msp @ out.steady_msp + S_mfp @ out.steady_mfp)
    return out


# -- empirical moments --------------------------------------------------------

def steady_window(n_iter: int, fraction: float = 0.1, min_samples: int = 200) -> slice:
    """Last ``fraction`` of iterations ``1..n_iter``, at least ``min_samples`` (when available)."""
    count = min(n_iter, max(min_samples, int(math.ceil(fraction * n_iter))))
    return slice(n_iter + 1 - count, n_iter + 1)


@dataclass
class MomentTrajectory:
    """Monte Carlo moments of ``w_k,inf - w_k,i`` over ``R`` runs, shape ``(n_iter + 1, N)``.

    ``smp`` is the bias-corrected estimate
    ``max(||mean d||^2 - tr(Cov d)/R, 0)`` of the squared mean.
    """

    msp: np.ndarray
    mfp: np.ndarray
    smp: np.ndarray
    msp_se: np.ndarray
    mfp_se: np.ndarray
    smp_se: np.ndarray
    R: int
    reference: np.ndarray
    seed: object
    bounds: BoundTrajectory | None = None

    def steady(self, name: str = "msp", fraction: float = 0.1, min_samples: int = 200) -> np.ndarray:
        a = getattr(self, name)
        return a[steady_window(a.shape[0] - 1, fraction, min_samples)].mean(axis=0)

    def dominance(self, bounds: BoundTrajectory | None = None, n_se: float = 3.0) -> dict:
        """Worst-case ``empirical - (bound + n_se * SE)`` per moment; ``<= 0`` means dominated."""
        bounds = bounds if bounds is not None else self.bounds
        if bounds is None:
            raise ValueError("no bound trajectory attached")
        out = {}
        for name in ("msp", "mfp", "smp"):
            emp = getattr(self, name)
            se = getattr(self, name + "_se")
            bnd = getattr(bounds, name)
            slack = n_se * se + 1e-12 * np.maximum(np.abs(bnd), 1.0)
            excess = emp - (bnd + slack)
            idx = np.unravel_index(np.argmax(excess), excess.shape)
            out[name] = {
                "max_excess": float(excess[idx]),
                "iteration": int(idx[0]),
                "agent": int(idx[1]),
                "holds": bool(np.all(excess <= 0)),
            }
        return out


def empirical_moments(network: Network, costs: Sequence, params: AlgorithmParams, n_iter: int, R: int,
                      seed, init="zeros", w_inf=None) -> MomentTrajectory:
    """Per-iteration Monte Carlo moments of the error relative to the noiseless fixed point."""
    if R < MIN_RUNS:
        raise ValueError(f"need at least {MIN_RUNS} runs, got {R}")
    from .diffusion import fixed_point

    if w_inf is None:
        w_inf = fixed_point(network, costs, params).state
    w_inf = np.asarray(w_inf, dtype=float)
    N, M = w_inf.shape
    shape = (n_iter + 1, N)
    msp, mfp, smp = np.empty(shape), np.empty(shape), np.empty(shape)
    msp_se, mfp_se, smp_se = np.empty(shape), np.empty(shape), np.empty(shape)
    sqrt_r = math.sqrt(R)

    def observe(i, W):
        D = w_inf - W
        sq = np.einsum("rnm,rnm->rn", D, D)
        q = sq * sq
        msp[i] = sq.mean(axis=0)
        mfp[i] = q.mean(axis=0)
        msp_se[i] = sq.std(axis=0, ddof=1) / sqrt_r
        mfp_se[i] = q.std(axis=0, ddof=1) / sqrt_r
        xbar = D.mean(axis=0)
        Dc = D - xbar
        cov = np.einsum("rni,rnj->nij", Dc, Dc) / (R - 1)
        tr = np.einsum("nii->n", cov)
        tr2 = np.einsum("nij,nji->n", cov, cov)
        m2 = np.einsum("ni,ni->n", xbar, xbar)
        quad = np.einsum("ni,nij,nj->n", xbar, cov, xbar)
        smp[i] = np.maximum(m2 - tr / R, 0.0)
        smp_se[i] = np.sqrt(np.maximum(4 * quad / R + 2 * tr2 / R**2, 0.0))

    try:
        run_batch(network, costs, params, n_iter, seed, R, init=init, observer=observe)
    except DivergenceError as exc:
        raise DivergenceError(exc.iteration, seed) from exc
    return MomentTrajectory(msp, mfp, smp, msp_se, mfp_se, smp_se, R, w_inf, seed)


# -- smoothness and eta studies -----------------------------------------------

@dataclass
class SmoothnessRelation:
    scale: np.ndarray
    smoothness: np.ndarray
    gap: np.ndarray

    def monotone(self, rtol: float = 1e-12) -> bool:
        order = np.argsort(self.scale)
        s, g = self.smoothness[order], self.gap[order]
        ok_s = np.all(np.diff(s) >= -rtol * np.maximum(np.abs(s[1:]), 1.0))
        ok_g = np.all(np.diff(g) >= -rtol * np.maximum(np.abs(g[1:]), 1.0))
        return bool(ok_s and ok_g)


def bias_smoothness_relation(network: Network, costs: Sequence, eta: float, scale_grid) -> SmoothnessRelation:
    """Scale the non-DC spectral content of ``W_o`` and report ``S(W_o)`` and ``||W_eta - W_o||``."""
    if not all_quadratic(costs):
        raise CostError("smoothness relation is defined for quadratic costs")
    basis = network.spectral
    wbar = gft(basis, individual_minimizers(costs))
    scales = np.asarray(list(scale_grid), dtype=float)
    S, gap = [], []
    for s in scales:
        wb = wbar.copy()
        wb[1:] *= s
        W_o = igft(basis, wb)
        scaled = [c.with_minimizer(W_o[k]) for k, c in enumerate(costs)]
        W_eta = limiting_point(network, scaled, eta).w_eta
        S.append(smoothness(network, W_o))
        gap.append(float(np.linalg.norm(W_eta - W_o)))
    return SmoothnessRelation(scales, np.array(S), np.array(gap))


@dataclass
class EtaSweepRow:
    eta: float
    mu: float
    w_eta: np.ndarray | None
    gap_individual: float
    gap_single_task: float
    msd: float | None
    skipped: bool = False
    note: str = ""


def eta_sweep(network: Network, costs: Sequence, params_base: AlgorithmParams, eta_grid, n_iter: int = 0,
              R: int = MIN_RUNS, seed=0, init="gaussian", threads: int = 1) -> list[EtaSweepRow]:
    """Limiting point and (optionally) steady-state MSD across a grid of eta.

    Grid points whose ``mu*eta`` breaks a combination-matrix limit are skipped
    with a note.  With ``n_iter > 0`` each point runs ``R`` Monte Carlo
    repetitions; point ``j`` uses child ``j`` of ``SeedSequence(seed)`` so
    results do not depend on ``threads``.  MSD is the mean of
    ``||W_o - W_i||^2 / N`` over runs and the steady-state window.
    """
    grid = [float(e) for e in eta_grid]
    if not grid:
        raise ValueError("empty eta grid")
    W_o = individual_minimizers(costs)
    w_star = single_task_point(costs)
    limits = stability_limits(network, costs)
    seeds = np.random.SeedSequence(seed).spawn(len(grid))
    N = network.n_agents

    def point(j):
        eta = grid[j]
        try:
            params = AlgorithmParams(params_base.mu, eta)
        except ValueError as exc:
            return EtaSweepRow(eta, params_base.mu, None, math.nan, math.nan, None, True, str(exc))
        bad = limits.violations(params)
        if bad:
            return EtaSweepRow(eta, params.mu, None, math.nan, math.nan, None, True,
                               "violates " + ", ".join(bad))
        W_eta = limiting_point(network, costs, eta).w_eta
        row = EtaSweepRow(eta, params.mu, W_eta, float(np.linalg.norm(W_eta - W_o)),
                          float(np.linalg.norm(W_eta - w_star)), None)
        if n_iter > 0:
            win = steady_window(n_iter)
            acc = []

            def observe(i, W):
                if win.start <= i < win.stop:
                    acc.append(np.mean(np.sum((W_o - W) ** 2, axis=(-2, -1))) / N)

            run_batch(network, costs, params, n_iter, seeds[j], R, init=init, observer=observe)
            row.msd = float(np.mean(acc))
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(point, range(len(grid))))
    return [point(j) for j in range(len(grid))]
