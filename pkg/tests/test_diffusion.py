import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multitask_diffusion.costs import QuadraticCost
from multitask_diffusion.diffusion import (
    AlgorithmParams,
    DivergenceError,
    FixedPointError,
    StabilityError,
    atc_step,
    combination_matrix,
    combination_norm,
    combine_matrix,
    combine_neighbor_sum,
    contraction_check,
    deterministic_step,
    fixed_point,
    fixed_point_direct,
    run,
    run_batch,
    stability_limits,
    thinning_stride,
)
from multitask_diffusion.graph import build_network, smoothness

from conftest import random_network, random_quadratic_costs


def unit_costs(n, m=1, **kw):
    return [QuadraticCost(np.eye(m), np.zeros(m), **kw) for _ in range(n)]


class TestLimits:
    def test_p2(self, p2):
        lim = stability_limits(p2, unit_costs(2))
        assert lim.mu_eta_stability == pytest.approx(1.0)
        assert lim.mu_eta_positivity == 1.0

    def test_unit_hessians_no_noise(self, p2):
        lim = stability_limits(p2, unit_costs(2))
        assert lim.mu_contraction == 2.0
        assert lim.mu_msp == 2.0

    def test_k3_positivity_binds(self, k3):
        lim = stability_limits(k3, unit_costs(3))
        assert lim.mu_eta_stability == pytest.approx(2 / 3)
        assert lim.mu_eta_positivity == 0.5
        assert lim.max_mu_eta() == 0.5

    def test_msp_limit_formula(self, p2):
        costs = [QuadraticCost(np.diag([0.5, 2.0]), [0, 0], beta_sq=0.1),
                 QuadraticCost(np.diag([1.0, 1.0]), [0, 0], beta_sq=0.3)]
        expect = min(2 * 0.5 / (0.25 + 0.3), 2 * 2.0 / (4.0 + 0.3), 2 / (1 + 0.9))
        assert stability_limits(p2, costs).mu_msp == pytest.approx(expect)

    def test_violations_boundaries(self, p2):
        lim = stability_limits(p2, unit_costs(2))
        assert lim.violations(AlgorithmParams(0.5, 2.0)) == []      # mu*eta = 1 inclusive
        assert "positivity" in lim.violations(AlgorithmParams(0.5, 2.1))
        assert lim.violations(AlgorithmParams(2.0, 0.0)) == ["contraction"]  # strict

    def test_params_validation(self):
        with pytest.raises(ValueError):
            AlgorithmParams(0.0, 1.0)
        with pytest.raises(ValueError):
            AlgorithmParams(0.1, -1.0)


class TestCombinationMatrix:
    def test_eta_zero_identity(self, k3):
        np.testing.assert_array_equal(combination_matrix(k3, AlgorithmParams(0.1, 0.0)).matrix, np.eye(3))

    def test_p2_half(self, p2):
        C = combination_matrix(p2, AlgorithmParams(0.1, 5.0)).matrix
        np.testing.assert_allclose(C, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_rejects_positivity(self, k3):
        with pytest.raises(StabilityError, match="combination-matrix positivity") as exc:
            combination_matrix(k3, AlgorithmParams(0.1, 6.0))
        assert exc.value.violated == ["positivity"]

    def test_rejects_stability_weighted(self):
        # weighted path where the spectral limit binds before positivity
        net = build_network(3, [(0, 1, 1.0), (1, 2, 1.0)])
        lim = stability_limits(net, unit_costs(3))
        assert lim.mu_eta_stability < lim.mu_eta_positivity or lim.mu_eta_positivity <= lim.mu_eta_stability
        mu_eta = 1.01 * lim.max_mu_eta()
        with pytest.raises(StabilityError):
            combination_matrix(net, AlgorithmParams(1.0, mu_eta))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 9), st.integers(0, 10_000), st.floats(0.0, 1.0))
    def test_doubly_stochastic(self, n, seed, frac):
        net = random_network(n, np.random.default_rng(seed))
        lim = stability_limits(net, unit_costs(n))
        C = combination_matrix(net, AlgorithmParams(1.0, frac * lim.max_mu_eta()))
        assert C.is_doubly_stochastic()
        assert np.all(C.matrix >= 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 9), st.integers(0, 10_000), st.floats(0.0, 1.0))
    def test_norm_one(self, n, seed, frac):
        net = random_network(n, np.random.default_rng(seed))
        mu_eta = frac * stability_limits(net, unit_costs(n)).mu_eta_stability
        p = AlgorithmParams(1.0, mu_eta)
        assert combination_norm(net, p) == pytest.approx(1.0, abs=1e-10)
        # the spectral norm from the eigenvalues equals the dense one
        dense = np.linalg.norm(np.eye(n) - mu_eta * net.laplacian, 2)
        assert dense == pytest.approx(1.0, abs=1e-10)


class TestSteps:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 8), st.integers(1, 3), st.integers(0, 10_000), st.floats(0.0, 1.0))
    def test_forms_agree(self, n, m, seed, frac):
        rng = np.random.default_rng(seed)
        net = random_network(n, rng)
        p = AlgorithmParams(0.1, frac * stability_limits(net, unit_costs(n)).max_mu_eta() / 0.1)
        psi = rng.standard_normal((n, m))
        a = combine_neighbor_sum(net, p, psi)
        b = combine_matrix(combination_matrix(net, p), psi)
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_forms_agree_stochastic(self, rng):
        net = random_network(6, rng)
        costs = random_quadratic_costs(6, 2, rng, beta_sq=0.2, sigma_sq=0.5)
        p = AlgorithmParams(0.05, 1.0)
        W = rng.standard_normal((6, 2))
        a = atc_step(net, W, costs, p, np.random.default_rng(1), form="neighbor")
        b = atc_step(net, W, costs, p, np.random.default_rng(1), form="matrix")
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_eta_zero_is_independent_sgd(self, rng):
        net = random_network(4, rng)
        costs = random_quadratic_costs(4, 3, rng, beta_sq=0.1, sigma_sq=0.3)
        p = AlgorithmParams(0.1, 0.0)
        W = rng.standard_normal((4, 3))
        out = atc_step(net, W, costs, p, np.random.default_rng(9))
        g = np.random.default_rng(9)
        expect = np.stack([W[k] - 0.1 * c.stochastic_gradient(W[k], g) for k, c in enumerate(costs)])
        np.testing.assert_array_equal(out, expect)

    def test_fixed_point_unchanged(self, rng):
        net = random_network(5, rng)
        costs = random_quadratic_costs(5, 2, rng)
        p = AlgorithmParams(0.1, 1.0)
        W = fixed_point(net, costs, p).state
        assert np.max(np.abs(deterministic_step(net, W, costs, p) - W)) <= 1e-12
        assert np.max(np.abs(atc_step(net, W, costs, p, rng) - W)) <= 1e-12

    def test_consensus_identical_agents(self, k3, rng):
        H = np.diag([1.0, 2.0])
        wo = np.array([1.0, -1.0])
        costs = [QuadraticCost(H, wo) for _ in range(3)]
        w = np.array([0.3, 0.7])
        W = np.tile(w, (3, 1))
        out = deterministic_step(k3, W, costs, AlgorithmParams(0.1, 2.0))
        np.testing.assert_allclose(out, np.tile(w - 0.1 * H @ (w - wo), (3, 1)), atol=1e-15)

    def test_unknown_form(self, p2):
        with pytest.raises(ValueError):
            deterministic_step(p2, np.zeros((2, 1)), unit_costs(2), AlgorithmParams(0.1, 1.0), form="x")


class TestFixedPoint:
    def test_eta_zero_individual_minimizers(self, rng):
        net = random_network(4, rng)
        costs = random_quadratic_costs(4, 2, rng)
        res = fixed_point(net, costs, AlgorithmParams(0.2, 0.0))
        np.testing.assert_allclose(res.state, np.stack([c.w_o for c in costs]), atol=1e-10)

    def test_consensus_tasks(self, rng):
        net = random_network(5, rng)
        wo = np.array([0.5, -2.0])
        costs = [QuadraticCost(c.H, wo) for c in random_quadratic_costs(5, 2, rng)]
        res = fixed_point(net, costs, AlgorithmParams(0.1, 2.0))
        np.testing.assert_allclose(res.state, np.tile(wo, (5, 1)), atol=1e-10)

    def test_two_agent_direct_solve(self, p2, two_agent_costs):
        mu, eta = 0.1, 0.5
        res = fixed_point(p2, two_agent_costs, AlgorithmParams(mu, eta))
        # w = C((1 - mu) w + mu w_o), solved as a 2x2 system
        C = np.array([[1 - mu * eta, mu * eta], [mu * eta, 1 - mu * eta]])
        expect = np.linalg.solve(np.eye(2) - (1 - mu) * C, mu * C @ np.array([1.0, -1.0]))
        np.testing.assert_allclose(res.state[:, 0], expect, atol=1e-10)

    def test_matches_direct_random(self, rng):
        net = random_network(6, rng)
        costs = random_quadratic_costs(6, 3, rng)
        p = AlgorithmParams(0.1, 1.5)
        res = fixed_point(net, costs, p)
        assert np.max(np.abs(res.state - fixed_point_direct(net, costs, p))) <= 1e-9
        assert res.converged and res.last_ratio < 1

    def test_ratios_below_gamma(self, rng):
        net = random_network(5, rng)
        costs = random_quadratic_costs(5, 2, rng)
        p = AlgorithmParams(0.2, 1.0)
        res = fixed_point(net, costs, p, init=rng.standard_normal((5, 2)))
        gamma = max(max(abs(1 - 0.2 * lo), abs(1 - 0.2 * hi)) for lo, hi in (c.hessian_bounds() for c in costs))
        # only ratios of displacements well above round-off are meaningful
        assert np.all(res.ratios[:50] <= gamma + 1e-9)

    def test_max_iter_report(self, p2, two_agent_costs):
        with pytest.raises(FixedPointError, match="last ratio"):
            fixed_point(p2, two_agent_costs, AlgorithmParams(0.01, 1.0), max_iter=5)
        res = fixed_point(p2, two_agent_costs, AlgorithmParams(0.01, 1.0), max_iter=5, raise_on_failure=False)
        assert not res.converged and res.iterations == 5

    def test_rejects_contraction_violation(self, p2, two_agent_costs):
        with pytest.raises(StabilityError, match="contraction"):
            fixed_point(p2, two_agent_costs, AlgorithmParams(2.0, 0.0))


class TestContraction:
    def test_scalar_exact(self, rng):
        net = build_network(1, [])
        rep = contraction_check(net, unit_costs(1), AlgorithmParams(0.5, 0.0), 20, rng)
        assert rep.gamma == 0.5
        np.testing.assert_allclose(rep.ratios, 0.5, rtol=1e-14)
        assert rep.ok

    def test_boundary(self, rng):
        net = random_network(4, rng)
        costs = [QuadraticCost(np.diag([1.0, 2.0]), [0, 0]) for _ in range(4)]
        rep = contraction_check(net, costs, AlgorithmParams(1.0, 0.2), 100, rng)
        assert rep.gamma == 1.0
        assert rep.max_ratio <= 1.0 + 1e-12 and rep.ok

    def test_random_network(self, rng):
        net = random_network(7, rng)
        costs = random_quadratic_costs(7, 3, rng, lo=0.5, hi=4.0)
        eta = 0.5 * stability_limits(net, costs).max_mu_eta() / 0.3
        rep = contraction_check(net, costs, AlgorithmParams(0.3, eta), 100, rng)
        assert rep.ok and rep.max_ratio <= rep.gamma

    def test_reports_violation(self, rng):
        # a cost whose declared bounds understate its curvature
        class Lying(QuadraticCost):
            def hessian_bounds(self):
                return (1.0, 1.0)

        net = build_network(1, [])
        rep = contraction_check(net, [Lying(np.diag([0.1, 1.0]), [0, 0])], AlgorithmParams(0.1, 0.0), 50, rng)
        assert not rep.ok and rep.violations[0][2] > rep.gamma


class TestRun:
    def test_zero_iterations(self, p2, two_agent_costs):
        tr = run(p2, two_agent_costs, AlgorithmParams(0.1, 0.5), 0, seed=1, init=[[2.0], [3.0]])
        assert tr.n_iter == 0
        np.testing.assert_array_equal(tr.states, [[[2.0], [3.0]]])
        np.testing.assert_array_equal(tr.iterations, [0])

    def test_deterministic(self, rng):
        net = random_network(4, rng)
        costs = random_quadratic_costs(4, 2, rng, beta_sq=0.1, sigma_sq=0.5)
        p = AlgorithmParams(0.05, 1.0)
        a = run(net, costs, p, 300, seed=42)
        b = run(net, costs, p, 300, seed=42)
        np.testing.assert_array_equal(a.states, b.states)
        assert not np.array_equal(a.states, run(net, costs, p, 300, seed=43).states)

    def test_noiseless_reaches_fixed_point(self, rng):
        net = random_network(4, rng)
        costs = random_quadratic_costs(4, 2, rng)
        p = AlgorithmParams(0.2, 1.0)
        tr = run(net, costs, p, 2000, seed=0)
        assert np.max(np.abs(tr.final - fixed_point(net, costs, p).state)) <= 1e-10

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts(self, p2):
        # stability limits are respected but the gradient oracle blows up
        class Exploding(QuadraticCost):
            kind = "exploding"

            def noisy_gradient(self, w, xi):
                return np.full_like(w, np.inf)

        with pytest.raises(DivergenceError, match="iteration 1"):
            run(p2, [Exploding([[1.0]], [0.0])] * 2, AlgorithmParams(0.1, 0.5), 10, seed=5)

    def test_rejects_unstable(self, k3):
        with pytest.raises(StabilityError):
            run(k3, unit_costs(3), AlgorithmParams(0.1, 6.0), 10, seed=0)

    def test_thinning(self, p2, two_agent_costs):
        assert thinning_stride(9999) == 1
        assert thinning_stride(25_000) == 3
        tr = run(p2, two_agent_costs, AlgorithmParams(0.01, 1.0), 25_000, seed=0)
        assert tr.iterations[-1] == 25_000
        assert len(tr.iterations) == len(tr.states) == len(tr.smoothness)
        assert np.all(np.diff(tr.iterations[:-1]) == 3)

    def test_recorded_scalars(self, p2, two_agent_costs):
        tr = run(p2, two_agent_costs, AlgorithmParams(0.1, 1.0), 20, seed=3, record=("smoothness", "cost"))
        j = 7
        W = tr.states[j]
        assert tr.smoothness[j] == pytest.approx(smoothness(p2, W))
        expect = 0.5 * (W[0, 0] - 1) ** 2 + 0.5 * (W[1, 0] + 1) ** 2 + 0.5 * 1.0 * (W[0, 0] - W[1, 0]) ** 2
        assert tr.cost[j] == pytest.approx(expect)

    def test_csv(self, tmp_path, p2, two_agent_costs):
        tr = run(p2, two_agent_costs, AlgorithmParams(0.1, 1.0), 5, seed=3, record=("smoothness", "cost"))
        ref = np.array([[1.0], [-1.0]])
        tr.to_csv(tmp_path / "t.csv", ref)
        rows = (tmp_path / "t.csv").read_text().splitlines()
        assert rows[0] == "iteration,sqerr_0,sqerr_1,smoothness,cost"
        assert len(rows) == 7
        vals = [float(x) for x in rows[-1].split(",")]
        assert vals[1] == (tr.final[0, 0] - 1.0) ** 2

    def test_batch_deterministic_and_independent(self, rng):
        net = random_network(3, rng)
        costs = random_quadratic_costs(3, 2, rng, sigma_sq=1.0)
        p = AlgorithmParams(0.05, 1.0)
        a = run_batch(net, costs, p, 100, seed=8, n_runs=4)
        b = run_batch(net, costs, p, 100, seed=8, n_runs=4)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (4, 3, 2)
        assert not np.allclose(a[0], a[1])

    def test_eta_zero_noiseless_geometric_rate(self, rng):
        net = random_network(3, rng)
        costs = random_quadratic_costs(3, 2, rng)
        mu = 0.2
        W0 = rng.standard_normal((3, 2))
        tr = run(net, costs, AlgorithmParams(mu, 0.0), 30, seed=0, init=W0)
        wo = np.stack([c.w_o for c in costs])
        for k, c in enumerate(costs):
            lo, hi = c.hessian_bounds()
            g = max(abs(1 - mu * lo), abs(1 - mu * hi))
            err = np.linalg.norm(tr.states[:, k] - wo[k], axis=1)
            assert np.all(err <= g ** tr.iterations * err[0] + 1e-12)
