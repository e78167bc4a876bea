import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multitask_diffusion.graph import (
    DisconnectedGraphError,
    GraphError,
    build_network,
    gft,
    igft,
    is_consensus,
    knn_gaussian_network,
    network_from_adjacency,
    read_coordinates,
    read_edge_list,
    smoothness,
    smoothness_spectral,
    spectral_decompose,
    write_coordinates,
    write_edge_list,
)

from conftest import random_connected_adjacency, random_network


def knn_oracle(points, k):
    """Brute-force Gaussian k-NN weights, written independently of the library."""
    n = len(points)
    d2 = [[sum((points[i][c] - points[j][c]) ** 2 for c in range(2)) for j in range(n)] for i in range(n)]
    nbrs = []
    for i in range(n):
        cand = sorted((d2[i][j], j) for j in range(n) if j != i)
        nbrs.append({j for _, j in cand[:k]})
    S = [sum(np.exp(-d2[i][j]) for j in nbrs[i]) for i in range(n)]
    P = np.zeros((n, n))
    for i in range(n):
        for j in nbrs[i]:
            P[i, j] = np.exp(-d2[i][j]) / np.sqrt(S[i] * S[j])
    return (P + P.T) / 2


class TestBuildNetwork:
    def test_two_node_path(self, p2):
        np.testing.assert_array_equal(p2.laplacian, [[1, -1], [-1, 1]])

    def test_triangle(self, k3):
        np.testing.assert_array_equal(k3.laplacian, [[2, -1, -1], [-1, 2, -1], [-1, -1, 2]])

    def test_disconnected_reports_components(self):
        with pytest.raises(DisconnectedGraphError) as exc:
            build_network(3, [(0, 1, 1.0)])
        assert exc.value.components == [[0, 1], [2]]

    @pytest.mark.parametrize("edges", [
        [(0, 1, 1.0), (0, 1, 2.0)],
        [(0, 1, 1.0), (1, 0, 1.0)],
    ])
    def test_duplicate_edge(self, edges):
        with pytest.raises(GraphError, match="duplicate"):
            build_network(2, edges)

    @pytest.mark.parametrize("w", [0.0, -1.0])
    def test_nonpositive_weight(self, w):
        with pytest.raises(GraphError):
            build_network(2, [(0, 1, w)])

    def test_self_loop(self):
        with pytest.raises(GraphError):
            build_network(2, [(0, 0, 1.0), (0, 1, 1.0)])

    def test_index_out_of_range(self):
        with pytest.raises(GraphError):
            build_network(2, [(0, 2, 1.0)])

    def test_arrays_are_read_only(self, k3):
        with pytest.raises(ValueError):
            k3.adjacency[0, 1] = 5.0

    def test_adjacency_roundtrip(self, rng):
        A = random_connected_adjacency(6, rng)
        net = network_from_adjacency(A)
        np.testing.assert_array_equal(net.adjacency, A)
        np.testing.assert_allclose(net.degree, A.sum(axis=1))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 9), st.integers(0, 10_000))
    def test_laplacian_rows_and_columns_sum_to_zero(self, n, seed):
        net = random_network(n, np.random.default_rng(seed))
        assert np.all(np.abs(net.laplacian.sum(axis=1)) <= 1e-12)
        assert np.all(np.abs(net.laplacian.sum(axis=0)) <= 1e-12)
        assert np.array_equal(net.adjacency, net.adjacency.T)
        assert np.all(np.diag(net.adjacency) == 0)


class TestKnn:
    def test_zero_distance_pair(self):
        net = knn_gaussian_network([[0.0, 0.0], [0.0, 0.0]], 1)
        assert net.adjacency[0, 1] == pytest.approx(1.0, abs=1e-15)

    def test_collinear_ties_go_to_lowest_index(self):
        pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]
        net = knn_gaussian_network(pts, 1)
        # node 1 is equidistant from 0 and 2 and picks 0; nodes 0 and 2 both pick 1
        e1 = np.exp(-1.0)
        p01 = e1 / np.sqrt(e1 * e1)
        p21 = e1 / np.sqrt(e1 * e1)
        expected = np.array([[0, p01 / 2 + p01 / 2, 0], [p01, 0, p21 / 2], [0, p21 / 2, 0]])
        expected[1, 0] = expected[0, 1]
        np.testing.assert_allclose(net.adjacency, expected, atol=1e-15)
        np.testing.assert_allclose(net.adjacency, knn_oracle(pts, 1), atol=1e-15)

    def test_unit_square(self):
        pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
        net = knn_gaussian_network(pts, 2)
        np.testing.assert_allclose(net.adjacency, knn_oracle(pts, 2), atol=1e-14)
        assert np.array_equal(net.adjacency, net.adjacency.T)
        assert net.spectral.algebraic_connectivity > 1e-10

    def test_random_points_match_oracle(self, rng):
        pts = rng.uniform(0, 2, (12, 2))
        net = knn_gaussian_network(pts, 3)
        np.testing.assert_allclose(net.adjacency, knn_oracle(pts.tolist(), 3), atol=1e-14)

    def test_distance_scale(self, rng):
        pts = rng.uniform(0, 2, (6, 2))
        a = knn_gaussian_network(pts, 3, distance_scale=0.5)
        b = knn_gaussian_network(pts / 0.5, 3)
        np.testing.assert_allclose(a.adjacency, b.adjacency, atol=1e-15)

    def test_disconnected_advises_more_neighbors(self):
        pts = [[0, 0], [0.1, 0], [10, 0], [10.1, 0]]
        with pytest.raises(DisconnectedGraphError, match="k_neighbors"):
            knn_gaussian_network(pts, 1)

    @pytest.mark.parametrize("k", [0, 3])
    def test_bad_k(self, k):
        with pytest.raises(GraphError):
            knn_gaussian_network([[0, 0], [1, 0], [2, 0]], k)


class TestSpectral:
    def test_k3_spectrum(self, k3):
        np.testing.assert_allclose(spectral_decompose(k3).eigenvalues, [0, 3, 3], atol=1e-12)

    def test_p2(self, p2):
        b = spectral_decompose(p2)
        np.testing.assert_allclose(b.eigenvalues, [0, 2], atol=1e-12)
        np.testing.assert_array_equal(b.eigenvectors[:, 0], [1 / np.sqrt(2)] * 2)
        assert b.eigenvalues[0] == 0.0

    def test_random_six_node_reconstruction(self, rng):
        net = random_network(6, rng)
        b = spectral_decompose(net)
        assert np.max(np.abs(b.reconstruct() - net.laplacian)) <= 1e-10

    def test_repeated_eigenvalue_subspace(self, k3):
        # only the projector onto the repeated eigenspace is unique
        V = spectral_decompose(k3).eigenvectors[:, 1:]
        np.testing.assert_allclose(V @ V.T, np.eye(3) - np.ones((3, 3)) / 3, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 9), st.integers(0, 10_000))
    def test_basis_invariants(self, n, seed):
        net = random_network(n, np.random.default_rng(seed))
        b = spectral_decompose(net)
        assert b.eigenvalues[0] == 0.0
        assert b.eigenvalues[1] > 1e-10
        assert np.all(np.diff(b.eigenvalues) >= 0)
        assert np.max(np.abs(b.eigenvectors.T @ b.eigenvectors - np.eye(n))) <= 1e-10
        assert np.max(np.abs(b.reconstruct() - net.laplacian)) <= 1e-10
        np.testing.assert_array_equal(b.eigenvectors[:, 0], np.full(n, 1 / np.sqrt(n)))
        for m in range(1, n):
            col = b.eigenvectors[:, m]
            first = col[np.abs(col) > 1e-12][0]
            assert first > 0

    def test_cached_on_network(self, k3):
        assert k3.spectral is k3.spectral


class TestTransforms:
    def test_consensus_is_dc(self, k3):
        c = np.array([1.5, -2.0])
        out = gft(k3.spectral, np.tile(c, (3, 1)))
        np.testing.assert_allclose(out[0], np.sqrt(3) * c, atol=1e-12)
        np.testing.assert_allclose(out[1:], 0, atol=1e-12)

    def test_p2_alternating(self, p2):
        out = gft(p2.spectral, [1.0, -1.0]).ravel()
        assert out[0] == pytest.approx(0, abs=1e-15)
        assert abs(out[1]) == pytest.approx(np.sqrt(2), abs=1e-15)

    def test_dimension_mismatch(self, k3):
        with pytest.raises(ValueError):
            gft(k3.spectral, np.zeros(4))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 8), st.integers(1, 3), st.integers(0, 10_000))
    def test_roundtrip(self, n, m, seed):
        rng = np.random.default_rng(seed)
        net = random_network(n, rng)
        W = rng.standard_normal((n, m))
        assert np.max(np.abs(igft(net.spectral, gft(net.spectral, W)) - W)) <= 1e-12
        # flat stacked input is accepted too
        np.testing.assert_allclose(gft(net.spectral, W.ravel()), gft(net.spectral, W))


class TestSmoothness:
    def test_consensus_zero(self, k3):
        assert smoothness(k3, np.ones((3, 2))) == 0.0

    def test_p2_unit(self, p2):
        assert smoothness(p2, [1.0, 0.0]) == 1.0

    def test_matches_kronecker_form(self, rng):
        net = random_network(6, rng)
        W = rng.standard_normal((6, 3))
        w = W.ravel()
        assert smoothness(net, W) == pytest.approx(w @ np.kron(net.laplacian, np.eye(3)) @ w, rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 8), st.integers(1, 3), st.integers(0, 10_000))
    def test_edge_and_spectral_forms_agree(self, n, m, seed):
        rng = np.random.default_rng(seed)
        net = random_network(n, rng)
        W = rng.standard_normal((n, m))
        s1 = smoothness(net, W)
        s2 = smoothness_spectral(net.spectral, W)
        assert s1 >= 0
        assert abs(s1 - s2) <= 1e-10 * max(1.0, s1)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 10_000))
    def test_zero_iff_consensus(self, n, seed):
        rng = np.random.default_rng(seed)
        net = random_network(n, rng)
        c = rng.standard_normal(2)
        assert smoothness(net, np.tile(c, (n, 1))) <= 1e-24
        W = np.tile(c, (n, 1))
        W[rng.integers(n)] += 0.1
        assert not is_consensus(W)
        assert smoothness(net, W) > 0


class TestFiles:
    def test_edge_list_roundtrip(self, tmp_path, rng):
        net = random_network(5, rng)
        p = tmp_path / "g.txt"
        write_edge_list(net, p)
        back = read_edge_list(p)
        np.testing.assert_array_equal(back.adjacency, net.adjacency)

    def test_edge_list_comments(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("# header\n0 1 1.0  # trailing\n\n1 2 0.5\n")
        net = read_edge_list(p)
        assert net.n_agents == 3
        assert net.adjacency[1, 2] == 0.5

    def test_edge_list_bad_line(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("0 1\n")
        with pytest.raises(GraphError, match=r"g\.txt:1:"):
            read_edge_list(p)

    def test_coordinates_roundtrip(self, tmp_path, rng):
        pts = rng.uniform(size=(7, 2))
        p = tmp_path / "c.csv"
        write_coordinates(pts, p)
        np.testing.assert_array_equal(read_coordinates(p), pts)
