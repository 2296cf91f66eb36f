import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperrec.autodiff import Tensor
from hyperrec.hypergraph import (
    Hypergraph,
    build_hypergraph,
    convolve_with,
    dependency_operator,
    dependency_row,
    hyper_convolve,
    normalize,
    pairwise_dependencies,
    propagation_operator,
)


def cosine(a, b):
    na, nb = math.sqrt(sum(x * x for x in a)), math.sqrt(sum(x * x for x in b))
    if na <= 1e-12 or nb <= 1e-12:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def brute_topk(embs, K):
    """Per anchor: sort every other node by (-score, index), keep K with positive score."""
    n = len(embs)
    rows = []
    for u in range(n):
        cands = sorted(((-cosine(embs[u], embs[v]), v) for v in range(n) if v != u))
        rows.append([(v, -s) for s, v in cands[:K] if -s > 0])
    return rows


def full_scores(embs):
    return np.vstack([block for _, block in pairwise_dependencies(embs)])


class TestPairwise:
    def test_identical_rows(self):
        np.testing.assert_allclose(full_scores(np.ones((4, 3))), 1.0, atol=1e-15)

    def test_orthogonal(self):
        s = full_scores(np.eye(3))
        np.testing.assert_array_equal(s - np.diag(np.diag(s)), 0.0)

    def test_dense_oracle_and_chunks(self, rng):
        e = rng.standard_normal((3, 5))
        oracle = np.array([[cosine(a, b) for b in e] for a in e])
        np.testing.assert_allclose(full_scores(e), oracle, atol=1e-12)
        chunked = np.vstack([b for _, b in pairwise_dependencies(e, chunk=2)])
        np.testing.assert_allclose(chunked, full_scores(e), atol=1e-15)
        np.testing.assert_allclose(dependency_row(e, 1), oracle[1], atol=1e-12)


class TestBuild:
    def test_saturation(self, rng):
        e = rng.standard_normal((3, 4))
        e[1] = e[0] + 0.1 * e[1]  # make sure scores are not all negative
        hg = build_hypergraph(e, K=2)
        for u, row in enumerate(hg.rows()):
            for v, w in row:
                assert v != u and w == pytest.approx(cosine(e[u], e[v]), abs=1e-12)
            assert {v for v, _ in row} == {v for v in range(3) if v != u and cosine(e[u], e[v]) > 0}

    def test_single_node(self):
        hg = build_hypergraph(np.ones((1, 3)), K=8)
        assert hg.n == 1 and hg.H.nnz == 0

    def test_empty(self):
        assert build_hypergraph(np.zeros((0, 3)), K=2).H.shape == (0, 0)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            build_hypergraph(np.ones((2, 2)), K=0)

    def test_brute_force_n20(self, rng):
        e = rng.standard_normal((20, 6))
        got = build_hypergraph(e, K=3).rows()
        want = brute_topk(e, 3)
        for g, w in zip(got, want):
            assert [v for v, _ in g] == sorted(v for v, _ in w)
            np.testing.assert_allclose(
                [s for _, s in sorted(g)], [s for _, s in sorted(w)], atol=1e-12
            )

    def test_ties_prefer_lower_index(self):
        e = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        rows = build_hypergraph(e, K=2).rows()
        assert [v for v, _ in rows[0]] == [1, 2]
        assert [v for v, _ in rows[3]] == [0, 1]

    def test_negative_scores_excluded(self):
        e = np.array([[1.0, 0.0], [-1.0, 0.1], [0.0, 1.0]])
        rows = build_hypergraph(e, K=2).rows()
        assert rows[0] == []  # one negative, one exactly orthogonal

    def test_include_self(self, rng):
        hg = build_hypergraph(rng.standard_normal((5, 3)), K=2, include_self=True)
        np.testing.assert_array_equal(hg.H.diagonal(), 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 15), st.integers(1, 6), st.integers(0, 10_000), st.floats(0.01, 100))
    def test_row_sparsity_and_scale_invariance(self, n, K, seed, c):
        e = np.random.default_rng(seed).standard_normal((n, 4))
        a, b = build_hypergraph(e, K), build_hypergraph(c * e, K)
        assert np.all(np.diff(a.H.indptr) <= K)
        ra, rb = a.rows(), b.rows()
        for u in range(n):
            assert [v for v, _ in ra[u]] == [v for v, _ in rb[u]]
            np.testing.assert_allclose([w for _, w in ra[u]], [w for _, w in rb[u]], atol=1e-12)
            for v, w in ra[u]:
                assert abs(w - cosine(e[u], e[v])) < 1e-12

    def test_deterministic(self, rng):
        e = rng.standard_normal((30, 5))
        assert build_hypergraph(e, 4).to_tsv() == build_hypergraph(e.copy(), 4).to_tsv()


class TestNormalize:
    def test_single_unit_edge(self):
        H = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
        np.testing.assert_array_equal(normalize(Hypergraph.from_matrix(H)).toarray(), H.toarray())

    def test_uniform_weights_k2(self):
        w = 0.6
        # hyperedge 0 holds nodes {0, 1}; hyperedge 1 holds node 1 only
        H = np.array([[w, w], [0.0, w]])
        got = normalize(Hypergraph.from_matrix(H)).toarray()
        colsum = H.sum(axis=0)
        expected = np.array(
            [
                [w / math.sqrt(colsum[0] * 2 * w), w / math.sqrt(colsum[1] * 2 * w)],
                [0.0, w / math.sqrt(colsum[1] * w)],
            ]
        )
        np.testing.assert_allclose(got, expected, atol=1e-15)

    def test_empty(self):
        assert normalize(Hypergraph.from_matrix(sp.csr_matrix((0, 0)))).shape == (0, 0)

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            normalize(Hypergraph.from_matrix(np.array([[0.0, -0.5], [0.0, 0.0]])))

    def test_operator_is_psd(self, rng):
        for _ in range(5):
            op = propagation_operator(build_hypergraph(rng.standard_normal((10, 3)), 3)).toarray()
            np.testing.assert_allclose(op, op.T, atol=1e-15)
            assert np.linalg.eigvalsh(op).min() >= -1e-9

    @pytest.mark.parametrize("include_self", [False, True])
    def test_dense_path_matches_sparse(self, rng, include_self):
        e = rng.standard_normal((25, 4))
        sparse = propagation_operator(build_hypergraph(e, 5, include_self)).toarray()
        np.testing.assert_allclose(dependency_operator(e, 5, include_self), sparse, atol=1e-14)


class TestConvolve:
    def test_identity(self, rng):
        Z = rng.standard_normal((4, 3))
        out = hyper_convolve(np.eye(4), Tensor(Z), Tensor(np.eye(3))).data
        np.testing.assert_allclose(out, np.where(Z > 0, Z, 0.2 * Z), atol=1e-15)

    def test_zero_input(self, rng):
        out = hyper_convolve(np.eye(4), Tensor(np.zeros((4, 3))), Tensor(rng.standard_normal((3, 3))))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_dense_oracle_4_nodes(self, rng):
        e = rng.standard_normal((4, 3))
        Ht = normalize(build_hypergraph(e, 2)).toarray()
        Z, W = rng.standard_normal((4, 3)), rng.standard_normal((3, 3))
        M = np.zeros((4, 3))
        HHt = [[sum(Ht[i, k] * Ht[j, k] for k in range(4)) for j in range(4)] for i in range(4)]
        for i in range(4):
            for c in range(3):
                M[i, c] = sum(HHt[i][j] * Z[j, k] * W[k, c] for j in range(4) for k in range(3))
        oracle = np.where(M > 0, M, 0.2 * M)
        np.testing.assert_allclose(hyper_convolve(sp.csr_matrix(Ht), Tensor(Z), Tensor(W)).data, oracle, atol=1e-12)
        op = dependency_operator(e, 2)
        np.testing.assert_allclose(convolve_with(op, Tensor(Z), Tensor(W)).data, oracle, atol=1e-12)
