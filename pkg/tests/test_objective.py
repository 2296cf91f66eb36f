import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperrec.autodiff import Tensor
from hyperrec.data import InteractionGraph
from hyperrec.objective import (
    LossWeights,
    SamplingError,
    infonce,
    margin_loss,
    sample_negatives,
    score,
    total_loss,
)


def cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def naive_infonce(local, glob, tau, include_positive=False):
    n = len(local)
    total = 0.0
    for u in range(n):
        pos = math.exp(cos(local[u], glob[u]) / tau)
        den = sum(
            math.exp(cos(local[u], glob[v]) / tau) for v in range(n) if include_positive or v != u
        )
        total += -math.log(pos / den)
    return total


class TestScore:
    def test_cases(self):
        assert score(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0
        assert score(Tensor([0.6, 0.8]), Tensor([0.6, 0.8])).item() == pytest.approx(1.0)
        assert score(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).item() == 11.0

    def test_rowwise(self, rng):
        a, b = rng.standard_normal((2, 5, 3))
        np.testing.assert_allclose(score(Tensor(a), Tensor(b)).data, [x @ y for x, y in zip(a, b)])


class TestMarginLoss:
    def test_satisfied(self):
        assert margin_loss(Tensor([2.0]), Tensor([0.0])).item() == 0.0

    def test_tie(self):
        assert margin_loss(Tensor([0.5]), Tensor([0.5])).item() == 1.0

    def test_pair_sum(self):
        pairs = [(2.0, 0.0), (0.0, 0.5)]
        oracle = sum(max(0.0, 1 - p + n) for p, n in pairs)
        got = margin_loss(Tensor([p for p, _ in pairs]), Tensor([n for _, n in pairs])).item()
        assert got == oracle == 1.5

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=10))
    def test_non_negative_and_zero_iff_margin(self, pairs):
        pos = Tensor([p for p, _ in pairs])
        neg = Tensor([n for _, n in pairs])
        L = margin_loss(pos, neg).item()
        assert L >= 0
        assert (L == 0) == all(p >= n + 1 for p, n in pairs)


class TestInfoNCE:
    def test_single_negative_closed_form(self):
        local = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert infonce(Tensor(local), Tensor(local), tau=1.0).item() == pytest.approx(-2.0, abs=1e-12)

    def test_per_row_minus_one(self):
        local = np.array([[1.0, 0.0], [1.0, 0.0]])
        glob = np.array([[1.0, 0.0], [0.0, 1.0]])
        # row 0: s_00 = 1, s_01 = 0 -> -log(e / 1) = -1
        per_row0 = -math.log(math.exp(1) / math.exp(0))
        assert per_row0 == -1
        assert infonce(Tensor(local), Tensor(glob), 1.0).item() == pytest.approx(naive_infonce(local, glob, 1.0))

    def test_double_loop_oracle(self, rng):
        local, glob = rng.standard_normal((2, 4, 3))
        got = infonce(Tensor(local), Tensor(glob), tau=0.5).item()
        assert got == pytest.approx(naive_infonce(local, glob, 0.5), abs=1e-12)
        got = infonce(Tensor(local), Tensor(glob), tau=0.5, include_positive=True).item()
        assert got == pytest.approx(naive_infonce(local, glob, 0.5, True), abs=1e-12)
        assert got > 0

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            infonce(Tensor([[1.0, 0.0]]), Tensor([[1.0, 0.0]]), 0.5)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 100), st.integers(0, 4), st.booleans())
    def test_row_scale_invariance(self, seed, c, row, which):
        local, glob = np.random.default_rng(seed).standard_normal((2, 5, 3))
        base = infonce(Tensor(local), Tensor(glob), 0.5).item()
        target = local if which else glob
        target[row] *= c
        assert infonce(Tensor(local), Tensor(glob), 0.5).item() == pytest.approx(base, abs=1e-10)

    def test_monotone_in_positive_similarity(self, rng):
        local, glob = rng.standard_normal((2, 4, 3))
        # row 0 moves towards its positive, negatives for row 0 unchanged
        before = infonce(Tensor(local), Tensor(glob), 0.5).item()
        moved = local.copy()
        target = glob[0] / np.linalg.norm(glob[0]) * np.linalg.norm(local[0])
        moved[0] = 0.8 * local[0] + 0.2 * target
        assert cos(moved[0], glob[0]) > cos(local[0], glob[0])
        # only row 0's own term depends on local[0]
        row_before = naive_infonce(local, glob, 0.5) - naive_infonce(moved, glob, 0.5)
        after = infonce(Tensor(moved), Tensor(glob), 0.5).item()
        assert before - after == pytest.approx(row_before, abs=1e-10)
        # isolate the monotone piece: positive up, negatives for row 0 frozen
        pos_b, pos_a = cos(local[0], glob[0]), cos(moved[0], glob[0])
        negs = [cos(local[0], glob[j]) for j in range(1, 4)]
        term = lambda p: -p / 0.5 + math.log(sum(math.exp(s / 0.5) for s in negs))
        assert term(pos_a) < term(pos_b)


class TestTotalLoss:
    def test_reduction(self):
        L = total_loss(Tensor(3.0), Tensor(5.0), Tensor(7.0), [Tensor([1.0])], LossWeights(0.0, 0.0))
        assert L.item() == 3.0

    def test_arithmetic(self):
        L = total_loss(Tensor(1.0), Tensor(2.0), Tensor(2.0), [Tensor([1.0])], LossWeights(0.5, 0.0))
        assert L.item() == 3.0

    def test_sum_of_squares(self, rng):
        params = {"a": Tensor(rng.standard_normal((2, 3))), "b": Tensor(rng.standard_normal(4))}
        sq = sum(x * x for p in params.values() for x in p.data.ravel())
        L = total_loss(Tensor(0.25), Tensor(0.0), Tensor(0.0), params, LossWeights(0.0, 1e-2))
        assert L.item() == pytest.approx(0.25 + 1e-2 * sq, abs=1e-14)

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            LossWeights(lambda1=-1.0)
        with pytest.raises(ValueError):
            LossWeights(tau=0.0)


class TestSampling:
    def test_forced_complement(self, rng):
        g = InteractionGraph.from_edges([(0, 0)], 1, 2)
        assert {sample_negatives(g, 0, rng) for _ in range(50)} == {1}

    def test_degenerate_user(self, rng):
        g = InteractionGraph.from_edges([(0, 0), (0, 1)], 1, 2)
        with pytest.raises(SamplingError):
            sample_negatives(g, 0, rng)

    def test_fallback_after_rejections(self, rng):
        # 499 of 500 items seen: rejection almost always exhausts its cap
        g = InteractionGraph.from_edges([(0, v) for v in range(500) if v != 123], 1, 500)
        assert all(sample_negatives(g, 0, rng) == 123 for _ in range(5))

    def test_uniform_frequency(self):
        rng = np.random.default_rng(7)
        n_items, seen = 10, {0, 3, 4}
        g = InteractionGraph.from_edges([(0, v) for v in seen], 1, n_items)
        draws = 100_000
        counts = np.bincount([sample_negatives(g, 0, rng) for _ in range(draws)], minlength=n_items)
        assert all(counts[v] == 0 for v in seen)
        free = [v for v in range(n_items) if v not in seen]
        p = 1 / len(free)
        sigma = math.sqrt(draws * p * (1 - p))
        for v in free:
            assert abs(counts[v] - draws * p) < 3 * sigma
