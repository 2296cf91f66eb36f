import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hyperrec import autodiff as ad
from hyperrec.autodiff import ShapeError, Tensor


def naive_matmul(a, b):
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestCoreOps:
    def test_identity_matmul(self, rng):
        A = rng.standard_normal((2, 3))
        np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(2)), Tensor(A)).data, A)

    def test_add_zero(self, rng):
        A = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(ad.add(Tensor(A), Tensor(np.zeros_like(A))).data, A)

    def test_matmul_triple_loop(self, rng):
        a, b = rng.standard_normal((2, 3)), rng.standard_normal((3, 2))
        np.testing.assert_allclose(ad.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), atol=1e-12)

    def test_matmul_8x8_relative(self, rng):
        a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
        ref = naive_matmul(a, b)
        got = ad.matmul(Tensor(a), Tensor(b)).data
        assert np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1e-300)) < 1e-12

    def test_shape_errors_name_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ShapeError):
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
        with pytest.raises(ShapeError):
            ad.concat_rows([Tensor(np.ones((1, 2))), Tensor(np.ones((1, 3)))])

    def test_concat_sum_mean_transpose(self):
        a = Tensor([[1.0, 2.0]])
        b = Tensor([[3.0, 4.0], [5.0, 6.0]])
        c = ad.concat_rows([a, b])
        np.testing.assert_array_equal(c.data, [[1, 2], [3, 4], [5, 6]])
        np.testing.assert_array_equal(ad.sum_rows(c).data, [[9, 12]])
        np.testing.assert_array_equal(ad.mean_rows(c).data, [[3, 4]])
        np.testing.assert_array_equal(ad.transpose(b).data, [[3, 5], [4, 6]])

    def test_fan_out_accumulates(self):
        x = Tensor([[3.0]], requires_grad=True)
        y = ad.total(ad.add(ad.hadamard(x, x), x))
        y.backward()
        assert y.grad.item() == 1.0
        assert x.grad.item() == pytest.approx(7.0)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ad.softmax_row(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-15)

    def test_singleton(self):
        assert ad.softmax_row(Tensor([[42.0]])).data[0, 0] == 1.0

    def test_large_logits(self):
        x = np.array([1000.0, 0.0])
        oracle = np.exp(x - x.max()) / np.exp(x - x.max()).sum()
        got = ad.softmax_row(Tensor([x])).data[0]
        assert np.all(np.isfinite(got))
        np.testing.assert_allclose(got, oracle, atol=1e-15)
        assert got[0] == pytest.approx(1.0) and got[1] < 1e-300

    @settings(max_examples=80, deadline=None)
    @given(
        arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
        st.floats(-100, 100),
    )
    def test_sums_to_one_and_shift_invariant(self, x, c):
        p = ad.softmax_row(Tensor([x])).data
        assert abs(p.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(ad.softmax_row(Tensor([x + c])).data, p, atol=1e-12)

    def test_mask_zeroes_entries(self):
        p = ad.softmax(Tensor([[1.0, 2.0, 3.0]]), mask=np.array([[True, False, True]])).data
        assert p[0, 1] == 0.0
        np.testing.assert_allclose(p[0, [0, 2]], np.exp([1, 3]) / np.exp([1, 3]).sum())


class TestLeakyRelu:
    def test_positive(self):
        assert ad.leaky_relu(Tensor([[2.0]]), 0.2).item() == 2.0

    def test_negative(self):
        assert ad.leaky_relu(Tensor([[-1.0]]), 0.2).item() == pytest.approx(-0.2)

    def test_gradient_at_minus_one(self):
        x = Tensor([[-1.0]], requires_grad=True)
        ad.total(ad.leaky_relu(x, 0.2)).backward()
        h = 1e-6
        fd = ((-1.0 + h) * 0.2 - (-1.0 - h) * 0.2) / (2 * h)
        assert x.grad.item() == pytest.approx(fd, rel=1e-9)
        assert x.grad.item() == pytest.approx(0.2)

    def test_slope_must_be_in_unit_interval(self):
        with pytest.raises(ValueError):
            ad.leaky_relu(Tensor([[1.0]]), 1.5)


class TestCosine:
    def test_self(self):
        a = Tensor([[0.3, -2.0, 5.0]])
        assert ad.cosine_similarity(a, a).data[0] == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        assert ad.cosine_similarity(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]])).data[0] == 0.0

    def test_hand_value(self):
        got = ad.cosine_similarity(Tensor([[1.0, 2.0]]), Tensor([[2.0, 1.0]])).data[0]
        assert abs(got - 4.0 / (math.sqrt(5) * math.sqrt(5))) < 1e-15
        assert got == pytest.approx(0.8)

    def test_zero_norm_gives_zero(self):
        assert ad.cosine_similarity(Tensor([[0.0, 0.0]]), Tensor([[1.0, 2.0]])).data[0] == 0.0


class TestLogSumExp:
    def test_two_zeros(self):
        assert ad.logsumexp_row(Tensor([[0.0, 0.0]])).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_singleton(self):
        assert ad.logsumexp_row(Tensor([[-3.5]])).item() == -3.5

    def test_no_overflow(self):
        x = np.array([1000.0, 1000.0])
        m = x.max()
        oracle = m + math.log(np.exp(x - m).sum())
        got = ad.logsumexp_row(Tensor([x])).item()
        assert got == pytest.approx(oracle, abs=1e-12)
        assert got == pytest.approx(1000 + math.log(2), abs=1e-12)


class TestGradientCheck:
    def test_square(self):
        x = Tensor(np.array([[3.0]]))
        err = ad.gradient_check(lambda t: ad.total(ad.hadamard(t, t)), x)
        assert x.grad.item() == pytest.approx(6.0)
        assert err < 1e-6

    def test_softmax_sum_is_constant(self, rng):
        x = Tensor(rng.standard_normal((1, 5)))
        ad.gradient_check(lambda t: ad.total(ad.softmax_row(t)), x)
        np.testing.assert_allclose(x.grad, 0.0, atol=1e-15)

    def test_non_finite_reports(self):
        with np.errstate(invalid="ignore"), pytest.raises(ad.GradientCheckError):
            ad.gradient_check(lambda t: ad.total(ad.log(t)), Tensor([[-1.0]]))


def _op_cases(rng):
    """(name, f, inputs) with random small shapes; f returns a scalar tensor.

    Projection weights are bound as default arguments so each f is a fixed function.
    """
    r = lambda *s: rng.standard_normal(s)
    n, m, k = (int(x) for x in rng.integers(1, 5, size=3))

    def weigh(t, w):
        return ad.total(ad.hadamard(t, w))

    idx = rng.integers(0, n, size=k + 2)
    seg = rng.integers(0, 3, size=n)
    mask = rng.random((n, m + 1)) < 0.7
    mask[:, 0] = True
    sp_m = ad.to_sparse(rng.standard_normal((k, n)))
    return [
        ("matmul", lambda a, b, w=r(n, k): weigh(ad.matmul(a, b), w), [r(n, m), r(m, k)]),
        ("batched_matmul", lambda a, b, w=r(2, n, k): weigh(ad.matmul(a, b), w), [r(2, n, m), r(m, k)]),
        ("add_broadcast", lambda a, b, w=r(n, m): weigh(ad.add(a, b), w), [r(n, m), r(1, m)]),
        ("sub", lambda a, b, w=r(n, m): weigh(ad.sub(a, b), w), [r(n, m), r(n, m)]),
        ("hadamard", lambda a, b, w=r(n, m): weigh(ad.hadamard(a, b), w), [r(n, m), r(n, m)]),
        ("scale", lambda a, w=r(n, m): weigh(ad.scale(a, -1.7), w), [r(n, m)]),
        ("transpose", lambda a, w=r(m, n): weigh(ad.transpose(a), w), [r(n, m)]),
        ("concat_rows", lambda a, b, w=r(n + 1, m): weigh(ad.concat_rows([a, b]), w), [r(n, m), r(1, m)]),
        ("sum_rows", lambda a, w=r(1, m): weigh(ad.sum_rows(a), w), [r(n, m)]),
        ("mean_rows", lambda a, w=r(1, m): weigh(ad.mean_rows(a), w), [r(n, m)]),
        ("gather_rows", lambda a, w=r(len(idx), m): weigh(ad.gather_rows(a, idx), w), [r(n, m)]),
        ("segment_sum", lambda a, w=r(3, m): weigh(ad.segment_sum(a, seg, 3), w), [r(n, m)]),
        ("einsum", lambda a, b, w=r(n, k): weigh(ad.einsum("ij,jk->ik", a, b), w), [r(n, m), r(m, k)]),
        ("exp", lambda a, w=r(n, m): weigh(ad.exp(a), w), [r(n, m)]),
        ("log", lambda a, w=r(n, m): weigh(ad.log(a), w), [rng.uniform(0.5, 2.0, (n, m))]),
        ("tanh", lambda a, w=r(n, m): weigh(ad.tanh(a), w), [r(n, m)]),
        ("sin_cos", lambda a, w=r(n, m): weigh(ad.hadamard(ad.sin(a), ad.cos(a)), w), [r(n, m)]),
        ("leaky_relu", lambda a, w=r(n, m): weigh(ad.leaky_relu(a, 0.2), w), [r(n, m)]),
        ("relu", lambda a, w=r(n, m): weigh(ad.relu(a), w), [r(n, m)]),
        ("normalize_rows", lambda a, w=r(n, m): weigh(ad.normalize_rows(a), w), [r(n, m)]),
        ("softmax_masked", lambda a, w=r(n, m + 1): weigh(ad.softmax(a, mask=mask), w), [r(n, m + 1)]),
        ("logsumexp_masked", lambda a, w=r(n): weigh(ad.logsumexp(a, mask=mask), w), [r(n, m + 1)]),
        ("cosine", lambda a, b, w=r(n): weigh(ad.cosine_similarity(a, b), w), [r(n, m), r(n, m)]),
        ("spmm", lambda a, w=r(k, m): weigh(ad.spmm(sp_m, a), w), [r(n, m)]),
        ("index_slice", lambda a, w=r(n): weigh(a[:, 0], w), [r(n, m)]),
    ]


def test_every_backward_rule_passes_gradient_check():
    rng = np.random.default_rng(2024)
    trials = 0
    worst = {}
    while trials < 125:
        for name, f, inputs in _op_cases(rng):
            tensors = [Tensor(x) for x in inputs]
            err = ad.gradient_check(f, tensors)
            worst[name] = max(err, worst.get(name, 0.0))
            trials += 1
    assert trials >= 100
    bad = {k: v for k, v in worst.items() if v >= 1e-4}
    assert not bad, bad


def test_tensor_file_round_trip(rng, tmp_path):
    arrays_in = [rng.standard_normal((3, 4)), np.zeros((0, 2)), rng.standard_normal(5), np.array(2.5)]
    path = tmp_path / "t.bin"
    ad.save_tensors(path, arrays_in)
    out = ad.load_tensors(path, len(arrays_in))
    for a, b in zip(arrays_in, out):
        assert a.shape == b.shape
        np.testing.assert_array_equal(a, b)
    raw = path.read_bytes()
    assert raw[:8] == ad.MAGIC
    buf = io.BytesIO()
    for a in out:
        ad.dump_array(a, buf)
    assert buf.getvalue() == raw


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMAGIC" + b"\0" * 16)
    with pytest.raises(ValueError, match="magic"):
        ad.load_tensors(path, 1)
