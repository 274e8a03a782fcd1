import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from osdr import autodiff as ad
from osdr.errors import DimensionError, UsageError


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def test_matmul_identity():
    assert np.array_equal(ad.matmul(np.eye(2), np.array([[5.0], [6.0]])), [[5.0], [6.0]])


def test_matmul_small():
    out = ad.matmul(np.array([[1.0, 2], [3, 4]]), np.array([[5.0, 6], [7, 8]]))
    assert np.array_equal(out, [[19, 22], [43, 50]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    # integer-valued entries: every partial sum is exact, so equality is exact
    a = rng.integers(-9, 10, size=(7, 3)).astype(float)
    b = rng.integers(-9, 10, size=(3, 5)).astype(float)
    assert np.array_equal(ad.matmul(a, b), naive_matmul(a, b))
    a, b = rng.normal(size=(7, 3)), rng.normal(size=(3, 5))
    np.testing.assert_allclose(ad.matmul(a, b), naive_matmul(a, b), rtol=0, atol=1e-14)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


@pytest.mark.parametrize("u, v, expected", [
    ([1, 0], [1, 0], 1.0),
    ([1, 0], [0, 1], 0.0),
    ([1, 2], [2, 4], 1.0),
])
def test_cosine_similarity(u, v, expected):
    assert ad.cosine_similarity(u, v) == pytest.approx(expected, abs=1e-15)


def test_cosine_degenerate_is_zero():
    assert ad.cosine_similarity([0.0, 0.0], [1.0, 2.0]) == 0.0
    assert ad.cosine_similarity([1e-13, 0.0], [1.0, 2.0]) == 0.0


def test_cosine_length_mismatch():
    with pytest.raises(DimensionError):
        ad.cosine_similarity([1, 2, 3], [1, 2])


def test_softmax_examples():
    assert np.array_equal(ad.softmax_rows(np.array([[0.0, 0.0]])), [[0.5, 0.5]])
    assert np.array_equal(ad.softmax_rows(np.array([[1000.0, 1000.0]])), [[0.5, 0.5]])
    # exp(ln 2) = 2 against exp(0) = 1
    np.testing.assert_allclose(ad.softmax_rows(np.array([[math.log(2), 0.0]])),
                               [[2 / 3, 1 / 3]], rtol=0, atol=1e-15)


@pytest.mark.parametrize("u, v, expected", [
    ([0, 0], [0, 0], 0.0),
    ([0, 0], [3, 4], 5.0),
    ([1, 1], [2, 3], math.sqrt(5)),
])
def test_l2_distance(u, v, expected):
    assert ad.l2_distance(u, v) == pytest.approx(expected, abs=1e-15)


def test_l2_length_mismatch():
    with pytest.raises(DimensionError):
        ad.l2_distance([1.0], [1.0, 2.0])


def test_backward_sum_and_square():
    tape = ad.GradientTape()
    x = tape.watch([1.0, 2.0, 3.0])
    assert np.array_equal(ad.backward(tape, ad.sum(x))[x], [1, 1, 1])
    tape = ad.GradientTape()
    x = tape.watch([1.0, 2.0])
    assert np.array_equal(ad.backward(tape, ad.sum(ad.square(x)))[x], [2, 4])


def test_backward_rejects_non_scalar():
    tape = ad.GradientTape()
    x = tape.watch([1.0, 2.0])
    with pytest.raises(UsageError):
        ad.backward(tape, ad.square(x))


def test_unused_parameter_gets_zero_gradient():
    tape = ad.GradientTape()
    x = tape.watch(np.ones((2, 3)))
    unused = tape.watch(np.ones((4, 1)))
    grads = ad.backward(tape, ad.sum(x))
    assert grads[unused].shape == (4, 1)
    assert not grads[unused].any()


def test_shared_parameter_accumulates():
    tape = ad.GradientTape()
    w = tape.watch([[2.0]])
    loss = ad.sum(ad.add(ad.matmul(w, [[3.0]]), ad.matmul(w, [[4.0]])))
    assert ad.backward(tape, loss)[w][0, 0] == 7.0


def test_replay_is_reverse_order():
    tape = ad.GradientTape()
    x = tape.watch([[1.0, -2.0]])
    order = []
    y = ad.leaky_relu(x)
    z = ad.sum(ad.square(y))
    originals = [fn for _, _, fn in tape._records]
    tape._records = [(o, i, (lambda f, k: lambda g: (order.append(k), f(g))[1])(fn, k))
                     for k, (o, i, fn) in enumerate(tape._records)]
    ad.backward(tape, z)
    assert order == list(reversed(range(len(originals))))


def test_two_layer_composition_matches_finite_differences():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(4, 3))

    def loss(w1, w2):
        h = ad.leaky_relu(ad.matmul(x, w1))
        return ad.mean(ad.square(ad.matmul(h, w2)))

    assert ad.check_gradients(loss, [rng.normal(size=(3, 5)), rng.normal(size=(5, 2))]) < 1e-4


def _op_cases(rng):
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 2))
    mask = rng.random((4, 4)) < 0.5
    np.fill_diagonal(mask, True)
    pos = rng.uniform(0.5, 2.0, size=(3, 3))
    return {
        "matmul": (lambda p, q: ad.sum(ad.matmul(p, q)), [a, b]),
        "transpose": (lambda p: ad.sum(ad.matmul(ad.transpose(p), p)), [a]),
        "add_row": (lambda p, r: ad.sum(ad.square(ad.add_row(p, r))), [a, rng.normal(size=3)]),
        "sub_mul": (lambda p, q: ad.sum(ad.mul(ad.sub(p, q), p)), [a, rng.normal(size=(4, 3))]),
        "log_exp": (lambda p: ad.sum(ad.add(ad.log(p), ad.exp(p))), [pos]),
        "leaky_relu": (lambda p: ad.sum(ad.square(ad.leaky_relu(p))), [a]),
        "softmax": (lambda p: ad.sum(ad.square(ad.softmax_rows(p))), [a]),
        "masked_softmax": (lambda p: ad.sum(ad.square(ad.masked_softmax_rows(p, mask))),
                           [rng.normal(size=(4, 4))]),
        "log_softmax": (lambda p: ad.sum(ad.gather(ad.log_softmax_rows(p), [0, 1, 2, 3],
                                                   [0, 2, 1, 0])), [a]),
        "normalize_rows": (lambda p: ad.sum(ad.matmul(ad.normalize_rows(p),
                                                      ad.transpose(ad.normalize_rows(p)))), [a]),
        "pairwise_sq_dists": (lambda p: ad.sum(ad.square(ad.pairwise_sq_dists(p))), [a]),
        "row_norms": (lambda p: ad.sum(ad.row_norms(p)), [a]),
        "concat_take": (lambda p, q: ad.sum(ad.square(ad.take_cols(
            ad.take_rows(ad.concat_cols([p, q]), [0, 0, 2]), [1, 3]))),
            [a, rng.normal(size=(4, 2))]),
        "reshape_scale": (lambda p: ad.mean(ad.scale(ad.reshape(p, (12, 1)), 3.0)), [a]),
    }


@pytest.mark.parametrize("name", sorted(_op_cases(np.random.default_rng(0))))
def test_every_op_matches_finite_differences(name):
    for seed in range(5):
        fn, values = _op_cases(np.random.default_rng(seed))[name]
        assert ad.check_gradients(fn, values) < 1e-4, (name, seed)


def test_mixing_tapes_is_rejected():
    a = ad.GradientTape().watch([1.0])
    b = ad.GradientTape().watch([1.0])
    with pytest.raises(UsageError):
        ad.add(a, b)


def test_plain_arrays_stay_plain():
    assert isinstance(ad.matmul(np.eye(2), np.eye(2)), np.ndarray)


def test_zero_row_normalization_has_zero_gradient():
    tape = ad.GradientTape()
    x = tape.watch(np.array([[0.0, 0.0], [3.0, 4.0]]))
    grads = ad.backward(tape, ad.sum(ad.normalize_rows(x)))
    assert not grads[x][0].any()


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4),
       st.integers(0, 2**31 - 1))
def test_matmul_associative(n, m, p, q, seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(n, m)), rng.normal(size=(m, p)), rng.normal(size=(p, q))
    np.testing.assert_allclose(ad.matmul(ad.matmul(a, b), c), ad.matmul(a, ad.matmul(b, c)),
                               rtol=0, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=finite),
       st.floats(-1e3, 1e3))
def test_softmax_rows_normalized_and_shift_invariant(m, shift):
    p = ad.softmax_rows(m)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ad.softmax_rows(m + shift), p, rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite))
def test_l2_triangle_inequality(pts):
    a, b, c = pts
    assert ad.l2_distance(a, c) <= ad.l2_distance(a, b) + ad.l2_distance(b, c) + 1e-9
    assert ad.l2_distance(a, b) == ad.l2_distance(b, a)
