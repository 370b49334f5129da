import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mindread.optim import Adam, adam_step
from mindread.tensor import (
    NonFiniteError,
    Tensor,
    bce_with_logits,
    concat,
    gelu,
    layernorm,
    leaky_relu,
    matmul,
    sigmoid,
    softmax,
    tanh,
)

from conftest import leaf, numeric_grad, rel_error


# -- matmul ---------------------------------------------------------------


def test_matmul_identity(rng):
    M = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(matmul(Tensor(np.eye(3)), Tensor(M)).data, M)


def test_matmul_hand_expansion():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[2.0], [4.0]])


def test_matmul_annihilator(rng):
    out = matmul(Tensor(np.zeros((2, 3))), Tensor(rng.normal(size=(3, 4))))
    np.testing.assert_array_equal(out.data, np.zeros((2, 4)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 2\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_matmul_backward_rules(rng):
    A, B = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    G = rng.normal(size=(3, 2))
    matmul(A, B).backward(G)
    np.testing.assert_allclose(A.grad, G @ B.data.T, atol=1e-14)
    np.testing.assert_allclose(B.grad, A.data.T @ G, atol=1e-14)


# -- softmax --------------------------------------------------------------


def test_softmax_uniform():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_no_overflow():
    out = softmax(Tensor([1000.0, 0.0])).data
    assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_matches_scalar_evaluation():
    x = [1.0, 2.0, 3.0]
    e = [math.exp(v - 3.0) for v in x]
    expected = [v / sum(e) for v in e]
    np.testing.assert_allclose(softmax(Tensor(x)).data, expected, rtol=1e-15)


def test_softmax_empty_axis():
    with pytest.raises(ValueError):
        softmax(Tensor(np.zeros((2, 0))), axis=-1)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
              elements=st.floats(-700, 700)))
def test_softmax_sums_to_one(x):
    np.testing.assert_allclose(softmax(Tensor(x), axis=-1).data.sum(axis=-1), 1.0, atol=1e-12)


# -- layernorm ------------------------------------------------------------


def test_layernorm_constant_row_is_zero():
    out = layernorm(Tensor(np.full((1, 4), 7.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, np.zeros((1, 4)))


def test_layernorm_zero_gain_gives_bias(rng):
    bias = rng.normal(size=5)
    out = layernorm(Tensor(rng.normal(size=(3, 5))), Tensor(np.zeros(5)), Tensor(bias))
    np.testing.assert_array_equal(out.data, np.tile(bias, (3, 1)))


def test_layernorm_matches_scalar_oracle():
    row = [1.0, 2.0, 3.0]
    mean = sum(row) / 3
    var = sum((v - mean) ** 2 for v in row) / 3
    expected = [(v - mean) / math.sqrt(var + 1e-5) for v in row]
    out = layernorm(Tensor([row]), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-5)
    np.testing.assert_allclose(out.data[0], expected, rtol=1e-14)


def test_layernorm_rejects_bad_eps():
    with pytest.raises(ValueError):
        layernorm(Tensor(np.ones((1, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)


# -- elementwise ----------------------------------------------------------


def test_sigmoid_tanh_at_zero():
    assert sigmoid(Tensor(0.0)).item() == 0.5
    assert tanh(Tensor(0.0)).item() == 0.0


def test_gelu_matches_erf_oracle():
    for x in (-1.0, 0.0, 1.0):
        expected = x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
        assert gelu(Tensor([x])).data[0] == pytest.approx(expected, rel=1e-15, abs=1e-300)


def test_concat_requires_matching_extents():
    with pytest.raises(ValueError):
        concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)


def test_add_mul_broadcast_gradients(rng):
    a, b = leaf(rng.normal(size=(2, 3))), leaf(rng.normal(size=(3,)))
    ((a + b) * b).sum().backward()
    np.testing.assert_allclose(a.grad, np.tile(b.data, (2, 1)))
    np.testing.assert_allclose(b.grad, (a.data + 2 * b.data).sum(axis=0))


# -- bce ------------------------------------------------------------------


def test_bce_zero_logit():
    assert bce_with_logits(Tensor([0.0]), [1.0]).item() == pytest.approx(math.log(2.0), rel=1e-15)


def test_bce_large_logit_is_stable():
    assert bce_with_logits(Tensor([50.0]), [1.0]).item() == pytest.approx(0.0, abs=1e-20)
    assert math.isfinite(bce_with_logits(Tensor([-800.0]), [1.0]).item())


def test_bce_matches_direct_evaluation():
    def direct(z, t):
        p = 1.0 / (1.0 + math.exp(-z))
        return -(t * math.log(p) + (1 - t) * math.log(1 - p))

    expected = (direct(1.0, 1.0) + direct(-1.0, 0.0)) / 2
    assert bce_with_logits(Tensor([1.0, -1.0]), [1.0, 0.0]).item() == pytest.approx(expected, rel=1e-14)


def test_bce_weight_and_validation():
    base = bce_with_logits(Tensor([0.3, -0.2]), [1.0, 0.0]).item()
    assert bce_with_logits(Tensor([0.3, -0.2]), [1.0, 0.0], weight=2.5).item() == pytest.approx(2.5 * base)
    with pytest.raises(ValueError):
        bce_with_logits(Tensor([0.3]), [0.5])


# -- backward -------------------------------------------------------------


def test_backward_linear_case(rng):
    W = leaf(rng.normal(size=(2, 3)))
    x = Tensor(rng.normal(size=(3, 1)))
    matmul(W, x).sum().backward()
    np.testing.assert_allclose(W.grad, np.tile(x.data.T, (2, 1)))


def test_backward_sigmoid_closed_form():
    w, c = leaf(0.7), 3.0
    (sigmoid(w) * c).backward()
    s = 1.0 / (1.0 + math.exp(-0.7))
    assert w.grad == pytest.approx(s * (1 - s) * c, rel=1e-14)


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        (leaf(np.ones(3)) * 2.0).backward()


def test_gradient_reaches_shared_leaf_once(rng):
    x = leaf(rng.normal(size=3))
    y = x * x + x
    y.sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_raises():
    with pytest.raises(NonFiniteError):
        Tensor([1.0]) * Tensor([np.inf])
    with pytest.raises(NonFiniteError):
        leaf([1e300]) * leaf([1e300])


# -- randomized finite-difference suite ----------------------------------

OPS = {
    "matmul": (lambda a, b: matmul(a, b), [(3, 4), (4, 2)]),
    "add": (lambda a, b: a + b, [(3, 4), (4,)]),
    "mul": (lambda a, b: a * b, [(2, 3), (2, 1)]),
    "tanh": (lambda a: tanh(a), [(3, 3)]),
    "sigmoid": (lambda a: sigmoid(a), [(4, 2)]),
    "gelu": (lambda a: gelu(a), [(3, 4)]),
    "leaky_relu": (lambda a: leaky_relu(a, 0.2), [(4, 4)]),
    "softmax": (lambda a: softmax(a, axis=-1), [(3, 4)]),
    "layernorm": (lambda a, g, b: layernorm(a, g, b), [(3, 4), (4,), (4,)]),
    "concat": (lambda a, b: concat([a, b], axis=1), [(2, 3), (2, 2)]),
    "transpose_reshape": (lambda a: a.transpose().reshape(2, 6), [(3, 4)]),
    "getitem": (lambda a: a[1:, 2], [(3, 4)]),
    "bce": (lambda a: bce_with_logits(a, (np.arange(12).reshape(3, 4) % 2).astype(float)), [(3, 4)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_gradients_match_finite_differences(name):
    fn, shapes = OPS[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(100):
        arrays_ = [rng.normal(size=s) for s in shapes]
        leaves = [leaf(a) for a in arrays_]
        out = fn(*leaves)
        weights = rng.normal(size=out.shape)
        (out * weights).sum().backward()

        def f():
            return float((fn(*[Tensor(a) for a in arrays_]).data * weights).sum())

        for lf, g in zip(leaves, numeric_grad(f, arrays_)):
            worst = max(worst, rel_error(lf.grad, g))
    assert worst <= 1e-4


def test_determinism_bit_identical(rng):
    a = rng.normal(size=(4, 4))

    def run():
        x = leaf(a)
        y = softmax(gelu(matmul(x, x)), axis=0).sum()
        y.backward()
        return y.data.copy(), x.grad.copy()

    (v1, g1), (v2, g2) = run(), run()
    assert v1.tobytes() == v2.tobytes() and g1.tobytes() == g2.tobytes()


# -- adam -----------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    p = {"w": leaf(np.array([1.0, -2.0]))}
    opt = Adam(p, lr=0.1)
    p["w"].grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_adam_first_step_is_lr_sign():
    w = np.array([0.5, 0.5, 0.5])
    g = np.array([3.0, -0.01, 1e3])
    adam_step(w, g, np.zeros(3), np.zeros(3), 1, lr=1e-3)
    np.testing.assert_allclose(w, 0.5 - 1e-3 * np.sign(g), rtol=1e-6)


def test_adam_decreases_quadratic():
    w = leaf(np.array([1.0]))
    opt = Adam({"w": w}, lr=0.1)
    values = [float(w.data[0] ** 2)]
    for _ in range(3):
        opt.zero_grad()
        (w * w).sum().backward()
        opt.step()
        values.append(float(w.data[0] ** 2))
    assert all(b < a for a, b in zip(values, values[1:]))


def test_adam_deterministic():
    def run():
        w = leaf(np.array([1.0, 2.0]))
        opt = Adam({"w": w}, lr=0.05)
        for _ in range(5):
            opt.zero_grad()
            (w * w * w).sum().backward()
            opt.step()
        return w.data.tobytes()

    assert run() == run()
