import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mindread.dataset import AnnotationRecord, generate_synthetic
from mindread.graph import (
    build_adjacency,
    count_cooccurrence,
    gcn_forward,
    init_gcn_params,
    normalize_adjacency,
)
from mindread.tensor import Tensor
from mindread.vocab import CROSS, NO_CROSS, ReasonVocabulary

from conftest import leaf, numeric_grad, rel_error


def rec(reasons, pid="p"):
    return AnnotationRecord(pid, "v", [(0, (0.1, 0.1, 0.2, 0.3))], CROSS, tuple(reasons), 0)


def small_vocab(n=3):
    return ReasonVocabulary([(f"reason {i}", CROSS) for i in range(n)])


def brute_counts(label_sets, n):
    ci = [sum(1 for s in label_sets if i in s) for i in range(n)]
    cij = [[sum(1 for s in label_sets if i in s and j in s) for j in range(n)] for i in range(n)]
    return np.array(ci), np.array(cij)


# a=0, b=1, c=2
THREE = [rec([0, 1]), rec([0]), rec([1, 2])]


def test_default_vocabulary_tables():
    vocab = ReasonVocabulary.default()
    assert len(vocab) == 17
    assert len(vocab.ids_for(CROSS)) == 14 and len(vocab.ids_for(NO_CROSS)) == 3
    assert vocab[16].text == "Pedestrians doing their work on road-side"
    assert vocab[0].text == "Waiting to cross with a neighbouring pedestrian"
    assert [r.id for r in vocab] == list(range(17))


def test_vocabulary_json_round_trip():
    vocab = ReasonVocabulary.default()
    assert ReasonVocabulary.from_json(vocab.to_json()) == vocab


def test_three_record_counts():
    stats = count_cooccurrence(THREE, small_vocab())
    np.testing.assert_array_equal(stats.count_i, [2, 2, 1])
    assert stats.count_ij[0, 1] == 1 and stats.count_ij[1, 2] == 1 and stats.count_ij[0, 2] == 0
    assert stats.total_records == 3


def test_empty_corpus_counts():
    stats = count_cooccurrence([], small_vocab())
    assert not stats.count_i.any() and not stats.count_ij.any()


def test_saturated_counts():
    corpus = [rec([0, 1, 2]) for _ in range(5)]
    np.testing.assert_array_equal(count_cooccurrence(corpus, small_vocab()).count_ij, np.full((3, 3), 5))


def test_unknown_reason_names_record():
    with pytest.raises(ValueError, match="p9"):
        count_cooccurrence([rec([7], pid="p9")], small_vocab())


def test_three_record_adjacency():
    A = build_adjacency(count_cooccurrence(THREE, small_vocab()))
    assert A[0, 1] == 0.5 and A[1, 0] == 0.5 and A[1, 2] == 0.5 and A[0, 2] == 0.0
    np.testing.assert_array_equal(np.diag(A), [1.0, 1.0, 1.0])
    assert A[2, 1] == 1.0  # asymmetric


def test_unobserved_reason_row_is_zero():
    A = build_adjacency(count_cooccurrence([rec([0])], small_vocab()))
    assert not A[1].any() and not A[2].any() and A[0, 0] == 1.0


def test_threshold_flag():
    A = build_adjacency(count_cooccurrence(THREE, small_vocab()), threshold=0.6)
    assert A[0, 1] == 0.0 and A[2, 1] == 1.0


def test_normalize_identity_and_rows():
    np.testing.assert_array_equal(normalize_adjacency(np.eye(4)), np.eye(4))
    out = normalize_adjacency(np.array([[1.0, 1.0, 0.0], [0, 0, 0], [0, 0, 1.0]]))
    np.testing.assert_array_equal(out[0], [0.5, 0.5, 0.0])
    assert not out[1].any()


def test_normalize_three_record_adjacency():
    A = build_adjacency(count_cooccurrence(THREE, small_vocab()))
    # row a: [1, 1/2, 0] / 1.5 ; row b: [1/2, 1, 1/2] / 2 ; row c: [0, 1, 1] / 2
    expected = np.array([[2 / 3, 1 / 3, 0], [0.25, 0.5, 0.25], [0, 0.5, 0.5]])
    np.testing.assert_allclose(normalize_adjacency(A), expected, atol=1e-15)


label_sets = st.lists(st.sets(st.integers(0, 5), min_size=1), max_size=10)


@settings(max_examples=100, deadline=None)
@given(label_sets, st.randoms(use_true_random=False))
def test_counting_and_adjacency_properties(sets, random):
    vocab = small_vocab(6)
    corpus = [rec(sorted(s), pid=f"p{i}") for i, s in enumerate(sets)]
    stats = count_cooccurrence(corpus, vocab)
    ci, cij = brute_counts(sets, 6)
    np.testing.assert_array_equal(stats.count_i, ci)
    np.testing.assert_array_equal(stats.count_ij, cij)
    assert (stats.count_ij == stats.count_ij.T).all()
    assert (stats.count_ij <= np.minimum.outer(ci, ci)).all()
    A = build_adjacency(stats)
    assert ((A >= 0) & (A <= 1)).all()
    assert (np.diag(A)[ci > 0] == 1.0).all()
    shuffled = corpus[:]
    random.shuffle(shuffled)
    np.testing.assert_array_equal(build_adjacency(count_cooccurrence(shuffled, vocab)), A)
    sums = normalize_adjacency(A).sum(axis=1)
    assert all(s == 0.0 or abs(s - 1.0) < 1e-15 for s in sums)


def test_cross_block_zero_on_synthetic_corpus():
    vocab = ReasonVocabulary.default()
    A = build_adjacency(count_cooccurrence(generate_synthetic(400, seed=3, noise_rate=0.05), vocab))
    c, nc = vocab.ids_for(CROSS), vocab.ids_for(NO_CROSS)
    assert not A[np.ix_(c, nc)].any() and not A[np.ix_(nc, c)].any()


# -- gcn ------------------------------------------------------------------


def dense_gcn(X, A, Ws, slope=0.2):
    for k, W in enumerate(Ws):
        H = np.zeros((A.shape[0], W.shape[1]))
        for i, j in itertools.product(range(A.shape[0]), range(W.shape[1])):
            H[i, j] = sum(A[i, m] * X[m, q] * W[q, j] for m in range(A.shape[0]) for q in range(X.shape[1]))
        if k < len(Ws) - 1:
            H = np.where(H > 0, H, slope * H)
        X = H
    return X


def test_gcn_identity_propagation(rng):
    X0 = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(gcn_forward(X0, np.eye(4), [Tensor(np.eye(3))]).data, X0)


def test_gcn_uniform_rows(rng):
    X0 = np.tile(rng.normal(size=3), (4, 1))
    out = gcn_forward(X0, np.full((4, 4), 0.25), [Tensor(rng.normal(size=(3, 5))), Tensor(rng.normal(size=(5, 2)))])
    np.testing.assert_allclose(out.data, np.tile(out.data[0], (4, 1)), atol=1e-15)


def test_gcn_matches_dense_oracle(rng):
    for _ in range(20):
        X0, A = rng.normal(size=(3, 4)), normalize_adjacency(rng.uniform(size=(3, 3)))
        Ws = [rng.normal(size=(4, 5)), rng.normal(size=(5, 2))]
        out = gcn_forward(X0, A, [Tensor(W) for W in Ws]).data
        np.testing.assert_allclose(out, dense_gcn(X0, A, Ws), atol=1e-10, rtol=0)


def test_gcn_width_mismatch(rng):
    with pytest.raises(ValueError):
        gcn_forward(rng.normal(size=(3, 4)), np.eye(3), [Tensor(np.ones((5, 2)))])


def test_gcn_gradients(rng):
    X0, A = rng.normal(size=(5, 4)), normalize_adjacency(rng.uniform(size=(5, 5)))
    params = init_gcn_params(4, 6, 3, rng)
    W1, W2 = params["gcn.W1"], params["gcn.W2"]
    x = leaf(X0)
    weights = rng.normal(size=(5, 3))
    (gcn_forward(x, A, [W1, W2]) * weights).sum().backward()
    raw = [X0.copy(), W1.data.copy(), W2.data.copy()]

    def f():
        return float((gcn_forward(raw[0], A, [Tensor(raw[1]), Tensor(raw[2])]).data * weights).sum())

    for analytic, numeric in zip([x.grad, W1.grad, W2.grad], numeric_grad(f, raw)):
        assert rel_error(analytic, numeric) <= 1e-4
