"""Reason co-occurrence graph and the graph convolution over reason embeddings."""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, leaky_relu, matmul


@dataclass
class CooccurrenceStats:
    """Pairwise reason counts.

    Attributes
    ----------
    count_i : ndarray of shape (n,)
        Records containing reason ``i``.
    count_ij : ndarray of shape (n, n)
        Records containing both ``i`` and ``j``; the diagonal equals ``count_i``.
    total_records : int
    """

    count_i: np.ndarray
    count_ij: np.ndarray
    total_records: int

    @property
    def n(self):
        return len(self.count_i)

    def frequencies(self):
        if self.total_records == 0:
            return np.zeros(self.n)
        return self.count_i / self.total_records


def cooccurrence_from_labels(labels):
    """Count co-occurrences from a binary ``(n_records, n)`` label matrix."""
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 2:
        raise ValueError(f"label matrix must be 2-D, got shape {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("label matrix must be binary")
    cij = y.T @ y
    return CooccurrenceStats(np.diag(cij).copy(), cij, int(y.shape[0]))


def count_cooccurrence(corpus, vocab):
    """Co-occurrence statistics of the reason sets in ``corpus``.

    Parameters
    ----------
    corpus : iterable of AnnotationRecord
    vocab : ReasonVocabulary

    Raises
    ------
    ValueError
        If a record carries a reason id outside the vocabulary.
    """
    n = len(vocab)
    rows = []
    for record in corpus:
        row = np.zeros(n, dtype=np.int64)
        for r in record.reasons:
            if not (0 <= int(r) < n):
                raise ValueError(
                    f"record {record.pedestrian_id!r}: unknown reason id {r} (vocabulary has {n})"
                )
            row[int(r)] = 1
        rows.append(row)
    if not rows:
        return CooccurrenceStats(np.zeros(n, dtype=np.int64), np.zeros((n, n), dtype=np.int64), 0)
    return cooccurrence_from_labels(np.vstack(rows))


def build_adjacency(stats, threshold=None):
    """Conditional-probability adjacency ``A[i, j] = P(reason j | reason i)``.

    Rows of reasons never observed are all zero. With ``threshold`` set,
    entries below it are zeroed (off by default).
    """
    ci = stats.count_i.astype(np.float64)
    cij = stats.count_ij.astype(np.float64)
    A = np.zeros_like(cij)
    seen = ci > 0
    A[seen] = cij[seen] / ci[seen, None]
    if threshold is not None:
        A = np.where(A >= threshold, A, 0.0)
    if np.any(A < 0) or np.any(A > 1):
        raise ValueError("adjacency entries outside [0, 1]; counts are inconsistent")
    if not np.allclose(np.diag(A)[seen], 1.0):
        raise ValueError("adjacency diagonal must be 1 for observed reasons")
    return A


def normalize_adjacency(A, mode="row"):
    """Propagation matrix for the graph convolution.

    ``mode="row"`` divides each row by its sum (zero rows stay zero). The
    diagonal is not augmented: observed reasons already have ``A[i, i] = 1``.
    ``mode="symmetric"`` applies ``D^-1/2 A D^-1/2`` with row-sum degrees.
    """
    A = np.asarray(A, dtype=np.float64)
    deg = A.sum(axis=1)
    nz = deg > 0
    if mode == "row":
        out = np.zeros_like(A)
        out[nz] = A[nz] / deg[nz, None]
        return out
    if mode == "symmetric":
        d = np.zeros_like(deg)
        d[nz] = 1.0 / np.sqrt(deg[nz])
        return d[:, None] * A * d[None, :]
    raise ValueError(f"unknown normalisation mode {mode!r}")


def init_gcn_params(d, hidden, out, rng, n_layers=2):
    """Glorot-uniform weights for a ``d -> hidden -> ... -> out`` GCN."""
    widths = [d] + [hidden] * (n_layers - 1) + [out]
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"gcn.W{i + 1}"] = Tensor(
            rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True
        )
    return params


def gcn_weights(params):
    """GCN weight tensors from a parameter dict, in layer order."""
    keys = sorted((k for k in params if k.startswith("gcn.W")), key=lambda k: int(k[5:]))
    return [params[k] for k in keys]


def gcn_forward(X0, A_hat, weights, negative_slope=0.2):
    """Stacked graph convolutions ``X <- act(A_hat @ X @ W)``.

    LeakyReLU follows every layer except the last, which is linear.

    Parameters
    ----------
    X0 : Tensor or ndarray of shape (n, d)
    A_hat : Tensor or ndarray of shape (n, n)
    weights : list of Tensor
        Chained widths ``d -> ... -> D``.
    """
    X = as_tensor(X0)
    A = as_tensor(A_hat)
    if A.shape != (X.shape[0], X.shape[0]):
        raise ValueError(f"propagation matrix {A.shape} does not match {X.shape[0]} nodes")
    for i, W in enumerate(weights):
        if W.shape[0] != X.shape[1]:
            raise ValueError(
                f"GCN layer {i + 1}: input width {X.shape[1]} does not match weight {W.shape}"
            )
        X = matmul(A, matmul(X, W))
        if i < len(weights) - 1:
            X = leaky_relu(X, negative_slope)
    return X
