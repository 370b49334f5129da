"""scikit-learn compatible estimator wrapping the full network.

``X`` is a 3-D array ``(n_samples, t, 2*d_v + 4)`` whose rows are the
per-frame ``local | global | box`` features of an observation window
(see :meth:`ObservationSequence.stacked`). ``y`` is the binary intent
(1 = crossing) and ``reasons`` the ``(n_samples, n_reasons)`` binary label
matrix.
"""

import logging
import time

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .embeddings import EmbeddingTable, toy_embed
from .features import ConfigurationError
from .fusion import LossWeights, multitask_loss
from .graph import build_adjacency, cooccurrence_from_labels, normalize_adjacency
from .metrics import intent_metrics, reason_metrics
from .model import (ModelSpec, arrays_to_params, forward, init_params, loss, params_to_arrays,
                    reason_embeddings)
from .optim import Adam
from .tensor import Tensor, _sigmoid
from .vocab import ReasonVocabulary

logger = logging.getLogger(__name__)


def check_observations(X, width=None):
    """Validate a ``(n_samples, t, width)`` observation array."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_min_samples=1)
    if X.ndim != 3:
        raise ValueError(f"observations must be 3-D (n_samples, t, width), got shape {X.shape}")
    if width is not None and X.shape[2] != width:
        raise ValueError(f"observations have width {X.shape[2]}, model expects {width}")
    if (X.shape[2] - 4) % 2 or X.shape[2] < 6:
        raise ValueError(f"width {X.shape[2]} is not of the form 2*d_v + 4")
    return X


def check_targets(y, reasons, n_samples, n_reasons=None):
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise ValueError(f"y must have shape ({n_samples},), got {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y must be binary (1 = crossing intent)")
    R = check_array(reasons, dtype=np.int64)
    if R.shape[0] != n_samples:
        raise ValueError(f"reasons has {R.shape[0]} rows, expected {n_samples}")
    if n_reasons is not None and R.shape[1] != n_reasons:
        raise ValueError(f"reasons has {R.shape[1]} columns, expected {n_reasons}")
    if not np.all((R == 0) | (R == 1)):
        raise ValueError("reasons must be a binary matrix")
    return y.astype(np.int64), R


class MindreadClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Joint crossing-intent and multi-label reason classifier.

    Parameters
    ----------
    variant : {"full", "no_crossmodal"}, default="full"
        ``no_crossmodal`` drops the reason graph and reads both heads off the
        attention output directly.
    backbone : {"transformer", "recurrent"}, default="transformer"
    reason_head : {"affine", "identity"}, default="affine"
        ``identity`` uses the cross-modal similarities as reason logits.
    n_layers : int, default=2
        Transformer layers per stream.
    heads : tuple of int, default=(4, 4, 2)
        Attention heads for the local, global and box streams.
    mlp_ratio : int, default=2
    max_t : int, default=32
        Rows of the positional table.
    d_h : int, default=128
        GCN hidden width.
    gcn_layers : int, default=2
    embeddings : EmbeddingTable or ndarray of shape (n_reasons, d), optional
        Fixed reason embeddings. Defaults to ``toy_embed(vocabulary, 32)``.
    vocabulary : ReasonVocabulary, optional
    adjacency : ndarray of shape (n_reasons, n_reasons), optional
        Conditional-probability adjacency. Estimated from ``reasons`` in
        ``fit`` when omitted.
    adjacency_norm : {"row", "symmetric"}, default="row"
    gamma_reason, gamma_intent : float, default=1.0
        Multi-task loss weights.
    lr : float, default=2e-3
    batch_size : int, default=8
    epochs : int, default=30
    l2 : float, default=0.0
        L2 penalty on the head weights.
    random_state : int, default=0
    verbose : int, default=0

    Attributes
    ----------
    params_ : dict of str -> Tensor
    spec_ : ModelSpec
    X0_ : ndarray of shape (n_reasons, d)
    adjacency_ : ndarray of shape (n_reasons, n_reasons)
    A_hat_ : ndarray of shape (n_reasons, n_reasons)
    history_ : list of dict
        One entry per epoch with training (and validation) loss and metrics.
    classes_ : ndarray, ``[0, 1]``
    """

    def __init__(self, variant="full", backbone="transformer", reason_head="affine",
                 n_layers=2, heads=(4, 4, 2), mlp_ratio=2, max_t=32, d_h=128, gcn_layers=2,
                 embeddings=None, vocabulary=None, adjacency=None, adjacency_norm="row",
                 gamma_reason=1.0, gamma_intent=1.0, lr=2e-3, batch_size=8, epochs=30,
                 l2=0.0, random_state=0, verbose=0):
        self.variant = variant
        self.backbone = backbone
        self.reason_head = reason_head
        self.n_layers = n_layers
        self.heads = heads
        self.mlp_ratio = mlp_ratio
        self.max_t = max_t
        self.d_h = d_h
        self.gcn_layers = gcn_layers
        self.embeddings = embeddings
        self.vocabulary = vocabulary
        self.adjacency = adjacency
        self.adjacency_norm = adjacency_norm
        self.gamma_reason = gamma_reason
        self.gamma_intent = gamma_intent
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.l2 = l2
        self.random_state = random_state
        self.verbose = verbose

    # -- setup ------------------------------------------------------------

    def _base_embeddings(self, vocab):
        emb = self.embeddings
        if emb is None:
            emb = toy_embed(vocab, 32, seed=0)
        vectors = emb.vectors if isinstance(emb, EmbeddingTable) else np.asarray(emb, dtype=np.float64)
        if vectors.shape[0] != len(vocab):
            raise ConfigurationError(
                f"embeddings cover {vectors.shape[0]} reasons, vocabulary has {len(vocab)}"
            )
        return vectors

    def _setup(self, X, R):
        vocab = self.vocabulary or ReasonVocabulary.default()
        if R.shape[1] != len(vocab):
            raise ValueError(f"reasons has {R.shape[1]} columns, vocabulary has {len(vocab)}")
        self.X0_ = self._base_embeddings(vocab)
        self.spec_ = ModelSpec(
            d_v=(X.shape[2] - 4) // 2, n_reasons=len(vocab), d=self.X0_.shape[1], d_h=self.d_h,
            n_layers=self.n_layers, heads=tuple(self.heads), mlp_ratio=self.mlp_ratio,
            max_t=self.max_t, gcn_layers=self.gcn_layers, variant=self.variant,
            backbone=self.backbone, reason_head=self.reason_head,
        )
        if self.adjacency is not None:
            A = np.asarray(self.adjacency, dtype=np.float64)
        else:
            A = build_adjacency(cooccurrence_from_labels(R))
        self.adjacency_ = A
        self.A_hat_ = normalize_adjacency(A, self.adjacency_norm)
        self.weights_ = LossWeights(self.gamma_reason, self.gamma_intent)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[2]
        self.vocabulary_ = vocab

    # -- training -----------------------------------------------------------

    def fit(self, X, y, reasons, validation_data=None, callback=None):
        """Train with Adam on the multi-task loss.

        Parameters
        ----------
        X : array-like of shape (n_samples, t, 2*d_v + 4)
        y : array-like of shape (n_samples,)
        reasons : array-like of shape (n_samples, n_reasons)
        validation_data : tuple (X_val, y_val, reasons_val), optional
            When given, parameters from the epoch with the lowest validation
            loss are kept.
        callback : callable, optional
            Called with each epoch's history entry.
        """
        X = check_observations(X)
        y, R = check_targets(y, reasons, X.shape[0])
        self._setup(X, R)
        if X.shape[1] > self.spec_.max_t:
            raise ValueError(f"sequence length {X.shape[1]} exceeds max_t={self.spec_.max_t}")
        rng = np.random.default_rng(self.random_state)
        self.params_ = init_params(self.spec_, rng)
        decay = [k for k in self.params_ if k.startswith("head.") and k.endswith(".w")]
        opt = Adam(self.params_, lr=self.lr, weight_decay=self.l2, decay=decay)
        self.history_ = []
        best = None
        n = X.shape[0]
        for epoch in range(self.epochs):
            start = time.perf_counter()
            order = rng.permutation(n)
            total = 0.0
            for b in range(0, n, self.batch_size):
                idx = order[b:b + self.batch_size]
                value, _ = loss(self.params_, X[idx], y[idx], R[idx], self.spec_,
                                self.X0_, self.A_hat_, self.weights_)
                opt.zero_grad()
                value.backward()
                opt.step()
                total += value.item() * len(idx)
            entry = {"epoch": epoch + 1, "train_loss": total / n,
                     "seconds": time.perf_counter() - start}
            if validation_data is not None:
                Xv, yv, Rv = validation_data
                entry.update({f"val_{k}": v for k, v in self.score_detail(Xv, yv, Rv).items()})
                if best is None or entry["val_loss"] < best[0]:
                    best = (entry["val_loss"], epoch + 1, params_to_arrays(self.params_))
            self.history_.append(entry)
            if callback is not None:
                callback(entry)
            if self.verbose:
                logger.info("epoch %d: %s", epoch + 1, entry)
        self.best_epoch_ = None
        if best is not None:
            self.best_epoch_ = best[1]
            self.params_ = arrays_to_params(best[2])
        return self

    # -- inference ----------------------------------------------------------

    def _forward(self, X, batch=256):
        check_is_fitted(self, "params_")
        X = check_observations(X, self.n_features_in_)
        keys = ("intent_logit", "reason_logits", "alpha", "F") + (("C",) if self.spec_.variant == "full" else ())
        chunks = {k: [] for k in keys}
        for b in range(0, X.shape[0], batch):
            out = forward(self.params_, X[b:b + batch], self.spec_, self.X0_, self.A_hat_)
            for k in keys:
                chunks[k].append(out[k].data)
        return {k: np.concatenate(v) for k, v in chunks.items()}

    def decision_function(self, X):
        """Intent logits."""
        return self._forward(X)["intent_logit"]

    def predict_proba(self, X):
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def predict_reason_proba(self, X):
        return _sigmoid(self._forward(X)["reason_logits"])

    def predict_reasons(self, X, threshold=0.5):
        return (self.predict_reason_proba(X) >= threshold).astype(np.int64)

    def attention(self, X):
        """Temporal attention weights ``(n_samples, t)``."""
        return self._forward(X)["alpha"]

    def transform(self, X):
        """Cross-modal representation ``C`` (or ``F`` without the reason graph)."""
        out = self._forward(X)
        return out["C"] if "C" in out else out["F"]

    def reason_embeddings(self):
        """GCN-refined reason embeddings, ``(n_reasons, D)``."""
        check_is_fitted(self, "params_")
        return reason_embeddings(self.params_, self.X0_, self.A_hat_, self.spec_).data

    def score_detail(self, X, y, reasons):
        """Loss and the full metric set on a labelled split."""
        X = check_observations(X, self.n_features_in_)
        y, R = check_targets(y, reasons, X.shape[0], self.spec_.n_reasons)
        out = self._forward(X)
        value = multitask_loss(Tensor(out["intent_logit"]), Tensor(out["reason_logits"]),
                               y, R, self.weights_).item()
        intent = intent_metrics(y, _sigmoid(out["intent_logit"]))
        reason = reason_metrics(R, _sigmoid(out["reason_logits"]))
        return {
            "loss": value,
            "intent_accuracy": intent["accuracy"],
            "intent_f1": intent["f1"],
            "reason_subset_accuracy": reason["subset_accuracy"],
            "reason_macro_f1": reason["macro_f1"],
        }

    # -- persistence -------------------------------------------------------

    def get_state(self):
        """Arrays and config needed to rebuild the fitted estimator."""
        check_is_fitted(self, "params_")
        arrays = {f"param.{k}": v for k, v in params_to_arrays(self.params_).items()}
        arrays["buffer.X0"] = self.X0_
        arrays["buffer.adjacency"] = self.adjacency_
        params = {k: v for k, v in self.get_params().items()
                  if k not in ("embeddings", "vocabulary", "adjacency")}
        params["heads"] = list(params["heads"])
        config = {
            "estimator": params,
            "spec": self.spec_.to_dict(),
            "vocabulary": [[r.text, r.intent_class] for r in self.vocabulary_],
        }
        return arrays, config

    @classmethod
    def from_state(cls, arrays, config):
        est = cls(**{k: (tuple(v) if k == "heads" else v) for k, v in config["estimator"].items()})
        est.vocabulary = ReasonVocabulary([tuple(r) for r in config["vocabulary"]])
        spec = config["spec"]
        est.embeddings = arrays["buffer.X0"]
        est.adjacency = arrays["buffer.adjacency"]
        dummy = np.zeros((1, 1, 2 * spec["d_v"] + 4))
        est._setup(dummy, np.zeros((1, len(est.vocabulary)), dtype=np.int64))
        est.params_ = arrays_to_params(
            {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
        )
        return est
