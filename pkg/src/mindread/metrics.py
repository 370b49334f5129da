"""Intent and multi-label reason metrics."""

import numpy as np
from scipy.stats import rankdata


def _binary(a, name):
    a = np.asarray(a)
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must be binary")
    return a.astype(np.int64)


def confusion(y_true, y_pred):
    """``(tp, fp, fn, tn)`` counts."""
    t, p = _binary(y_true, "y_true"), _binary(y_pred, "y_pred")
    return (
        int(np.sum((t == 1) & (p == 1))),
        int(np.sum((t == 0) & (p == 1))),
        int(np.sum((t == 1) & (p == 0))),
        int(np.sum((t == 0) & (p == 0))),
    )


def precision_score(y_true, y_pred):
    tp, fp, _, _ = confusion(y_true, y_pred)
    return tp / (tp + fp) if tp + fp else 0.0


def f1_score(y_true, y_pred, empty=0.0):
    """Binary F1. ``empty`` is returned when there are no positives at all."""
    tp, fp, fn, _ = confusion(y_true, y_pred)
    den = 2 * tp + fp + fn
    return 2 * tp / den if den else empty


def accuracy_score(y_true, y_pred):
    t, p = np.asarray(y_true), np.asarray(y_pred)
    return float(np.mean(t == p))


def roc_auc_score(y_true, scores):
    """AUC by the Mann-Whitney rank statistic; ties get average ranks."""
    t = _binary(y_true, "y_true")
    n_pos = int(t.sum())
    n_neg = len(t) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(np.asarray(scores, dtype=np.float64), method="average")
    return float((ranks[t == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def subset_accuracy(Y_true, Y_pred):
    return float(np.mean(np.all(np.asarray(Y_true) == np.asarray(Y_pred), axis=1)))


def hamming_accuracy(Y_true, Y_pred):
    return float(np.mean(np.asarray(Y_true) == np.asarray(Y_pred)))


def per_label_f1(Y_true, Y_pred):
    """F1 per label. A label never present nor predicted scores 1."""
    Y_true, Y_pred = np.asarray(Y_true), np.asarray(Y_pred)
    return np.array([f1_score(Y_true[:, j], Y_pred[:, j], empty=1.0) for j in range(Y_true.shape[1])])


def macro_f1(Y_true, Y_pred):
    return float(per_label_f1(Y_true, Y_pred).mean())


def intent_metrics(y_true, scores, threshold=0.5):
    """Accuracy, F1, precision at ``threshold`` on probabilities, plus AUC."""
    scores = np.asarray(scores, dtype=np.float64)
    pred = (scores >= threshold).astype(np.int64)
    try:
        auc = roc_auc_score(y_true, scores)
    except ValueError:
        auc = float("nan")
    return {
        "accuracy": accuracy_score(y_true, pred),
        "f1": f1_score(y_true, pred),
        "precision": precision_score(y_true, pred),
        "auc": auc,
    }


def reason_metrics(Y_true, probs, threshold=0.5, names=None):
    Y_pred = (np.asarray(probs) >= threshold).astype(np.int64)
    per = per_label_f1(Y_true, Y_pred)
    names = names or [str(j) for j in range(len(per))]
    return {
        "subset_accuracy": subset_accuracy(Y_true, Y_pred),
        "hamming_accuracy": hamming_accuracy(Y_true, Y_pred),
        "macro_f1": float(per.mean()),
        "per_class_f1": {n: float(v) for n, v in zip(names, per)},
    }
