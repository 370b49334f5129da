"""Attention over encoded frames, cross-modal scores and the two task heads."""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, bce_with_logits, concat, matmul, softmax, tanh


@dataclass(frozen=True)
class LossWeights:
    reason: float = 1.0
    intent: float = 1.0

    def __post_init__(self):
        if self.reason < 0 or self.intent < 0:
            raise ValueError("loss weights must be non-negative")
        if self.reason == 0 and self.intent == 0:
            raise ValueError("at least one loss weight must be positive")


def init_fusion_params(width, n_reasons, rng, reason_head="affine", crossmodal=True):
    """``W_s`` (w x w), ``W_c`` (2w x w) and the head parameters."""
    p = {
        "fusion.W_s": rng.normal(0.0, 1.0 / np.sqrt(width), size=(width, width)),
        "fusion.W_c": rng.normal(0.0, 1.0 / np.sqrt(2 * width), size=(2 * width, width)),
    }
    head_in = n_reasons if crossmodal else width
    p["head.intent.w"] = rng.normal(0.0, 1.0 / np.sqrt(head_in), size=(head_in, 1))
    p["head.intent.b"] = np.zeros(1)
    if reason_head == "affine" or not crossmodal:
        p["head.reason.w"] = rng.normal(0.0, 1.0 / np.sqrt(head_in), size=(head_in, n_reasons))
        p["head.reason.b"] = np.zeros(n_reasons)
    elif reason_head != "identity":
        raise ValueError(f"unknown reason head {reason_head!r}")
    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


def attend(h, W_s, W_c):
    """Score every state against the last one and fuse.

    ``score_s = h_e^T W_s h_s``, ``alpha = softmax(score)``,
    ``h_c = sum_s alpha_s h_s``, ``F = tanh([h_c ; h_e] W_c)``.

    Parameters
    ----------
    h : Tensor of shape (t, w) or (B, t, w)

    Returns
    -------
    F : Tensor of shape (w,) or (B, w)
    alpha : Tensor of shape (t,) or (B, t)
    """
    h = as_tensor(h)
    squeeze = h.ndim == 2
    if squeeze:
        h = h.reshape(1, *h.shape)
    B, t, w = h.shape
    if t == 0:
        raise ValueError("attention needs at least one hidden state")
    h_e = h[:, t - 1, :]
    query = matmul(h_e, as_tensor(W_s)).reshape(B, 1, w)
    scores = matmul(query, h.transpose(0, 2, 1)).reshape(B, t)
    alpha = softmax(scores, axis=-1)
    h_c = matmul(alpha.reshape(B, 1, t), h).reshape(B, w)
    F = tanh(matmul(concat([h_c, h_e], axis=-1), as_tensor(W_c)))
    if squeeze:
        return F.reshape(w), alpha.reshape(t)
    return F, alpha


def cross_modal(F, X):
    """``C = F X^T``: similarity of the fused feature to each reason embedding."""
    F, X = as_tensor(F), as_tensor(X)
    if F.shape[-1] != X.shape[-1]:
        raise ValueError(
            f"fused width {F.shape[-1]} does not match reason embedding width {X.shape[-1]}"
        )
    if F.ndim == 1:
        return matmul(F.reshape(1, -1), X.transpose()).reshape(X.shape[0])
    return matmul(F, X.transpose())


def _affine(x, w, b):
    x = as_tensor(x)
    if x.ndim == 1:
        return matmul(x.reshape(1, -1), w).reshape(w.shape[1]) + b
    return matmul(x, w) + b


def heads(C, params):
    """``(intent_logit, reason_logits)`` from the cross-modal vector(s) ``C``.

    Without ``head.reason.w`` in ``params`` the reason head is the identity.
    """
    C = as_tensor(C)
    intent = _affine(C, params["head.intent.w"], params["head.intent.b"])
    intent = intent.reshape(intent.shape[:-1]) if intent.ndim > 1 else intent.reshape(())
    if "head.reason.w" in params:
        reason = _affine(C, params["head.reason.w"], params["head.reason.b"])
    else:
        reason = C
    return intent, reason


def forward_no_crossmodal(F, params):
    """Ablation tail: affine heads applied to ``F`` directly."""
    return heads(F, params)


def multitask_loss(intent_logit, reason_logits, intent_target, reason_targets, weights=LossWeights()):
    """``gamma_R * mean BCE(reasons) + gamma_I * mean BCE(intent)``."""
    for name, t in (("intent", intent_target), ("reason", reason_targets)):
        t = np.asarray(t.data if isinstance(t, Tensor) else t)
        if not np.all((t == 0) | (t == 1)):
            raise ValueError(f"{name} targets must be binary")
    total = None
    if weights.reason:
        total = bce_with_logits(reason_logits, reason_targets, weights.reason)
    if weights.intent:
        li = bce_with_logits(intent_logit, intent_target, weights.intent)
        total = li if total is None else total + li
    return total
