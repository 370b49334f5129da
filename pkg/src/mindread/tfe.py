"""Temporal feature encoding of the local, global and bounding-box streams.

Each stream is a ``(t, width)`` sequence. A pre-LN transformer encoder with
learned positional embeddings encodes every stream independently; the three
outputs are concatenated per time step into a ``(t, 2*d_v + 4)`` sequence.
A single-layer GRU encoder of matching width is available as a recurrent
alternative.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, as_tensor, concat, gelu, layernorm, matmul, sigmoid, softmax, tanh

STREAMS = ("local", "global", "box")
BOX_WIDTH = 4


@dataclass
class ObservationSequence:
    """Past observations of one pedestrian over ``t`` frames.

    ``boxes`` are ``(x1, y1, x2, y2)`` in normalised image coordinates.
    The target fields are filled when the sequence comes from a labelled
    record.
    """

    local_feats: np.ndarray
    global_feats: np.ndarray
    boxes: np.ndarray
    intent: int = None
    reasons: tuple = ()
    pedestrian_id: str = None
    frames: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.local_feats = np.asarray(self.local_feats, dtype=np.float64)
        self.global_feats = np.asarray(self.global_feats, dtype=np.float64)
        self.boxes = np.asarray(self.boxes, dtype=np.float64)
        t = self.local_feats.shape[0]
        if t < 1:
            raise ValueError("observation needs at least one frame")
        if self.global_feats.shape[0] != t or self.boxes.shape[0] != t:
            raise ValueError(
                "streams disagree on sequence length: "
                f"{self.local_feats.shape[0]}, {self.global_feats.shape[0]}, {self.boxes.shape[0]}"
            )
        if self.boxes.shape[1] != BOX_WIDTH:
            raise ValueError(f"boxes must have width 4, got {self.boxes.shape[1]}")
        for name in ("local_feats", "global_feats", "boxes"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")
        if np.any(self.boxes[:, 0] > self.boxes[:, 2]) or np.any(self.boxes[:, 1] > self.boxes[:, 3]):
            raise ValueError("boxes must satisfy x1 <= x2 and y1 <= y2")

    @property
    def t(self):
        return self.local_feats.shape[0]

    @property
    def d_v(self):
        return self.local_feats.shape[1]

    def stacked(self):
        """``(t, 2*d_v + 4)`` array: local | global | box."""
        return np.concatenate([self.local_feats, self.global_feats, self.boxes], axis=1)


# -- parameters -------------------------------------------------------------


def init_encoder_params(prefix, width, n_layers, max_t, rng, mlp_ratio=2, pos_scale=0.1):
    """Parameters of one stream encoder, keyed ``{prefix}.…``."""
    hidden = mlp_ratio * width

    def dense(fan_in, fan_out):
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))

    p = {f"{prefix}.pos": rng.normal(0.0, pos_scale, size=(max_t, width))}
    for layer in range(n_layers):
        k = f"{prefix}.layer{layer}"
        p[f"{k}.ln1.g"] = np.ones(width)
        p[f"{k}.ln1.b"] = np.zeros(width)
        for proj in ("q", "k", "v", "o"):
            p[f"{k}.w{proj}"] = dense(width, width)
            p[f"{k}.b{proj}"] = np.zeros(width)
        p[f"{k}.ln2.g"] = np.ones(width)
        p[f"{k}.ln2.b"] = np.zeros(width)
        p[f"{k}.mlp.w1"] = dense(width, hidden)
        p[f"{k}.mlp.b1"] = np.zeros(hidden)
        p[f"{k}.mlp.w2"] = dense(hidden, width)
        p[f"{k}.mlp.b2"] = np.zeros(width)
    return {name: Tensor(v, requires_grad=True) for name, v in p.items()}


def init_gru_params(prefix, width, rng):
    """Parameters of a single-layer GRU with hidden size ``width``."""
    bound = 1.0 / math.sqrt(width)
    p = {}
    for gate in ("z", "r", "h"):
        p[f"{prefix}.w{gate}"] = rng.uniform(-bound, bound, size=(width, width))
        p[f"{prefix}.u{gate}"] = rng.uniform(-bound, bound, size=(width, width))
        p[f"{prefix}.b{gate}"] = np.zeros(width)
    return {name: Tensor(v, requires_grad=True) for name, v in p.items()}


def n_encoder_layers(params, prefix):
    head = prefix + ".layer"
    layers = {k[len(head):].split(".")[0] for k in params if k.startswith(head)}
    return len(layers)


# -- transformer ------------------------------------------------------------


def multihead_self_attention(x, params, prefix, n_heads, attn_out=None):
    """Unmasked multi-head self-attention over ``x`` of shape ``(B, t, w)``."""
    B, t, w = x.shape
    if w % n_heads:
        raise ValueError(f"width {w} is not divisible by {n_heads} heads")
    dh = w // n_heads

    def heads(proj):
        y = matmul(x, params[f"{prefix}.w{proj}"]) + params[f"{prefix}.b{proj}"]
        return y.reshape(B, t, n_heads, dh).transpose(0, 2, 1, 3)

    q, k, v = heads("q"), heads("k"), heads("v")
    scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    probs = softmax(scores, axis=-1)
    if attn_out is not None:
        attn_out.append(probs.data)
    ctx = matmul(probs, v).transpose(0, 2, 1, 3).reshape(B, t, w)
    return matmul(ctx, params[f"{prefix}.wo"]) + params[f"{prefix}.bo"]


def encode_stream(seq, params, prefix, n_heads, eps=1e-5, attn_out=None):
    """Pre-LN transformer encoding of one stream.

    ``x = seq + pos[:t]``, then per layer ``x += MSA(LN(x))`` and
    ``x += MLP(LN(x))`` with a two-layer GELU MLP.

    Parameters
    ----------
    seq : Tensor or ndarray of shape (t, w) or (B, t, w)
    params : dict of str -> Tensor
    prefix : str
        Stream key, e.g. ``"tfe.local"``.
    n_heads : int
    attn_out : list, optional
        Receives every attention probability array.

    Raises
    ------
    ValueError
        If ``t`` exceeds the positional table or the width does not match.
    """
    x = as_tensor(seq)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    _, t, w = x.shape
    pos = params[f"{prefix}.pos"]
    if t > pos.shape[0]:
        raise ValueError(f"sequence length {t} exceeds positional capacity {pos.shape[0]}")
    if w != pos.shape[1]:
        raise ValueError(f"stream width {w} does not match encoder width {pos.shape[1]}")
    x = x + pos[:t]
    for layer in range(n_encoder_layers(params, prefix)):
        k = f"{prefix}.layer{layer}"
        h = layernorm(x, params[f"{k}.ln1.g"], params[f"{k}.ln1.b"], eps)
        x = x + multihead_self_attention(h, params, k, n_heads, attn_out)
        h = layernorm(x, params[f"{k}.ln2.g"], params[f"{k}.ln2.b"], eps)
        h = gelu(matmul(h, params[f"{k}.mlp.w1"]) + params[f"{k}.mlp.b1"])
        x = x + matmul(h, params[f"{k}.mlp.w2"]) + params[f"{k}.mlp.b2"]
    return x.reshape(t, w) if squeeze else x


def encode_stream_recurrent(seq, params, prefix):
    """GRU over ``seq`` (``(B, t, w)``); returns every hidden state, ``(B, t, w)``."""
    x = as_tensor(seq)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    B, t, w = x.shape
    p = lambda n: params[f"{prefix}.{n}"]  # noqa: E731
    h = Tensor(np.zeros((B, w)))
    states = []
    for s in range(t):
        xs = x[:, s, :]
        z = sigmoid(matmul(xs, p("wz")) + matmul(h, p("uz")) + p("bz"))
        r = sigmoid(matmul(xs, p("wr")) + matmul(h, p("ur")) + p("br"))
        cand = tanh(matmul(xs, p("wh")) + matmul(r * h, p("uh")) + p("bh"))
        h = h + z * (cand - h)
        states.append(h.reshape(B, 1, w))
    out = concat(states, axis=1)
    return out.reshape(t, w) if squeeze else out


def encode_observation(local, global_, boxes, params, heads=(4, 4, 2), backbone="transformer",
                       attn_out=None):
    """Encode the three streams independently and concatenate per time step.

    Inputs are ``(B, t, d_v)``, ``(B, t, d_v)`` and ``(B, t, 4)``; the
    result is ``(B, t, 2*d_v + 4)``.
    """
    inputs = [as_tensor(local), as_tensor(global_), as_tensor(boxes)]
    ts = {x.shape[-2] for x in inputs}
    if len(ts) != 1:
        raise ValueError(f"streams disagree on sequence length: {sorted(ts)}")
    encoded = []
    for name, x, h in zip(STREAMS, inputs, heads):
        if backbone == "transformer":
            encoded.append(encode_stream(x, params, f"tfe.{name}", h, attn_out=attn_out))
        elif backbone == "recurrent":
            encoded.append(encode_stream_recurrent(x, params, f"gru.{name}"))
        else:
            raise ValueError(f"unknown backbone {backbone!r}")
    return concat(encoded, axis=-1)
