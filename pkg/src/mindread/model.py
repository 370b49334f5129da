"""Full network: stream encoders, attention fusion, reason graph and heads."""

from dataclasses import asdict, dataclass

import numpy as np

from .features import ConfigurationError
from .fusion import LossWeights, attend, cross_modal, forward_no_crossmodal, heads, init_fusion_params, multitask_loss
from .graph import gcn_forward, gcn_weights, init_gcn_params
from .tensor import Tensor
from .tfe import BOX_WIDTH, STREAMS, encode_observation, init_encoder_params, init_gru_params

VARIANTS = ("full", "no_crossmodal")
BACKBONES = ("transformer", "recurrent")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters.

    ``D``, the GCN output width, always equals the fused width
    ``2 * d_v + 4`` so that ``F X^T`` is defined.
    """

    d_v: int = 16
    n_reasons: int = 17
    d: int = 32
    d_h: int = 128
    n_layers: int = 2
    heads: tuple = (4, 4, 2)
    mlp_ratio: int = 2
    max_t: int = 32
    gcn_layers: int = 2
    variant: str = "full"
    backbone: str = "transformer"
    reason_head: str = "affine"
    negative_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.backbone not in BACKBONES:
            raise ConfigurationError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        for name in ("d_v", "n_reasons", "d", "d_h", "max_t", "gcn_layers", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.n_layers < 0:
            raise ConfigurationError("n_layers must be non-negative")
        if len(self.heads) != 3:
            raise ConfigurationError("heads needs one count per stream (local, global, box)")
        for width, h in zip(self.stream_widths, self.heads):
            if h < 1 or width % h:
                raise ConfigurationError(f"stream width {width} is not divisible by {h} heads")

    @property
    def width(self):
        return 2 * self.d_v + BOX_WIDTH

    @property
    def D(self):
        return self.width

    @property
    def stream_widths(self):
        return (self.d_v, self.d_v, BOX_WIDTH)

    def to_dict(self):
        d = asdict(self)
        d["heads"] = list(self.heads)
        return d


def init_params(spec, rng):
    """Fresh parameter dict for ``spec`` drawn from ``rng``."""
    params = {}
    for name, width in zip(STREAMS, spec.stream_widths):
        if spec.backbone == "transformer":
            params.update(init_encoder_params(
                f"tfe.{name}", width, spec.n_layers, spec.max_t, rng, spec.mlp_ratio
            ))
        else:
            params.update(init_gru_params(f"gru.{name}", width, rng))
    crossmodal = spec.variant == "full"
    params.update(init_fusion_params(spec.width, spec.n_reasons, rng, spec.reason_head, crossmodal))
    if crossmodal:
        params.update(init_gcn_params(spec.d, spec.d_h, spec.D, rng, spec.gcn_layers))
    return params


def reason_embeddings(params, X0, A_hat, spec):
    """GCN-refined reason embeddings ``X`` of shape ``(n, D)``."""
    return gcn_forward(X0, A_hat, gcn_weights(params), spec.negative_slope)


def forward(params, X, spec, X0=None, A_hat=None, attn_out=None):
    """Run the network on a batch of stacked observations.

    Parameters
    ----------
    params : dict of str -> Tensor
    X : ndarray of shape (B, t, 2*d_v + 4)
        Per-frame ``local | global | box`` rows.
    spec : ModelSpec
    X0, A_hat : ndarray, optional
        Base reason embeddings ``(n, d)`` and propagation matrix ``(n, n)``;
        required for the ``full`` variant.

    Returns
    -------
    dict with ``intent_logit`` (B,), ``reason_logits`` (B, n), ``alpha``
    (B, t), ``F`` (B, w) and, for the full variant, ``C`` (B, n).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != spec.width:
        raise ValueError(f"expected observations of shape (B, t, {spec.width}), got {X.shape}")
    d_v = spec.d_v
    h = encode_observation(
        X[:, :, :d_v], X[:, :, d_v:2 * d_v], X[:, :, 2 * d_v:], params,
        spec.heads, spec.backbone, attn_out,
    )
    F, alpha = attend(h, params["fusion.W_s"], params["fusion.W_c"])
    out = {"F": F, "alpha": alpha}
    if spec.variant == "full":
        if X0 is None or A_hat is None:
            raise ConfigurationError("the full variant needs reason embeddings and an adjacency")
        if X0.shape != (spec.n_reasons, spec.d):
            raise ConfigurationError(
                f"reason embeddings have shape {X0.shape}, expected {(spec.n_reasons, spec.d)}"
            )
        C = cross_modal(F, reason_embeddings(params, X0, A_hat, spec))
        out["C"] = C
        out["intent_logit"], out["reason_logits"] = heads(C, params)
    else:
        out["intent_logit"], out["reason_logits"] = forward_no_crossmodal(F, params)
    return out


def loss(params, X, y, R, spec, X0=None, A_hat=None, weights=LossWeights()):
    out = forward(params, X, spec, X0, A_hat)
    return multitask_loss(out["intent_logit"], out["reason_logits"], y, R, weights), out


def params_to_arrays(params):
    return {k: v.data.copy() for k, v in params.items()}


def arrays_to_params(arrays):
    return {k: Tensor(np.array(v), requires_grad=True) for k, v in arrays.items()}
