"""Training runs, evaluation reports, ablations and the gradient suite.

A run is fully described by a :class:`TrainConfig` plus a corpus. The
corpus is split at pedestrian granularity, windowed, featurised by a toy
provider and handed to :class:`MindreadClassifier`. Checkpoints hold the
fitted estimator state and the config that produced it, so evaluation
needs nothing else.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write_text, load_checkpoint, save_checkpoint
from .dataset import generate_synthetic, split, to_arrays, validate_record, window_corpus
from .embeddings import hashed_word_vectors, load_word_vectors, toy_embed, word_average_embed
from .estimator import MindreadClassifier
from .features import ConfigurationError, ToyFeatureProvider
from .fusion import LossWeights
from .graph import build_adjacency, count_cooccurrence, normalize_adjacency
from .metrics import intent_metrics, reason_metrics
from .model import ModelSpec, init_params, loss
from .tensor import NonFiniteError, Tensor
from .vocab import ReasonVocabulary

logger = logging.getLogger(__name__)

TRAIN_VARIANTS = ("full", "no_crossmodal", "word_embed", "recurrent_backbone")

WEIGHT_GRID = (
    ("weights_0.5_1", {"gamma_reason": 0.5, "gamma_intent": 1.0}),
    ("weights_1_0.5", {"gamma_reason": 1.0, "gamma_intent": 0.5}),
    ("weights_1_1", {"gamma_reason": 1.0, "gamma_intent": 1.0}),
)

RECURRENT_NOTE = (
    "recurrent_backbone replaces each stream's transformer with a single-layer gated "
    "recurrent encoder of the same width; no pretrained spatial backbone is involved"
)


class DivergenceError(NonFiniteError):
    """Training produced a non-finite value; a state dump was written."""


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run.

    ``D`` defaults to ``2 * d_v + 4``; an explicit value must agree with it
    for the variants that use the reason graph.
    """

    t: int = 15
    overlap: float = 0.6
    d_v: int = 16
    n: int = 17
    d: int = 32
    d_h: int = 128
    D: int = None
    n_layers: int = 2
    heads: tuple = (4, 4, 2)
    mlp_ratio: int = 2
    gcn_layers: int = 2
    reason_head: str = "affine"
    lr: float = 2e-3
    batch_size: int = 8
    epochs: int = 30
    gamma_reason: float = 1.0
    gamma_intent: float = 1.0
    seed: int = 0
    variant: str = "full"
    feature_noise: float = 1.0
    feature_seed: int = 0
    embed_seed: int = 0
    word_vectors: str = None
    split_ratios: tuple = (0.7, 0.1, 0.2)
    n_records: int = 2000
    label_noise: float = 0.05
    corpus_seed: int = None

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        object.__setattr__(self, "split_ratios", tuple(float(r) for r in self.split_ratios))
        if self.D is None:
            object.__setattr__(self, "D", 2 * self.d_v + 4)
        if self.variant not in TRAIN_VARIANTS:
            raise ConfigurationError(f"variant must be one of {TRAIN_VARIANTS}, got {self.variant!r}")
        for name in ("t", "d_v", "n", "d", "d_h", "D", "mlp_ratio", "gcn_layers",
                     "batch_size", "n_records"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("n_layers", "epochs", "feature_noise", "gamma_reason", "gamma_intent"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")
        if not 0 <= self.overlap < 1:
            raise ConfigurationError("overlap must lie in [0, 1)")
        if self.uses_graph and self.D != 2 * self.d_v + 4:
            raise ConfigurationError(
                f"D={self.D} must equal 2*d_v+4={2 * self.d_v + 4} for F X^T to be defined"
            )
        # let the model spec check head divisibility and friends
        self.model_spec()

    @property
    def uses_graph(self):
        return self.variant != "no_crossmodal"

    def model_spec(self):
        return ModelSpec(
            d_v=self.d_v, n_reasons=self.n, d=self.d, d_h=self.d_h, n_layers=self.n_layers,
            heads=self.heads, mlp_ratio=self.mlp_ratio, max_t=max(self.t, 1),
            gcn_layers=self.gcn_layers,
            variant="no_crossmodal" if self.variant == "no_crossmodal" else "full",
            backbone="recurrent" if self.variant == "recurrent_backbone" else "transformer",
            reason_head=self.reason_head,
        )

    def to_dict(self):
        d = asdict(self)
        d["heads"] = list(self.heads)
        d["split_ratios"] = list(self.split_ratios)
        return d

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**values)


@dataclass
class MetricsReport:
    intent: dict
    reason: dict
    per_class: dict
    n_samples: int
    wall_clock_per_sample: float
    primary: str = "reason.subset_accuracy"

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    estimator: MindreadClassifier
    config: TrainConfig
    history: list = field(default_factory=list)
    checkpoint: Path = None
    arrays: tuple = None


# -- data -------------------------------------------------------------------


def _embeddings(config, vocab):
    if config.variant == "word_embed":
        table = (load_word_vectors(config.word_vectors) if config.word_vectors
                 else hashed_word_vectors(vocab, config.d, config.embed_seed))
        emb = word_average_embed(vocab, table)
    else:
        emb = toy_embed(vocab, config.d, config.embed_seed)
    if emb.d != config.d:
        raise ConfigurationError(f"embeddings have width {emb.d}, config says d={config.d}")
    return emb


def prepare_splits(config, corpus, vocab=None):
    """Validate, split and window ``corpus``.

    Returns ``(train_records, arrays)`` with ``arrays`` a triple of
    ``(X, y, R)`` for the train, validation and test parts.
    """
    vocab = vocab or ReasonVocabulary.default()
    if len(vocab) != config.n:
        raise ConfigurationError(f"vocabulary has {len(vocab)} reasons, config says n={config.n}")
    for rec in corpus:
        validate_record(rec, vocab)
    provider = ToyFeatureProvider(config.d_v, noise=config.feature_noise, seed=config.feature_seed)
    parts = split(corpus, config.split_ratios, seed=config.seed)
    arrays = []
    for name, records in zip(("train", "validation", "test"), parts):
        seqs = window_corpus(records, config.t, config.overlap, provider)
        arrays.append(to_arrays(seqs, config.n) if seqs else None)
    if arrays[0] is None:
        raise ValueError(f"no training windows of length {config.t} in the corpus")
    return parts, arrays


def planted_corpus(config, seed=None):
    """The synthetic corpus a config describes (``corpus_seed`` or ``seed``)."""
    if seed is None:
        seed = config.seed if config.corpus_seed is None else config.corpus_seed
    return generate_synthetic(config.n_records, seed=seed, noise_rate=config.label_noise)


def build_estimator(config, train_records, vocab=None):
    vocab = vocab or ReasonVocabulary.default()
    adjacency = None
    if config.uses_graph:
        adjacency = build_adjacency(count_cooccurrence(train_records, vocab))
    spec = config.model_spec()
    return MindreadClassifier(
        variant=spec.variant, backbone=spec.backbone, reason_head=config.reason_head,
        n_layers=config.n_layers, heads=config.heads, mlp_ratio=config.mlp_ratio,
        max_t=spec.max_t, d_h=config.d_h, gcn_layers=config.gcn_layers,
        embeddings=_embeddings(config, vocab), vocabulary=vocab, adjacency=adjacency,
        gamma_reason=config.gamma_reason, gamma_intent=config.gamma_intent, lr=config.lr,
        batch_size=config.batch_size, epochs=config.epochs, random_state=config.seed,
    )


# -- train / evaluate --------------------------------------------------------


def _dump_divergence(out_dir, est, history, exc):
    path = Path(out_dir or ".") / "divergence"
    arrays = {f"param.{k}": v.data for k, v in getattr(est, "params_", {}).items()}
    save_checkpoint(path, arrays, {"error": str(exc), "history": history})
    return path


def train(config, corpus=None, out_dir=None, vocab=None):
    """Fit a model on ``corpus`` (the planted corpus when omitted).

    When ``out_dir`` is given, writes ``checkpoint/`` (best validation
    epoch) and ``train_log.jsonl`` with one record per epoch.

    Raises
    ------
    DivergenceError
        On a non-finite loss or update; parameters at the failing step are
        dumped to ``<out_dir>/divergence``.
    """
    vocab = vocab or ReasonVocabulary.default()
    if corpus is None:
        corpus = planted_corpus(config)
    parts, parts_arrays = prepare_splits(config, corpus, vocab)
    tr, va = parts_arrays[0], parts_arrays[1]
    est = build_estimator(config, parts[0], vocab)
    history = []
    log_lines = []

    def on_epoch(entry):
        history.append(entry)
        log_lines.append(json.dumps(entry, sort_keys=True))
        if out_dir is not None:
            atomic_write_text(Path(out_dir) / "train_log.jsonl", "\n".join(log_lines) + "\n")
        logger.info("epoch %d loss %.4f", entry["epoch"], entry["train_loss"])

    try:
        est.fit(*tr, validation_data=va, callback=on_epoch)
    except NonFiniteError as exc:
        path = _dump_divergence(out_dir, est, history, exc)
        raise DivergenceError(f"training diverged at epoch {len(history) + 1}: {exc}; "
                              f"state written to {path}") from exc
    result = TrainResult(est, config, history, arrays=(tr, va, parts_arrays[2]))
    if out_dir is not None:
        result.checkpoint = save_model(Path(out_dir) / "checkpoint", est, config)
    return result


def save_model(path, est, config):
    arrays, state = est.get_state()
    state["train_config"] = config.to_dict()
    return save_checkpoint(path, arrays, state)


def load_model(path):
    """``(estimator, config)`` from a checkpoint directory."""
    arrays, state = load_checkpoint(path)
    if "train_config" not in state:
        raise ConfigurationError(f"{path} is not a training checkpoint")
    config = TrainConfig.from_dict(state.pop("train_config"))
    return MindreadClassifier.from_state(arrays, state), config


def evaluate_arrays(est, X, y, R):
    if X is None or len(X) == 0:
        raise ValueError("cannot evaluate on an empty split")
    start = time.perf_counter()
    intent_p = est.predict_proba(X)[:, 1]
    reason_p = est.predict_reason_proba(X)
    elapsed = time.perf_counter() - start
    names = est.vocabulary_.texts
    reason = reason_metrics(R, reason_p, names=names)
    per_class = reason.pop("per_class_f1")
    return MetricsReport(
        intent=intent_metrics(y, intent_p),
        reason=reason,
        per_class=per_class,
        n_samples=int(len(X)),
        wall_clock_per_sample=elapsed / len(X),
    )


def evaluate(checkpoint, corpus, part="test"):
    """Metrics of a saved model on one part of ``corpus``.

    ``checkpoint`` is a checkpoint directory or an ``(estimator, config)``
    pair. ``part`` is ``"train"``, ``"validation"``, ``"test"`` or ``"all"``; the
    split is recomputed from the stored config, so the parts match the ones
    used in training.
    """
    est, config = checkpoint if isinstance(checkpoint, tuple) else load_model(checkpoint)
    if part == "all":
        provider = ToyFeatureProvider(config.d_v, noise=config.feature_noise, seed=config.feature_seed)
        seqs = window_corpus(corpus, config.t, config.overlap, provider)
        if not seqs:
            raise ValueError("cannot evaluate on an empty split")
        arrays = to_arrays(seqs, config.n)
    else:
        names = ("train", "validation", "test")
        if part not in names:
            raise ValueError(f"part must be one of {names + ('all',)}, got {part!r}")
        _, parts = prepare_splits(config, corpus, est.vocabulary_)
        arrays = parts[names.index(part)]
        if arrays is None:
            raise ValueError(f"cannot evaluate on an empty split ({part})")
    return evaluate_arrays(est, *arrays)


# -- ablation -----------------------------------------------------------------

SUMMARY_KEYS = (
    ("intent", "accuracy"), ("intent", "f1"), ("intent", "precision"), ("intent", "auc"),
    ("reason", "subset_accuracy"), ("reason", "hamming_accuracy"), ("reason", "macro_f1"),
)


def _as_variant(v):
    if isinstance(v, str):
        return v, {"variant": v}
    name, overrides = v
    return name, dict(overrides)


def run_ablation(base_config, variants, seeds, corpus_for_seed=None, on_run=None):
    """Train and test every variant under every seed.

    Parameters
    ----------
    base_config : TrainConfig
    variants : list
        Variant names from ``TRAIN_VARIANTS`` or ``(name, overrides)`` pairs
        of config fields, e.g. the entries of ``WEIGHT_GRID``.
    seeds : sequence of int
        At least three. Each seed sets the corpus, split and initialisation.
    corpus_for_seed : callable, optional
        ``seed -> records``; defaults to the planted corpus.
    on_run : callable, optional
        Called with ``(name, seed, report)`` after each run.

    Returns
    -------
    dict with ``rows`` (one per variant, holding per-seed metrics and their
    mean and standard deviation) and a ``notes`` list.
    """
    seeds = [int(s) for s in seeds]
    if len(seeds) < 3:
        raise ValueError(f"ablations need at least 3 seeds, got {len(seeds)}")
    corpus_for_seed = corpus_for_seed or (lambda s: planted_corpus(base_config, seed=s))
    corpora = {}
    rows = []
    for v in variants:
        name, overrides = _as_variant(v)
        runs = []
        for seed in seeds:
            if seed not in corpora:
                corpora[seed] = corpus_for_seed(seed)
            config = replace(base_config, seed=seed, **overrides)
            start = time.perf_counter()
            result = train(config, corpora[seed])
            report = evaluate_arrays(result.estimator, *result.arrays[2])
            runs.append({"seed": seed, "seconds": time.perf_counter() - start,
                         "best_epoch": result.estimator.best_epoch_,
                         "intent": report.intent, "reason": report.reason})
            if on_run is not None:
                on_run(name, seed, report)
        summary = {}
        for group, key in SUMMARY_KEYS:
            values = np.array([r[group][key] for r in runs], dtype=np.float64)
            summary[f"{group}_{key}"] = {"mean": float(values.mean()), "std": float(values.std())}
        rows.append({"name": name, "overrides": overrides, "runs": runs, "summary": summary})
    notes = []
    if any(r["overrides"].get("variant") == "recurrent_backbone" for r in rows):
        notes.append(RECURRENT_NOTE)
    return {"base_config": base_config.to_dict(), "seeds": seeds, "rows": rows, "notes": notes}


def format_table(table, keys=("intent_accuracy", "reason_subset_accuracy", "reason_macro_f1")):
    """Plain-text mean +- std table of an ablation result."""
    head = f"{'variant':<20}" + "".join(f"{k:>28}" for k in keys)
    lines = [head]
    for row in table["rows"]:
        cells = "".join(
            f"{row['summary'][k]['mean']:>19.4f} +- {row['summary'][k]['std']:.4f}" for k in keys
        )
        lines.append(f"{row['name']:<20}{cells}")
    lines.extend(f"note: {n}" for n in table["notes"])
    return "\n".join(lines)


# -- gradient suite -----------------------------------------------------------


def parameter_group(name):
    """Coarse group of a parameter key, e.g. ``tfe.local`` or ``gcn.W1``."""
    parts = name.split(".")
    if parts[0] in ("tfe", "gru", "head"):
        return ".".join(parts[:2])
    return name


def gradcheck(seed=0, t=3, d_v=8, n=17, batch=2, d=8, d_h=16, h=1e-6, variant="full",
              reason_head="affine"):
    """Compare backprop with central differences on every parameter entry.

    Returns ``{group: max relative error}`` where the error of a group is
    ``||g_a - g_n|| / max(||g_a|| + ||g_n||, 1e-12)`` over all its entries.
    """
    rng = np.random.default_rng(seed)
    spec = ModelSpec(d_v=d_v, n_reasons=n, d=d, d_h=d_h, heads=(2, 2, 2), max_t=t,
                     variant=variant, reason_head=reason_head)
    params = init_params(spec, rng)
    X = rng.normal(size=(batch, t, spec.width))
    y = rng.integers(0, 2, size=batch)
    R = rng.integers(0, 2, size=(batch, n))
    X0 = rng.normal(size=(n, d))
    A_hat = normalize_adjacency(rng.uniform(size=(n, n)) * (rng.uniform(size=(n, n)) < 0.5) + np.eye(n))
    weights = LossWeights()

    value, _ = loss(params, X, y, R, spec, X0, A_hat, weights)
    value.backward()
    unused = sorted(k for k, p in params.items() if p.grad is None)
    if unused:
        raise RuntimeError(f"parameters not reached by the loss: {unused}")
    analytic = {k: p.grad.copy() for k, p in params.items()}

    plain = {k: Tensor(p.data) for k, p in params.items()}

    def f():
        return loss(plain, X, y, R, spec, X0, A_hat, weights)[0].item()

    numeric = {}
    for k, p in plain.items():
        arr = p.data
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        numeric[k] = g

    groups = {}
    for k in params:
        groups.setdefault(parameter_group(k), []).append(k)
    report = {}
    for group, keys in sorted(groups.items()):
        a = np.concatenate([analytic[k].ravel() for k in keys])
        num = np.concatenate([numeric[k].ravel() for k in keys])
        denom = max(np.linalg.norm(a) + np.linalg.norm(num), 1e-12)
        report[group] = float(np.linalg.norm(a - num) / denom)
    return report

