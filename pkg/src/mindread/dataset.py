"""Annotation records, the planted synthetic corpus, windowing and splits.

Corpus files are UTF-8 JSON Lines, one record per line::

    {"pedestrian_id": "p00000", "video_id": "v000", "intent": "C",
     "reasons": [3, 4], "critical_frame": 41,
     "frames": [{"frame": 30, "bbox": [0.41, 0.52, 0.44, 0.61]}, ...],
     "scene": {...}}

``scene`` is optional and holds the planted factors of synthetic records.
Boxes are ``[x1, y1, x2, y2]`` normalised to ``[0, 1]``.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import atomic_write_text
from .features import ToyFeatureProvider
from .tfe import ObservationSequence
from .vocab import CROSS, NO_CROSS, ReasonVocabulary

logger = logging.getLogger(__name__)


@dataclass
class AnnotationRecord:
    """One pedestrian track with its intent and reason labels."""

    pedestrian_id: str
    video_id: str
    frames: list
    intent: str
    reasons: tuple
    critical_frame: int
    scene: dict = None

    @property
    def frame_indices(self):
        return [f for f, _ in self.frames]

    @property
    def boxes(self):
        return np.array([b for _, b in self.frames], dtype=np.float64).reshape(-1, 4)

    def to_dict(self):
        d = {
            "pedestrian_id": self.pedestrian_id,
            "video_id": self.video_id,
            "intent": self.intent,
            "reasons": sorted(int(r) for r in self.reasons),
            "critical_frame": int(self.critical_frame),
            "frames": [{"frame": int(f), "bbox": [float(v) for v in b]} for f, b in self.frames],
        }
        if self.scene is not None:
            d["scene"] = self.scene
        return d

    @classmethod
    def from_dict(cls, d):
        missing = {"pedestrian_id", "video_id", "intent", "reasons", "critical_frame", "frames"} - set(d)
        if missing:
            raise ValueError(f"missing field(s) {sorted(missing)}")
        frames = []
        for entry in d["frames"]:
            bbox = entry["bbox"]
            if not isinstance(bbox, list) or len(bbox) != 4:
                raise ValueError(f"frame {entry.get('frame')}: bbox must have 4 values")
            frames.append((int(entry["frame"]), tuple(float(v) for v in bbox)))
        return cls(
            pedestrian_id=str(d["pedestrian_id"]),
            video_id=str(d["video_id"]),
            frames=frames,
            intent=d["intent"],
            reasons=tuple(sorted(int(r) for r in d["reasons"])),
            critical_frame=int(d["critical_frame"]),
            scene=d.get("scene"),
        )


def validate_record(record, vocab):
    """Raise ``ValueError`` if ``record`` breaks a schema invariant."""
    pid = record.pedestrian_id
    if record.intent not in (CROSS, NO_CROSS):
        raise ValueError(f"record {pid!r}: intent must be C or NC, got {record.intent!r}")
    if not record.reasons:
        raise ValueError(f"record {pid!r}: reason set is empty")
    if len(set(record.reasons)) != len(record.reasons):
        raise ValueError(f"record {pid!r}: duplicate reason ids")
    for r in record.reasons:
        if not 0 <= r < len(vocab):
            raise ValueError(f"record {pid!r}: unknown reason id {r}")
        if vocab.class_of(r) != record.intent:
            raise ValueError(
                f"record {pid!r}: reason {r} ({vocab[r].text!r}) belongs to "
                f"{vocab.class_of(r)}, record intent is {record.intent}"
            )
    if not record.frames:
        raise ValueError(f"record {pid!r}: no frames")
    idx = record.frame_indices
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise ValueError(f"record {pid!r}: frame indices must be strictly increasing")
    if idx[-1] > record.critical_frame:
        raise ValueError(
            f"record {pid!r}: frame {idx[-1]} lies beyond critical frame {record.critical_frame}"
        )
    for f, (x1, y1, x2, y2) in record.frames:
        vals = (x1, y1, x2, y2)
        if not all(math.isfinite(v) and 0.0 <= v <= 1.0 for v in vals) or x1 > x2 or y1 > y2:
            raise ValueError(f"record {pid!r}: malformed bbox {list(vals)} at frame {f}")
    return record


def parse_corpus(lines, vocab=None):
    vocab = vocab or ReasonVocabulary.default()
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = AnnotationRecord.from_dict(json.loads(line))
            validate_record(rec, vocab)
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        records.append(rec)
    return records


def load_corpus(path, vocab=None):
    """Read and validate a JSON Lines corpus.

    Raises
    ------
    ValueError
        On the first invalid record, prefixed with its line number.
    """
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh, vocab)


def dump_corpus(records):
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)


def save_corpus(path, records):
    atomic_write_text(path, dump_corpus(records))


# -- planted generative model -------------------------------------------------

FACTOR_DISTRIBUTIONS = {
    "signal": {"red": 0.5, "green": 0.5},
    "ego_speed": {"low": 0.5, "high": 0.5},
    "other_vehicle_speed": {"low": 0.5, "high": 0.5},
    "group_size": {0: 0.5, 1: 0.25, 2: 0.0833, 3: 0.0833, 4: 0.0834},
    "at_crosswalk": {True: 0.5, False: 0.5},
    "engaged_roadside": {True: 0.126, False: 0.874},
    "acknowledges_ego": {True: 0.3, False: 0.7},
}

# Intent is NC when any of these conjunctions holds, C otherwise.
NO_CROSS_RULE = (
    {"engaged_roadside": True},
    {"group": "present", "at_crosswalk": False, "signal": "green"},
)

# reason id -> conjunctions (any may fire). Only rules of the record's intent
# class apply. Conditions use the derived factor ``group`` in
# {"none", "one", "many", "present"}.
REASON_RULES = {
    0: ({"group": "one"},),
    1: ({"signal": "green", "at_crosswalk": False},),
    2: ({"group": "many"},),
    3: ({"signal": "green"},),
    4: ({"signal": "green", "ego_speed": "high"},),
    5: ({"signal": "green", "other_vehicle_speed": "high"},),
    6: ({"signal": "green", "ego_speed": "high", "other_vehicle_speed": "high"},),
    7: ({"acknowledges_ego": True, "ego_speed": "high"},),
    8: ({"acknowledges_ego": True, "ego_speed": "low"},),
    9: ({"signal": "red"},),
    10: ({"signal": "red", "at_crosswalk": True},),
    11: ({"signal": "red", "ego_speed": "low"},),
    12: ({"signal": "red", "other_vehicle_speed": "low"},),
    13: ({"signal": "red", "ego_speed": "high", "acknowledges_ego": False},),
    14: ({"group": "one"},),
    15: ({"group": "many"},),
    16: ({"engaged_roadside": True},),
}


def _holds(condition, factors):
    g = factors["group_size"]
    for key, want in condition.items():
        if key == "group":
            have = {"none": g == 0, "one": g == 1, "many": g >= 2, "present": g >= 1}[want]
            if not have:
                return False
        elif factors[key] != want:
            return False
    return True


def planted_intent(factors):
    return NO_CROSS if any(_holds(c, factors) for c in NO_CROSS_RULE) else CROSS


def planted_reasons(factors, intent, vocab=None):
    """Reason ids the rule table assigns to ``factors`` under ``intent``."""
    vocab = vocab or ReasonVocabulary.default()
    return tuple(
        rid for rid, conds in sorted(REASON_RULES.items())
        if vocab.class_of(rid) == intent and any(_holds(c, factors) for c in conds)
    )


def _draw(rng, dist):
    keys = list(dist)
    probs = np.array([dist[k] for k in keys], dtype=np.float64)
    return keys[int(rng.choice(len(keys), p=probs / probs.sum()))]


def sample_factors(rng):
    return {name: _draw(rng, dist) for name, dist in FACTOR_DISTRIBUTIONS.items()}


def record_rng(seed, index):
    """Generator for record ``index``: ``SeedSequence([seed, index])``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _track(rng, factors, intent, length):
    """Bounding boxes drifting according to intent and ego speed."""
    cx = rng.uniform(0.15, 0.85)
    cy = rng.uniform(0.45, 0.65)
    w = rng.uniform(0.02, 0.05)
    direction = 1.0 if cx < 0.5 else -1.0
    walking = intent == CROSS and factors["signal"] == "red"
    vx = direction * (0.006 if walking else 0.001 if intent == CROSS else 0.0)
    growth = 1.02 if factors["ego_speed"] == "high" else 1.005
    boxes = []
    for s in range(length):
        x = cx + vx * s + rng.normal(0.0, 0.001)
        scale = w * growth ** s
        h = 2.5 * scale
        box = np.clip([x - scale / 2, cy - h / 2, x + scale / 2, cy + h / 2], 0.0, 1.0)
        boxes.append(tuple(float(v) for v in box))
    return boxes


def generate_synthetic(n_records, seed=0, noise_rate=0.05, track_length=(10, 20), vocab=None):
    """Sample a corpus from the planted factor model.

    Each record draws scene factors from ``FACTOR_DISTRIBUTIONS``; intent
    follows ``NO_CROSS_RULE`` and reasons follow ``REASON_RULES``. With
    probability ``noise_rate`` a record has one reason of its intent class
    flipped (skipped if that would empty the set). Record ``i`` uses
    ``record_rng(seed, i)``, so any subset can be regenerated in isolation.
    """
    if not 0.0 <= noise_rate < 0.5:
        raise ValueError("noise_rate must lie in [0, 0.5)")
    vocab = vocab or ReasonVocabulary.default()
    lo, hi = track_length
    records = []
    for i in range(n_records):
        rng = record_rng(seed, i)
        factors = sample_factors(rng)
        intent = planted_intent(factors)
        reasons = set(planted_reasons(factors, intent, vocab))
        if rng.random() < noise_rate:
            flip = int(rng.choice(vocab.ids_for(intent)))
            flipped = reasons ^ {flip}
            if flipped:
                reasons = flipped
        length = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(0, 100))
        boxes = _track(rng, factors, intent, length)
        frames = [(start + s, b) for s, b in enumerate(boxes)]
        scene = {k: (v.item() if isinstance(v, np.generic) else v) for k, v in factors.items()}
        records.append(AnnotationRecord(
            pedestrian_id=f"p{i:05d}",
            video_id=f"v{i // 50:03d}",
            frames=frames,
            intent=intent,
            reasons=tuple(sorted(reasons)),
            critical_frame=start + length - 1,
            scene=scene,
        ))
    return records


# -- windows and splits -------------------------------------------------------


def window_stride(t, overlap=0.6):
    # round() guards against 10 * (1 - 0.6) == 4.000000000000001
    return max(1, math.ceil(round(t * (1.0 - overlap), 9)))


def window_starts(n_frames, t, overlap=0.6):
    if n_frames < t:
        return []
    return list(range(0, n_frames - t + 1, window_stride(t, overlap)))


def window(record, t, overlap=0.6, provider=None):
    """Sliding observation windows of length ``t`` before the critical frame.

    Stride is ``ceil(t * (1 - overlap))``. Records with fewer than ``t``
    usable frames yield an empty list.
    """
    provider = provider or ToyFeatureProvider()
    usable = [(f, b) for f, b in record.frames if f <= record.critical_frame]
    starts = window_starts(len(usable), t, overlap)
    if not starts:
        logger.debug("record %s shorter than window length %d; skipped", record.pedestrian_id, t)
        return []
    intent = 1 if record.intent == CROSS else 0
    out = []
    for s in starts:
        chunk = usable[s:s + t]
        frames = [f for f, _ in chunk]
        local, global_ = provider.features(record, frames)
        out.append(ObservationSequence(
            local_feats=local,
            global_feats=global_,
            boxes=np.array([b for _, b in chunk]),
            intent=intent,
            reasons=tuple(record.reasons),
            pedestrian_id=record.pedestrian_id,
            frames=tuple(frames),
        ))
    return out


def window_corpus(records, t, overlap=0.6, provider=None):
    provider = provider or ToyFeatureProvider()
    out, skipped = [], 0
    for rec in records:
        w = window(rec, t, overlap, provider)
        skipped += not w
        out.extend(w)
    if skipped:
        logger.info("skipped %d record(s) shorter than %d frames", skipped, t)
    return out


def to_arrays(sequences, n_reasons):
    """Stack windows into estimator inputs ``X (N, t, 2*d_v+4)``, ``y (N,)``, ``R (N, n)``."""
    if not sequences:
        raise ValueError("no observation windows")
    X = np.stack([s.stacked() for s in sequences])
    y = np.array([s.intent for s in sequences], dtype=np.int64)
    R = np.zeros((len(sequences), n_reasons), dtype=np.int64)
    for i, s in enumerate(sequences):
        R[i, list(s.reasons)] = 1
    return X, y, R


def split(corpus, ratios=(0.7, 0.1, 0.2), seed=0):
    """Seeded train/val/test split at pedestrian granularity.

    Pedestrian counts are ``floor(ratio * N)`` with the remainder handed out
    by largest fractional part.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if len(ratios) != 3 or np.any(ratios < 0) or not np.isclose(ratios.sum(), 1.0):
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    ids = sorted({r.pedestrian_id for r in corpus})
    n = len(ids)
    raw = ratios * n
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    order = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum(counts)
    part_of = {}
    for rank, idx in enumerate(order):
        part_of[ids[idx]] = int(np.searchsorted(bounds, rank, side="right"))
    parts = ([], [], [])
    for rec in corpus:
        parts[part_of[rec.pedestrian_id]].append(rec)
    return parts
