"""Reason vocabulary: the textual explanation classes and their intent class."""

import json
from dataclasses import dataclass

CROSS = "C"
NO_CROSS = "NC"

CROSS_REASONS = (
    "Waiting to cross with a neighbouring pedestrian",
    "Waiting for a safe passage to cross",
    "Waiting to cross with a group of pedestrians",
    "Waiting for the signal to turn red",
    "Waiting since the ego-vehicle speed is high",
    "Waiting since the vehicle speed is high",
    "Waiting for vehicles to slow down",
    "Waiting while giving right-of-way to ego-vehicle",
    "Pedestrian acknowledges ego-vehicle to stop",
    "Pedestrian intends to cross since the signal is red",
    "Pedestrian intends to cross since it’s a safe passage",
    "Pedestrian intends to cross since ego-vehicle speed is slow",
    "Pedestrian intends to cross since vehicle speed is slow",
    "Neglects the ego-vehicle",
)

NO_CROSS_REASONS = (
    "Two pedestrians just interacting (on road-side)",
    "Group of pedestrians just interacting (on road-side)",
    "Pedestrians doing their work on road-side",
)


@dataclass(frozen=True)
class Reason:
    id: int
    text: str
    intent_class: str


class ReasonVocabulary:
    """Ordered reason classes with dense ids ``0..n-1``.

    Parameters
    ----------
    entries : sequence of (text, intent_class)
        Listed in id order. ``intent_class`` is ``"C"`` or ``"NC"``.
    """

    def __init__(self, entries):
        reasons = []
        seen = set()
        for i, (text, cls) in enumerate(entries):
            if cls not in (CROSS, NO_CROSS):
                raise ValueError(f"reason {i}: intent class must be C or NC, got {cls!r}")
            if text in seen:
                raise ValueError(f"reason {i}: duplicate text {text!r}")
            seen.add(text)
            reasons.append(Reason(i, text, cls))
        if not reasons:
            raise ValueError("vocabulary is empty")
        self.entries = tuple(reasons)

    @classmethod
    def default(cls):
        return cls([(t, CROSS) for t in CROSS_REASONS] + [(t, NO_CROSS) for t in NO_CROSS_REASONS])

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __eq__(self, other):
        return isinstance(other, ReasonVocabulary) and self.entries == other.entries

    @property
    def n(self):
        return len(self.entries)

    @property
    def texts(self):
        return [r.text for r in self.entries]

    def ids_for(self, intent_class):
        return [r.id for r in self.entries if r.intent_class == intent_class]

    def class_of(self, reason_id):
        return self.entries[reason_id].intent_class

    def index(self, text):
        for r in self.entries:
            if r.text == text:
                return r.id
        raise KeyError(text)

    def to_json(self):
        return json.dumps(
            {"reasons": [{"id": r.id, "intent_class": r.intent_class, "text": r.text} for r in self]},
            indent=2,
            ensure_ascii=False,
        ) + "\n"

    @classmethod
    def from_json(cls, text):
        rows = json.loads(text)["reasons"]
        rows = sorted(rows, key=lambda r: r["id"])
        if [r["id"] for r in rows] != list(range(len(rows))):
            raise ValueError("vocabulary ids must be dense 0..n-1")
        return cls([(r["text"], r["intent_class"]) for r in rows])

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())
