"""Reason-sentence embedding providers.

Three sources produce an :class:`EmbeddingTable`:

* ``load_embeddings`` reads vectors computed elsewhere (e.g. by a sentence
  encoder) from a text file, one line per reason: ``<id> <v1> ... <vd>``.
* ``toy_embed`` hashes content words into ``d`` buckets. Reasons that share
  words end up close in cosine similarity.
* ``word_average_embed`` averages per-word vectors (GloVe text format) over
  the content words of each reason.
"""

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .checkpoint import atomic_write_text

# Dropped before hashing/averaging. Fixed so embeddings are reproducible.
STOPWORDS = frozenset(
    """a an the to for of on in with and or is are be it it's its their his her
    since while just this that them they as at by""".split()
)

_TOKEN = re.compile(r"[a-z0-9]+(?:[-'][a-z0-9]+)*")


def content_words(text):
    """Lower-cased tokens of ``text`` with stopwords removed."""
    text = text.lower().replace("’", "'")
    return [w for w in _TOKEN.findall(text) if w not in STOPWORDS]


@dataclass
class EmbeddingTable:
    """Fixed embedding per reason id.

    Attributes
    ----------
    vectors : ndarray of shape (n, d)
        Row ``i`` is the embedding of reason id ``i``.
    provider_tag : str
        ``"file"``, ``"toy-hash"`` or ``"word-average"``.
    """

    vectors: np.ndarray
    provider_tag: str

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError("embedding table must be 2-D")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding table contains non-finite values")

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def d(self):
        return self.vectors.shape[1]

    def to_text(self):
        return "".join(
            f"{i} " + " ".join(repr(float(v)) for v in row) + "\n"
            for i, row in enumerate(self.vectors)
        )

    def save(self, path):
        atomic_write_text(path, self.to_text())


def parse_embeddings(text, vocab):
    """Parse the line-per-reason format. See :func:`load_embeddings`."""
    n = len(vocab)
    rows = {}
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            rid = int(parts[0])
            values = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise ValueError(f"line {lineno}: malformed embedding row ({exc})") from None
        if not 0 <= rid < n:
            raise ValueError(f"line {lineno}: reason id {rid} outside vocabulary of size {n}")
        if rid in rows:
            raise ValueError(f"line {lineno}: duplicate reason id {rid}")
        if not values:
            raise ValueError(f"line {lineno}: reason id {rid} has no vector")
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ValueError(
                f"line {lineno}: width {len(values)} differs from earlier width {width}"
            )
        if not all(np.isfinite(values)):
            raise ValueError(f"line {lineno}: non-finite value")
        rows[rid] = values
    missing = [i for i in range(n) if i not in rows]
    if missing:
        raise ValueError(f"embedding file is missing reason id(s) {missing}")
    return EmbeddingTable(np.array([rows[i] for i in range(n)]), "file")


def load_embeddings(path, vocab):
    """Read an embedding file: one ``<id> <v1> ... <vd>`` line per reason.

    Raises
    ------
    ValueError
        On a missing or duplicate id, ragged widths or unparsable numbers.
        The message names the offending line.
    """
    with open(path, encoding="utf-8") as fh:
        return parse_embeddings(fh.read(), vocab)


def _bucket(word, d, seed):
    digest = hashlib.blake2b(f"{seed}:{word}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % d


def toy_embed(vocab, d=32, seed=0):
    """Hash-bucket bag-of-words embeddings, L2-normalised.

    Each content word adds 1 to bucket ``blake2b(seed:word) mod d``.
    """
    if d < 2:
        raise ValueError("embedding width must be at least 2")
    vectors = np.zeros((len(vocab), d))
    for reason in vocab:
        words = content_words(reason.text) or [reason.text.lower()]
        for w in words:
            vectors[reason.id, _bucket(w, d, seed)] += 1.0
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return EmbeddingTable(vectors, "toy-hash")


def load_word_vectors(path):
    """Read GloVe-style ``<word> <v1> ... <vd>`` lines into a dict."""
    table = {}
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            vec = np.array([float(v) for v in parts[1:]])
            if width is None:
                width = len(vec)
            elif len(vec) != width:
                raise ValueError(f"line {lineno}: width {len(vec)} differs from {width}")
            table[parts[0]] = vec
    return table


def word_average_embed(vocab, word_vectors):
    """Mean of the content-word vectors of each reason, L2-normalised.

    Parameters
    ----------
    vocab : ReasonVocabulary
    word_vectors : str, path or dict
        A GloVe-format file or an already loaded ``{word: vector}`` dict.

    Raises
    ------
    ValueError
        If some reason has none of its content words in the table.
    """
    if not isinstance(word_vectors, dict):
        word_vectors = load_word_vectors(word_vectors)
    rows = []
    for reason in vocab:
        hits = [word_vectors[w] for w in content_words(reason.text) if w in word_vectors]
        if not hits:
            raise ValueError(f"reason {reason.id} ({reason.text!r}) has no covered words")
        mean = np.mean(hits, axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0:
            raise ValueError(f"reason {reason.id} averages to the zero vector")
        rows.append(mean / norm)
    return EmbeddingTable(np.array(rows), "word-average")


def hashed_word_vectors(vocab, d=32, seed=0):
    """Seeded Gaussian vector for every content word in ``vocab``.

    A stand-in for pretrained word vectors in self-contained runs.
    """
    words = sorted({w for r in vocab for w in content_words(r.text)})
    table = {}
    for w in words:
        digest = hashlib.blake2b(f"{seed}:{w}".encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        table[w] = rng.standard_normal(d)
    return table


def save_word_vectors(path, table):
    atomic_write_text(
        path,
        "".join(f"{w} " + " ".join(repr(float(v)) for v in vec) + "\n" for w, vec in table.items()),
    )
