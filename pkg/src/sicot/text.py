"""Title tokenization, frequency-filtered vocabulary and word-embedding tables."""
from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import DimensionError, EmbeddingDimensionError, FormatError, MissingFileError


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return (
        0x3040 <= cp <= 0x30FF  # kana
        or 0x3400 <= cp <= 0x4DBF
        or 0x4E00 <= cp <= 0x9FFF
        or 0xAC00 <= cp <= 0xD7AF  # hangul
        or 0xF900 <= cp <= 0xFAFF
        or 0x20000 <= cp <= 0x2FA1F
    )


def _strip_punct(text: str) -> str:
    return "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in text)


def _split_cjk(chunk: str) -> list[str]:
    out, run = [], []
    for ch in chunk:
        if _is_cjk(ch):
            if run:
                out.append("".join(run))
                run = []
            out.append(ch)
        else:
            run.append(ch)
    if run:
        out.append("".join(run))
    return out


def tokenize(raw_title: str) -> list[str]:
    """Lowercase, replace punctuation with spaces and split on whitespace.

    A title with no whitespace at all that contains CJK characters is split into
    per-character unigrams (runs of non-CJK characters stay together).
    """
    words = _strip_punct(raw_title.lower()).split()
    if len(raw_title.split()) == 1 and any(_is_cjk(ch) for ch in raw_title):
        return [tok for w in words for tok in _split_cjk(w)]
    return words


@dataclass
class Vocab:
    words: tuple
    doc_frequency: tuple
    dropped_frequent: tuple = field(default=(), compare=False)
    dropped_infrequent: tuple = field(default=(), compare=False)

    def __post_init__(self):
        self.words = tuple(self.words)
        self.doc_frequency = tuple(int(f) for f in self.doc_frequency)
        if len(set(self.words)) != len(self.words):
            raise ValueError("vocabulary words must be unique")
        if len(self.doc_frequency) != len(self.words):
            raise ValueError("one document frequency per word required")
        self._index = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word) -> bool:
        return word in self._index

    def index(self, word: str) -> Optional[int]:
        return self._index.get(word)

    def save(self, path) -> None:
        lines = [f"{w}\t{f}\n" for w, f in zip(self.words, self.doc_frequency)]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        path = Path(path)
        if not path.exists():
            raise MissingFileError(f"vocab file not found: {path}")
        words, freqs = [], []
        for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise FormatError("expected '<word>\\t<doc_frequency>'", n)
            try:
                freqs.append(int(parts[1]))
            except ValueError:
                raise FormatError(f"bad document frequency {parts[1]!r}", n) from None
            words.append(parts[0])
        return cls(words, freqs)


def build_vocab(corpus: Sequence[Sequence[str]], drop_fraction: float = 0.05) -> Vocab:
    """Keep words after removing the ``ceil(drop_fraction * V)`` highest and lowest
    document-frequency words. Ties at either cut drop the lexicographically earlier word.
    Kept words are indexed by descending frequency, then alphabetically.
    """
    if not 0 <= drop_fraction < 0.5:
        raise ValueError("drop_fraction must lie in [0, 0.5)")
    df: Counter = Counter()
    for doc in corpus:
        df.update(set(doc))
    if not df:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    V = len(df)
    k = math.ceil(drop_fraction * V)
    if 2 * k >= V and k > 0:
        raise ValueError(f"dropping {k} words from each end of a {V}-word vocabulary leaves nothing")
    by_rank = sorted(df, key=lambda w: (-df[w], w))
    top = by_rank[:k]
    top_set = set(top)
    bottom = [w for w in sorted(df, key=lambda w: (df[w], w)) if w not in top_set][:k]
    dropped = top_set | set(bottom)
    kept = [w for w in by_rank if w not in dropped]
    return Vocab(
        kept,
        [df[w] for w in kept],
        dropped_frequent=tuple(top),
        dropped_infrequent=tuple(bottom),
    )


@dataclass
class TitleRecord:
    sample_id: str
    raw_title: str
    tokens: list

    @property
    def droppable(self) -> bool:
        """No in-vocabulary words survived; such records are skipped in training."""
        return not self.tokens


def encode(raw_title: str, vocab: Vocab, sample_id: str = "") -> TitleRecord:
    tokens = [i for i in (vocab.index(w) for w in tokenize(raw_title)) if i is not None]
    return TitleRecord(sample_id, raw_title, tokens)


class EmbeddingTable:
    """Word-embedding matrix (V x d), one row per vocabulary index."""

    def __init__(self, matrix, trainable: bool = True):
        matrix = np.array(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("embedding matrix has non-finite entries")
        self.weight = Tensor(matrix, requires_grad=trainable, name="embeddings")
        self.trainable = trainable
        self.random_rows = 0

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def __len__(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def random(cls, vocab_size: int, dim: int, seed: int = 0, trainable: bool = True) -> "EmbeddingTable":
        rng = np.random.default_rng(seed)
        table = cls(rng.uniform(-0.5 / dim, 0.5 / dim, size=(vocab_size, dim)), trainable)
        table.random_rows = vocab_size
        return table

    def save(self, path, vocab: Vocab) -> None:
        """Write word2vec text format; floats use shortest round-trip repr."""
        if len(vocab) != len(self):
            raise ValueError("vocabulary and table sizes differ")
        lines = [f"{len(self)} {self.dim}\n"]
        for w, row in zip(vocab.words, self.weight.data):
            lines.append(w + " " + " ".join(repr(float(v)) for v in row) + "\n")
        Path(path).write_text("".join(lines), encoding="utf-8")


def read_word2vec_text(path) -> tuple[int, dict]:
    """Parse a word2vec text file into ``(dim, {word: vector})``."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"embedding file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError("header must be '<V> <d>'", 1)
        try:
            n_words, dim = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError("header must be '<V> <d>'", 1) from None
        vectors = {}
        for n, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if parts == [""]:
                continue
            if len(parts) != dim + 1:
                raise FormatError(f"expected {dim} values, found {len(parts) - 1}", n)
            try:
                vectors[parts[0]] = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise FormatError("non-numeric embedding value", n) from None
    if len(vectors) != n_words:
        raise FormatError(f"header announces {n_words} words, file has {len(vectors)}", 1)
    return dim, vectors


def load_embeddings(path, vocab: Vocab, dim: int, seed: int = 0, trainable: bool = True) -> EmbeddingTable:
    """Rows for words present in ``path`` are copied; others are drawn uniformly from
    ``[-0.5/dim, 0.5/dim]``. ``path=None`` gives a fully random, seeded table."""
    if path is None:
        return EmbeddingTable.random(len(vocab), dim, seed=seed, trainable=trainable)
    file_dim, vectors = read_word2vec_text(path)
    if file_dim != dim:
        raise EmbeddingDimensionError(f"embedding file {path} has dimension {file_dim}, model dimension is {dim}", 1)
    return embeddings_from_vectors(vectors, vocab, dim, seed, trainable)


def embeddings_from_vectors(vectors: dict, vocab: Vocab, dim: int, seed: int = 0,
                            trainable: bool = True) -> EmbeddingTable:
    """Copy known rows from a ``{word: vector}`` mapping, seeded random for the rest."""
    table = EmbeddingTable.random(len(vocab), dim, seed=seed, trainable=trainable)
    found = 0
    for i, w in enumerate(vocab.words):
        vec = vectors.get(w)
        if vec is not None:
            if len(vec) != dim:
                raise DimensionError(f"vector for {w!r} has dimension {len(vec)}, expected {dim}")
            table.weight.data[i] = vec
            found += 1
    table.random_rows = len(vocab) - found
    return table


def load_embedding_table(path, vocab: Vocab, trainable: bool = True) -> EmbeddingTable:
    """Strict reload of a table written by :meth:`EmbeddingTable.save`."""
    dim, vectors = read_word2vec_text(path)
    missing = [w for w in vocab.words if w not in vectors]
    if missing:
        raise FormatError(f"{len(missing)} vocabulary words absent from {path}, e.g. {missing[0]!r}")
    return EmbeddingTable(np.stack([vectors[w] for w in vocab.words]) if len(vocab) else np.zeros((0, dim)), trainable)


def corpus_tokens(titles: Iterable[str]) -> list[list[str]]:
    return [tokenize(t) for t in titles]
