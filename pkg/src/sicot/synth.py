"""Synthetic long-tailed multimodal data: feature vectors, noisy titles and word vectors.

Class sizes follow an exponential profile ``n_c = round(n_max * IF ** (-c / (C - 1)))``.

Each class owns a latent semantic vector. Its visual prototype is a fixed linear
image of that vector mixed with a class-specific component, and its words are
embedded near it, so titles and images describe the same underlying product.
Every tail class is attached to a head "parent": the tail latent is a
perturbation of the parent's, and its titles reuse the parent's family words,
so head and tail classes share part of the vocabulary. Signature words are
allocated so that each appears in roughly the same number of titles regardless
of class size, which keeps the word distribution far flatter than the image one.

Two kinds of noise sit on top: promotion words drawn from a small global pool
(very frequent, so the vocabulary filter removes them from the top), and one-off
rare tokens on a fixed fraction of titles (removed from the bottom, and absent
from the generated word vectors).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, MissingFileError
from .text import tokenize

MANIFEST_MAGIC = "#sicot-manifest v1"


@dataclass
class LongTailSpec:
    num_classes: int = 100
    n_max: int = 500
    imbalance_factor: float = 50.0
    head_tail_threshold: int = 100
    feature_dim: int = 32
    prototype_norm: float = 5.0
    noise_sigma: float = 0.75
    test_per_class: int = 20
    # titles
    signature_per_title: int = 2
    signature_word_freq: int = 25
    family_per_title: int = 1
    noise_per_title: int = 2
    noise_vocab: int = 80
    # fraction of titles carrying one unique out-of-vocabulary token (typos, codes)
    rare_token_rate: float = 0.05
    shared_fraction: float = 0.12
    max_signature_freq_ratio: float = 5.0
    # latent semantics and pretrained word vectors
    embedding_dim: int = 32
    embedding_scale: float = 1.0
    word_noise: float = 0.5
    # share of each visual prototype explained by the class latent, in [0, 1]
    visual_semantic_coupling: float = 0.8
    # latent similarity of a tail class to its head parent, in [0, 1)
    parent_similarity: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.imbalance_factor < 1:
            raise ValueError("imbalance_factor must be >= 1")
        if self.n_max < 1 or self.test_per_class < 0 or self.feature_dim < 1 or self.embedding_dim < 1:
            raise ValueError("n_max, feature_dim and embedding_dim must be positive, test_per_class nonnegative")
        if self.noise_sigma < 0 or self.prototype_norm <= 0 or self.word_noise < 0 or self.embedding_scale <= 0:
            raise ValueError("noise levels must be nonnegative and scales positive")
        if not 0 <= self.rare_token_rate <= 1:
            raise ValueError("rare_token_rate must lie in [0, 1]")
        if not 0 <= self.shared_fraction < 1:
            raise ValueError("shared_fraction must lie in [0, 1)")
        if not 0 <= self.parent_similarity < 1:
            raise ValueError("parent_similarity must lie in [0, 1)")
        if not 0 <= self.visual_semantic_coupling <= 1:
            raise ValueError("visual_semantic_coupling must lie in [0, 1]")
        if self.signature_per_title < 1 or self.signature_word_freq < 1:
            raise ValueError("signature_per_title and signature_word_freq must be positive")


def class_counts(spec: LongTailSpec) -> list[int]:
    """Training samples per class, nonincreasing, each at least 1."""
    spec.validate()
    C = spec.num_classes
    return [max(1, round(spec.n_max * spec.imbalance_factor ** (-c / (C - 1)))) for c in range(C)]


@dataclass
class Record:
    sample_id: str
    split: str
    label: int
    features: np.ndarray
    title: str

    def __eq__(self, other):
        return (
            isinstance(other, Record)
            and (self.sample_id, self.split, self.label, self.title)
            == (other.sample_id, other.split, other.label, other.title)
            and self.features.shape == other.features.shape
            and bool(np.all(self.features == other.features))
        )


@dataclass
class DatasetManifest:
    dim: int
    num_classes: int
    records: list = field(default_factory=list)
    # provenance lines written after the header, without the leading '#'
    comments: list = field(default_factory=list)

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def train_counts(self) -> list[int]:
        counts = [0] * self.num_classes
        for r in self.records:
            if r.split == "train":
                counts[r.label] += 1
        return counts

    def arrays(self, name: str):
        recs = self.split(name)
        X = np.array([r.features for r in recs]).reshape(len(recs), self.dim)
        y = np.array([r.label for r in recs], dtype=np.int64)
        return X, y, [r.title for r in recs]


@dataclass
class GeneratorState:
    latents: np.ndarray  # (C, embedding_dim), unit norm
    prototypes: np.ndarray  # (C, feature_dim), norm prototype_norm
    parents: dict  # tail class -> head class
    signature_words: list
    family_words: dict  # head class -> words
    noise_words: list
    counts: list
    word_vectors: dict  # word -> (embedding_dim,) vector

    def write_embeddings(self, path) -> None:
        """word2vec text file of the pretrained vectors, words in sorted order."""
        words = sorted(self.word_vectors)
        dim = len(next(iter(self.word_vectors.values()))) if words else 0
        lines = [f"{len(words)} {dim}\n"]
        for w in words:
            lines.append(w + " " + " ".join(repr(float(v)) for v in self.word_vectors[w]) + "\n")
        Path(path).write_text("".join(lines), encoding="utf-8")


def _rare_slots(n: int, rate: float) -> int:
    """Titles with index i < n that carry a rare token: those where floor((i+1)*rate) steps."""
    return math.floor(n * rate)


def _has_rare(i: int, rate: float) -> bool:
    return math.floor((i + 1) * rate) > math.floor(i * rate)


def _word_budget(spec: LongTailSpec, counts: list[int], n_heads_with_children: int) -> tuple[list[int], int]:
    s = spec.signature_per_title
    sig = [max(s, round(n * s / spec.signature_word_freq)) for n in counts]
    # rare tokens are unshared, so they only enlarge the denominator
    total_sig = sum(sig) + _rare_slots(sum(counts), spec.rare_token_rate)
    noise = spec.noise_vocab if spec.noise_per_title > 0 else 0
    # shared words = noise words + family words; solve (noise + F) / (sig + noise + F) = target
    target = spec.shared_fraction
    F = (target * (total_sig + noise) - noise) / (1.0 - target)
    lowest = noise / (total_sig + noise)
    if F < 0 or (F > 0 and (n_heads_with_children == 0 or spec.family_per_title == 0)):
        bound = lowest if F < 0 else 0.0
        raise ValueError(
            f"shared-vocabulary target {target:.3f} is infeasible for these generator settings; "
            f"achievable range starts at {bound:.3f}"
        )
    return sig, int(round(F))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def generate(spec: LongTailSpec) -> tuple[DatasetManifest, GeneratorState]:
    """Build the manifest (train then test records) from ``spec``; pure in ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    C, D, E = spec.num_classes, spec.feature_dim, spec.embedding_dim
    counts = class_counts(spec)
    head = [c for c in range(C) if counts[c] > spec.head_tail_threshold]
    tail = [c for c in range(C) if counts[c] <= spec.head_tail_threshold]

    latents = _unit(rng.normal(size=(C, E)))
    parents = {}
    if head:
        rho = spec.parent_similarity
        for t in tail:
            h = int(head[rng.integers(len(head))])
            parents[t] = h
            latents[t] = _unit(rho * latents[h] + math.sqrt(1.0 - rho * rho) * latents[t])
    # fixed semantic -> visual map shared by all classes
    lift = rng.normal(size=(D, E)) / math.sqrt(E)
    own = _unit(rng.normal(size=(C, D)))
    kappa = spec.visual_semantic_coupling
    protos = spec.prototype_norm * _unit(kappa * _unit(latents @ lift.T) + math.sqrt(1.0 - kappa * kappa) * own)

    sig_counts, n_family = _word_budget(spec, counts, len(set(parents.values())))
    _check_balance(spec, counts, sig_counts)
    signature = [[f"c{c}w{j}" for j in range(k)] for c, k in enumerate(sig_counts)]
    families = {}
    fam_heads = sorted(set(parents.values()))
    if fam_heads:
        base, extra = divmod(n_family, len(fam_heads))
        w = 0
        for i, h in enumerate(fam_heads):
            k = base + (1 if i < extra else 0)
            families[h] = [f"f{w + j}" for j in range(k)]
            w += k
    noise_words = [f"promo{j}" for j in range(spec.noise_vocab)] if spec.noise_per_title > 0 else []

    scale = spec.embedding_scale * math.sqrt(E)
    vectors = {}
    for c in range(C):
        for word in signature[c]:
            vectors[word] = scale * _unit(latents[c] + spec.word_noise * rng.normal(size=E) / math.sqrt(E))
    for h, words in families.items():
        for word in words:
            vectors[word] = scale * _unit(latents[h] + spec.word_noise * rng.normal(size=E) / math.sqrt(E))
    for word in noise_words:
        vectors[word] = scale * _unit(rng.normal(size=E))

    records = []
    sample = 0
    cursor_family = {h: 0 for h in families}
    for split, per_class in (("train", counts), ("test", [spec.test_per_class] * C)):
        position = 0
        for c in range(C):
            sig = signature[c]
            key = parents.get(c, c)
            fam = families.get(key, [])
            for i in range(per_class[c]):
                feat = protos[c] + spec.noise_sigma * rng.normal(size=D)
                words = [sig[(i * spec.signature_per_title + j) % len(sig)] for j in range(spec.signature_per_title)]
                for _ in range(spec.family_per_title if fam else 0):
                    words.append(fam[cursor_family[key] % len(fam)])
                    cursor_family[key] += 1
                if noise_words:
                    words.extend(noise_words[k] for k in rng.integers(len(noise_words), size=spec.noise_per_title))
                if _has_rare(position, spec.rare_token_rate):
                    words.append(f"x{split[:2]}{position}")
                position += 1
                words = [words[k] for k in rng.permutation(len(words))]
                records.append(Record(f"s{sample:06d}", split, c, feat, " ".join(words)))
                sample += 1
    manifest = DatasetManifest(D, C, records)
    state = GeneratorState(latents, protos, parents, signature, families, noise_words, counts, vectors)
    return manifest, state


def _check_balance(spec: LongTailSpec, counts, sig_counts) -> None:
    s = spec.signature_per_title
    freqs = [n * s / k for n, k in zip(counts, sig_counts)]
    ratio = max(freqs) / min(freqs)
    if ratio > spec.max_signature_freq_ratio:
        raise ValueError(
            f"signature word frequency ratio {ratio:.2f} exceeds max_signature_freq_ratio "
            f"{spec.max_signature_freq_ratio}; raise signature_word_freq bound or lower imbalance"
        )


def signature_frequency_ratio(manifest: DatasetManifest, state: GeneratorState) -> float:
    """Most / least frequent signature word over the training titles."""
    sig = {w for words in state.signature_words for w in words}
    freq = {}
    for r in manifest.split("train"):
        for w in tokenize(r.title):
            if w in sig:
                freq[w] = freq.get(w, 0) + 1
    return max(freq.values()) / min(freq.values())


def shared_vocab_fraction(manifest: DatasetManifest, head_tail_threshold: int) -> float:
    """|head title words ∩ tail title words| / |all title words|, over the training split."""
    counts = manifest.train_counts()
    head_words, tail_words = set(), set()
    has_tail = False
    for r in manifest.split("train"):
        if counts[r.label] > head_tail_threshold:
            head_words.update(tokenize(r.title))
        else:
            has_tail = True
            tail_words.update(tokenize(r.title))
    if not has_tail:
        raise ValueError(f"no tail classes at threshold {head_tail_threshold}")
    vocab = head_words | tail_words
    if not vocab:
        return 0.0
    return len(head_words & tail_words) / len(vocab)


# ---------------------------------------------------------------------------
# manifest files


def write_manifest(manifest: DatasetManifest, path) -> None:
    """One tab-separated record per line: id, split, label, features, title."""
    lines = [f"{MANIFEST_MAGIC} dim={manifest.dim} classes={manifest.num_classes}\n"]
    for c in manifest.comments:
        if "\n" in c:
            raise ValueError("manifest comments must be single lines")
        lines.append(f"#{c}\n")
    for r in manifest.records:
        if r.sample_id.startswith("#"):
            raise ValueError(f"sample id {r.sample_id!r} may not start with '#'")
        if "\t" in r.title or "\n" in r.title:
            raise ValueError(f"title of {r.sample_id} contains a tab or newline")
        feats = ",".join(repr(float(v)) for v in r.features)
        lines.append(f"{r.sample_id}\t{r.split}\t{r.label}\t{feats}\t{r.title}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"manifest not found: {path}")
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    header = lines[0].split(" ")
    if len(header) != 4 or " ".join(header[:2]) != MANIFEST_MAGIC:
        raise FormatError(f"expected header '{MANIFEST_MAGIC} dim=<d> classes=<C>'", 1)
    try:
        dim = int(header[2].removeprefix("dim="))
        num_classes = int(header[3].removeprefix("classes="))
    except ValueError:
        raise FormatError("bad dim/classes in header", 1) from None
    if lines[-1] != "":
        # every record is newline-terminated; a missing terminator means truncation
        raise FormatError("truncated record (no line terminator)", len(lines))
    manifest = DatasetManifest(dim, num_classes)
    for n, line in enumerate(lines[1:-1], start=2):
        if line.startswith("#"):
            manifest.comments.append(line[1:])
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise FormatError(f"expected 5 tab-separated fields, found {len(parts)}", n)
        sid, split, label, feats, title = parts
        if split not in ("train", "test"):
            raise FormatError(f"unknown split {split!r}", n)
        try:
            lab = int(label)
            values = np.array([float(v) for v in feats.split(",")], dtype=np.float64) if feats else np.zeros(0)
        except ValueError:
            raise FormatError("non-numeric label or feature", n) from None
        if values.size != dim:
            raise FormatError(f"expected {dim} features, found {values.size}", n)
        if not 0 <= lab < num_classes:
            raise FormatError(f"label {lab} outside [0, {num_classes})", n)
        manifest.records.append(Record(sid, split, lab, values, title))
    return manifest


def spec_dict(spec: LongTailSpec) -> dict:
    return asdict(spec)
