"""Synthetic speech-feature corpora, the segment archive format, and
per-utterance feature normalization.

A corpus is a list of word segments. Each segment is a T x D matrix of frame
features plus metadata (language, speaker, optional word label, utterance id,
position within the utterance, frame span). Synthetic generation renders each
word type as a fixed phone sequence: every phone contributes a random number
of copies of its prototype vector, shifted by an additive per-speaker offset
and i.i.d. Gaussian frame noise. Word boundaries are always exact; the
zero-resource condition is simulated by hiding word labels, never boundaries.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

ARCHIVE_MAGIC = b"AWE0"
MISSING_LABEL = "-"


class CorpusError(Exception):
    """Raised for invalid corpora or corpus construction requests."""


class ArchiveError(CorpusError):
    """Archive read/write failure with a machine-checkable kind."""

    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(f"{kind}: {message}")


@dataclass(frozen=True)
class LanguageSpec:
    """One synthetic language: its vocabulary size, phone inventory, and the
    fraction of its vocabulary drawn from the inventory-wide shared word pool
    (languages on the same inventory are "related"; shared types are their
    cognates)."""

    name: str
    vocab_size: int
    phone_inventory_id: str = "inv0"
    shared_vocab_fraction: float = 0.0


@dataclass(frozen=True)
class SynthSpec:
    """Deterministic recipe for a synthetic corpus (seed included)."""

    seed: int = 0
    phone_count: int = 20
    phone_dim: int = 13
    languages: tuple[LanguageSpec, ...] = (LanguageSpec("lang0", 12),)
    speakers_per_language: int = 4
    tokens_per_type: int = 10
    frames_per_phone_range: tuple[int, int] = (2, 5)
    phones_per_word_range: tuple[int, int] = (3, 6)
    noise_sigma: float = 0.3
    speaker_offset_sigma: float = 0.5
    words_per_utterance_range: tuple[int, int] = (4, 9)
    topic_count: int = 0
    topic_word_sets: tuple[tuple[int, ...], ...] | None = None

    def validate(self) -> None:
        if self.noise_sigma < 0:
            raise CorpusError("noise_sigma must be >= 0")
        if self.speaker_offset_sigma < 0:
            raise CorpusError("speaker_offset_sigma must be >= 0")
        if self.phone_count < 1 or self.phone_dim < 1:
            raise CorpusError("phone_count and phone_dim must be >= 1")
        if self.speakers_per_language < 1 or self.tokens_per_type < 1:
            raise CorpusError("speakers_per_language and tokens_per_type must be >= 1")
        if not self.languages:
            raise CorpusError("at least one language required")
        names = [lang.name for lang in self.languages]
        if len(set(names)) != len(names):
            raise CorpusError("language names must be unique")
        for lang in self.languages:
            if lang.vocab_size < 1:
                raise CorpusError(f"vocab_size must be >= 1 for {lang.name}")
            if not 0.0 <= lang.shared_vocab_fraction <= 1.0:
                raise CorpusError(f"shared_vocab_fraction out of [0,1] for {lang.name}")
        for name, rng_pair in (
            ("frames_per_phone_range", self.frames_per_phone_range),
            ("phones_per_word_range", self.phones_per_word_range),
            ("words_per_utterance_range", self.words_per_utterance_range),
        ):
            lo, hi = rng_pair
            if lo < 1 or hi < lo:
                raise CorpusError(f"{name} must satisfy 1 <= lo <= hi")
        if self.topic_word_sets is not None:
            if len(self.topic_word_sets) < 2:
                raise CorpusError("topic_word_sets needs >= 2 topics")
            for topic in self.topic_word_sets:
                if not topic:
                    raise CorpusError("empty topic word set")
        elif self.topic_count == 1:
            raise CorpusError("topic_count must be 0 or >= 2")


@dataclass(eq=False)
class SegmentRecord:
    """One spoken-word token: frame features plus metadata.

    word_label is None in zero-resource views. span is (start, end) in frames
    relative to the utterance, with end - start == features.shape[0].
    """

    id: str
    language: str
    speaker: str
    word_label: str | None
    utterance_id: str
    position: int
    span: tuple[int, int]
    features: np.ndarray


@dataclass(eq=False)
class Corpus:
    """Ordered segments plus the utterance membership map and a split tag."""

    segments: list[SegmentRecord]
    utterances: dict[str, list[str]]
    split: str = "train"
    _by_id: dict[str, SegmentRecord] = field(init=False, repr=False)

    def __post_init__(self):
        by_id = {}
        for seg in self.segments:
            if seg.id in by_id:
                raise CorpusError(f"duplicate segment id {seg.id!r}")
            by_id[seg.id] = seg
        for utt_id, member_ids in self.utterances.items():
            positions = []
            for seg_id in member_ids:
                seg = by_id.get(seg_id)
                if seg is None:
                    raise ArchiveError(
                        "dangling utterance reference",
                        f"utterance {utt_id!r} references unknown segment {seg_id!r}",
                    )
                if seg.utterance_id != utt_id:
                    raise CorpusError(
                        f"segment {seg_id!r} listed under {utt_id!r} "
                        f"but carries utterance_id {seg.utterance_id!r}"
                    )
                positions.append(seg.position)
            if positions != sorted(positions):
                raise CorpusError(f"utterance {utt_id!r} member list not position-sorted")
        self._by_id = by_id

    @classmethod
    def build(cls, segments: list[SegmentRecord], split: str = "train") -> "Corpus":
        """Derive the utterance map from segment metadata."""
        grouped: dict[str, list[SegmentRecord]] = {}
        for seg in segments:
            grouped.setdefault(seg.utterance_id, []).append(seg)
        utterances = {
            utt_id: [s.id for s in sorted(members, key=lambda s: s.position)]
            for utt_id, members in grouped.items()
        }
        return cls(segments=segments, utterances=utterances, split=split)

    def segment(self, seg_id: str) -> SegmentRecord:
        return self._by_id[seg_id]

    def utterance_frames(self, utt_id: str) -> np.ndarray:
        """Concatenated frames of an utterance's segments in position order."""
        parts = [self._by_id[s].features for s in self.utterances[utt_id]]
        return np.concatenate(parts, axis=0)

    def feature_dim(self) -> int:
        if not self.segments:
            raise CorpusError("empty corpus has no feature dimension")
        return int(self.segments[0].features.shape[1])


def corpus_equal(a: Corpus, b: Corpus) -> bool:
    """Field-by-field equality, exact on every float bit."""
    if a.split != b.split or len(a.segments) != len(b.segments):
        return False
    if a.utterances != b.utterances:
        return False
    for sa, sb in zip(a.segments, b.segments):
        if (
            sa.id != sb.id
            or sa.language != sb.language
            or sa.speaker != sb.speaker
            or sa.word_label != sb.word_label
            or sa.utterance_id != sb.utterance_id
            or sa.position != sb.position
            or sa.span != sb.span
        ):
            return False
        if sa.features.shape != sb.features.shape:
            return False
        if not np.array_equal(sa.features, sb.features):
            return False
    return True


# ---------------------------------------------------------------------------
# synthetic generation


def _distinct_sequences(rng, count, phone_count, length_range, taken, where):
    """Draw `count` distinct phone-index tuples not present in `taken`."""
    lo, hi = length_range
    capacity = sum(phone_count**n for n in range(lo, hi + 1)) - len(taken)
    if count > capacity:
        raise CorpusError(
            f"vocab larger than distinct phone-sequence space for {where} "
            f"(requested {count}, capacity {capacity})"
        )
    out = []
    seen = set(taken)
    while len(out) < count:
        n = int(rng.integers(lo, hi + 1))
        seq = tuple(int(p) for p in rng.integers(0, phone_count, size=n))
        if seq in seen:
            continue
        seen.add(seq)
        out.append(seq)
    return out


def topic_sets(spec: SynthSpec, vocab_size: int) -> tuple[tuple[int, ...], ...] | None:
    """The topic word sets in effect for a language of the given vocabulary.

    Explicit sets win. Otherwise topic_count >= 2 builds overlapping
    sliding-window sets over the type indices, so the co-occurrence oracle is
    graded (words can share zero, one, or two topics) rather than binary.
    """
    if spec.topic_word_sets is not None:
        return spec.topic_word_sets
    if spec.topic_count < 2:
        return None
    base = vocab_size / spec.topic_count
    width = max(2, int(np.ceil(1.5 * base)))
    sets = []
    for t in range(spec.topic_count):
        start = int(round(t * base))
        sets.append(tuple((start + k) % vocab_size for k in range(width)))
    return tuple(sets)


def topic_similarity(spec: SynthSpec, vocab_size: int, type_a: int, type_b: int) -> float:
    """Analytic co-occurrence similarity of two word types under the
    generator's sampling model (topic uniform, words i.i.d. uniform within the
    topic's set): p(a, b) / (p(a) p(b)) — a PMI ratio without the log, so word
    pairs that never co-occur score 0 instead of -inf."""
    sets = topic_sets(spec, vocab_size)
    if sets is None:
        raise CorpusError("spec has no topic structure")
    n_topics = len(sets)
    p_a = p_b = p_ab = 0.0
    for members in sets:
        size = len(members)
        in_a = type_a in members
        in_b = type_b in members
        p_a += in_a / size / n_topics
        p_b += in_b / size / n_topics
        p_ab += (in_a and in_b) / (size * size) / n_topics
    if p_a == 0.0 or p_b == 0.0:
        raise CorpusError(f"type {type_a if p_a == 0 else type_b} not in any topic")
    return p_ab / (p_a * p_b)


def generate_synthetic_corpus(spec: SynthSpec) -> Corpus:
    """Render a corpus deterministically from the spec's seed.

    Consumption order of the single RNG stream is fixed: phone inventories,
    shared pools, per-language vocabularies, speaker offsets, utterance
    composition, then frame rendering. Features are quantized to the float32
    grid (held as float64) so archives round-trip bit-exactly.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    inventory_ids = []
    for lang in spec.languages:
        if lang.phone_inventory_id not in inventory_ids:
            inventory_ids.append(lang.phone_inventory_id)

    inventories = {}
    for inv in inventory_ids:
        protos = rng.standard_normal((spec.phone_count, spec.phone_dim))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        inventories[inv] = protos

    # Shared pools: one list of phone sequences per inventory, sized for the
    # largest shared demand among its languages.
    pool_need = {inv: 0 for inv in inventory_ids}
    for lang in spec.languages:
        n_shared = int(round(lang.shared_vocab_fraction * lang.vocab_size))
        pool_need[lang.phone_inventory_id] = max(pool_need[lang.phone_inventory_id], n_shared)
    pools = {}
    for inv in inventory_ids:
        pools[inv] = _distinct_sequences(
            rng, pool_need[inv], spec.phone_count, spec.phones_per_word_range, set(), f"pool {inv}"
        )

    vocab = {}  # language name -> list of phone sequences, index = type id
    for lang in spec.languages:
        n_shared = int(round(lang.shared_vocab_fraction * lang.vocab_size))
        shared = list(pools[lang.phone_inventory_id][:n_shared])
        private = _distinct_sequences(
            rng,
            lang.vocab_size - n_shared,
            spec.phone_count,
            spec.phones_per_word_range,
            set(shared),
            lang.name,
        )
        vocab[lang.name] = shared + private

    offsets = {}
    for lang in spec.languages:
        offsets[lang.name] = rng.normal(
            0.0, spec.speaker_offset_sigma, (spec.speakers_per_language, spec.phone_dim)
        )

    segments = []
    for lang in spec.languages:
        protos = inventories[lang.phone_inventory_id]
        sets = topic_sets(spec, lang.vocab_size)
        total_tokens = lang.vocab_size * spec.tokens_per_type

        # Utterance composition: a list of per-utterance word-type-index lists.
        utterance_types: list[list[int]] = []
        lo, hi = spec.words_per_utterance_range
        if sets is None:
            multiset = np.repeat(np.arange(lang.vocab_size), spec.tokens_per_type)
            order = rng.permutation(multiset)
            cursor = 0
            while cursor < total_tokens:
                n = int(rng.integers(lo, hi + 1))
                utterance_types.append([int(w) for w in order[cursor : cursor + n]])
                cursor += n
        else:
            produced = 0
            while produced < total_tokens:
                topic = int(rng.integers(0, len(sets)))
                n = min(int(rng.integers(lo, hi + 1)), total_tokens - produced)
                members = np.asarray(sets[topic], dtype=int)
                picks = rng.integers(0, len(members), size=n)
                utterance_types.append([int(members[p]) for p in picks])
                produced += n

        seg_counter = 0
        for utt_index, types in enumerate(utterance_types):
            utt_id = f"{lang.name}_u{utt_index:05d}"
            speaker_idx = int(rng.integers(0, spec.speakers_per_language))
            speaker = f"{lang.name}_spk{speaker_idx}"
            offset = offsets[lang.name][speaker_idx]
            cursor = 0
            for position, type_idx in enumerate(types):
                frames = []
                f_lo, f_hi = spec.frames_per_phone_range
                for phone in vocab[lang.name][type_idx]:
                    n_frames = int(rng.integers(f_lo, f_hi + 1))
                    noise = rng.normal(0.0, spec.noise_sigma, (n_frames, spec.phone_dim))
                    frames.append(protos[phone][None, :] + offset[None, :] + noise)
                feats = np.concatenate(frames, axis=0)
                feats = feats.astype(np.float32).astype(np.float64)
                t = feats.shape[0]
                segments.append(
                    SegmentRecord(
                        id=f"{lang.name}_s{seg_counter:06d}",
                        language=lang.name,
                        speaker=speaker,
                        word_label=f"{lang.name}_w{type_idx:03d}",
                        utterance_id=utt_id,
                        position=position,
                        span=(cursor, cursor + t),
                        features=feats,
                    )
                )
                seg_counter += 1
                cursor += t

    return Corpus.build(segments, split="train")


def speaker_normalize(corpus: Corpus) -> Corpus:
    """Per utterance, scale each feature coordinate to zero mean and unit
    variance over all frames of that utterance (population variance).
    Coordinates with zero variance are mean-centered only."""
    new_segments = {}
    for utt_id, member_ids in corpus.utterances.items():
        stacked = np.concatenate([corpus.segment(s).features for s in member_ids], axis=0)
        mean = stacked.mean(axis=0)
        var = stacked.var(axis=0)
        scale = np.where(var > 1e-18, np.sqrt(var), 1.0)
        for seg_id in member_ids:
            seg = corpus.segment(seg_id)
            new_segments[seg_id] = replace(seg, features=(seg.features - mean) / scale)
    segments = [new_segments[s.id] for s in corpus.segments]
    return Corpus(segments=segments, utterances=dict(corpus.utterances), split=corpus.split)


def strip_labels(corpus: Corpus) -> Corpus:
    """Zero-resource view: same corpus with all word labels hidden."""
    segments = [replace(seg, word_label=None) for seg in corpus.segments]
    return Corpus(segments=segments, utterances=dict(corpus.utterances), split=corpus.split)


def split_corpus(
    corpus: Corpus, fractions: tuple[float, float, float] = (0.8, 0.1, 0.1), seed: int = 0
) -> tuple[Corpus, Corpus, Corpus]:
    """Seeded utterance-level split into train/dev/test corpora."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise CorpusError("split fractions must sum to 1")
    utt_ids = sorted(corpus.utterances)
    rng = np.random.default_rng(seed)
    order = [utt_ids[i] for i in rng.permutation(len(utt_ids))]
    n = len(order)
    n_train = int(round(fractions[0] * n))
    n_dev = int(round(fractions[1] * n))
    buckets = {
        "train": set(order[:n_train]),
        "dev": set(order[n_train : n_train + n_dev]),
        "test": set(order[n_train + n_dev :]),
    }
    out = []
    for split_name in ("train", "dev", "test"):
        members = buckets[split_name]
        segs = [seg for seg in corpus.segments if seg.utterance_id in members]
        utts = {u: list(corpus.utterances[u]) for u in corpus.utterances if u in members}
        out.append(Corpus(segments=segs, utterances=utts, split=split_name))
    return tuple(out)


# ---------------------------------------------------------------------------
# archive format
#
# A segment archive is a directory holding manifest.tsv (one row per segment:
# id, language, speaker, word label or "-", utterance id, position, start,
# end, relpath) and one binary file per segment: 16-byte header of magic
# AWE0 + u32 LE frame count + u32 LE feature dim + u32 LE reserved zero,
# followed by T*D little-endian float32 values, row-major. The corpus split
# tag lives in a one-line `split` sidecar (the manifest schema has no split
# column; round-trips must preserve every Corpus field).


def write_archive(corpus: Corpus, path) -> None:
    from pathlib import Path

    root = Path(path)
    (root / "segments").mkdir(parents=True, exist_ok=True)
    rows = []
    for index, seg in enumerate(corpus.segments):
        relpath = f"segments/{index:06d}.bin"
        if seg.word_label == MISSING_LABEL:
            raise CorpusError("word_label '-' collides with the missing-label marker")
        label = MISSING_LABEL if seg.word_label is None else seg.word_label
        rows.append(
            "\t".join(
                [
                    seg.id,
                    seg.language,
                    seg.speaker,
                    label,
                    seg.utterance_id,
                    str(seg.position),
                    str(seg.span[0]),
                    str(seg.span[1]),
                    relpath,
                ]
            )
        )
        feats = np.ascontiguousarray(seg.features, dtype="<f4")
        t, d = feats.shape
        header = ARCHIVE_MAGIC + struct.pack("<III", t, d, 0)
        (root / relpath).write_bytes(header + feats.tobytes())
    (root / "manifest.tsv").write_text("\n".join(rows) + ("\n" if rows else ""), encoding="utf-8")
    (root / "split").write_text(corpus.split + "\n", encoding="utf-8")


def read_archive(path) -> Corpus:
    from pathlib import Path

    root = Path(path)
    manifest = root / "manifest.tsv"
    if not manifest.is_file():
        raise ArchiveError("bad manifest", f"no manifest.tsv under {root}")
    segments = []
    dim = None
    for line_no, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 9:
            raise ArchiveError("bad manifest", f"line {line_no}: expected 9 fields, got {len(fields)}")
        seg_id, language, speaker, label, utt_id, position, start, end, relpath = fields
        try:
            position, start, end = int(position), int(start), int(end)
        except ValueError:
            raise ArchiveError("bad manifest", f"line {line_no}: non-integer position/span") from None
        blob_path = root / relpath
        if not blob_path.is_file():
            raise ArchiveError("payload length mismatch", f"line {line_no}: missing payload {relpath}")
        blob = blob_path.read_bytes()
        if len(blob) < 16 or blob[:4] != ARCHIVE_MAGIC:
            raise ArchiveError("bad magic", f"{relpath}: bad or truncated header")
        t, d, reserved = struct.unpack("<III", blob[4:16])
        if reserved != 0:
            raise ArchiveError("bad magic", f"{relpath}: nonzero reserved header field")
        payload = blob[16:]
        if len(payload) != 4 * t * d:
            raise ArchiveError(
                "payload length mismatch",
                f"{relpath}: expected {4 * t * d} payload bytes, got {len(payload)}",
            )
        if end - start != t:
            raise ArchiveError("dimension mismatch", f"{relpath}: span length != frame count")
        if dim is None:
            dim = d
        elif d != dim:
            raise ArchiveError("dimension mismatch", f"{relpath}: D={d} differs from {dim}")
        feats = np.frombuffer(payload, dtype="<f4").reshape(t, d).astype(np.float64)
        segments.append(
            SegmentRecord(
                id=seg_id,
                language=language,
                speaker=speaker,
                word_label=None if label == MISSING_LABEL else label,
                utterance_id=utt_id,
                position=position,
                span=(start, end),
                features=feats,
            )
        )
    split_file = root / "split"
    split = split_file.read_text(encoding="utf-8").strip() if split_file.is_file() else "train"
    return Corpus.build(segments, split=split)
