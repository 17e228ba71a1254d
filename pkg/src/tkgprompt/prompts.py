"""Turning interval-annotated fact sequences into token sequences.

Each fact becomes a block::

    [EVE] <bucket> <interval phrase words> [ENT-s] <relation words> [ENT-o]

where the bucket token is one of ``[SHT] [MID] [LNG]`` and the phrase comes
from an interval dictionary (day-range -> words). Entities are single tokens;
relations are spelled out as lowercase words, optionally completed with a
preposition from an editable lexicon.
"""

from __future__ import annotations

import bisect
import enum
import hashlib
import re
import zlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

PAD, MASK, EVE = "[PAD]", "[MASK]", "[EVE]"

SHORT_MAX_DAYS = 60
MEDIUM_MAX_DAYS = 365


class Bucket(enum.Enum):
    SHT = "SHT"
    MID = "MID"
    LNG = "LNG"

    @property
    def token(self) -> str:
        return f"[{self.value}]"


SPECIAL_TOKENS = (PAD, MASK, EVE, Bucket.SHT.token, Bucket.MID.token, Bucket.LNG.token)


def bucket_of(delta: int) -> Bucket:
    if delta < 0:
        raise ValueError(f"negative interval {delta}")
    if delta <= SHORT_MAX_DAYS:
        return Bucket.SHT
    if delta <= MEDIUM_MAX_DAYS:
        return Bucket.MID
    return Bucket.LNG


# --- interval dictionary ------------------------------------------------------

_NUMBER_WORDS = (
    "zero one two three four five six seven eight nine ten eleven twelve thirteen "
    "fourteen fifteen sixteen seventeen eighteen nineteen twenty"
).split()

_MAX_YEARS = 100


def number_word(n: int) -> str:
    return _NUMBER_WORDS[n] if 0 <= n < len(_NUMBER_WORDS) else str(n)


def _round_div(a: int, b: int) -> int:
    # round half up, unlike round()
    return (2 * a + b) // (2 * b)


def _count(n: int, unit: str) -> str:
    return f"{number_word(n)} {unit}" + ("" if n == 1 else "s")


def default_phrase(delta: int) -> str:
    if delta == 0:
        return "on the same day"
    if delta == 1:
        return "the next day"
    if delta < 7:
        return f"after {_count(delta, 'day')}"
    if delta < 14:
        return "after one week"
    if delta < 30:
        return f"after {_count(_round_div(delta, 7), 'week')}"
    if delta <= MEDIUM_MAX_DAYS:
        return f"after {_count(_round_div(delta, 30), 'month')}"
    return f"after {_count(min(_round_div(delta, 365), _MAX_YEARS), 'year')}"


@dataclass(frozen=True)
class IntervalEntry:
    lo: int
    hi: int | None  # inclusive; None means unbounded
    bucket: Bucket
    phrase: tuple[str, ...]

    def contains(self, delta: int) -> bool:
        return self.lo <= delta and (self.hi is None or delta <= self.hi)


class IntervalDictionary:
    """Ordered day ranges partitioning ``[0, inf)``, each with a bucket and phrase."""

    def __init__(self, entries: Sequence[IntervalEntry]):
        entries = list(entries)
        if not entries or entries[0].lo != 0:
            raise ValueError("interval dictionary must start at 0")
        for prev, cur in zip(entries, entries[1:]):
            if prev.hi is None or cur.lo != prev.hi + 1:
                raise ValueError(f"ranges do not partition: {prev} then {cur}")
        if entries[-1].hi is not None:
            raise ValueError("last range must be unbounded")
        for e in entries:
            if not e.phrase:
                raise ValueError(f"empty phrase for range starting at {e.lo}")
            ends = [e.lo] if e.hi is None else [e.lo, e.hi]
            if any(bucket_of(d) is not e.bucket for d in ends):
                raise ValueError(f"bucket {e.bucket.value} inconsistent with range {e.lo}..{e.hi}")
        self.entries = entries
        self._los = [e.lo for e in entries]

    @classmethod
    def default(cls) -> "IntervalDictionary":
        last_delta = _MAX_YEARS * 365 - 182  # first day rounding to _MAX_YEARS years
        entries: list[IntervalEntry] = []
        for delta in range(last_delta + 1):
            key = (bucket_of(delta), tuple(default_phrase(delta).split()))
            if entries and (entries[-1].bucket, entries[-1].phrase) == key:
                entries[-1] = IntervalEntry(entries[-1].lo, delta, *key)
            else:
                entries.append(IntervalEntry(delta, delta, *key))
        last = entries[-1]
        entries[-1] = IntervalEntry(last.lo, None, last.bucket, last.phrase)
        return cls(entries)

    def entry(self, delta: int) -> IntervalEntry:
        if delta < 0:
            raise ValueError(f"negative interval {delta}")
        return self.entries[bisect.bisect_right(self._los, delta) - 1]

    def phrase_of(self, delta: int) -> tuple[str, ...]:
        return self.entry(delta).phrase

    def words(self) -> set[str]:
        return {w for e in self.entries for w in e.phrase}

    def format(self) -> str:
        return "".join(
            f"{e.lo}\t{-1 if e.hi is None else e.hi}\t{e.bucket.value}\t{' '.join(e.phrase)}\n"
            for e in self.entries
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.format(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "IntervalDictionary":
        entries = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                lo, hi, bucket, phrase = line.split("\t")
                entries.append(
                    IntervalEntry(int(lo), None if int(hi) == -1 else int(hi), Bucket(bucket), tuple(phrase.split()))
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
        return cls(entries)


def phrase_of(delta: int, dictionary: IntervalDictionary) -> tuple[str, ...]:
    return dictionary.phrase_of(delta)


# --- relation surfaces -------------------------------------------------------

_WORD_RE = re.compile(r"[^\W_]+")


def words_of(text: str) -> list[str]:
    """Lowercase word split; punctuation and underscores act as separators."""
    return _WORD_RE.findall(text.lower())


def read_lexicon(path: str | Path | None = None) -> dict[str, str]:
    """Read ``relation_name\\tpreposition`` lines; ``None`` loads the bundled list."""
    if path is None:
        text = resources.files("tkgprompt").joinpath("data/prepositions.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    lexicon = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, _, prep = line.rpartition("\t")
        lexicon[name.strip()] = prep.strip()
    return lexicon


def relation_surface(name: str, lexicon: Mapping[str, str] | None = None) -> list[str]:
    if not name:
        raise ValueError("empty relation name")
    words = words_of(name)
    if lexicon and name in lexicon:
        words += words_of(lexicon[name])
    return words


# --- vocabulary ---------------------------------------------------------------


def entity_token(i: int) -> str:
    return f"[ENT-{i}]"


class Vocabulary:
    """Token <-> id maps. Layout: special tokens, one token per entity, then words."""

    def __init__(self, tokens: Sequence[str], num_entities: int):
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.num_entities = num_entities
        first = len(SPECIAL_TOKENS)
        self.entity_ids = np.arange(first, first + num_entities)
        for e, tid in enumerate(self.entity_ids):
            if self.tokens[tid] != entity_token(e):
                raise ValueError(f"expected {entity_token(e)} at id {tid}")
        self.pad_id = self.index[PAD]
        self.mask_id = self.index[MASK]
        self.eve_id = self.index[EVE]

    @classmethod
    def build(cls, num_entities: int, word_sources: Iterable[Iterable[str]]) -> "Vocabulary":
        words = sorted({w for src in word_sources for w in src})
        return cls(list(SPECIAL_TOKENS) + [entity_token(i) for i in range(num_entities)] + words, num_entities)

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, token: str) -> int:
        return self.index[token]

    @property
    def word_ids(self) -> np.ndarray:
        return np.arange(len(SPECIAL_TOKENS) + self.num_entities, len(self.tokens))

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index[t] for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def entity_of(self, token_id: int) -> int:
        e = token_id - self.entity_ids[0]
        if not 0 <= e < self.num_entities:
            raise KeyError(f"token id {token_id} is not an entity token")
        return int(e)

    def format(self) -> str:
        return "".join(f"{t}\t{i}\n" for i, t in enumerate(self.tokens))

    def digest(self) -> str:
        return hashlib.sha256(self.format().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.format(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        pairs = [line.rsplit("\t", 1) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
        tokens = [tok for tok, i in sorted(pairs, key=lambda p: int(p[1]))]
        n_ent = sum(1 for t in tokens if t.startswith("[ENT-"))
        return cls(tokens, n_ent)


# --- serialization ---------------------------------------------------------


@dataclass(frozen=True)
class PromptSequence:
    ids: np.ndarray  # (seq_len,), [PAD]-padded
    length: int  # number of non-pad tokens

    @property
    def tokens(self) -> np.ndarray:
        return self.ids[: self.length]


class Prompter:
    """Serializes fact sequences with a fixed vocabulary, dictionary and lexicon.

    With ``time_prompts=False`` every block is rendered as if its interval
    were zero, which erases all timing information from the sequence. A
    ``lexicon`` of ``None`` means the bundled preposition list; pass ``{}``
    to use bare relation names.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        dictionary: IntervalDictionary,
        relation_names: Sequence[str],
        lexicon: Mapping[str, str] | None = None,
        time_prompts: bool = True,
    ):
        if lexicon is None:
            lexicon = read_lexicon()
        self.vocab = vocab
        self.dictionary = dictionary
        self.time_prompts = time_prompts
        self.relation_ids = [vocab.encode(relation_surface(n, lexicon)) for n in relation_names]
        self._time_cache: dict[int, list[int]] = {}

    @classmethod
    def for_graph(
        cls,
        entity_count: int,
        relation_names: Sequence[str],
        dictionary: IntervalDictionary | None = None,
        lexicon: Mapping[str, str] | None = None,
        time_prompts: bool = True,
    ) -> "Prompter":
        dictionary = dictionary or IntervalDictionary.default()
        if lexicon is None:
            lexicon = read_lexicon()
        surfaces = [relation_surface(n, lexicon) for n in relation_names]
        vocab = Vocabulary.build(entity_count, [dictionary.words(), *surfaces])
        return cls(vocab, dictionary, relation_names, lexicon, time_prompts)

    def time_ids(self, delta: int) -> list[int]:
        if not self.time_prompts:
            delta = 0
        ids = self._time_cache.get(delta)
        if ids is None:
            entry = self.dictionary.entry(int(delta))
            ids = self.vocab.encode([entry.bucket.token, *entry.phrase])
            self._time_cache[delta] = ids
        return ids

    def block(self, s: int | None, r: int, o: int | None, delta: int) -> list[int]:
        """Token ids of one fact; a ``None`` entity slot renders as [MASK]."""
        ent = self.vocab.entity_ids
        s_id = self.vocab.mask_id if s is None else int(ent[s])
        o_id = self.vocab.mask_id if o is None else int(ent[o])
        return [self.vocab.eve_id, *self.time_ids(delta), s_id, *self.relation_ids[r], o_id]

    def pack(self, blocks: Sequence[list[int]], seq_len: int) -> PromptSequence:
        """Concatenate blocks, dropping the oldest ones until the rest fits."""
        total, keep = 0, 0
        for blk in reversed(blocks):
            if len(blk) > seq_len:
                raise ValueError(f"fact does not fit: block of {len(blk)} tokens > seq_len {seq_len}")
            if total + len(blk) > seq_len:
                break
            total += len(blk)
            keep += 1
        ids = np.full(seq_len, self.vocab.pad_id, dtype=np.int64)
        flat = [t for blk in blocks[len(blocks) - keep :] for t in blk]
        ids[: len(flat)] = flat
        return PromptSequence(ids, len(flat))

    def blocks(self, items: np.ndarray) -> list[list[int]]:
        return [self.block(s, r, o, tau) for s, r, o, tau in items.tolist()]

    def serialize(self, items: np.ndarray, seq_len: int) -> PromptSequence:
        return self.pack(self.blocks(items), seq_len)


def serialize_tig(tig, vocab: Vocabulary, dictionary: IntervalDictionary, seq_len: int, relation_names, lexicon=None):
    return Prompter(vocab, dictionary, relation_names, lexicon).serialize(tig.items, seq_len)


@dataclass(frozen=True)
class ParsedBlock:
    bucket: str
    phrase: tuple[str, ...]
    subject: str
    relation: tuple[str, ...]
    object: str


def parse_blocks(tokens: Sequence[str]) -> list[ParsedBlock]:
    """Split a detokenized sequence (without padding) back into fact blocks."""
    starts = [i for i, t in enumerate(tokens) if t == EVE]
    if tokens and (not starts or starts[0] != 0):
        raise ValueError("sequence must begin with [EVE]")
    out = []
    for a, b in zip(starts, starts[1:] + [len(tokens)]):
        blk = list(tokens[a:b])
        bucket = blk[1]
        ents = [i for i, t in enumerate(blk) if t.startswith("[ENT-") or t == MASK]
        if len(ents) != 2:
            raise ValueError(f"malformed block {blk}")
        i, j = ents
        out.append(ParsedBlock(bucket, tuple(blk[2:i]), blk[i], tuple(blk[i + 1 : j]), blk[j]))
    return out


def render_blocks(blocks: Sequence[ParsedBlock]) -> list[str]:
    return [t for b in blocks for t in (EVE, b.bucket, *b.phrase, b.subject, *b.relation, b.object)]


# --- entity embedding initialization -------------------------------------------


def unknown_word_vector(word: str, dim: int, seed: int, scale: float = 0.02) -> np.ndarray:
    rng = np.random.default_rng([seed, zlib.crc32(word.encode("utf-8"))])
    return rng.normal(0.0, scale, dim)


def entity_init_embedding(
    entity_name: str,
    word_table: Mapping[str, np.ndarray],
    dim: int,
    seed: int = 0,
    scale: float = 0.02,
) -> np.ndarray:
    """Mean of the name's word vectors; unknown words get seed-deterministic vectors."""
    words = words_of(entity_name)
    if not words:
        return np.zeros(dim)
    vecs = []
    for w in words:
        v = word_table.get(w)
        if v is None:
            v = unknown_word_vector(w, dim, seed, scale)
        elif len(v) != dim:
            raise ValueError(f"word vector for {w!r} has dim {len(v)}, expected {dim}")
        vecs.append(np.asarray(v, dtype=np.float64))
    return np.mean(vecs, axis=0)


def read_word_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """Read whitespace-separated ``word v1 v2 ...`` lines (GloVe text layout)."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) > 1:
                table[parts[0].lower()] = np.array(parts[1:], dtype=np.float64)
    return table
