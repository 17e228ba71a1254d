"""Link-prediction evaluation (raw ranking), ablations and relation-pair mining."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from . import encoder as enc
from .kg import TemporalKG
from .prompts import Prompter, PromptSequence
from .sampler import (
    NoHistoryError,
    SamplerConfig,
    TsgKind,
    draw_k,
    randomize_times,
    sample_tsg,
    tsg_to_tig,
)

OBJECT, SUBJECT = "object", "subject"


@dataclass(frozen=True)
class Query:
    direction: str  # OBJECT: (s, r, ?, t); SUBJECT: (?, r, o, t)
    known: int
    relation: int
    t: int
    truth: int

    @classmethod
    def from_quad(cls, quad, direction: str) -> "Query":
        s, r, o, t = (int(x) for x in quad)
        if direction == OBJECT:
            return cls(OBJECT, s, r, t, o)
        return cls(SUBJECT, o, r, t, s)

    def quad(self) -> tuple[int, int, int, int]:
        if self.direction == OBJECT:
            return self.known, self.relation, self.truth, self.t
        return self.truth, self.relation, self.known, self.t


@dataclass(frozen=True)
class EvalConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    seq_len: int = 256
    context_samples: int = 1  # logits averaged over this many context draws
    history: str = "all"  # "all": any fact before t; "train": training facts only
    variant: str = "full"
    batch_size: int = 64

    @classmethod
    def from_train(cls, config, **overrides) -> "EvalConfig":
        base = dict(sampler=config.sampler, seq_len=config.seq_len, variant=config.variant)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class Metrics:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    count: int

    def as_dict(self) -> dict[str, float]:
        return {"MRR": self.mrr, "Hits@1": self.hits1, "Hits@3": self.hits3, "Hits@10": self.hits10,
                "queries": self.count}

    def format(self, prefix: str = "") -> str:
        return "".join(
            f"{prefix}{k}\t{v}\n" if k == "queries" else f"{prefix}{k}\t{v:.6f}\n"
            for k, v in self.as_dict().items()
        )


def rank_of(scores: np.ndarray, truth: int) -> int:
    """1 + number of candidates scoring strictly higher than the ground truth."""
    return 1 + int(np.count_nonzero(scores > scores[truth]))


def metrics_from_ranks(ranks: Sequence[int]) -> Metrics:
    r = np.asarray(ranks, dtype=np.float64)
    if len(r) == 0:
        return Metrics(float("nan"), float("nan"), float("nan"), float("nan"), 0)
    return Metrics(
        math.fsum(1.0 / r) / len(r),  # correctly rounded, independent of order
        float(np.mean(r <= 1)),
        float(np.mean(r <= 3)),
        float(np.mean(r <= 10)),
        len(r),
    )


# --- query construction and scoring ------------------------------------------


def build_query_sequence(
    tkg: TemporalKG,
    query: Query,
    config: EvalConfig,
    rng: np.random.Generator,
    prompter: Prompter,
) -> PromptSequence:
    """Sampled history of the known entity followed by the query block with [MASK].

    History is anchored on the known entity in the slot it occupies in the
    query and restricted to facts strictly before the query time.
    """
    kind = TsgKind.FIX_SUBJECT if query.direction == OBJECT else TsgKind.FIX_OBJECT
    k = draw_k(config.sampler, rng)
    blocks: list[list[int]] = []
    delta = 0
    try:
        tsg = sample_tsg(tkg, query.known, kind, k, rng, time_upper_bound=query.t, scope=config.history)
    except NoHistoryError:
        tsg = None
    if tsg is not None:
        if config.variant == "rand-prompts":
            tsg = randomize_times(tsg, tkg.time_range[0], query.t - 1, rng)
        blocks = prompter.blocks(tsg_to_tig(tsg).items)
        delta = query.t - int(tsg.quads[-1, 3])
    if query.direction == OBJECT:
        blocks.append(prompter.block(query.known, query.relation, None, delta))
    else:
        blocks.append(prompter.block(None, query.relation, query.known, delta))
    return prompter.pack(blocks, config.seq_len)


def score_entities(
    params: enc.Params,
    cfg: enc.ModelConfig,
    sequences: Sequence[PromptSequence],
    prompter: Prompter,
) -> np.ndarray:
    """Entity-restricted logits at the single [MASK] of each sequence, shape ``(n, |E|)``."""
    vocab = prompter.vocab
    t = max(s.length for s in sequences)
    ids = np.stack([s.ids[:t] for s in sequences])
    pad_mask = np.arange(t)[None, :] < np.array([s.length for s in sequences])[:, None]
    is_mask = (ids == vocab.mask_id) & pad_mask
    counts = is_mask.sum(1)
    if np.any(counts != 1):
        raise ValueError(f"each sequence needs exactly one [MASK], got counts {sorted(set(counts.tolist()))}")
    h, _ = enc.encode(params, cfg, ids, pad_mask, keep_cache=False)
    hm = h[np.arange(len(ids)), is_mask.argmax(1)]
    ent = vocab.entity_ids
    return hm @ params["tok_emb"][ent].T + params["out_bias"][ent]


def query_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


@dataclass
class EvalResult:
    metrics: Metrics
    by_direction: dict[str, Metrics]
    queries: list[Query]
    ranks: np.ndarray

    def format(self) -> str:
        out = self.metrics.format()
        for d, m in self.by_direction.items():
            out += m.format(prefix=f"{d}.")
        return out

    def dump_ranks(self, stream: TextIO) -> None:
        for q, rank in zip(self.queries, self.ranks.tolist()):
            s, r, o, t = q.quad()
            stream.write(f"{s}\t{r}\t{o}\t{t}\t{q.direction}\t{rank}\n")


def split_queries(quads: np.ndarray, directions: Iterable[str] = (OBJECT, SUBJECT)) -> list[Query]:
    directions = tuple(directions)
    return [Query.from_quad(q, d) for q in quads for d in directions]


def rank_queries(
    tkg: TemporalKG,
    queries: Sequence[Query],
    params: enc.Params,
    cfg: enc.ModelConfig,
    prompter: Prompter,
    config: EvalConfig,
    seed: int = 0,
) -> np.ndarray:
    ranks = np.zeros(len(queries), dtype=np.int64)
    for lo in range(0, len(queries), config.batch_size):
        chunk = queries[lo : lo + config.batch_size]
        rngs = [query_rng(seed, lo + i) for i in range(len(chunk))]
        scores = 0.0
        for _ in range(config.context_samples):
            seqs = [build_query_sequence(tkg, q, config, rng, prompter) for q, rng in zip(chunk, rngs)]
            scores = scores + score_entities(params, cfg, seqs, prompter)
        scores = scores / config.context_samples
        for i, q in enumerate(chunk):
            ranks[lo + i] = rank_of(scores[i], q.truth)
    return ranks


def evaluate(
    tkg: TemporalKG,
    split: str,
    params: enc.Params,
    cfg: enc.ModelConfig,
    prompter: Prompter,
    config: EvalConfig,
    seed: int = 0,
    limit: int | None = None,
    queries: Sequence[Query] | None = None,
) -> EvalResult:
    """Raw-schema ranking of both directions for every quadruple of ``split``.

    Nothing is filtered from the candidate list. ``limit`` evaluates a seeded
    random subset of that many queries.
    """
    if queries is None:
        queries = split_queries(tkg.split(split))
    queries = list(queries)
    if limit is not None and limit < len(queries):
        pick = np.sort(np.random.default_rng([seed, 7919]).choice(len(queries), limit, replace=False))
        queries = [queries[i] for i in pick]
    ranks = rank_queries(tkg, queries, params, cfg, prompter, config, seed)
    by_dir = {}
    for d in (OBJECT, SUBJECT):
        sel = [i for i, q in enumerate(queries) if q.direction == d]
        if sel:
            by_dir[d] = metrics_from_ranks(ranks[sel])
    return EvalResult(metrics_from_ranks(ranks), by_dir, queries, ranks)


def ablate(tkg: TemporalKG, variant: str, config, split: str = "test", prompter=None, out_dir=None,
           eval_config: EvalConfig | None = None) -> EvalResult:
    """Train with ``variant`` applied to the training corpus, then evaluate with it."""
    from .trainer import train

    config = dataclasses.replace(config, variant=variant)
    result = train(tkg, config, out_dir=out_dir, prompter=prompter)
    ev_cfg = dataclasses.replace(eval_config or EvalConfig.from_train(config), variant=variant)
    return evaluate(tkg, split, result.params, result.model_config, result.prompter, ev_cfg, seed=config.seed)


# --- relation-pair mining -------------------------------------------------------


@dataclass(frozen=True)
class RelationPair:
    pre: int
    post: int
    support: int
    reverse_support: int
    median_interval: float

    @property
    def purity(self) -> float:
        return self.support / (self.support + self.reverse_support)


@dataclass
class MiningResult:
    pairs: list[RelationPair]
    filtered_test: np.ndarray

    @property
    def relations(self) -> set[int]:
        return {p.pre for p in self.pairs} | {p.post for p in self.pairs}

    def format(self, relation_names: Sequence[str]) -> str:
        return "".join(
            f"{relation_names[p.pre]}\t{relation_names[p.post]}\t{p.support}\t{p.median_interval:g}\n"
            for p in self.pairs
        )


def _ordered_pairs(quads: np.ndarray, num_entities: int, window: int, chunk: int = 1 << 15):
    """Yield ``(r_first, r_second, gap)`` arrays over fact pairs sharing (s, o) with 0 < gap <= window."""
    key = quads[:, 0] * num_entities + quads[:, 2]
    order = np.lexsort((quads[:, 3], key))
    t = quads[order, 3]
    r = quads[order, 1]
    span = int(t.max()) + window + 1
    comp = key[order] * span + t
    lo = np.searchsorted(comp, comp, side="right")
    hi = np.searchsorted(comp, comp + window, side="right")
    for start in range(0, len(comp), chunk):
        n = hi[start : start + chunk] - lo[start : start + chunk]
        if n.sum() == 0:
            continue
        first = np.repeat(np.arange(start, start + len(n)), n)
        offsets = np.arange(len(first)) - np.repeat(np.cumsum(n) - n, n)
        second = lo[first] + offsets
        yield r[first], r[second], t[second] - t[first]


def mine_relation_pairs(
    tkg: TemporalKG, window: int = 365, min_support: int = 3, order_purity: float = 0.9
) -> MiningResult:
    """Ordered relation pairs that reliably occur in one temporal order between the same entities.

    For every pair of training facts ``(s, rA, o, t1)``, ``(s, rB, o, t2)`` with
    ``rA != rB`` and ``0 < t2 - t1 <= window``, support of ``(rA, rB)`` grows by
    one. A pair is emitted when its support reaches ``min_support`` and
    ``support / (support + reverse support) >= order_purity``.
    """
    n_rel = tkg.num_relations
    counts = np.zeros(n_rel * n_rel, dtype=np.int64)
    for ra, rb, _ in _ordered_pairs(tkg.train, tkg.num_entities, window):
        counts += np.bincount(ra * n_rel + rb, minlength=n_rel * n_rel)
    counts = counts.reshape(n_rel, n_rel)
    np.fill_diagonal(counts, 0)
    total = counts + counts.T
    with np.errstate(invalid="ignore", divide="ignore"):
        purity = np.where(total > 0, counts / np.maximum(total, 1), 0.0)
    keep = (counts >= min_support) & (purity >= order_purity)
    emitted = np.argwhere(keep)

    gaps: dict[int, list[np.ndarray]] = {int(a * n_rel + b): [] for a, b in emitted}
    if gaps:
        codes = np.array(sorted(gaps))
        for ra, rb, gap in _ordered_pairs(tkg.train, tkg.num_entities, window):
            code = ra * n_rel + rb
            sel = np.isin(code, codes)
            for c in np.unique(code[sel]):
                gaps[int(c)].append(gap[sel][code[sel] == c])
    pairs = [
        RelationPair(int(a), int(b), int(counts[a, b]), int(counts[b, a]),
                     float(np.median(np.concatenate(gaps[int(a * n_rel + b)]))))
        for a, b in emitted
    ]
    pairs.sort(key=lambda p: (-p.support, p.pre, p.post))
    rels = np.array(sorted({p.pre for p in pairs} | {p.post for p in pairs}), dtype=np.int64)
    test = tkg.test
    return MiningResult(pairs, test[np.isin(test[:, 1], rels)])
