"""Epoch loop: sample anchored sequences, serialize them, mask, and optimize."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np

from . import encoder as enc
from .kg import TemporalKG
from .prompts import Prompter, PromptSequence, entity_init_embedding
from .sampler import (
    VARIANTS,
    NoHistoryError,
    SamplerConfig,
    TsgKind,
    anchor_weights,
    draw_anchors,
    draw_k,
    randomize_times,
    sample_tsg,
    tsg_to_tig,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters. ``model.vocab_size`` is replaced by the real vocabulary size."""

    max_epochs: int = 10
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    model: enc.ModelConfig = field(default_factory=lambda: enc.ModelConfig(vocab_size=1))
    seq_len: int = 256
    batch_size: int = 32
    lr: float = 5e-5
    weight_decay: float = 0.01
    seed: int = 0
    checkpoint_every: int = 0  # epochs between intermediate checkpoints; 0 = final only
    variant: str = "full"
    entity_init: bool = True
    validation_queries: int = 500  # per-epoch validation subset; 0 disables it
    lr_decay: str = "none"  # "linear": decay to zero over max_epochs

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.lr_decay not in ("none", "linear"):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")
        if self.seq_len > self.model.max_seq_len:
            raise ValueError(f"seq_len {self.seq_len} exceeds model max_seq_len {self.model.max_seq_len}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["sampler"] = SamplerConfig(**d["sampler"])
        d["model"] = enc.ModelConfig(**d["model"])
        return cls(**d)


@dataclass
class EpochReport:
    epoch: int
    mean_loss: float
    sequences: int
    skipped: int
    seconds: float
    valid_mrr: float | None = None

    def line(self) -> str:
        return f"{self.epoch}\t{self.mean_loss:.6f}\t{self.sequences}\t{self.seconds:.2f}"


@dataclass
class Corpus:
    sequences: list[PromptSequence]
    skipped: int


def make_prompter(tkg: TemporalKG, variant: str = "full", lexicon=None, dictionary=None) -> Prompter:
    return Prompter.for_graph(
        tkg.num_entities, tkg.relation_names, dictionary, lexicon, time_prompts=variant != "no-prompts"
    )


def _anchor_plan(tkg: TemporalKG, sampler: SamplerConfig, rng: np.random.Generator):
    """(anchor, kind) pairs for one epoch, in order."""
    plan = []
    weights = anchor_weights(tkg, sampler.strategy) if sampler.strategy == "frequency" else None
    for _ in range(sampler.samples_per_anchor):
        if weights is None:
            entities = range(tkg.num_entities)
        else:
            entities = draw_anchors(weights, tkg.num_entities, rng).tolist()
        for e in entities:
            plan.append((e, TsgKind.FIX_SUBJECT))
            plan.append((e, TsgKind.FIX_OBJECT))
        plan.extend((r, TsgKind.FIX_RELATION) for r in range(tkg.num_relations))
    return plan


def build_epoch_corpus(
    tkg: TemporalKG, config: TrainConfig, rng: np.random.Generator, prompter: Prompter
) -> Corpus:
    sequences, skipped = [], 0
    t_lo, t_hi = int(tkg.train[0, 3]), int(tkg.train[-1, 3])
    for anchor, kind in _anchor_plan(tkg, config.sampler, rng):
        k = draw_k(config.sampler, rng)
        try:
            tsg = sample_tsg(tkg, anchor, kind, k, rng)
        except NoHistoryError:
            skipped += 1
            continue
        if config.variant == "rand-prompts":
            tsg = randomize_times(tsg, t_lo, t_hi, rng)
        sequences.append(prompter.serialize(tsg_to_tig(tsg).items, config.seq_len))
    return Corpus(sequences, skipped)


def entity_inits(params: enc.Params, prompter: Prompter, entity_names, seed: int) -> dict[int, np.ndarray]:
    """Entity rows as the mean of the name's word embeddings from the initial table."""
    vocab = prompter.vocab
    emb = params["tok_emb"]
    table = {vocab.tokens[i]: emb[i].astype(np.float64) for i in vocab.word_ids}
    dim = emb.shape[1]
    return {
        int(tid): entity_init_embedding(name, table, dim, seed).astype(emb.dtype)
        for tid, name in zip(vocab.entity_ids, entity_names)
    }


def init_model(tkg: TemporalKG, config: TrainConfig, prompter: Prompter) -> tuple[enc.ModelConfig, enc.Params]:
    cfg = dataclasses.replace(config.model, vocab_size=len(prompter.vocab))
    params = enc.init_params(cfg, seed=config.seed)
    if config.entity_init:
        params = enc.init_params(cfg, entity_inits(params, prompter, tkg.entity_names, config.seed), config.seed)
    return cfg, params


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def learning_rate(config: TrainConfig, epoch: int, progress: float) -> float:
    """Rate for a step ``progress`` (in [0, 1)) of the way through ``epoch``."""
    if config.lr_decay == "none":
        return config.lr
    return config.lr * max(0.0, 1.0 - (epoch - 1 + progress) / config.max_epochs)


def run_epoch(
    tkg: TemporalKG,
    config: TrainConfig,
    cfg: enc.ModelConfig,
    params: enc.Params,
    opt: enc.OptimizerState,
    prompter: Prompter,
    epoch: int,
) -> EpochReport:
    start = time.perf_counter()
    rng = epoch_rng(config.seed, epoch)
    corpus = build_epoch_corpus(tkg, config, rng, prompter)
    order = rng.permutation(len(corpus.sequences))
    vocab = prompter.vocab
    losses, weights = [], []
    for lo in range(0, len(order), config.batch_size):
        opt.lr = learning_rate(config, epoch, lo / len(order))
        rows = []
        for i in order[lo : lo + config.batch_size]:
            seq = corpus.sequences[i]
            rows.append((*enc.apply_random_mask(seq.ids, seq.length, cfg.mask_ratio, rng, vocab.mask_id), seq.length))
        batch = enc.make_batch(rows, vocab.pad_id)
        loss, grads = enc.loss_and_grad(params, cfg, batch, rng=rng if cfg.dropout else None)
        enc.adamw_step(params, grads, opt)
        losses.append(loss)
        weights.append(len(rows))
    mean_loss = float(np.average(losses, weights=weights)) if losses else float("nan")
    return EpochReport(epoch, mean_loss, len(corpus.sequences), corpus.skipped, time.perf_counter() - start)


@dataclass
class TrainResult:
    model_config: enc.ModelConfig
    params: enc.Params
    optimizer: enc.OptimizerState
    reports: list[EpochReport]
    prompter: Prompter
    checkpoint: Path | None = None
    checkpoint_digest: str | None = None


def _checkpoint(cfg, prompter, params, opt, config: TrainConfig, epoch: int, reports) -> enc.Checkpoint:
    nxt = epoch_rng(config.seed, epoch + 1).bit_generator.state
    meta = {
        "epoch": epoch,
        "train_config": config.to_dict(),
        "loss_trace": [r.mean_loss for r in reports],
        "rng_state": nxt,
    }
    return enc.Checkpoint(cfg, prompter.vocab.digest(), params, opt, meta)


def train(
    tkg: TemporalKG,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    prompter: Prompter | None = None,
    resume: str | Path | None = None,
    progress: list[TextIO] | None = None,
    stop_after: int | None = None,
) -> TrainResult:
    """Run ``config.max_epochs`` epochs (or stop early after epoch ``stop_after``).

    With ``resume`` the run continues from a checkpoint written by an earlier
    call with the same config; per-epoch generators are derived from
    ``(seed, epoch)``, so the continued loss trace matches an uninterrupted run.
    """
    prompter = prompter or make_prompter(tkg, config.variant)
    reports: list[EpochReport] = []
    first_epoch = 1
    if resume is not None:
        ckpt = enc.load_checkpoint(resume, prompter.vocab.digest())
        cfg, params, opt = ckpt.config, ckpt.params, ckpt.optimizer
        first_epoch = ckpt.meta["epoch"] + 1
        reports = [EpochReport(i + 1, loss, 0, 0, 0.0) for i, loss in enumerate(ckpt.meta["loss_trace"])]
    else:
        cfg, params = init_model(tkg, config, prompter)
        opt = enc.OptimizerState(lr=config.lr, weight_decay=config.weight_decay)

    out = Path(out_dir) if out_dir is not None else None
    last = config.max_epochs if stop_after is None else min(stop_after, config.max_epochs)
    for epoch in range(first_epoch, last + 1):
        report = run_epoch(tkg, config, cfg, params, opt, prompter, epoch)
        if config.validation_queries and tkg.split_sizes[1]:
            from .evaluator import EvalConfig, evaluate

            ev = evaluate(tkg, "valid", params, cfg, prompter, EvalConfig.from_train(config),
                          seed=config.seed, limit=config.validation_queries)
            report.valid_mrr = ev.metrics.mrr
        reports.append(report)
        logger.info("epoch %d loss %.4f (%d sequences, %d skipped)", epoch, report.mean_loss,
                    report.sequences, report.skipped)
        for stream in progress or []:
            print(report.line(), file=stream, flush=True)
        if out is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            enc.save_checkpoint(out / f"checkpoint-epoch{epoch}.npz",
                                _checkpoint(cfg, prompter, params, opt, config, epoch, reports))

    result = TrainResult(cfg, params, opt, reports, prompter)
    if out is not None:
        final_epoch = reports[-1].epoch if reports else 0
        path = out / "checkpoint.npz"
        result.checkpoint_digest = enc.save_checkpoint(
            path, _checkpoint(cfg, prompter, params, opt, config, final_epoch, reports)
        )
        result.checkpoint = path
    return result
