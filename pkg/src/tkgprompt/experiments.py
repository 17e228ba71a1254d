"""Scaled-down learning experiments on the synthetic graphs.

Both experiments train the default small encoder from scratch and rank the
object of held-out queries. The settings here are the ones the acceptance
suite and the scripts in ``scripts/`` use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from .evaluator import OBJECT, EvalConfig, EvalResult, evaluate, split_queries
from .sampler import SamplerConfig
from .synthetic import interval_rule_tkg, sequel_tkg
from .trainer import TrainConfig, train

RESPOND = 1  # relation whose object follows the interval rule
SEQUEL = 1  # relation that always follows the first one a day later


@dataclass(frozen=True)
class Outcome:
    seed: int
    variant: str
    hits1: float
    final_loss: float
    queries: int


def interval_config(seed: int, variant: str = "full", epochs: int = 20) -> TrainConfig:
    return TrainConfig(
        max_epochs=epochs,
        sampler=SamplerConfig(3, 8, samples_per_anchor=48),
        model=enc.ModelConfig(vocab_size=1),
        batch_size=16,
        lr=2e-3,
        seed=seed,
        lr_decay="linear",
        entity_init=False,
        variant=variant,
    )


def sequel_config(seed: int, epochs: int = 20) -> TrainConfig:
    return TrainConfig(
        max_epochs=epochs,
        sampler=SamplerConfig(2, 6, samples_per_anchor=32),
        model=enc.ModelConfig(vocab_size=1),
        batch_size=16,
        lr=2e-3,
        seed=seed,
        lr_decay="linear",
        entity_init=False,
    )


def _run(tkg, config: TrainConfig, relation: int, context_samples: int) -> tuple[EvalResult, float]:
    result = train(tkg, config)
    queries = split_queries(tkg.test[tkg.test[:, 1] == relation], [OBJECT])
    ev_cfg = EvalConfig.from_train(config, context_samples=context_samples)
    ev = evaluate(tkg, "test", result.params, result.model_config, result.prompter, ev_cfg,
                  seed=config.seed, queries=queries)
    return ev, result.reports[-1].mean_loss


def interval_separation(seed: int, variant: str = "full", epochs: int = 20, context_samples: int = 32) -> Outcome:
    """Hits@1 on the interval-rule queries for one seed and prompt variant."""
    config = interval_config(seed, variant, epochs)
    ev, loss = _run(interval_rule_tkg(seed), config, RESPOND, context_samples)
    return Outcome(seed, variant, ev.metrics.hits1, loss, len(ev.queries))


def memorization(seed: int, epochs: int = 20, context_samples: int = 4, **graph) -> Outcome:
    """Hits@1 on the follow-up relation of the sequel graph."""
    config = sequel_config(seed, epochs)
    ev, loss = _run(sequel_tkg(seed, **graph), config, SEQUEL, context_samples)
    return Outcome(seed, config.variant, ev.metrics.hits1, loss, len(ev.queries))


def chance_hits1(tkg) -> float:
    """Hits@1 of always predicting the most common training answer of the rule relation."""
    answers = tkg.train[tkg.train[:, 1] == RESPOND, 2]
    test = tkg.test[tkg.test[:, 1] == RESPOND, 2]
    return float(np.mean(test == np.bincount(answers).argmax()))
