"""Acceptance criteria 1 to 11, each at its stated tolerance and runtime budget.

Every test records one PASS/FAIL line; the lines are printed in an
"acceptance criteria" section at the end of the pytest run.
"""

import hashlib
import time

import numpy as np
import pytest

from tkgprompt import encoder as enc
from tkgprompt.evaluator import EvalConfig, evaluate, metrics_from_ranks, mine_relation_pairs, rank_of
from tkgprompt.experiments import interval_separation, memorization
from tkgprompt.kg import TemporalKG
from tkgprompt.prompts import Bucket, Prompter, bucket_of
from tkgprompt.sampler import SamplerConfig, TsgKind, anchor_weights, draw_anchors, sample_tsg, tsg_to_tig
from tkgprompt.synthetic import sequel_tkg
from tkgprompt.trainer import TrainConfig, train

from conftest import random_tkg, record_criterion
from oracles import brute_metrics, brute_mine, brute_rank, gradient_check, tiny_batch, tiny_model

SEEDS = (0, 1, 2)


def _finish(number: int, ok: bool, detail: str, elapsed: float, budget: float) -> None:
    ok = ok and elapsed < budget
    record_criterion(number, ok, f"{detail} ({elapsed:.2f}s, budget {budget:g}s)")
    assert ok, detail


def test_criterion_01_metric_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(100):
        n_ent = int(rng.integers(1, 51))
        n_q = int(rng.integers(1, 40))
        # integer scores make ties common
        scores = rng.integers(0, 6, (n_q, n_ent)).astype(float) if rng.random() < 0.5 else rng.normal(size=(n_q, n_ent))
        truths = rng.integers(0, n_ent, n_q)
        ranks = [rank_of(row, int(t)) for row, t in zip(scores, truths)]
        ref_ranks = [brute_rank(row.tolist(), int(t)) for row, t in zip(scores, truths)]
        got, ref = metrics_from_ranks(ranks), brute_metrics(ref_ranks)
        same = ranks == ref_ranks and (got.mrr, got.hits1, got.hits3, got.hits10) == (
            ref["mrr"], ref["hits1"], ref["hits3"], ref["hits10"])
        mismatches += not same
    _finish(1, mismatches == 0, f"metric oracle, {mismatches}/100 fixtures differ", time.perf_counter() - start, 1)


def test_criterion_02_tig_intervals():
    start = time.perf_counter()
    tkg = random_tkg(5, n_ent=20, n_rel=5, n_train=600, span=3000)
    rng = np.random.default_rng(7)
    kinds = list(TsgKind)
    bad = 0
    for _ in range(1000):
        kind = kinds[int(rng.integers(3))]
        anchor = int(rng.integers(5 if kind is TsgKind.FIX_RELATION else 20))
        tsg = sample_tsg(tkg, anchor, kind, int(rng.integers(1, 13)), rng)
        tau, t = tsg_to_tig(tsg).intervals, tsg.quads[:, 3]
        ok = tau[0] == 0 and all(tau[i] == t[i] - t[i - 1] for i in range(1, len(t)))
        bad += not (ok and int(tau.sum()) == int(t[-1] - t[0]))
    _finish(2, bad == 0, f"interval sequence, {bad}/1000 samples violate it", time.perf_counter() - start, 1)


def test_criterion_03_bucket_boundaries():
    start = time.perf_counter()
    expected = {0: Bucket.SHT, 60: Bucket.SHT, 61: Bucket.MID, 128: Bucket.MID, 365: Bucket.MID, 366: Bucket.LNG}
    got = {d: bucket_of(d) for d in expected}
    _finish(3, got == expected, "bucket boundaries " + " ".join(f"{d}->{b.name}" for d, b in got.items()),
            time.perf_counter() - start, 1)


def test_criterion_04_worked_example():
    start = time.perf_counter()
    prompter = Prompter.for_graph(50, ["Consult", "Make a visit", "Praise", "Threaten"])
    seq = prompter.serialize(np.array([[49, 3, 18, 128]]), 24)
    expected = "[EVE] [MID] after four months [ENT-49] threaten [ENT-18]".split()
    tokens = prompter.vocab.decode(seq.tokens)
    ok = tokens == expected and prompter.vocab.encode(tokens) == seq.tokens.tolist()
    _finish(4, ok, "worked example serializes to " + " ".join(tokens), time.perf_counter() - start, 1)


def test_criterion_05_masking_ratio():
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    ids = np.arange(512) % 97 + 3
    total = masked = 0
    while total < 100_000:
        length = int(rng.integers(64, 513))
        _, m, _ = enc.apply_random_mask(ids, length, 0.30, rng, mask_id=1)
        total += length
        masked += int(m.sum())
    frac = masked / total
    _finish(5, 0.28 <= frac <= 0.32, f"masked fraction {frac:.4f} over {total} tokens",
            time.perf_counter() - start, 5)


def test_criterion_06_gradient_exactness():
    start = time.perf_counter()
    cfg, params = tiny_model(seed=0)
    assert (cfg.model_dim, cfg.layers, cfg.heads) == (8, 1, 1)
    errors = gradient_check(params, cfg, tiny_batch(cfg))
    worst = max(errors, key=errors.get)
    _finish(6, set(errors) == set(params) and errors[worst] < 1e-3,
            f"max relative gradient error {errors[worst]:.2e} ({worst})", time.perf_counter() - start, 30)


@pytest.mark.slow
def test_criterion_07_interval_separation():
    start = time.perf_counter()
    outcomes = [(interval_separation(s, "full"), interval_separation(s, "no-prompts")) for s in SEEDS]
    ok = all(full.hits1 >= 0.9 and bare.hits1 <= 0.6 for full, bare in outcomes)
    detail = ", ".join(f"seed {f.seed} full {f.hits1:.3f} no-prompts {b.hits1:.3f}" for f, b in outcomes)
    _finish(7, ok, "Hits@1 " + detail, time.perf_counter() - start, 600)


def test_criterion_08_memorization():
    start = time.perf_counter()
    outcomes = [memorization(s) for s in SEEDS]
    ok = all(o.hits1 >= 0.8 for o in outcomes)
    detail = ", ".join(f"seed {o.seed} {o.hits1:.3f}" for o in outcomes)
    _finish(8, ok, f"pattern Hits@1 {detail}", time.perf_counter() - start, 300)


def test_criterion_09_sampler_distribution():
    start = time.perf_counter()
    # entity i touches 2**i training facts as subject (objects go to a sink entity)
    rows = [(i, 0, 8, t) for i in range(8) for t in range(2 ** i)]
    tkg = TemporalKG.from_splits(rows, None, None, [f"e{i}" for i in range(9)], ["r"])
    touches = np.array([2.0 ** i for i in range(8)] + [len(rows)])
    target = touches / touches.sum()
    draws = draw_anchors(anchor_weights(tkg, "frequency"), 100_000, np.random.default_rng(3))
    empirical = np.bincount(draws, minlength=9) / len(draws)
    tv = 0.5 * float(np.abs(empirical - target).sum())
    _finish(9, tv <= 0.02, f"total variation {tv:.4f} over 100000 frequency draws", time.perf_counter() - start, 5)


def _table_style_graph() -> TemporalKG:
    """Inspections are followed a few days later by expulsions and releases on the same pair."""
    rng = np.random.default_rng(8)
    rows = []
    for k in range(40):
        s, o, t = int(rng.integers(0, 10)), int(rng.integers(10, 20)), 20 * k
        rows += [(s, 0, o, t), (s, 1, o, t + 2), (s, 2, o, t + 2)]
    noise = np.column_stack([rng.integers(0, 20, 120), np.full(120, 3), rng.integers(0, 20, 120),
                             rng.integers(0, 800, 120)])
    rows = np.vstack([np.array(rows), noise])
    names = ["Receive inspectors", "Expel or deport individuals", "Return, release person(s)", "Consult"]
    return TemporalKG.from_splits(rows, None, None, [f"e{i}" for i in range(20)], names)


def test_criterion_10_miner_oracle():
    start = time.perf_counter()
    cases = [(_table_style_graph(), 5, 5, 0.9)]
    rng = np.random.default_rng(10)
    for _ in range(20):
        n = int(rng.integers(50, 1001))
        n_ent, n_rel = int(rng.integers(2, 12)), int(rng.integers(2, 8))
        rows = np.column_stack([rng.integers(0, n_ent, n), rng.integers(0, n_rel, n),
                                rng.integers(0, n_ent, n), rng.integers(0, 400, n)])
        tkg = TemporalKG.from_splits(rows, None, None, [f"e{i}" for i in range(n_ent)],
                                     [f"r{i}" for i in range(n_rel)])
        cases.append((tkg, int(rng.integers(1, 60)), int(rng.integers(1, 6)), float(rng.choice([0.6, 0.9, 1.0]))))
    bad = 0
    for tkg, window, support, purity in cases:
        got = [(p.pre, p.post, p.support, p.reverse_support, p.median_interval)
               for p in mine_relation_pairs(tkg, window, support, purity).pairs]
        bad += got != brute_mine(tkg.train, window, support, purity, tkg.num_relations)
    table = [(p.pre, p.post) for p in mine_relation_pairs(cases[0][0], 5, 5, 0.9).pairs]
    ok = bad == 0 and sorted(table) == [(0, 1), (0, 2)]
    _finish(10, ok, f"miner oracle, {bad}/{len(cases)} fixtures differ, constructed pairs {table}",
            time.perf_counter() - start, 5)


def test_criterion_11_determinism(tmp_path):
    start = time.perf_counter()
    tkg = sequel_tkg(0, pairs=4, train_episodes=4, test_episodes=2)
    config = TrainConfig(max_epochs=3, sampler=SamplerConfig(2, 4), seq_len=64, batch_size=8, lr=2e-3, seed=5,
                         model=enc.ModelConfig(vocab_size=1, layers=1, heads=2, model_dim=16, ff_dim=32,
                                               max_seq_len=64), entity_init=False)
    runs = []
    for name in ("a", "b"):
        result = train(tkg, config, out_dir=tmp_path / name)
        ev = evaluate(tkg, "test", result.params, result.model_config, result.prompter,
                      EvalConfig.from_train(config), seed=config.seed)
        on_disk = hashlib.sha256(result.checkpoint.read_bytes()).hexdigest()
        runs.append((ev.metrics.as_dict(), ev.ranks.tolist(), result.checkpoint_digest, on_disk))
    (m_a, r_a, d_a, f_a), (m_b, r_b, d_b, f_b) = runs
    ok = m_a == m_b and r_a == r_b and d_a == d_b == f_a == f_b
    _finish(11, ok, f"two seeded runs, MRR {m_a['MRR']:.4f} vs {m_b['MRR']:.4f}, checkpoint {d_a[:12]} vs {d_b[:12]}",
            time.perf_counter() - start, 600)
