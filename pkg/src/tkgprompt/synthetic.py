"""Small synthetic temporal KGs with known structure, for experiments and tests."""

from __future__ import annotations

import numpy as np

from .kg import TemporalKG

ANSWER_SHORT, ANSWER_MEDIUM = 0, 1


def balanced_design(rows: int, cols: int, rng: np.random.Generator, swaps: int = 0) -> np.ndarray:
    """Random 0/1 matrix whose row sums and column sums are as even as possible.

    Starts from a checkerboard and applies margin-preserving 2x2 swaps
    (``swaps`` attempts; default ``20 * rows * cols``).
    """
    m = (np.add.outer(np.arange(rows), np.arange(cols)) % 2).astype(np.int8)
    for _ in range(swaps or 20 * rows * cols):
        i, j = rng.choice(rows, 2, replace=False) if rows > 1 else (0, 0)
        a, b = rng.choice(cols, 2, replace=False) if cols > 1 else (0, 0)
        if m[i, a] == m[j, b] == 1 and m[i, b] == m[j, a] == 0:
            m[i, a] = m[j, b] = 0
            m[i, b] = m[j, a] = 1
    return m


def interval_rule_tkg(
    seed: int = 0,
    num_entities: int = 20,
    fillers: int = 2,
    train_episodes: int = 4,
    valid_episodes: int = 0,
    test_episodes: int = 4,
    triggers: int = 3,
    spacing: tuple[int, int] = (40000, 41000),
) -> TemporalKG:
    """Object of ``respond`` decided by the gap since the preceding fact.

    In every episode each subject ``e`` states ``triggers`` facts
    ``(e, consult, filler, T)`` and then ``(e, respond, x, T + gap)``. Half of
    the subjects (chosen afresh per episode) get a short gap of 3..29 days and
    answer ``x = 0``; the other half get a medium gap of 90..300 days and
    answer ``x = 1``. In the training split every subject has as many short
    as medium episodes (up to one), so the subject alone does not reveal the
    answer; later splits draw the halves independently.

    The timeline is laid out so the rule also holds between consecutive
    answers seen from the answer entities or the relation: all short answers
    fall inside one 40-day window, and medium answers are staggered about 100
    days apart. Episodes start ``spacing`` days apart, so any gap that crosses
    an episode boundary is longer than a year; with the default spacing it is
    also past the last range of the interval dictionary, so every such gap
    reads the same and carries no information about the episode.
    """
    subjects = np.arange(2 + fillers, num_entities)
    if len(subjects) < 2 or len(subjects) % 2:
        raise ValueError("need an even, positive number of subjects")
    half = len(subjects) // 2
    # last medium answer at base + 100 * half + 5; earliest next trigger at base' - 200
    if spacing[0] - (100 * half + 5) - 200 <= 365:
        raise ValueError("spacing must keep gaps across episodes above one year")
    rng = np.random.default_rng(seed)
    filler_ids = np.arange(2, 2 + fillers)
    consult, respond = 0, 1
    splits = []
    base = 200  # medium triggers can start up to 200 days before their episode
    for split, n_ep in enumerate((train_episodes, valid_episodes, test_episodes)):
        rows = []
        design = balanced_design(len(subjects), n_ep, rng) if split == 0 else None
        for j in range(n_ep):
            if design is None:
                order = rng.permutation(subjects)
            else:
                perm = rng.permutation(len(subjects))
                order = subjects[perm][np.argsort(-design[perm, j], kind="stable")]
            for e in order[:half]:
                start = base + int(rng.integers(0, 11))
                rows += [(e, consult, f, start) for f in rng.choice(filler_ids, triggers)]
                rows.append((e, respond, ANSWER_SHORT, start + int(rng.integers(3, 30))))
            for i, e in enumerate(order[half:]):
                answer = base + 100 * (i + 1) + int(rng.integers(0, 6))
                start = answer - int(rng.integers(90, 301))
                rows += [(e, consult, f, start) for f in rng.choice(filler_ids, triggers)]
                rows.append((e, respond, ANSWER_MEDIUM, answer))
            base += int(rng.integers(*spacing, endpoint=True))
        splits.append(np.array(rows, dtype=np.int64).reshape(-1, 4))
    names = ["answer short", "answer medium"] + [f"filler {i}" for i in range(fillers)]
    names += [f"actor {i}" for i in range(len(subjects))]
    return TemporalKG.from_splits(*splits, names, ["Consult", "Make a visit"])


def sequel_tkg(
    seed: int = 0,
    pairs: int = 8,
    train_episodes: int = 10,
    test_episodes: int = 4,
    episode_gap: int = 400,
) -> TemporalKG:
    """``(s, first, o, t)`` is always followed by ``(s, second, o, t + 1)``.

    Each subject ``s`` has one fixed partner ``o``; entities are
    ``0..pairs-1`` (subjects) and ``pairs..2*pairs-1`` (partners).
    """
    rng = np.random.default_rng(seed)
    first, second = 0, 1
    splits = []
    episode = 0
    for n_ep in (train_episodes, 0, test_episodes):
        rows = []
        for _ in range(n_ep):
            for s in range(pairs):
                t = episode * episode_gap + int(rng.integers(0, 100))
                rows.append((s, first, pairs + s, t))
                rows.append((s, second, pairs + s, t + 1))
            episode += 1
        splits.append(np.array(rows, dtype=np.int64).reshape(-1, 4))
    names = [f"country {i}" for i in range(pairs)] + [f"leader {i}" for i in range(pairs)]
    return TemporalKG.from_splits(*splits, names, ["Threaten", "Make a visit"])
