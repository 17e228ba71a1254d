"""Anchored random sampling of fact sequences and interval conversion.

A sequence is built by fixing one slot (subject, object or relation) to an
anchor and drawing quadruples with replacement from the matching pool, then
sorting them chronologically. Converting absolute timestamps into gaps between
neighbours yields the interval form used for prompting.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .kg import TemporalKG, entity_frequency


class TsgKind(enum.Enum):
    FIX_SUBJECT = "fix_subject"
    FIX_OBJECT = "fix_object"
    FIX_RELATION = "fix_relation"

    @property
    def slot(self) -> int:
        return {TsgKind.FIX_SUBJECT: 0, TsgKind.FIX_RELATION: 1, TsgKind.FIX_OBJECT: 2}[self]


VARIANTS = ("full", "no-prompts", "rand-prompts")


class NoHistoryError(LookupError):
    """The anchor has no candidate quadruples under the requested constraints."""


@dataclass(frozen=True)
class SamplerConfig:
    k_min: int = 2
    k_max: int = 12
    samples_per_anchor: int = 1
    strategy: str = "uniform"  # or "frequency"
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError(f"need 1 <= k_min <= k_max, got {self.k_min}, {self.k_max}")
        if self.samples_per_anchor < 1:
            raise ValueError("samples_per_anchor must be positive")
        if self.strategy not in ("uniform", "frequency"):
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")


@dataclass(frozen=True)
class Tsg:
    anchor: int
    kind: TsgKind
    quads: np.ndarray  # (k, 4): s, r, o, t with t non-decreasing

    def __len__(self) -> int:
        return len(self.quads)


@dataclass(frozen=True)
class Tig:
    anchor: int
    kind: TsgKind
    items: np.ndarray  # (k, 4): s, r, o, interval in days

    def __len__(self) -> int:
        return len(self.items)

    @property
    def intervals(self) -> np.ndarray:
        return self.items[:, 3]


def candidate_pool(
    tkg: TemporalKG,
    anchor: int,
    kind: TsgKind,
    time_upper_bound: int | None = None,
    scope: str = "train",
) -> np.ndarray:
    """Row indices into ``tkg.quads`` eligible for sampling around ``anchor``.

    ``scope="train"`` restricts to the training split; ``"all"`` admits every
    split. ``time_upper_bound`` keeps only rows with ``t < time_upper_bound``.
    """
    index = {
        TsgKind.FIX_SUBJECT: tkg.by_subject,
        TsgKind.FIX_OBJECT: tkg.by_object,
        TsgKind.FIX_RELATION: tkg.by_relation,
    }[kind]
    rows = index[anchor]
    if scope == "train":
        rows = rows[: np.searchsorted(rows, tkg.num_train)]
    elif scope != "all":
        raise ValueError(f"unknown scope {scope!r}")
    if time_upper_bound is not None:
        # rows are increasing and quads are time sorted, so times are too
        rows = rows[: np.searchsorted(tkg.quads[rows, 3], time_upper_bound)]
    return rows


def sample_tsg(
    tkg: TemporalKG,
    anchor: int,
    kind: TsgKind,
    k: int,
    rng: np.random.Generator,
    time_upper_bound: int | None = None,
    scope: str = "train",
) -> Tsg:
    pool = candidate_pool(tkg, anchor, kind, time_upper_bound, scope)
    if len(pool) == 0:
        raise NoHistoryError(f"no history for {kind.value} anchor {anchor}")
    picked = rng.choice(pool, size=k, replace=True)
    # same-day ties keep their draw order
    return Tsg(anchor, kind, sort_by_time(tkg.quads[picked]))


def sort_by_time(quads: np.ndarray) -> np.ndarray:
    return quads[np.argsort(quads[:, 3], kind="stable")]


def randomize_times(tsg: Tsg, lo: int, hi: int, rng: np.random.Generator) -> Tsg:
    """Replace every timestamp by a uniform draw from ``[lo, hi]`` and re-sort."""
    quads = tsg.quads.copy()
    quads[:, 3] = rng.integers(lo, hi, size=len(quads), endpoint=True)
    return Tsg(tsg.anchor, tsg.kind, sort_by_time(quads))


def tsg_to_tig(tsg: Tsg) -> Tig:
    items = tsg.quads.copy()
    if len(items):
        items[:, 3] = np.diff(tsg.quads[:, 3], prepend=tsg.quads[0, 3])
    return Tig(tsg.anchor, tsg.kind, items)


def draw_k(config: SamplerConfig, rng: np.random.Generator) -> int:
    return int(rng.integers(config.k_min, config.k_max, endpoint=True))


def anchor_weights(tkg: TemporalKG, strategy: str) -> np.ndarray:
    """Per-entity anchor selection weights for the given strategy."""
    if strategy == "frequency":
        return entity_frequency(tkg)
    return np.full(tkg.num_entities, 1.0 / tkg.num_entities)


def draw_anchors(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(len(weights), size=n, replace=True, p=weights)


def format_tig(tig: Tig) -> str:
    """Debug dump, one ``s\\tr\\to\\tinterval`` line per item."""
    return "".join(f"{s}\t{r}\t{o}\t{tau}\n" for s, r, o, tau in tig.items.tolist())
