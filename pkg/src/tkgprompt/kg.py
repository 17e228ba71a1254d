"""Temporal knowledge graph storage: loading, validation, indexing and dumping.

Data files follow the common ICEWS layout: one quadruple per line as
tab-separated integers ``s r o t`` (an optional fifth column is ignored),
plus ``name\\tid`` vocabulary files for entities and relations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


class DataFormatError(ValueError):
    """Raised when an input file violates the expected layout or invariants."""


def _empty_quads() -> np.ndarray:
    return np.zeros((0, 4), dtype=np.int64)


def _sort_quads(quads: np.ndarray) -> np.ndarray:
    # lexsort keys are applied last-to-first: primary t, then s, r, o
    order = np.lexsort((quads[:, 2], quads[:, 1], quads[:, 0], quads[:, 3]))
    return quads[order]


def _build_index(keys: np.ndarray, size: int) -> list[np.ndarray]:
    """Row indices grouped by key; rows keep their (time-sorted) order."""
    order = np.argsort(keys, kind="stable")
    bounds = np.searchsorted(keys[order], np.arange(size + 1))
    return [order[bounds[i] : bounds[i + 1]] for i in range(size)]


@dataclass(eq=False)
class TemporalKG:
    """An immutable temporal KG with chronological train/valid/test splits.

    ``quads`` holds every fact as an ``(N, 4)`` int array of ``(s, r, o, t)``
    with ``t`` in day units. Rows are sorted by ``(t, s, r, o)``; since the
    splits are chronologically ordered, each split is a contiguous block.
    """

    quads: np.ndarray
    entity_names: list[str]
    relation_names: list[str]
    split_sizes: tuple[int, int, int]
    granularity: int = 1
    by_subject: list[np.ndarray] = field(init=False, repr=False)
    by_object: list[np.ndarray] = field(init=False, repr=False)
    by_entity: list[np.ndarray] = field(init=False, repr=False)
    by_relation: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.quads = np.ascontiguousarray(self.quads, dtype=np.int64)
        self.quads.setflags(write=False)
        n_ent, n_rel = self.num_entities, self.num_relations
        self.by_subject = _build_index(self.quads[:, 0], n_ent)
        self.by_object = _build_index(self.quads[:, 2], n_ent)
        self.by_relation = _build_index(self.quads[:, 1], n_rel)
        self.by_entity = [
            np.unique(np.concatenate([a, b])) for a, b in zip(self.by_subject, self.by_object)
        ]

    @classmethod
    def from_splits(
        cls,
        train: np.ndarray,
        valid: np.ndarray | None,
        test: np.ndarray | None,
        entity_names: list[str],
        relation_names: list[str],
        granularity: int = 1,
    ) -> "TemporalKG":
        """Validate and assemble a graph from per-split ``(n, 4)`` arrays in day units."""
        parts = []
        for name, arr in zip(SPLITS, (train, valid, test)):
            arr = _empty_quads() if arr is None else np.asarray(arr, dtype=np.int64).reshape(-1, 4)
            if name == "train" and len(arr) == 0:
                raise DataFormatError("empty split: train")
            if len(arr) and (arr.min() < 0):
                raise DataFormatError(f"{name}: negative value in quadruples")
            if len(arr) and (arr[:, [0, 2]].max() >= len(entity_names)):
                raise DataFormatError(f"{name}: entity id out of vocabulary")
            if len(arr) and (arr[:, 1].max() >= len(relation_names)):
                raise DataFormatError(f"{name}: relation id out of vocabulary")
            parts.append(_sort_quads(arr))

        nonempty = [(n, p) for n, p in zip(SPLITS, parts) if len(p)]
        for (n1, p1), (n2, p2) in zip(nonempty, nonempty[1:]):
            if p2[:, 3].min() <= p1[:, 3].max():
                raise DataFormatError(
                    f"split order violated: {n2} has timestamp {p2[:, 3].min()} "
                    f"<= max {n1} timestamp {p1[:, 3].max()}"
                )
        return cls(
            quads=np.concatenate(parts),
            entity_names=list(entity_names),
            relation_names=list(relation_names),
            split_sizes=tuple(len(p) for p in parts),
            granularity=granularity,
        )

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    def split(self, name: str) -> np.ndarray:
        n_train, n_valid, _ = self.split_sizes
        bounds = {
            "train": (0, n_train),
            "valid": (n_train, n_train + n_valid),
            "test": (n_train + n_valid, len(self.quads)),
        }
        lo, hi = bounds[name]
        return self.quads[lo:hi]

    @property
    def train(self) -> np.ndarray:
        return self.split("train")

    @property
    def valid(self) -> np.ndarray:
        return self.split("valid")

    @property
    def test(self) -> np.ndarray:
        return self.split("test")

    @property
    def num_train(self) -> int:
        return self.split_sizes[0]

    @property
    def time_range(self) -> tuple[int, int]:
        return int(self.quads[0, 3]), int(self.quads[-1, 3])

    def split_cutoffs(self) -> dict[str, tuple[int, int]]:
        """(first, last) day index per non-empty split."""
        out = {}
        for name in SPLITS:
            part = self.split(name)
            if len(part):
                out[name] = (int(part[0, 3]), int(part[-1, 3]))
        return out

    def stats(self) -> dict[str, int]:
        n_train, n_valid, n_test = self.split_sizes
        return {
            "entities": self.num_entities,
            "relations": self.num_relations,
            "granularity": self.granularity,
            "train": n_train,
            "valid": n_valid,
            "test": n_test,
        }


def snapshot(tkg: TemporalKG, t: int) -> set[tuple[int, int, int]]:
    """All (s, r, o) triples holding at day ``t``."""
    times = tkg.quads[:, 3]
    lo, hi = np.searchsorted(times, [t, t + 1])
    return {tuple(int(x) for x in row[:3]) for row in tkg.quads[lo:hi]}


def entity_frequency(tkg: TemporalKG) -> np.ndarray:
    """Normalized count of train quadruples touching each entity as subject or object.

    A quadruple with ``s == o`` counts once for that entity.
    """
    train = tkg.train
    counts = np.bincount(train[:, 0], minlength=tkg.num_entities).astype(np.float64)
    counts += np.bincount(train[:, 2], minlength=tkg.num_entities)
    self_loops = train[train[:, 0] == train[:, 2], 0]
    counts -= np.bincount(self_loops, minlength=tkg.num_entities)
    return counts / counts.sum()


# --- file IO ---------------------------------------------------------------


def read_name_map(path: str | Path) -> list[str]:
    """Read ``name\\tid`` lines into a dense id-indexed name list."""
    names: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            name, sep, idx = line.rpartition("\t")
            if not sep:
                raise DataFormatError(f"{path}:{lineno}: expected 'name<TAB>id'")
            try:
                i = int(idx)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer id {idx!r}") from None
            if i in names:
                raise DataFormatError(f"{path}:{lineno}: duplicate id {i}")
            names[i] = name
    if sorted(names) != list(range(len(names))):
        raise DataFormatError(f"{path}: ids are not dense 0..{len(names) - 1}")
    return [names[i] for i in range(len(names))]


def read_quads(path: str | Path, granularity: int = 1) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) not in (4, 5):
                raise DataFormatError(
                    f"{path}:{lineno}: expected 4 or 5 tab-separated fields, got {len(fields)}"
                )
            try:
                s, r, o, t = (int(x) for x in fields[:4])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer field") from None
            if t % granularity:
                raise DataFormatError(
                    f"{path}:{lineno}: granularity {granularity} does not divide timestamp {t}"
                )
            rows.append((s, r, o, t // granularity))
    return np.array(rows, dtype=np.int64).reshape(-1, 4)


def load_tkg(
    train_path: str | Path,
    valid_path: str | Path,
    test_path: str | Path,
    entity_map_path: str | Path,
    relation_map_path: str | Path,
    granularity: int = 24,
) -> TemporalKG:
    if granularity <= 0:
        raise ValueError("granularity must be positive")
    entities = read_name_map(entity_map_path)
    relations = read_name_map(relation_map_path)
    splits = [read_quads(p, granularity) for p in (train_path, valid_path, test_path)]
    tkg = TemporalKG.from_splits(*splits, entities, relations, granularity=granularity)
    logger.info("loaded %s", tkg.stats())
    return tkg


def load_dataset_dir(directory: str | Path, granularity: int = 24) -> TemporalKG:
    """Load ``train.txt valid.txt test.txt entity2id.txt relation2id.txt`` from a directory."""
    d = Path(directory)
    return load_tkg(
        d / "train.txt",
        d / "valid.txt",
        d / "test.txt",
        d / "entity2id.txt",
        d / "relation2id.txt",
        granularity,
    )


def format_quads(quads: np.ndarray, granularity: int = 1) -> str:
    return "".join(f"{s}\t{r}\t{o}\t{t * granularity}\n" for s, r, o, t in quads.tolist())


def dump_tkg(tkg: TemporalKG, directory: str | Path) -> None:
    """Write ``tkg`` in the loadable file layout; timestamps are scaled back to raw units."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        (d / f"{name}.txt").write_text(format_quads(tkg.split(name), tkg.granularity), encoding="utf-8")
    for fname, names in (("entity2id.txt", tkg.entity_names), ("relation2id.txt", tkg.relation_names)):
        (d / fname).write_text("".join(f"{n}\t{i}\n" for i, n in enumerate(names)), encoding="utf-8")
