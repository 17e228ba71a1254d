import numpy as np
import pytest

from tkgprompt.kg import TemporalKG


def random_tkg(seed: int = 0, n_ent: int = 12, n_rel: int = 4, n_train: int = 200, n_test: int = 40,
               span: int = 400) -> TemporalKG:
    """Random graph with train times in [0, span) and test times after them."""
    rng = np.random.default_rng(seed)

    def block(n, lo, hi):
        return np.column_stack([rng.integers(0, n_ent, n), rng.integers(0, n_rel, n),
                                rng.integers(0, n_ent, n), rng.integers(lo, hi, n)])

    return TemporalKG.from_splits(
        block(n_train, 0, span), None, block(n_test, span, span + 50),
        [f"entity {i}" for i in range(n_ent)], [f"Relation {i}" for i in range(n_rel)],
    )


@pytest.fixture
def small_tkg() -> TemporalKG:
    return random_tkg()


def write_dataset(directory, train, valid, test, entities, relations):
    """Write rows (raw timestamps) and names in the on-disk dataset layout."""
    directory.mkdir(parents=True, exist_ok=True)
    for name, rows in (("train", train), ("valid", valid), ("test", test)):
        (directory / f"{name}.txt").write_text("".join("\t".join(map(str, r)) + "\n" for r in rows))
    (directory / "entity2id.txt").write_text("".join(f"{n}\t{i}\n" for i, n in enumerate(entities)))
    (directory / "relation2id.txt").write_text("".join(f"{n}\t{i}\n" for i, n in enumerate(relations)))
    return directory


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Remember the verdict line of one acceptance criterion for the end-of-run summary."""
    ACCEPTANCE_LINES[number] = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
