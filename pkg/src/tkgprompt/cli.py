"""Command-line entry point: ingest, train, eval, ablate, mine and dump-corpus.

Settings come from three layers, later ones winning: built-in defaults, an
optional INI-style config file (``--config``) and command-line flags. The
file has one section per module::

    [data]
    path = data/ICEWS14
    granularity = 24

    [train]
    max_epochs = 5
    lr = 1e-4

    [sampler]
    k_max = 8

Every artifact of a run lands in ``<out>/<timestamp>-seed<N>/``. Results are
printed to stdout as ``name\\tvalue`` lines; logs go to stderr at the level
named by the ``PPT_LOG`` environment variable (quiet, info or debug).
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from threadpoolctl import threadpool_limits

from . import encoder as enc
from .evaluator import EvalConfig, ablate, evaluate, mine_relation_pairs
from .kg import DataFormatError, TemporalKG, format_quads, load_dataset_dir
from .sampler import VARIANTS, SamplerConfig
from .trainer import TrainConfig, build_epoch_corpus, epoch_rng, make_prompter, train

logger = logging.getLogger("tkgprompt")

PROG = "tkgprompt"
LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    """Bad invocation, config file or missing input; reported as one line."""


# --- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class DataSection:
    path: str = ""
    granularity: int = 24  # raw timestamp units per day (ICEWS stores hours)


@dataclass(frozen=True)
class EvalSection:
    checkpoint: str = ""
    split: str = "test"
    context_samples: int = 1
    history: str = "all"
    limit: int = 0  # 0 = every query of the split
    batch_size: int = 64

    def __post_init__(self) -> None:
        if self.split not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.history not in ("all", "train"):
            raise ValueError(f"unknown history scope {self.history!r}")
        if self.context_samples < 1 or self.batch_size < 1 or self.limit < 0:
            raise ValueError("context_samples and batch_size must be positive, limit non-negative")


@dataclass(frozen=True)
class MineSection:
    window: int = 365
    min_support: int = 3
    purity: float = 0.9

    def __post_init__(self) -> None:
        if self.window < 1 or self.min_support < 1 or not 0.0 < self.purity <= 1.0:
            raise ValueError("mining needs window >= 1, min_support >= 1 and purity in (0, 1]")


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "runs"
    threads: int = 0  # 0 leaves the BLAS / OpenMP pools alone


# Keys that are set elsewhere and may not appear in a file.
_HIDDEN = {"train": {"sampler", "model", "seed"}, "sampler": {"seed"}, "model": {"vocab_size"}}


def default_values() -> dict[str, dict[str, Any]]:
    """Built-in defaults as ``{section: {key: value}}``."""
    t = TrainConfig()
    raw = {
        "data": dataclasses.asdict(DataSection()),
        "train": {f.name: getattr(t, f.name) for f in dataclasses.fields(t)},
        "sampler": dataclasses.asdict(t.sampler),
        "model": dataclasses.asdict(t.model),
        "eval": dataclasses.asdict(EvalSection()),
        "mine": dataclasses.asdict(MineSection()),
        "run": dataclasses.asdict(RunSection()),
    }
    return {s: {k: v for k, v in kv.items() if k not in _HIDDEN.get(s, ())} for s, kv in raw.items()}


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    mine: MineSection = field(default_factory=MineSection)
    run: RunSection = field(default_factory=RunSection)

    @classmethod
    def from_values(cls, values: dict[str, dict[str, Any]]) -> "RunConfig":
        seed = values["run"]["seed"]
        sampler = SamplerConfig(**values["sampler"], seed=seed)
        model = enc.ModelConfig(vocab_size=1, **values["model"])
        return cls(
            data=DataSection(**values["data"]),
            train=TrainConfig(**values["train"], sampler=sampler, model=model, seed=seed),
            eval=EvalSection(**values["eval"]),
            mine=MineSection(**values["mine"]),
            run=RunSection(**values["run"]),
        )

    def eval_config(self, train_config: TrainConfig | None = None) -> EvalConfig:
        e = self.eval
        return EvalConfig.from_train(train_config or self.train, context_samples=e.context_samples,
                                     history=e.history, batch_size=e.batch_size)


def _coerce(text: str, default: Any) -> Any:
    if isinstance(default, bool):
        states = configparser.ConfigParser.BOOLEAN_STATES
        if text.lower() not in states:
            raise ValueError(f"expected a boolean, got {text!r}")
        return states[text.lower()]
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^([^\s=:#;][^=:]*?)\s*[=:]")


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of every ``key = value`` line, for diagnostics."""
    lines, section = {}, ""
    for lineno, line in enumerate(text.splitlines(), 1):
        if m := _SECTION_RE.match(line):
            section = m.group(1).strip()
        elif m := _KEY_RE.match(line):
            lines[(section, m.group(1).strip().lower())] = lineno
    return lines


def read_config_file(path: str | Path, values: dict[str, dict[str, Any]]) -> dict[str, dict[str, Any]]:
    """Overlay the file at ``path`` on ``values`` (returns a new dict)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError as exc:
        raise UsageError(f"{path}:{exc.lineno}: config parse error: key outside any [section]") from None
    except configparser.ParsingError as exc:  # errors hold (lineno, repr of the line)
        lineno, line = exc.errors[0]
        raise UsageError(f"{path}:{lineno}: config parse error: cannot parse {line}") from None
    except configparser.DuplicateOptionError as exc:
        raise UsageError(f"{path}:{exc.lineno}: config parse error: duplicate key {exc.option!r}") from None
    except configparser.DuplicateSectionError as exc:
        raise UsageError(f"{path}:{exc.lineno}: config parse error: duplicate section [{exc.section}]") from None
    where = _key_lines(text)
    out = {s: dict(kv) for s, kv in values.items()}
    for section in parser.sections():
        if section not in out:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            lineno = where.get((section, key), "?")
            if key not in out[section]:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r} in [{section}]")
            try:
                out[section][key] = _coerce(raw, out[section][key])
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: bad value for {section}.{key}: {exc}") from None
    return out


# flag dest -> (section, key)
FLAG_TARGETS = {
    "data": ("data", "path"),
    "granularity": ("data", "granularity"),
    "seed": ("run", "seed"),
    "threads": ("run", "threads"),
    "out": ("run", "out"),
    "epochs": ("train", "max_epochs"),
    "seq_len": ("train", "seq_len"),
    "variant": ("train", "variant"),
    "k_min": ("sampler", "k_min"),
    "k_max": ("sampler", "k_max"),
    "strategy": ("sampler", "strategy"),
    "checkpoint": ("eval", "checkpoint"),
    "split": ("eval", "split"),
    "window": ("mine", "window"),
    "min_support": ("mine", "min_support"),
    "purity": ("mine", "purity"),
}


def resolve_config(config_path: str | None, flags: dict[str, Any]) -> RunConfig:
    """Defaults, then the config file, then the flags that were actually given."""
    values = default_values()
    if config_path:
        values = read_config_file(config_path, values)
    for dest, value in flags.items():
        section, key = FLAG_TARGETS[dest]
        values[section][key] = value
    try:
        return RunConfig.from_values(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def format_config(config: RunConfig) -> str:
    """The resolved configuration in the file format it was read from."""
    t = config.train
    sections = {
        "data": dataclasses.asdict(config.data),
        "train": {f.name: getattr(t, f.name) for f in dataclasses.fields(t)},
        "sampler": dataclasses.asdict(t.sampler),
        "model": dataclasses.asdict(t.model),
        "eval": dataclasses.asdict(config.eval),
        "mine": dataclasses.asdict(config.mine),
        "run": dataclasses.asdict(config.run),
    }
    out = []
    for s, kv in sections.items():
        out.append(f"[{s}]")
        out += [f"{k} = {v}" for k, v in kv.items() if k not in _HIDDEN.get(s, ())]
        out.append("")
    return "\n".join(out)


# --- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would print usage and exit
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", metavar="PATH", help="config file (key = value lines in [sections])")
    common.add_argument("--data", metavar="DIR", help="dataset directory (train/valid/test.txt, *2id.txt)")
    common.add_argument("--granularity", type=int, metavar="N", help="raw timestamp units per day")
    common.add_argument("--seed", type=int, metavar="N")
    common.add_argument("--threads", type=int, metavar="N", help="cap on BLAS/OpenMP worker threads")
    common.add_argument("--out", metavar="DIR", help="parent directory of run directories")
    common.add_argument("--epochs", type=int, metavar="N")
    common.add_argument("--seq-len", type=int, metavar="N")
    common.add_argument("--k-min", type=int, metavar="N")
    common.add_argument("--k-max", type=int, metavar="N")
    common.add_argument("--strategy", choices=("uniform", "frequency"))
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--checkpoint", metavar="PATH", help="checkpoint to evaluate")
    common.add_argument("--split", choices=("train", "valid", "test"), help="split to evaluate")
    common.add_argument("--window", type=int, metavar="DAYS")
    common.add_argument("--min-support", type=int, metavar="N")
    common.add_argument("--purity", type=float, metavar="F")

    parser = _Parser(prog=PROG, description="Temporal KG completion with prompted fact sequences.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, text in (
        ("ingest", "validate a dataset and report its statistics"),
        ("train", "train an encoder and write a checkpoint"),
        ("eval", "rank test queries with a trained checkpoint"),
        ("ablate", "train and evaluate one variant"),
        ("mine", "mine ordered relation pairs and filter the test split"),
        ("dump-corpus", "write one epoch of serialized training sequences as text"),
    ):
        sub.add_parser(name, parents=[common], help=text, description=text, argument_default=argparse.SUPPRESS)
    return parser


# --- commands ------------------------------------------------------------------------


def make_run_dir(parent: str | Path, seed: int) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(parent) / f"{stamp}-seed{seed}"
    path, n = base, 0
    while True:
        try:
            path.mkdir(parents=True)
            return path
        except FileExistsError:
            n += 1
            path = base.with_name(f"{base.name}-{n}")


def load_data(config: RunConfig) -> TemporalKG:
    if not config.data.path:
        raise UsageError("no dataset: pass --data DIR or set [data] path")
    directory = Path(config.data.path)
    if not directory.is_dir():
        raise UsageError(f"dataset directory not found: {directory}")
    return load_dataset_dir(directory, config.data.granularity)


def _emit(text: str, run_dir: Path, name: str, stdout) -> None:
    (run_dir / name).write_text(text, encoding="utf-8")
    stdout.write(text)


def cmd_ingest(config: RunConfig, run_dir: Path, stdout) -> None:
    tkg = load_data(config)
    text = "".join(f"{k}\t{v}\n" for k, v in tkg.stats().items())
    first, last = tkg.time_range
    text += f"days\t{first}..{last}\n"
    _emit(text, run_dir, "stats.tsv", stdout)


def cmd_train(config: RunConfig, run_dir: Path, stdout) -> None:
    tkg = load_data(config)
    with open(run_dir / "train_log.tsv", "w", encoding="utf-8") as log:
        result = train(tkg, config.train, out_dir=run_dir, progress=[log])
    final = result.reports[-1].mean_loss if result.reports else float("nan")
    stdout.write(f"epochs\t{len(result.reports)}\nfinal_loss\t{final:.6f}\n")
    stdout.write(f"checkpoint\t{result.checkpoint}\nsha256\t{result.checkpoint_digest}\n")


def cmd_eval(config: RunConfig, run_dir: Path, stdout) -> None:
    if not config.eval.checkpoint:
        raise UsageError("no checkpoint: pass --checkpoint PATH or set [eval] checkpoint")
    if not Path(config.eval.checkpoint).is_file():
        raise UsageError(f"no checkpoint at {config.eval.checkpoint}")
    tkg = load_data(config)
    ckpt = enc.load_checkpoint(config.eval.checkpoint)
    trained = TrainConfig.from_dict(ckpt.meta["train_config"])
    prompter = make_prompter(tkg, trained.variant)
    if ckpt.vocab_digest != prompter.vocab.digest():
        raise enc.CheckpointError("checkpoint vocabulary does not match this dataset")
    result = evaluate(tkg, config.eval.split, ckpt.params, ckpt.config, prompter,
                      config.eval_config(trained), seed=config.run.seed, limit=config.eval.limit or None)
    with open(run_dir / "ranks.tsv", "w", encoding="utf-8") as fh:
        result.dump_ranks(fh)
    _emit(result.format(), run_dir, "metrics.tsv", stdout)


def cmd_ablate(config: RunConfig, run_dir: Path, stdout) -> None:
    tkg = load_data(config)
    result = ablate(tkg, config.train.variant, config.train, split=config.eval.split, out_dir=run_dir,
                    eval_config=config.eval_config())
    with open(run_dir / "ranks.tsv", "w", encoding="utf-8") as fh:
        result.dump_ranks(fh)
    _emit(f"variant\t{config.train.variant}\n" + result.format(), run_dir, "metrics.tsv", stdout)


def cmd_mine(config: RunConfig, run_dir: Path, stdout) -> None:
    tkg = load_data(config)
    m = config.mine
    result = mine_relation_pairs(tkg, m.window, m.min_support, m.purity)
    (run_dir / "test_filtered.txt").write_text(format_quads(result.filtered_test, tkg.granularity),
                                               encoding="utf-8")
    _emit(result.format(tkg.relation_names), run_dir, "relation_pairs.tsv", stdout)
    logger.info("%d pairs over %d relations; %d of %d test facts kept", len(result.pairs),
                len(result.relations), len(result.filtered_test), len(tkg.test))


def cmd_dump_corpus(config: RunConfig, run_dir: Path, stdout) -> None:
    tkg = load_data(config)
    prompter = make_prompter(tkg, config.train.variant)
    corpus = build_epoch_corpus(tkg, config.train, epoch_rng(config.train.seed, 1), prompter)
    text = "".join(" ".join(prompter.vocab.decode(seq.tokens)) + "\n" for seq in corpus.sequences)
    _emit(text, run_dir, "corpus.txt", stdout)
    logger.info("%d sequences, %d anchors without history", len(corpus.sequences), corpus.skipped)


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "mine": cmd_mine,
    "dump-corpus": cmd_dump_corpus,
}


def configure_logging() -> None:
    level = os.environ.get("PPT_LOG", "info").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"PPT_LOG must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(stream=sys.stderr, level=LOG_LEVELS[level], force=True,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def run(argv: Sequence[str], stdout=None) -> int:
    """Execute one command; returns the process exit status."""
    stdout = stdout or sys.stdout
    try:
        configure_logging()
        args = vars(build_parser().parse_args(list(argv)))
        command = args.pop("command")
        config = resolve_config(args.pop("config", None), args)
        run_dir = make_run_dir(config.run.out, config.run.seed)
        (run_dir / "config.ini").write_text(format_config(config), encoding="utf-8")
        logger.info("run directory %s", run_dir)
        limits = {"limits": config.run.threads} if config.run.threads > 0 else None
        if limits:
            with threadpool_limits(**limits):
                COMMANDS[command](config, run_dir, stdout)
        else:
            COMMANDS[command](config, run_dir, stdout)
    except (UsageError, DataFormatError, enc.CheckpointError, ValueError, OSError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"{PROG}: error: {message}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
