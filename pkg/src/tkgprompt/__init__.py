"""Temporal knowledge graph completion as masked-token prediction over prompted fact sequences."""

from .evaluator import EvalConfig, Metrics, Query, evaluate, mine_relation_pairs
from .kg import TemporalKG, load_dataset_dir, load_tkg
from .prompts import IntervalDictionary, Prompter, bucket_of
from .sampler import SamplerConfig, TsgKind, sample_tsg, tsg_to_tig
from .trainer import TrainConfig, train

__version__ = "0.1.0"
