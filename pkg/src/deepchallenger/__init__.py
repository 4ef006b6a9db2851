"""deepChallenger: who participates in which video challenge.

Videos become embeddings (sampled frames through a visual backbone,
caption through a text encoder), two proxy classifiers distill those into
learned embeddings, challenges and users become fixed-arity
concatenations of learned embeddings, and a binary head scores
user-challenge pairs against user-only baselines.
"""

from .corpus import Corpus, FoldPlan, VideoRecord, load_manifest, save_manifest
from .encoding import encode_corpus
from .errors import DeepChallengerError
from .metrics import MetricsReport, cross_validate, evaluate_labels, macro_scores
from .nn import TrainConfig
from .participation import build_pairs, train_baseline, train_participation
from .proxy import extract_learned_embeddings, train_proxy
from .representations import (
    audit_no_leakage,
    build_challenge_representation,
    build_user_representation,
)
from .store import EmbeddingStore
from .synth import SyntheticConfig, generate_synthetic_corpus

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "DeepChallengerError",
    "EmbeddingStore",
    "FoldPlan",
    "MetricsReport",
    "SyntheticConfig",
    "TrainConfig",
    "VideoRecord",
    "audit_no_leakage",
    "build_challenge_representation",
    "build_pairs",
    "build_user_representation",
    "cross_validate",
    "encode_corpus",
    "evaluate_labels",
    "extract_learned_embeddings",
    "generate_synthetic_corpus",
    "load_manifest",
    "macro_scores",
    "save_manifest",
    "train_baseline",
    "train_participation",
    "train_proxy",
    "__version__",
]
