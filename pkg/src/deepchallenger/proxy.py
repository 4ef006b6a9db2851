"""Proxy classification tasks producing learned video embeddings.

Two heads share this code path: classify a video into its challenge, and
classify a video into its posting user.  Neither classifier is the end
product; the hidden activation of the trained head is, serving as the
learned (refined) video embedding that downstream representations
concatenate.  Class identity is carried as a sorted tuple of label
strings so that class index assignment never depends on dict order.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .encoding import embedding_matrix
from .errors import ConfigError, UnknownIdError, WeightsError
from .metrics import MetricsReport, evaluate_labels
from .nn import FeedForwardHead, TrainConfig, TrainLog
from .store import EmbeddingStore

DEFAULT_HIDDEN_DIM = 256
PROXY_TASKS = ("challenge", "user")


@dataclasses.dataclass(frozen=True)
class LearnedVideoEmbedding:
    """Hidden-layer activation of a proxy head for one video."""

    video_id: str
    vector: np.ndarray
    task: str
    head_version: str


class ProxyHead:
    """A trained proxy classifier plus the label bookkeeping around it."""

    def __init__(self, task: str, classes: Sequence[str], include_caption: bool,
                 model: FeedForwardHead):
        if task not in PROXY_TASKS:
            raise ConfigError(f"task must be one of {PROXY_TASKS}, got {task!r}")
        self.task = task
        self.classes = tuple(classes)
        self.include_caption = include_caption
        self.model = model

    @property
    def input_dim(self) -> int:
        return self.model.input_dim

    @property
    def hidden_dim(self) -> int:
        return self.model.hidden_dim

    @property
    def num_classes(self) -> int:
        return self.model.output_dim

    def head_version(self) -> str:
        return self.model.version()

    def predict_classes(self, X: np.ndarray) -> list[str]:
        return [self.classes[i] for i in self.model.predict(X)]

    def save(self, directory: Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.model.save(directory / "weights.bin")
        meta = {
            "task": self.task,
            "classes": list(self.classes),
            "include_caption": self.include_caption,
            "head_version": self.head_version(),
        }
        (directory / "head.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, directory: Path, expect_input_dim: int | None = None) -> "ProxyHead":
        directory = Path(directory)
        meta_path = directory / "head.json"
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise WeightsError(f"no proxy head at {directory} (missing head.json)") from e
        except json.JSONDecodeError as e:
            raise WeightsError(f"corrupt head metadata at {meta_path}: {e}") from e
        model = FeedForwardHead.load(directory / "weights.bin",
                                     expect_input_dim=expect_input_dim)
        if len(meta["classes"]) != model.output_dim:
            raise WeightsError(
                f"{directory}: metadata lists {len(meta['classes'])} classes,"
                f" weights have {model.output_dim} outputs"
            )
        return cls(task=meta["task"], classes=meta["classes"],
                   include_caption=bool(meta["include_caption"]), model=model)


def _class_index(labels: Mapping[str, str]) -> tuple[tuple[str, ...], dict[str, int]]:
    classes = tuple(sorted(set(labels.values())))
    return classes, {c: i for i, c in enumerate(classes)}


def _require_known(store: EmbeddingStore, ids: Sequence[str]) -> None:
    missing = sorted(vid for vid in ids if vid not in store)
    if missing:
        raise UnknownIdError(
            f"{len(missing)} id(s) not in store {store.directory}:"
            f" {', '.join(missing[:5])}" + ("…" if len(missing) > 5 else "")
        )


def train_proxy(store: EmbeddingStore, labels: Mapping[str, str], config: TrainConfig,
                hidden_dim: int = DEFAULT_HIDDEN_DIM, include_caption: bool = True,
                task: str = "challenge") -> tuple[ProxyHead, TrainLog]:
    """Train one proxy classifier on raw embeddings from a store.

    labels maps video_id to a class string (a challenge tag or a user id).
    Rows are assembled in sorted video_id order, so a given store, label
    map, and config always reproduce the same training run.
    """
    if not labels:
        raise ConfigError("no labeled videos to train on")
    ids = sorted(labels)
    _require_known(store, ids)
    classes, index = _class_index(labels)
    if len(classes) < 2:
        raise ConfigError(
            f"proxy training needs >= 2 classes, got {len(classes)} ({classes})"
        )
    X = embedding_matrix(store, ids, include_caption=include_caption)
    y = np.array([index[labels[vid]] for vid in ids], dtype=np.int64)
    model = FeedForwardHead(X.shape[1], hidden_dim, len(classes),
                            head="softmax", seed=config.seed)
    log = model.fit(X.astype(np.float64), y, config)
    return ProxyHead(task=task, classes=classes, include_caption=include_caption,
                     model=model), log


def extract_learned_embeddings(head: ProxyHead, store: EmbeddingStore,
                               ids: Sequence[str]) -> list[LearnedVideoEmbedding]:
    """Hidden activations, dropout disabled, in the caller's id order."""
    if not ids:
        return []
    _require_known(store, ids)
    X = embedding_matrix(store, ids, include_caption=head.include_caption)
    hidden = head.model.hidden(X.astype(np.float64))
    version = head.head_version()
    return [
        LearnedVideoEmbedding(video_id=vid, vector=hidden[i], task=head.task,
                              head_version=version)
        for i, vid in enumerate(ids)
    ]


def evaluate_proxy(head: ProxyHead, store: EmbeddingStore,
                   labels: Mapping[str, str], test_ids: Sequence[str]) -> MetricsReport:
    """Macro P/R/F1 of the head on held-out videos."""
    if not test_ids:
        raise ConfigError("empty test set")
    _require_known(store, test_ids)
    unlabeled = sorted(set(test_ids) - set(labels))
    if unlabeled:
        raise UnknownIdError(f"test id(s) without labels: {', '.join(unlabeled[:5])}")
    unknown = sorted(set(labels[vid] for vid in test_ids) - set(head.classes))
    if unknown:
        raise UnknownIdError(
            f"test label(s) outside the trained classes: {', '.join(unknown[:5])}"
        )
    X = embedding_matrix(store, list(test_ids), include_caption=head.include_caption)
    predicted = head.predict_classes(X.astype(np.float64))
    true = [labels[vid] for vid in test_ids]
    return evaluate_labels(true, predicted, head.classes)
