"""User-challenge participation prediction, plus user-only baselines.

The main model scores a (challenge representation, user representation)
concatenation with a two-layer sigmoid head.  Labels come from corpus
evidence over the full user x challenge cross product: a pair is positive
iff the user posted at least one video tagged with the challenge.

The baselines never see challenge features.  Each one trains a C-way
multi-label head over user-only raw features (visual, or visual plus
caption, from either backbone) and is asked per pair for the probability
at the pair's challenge slot, so it is evaluated exactly like the main
model while being blind to what the challenge looks like.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .corpus import Corpus, FoldPlan
from .encoding import embedding_matrix
from .errors import ConfigError, InputError, LeakageError, UnknownIdError, WeightsError
from .nn import FeedForwardHead, TrainConfig, TrainLog
from .representations import (
    ChallengeRepresentation,
    UserRepresentation,
    _pad_blocks,
    audit_no_leakage,
    read_challenge_representation,
    read_user_representation,
    select_user_videos,
    stored_tags,
    stored_users,
)
from .seeding import derive_rng
from .store import EmbeddingStore

PairKey = tuple[str, str]


@dataclasses.dataclass(frozen=True)
class ParticipationPair:
    user_id: str
    challenge_tag: str
    label: int
    split: str | None = None
    fold: int | None = None

    @property
    def key(self) -> PairKey:
        return (self.user_id, self.challenge_tag)


def build_pairs(corpus: Corpus, challenge_set: Sequence[str]) -> list[ParticipationPair]:
    """Full cross product of users and challenges, labeled by evidence."""
    unknown = sorted(set(challenge_set) - set(corpus.challenge_labels))
    if unknown:
        raise InputError(f"challenge tag(s) not in corpus: {', '.join(unknown)}")
    evidence = corpus.participation_evidence()
    pairs = []
    for user_id in corpus.users:
        for tag in sorted(challenge_set):
            label = int(tag in evidence.get(user_id, ()))
            pairs.append(ParticipationPair(user_id=user_id, challenge_tag=tag,
                                           label=label))
    return pairs


def stratified_pair_folds(pairs: Sequence[ParticipationPair], k: int,
                          seed: int) -> FoldPlan:
    """Assign pair keys to k folds, stratified by label.

    Within each label group, a seeded shuffle feeds a round-robin whose
    starting fold rotates with the number of pairs already placed, so the
    overall fold sizes still differ by at most one.
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if len(pairs) < k:
        raise ConfigError(f"cannot make {k} folds from {len(pairs)} pairs")
    keys = [p.key for p in pairs]
    if len(set(keys)) != len(keys):
        raise InputError("duplicate (user, challenge) pairs in fold input")
    bad = sorted({p.label for p in pairs} - {0, 1})
    if bad:
        raise InputError(f"pair labels must be 0 or 1, got {bad}")
    assignments: dict[PairKey, int] = {}
    offset = 0
    for label in (0, 1):
        group = sorted(p.key for p in pairs if p.label == label)
        perm = derive_rng(seed, "pair-folds", label).permutation(len(group))
        for i, idx in enumerate(perm):
            assignments[group[int(idx)]] = (offset + i) % k
        offset += len(group)
    return FoldPlan(k=k, assignments=assignments, seed=seed,
                    items=tuple(sorted(assignments)))


@dataclasses.dataclass(frozen=True)
class RepresentationSet:
    """Challenge and user representations, keyed for pair lookup."""

    challenges: Mapping[str, ChallengeRepresentation]
    users: Mapping[str, UserRepresentation]

    @classmethod
    def from_store(cls, store: EmbeddingStore) -> "RepresentationSet":
        challenges = {
            tag: read_challenge_representation(store, tag) for tag in stored_tags(store)
        }
        users = {
            uid: read_user_representation(store, uid) for uid in stored_users(store)
        }
        return cls(challenges=challenges, users=users)

    def pair_vector(self, user_id: str, challenge_tag: str) -> np.ndarray:
        if challenge_tag not in self.challenges:
            raise UnknownIdError(f"no representation for challenge {challenge_tag!r}")
        if user_id not in self.users:
            raise UnknownIdError(f"no representation for user {user_id!r}")
        return np.concatenate([
            self.challenges[challenge_tag].vector, self.users[user_id].vector,
        ])


class ParticipationModel:
    """Trained binary head over [challenge representation, user representation]."""

    def __init__(self, model: FeedForwardHead, challenge_dim: int, user_dim: int):
        if model.input_dim != challenge_dim + user_dim:
            raise ConfigError(
                f"head expects {model.input_dim}-dim input, representations"
                f" supply {challenge_dim}+{user_dim}"
            )
        self.model = model
        self.challenge_dim = challenge_dim
        self.user_dim = user_dim

    @property
    def input_dim(self) -> int:
        return self.model.input_dim

    def head_version(self) -> str:
        return self.model.version()

    def save(self, directory: Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.model.save(directory / "weights.bin")
        meta = {
            "challenge_dim": self.challenge_dim,
            "user_dim": self.user_dim,
            "head_version": self.head_version(),
        }
        (directory / "model.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, directory: Path) -> "ParticipationModel":
        directory = Path(directory)
        try:
            meta = json.loads((directory / "model.json").read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise WeightsError(f"no participation model at {directory}") from e
        model = FeedForwardHead.load(directory / "weights.bin")
        return cls(model=model, challenge_dim=int(meta["challenge_dim"]),
                   user_dim=int(meta["user_dim"]))


def _pair_matrix(pairs: Sequence[ParticipationPair],
                 reprs: RepresentationSet) -> tuple[np.ndarray, np.ndarray]:
    ordered = sorted(pairs, key=lambda p: p.key)
    X = np.stack([reprs.pair_vector(p.user_id, p.challenge_tag) for p in ordered])
    y = np.array([p.label for p in ordered], dtype=np.float64)
    return X.astype(np.float64), y


def train_participation(pairs: Sequence[ParticipationPair], reprs: RepresentationSet,
                        config: TrainConfig, hidden_dim: int = 256,
                        ) -> tuple[ParticipationModel, TrainLog]:
    """Train the binary participation head on the given (training) pairs.

    Refuses to train if any pair's user representation shares a video with
    any challenge representation; that would let the head match a video
    against itself.
    """
    if not pairs:
        raise ConfigError("no pairs to train on")
    audit = audit_no_leakage(list(reprs.users.values()), list(reprs.challenges.values()))
    if not audit.ok:
        worst = ", ".join(
            f"({u}, {c}): {', '.join(ids)}" for u, c, ids in audit.violations[:3]
        )
        raise LeakageError(
            f"representation leakage in {len(audit.violations)} pair(s), e.g."
            f" {worst}; rebuild user representations with the exclusion rule"
        )
    labels = {p.label for p in pairs}
    if not labels <= {0, 1}:
        raise ConfigError(f"labels must be 0/1, got {sorted(labels)}")
    X, y = _pair_matrix(pairs, reprs)
    challenge_dim = len(next(iter(reprs.challenges.values())).vector)
    user_dim = X.shape[1] - challenge_dim
    model = FeedForwardHead(X.shape[1], hidden_dim, 1, head="sigmoid",
                            seed=config.seed)
    log = model.fit(X, y[:, None], config)
    return ParticipationModel(model=model, challenge_dim=challenge_dim,
                              user_dim=user_dim), log


def predict(model: ParticipationModel, user_id: str, challenge_tag: str,
            reprs: RepresentationSet) -> tuple[float, int]:
    """(probability, hard label); probability 0.5 resolves to label 1."""
    x = reprs.pair_vector(user_id, challenge_tag)
    if len(x) != model.input_dim:
        raise ConfigError(
            f"representations supply {len(x)}-dim pairs, model expects"
            f" {model.input_dim}"
        )
    proba = float(model.model.predict_proba(x[None, :])[0, 0])
    return proba, int(proba >= 0.5)


def predict_pairs(model: ParticipationModel, pairs: Sequence[ParticipationPair],
                  reprs: RepresentationSet) -> list[dict[str, Any]]:
    """Per-pair predictions in (user_id, challenge_tag) order."""
    rows = []
    for pair in sorted(pairs, key=lambda p: p.key):
        proba, label = predict(model, pair.user_id, pair.challenge_tag, reprs)
        rows.append({
            "user_id": pair.user_id,
            "challenge_tag": pair.challenge_tag,
            "probability": proba,
            "label": label,
            "true_label": pair.label,
            "fold": pair.fold,
        })
    return rows


BASELINE_KINDS = ("visual-a", "visual+text-a", "visual-b", "visual+text-b")


class BaselineModel:
    """C-way multi-label head over user-only features, queried per pair."""

    def __init__(self, model: FeedForwardHead, classes: Sequence[str], kind: str):
        self.model = model
        self.classes = tuple(classes)
        self.kind = kind
        self._index = {c: i for i, c in enumerate(self.classes)}

    def predict_pair(self, feature: np.ndarray, challenge_tag: str) -> tuple[float, int]:
        if challenge_tag not in self._index:
            raise UnknownIdError(f"baseline has no output slot for {challenge_tag!r}")
        proba = float(self.model.predict_proba(feature[None, :])[0, self._index[challenge_tag]])
        return proba, int(proba >= 0.5)

    def save(self, directory: Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.model.save(directory / "weights.bin")
        meta = {"classes": list(self.classes), "kind": self.kind,
                "head_version": self.model.version()}
        (directory / "model.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, directory: Path) -> "BaselineModel":
        directory = Path(directory)
        try:
            meta = json.loads((directory / "model.json").read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise WeightsError(f"no baseline model at {directory}") from e
        model = FeedForwardHead.load(directory / "weights.bin")
        return cls(model=model, classes=tuple(meta["classes"]), kind=str(meta["kind"]))


def train_baseline(pairs: Sequence[ParticipationPair],
                   features: Mapping[str, np.ndarray], classes: Sequence[str],
                   config: TrainConfig, hidden_dim: int = 256,
                   kind: str = "visual-a") -> tuple[BaselineModel, TrainLog]:
    """Train a user-only baseline on pair labels via output-slot masks.

    Each training row is one pair: the user's feature vector, a target
    with the pair's label at its challenge slot, and a mask activating
    only that slot, so the loss never touches challenges the pair does
    not speak about.
    """
    if not pairs:
        raise ConfigError("no pairs to train on")
    classes = tuple(sorted(classes))
    index = {c: i for i, c in enumerate(classes)}
    ordered = sorted(pairs, key=lambda p: p.key)
    missing = sorted({p.user_id for p in ordered} - set(features))
    if missing:
        raise UnknownIdError(f"no features for user(s): {', '.join(missing[:5])}")
    unknown = sorted({p.challenge_tag for p in ordered} - set(index))
    if unknown:
        raise InputError(f"pair challenge(s) outside classes: {', '.join(unknown)}")
    X = np.stack([features[p.user_id] for p in ordered]).astype(np.float64)
    y = np.zeros((len(ordered), len(classes)))
    mask = np.zeros_like(y)
    for row, pair in enumerate(ordered):
        col = index[pair.challenge_tag]
        y[row, col] = pair.label
        mask[row, col] = 1.0
    model = FeedForwardHead(X.shape[1], hidden_dim, len(classes), head="sigmoid",
                            seed=config.seed)
    log = model.fit(X, y, config, mask=mask)
    return BaselineModel(model=model, classes=classes, kind=kind), log


def baseline_user_features(store: EmbeddingStore, user_ids: Sequence[str], m_u: int,
                           exclusion: Iterable[str] = (),
                           include_caption: bool = True) -> dict[str, np.ndarray]:
    """Raw per-user features for the baselines, from a raw video store.

    Concatenates the raw embeddings of the same videos the learned user
    representation would pick (newest first, exclusion applied, mean
    padding up to m_u), optionally without the caption part.
    """
    features: dict[str, np.ndarray] = {}
    for uid in user_ids:
        chosen, _ = select_user_videos(store, uid, m_u, exclusion)
        mat = embedding_matrix(store, chosen, include_caption=include_caption)
        blocks, _ = _pad_blocks([mat[i] for i in range(mat.shape[0])], m_u)
        features[uid] = np.concatenate(blocks).astype(np.float32)
    return features
