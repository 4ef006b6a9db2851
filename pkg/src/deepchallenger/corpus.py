"""Canonical data model, manifest ingestion and dataset splitting.

The on-disk manifest is line-delimited JSON (UTF-8), one video record per
line.  Required fields: ``schema_version``, ``video_id``, ``user_id``,
``caption``, ``frame_source``, ``frame_count``; ``challenge_tag`` is
optional.  Unknown fields are preserved on round-trip.  ``frame_source`` is
a directory of zero-padded numbered image files (``000000.png`` ...) in
temporal order, resolved relative to the manifest's own directory so a
corpus can be relocated wholesale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, TypeVar

import numpy as np

from .errors import ConfigError, DataError, IntegrityError, ManifestParseError

MANIFEST_SCHEMA_VERSION = 1

_FRAME_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

_REQUIRED_FIELDS = ("video_id", "user_id", "caption", "frame_source", "frame_count")


@dataclass(frozen=True)
class VideoRecord:
    """One video: identity, owner, optional challenge tag, frame data, caption."""

    video_id: str
    user_id: str
    caption: str
    frame_source: str
    frame_count: int
    challenge_tag: str | None = None
    extras: tuple[tuple[str, Any], ...] = ()

    def extras_dict(self) -> dict[str, Any]:
        return dict(self.extras)


def frame_files(directory: Path) -> list[Path]:
    """Frame image files of a frame-source directory, in temporal order."""
    if not directory.is_dir():
        return []
    files = [p for p in directory.iterdir() if p.suffix.lower() in _FRAME_SUFFIXES]
    return sorted(files, key=lambda p: p.name)


class Corpus:
    """Immutable, validated collection of videos.

    Videos iterate in sorted ``video_id`` order so every downstream artifact
    is reproducible; ``manifest_order`` keeps the original file order, which
    doubles as the recency proxy (later lines are newer).
    """

    def __init__(self, videos: Sequence[VideoRecord], root: Path | None = None):
        ids = [v.video_id for v in videos]
        dupes = sorted({i for i in ids if ids.count(i) > 1}) if len(set(ids)) != len(ids) else []
        if dupes:
            raise IntegrityError(f"duplicate video_id(s): {', '.join(dupes)}")
        self.manifest_order: tuple[str, ...] = tuple(ids)
        self.videos: tuple[VideoRecord, ...] = tuple(sorted(videos, key=lambda v: v.video_id))
        self.root = Path(root) if root is not None else None
        self.by_id: dict[str, VideoRecord] = {v.video_id: v for v in self.videos}
        self.users: tuple[str, ...] = tuple(sorted({v.user_id for v in self.videos}))
        self.challenge_labels: tuple[str, ...] = tuple(
            sorted({v.challenge_tag for v in self.videos if v.challenge_tag is not None})
        )
        self._position = {vid: i for i, vid in enumerate(self.manifest_order)}

    def __len__(self) -> int:
        return len(self.videos)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return self.videos == other.videos and self.manifest_order == other.manifest_order

    def position(self, video_id: str) -> int:
        """Manifest position of a video; higher means more recent."""
        return self._position[video_id]

    def frame_dir(self, video: VideoRecord) -> Path:
        base = self.root if self.root is not None else Path(".")
        return base / video.frame_source

    def videos_of_user(self, user_id: str) -> list[VideoRecord]:
        return [v for v in self.videos if v.user_id == user_id]

    def videos_of_challenge(self, tag: str) -> list[VideoRecord]:
        return [v for v in self.videos if v.challenge_tag == tag]

    def tagged_videos(self) -> list[VideoRecord]:
        return [v for v in self.videos if v.challenge_tag is not None]

    def untagged_videos(self) -> list[VideoRecord]:
        return [v for v in self.videos if v.challenge_tag is None]

    def participation_evidence(self) -> dict[str, set[str]]:
        """user_id -> set of challenge tags the user has posted a video for."""
        out: dict[str, set[str]] = {u: set() for u in self.users}
        for v in self.videos:
            if v.challenge_tag is not None:
                out[v.user_id].add(v.challenge_tag)
        return out


def _parse_manifest_line(line: str, lineno: int) -> VideoRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ManifestParseError(f"line {lineno}: not valid JSON ({e.msg})") from e
    if not isinstance(obj, dict):
        raise ManifestParseError(f"line {lineno}: expected a JSON object")
    version = obj.pop("schema_version", None)
    if version != MANIFEST_SCHEMA_VERSION:
        raise ManifestParseError(
            f"line {lineno}: schema_version {version!r} is not {MANIFEST_SCHEMA_VERSION}"
        )
    missing = [k for k in _REQUIRED_FIELDS if k not in obj]
    if missing:
        raise ManifestParseError(f"line {lineno}: missing field(s) {', '.join(missing)}")
    kwargs: dict[str, Any] = {}
    for name in _REQUIRED_FIELDS:
        kwargs[name] = obj.pop(name)
    tag = obj.pop("challenge_tag", None)
    if not isinstance(kwargs["frame_count"], int) or kwargs["frame_count"] < 1:
        raise ManifestParseError(f"line {lineno}: frame_count must be an integer >= 1")
    for name in ("video_id", "user_id", "caption", "frame_source"):
        if not isinstance(kwargs[name], str):
            raise ManifestParseError(f"line {lineno}: {name} must be a string")
    if tag is not None and not isinstance(tag, str):
        raise ManifestParseError(f"line {lineno}: challenge_tag must be a string")
    return VideoRecord(challenge_tag=tag, extras=tuple(sorted(obj.items())), **kwargs)


def load_manifest(path: str | Path) -> Corpus:
    """Load and validate a manifest file into a Corpus.

    Rejects duplicate video ids and dangling frame references: every
    ``frame_source`` directory must exist and contain exactly
    ``frame_count`` frame files.
    """
    path = Path(path)
    records: list[VideoRecord] = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                records.append(_parse_manifest_line(line, lineno))
    except FileNotFoundError as e:
        raise DataError(f"manifest file not found: {path}") from e
    corpus = Corpus(records, root=path.parent)
    bad: list[str] = []
    for v in corpus.videos:
        if len(frame_files(corpus.frame_dir(v))) != v.frame_count:
            bad.append(v.video_id)
    if bad:
        raise IntegrityError(
            "missing or incomplete frame_source for video_id(s): " + ", ".join(bad)
        )
    return corpus


def save_manifest(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back to a manifest file, preserving manifest order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for vid in corpus.manifest_order:
        v = corpus.by_id[vid]
        obj: dict[str, Any] = {"schema_version": MANIFEST_SCHEMA_VERSION}
        obj["video_id"] = v.video_id
        obj["user_id"] = v.user_id
        if v.challenge_tag is not None:
            obj["challenge_tag"] = v.challenge_tag
        obj["caption"] = v.caption
        obj["frame_source"] = v.frame_source
        obj["frame_count"] = v.frame_count
        obj.update(v.extras_dict())
        lines.append(json.dumps(obj, ensure_ascii=False))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


T = TypeVar("T")


def split_train_test(items: Sequence[T], fraction: float, seed: int) -> tuple[list[T], list[T]]:
    """Deterministic shuffled split with |train| = round(fraction * N).

    Items are sorted first, then shuffled with a seeded generator, so the
    partition is identical across runs and platforms.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fraction must be in (0, 1), got {fraction}")
    if len(items) == 0:
        raise ConfigError("cannot split an empty item list")
    ordered = sorted(items)  # type: ignore[type-var]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ordered))
    n_train = round(fraction * len(ordered))
    train = [ordered[i] for i in perm[:n_train]]
    test = [ordered[i] for i in perm[n_train:]]
    return train, test


@dataclass(frozen=True)
class FoldPlan:
    """Balanced assignment of items to k folds, reproducible from the seed."""

    k: int
    assignments: Mapping[Any, int]
    seed: int
    items: tuple = field(default=())

    def fold_items(self, fold: int) -> list:
        return [it for it in self.items if self.assignments[it] == fold]

    def train_items(self, fold: int) -> list:
        return [it for it in self.items if self.assignments[it] != fold]

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for f in self.assignments.values():
            counts[f] += 1
        return counts


def make_folds(items: Sequence[T], k: int, seed: int) -> FoldPlan:
    """Assign items to k folds whose sizes differ by at most one."""
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if len(items) < k:
        raise ConfigError(f"need at least k={k} items, got {len(items)}")
    ordered = sorted(items)  # type: ignore[type-var]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ordered))
    assignments = {ordered[int(idx)]: i % k for i, idx in enumerate(perm)}
    return FoldPlan(k=k, assignments=assignments, seed=seed, items=tuple(ordered))


def stratified_folds(labels: Mapping[T, Any], k: int, seed: int) -> FoldPlan:
    """Assign labeled items to k folds, spreading each label class evenly.

    Every class with at least two members is guaranteed to appear in the
    training side of every fold, which plain :func:`make_folds` cannot
    promise for rare classes.
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if len(labels) < k:
        raise ConfigError(f"need at least k={k} items, got {len(labels)}")
    ordered = sorted(labels)  # type: ignore[type-var]
    groups: dict[Any, list[T]] = {}
    for item in ordered:
        groups.setdefault(labels[item], []).append(item)
    rng = np.random.default_rng(seed)
    assignments: dict[T, int] = {}
    offset = 0
    # The running offset staggers small classes across folds instead of
    # piling them all into fold 0.
    for label in sorted(groups, key=str):
        group = groups[label]
        perm = rng.permutation(len(group))
        for i, idx in enumerate(perm):
            assignments[group[int(idx)]] = (offset + i) % k
        offset += len(group)
    return FoldPlan(k=k, assignments=assignments, seed=seed, items=tuple(ordered))


def iter_sorted(items: Iterable[T]) -> list[T]:
    """Sorted copy; the canonical pre-shuffle order used everywhere."""
    return sorted(items)  # type: ignore[type-var]
