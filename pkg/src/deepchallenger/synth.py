"""Synthetic corpus generator with planted, analytically known structure.

Participation ground truth follows a planted affinity rule: user ``i``
participates in challenge ``j`` iff ``i mod C == j``, with each (user,
challenge) decision independently flipped at ``flip_rate``.  Participation
is materialized as actual challenge-tagged videos authored by the
participants, so labels derived from corpus evidence equal the planted
matrix.

The affinity leaves two tunable feature trails, and both point through
challenge content rather than through the challenge's identity alone:

* ``class_weight`` mixes the affinity challenge's own pattern into the
  user's motif, so a matching rule ("the user's videos resemble the
  challenge's videos") is recoverable across users.
* ``author_weight`` mixes the owner's motif into each challenge video,
  so a challenge's videos carry traces of who participates in it.

User profile videos are written before challenge videos, which makes the
challenge dataset the newest part of every participant's history; the
user-representation exclusion rule therefore does real work on this
corpus instead of holding vacuously.

The signal strength ``s`` blends patterns against a per-clip nuisance
background: ``s=0`` yields pure noise, ``s=1`` fully separable classes.
Each clip also frames its motif at one of ``motif_shifts`` spatial
placements, so motif recognition does not reduce to one linear direction
per class.  Hashtag captions appear only on challenge videos (with
probability ``s``); user captions are filler tokens, so caption features
never reveal a user's affinity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .corpus import Corpus, VideoRecord, save_manifest
from .errors import ConfigError, DataError
from .seeding import derive_rng

CAPTION_FILLERS = (
    "vibes", "dance", "fun", "lol", "trend", "music", "mood", "daily", "🔥", "💃",
)


@dataclass(frozen=True)
class SyntheticConfig:
    challenges: int = 3
    users: int = 24
    videos_per_user: int = 8
    videos_per_challenge: int = 20
    frame_size: int = 32
    frames_min: int = 4
    frames_max: int = 10
    signal: float = 0.9
    flip_rate: float = 0.1
    seed: int = 0
    # Weight of the affinity challenge's own pattern inside a user's motif;
    # the remainder is a user-unique pattern.  At 0 a user's profile videos
    # carry no trace of which challenge they favor.
    class_weight: float = 0.35
    # Weight of the owner's motif inside each challenge video; the remainder
    # is the challenge's pattern.  At 0 challenge videos carry no trace of
    # who authored them.
    author_weight: float = 0.25
    # Small constant per-frame perturbation so videos of one source are not
    # bit-identical even at signal=1.
    jitter: float = 0.05
    # Number of distinct spatial placements a motif can take; each video
    # rolls its motif to one of them.  Placement varies per video the way
    # camera framing varies per clip, so recognizing a motif across a
    # user's videos requires placement-tolerant features.  1 disables it.
    motif_shifts: int = 4

    def validate(self) -> None:
        for name in ("challenges", "users", "videos_per_user", "videos_per_challenge",
                     "frame_size", "frames_min", "frames_max"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"synthetic config: {name} must be positive")
        if self.frames_min > self.frames_max:
            raise ConfigError("synthetic config: frames_min > frames_max")
        if not 0.0 <= self.signal <= 1.0:
            raise ConfigError("synthetic config: signal must be in [0, 1]")
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ConfigError("synthetic config: flip_rate must be in [0, 1]")
        if not 0.0 <= self.class_weight <= 1.0:
            raise ConfigError("synthetic config: class_weight must be in [0, 1]")
        if not 0.0 <= self.author_weight <= 1.0:
            raise ConfigError("synthetic config: author_weight must be in [0, 1]")
        if self.motif_shifts < 1:
            raise ConfigError("synthetic config: motif_shifts must be >= 1")

    def challenge_tag(self, j: int) -> str:
        return f"ch{j:02d}"

    def user_id(self, i: int) -> str:
        return f"u{i:03d}"


@dataclass
class PlantedTruth:
    """The analytic participation oracle written alongside the corpus."""

    participates: dict[str, list[str]]
    flips: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "participates": {u: sorted(tags) for u, tags in sorted(self.participates.items())},
            "flips": sorted([list(f) for f in self.flips]),
        }


def planted_participation(config: SyntheticConfig) -> PlantedTruth:
    """Evaluate the planted affinity rule (with flips) for every pair."""
    rng = derive_rng(config.seed, "flips")
    participates: dict[str, list[str]] = {}
    flips: list[tuple[str, str]] = []
    for i in range(config.users):
        uid = config.user_id(i)
        tags = []
        for j in range(config.challenges):
            base = (i % config.challenges) == j
            flipped = bool(rng.random() < config.flip_rate)
            if flipped:
                flips.append((uid, config.challenge_tag(j)))
            if base != flipped:
                tags.append(config.challenge_tag(j))
        participates[uid] = tags
    return PlantedTruth(participates=participates, flips=flips)


def _pattern(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=(size, size, 3))


def _write_frames(directory: Path, pattern: np.ndarray, count: int, s: float,
                  jitter: float, shifts: int, rng: np.random.Generator) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    # The clip frames its motif at one of `shifts` placements, over one
    # nuisance background shared by the clip's frames the way a real clip
    # shares a scene.  Averaging over frames cancels neither; recognizing
    # the motif across clips takes placement-tolerant features.
    placement = int(rng.integers(0, shifts))
    offset = (placement * pattern.shape[0]) // shifts
    placed = np.roll(pattern, (offset, offset), axis=(0, 1))
    background = rng.uniform(0.0, 1.0, size=pattern.shape)
    for t in range(count):
        frame = s * placed + (1.0 - s) * background
        if jitter > 0.0:
            frame = frame + jitter * rng.standard_normal(pattern.shape)
        img = Image.fromarray(np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8))
        img.save(directory / f"{t:06d}.png")


def _caption(tokens: list[str], rng: np.random.Generator, n_fillers: int) -> str:
    picks = rng.integers(0, len(CAPTION_FILLERS), size=n_fillers)
    return " ".join(tokens + [CAPTION_FILLERS[int(p)] for p in picks])


def generate_synthetic_corpus(config: SyntheticConfig, dest: str | Path) -> Corpus:
    """Generate frames + manifest + planted truth under ``dest``.

    Same config and seed produce byte-identical output trees.
    """
    config.validate()
    dest = Path(dest)
    C, U = config.challenges, config.users
    size = config.frame_size

    pat_rng = derive_rng(config.seed, "patterns")
    challenge_patterns = [_pattern(pat_rng, size) for _ in range(C)]
    unique_patterns = [_pattern(pat_rng, size) for _ in range(U)]
    user_motifs = [
        config.class_weight * challenge_patterns[i % C]
        + (1.0 - config.class_weight) * unique_patterns[i]
        for i in range(U)
    ]

    truth = planted_participation(config)
    participants: dict[int, list[int]] = {
        j: [i for i in range(U) if config.challenge_tag(j) in truth.participates[config.user_id(i)]]
        for j in range(C)
    }
    for j, members in participants.items():
        if not members:
            raise DataError(
                f"flip realization left challenge {config.challenge_tag(j)} without participants;"
                " choose another seed or lower the flip rate"
            )
        if len(members) > config.videos_per_challenge:
            raise ConfigError(
                f"challenge {config.challenge_tag(j)} has {len(members)} participants but only"
                f" {config.videos_per_challenge} videos; raise videos_per_challenge so every"
                " participant leaves evidence"
            )

    count_rng = derive_rng(config.seed, "frame-counts")
    records: list[VideoRecord] = []

    # Profile videos first; challenge videos after, so the challenge dataset
    # is the newest slice of each participant's history.
    for i in range(U):
        uid = config.user_id(i)
        for t in range(config.videos_per_user):
            vid = f"{uid}v{t:03d}"
            n_frames = int(count_rng.integers(config.frames_min, config.frames_max + 1))
            vid_rng = derive_rng(config.seed, "video", vid)
            _write_frames(dest / "frames" / vid, user_motifs[i], n_frames,
                          config.signal, config.jitter, config.motif_shifts, vid_rng)
            caption = _caption([], vid_rng, n_fillers=2 + int(vid_rng.integers(0, 3)))
            records.append(VideoRecord(
                video_id=vid, user_id=uid, caption=caption,
                frame_source=f"frames/{vid}", frame_count=n_frames,
            ))

    for j in range(C):
        tag = config.challenge_tag(j)
        members = participants[j]
        for t in range(config.videos_per_challenge):
            vid = f"c{j:02d}v{t:03d}"
            owner_index = members[t % len(members)]
            pattern = ((1.0 - config.author_weight) * challenge_patterns[j]
                       + config.author_weight * user_motifs[owner_index])
            n_frames = int(count_rng.integers(config.frames_min, config.frames_max + 1))
            vid_rng = derive_rng(config.seed, "video", vid)
            _write_frames(dest / "frames" / vid, pattern, n_frames,
                          config.signal, config.jitter, config.motif_shifts, vid_rng)
            tokens = [f"#{tag}"] if vid_rng.random() < config.signal else []
            caption = _caption(tokens, vid_rng, n_fillers=1 + int(vid_rng.integers(0, 3)))
            records.append(VideoRecord(
                video_id=vid, user_id=config.user_id(owner_index), caption=caption,
                frame_source=f"frames/{vid}", frame_count=n_frames, challenge_tag=tag,
            ))

    corpus = Corpus(records, root=dest)
    save_manifest(corpus, dest / "manifest.jsonl")
    (dest / "planted.json").write_text(
        json.dumps(truth.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return corpus


def load_planted_truth(dest: str | Path) -> dict[str, list[str]]:
    obj = json.loads((Path(dest) / "planted.json").read_text(encoding="utf-8"))
    return {u: list(tags) for u, tags in obj["participates"].items()}
