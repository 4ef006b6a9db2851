"""Fixed-arity challenge and user representations over learned embeddings.

A challenge representation chains the learned embeddings of n_c of its
videos; a user representation chains the learned embeddings of the user's
m_u most recent videos, after removing every video that appears in the
challenge dataset (otherwise the participation classifier could match a
video against itself).  Manifest position stands in for recency: a larger
position means a later, newer post.

Challenges with more than n_c videos are subsampled by a seeded shuffle
and the chosen ids are laid out in sorted order; challenges or users with
fewer videos than the arity are padded by repeating the mean of their
available embeddings, which keeps padded blocks in-distribution.  Padded
blocks carry the sentinel id ``PAD_ID`` in contributing_ids so arity is
exact while audits can ignore them.
"""

from __future__ import annotations

import dataclasses
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ConsistencyError, DataError
from .seeding import derive_rng
from .store import EmbeddingStore

PAD_ID = "<pad>"
DEFAULT_CHALLENGE_ARITY = 16
DEFAULT_USER_ARITY = 8


@dataclasses.dataclass(frozen=True)
class ChallengeRepresentation:
    challenge_tag: str
    vector: np.ndarray  # (n_c * hidden_dim,)
    contributing_ids: tuple[str, ...]
    n_c: int
    padding_count: int


@dataclasses.dataclass(frozen=True)
class UserRepresentation:
    user_id: str
    vector: np.ndarray  # (m_u * hidden_dim,)
    contributing_ids: tuple[str, ...]
    m_u: int
    padding_count: int
    excluded_ids: frozenset[str]


def _pad_blocks(blocks: list[np.ndarray], arity: int) -> tuple[list[np.ndarray], int]:
    padding = arity - len(blocks)
    if padding > 0:
        mean = np.mean(np.stack(blocks), axis=0, dtype=np.float64).astype(np.float32)
        blocks = blocks + [mean] * padding
    return blocks, max(padding, 0)


def build_challenge_representation(tag: str, store: EmbeddingStore, n_c: int,
                                   seed: int) -> ChallengeRepresentation:
    """Concatenate n_c learned embeddings of videos tagged with tag.

    With more than n_c candidates, a seeded shuffle picks which videos
    contribute and the picks are laid out in sorted video_id order; with
    fewer, every video contributes and mean blocks fill the remainder.
    """
    if n_c < 1:
        raise ConfigError(f"n_c must be >= 1, got {n_c}")
    candidates = sorted(
        vid for vid in store.ids() if store.meta(vid).get("challenge_tag") == tag
    )
    if not candidates:
        raise DataError(f"no videos tagged {tag!r} in store {store.directory}")
    if len(candidates) >= n_c:
        perm = derive_rng(seed, "challenge-arity", tag).permutation(len(candidates))
        chosen = sorted(candidates[i] for i in perm[:n_c])
    else:
        chosen = candidates
    blocks = [store.get(vid) for vid in chosen]
    blocks, padding = _pad_blocks(blocks, n_c)
    ids = tuple(chosen) + (PAD_ID,) * padding
    return ChallengeRepresentation(
        challenge_tag=tag, vector=np.concatenate(blocks),
        contributing_ids=ids, n_c=n_c, padding_count=padding,
    )


def select_user_videos(store: EmbeddingStore, user_id: str, m_u: int,
                       exclusion: Iterable[str]) -> tuple[list[str], frozenset[str]]:
    """The user's newest non-excluded video ids, at most m_u of them.

    This single selection rule backs both the learned user representation
    and the raw-feature baselines, so the two always see the same videos.
    Returns (chosen ids, excluded ids).
    """
    if m_u < 1:
        raise ConfigError(f"m_u must be >= 1, got {m_u}")
    owned = [vid for vid in store.ids() if store.meta(vid).get("user_id") == user_id]
    if not owned:
        raise DataError(f"user {user_id!r} has no videos in store {store.directory}")
    excluded = frozenset(owned) & frozenset(exclusion)
    available = [vid for vid in owned if vid not in excluded]
    if not available:
        raise DataError(
            f"user {user_id!r}: all {len(owned)} videos fall under the"
            " exclusion rule, nothing left to represent the user"
        )

    def recency_key(vid: str) -> tuple[int, str]:
        position = store.meta(vid).get("position")
        if position is None:
            raise ConsistencyError(
                f"store {store.directory} has no position metadata for {vid!r};"
                " cannot order videos by recency"
            )
        return (-int(position), vid)

    available.sort(key=recency_key)
    return available[:m_u], excluded


def build_user_representation(user_id: str, store: EmbeddingStore, m_u: int,
                              exclusion: Iterable[str]) -> UserRepresentation:
    """Concatenate the learned embeddings of a user's newest m_u videos.

    Videos named in exclusion never contribute; they are the challenge
    dataset's videos, removed so participation training cannot see the
    same video on both sides of a pair.
    """
    chosen, excluded = select_user_videos(store, user_id, m_u, exclusion)
    blocks = [store.get(vid) for vid in chosen]
    blocks, padding = _pad_blocks(blocks, m_u)
    ids = tuple(chosen) + (PAD_ID,) * padding
    return UserRepresentation(
        user_id=user_id, vector=np.concatenate(blocks), contributing_ids=ids,
        m_u=m_u, padding_count=padding, excluded_ids=excluded,
    )


@dataclasses.dataclass(frozen=True)
class LeakageReport:
    """Pairs whose representations share a contributing video."""

    violations: tuple[tuple[str, str, tuple[str, ...]], ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "violations": [
                {"user_id": u, "challenge_tag": c, "shared_ids": list(ids)}
                for u, c, ids in self.violations
            ],
        }


def audit_no_leakage(users: Sequence[UserRepresentation],
                     challenges: Sequence[ChallengeRepresentation]) -> LeakageReport:
    """Cross-check every (user, challenge) pair for shared contributing ids."""
    violations = []
    for user in users:
        user_ids = set(user.contributing_ids) - {PAD_ID}
        for challenge in challenges:
            shared = user_ids & (set(challenge.contributing_ids) - {PAD_ID})
            if shared:
                violations.append(
                    (user.user_id, challenge.challenge_tag, tuple(sorted(shared)))
                )
    violations.sort()
    return LeakageReport(violations=tuple(violations))


# ---- materialization ------------------------------------------------------
#
# Representations are stored in the same binary store format as video
# embeddings, keyed "challenge:<tag>" and "user:<id>", so the participation
# stage is decoupled from how representations were built.


def challenge_key(tag: str) -> str:
    return f"challenge:{tag}"


def user_key(user_id: str) -> str:
    return f"user:{user_id}"


def write_representation_store(directory, provenance: Mapping[str, Any],
                               challenges: Sequence[ChallengeRepresentation],
                               users: Sequence[UserRepresentation]) -> EmbeddingStore:
    store = EmbeddingStore.open_or_create(directory, provenance)
    if len(store) or store.provenance != dict(provenance):
        store.reset(provenance)
    for rep in challenges:
        store.append(challenge_key(rep.challenge_tag), rep.vector, meta={
            "kind": "challenge",
            "tag": rep.challenge_tag,
            "n_c": rep.n_c,
            "padding_count": rep.padding_count,
            "contributing_ids": list(rep.contributing_ids),
        })
    for rep in users:
        store.append(user_key(rep.user_id), rep.vector, meta={
            "kind": "user",
            "user_id": rep.user_id,
            "m_u": rep.m_u,
            "padding_count": rep.padding_count,
            "contributing_ids": list(rep.contributing_ids),
            "excluded_ids": sorted(rep.excluded_ids),
        })
    return store


def read_challenge_representation(store: EmbeddingStore, tag: str) -> ChallengeRepresentation:
    key = challenge_key(tag)
    meta = store.meta(key)
    return ChallengeRepresentation(
        challenge_tag=tag, vector=store.get(key),
        contributing_ids=tuple(meta["contributing_ids"]),
        n_c=int(meta["n_c"]), padding_count=int(meta["padding_count"]),
    )


def read_user_representation(store: EmbeddingStore, user_id: str) -> UserRepresentation:
    key = user_key(user_id)
    meta = store.meta(key)
    return UserRepresentation(
        user_id=user_id, vector=store.get(key),
        contributing_ids=tuple(meta["contributing_ids"]),
        m_u=int(meta["m_u"]), padding_count=int(meta["padding_count"]),
        excluded_ids=frozenset(meta["excluded_ids"]),
    )


def stored_tags(store: EmbeddingStore) -> list[str]:
    prefix = "challenge:"
    return sorted(k[len(prefix):] for k in store.ids() if k.startswith(prefix))


def stored_users(store: EmbeddingStore) -> list[str]:
    prefix = "user:"
    return sorted(k[len(prefix):] for k in store.ids() if k.startswith(prefix))
