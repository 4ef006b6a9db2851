"""Raw video embeddings: frame sampling, preprocessing, assembly.

A raw video embedding is the concatenation of a visual part and a caption
part.  The visual part chains the backbone embeddings of ``frames_per_video``
sampled frames in temporal order, so frame position is preserved by block
position; the caption part is a single caption-encoder vector.  Both parts
land in one store vector per video, and the visual prefix can be sliced
back out by width (``frames_per_video * d_f``) for caption-free variants.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from PIL import Image

from .backends import CaptionBackend, VisualBackend
from .corpus import Corpus, VideoRecord, frame_files
from .errors import (
    ConfigError,
    ConsistencyError,
    DataError,
    EncodingError,
    IntegrityError,
    ProvenanceError,
)
from .store import EmbeddingStore

DEFAULT_FRAMES_PER_VIDEO = 50
DEFAULT_IMAGE_SIZE = 224


def compute_sampling_indices(frame_count: int, frames_per_video: int) -> tuple[int, ...]:
    """Pick frames_per_video frame indices, evenly spread, in order.

    Short videos keep every frame and repeat the last index to pad, so the
    result always has exactly frames_per_video entries.
    """
    if frame_count < 1:
        raise ConfigError(f"frame_count must be >= 1, got {frame_count}")
    if frames_per_video < 1:
        raise ConfigError(f"frames_per_video must be >= 1, got {frames_per_video}")
    if frame_count >= frames_per_video:
        return tuple((i * frame_count) // frames_per_video for i in range(frames_per_video))
    return tuple(range(frame_count)) + (frame_count - 1,) * (frames_per_video - frame_count)


def preprocess_frame(path: Path, image_size: int,
                     mean: Sequence[float] = (0.0, 0.0, 0.0),
                     std: Sequence[float] = (1.0, 1.0, 1.0)) -> np.ndarray:
    """Decode one frame image to a normalized (image_size, image_size, 3) array.

    RGB conversion, bilinear resize, scale to [0, 1], then per-channel
    (value - mean) / std.
    """
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            im = im.resize((image_size, image_size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except FileNotFoundError as e:
        raise DataError(f"frame file missing: {path}") from e
    except (OSError, ValueError) as e:
        raise DataError(f"cannot decode frame {path}: {e}") from e
    mean_arr = np.asarray(mean, dtype=np.float64)
    std_arr = np.asarray(std, dtype=np.float64)
    if np.any(std_arr == 0):
        raise ConfigError("std must be nonzero in every channel")
    return ((arr - mean_arr) / std_arr).astype(np.float32)


@dataclasses.dataclass(frozen=True)
class FrameSequence:
    """Sampled, preprocessed frames of one video, in temporal order."""

    video_id: str
    indices: tuple[int, ...]
    frames: np.ndarray  # (frames_per_video, image_size, image_size, 3)


def load_frames(corpus: Corpus, video: VideoRecord, frames_per_video: int,
                image_size: int,
                mean: Sequence[float] = (0.0, 0.0, 0.0),
                std: Sequence[float] = (1.0, 1.0, 1.0)) -> FrameSequence:
    directory = corpus.frame_dir(video)
    files = frame_files(directory)
    if len(files) != video.frame_count:
        raise IntegrityError(
            f"video {video.video_id}: manifest says {video.frame_count} frames,"
            f" directory {directory} has {len(files)}"
        )
    indices = compute_sampling_indices(video.frame_count, frames_per_video)
    frames = np.stack([
        preprocess_frame(files[i], image_size, mean, std) for i in indices
    ])
    return FrameSequence(video_id=video.video_id, indices=indices, frames=frames)


@dataclasses.dataclass(frozen=True)
class VisualEncoding:
    video_id: str
    vector: np.ndarray  # (frames_per_video * d_f,)
    frames_per_video: int
    d_f: int


@dataclasses.dataclass(frozen=True)
class CaptionEncoding:
    video_id: str
    vector: np.ndarray  # (d_t,)
    d_t: int
    token_count: int


def encode_visual(backend: VisualBackend, seq: FrameSequence) -> VisualEncoding:
    """Encode each sampled frame and chain the results in frame order."""
    emb = np.asarray(backend.encode_frames(seq.frames))
    expected = (len(seq.indices), backend.d_f)
    if emb.shape != expected:
        raise EncodingError(
            f"video {seq.video_id}: backend {backend.backend_id} returned"
            f" shape {emb.shape}, expected {expected}"
        )
    bad = np.flatnonzero(~np.isfinite(emb).all(axis=1))
    if bad.size:
        raise EncodingError(
            f"video {seq.video_id}: non-finite embedding at frame index {int(bad[0])}"
        )
    return VisualEncoding(video_id=seq.video_id, vector=emb.reshape(-1).astype(np.float32),
                          frames_per_video=len(seq.indices), d_f=backend.d_f)


def encode_caption(backend: CaptionBackend, video: VideoRecord) -> CaptionEncoding:
    vector, token_count = backend.encode(video.caption)
    vector = np.asarray(vector, dtype=np.float32)
    if vector.shape != (backend.d_t,):
        raise EncodingError(
            f"video {video.video_id}: caption backend {backend.backend_id}"
            f" returned shape {vector.shape}, expected ({backend.d_t},)"
        )
    if not np.all(np.isfinite(vector)):
        raise EncodingError(f"video {video.video_id}: non-finite caption embedding")
    return CaptionEncoding(video_id=video.video_id, vector=vector,
                           d_t=backend.d_t, token_count=token_count)


def assemble_video_embedding(visual: VisualEncoding,
                             caption: CaptionEncoding) -> np.ndarray:
    """Concatenate the visual chain and the caption vector for one video."""
    if visual.video_id != caption.video_id:
        raise ConsistencyError(
            f"visual part is for {visual.video_id!r}, caption part for"
            f" {caption.video_id!r}"
        )
    return np.concatenate([visual.vector, caption.vector]).astype(np.float32)


def store_provenance(visual_backend: VisualBackend, caption_backend: CaptionBackend,
                     frames_per_video: int, image_size: int) -> dict[str, Any]:
    return {
        "kind": "raw-video",
        "backbone_id": visual_backend.backend_id,
        "encoder_id": caption_backend.backend_id,
        "frames_per_video": frames_per_video,
        "image_size": image_size,
        "d_f": visual_backend.d_f,
        "d_t": caption_backend.d_t,
    }


@dataclasses.dataclass
class EncodeReport:
    """Outcome of one encode pass over a corpus."""

    store_dir: str
    total: int
    encoded: int
    skipped: int
    reset: bool
    failed: dict[str, str]

    @property
    def ok(self) -> bool:
        return not self.failed

    def to_dict(self) -> dict[str, Any]:
        return {
            "store_dir": self.store_dir,
            "total": self.total,
            "encoded": self.encoded,
            "skipped": self.skipped,
            "reset": self.reset,
            "failed": dict(sorted(self.failed.items())),
        }


def encode_corpus(corpus: Corpus, store_dir: Path,
                  visual_backend: VisualBackend, caption_backend: CaptionBackend,
                  frames_per_video: int = DEFAULT_FRAMES_PER_VIDEO,
                  image_size: int = DEFAULT_IMAGE_SIZE) -> EncodeReport:
    """Encode every corpus video into an embedding store at store_dir.

    Re-running against an existing store with the same provenance skips
    videos already present.  A store built under different provenance is
    reset and re-encoded from scratch; mixing vectors from two encoder
    setups in one store is never allowed.

    Per-video decode or encode failures do not abort the pass; they are
    collected in the report and the remaining videos still get encoded.
    """
    provenance = store_provenance(visual_backend, caption_backend,
                                  frames_per_video, image_size)
    store_dir = Path(store_dir)
    reset = False
    if (store_dir / "index.json").exists():
        store = EmbeddingStore(store_dir)
        if store.provenance != provenance:
            store.reset(provenance)
            reset = True
    else:
        store = EmbeddingStore.create(store_dir, provenance)

    encoded = 0
    skipped = 0
    failed: dict[str, str] = {}
    for video in corpus.videos:
        if video.video_id in store:
            skipped += 1
            continue
        try:
            seq = load_frames(corpus, video, frames_per_video, image_size,
                              visual_backend.mean, visual_backend.std)
            visual = encode_visual(visual_backend, seq)
            caption = encode_caption(caption_backend, video)
            vector = assemble_video_embedding(visual, caption)
        except (DataError, IntegrityError, EncodingError) as e:
            failed[video.video_id] = str(e)
            continue
        store.append(video.video_id, vector, meta={
            "user_id": video.user_id,
            "challenge_tag": video.challenge_tag,
            "position": corpus.position(video.video_id),
        })
        encoded += 1
    return EncodeReport(store_dir=str(store_dir), total=len(corpus.videos),
                        encoded=encoded, skipped=skipped, reset=reset, failed=failed)


def raw_dims(store: EmbeddingStore) -> tuple[int, int, int]:
    """(frames_per_video, d_f, d_t) recorded in a raw store's provenance."""
    prov = store.provenance
    try:
        return int(prov["frames_per_video"]), int(prov["d_f"]), int(prov["d_t"])
    except KeyError as e:
        raise ProvenanceError(
            f"store {store.directory} lacks raw-video provenance key {e}"
        ) from e


def embedding_matrix(store: EmbeddingStore, ids: Sequence[str],
                     include_caption: bool = True) -> np.ndarray:
    """Stack raw vectors for ids; optionally drop the caption dimensions."""
    matrix = store.matrix(ids)
    if include_caption:
        return matrix
    frames_per_video, d_f, d_t = raw_dims(store)
    width = frames_per_video * d_f
    if matrix.shape[1] != width + d_t:
        raise ConsistencyError(
            f"store {store.directory}: vectors are {matrix.shape[1]}-dim, but"
            f" provenance implies {width + d_t}"
        )
    return matrix[:, :width]
