"""Small builders shared by the test modules."""

import json
from pathlib import Path

import numpy as np
from PIL import Image


def write_frame_dir(directory: Path, count: int, size: int = 8, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    for t in range(count):
        arr = rng.integers(0, 256, size=(size, size), dtype=np.uint8)
        Image.fromarray(arr).save(directory / f"{t:06d}.png")


def manifest_obj(video_id, user_id, caption="hello", challenge_tag=None,
                 frame_count=3, frame_source=None, **extras):
    obj = {
        "schema_version": 1,
        "video_id": video_id,
        "user_id": user_id,
        "caption": caption,
        "frame_source": frame_source if frame_source is not None else f"frames/{video_id}",
        "frame_count": frame_count,
    }
    if challenge_tag is not None:
        obj["challenge_tag"] = challenge_tag
    obj.update(extras)
    return obj


def write_corpus_dir(root: Path, records, frame_size: int = 8) -> Path:
    """Write a manifest plus matching frame directories; returns manifest path.

    records: iterable of dicts as produced by manifest_obj.
    """
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, obj in enumerate(records):
        lines.append(json.dumps(obj))
        write_frame_dir(root / obj["frame_source"], obj["frame_count"],
                        size=frame_size, seed=i)
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def three_video_records():
    return [
        manifest_obj("v1", "u1", caption="hello world", challenge_tag="dance",
                     frame_count=3),
        manifest_obj("v2", "u1", caption="just vibes", frame_count=4),
        manifest_obj("v3", "u2", caption="#dance time", challenge_tag="dance",
                     frame_count=2),
    ]
