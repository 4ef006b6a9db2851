"""On-disk embedding store: JSON index plus flat binary vector file.

Byte layout
-----------
A store is a directory holding exactly two files:

``vectors.f32``
    The concatenation of all stored vectors as raw little-endian IEEE-754
    32-bit floats (dtype ``<f4``), with no framing, padding or alignment.
    A vector of dimension ``d`` occupies ``4 * d`` bytes starting at the
    byte offset recorded in the index.

``index.json``
    UTF-8 JSON with sorted keys::

        {
          "format_version": 1,
          "dtype": "<f4",
          "provenance": {...},            # store-wide provenance, free-form
          "entries": {
            "<id>": {"offset": <bytes>, "dim": <floats>, "meta": {...}},
            ...
          }
        }

Appends write vector bytes first, then atomically replace the index
(write-to-temp + rename), so a reader never sees an index entry whose data
is not fully on disk.  Discipline is one writer, many readers.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

from .errors import StoreError, UnknownIdError

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


class EmbeddingStore:
    """Append-only store of named float32 vectors with per-entry metadata."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._index_path = self.directory / "index.json"
        self._data_path = self.directory / "vectors.f32"
        self._entries: dict[str, dict[str, Any]] = {}
        self._provenance: dict[str, Any] = {}
        if self._index_path.exists():
            self._load_index()
        else:
            raise StoreError(f"no store at {self.directory} (missing index.json)")

    # -- construction ------------------------------------------------------

    @classmethod
    def create(cls, directory: str | Path, provenance: Mapping[str, Any] | None = None,
               overwrite: bool = False) -> "EmbeddingStore":
        directory = Path(directory)
        index_path = directory / "index.json"
        if index_path.exists() and not overwrite:
            raise StoreError(f"store already exists at {directory}")
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "vectors.f32").write_bytes(b"")
        store = object.__new__(cls)
        store.directory = directory
        store._index_path = index_path
        store._data_path = directory / "vectors.f32"
        store._entries = {}
        store._provenance = dict(provenance or {})
        store._write_index()
        return store

    @classmethod
    def open(cls, directory: str | Path) -> "EmbeddingStore":
        return cls(directory)

    @classmethod
    def open_or_create(cls, directory: str | Path,
                       provenance: Mapping[str, Any] | None = None) -> "EmbeddingStore":
        directory = Path(directory)
        if (directory / "index.json").exists():
            return cls(directory)
        return cls.create(directory, provenance)

    def _load_index(self) -> None:
        try:
            obj = json.loads(self._index_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise StoreError(f"unreadable index at {self._index_path}: {e}") from e
        if obj.get("format_version") != FORMAT_VERSION:
            raise StoreError(f"unsupported store format_version {obj.get('format_version')!r}")
        if obj.get("dtype") != _DTYPE.str:
            raise StoreError(f"unsupported store dtype {obj.get('dtype')!r}")
        self._provenance = obj.get("provenance", {})
        self._entries = obj.get("entries", {})
        size = self._data_path.stat().st_size if self._data_path.exists() else 0
        for vid, ent in self._entries.items():
            if ent["offset"] + 4 * ent["dim"] > size:
                raise StoreError(f"entry {vid} points past the end of vectors.f32")

    def _write_index(self) -> None:
        obj = {
            "format_version": FORMAT_VERSION,
            "dtype": _DTYPE.str,
            "provenance": self._provenance,
            "entries": self._entries,
        }
        tmp = self._index_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(obj, sort_keys=True, ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, self._index_path)

    # -- accessors ---------------------------------------------------------

    @property
    def provenance(self) -> dict[str, Any]:
        return dict(self._provenance)

    def ids(self) -> list[str]:
        return sorted(self._entries)

    def __contains__(self, vid: str) -> bool:
        return vid in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def dim(self, vid: str) -> int:
        return int(self._require(vid)["dim"])

    def meta(self, vid: str) -> dict[str, Any]:
        return dict(self._require(vid).get("meta", {}))

    def _require(self, vid: str) -> dict[str, Any]:
        try:
            return self._entries[vid]
        except KeyError:
            raise UnknownIdError(f"id {vid!r} not in store {self.directory}") from None

    def get(self, vid: str) -> np.ndarray:
        ent = self._require(vid)
        with open(self._data_path, "rb") as fh:
            fh.seek(ent["offset"])
            raw = fh.read(4 * ent["dim"])
        if len(raw) != 4 * ent["dim"]:
            raise StoreError(f"truncated read for {vid!r}")
        return np.frombuffer(raw, dtype=_DTYPE).copy()

    def matrix(self, ids: Sequence[str]) -> np.ndarray:
        """Stack the given ids into an (N, d) float32 matrix."""
        if not ids:
            raise StoreError("matrix() needs at least one id")
        vecs = [self.get(v) for v in ids]
        dims = {v.shape[0] for v in vecs}
        if len(dims) != 1:
            raise StoreError(f"inconsistent dimensions {sorted(dims)} in matrix()")
        return np.stack(vecs)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for vid in self.ids():
            yield vid, self.get(vid)

    # -- mutation ----------------------------------------------------------

    def append(self, vid: str, vector: np.ndarray | Sequence[float],
               meta: Mapping[str, Any] | None = None) -> None:
        if vid in self._entries:
            raise StoreError(f"id {vid!r} already stored")
        arr = np.ascontiguousarray(np.asarray(vector, dtype=_DTYPE).reshape(-1))
        if arr.size == 0:
            raise StoreError("refusing to store an empty vector")
        offset = self._data_path.stat().st_size
        with open(self._data_path, "ab") as fh:
            fh.write(arr.tobytes())
        self._entries[vid] = {"offset": offset, "dim": int(arr.size)}
        if meta:
            self._entries[vid]["meta"] = dict(meta)
        self._write_index()

    def reset(self, provenance: Mapping[str, Any] | None = None) -> None:
        """Drop all entries and start over with new provenance."""
        self._entries = {}
        self._provenance = dict(provenance or {})
        self._data_path.write_bytes(b"")
        self._write_index()
