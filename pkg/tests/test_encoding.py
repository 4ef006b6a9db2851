"""Tests for frame sampling, preprocessing, backends and embedding assembly."""

import numpy as np
import pytest
from PIL import Image

from deepchallenger.backends import (
    ToyCaptionBackend,
    ToyVisualBackend,
    build_caption_backend,
    build_visual_backend,
)
from deepchallenger.corpus import load_manifest
from deepchallenger.encoding import (
    CaptionEncoding,
    VisualEncoding,
    assemble_video_embedding,
    compute_sampling_indices,
    embedding_matrix,
    encode_caption,
    encode_corpus,
    encode_visual,
    load_frames,
    preprocess_frame,
    raw_dims,
)
from deepchallenger.errors import (
    ConfigError,
    ConsistencyError,
    DataError,
    EncodingError,
    IntegrityError,
    ProvenanceError,
)
from deepchallenger.store import EmbeddingStore
from helpers import three_video_records, write_corpus_dir


class TestSampling:
    def test_long_video_strides_evenly(self):
        assert compute_sampling_indices(100, 50) == tuple(range(0, 100, 2))

    def test_exact_length_is_identity(self):
        assert compute_sampling_indices(50, 50) == tuple(range(50))

    def test_short_video_pads_with_last_frame(self):
        assert compute_sampling_indices(3, 50) == (0, 1, 2) + (2,) * 47

    def test_single_frame(self):
        assert compute_sampling_indices(1, 4) == (0, 0, 0, 0)

    def test_invalid_counts(self):
        with pytest.raises(ConfigError):
            compute_sampling_indices(0, 50)
        with pytest.raises(ConfigError):
            compute_sampling_indices(10, 0)

    def test_indices_are_valid_and_ordered(self):
        for frame_count in (1, 2, 7, 49, 50, 51, 500):
            for fpv in (1, 3, 50):
                idx = compute_sampling_indices(frame_count, fpv)
                assert len(idx) == fpv
                assert all(0 <= i < frame_count for i in idx)
                assert list(idx) == sorted(idx)


class TestPreprocess:
    def _solid(self, path, value, size=8):
        arr = np.full((size, size, 3), value, dtype=np.uint8)
        Image.fromarray(arr).save(path)

    def test_scales_to_unit_range(self, tmp_path):
        path = tmp_path / "f.png"
        self._solid(path, 128)
        out = preprocess_frame(path, 8)
        assert out.shape == (8, 8, 3)
        assert out.dtype == np.float32
        assert np.allclose(out, 128 / 255.0)

    def test_resizes(self, tmp_path):
        path = tmp_path / "f.png"
        self._solid(path, 10, size=4)
        out = preprocess_frame(path, 16)
        assert out.shape == (16, 16, 3)

    def test_mean_std_normalization(self, tmp_path):
        path = tmp_path / "f.png"
        self._solid(path, 255)
        out = preprocess_frame(path, 8, mean=(0.5, 0.5, 0.5), std=(0.25, 0.25, 0.25))
        assert np.allclose(out, (1.0 - 0.5) / 0.25)

    def test_zero_std_rejected(self, tmp_path):
        path = tmp_path / "f.png"
        self._solid(path, 1)
        with pytest.raises(ConfigError):
            preprocess_frame(path, 8, std=(1.0, 0.0, 1.0))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="missing"):
            preprocess_frame(tmp_path / "nope.png", 8)

    def test_undecodable_file(self, tmp_path):
        path = tmp_path / "bad.png"
        path.write_bytes(b"this is not an image")
        with pytest.raises(DataError, match="decode"):
            preprocess_frame(path, 8)


class TestToyVisual:
    def test_shape_and_dtype(self):
        backend = ToyVisualBackend(d_f=6, seed=0)
        frames = np.random.default_rng(0).uniform(size=(4, 16, 16, 3))
        out = backend.encode_frames(frames)
        assert out.shape == (4, 6)
        assert out.dtype == np.float32

    def test_deterministic_across_instances(self):
        frames = np.random.default_rng(1).uniform(size=(2, 16, 16, 3))
        a = ToyVisualBackend(d_f=5, seed=3).encode_frames(frames)
        b = ToyVisualBackend(d_f=5, seed=3).encode_frames(frames)
        assert np.array_equal(a, b)

    def test_seed_changes_projection(self):
        frames = np.random.default_rng(1).uniform(size=(2, 16, 16, 3))
        a = ToyVisualBackend(d_f=5, seed=3).encode_frames(frames)
        b = ToyVisualBackend(d_f=5, seed=4).encode_frames(frames)
        assert not np.array_equal(a, b)

    def test_identical_frames_give_identical_rows(self):
        frame = np.random.default_rng(2).uniform(size=(16, 16, 3))
        frames = np.stack([frame, frame, frame])
        out = ToyVisualBackend(d_f=4, seed=0).encode_frames(frames)
        assert np.array_equal(out[0], out[1])
        assert np.array_equal(out[1], out[2])

    def test_linear_in_constant_brightness(self):
        backend = ToyVisualBackend(d_f=8, seed=1)
        one = backend.encode_frames(np.full((1, 24, 24, 3), 0.25))
        two = backend.encode_frames(np.full((1, 24, 24, 3), 0.5))
        assert np.allclose(two, 2.0 * one, atol=1e-6)

    def test_only_sampled_pixels_matter(self):
        backend = ToyVisualBackend(d_f=4, seed=0, pool=8)
        base = np.random.default_rng(3).uniform(size=(1, 32, 32, 3))
        off_grid = base.copy()
        off_grid[0, 1, 1, :] = 0.0  # rows sampled at multiples of 4
        on_grid = base.copy()
        on_grid[0, 0, 0, :] = 1.0 - on_grid[0, 0, 0, :]
        ref = backend.encode_frames(base)
        assert np.array_equal(backend.encode_frames(off_grid), ref)
        assert not np.array_equal(backend.encode_frames(on_grid), ref)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ConfigError):
            ToyVisualBackend().encode_frames(np.zeros((16, 16, 3)))

    def test_backend_id(self):
        assert ToyVisualBackend(d_f=16, seed=7).backend_id == "toy-visual-d16-s7"

    def test_invalid_construction(self):
        with pytest.raises(ConfigError):
            ToyVisualBackend(d_f=0)


class TestToyCaption:
    def test_empty_caption_is_zero(self):
        vec, count = ToyCaptionBackend(d_t=8, seed=0).encode("")
        assert count == 0
        assert np.array_equal(vec, np.zeros(8, dtype=np.float32))

    def test_order_insensitive(self):
        backend = ToyCaptionBackend(d_t=16, seed=5)
        a, _ = backend.encode("dance hello")
        b, _ = backend.encode("hello dance")
        assert np.array_equal(a, b)

    def test_repeated_token_equals_single(self):
        backend = ToyCaptionBackend(d_t=16, seed=5)
        single, n1 = backend.encode("vibes")
        double, n2 = backend.encode("vibes vibes")
        assert (n1, n2) == (1, 2)
        assert np.allclose(single, double, atol=1e-7)

    def test_mean_of_token_vectors(self):
        backend = ToyCaptionBackend(d_t=8, seed=1)
        a, _ = backend.encode("left")
        b, _ = backend.encode("right")
        both, count = backend.encode("left right")
        assert count == 2
        assert np.allclose(both, (a.astype(np.float64) + b) / 2.0, atol=1e-7)

    def test_truncation_keeps_tail_by_default(self):
        backend = ToyCaptionBackend(d_t=8, seed=2, max_tokens=2)
        full, count = backend.encode("one two three")
        tail, _ = backend.encode("two three")
        assert count == 2
        assert np.array_equal(full, tail)

    def test_truncation_head_mode(self):
        backend = ToyCaptionBackend(d_t=8, seed=2, max_tokens=2, keep="head")
        full, _ = backend.encode("one two three")
        head, _ = backend.encode("one two")
        assert np.array_equal(full, head)

    def test_deterministic_across_instances(self):
        a, _ = ToyCaptionBackend(d_t=8, seed=9).encode("#dance now")
        b, _ = ToyCaptionBackend(d_t=8, seed=9).encode("#dance now")
        assert np.array_equal(a, b)

    def test_seed_changes_vectors(self):
        a, _ = ToyCaptionBackend(d_t=8, seed=9).encode("#dance")
        b, _ = ToyCaptionBackend(d_t=8, seed=10).encode("#dance")
        assert not np.array_equal(a, b)

    def test_invalid_keep(self):
        with pytest.raises(ConfigError):
            ToyCaptionBackend(keep="middle")


class TestBuilders:
    def test_builds_toy_backends(self):
        visual = build_visual_backend({"id": "toy-visual", "d_f": 4, "seed": 2})
        caption = build_caption_backend({"id": "toy-caption", "d_t": 6})
        assert visual.d_f == 4
        assert caption.d_t == 6

    def test_unknown_ids(self):
        with pytest.raises(ConfigError, match="unknown visual"):
            build_visual_backend({"id": "mystery"})
        with pytest.raises(ConfigError, match="unknown caption"):
            build_caption_backend({"id": "mystery"})


class _BadShapeVisual(ToyVisualBackend):
    def encode_frames(self, frames):
        return np.zeros((1, self.d_f), dtype=np.float32)


class _NaNVisual(ToyVisualBackend):
    def encode_frames(self, frames):
        out = super().encode_frames(frames)
        out[1, 0] = np.nan
        return out


class _BadCaption(ToyCaptionBackend):
    def encode(self, caption):
        return np.zeros(self.d_t + 1, dtype=np.float32), 1


class TestAssembly:
    def _sequence(self, tmp_path, corpus=None):
        if corpus is None:
            manifest = write_corpus_dir(tmp_path, three_video_records())
            corpus = load_manifest(manifest)
        video = corpus.videos[0]
        return corpus, video, load_frames(corpus, video, 4, 16)

    def test_visual_vector_chains_frame_blocks(self, tmp_path):
        _, _, seq = self._sequence(tmp_path)
        backend = ToyVisualBackend(d_f=5, seed=0)
        enc = encode_visual(backend, seq)
        assert enc.vector.shape == (4 * 5,)
        rows = backend.encode_frames(seq.frames)
        for i in range(4):
            assert np.array_equal(enc.vector[i * 5:(i + 1) * 5], rows[i])

    def test_assembled_width_and_layout(self, tmp_path):
        _, video, seq = self._sequence(tmp_path)
        visual = encode_visual(ToyVisualBackend(d_f=5, seed=0), seq)
        caption = encode_caption(ToyCaptionBackend(d_t=7, seed=0), video)
        vec = assemble_video_embedding(visual, caption)
        assert vec.shape == (4 * 5 + 7,)
        assert vec.dtype == np.float32
        assert np.array_equal(vec[:20], visual.vector)
        assert np.array_equal(vec[20:], caption.vector)

    def test_mismatched_parts_rejected(self):
        visual = VisualEncoding("v1", np.zeros(4, dtype=np.float32), 2, 2)
        caption = CaptionEncoding("v2", np.zeros(3, dtype=np.float32), 3, 1)
        with pytest.raises(ConsistencyError):
            assemble_video_embedding(visual, caption)

    def test_backend_shape_violation(self, tmp_path):
        _, _, seq = self._sequence(tmp_path)
        with pytest.raises(EncodingError, match="shape"):
            encode_visual(_BadShapeVisual(d_f=5), seq)

    def test_non_finite_frame_embedding(self, tmp_path):
        _, _, seq = self._sequence(tmp_path)
        with pytest.raises(EncodingError, match="frame index 1"):
            encode_visual(_NaNVisual(d_f=5), seq)

    def test_caption_shape_violation(self, tmp_path):
        _, video, _ = self._sequence(tmp_path)
        with pytest.raises(EncodingError, match="shape"):
            encode_caption(_BadCaption(d_t=7), video)

    def test_load_frames_checks_count(self, tmp_path):
        manifest = write_corpus_dir(tmp_path, three_video_records())
        corpus = load_manifest(manifest)
        video = corpus.videos[0]
        extra = tmp_path / video.frame_source / "999999.png"
        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(extra)
        with pytest.raises(IntegrityError, match=video.video_id):
            load_frames(corpus, video, 4, 16)


class TestEncodeCorpus:
    F, DF, DT, SIZE = 4, 5, 7, 16

    def _encode(self, tmp_path, store_name="store", caption_seed=0):
        manifest = write_corpus_dir(tmp_path, three_video_records())
        corpus = load_manifest(manifest)
        report = encode_corpus(
            corpus, tmp_path / store_name,
            ToyVisualBackend(d_f=self.DF, seed=0),
            ToyCaptionBackend(d_t=self.DT, seed=caption_seed),
            frames_per_video=self.F, image_size=self.SIZE,
        )
        return corpus, report

    def test_full_pass(self, tmp_path):
        corpus, report = self._encode(tmp_path)
        assert (report.total, report.encoded, report.skipped) == (3, 3, 0)
        assert report.ok and not report.reset
        store = EmbeddingStore(tmp_path / "store")
        assert store.ids() == ["v1", "v2", "v3"]
        vec = store.get("v1")
        assert vec.shape == (self.F * self.DF + self.DT,)
        meta = store.meta("v1")
        assert meta["user_id"] == "u1"
        assert meta["challenge_tag"] == "dance"
        assert meta["position"] == corpus.position("v1")

    def test_rerun_skips_everything(self, tmp_path):
        self._encode(tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        corpus = load_manifest(manifest)
        report = encode_corpus(
            corpus, tmp_path / "store",
            ToyVisualBackend(d_f=self.DF, seed=0),
            ToyCaptionBackend(d_t=self.DT, seed=0),
            frames_per_video=self.F, image_size=self.SIZE,
        )
        assert (report.encoded, report.skipped, report.reset) == (0, 3, False)

    def test_changed_provenance_resets_store(self, tmp_path):
        self._encode(tmp_path)
        corpus = load_manifest(tmp_path / "manifest.jsonl")
        report = encode_corpus(
            corpus, tmp_path / "store",
            ToyVisualBackend(d_f=self.DF, seed=0),
            ToyCaptionBackend(d_t=self.DT, seed=99),
            frames_per_video=self.F, image_size=self.SIZE,
        )
        assert report.reset
        assert (report.encoded, report.skipped) == (3, 0)
        store = EmbeddingStore(tmp_path / "store")
        assert store.provenance["encoder_id"] == "toy-caption-d7-s99"

    def test_partial_failure_keeps_going(self, tmp_path):
        manifest = write_corpus_dir(tmp_path, three_video_records())
        corpus = load_manifest(manifest)
        for frame in (tmp_path / "frames" / "v2").iterdir():
            frame.write_bytes(b"garbage")
        report = encode_corpus(
            corpus, tmp_path / "store",
            ToyVisualBackend(d_f=self.DF, seed=0),
            ToyCaptionBackend(d_t=self.DT, seed=0),
            frames_per_video=self.F, image_size=self.SIZE,
        )
        assert not report.ok
        assert set(report.failed) == {"v2"}
        assert report.encoded == 2
        assert EmbeddingStore(tmp_path / "store").ids() == ["v1", "v3"]

    def test_byte_identical_reencodes(self, tmp_path):
        self._encode(tmp_path, store_name="one")
        self._encode(tmp_path, store_name="two")
        one = EmbeddingStore(tmp_path / "one")
        two = EmbeddingStore(tmp_path / "two")
        assert np.array_equal(one.matrix(one.ids()), two.matrix(two.ids()))

    def test_embedding_matrix_strips_caption_block(self, tmp_path):
        self._encode(tmp_path)
        store = EmbeddingStore(tmp_path / "store")
        full = embedding_matrix(store, ["v1", "v2"])
        visual_only = embedding_matrix(store, ["v1", "v2"], include_caption=False)
        assert full.shape == (2, self.F * self.DF + self.DT)
        assert visual_only.shape == (2, self.F * self.DF)
        assert np.array_equal(visual_only, full[:, : self.F * self.DF])
        assert raw_dims(store) == (self.F, self.DF, self.DT)

    def test_raw_dims_needs_provenance(self, tmp_path):
        store = EmbeddingStore.create(tmp_path / "plain", {"kind": "other"})
        with pytest.raises(ProvenanceError):
            raw_dims(store)
