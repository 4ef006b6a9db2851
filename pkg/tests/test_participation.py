"""Tests for participation pairs, the binary head, and user-only baselines."""

import numpy as np
import pytest

from deepchallenger.corpus import load_manifest
from deepchallenger.errors import (
    ConfigError,
    InputError,
    LeakageError,
    UnknownIdError,
)
from deepchallenger.nn import TrainConfig
from deepchallenger.participation import (
    BASELINE_KINDS,
    BaselineModel,
    ParticipationModel,
    ParticipationPair,
    RepresentationSet,
    baseline_user_features,
    build_pairs,
    predict,
    predict_pairs,
    stratified_pair_folds,
    train_baseline,
    train_participation,
)
from deepchallenger.representations import (
    ChallengeRepresentation,
    UserRepresentation,
    build_challenge_representation,
    build_user_representation,
)
from deepchallenger.store import EmbeddingStore
from helpers import manifest_obj, write_corpus_dir

TRAIN = TrainConfig(max_epochs=60, patience=15, seed=0)


def toy_reprs(signal=1.0, users=6, tags=("ch0", "ch1", "ch2"), dim=4, seed=0):
    """Separable representations: user i participates in challenge i mod C.

    Challenge vectors are one-hot-ish blocks; a participating user's vector
    points at its challenge's block, scaled by signal.
    """
    rng = np.random.default_rng(seed)
    challenges = {}
    for j, tag in enumerate(tags):
        vec = np.zeros(dim, dtype=np.float32)
        vec[j % dim] = 1.0
        challenges[tag] = ChallengeRepresentation(
            challenge_tag=tag, vector=vec, contributing_ids=(f"c{j}",),
            n_c=1, padding_count=0,
        )
    user_reprs = {}
    pairs = []
    for i in range(users):
        uid = f"u{i:02d}"
        target = i % len(tags)
        vec = signal * challenges[tags[target]].vector
        vec = (vec + 0.05 * rng.normal(size=dim)).astype(np.float32)
        user_reprs[uid] = UserRepresentation(
            user_id=uid, vector=vec, contributing_ids=(f"p{i}",),
            m_u=1, padding_count=0, excluded_ids=frozenset(),
        )
        for j, tag in enumerate(tags):
            pairs.append(ParticipationPair(uid, tag, int(j == target)))
    return RepresentationSet(challenges=challenges, users=user_reprs), pairs


class TestPairs:
    def test_cross_product_with_evidence_labels(self, tmp_path):
        records = [
            manifest_obj("v1", "u1", challenge_tag="dance"),
            manifest_obj("v2", "u1"),
            manifest_obj("v3", "u2", challenge_tag="song"),
            manifest_obj("v4", "u3"),
        ]
        corpus = load_manifest(write_corpus_dir(tmp_path, records))
        pairs = build_pairs(corpus, ["dance", "song"])
        assert len(pairs) == 3 * 2
        labels = {p.key: p.label for p in pairs}
        assert labels[("u1", "dance")] == 1
        assert labels[("u1", "song")] == 0
        assert labels[("u2", "song")] == 1
        assert labels[("u3", "dance")] == 0

    def test_unknown_challenge_rejected(self, tmp_path):
        records = [manifest_obj("v1", "u1", challenge_tag="dance")]
        corpus = load_manifest(write_corpus_dir(tmp_path, records))
        with pytest.raises(InputError, match="karaoke"):
            build_pairs(corpus, ["dance", "karaoke"])


class TestFolds:
    def _pairs(self, n_pos, n_neg):
        pairs = [ParticipationPair(f"u{i}", "pos", 1) for i in range(n_pos)]
        pairs += [ParticipationPair(f"u{i}", "neg", 0) for i in range(n_neg)]
        return pairs

    def test_partition_and_balance(self):
        pairs = self._pairs(9, 18)
        plan = stratified_pair_folds(pairs, 3, seed=0)
        assert plan.sizes() == [9, 9, 9]
        seen = set()
        for fold in range(3):
            items = plan.fold_items(fold)
            seen.update(items)
            positives = sum(1 for key in items if key[1] == "pos")
            assert positives == 3
        assert seen == {p.key for p in pairs}

    def test_uneven_sizes_differ_by_at_most_one(self):
        plan = stratified_pair_folds(self._pairs(4, 6), 3, seed=1)
        sizes = sorted(plan.sizes())
        assert sum(sizes) == 10
        assert sizes[-1] - sizes[0] <= 1

    def test_seed_changes_assignment_not_structure(self):
        pairs = self._pairs(6, 12)
        a = stratified_pair_folds(pairs, 3, seed=0)
        b = stratified_pair_folds(pairs, 3, seed=7)
        assert a.sizes() == b.sizes()
        assert a.assignments != b.assignments

    def test_validation(self):
        pairs = self._pairs(3, 3)
        with pytest.raises(ConfigError, match="k must be"):
            stratified_pair_folds(pairs, 1, seed=0)
        with pytest.raises(ConfigError, match="folds from"):
            stratified_pair_folds(pairs[:2], 3, seed=0)
        with pytest.raises(InputError, match="duplicate"):
            stratified_pair_folds(pairs + [pairs[0]], 2, seed=0)
        with pytest.raises(InputError, match="labels"):
            stratified_pair_folds([ParticipationPair("u", "c", 2)] + pairs, 2, seed=0)


class TestParticipationHead:
    def test_learns_planted_pairs(self):
        reprs, pairs = toy_reprs(users=12)
        config = TrainConfig(max_epochs=200, patience=50, learning_rate=0.01, seed=0)
        model, log = train_participation(pairs, reprs, config, hidden_dim=16)
        correct = 0
        for pair in pairs:
            _, label = predict(model, pair.user_id, pair.challenge_tag, reprs)
            correct += int(label == pair.label)
        assert correct / len(pairs) == 1.0
        assert log.stopped_epoch >= log.best_epoch

    def test_loss_decreases_on_learnable_pairs(self):
        reprs, pairs = toy_reprs(users=12)
        _, log = train_participation(pairs, reprs, TRAIN, hidden_dim=16)
        losses = [e["train_loss"] for e in log.entries]
        assert losses[-1] < losses[0]

    def test_pair_vector_layout(self):
        reprs, _ = toy_reprs()
        vec = reprs.pair_vector("u00", "ch1")
        np.testing.assert_array_equal(vec[:4], reprs.challenges["ch1"].vector)
        np.testing.assert_array_equal(vec[4:], reprs.users["u00"].vector)

    def test_unknown_pair_members(self):
        reprs, _ = toy_reprs()
        with pytest.raises(UnknownIdError, match="ch9"):
            reprs.pair_vector("u00", "ch9")
        with pytest.raises(UnknownIdError, match="u99"):
            reprs.pair_vector("u99", "ch0")

    def test_refuses_leaky_representations(self):
        reprs, pairs = toy_reprs()
        users = dict(reprs.users)
        leaky = users["u00"]
        users["u00"] = UserRepresentation(
            user_id="u00", vector=leaky.vector, contributing_ids=("c0",),
            m_u=1, padding_count=0, excluded_ids=frozenset(),
        )
        bad = RepresentationSet(challenges=reprs.challenges, users=users)
        with pytest.raises(LeakageError, match="u00"):
            train_participation(pairs, bad, TRAIN, hidden_dim=8)

    def test_empty_pairs(self):
        reprs, _ = toy_reprs()
        with pytest.raises(ConfigError, match="no pairs"):
            train_participation([], reprs, TRAIN)

    def test_probability_tie_resolves_positive(self):
        reprs, pairs = toy_reprs(users=3)
        model, _ = train_participation(pairs, reprs,
                                       TrainConfig(max_epochs=1, seed=0), hidden_dim=4)
        # Zero-initialized output layer stays near 0.5 after one epoch only
        # if training barely moves; force the exact tie through the head API.
        proba, label = predict(model, pairs[0].user_id, pairs[0].challenge_tag, reprs)
        if proba == 0.5:
            assert label == 1
        else:
            assert label == int(proba >= 0.5)

    def test_training_deterministic(self):
        reprs, pairs = toy_reprs(users=9)
        m1, log1 = train_participation(pairs, reprs, TRAIN, hidden_dim=8)
        m2, log2 = train_participation(pairs, reprs, TRAIN, hidden_dim=8)
        assert m1.head_version() == m2.head_version()
        assert log1.to_dict() == log2.to_dict()

    def test_predict_pairs_rows(self):
        reprs, pairs = toy_reprs(users=3)
        model, _ = train_participation(pairs, reprs, TRAIN, hidden_dim=8)
        rows = predict_pairs(model, pairs, reprs)
        assert [r["user_id"] for r in rows] == sorted(r["user_id"] for r in rows)
        for row in rows:
            assert set(row) == {"user_id", "challenge_tag", "probability",
                                "label", "true_label", "fold"}
            assert 0.0 <= row["probability"] <= 1.0

    def test_save_load_round_trip(self, tmp_path):
        reprs, pairs = toy_reprs(users=6)
        model, _ = train_participation(pairs, reprs, TRAIN, hidden_dim=8)
        model.save(tmp_path / "part")
        loaded = ParticipationModel.load(tmp_path / "part")
        assert loaded.head_version() == model.head_version()
        assert (loaded.challenge_dim, loaded.user_dim) == (4, 4)
        for pair in pairs[:4]:
            a = predict(model, pair.user_id, pair.challenge_tag, reprs)
            b = predict(loaded, pair.user_id, pair.challenge_tag, reprs)
            assert a == b

    def test_dimension_mismatch_guard(self):
        reprs, pairs = toy_reprs(dim=4)
        model, _ = train_participation(pairs, reprs, TRAIN, hidden_dim=8)
        wide, _ = toy_reprs(dim=6)
        with pytest.raises(ConfigError, match="model expects"):
            predict(model, "u00", "ch0", wide)


class TestBaselines:
    def _features(self, pairs, dim=6, informative=True, seed=0):
        rng = np.random.default_rng(seed)
        tags = sorted({p.challenge_tag for p in pairs})
        features = {}
        for uid in sorted({p.user_id for p in pairs}):
            target = [p.challenge_tag for p in pairs
                      if p.user_id == uid and p.label == 1]
            vec = rng.normal(size=dim) * 0.05
            if informative and target:
                vec[tags.index(target[0]) % dim] += 2.0
            features[uid] = vec.astype(np.float32)
        return features

    def test_learns_informative_features(self):
        _, pairs = toy_reprs(users=12)
        features = self._features(pairs)
        model, _ = train_baseline(pairs, features, ("ch0", "ch1", "ch2"),
                                  TRAIN, hidden_dim=16, kind="visual-a")
        correct = sum(
            int(model.predict_pair(features[p.user_id], p.challenge_tag)[1] == p.label)
            for p in pairs
        )
        assert correct / len(pairs) == 1.0

    def test_kinds_catalog(self):
        assert BASELINE_KINDS == ("visual-a", "visual+text-a", "visual-b", "visual+text-b")

    def test_classes_sorted_and_slot_lookup(self):
        _, pairs = toy_reprs(users=6, tags=("zeta", "alpha", "mid"))
        features = self._features(pairs)
        model, _ = train_baseline(pairs, features, ("zeta", "alpha", "mid"),
                                  TrainConfig(max_epochs=2, seed=0), hidden_dim=4)
        assert model.classes == ("alpha", "mid", "zeta")
        with pytest.raises(UnknownIdError, match="omega"):
            model.predict_pair(features["u00"], "omega")

    def test_missing_user_features(self):
        _, pairs = toy_reprs(users=4)
        features = self._features(pairs)
        del features["u00"]
        with pytest.raises(UnknownIdError, match="u00"):
            train_baseline(pairs, features, ("ch0", "ch1", "ch2"), TRAIN)

    def test_pair_tag_outside_classes(self):
        _, pairs = toy_reprs(users=4)
        features = self._features(pairs)
        with pytest.raises(InputError, match="ch2"):
            train_baseline(pairs, features, ("ch0", "ch1"), TRAIN)

    def test_save_load_round_trip(self, tmp_path):
        _, pairs = toy_reprs(users=6)
        features = self._features(pairs)
        model, _ = train_baseline(pairs, features, ("ch0", "ch1", "ch2"),
                                  TRAIN, hidden_dim=8, kind="visual+text-b")
        model.save(tmp_path / "base")
        loaded = BaselineModel.load(tmp_path / "base")
        assert loaded.kind == "visual+text-b"
        assert loaded.classes == model.classes
        for pair in pairs[:3]:
            assert (loaded.predict_pair(features[pair.user_id], pair.challenge_tag)
                    == model.predict_pair(features[pair.user_id], pair.challenge_tag))


class TestBaselineFeatures:
    def _raw_store(self, tmp_path):
        store = EmbeddingStore.create(tmp_path / "raw", {
            "kind": "raw-video", "frames_per_video": 2, "d_f": 3, "d_t": 2,
        })
        rows = [
            ("p1", "u1", None, 0, 1.0),
            ("p2", "u1", None, 1, 2.0),
            ("c1", "u1", "dance", 2, 9.0),
            ("q1", "u2", None, 0, 5.0),
        ]
        for vid, uid, tag, pos, val in rows:
            store.append(vid, np.full(8, val, dtype=np.float32), meta={
                "user_id": uid, "challenge_tag": tag, "position": pos,
            })
        return store

    def test_features_follow_selection_rule(self, tmp_path):
        store = self._raw_store(tmp_path)
        features = baseline_user_features(store, ["u1", "u2"], m_u=2,
                                          exclusion=["c1"])
        assert features["u1"].shape == (2 * 8,)
        # newest non-excluded first: p2 then p1
        assert np.array_equal(features["u1"][:8], store.get("p2"))
        assert np.array_equal(features["u1"][8:], store.get("p1"))
        # u2 has one video; the second block is the mean pad (same vector)
        assert np.array_equal(features["u2"][:8], store.get("q1"))
        assert np.array_equal(features["u2"][8:], store.get("q1"))

    def test_caption_block_can_be_dropped(self, tmp_path):
        store = self._raw_store(tmp_path)
        features = baseline_user_features(store, ["u1"], m_u=2, exclusion=["c1"],
                                          include_caption=False)
        assert features["u1"].shape == (2 * 6,)
