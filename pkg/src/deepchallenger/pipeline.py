"""Staged pipeline over one run directory, with provenance chaining.

Every stage writes its artifacts under the run directory plus a metadata
file ``meta/<stage>.json`` recording the configuration hash and content
hashes of its inputs and outputs.  A stage refuses to run when an earlier
stage is missing, was built under a different configuration, or when the
artifacts it is about to consume no longer hash to what that stage
recorded.

The configuration hash covers the resolved run configuration and nothing
else; run directories and manifest locations stay out of it, so two runs
of the same configuration in different directories produce byte-identical
artifacts.

Run directory layout::

    corpus/                     manifest (+ frames and planted truth for synth)
    stores/raw-a, raw-b         raw video embeddings, one per visual backbone
    stores/learned-challenge    learned embeddings from the challenge proxy
    stores/learned-user         learned embeddings from the user proxy
    reprs/                      challenge and user representations + audit
    models/                     trained heads, training logs, holdout metrics
    eval/                       cross-validated metrics for both tables
    report/                     rendered text report + structured mirror
    meta/                       one provenance record per stage
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .backends import build_caption_backend, build_visual_backend
from .corpus import (
    Corpus,
    load_manifest,
    save_manifest,
    split_train_test,
    stratified_folds,
)
from .encoding import encode_corpus
from .errors import ConfigError, EncodingError, LeakageError, ProvenanceError
from .metrics import MetricsReport, cross_validate, evaluate_labels, render_report
from .nn import TrainConfig
from .participation import (
    BASELINE_KINDS,
    ParticipationPair,
    RepresentationSet,
    baseline_user_features,
    build_pairs,
    predict_pairs,
    stratified_pair_folds,
    train_baseline,
    train_participation,
)
from .proxy import evaluate_proxy, extract_learned_embeddings, train_proxy
from .representations import (
    audit_no_leakage,
    build_challenge_representation,
    build_user_representation,
    write_representation_store,
)
from .seeding import derive_seed
from .store import EmbeddingStore
from .synth import SyntheticConfig, generate_synthetic_corpus


# ---- configuration ---------------------------------------------------------


def _default_visual_a() -> dict[str, Any]:
    return {"id": "toy-visual", "d_f": 16, "seed": 101}


def _default_visual_b() -> dict[str, Any]:
    return {"id": "toy-visual", "d_f": 16, "seed": 102}


def _default_caption() -> dict[str, Any]:
    return {"id": "toy-caption", "d_t": 32, "seed": 201}


@dataclass(frozen=True)
class EncoderSettings:
    """Which backends encode the corpus; a and b must be distinct backbones."""

    visual_a: dict = field(default_factory=_default_visual_a)
    visual_b: dict = field(default_factory=_default_visual_b)
    caption: dict = field(default_factory=_default_caption)
    frames_per_video: int = 8
    image_size: int = 32


@dataclass(frozen=True)
class ProxySettings:
    hidden_dim: int = 64
    include_caption: bool = True
    # which raw store ("a" or "b") feeds the production head
    store: str = "a"
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass(frozen=True)
class RepresentationSettings:
    n_c: int = 16
    m_u: int = 8


@dataclass(frozen=True)
class ParticipationSettings:
    hidden_dim: int = 64
    train_fraction: float = 0.8
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass(frozen=True)
class BaselineSettings:
    hidden_dim: int = 64
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass(frozen=True)
class EvaluationSettings:
    folds: int = 3


def _settings_from(cls, obj: Mapping[str, Any], where: str):
    """Build a flat settings dataclass, rejecting unknown keys."""
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(obj).__name__}")
    data = dict(obj)
    names = {f.name for f in dataclasses.fields(cls)}
    if "train" in names and "train" in data:
        data["train"] = TrainConfig.from_dict(data["train"])
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s): {', '.join(unknown)}")
    return cls(**data)


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of a whole run.

    The default values are a small, CPU-friendly profile suited to the
    synthetic corpus; ``backend_profile('pretrained')`` switches the
    encoders to full pretrained backbones.
    """

    seed: int = 0
    synth: SyntheticConfig = field(default_factory=SyntheticConfig)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    proxy_challenge: ProxySettings = field(default_factory=ProxySettings)
    proxy_user: ProxySettings = field(default_factory=lambda: ProxySettings(store="b"))
    representations: RepresentationSettings = field(default_factory=RepresentationSettings)
    participation: ParticipationSettings = field(default_factory=ParticipationSettings)
    baselines: BaselineSettings = field(default_factory=BaselineSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    # train share of the per-task video split behind each production proxy
    video_split_fraction: float = 0.8

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(obj, Mapping):
            raise ConfigError("run config: expected a mapping at the top level")
        data = dict(obj)
        parsers: dict[str, Callable[[Any], Any]] = {
            "synth": lambda o: _settings_from(SyntheticConfig, o, "synth"),
            "encoder": lambda o: _settings_from(EncoderSettings, o, "encoder"),
            "proxy_challenge": lambda o: _settings_from(ProxySettings, o, "proxy_challenge"),
            "proxy_user": lambda o: _settings_from(ProxySettings, o, "proxy_user"),
            "representations": lambda o: _settings_from(
                RepresentationSettings, o, "representations"),
            "participation": lambda o: _settings_from(
                ParticipationSettings, o, "participation"),
            "baselines": lambda o: _settings_from(BaselineSettings, o, "baselines"),
            "evaluation": lambda o: _settings_from(EvaluationSettings, o, "evaluation"),
        }
        kwargs: dict[str, Any] = {}
        for key in list(data):
            if key in parsers:
                kwargs[key] = parsers[key](data.pop(key))
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"run config: unknown key(s): {', '.join(unknown)}")
        kwargs.update(data)
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        def settings_dict(s) -> dict[str, Any]:
            out = {}
            for f in dataclasses.fields(s):
                value = getattr(s, f.name)
                out[f.name] = value.to_dict() if isinstance(value, TrainConfig) else value
            return out

        return {
            "seed": self.seed,
            "synth": dataclasses.asdict(self.synth),
            "encoder": dataclasses.asdict(self.encoder),
            "proxy_challenge": settings_dict(self.proxy_challenge),
            "proxy_user": settings_dict(self.proxy_user),
            "representations": dataclasses.asdict(self.representations),
            "participation": settings_dict(self.participation),
            "baselines": settings_dict(self.baselines),
            "evaluation": dataclasses.asdict(self.evaluation),
            "video_split_fraction": self.video_split_fraction,
        }

    def validate(self) -> None:
        self.synth.validate()
        for name, settings in (("proxy_challenge", self.proxy_challenge),
                               ("proxy_user", self.proxy_user)):
            if settings.store not in ("a", "b"):
                raise ConfigError(f"{name}.store must be 'a' or 'b', got {settings.store!r}")
            if settings.hidden_dim < 1:
                raise ConfigError(f"{name}.hidden_dim must be >= 1")
            settings.train.validate()
        if self.encoder.visual_a == self.encoder.visual_b:
            raise ConfigError(
                "encoder.visual_a and encoder.visual_b are identical; the"
                " comparison tables need two distinct visual backbones"
            )
        if self.encoder.frames_per_video < 1:
            raise ConfigError("encoder.frames_per_video must be >= 1")
        if self.encoder.image_size < 1:
            raise ConfigError("encoder.image_size must be >= 1")
        if self.representations.n_c < 1 or self.representations.m_u < 1:
            raise ConfigError("representations.n_c and .m_u must be >= 1")
        if not 0.0 < self.participation.train_fraction < 1.0:
            raise ConfigError("participation.train_fraction must be in (0, 1)")
        if not 0.0 < self.video_split_fraction < 1.0:
            raise ConfigError("video_split_fraction must be in (0, 1)")
        if self.evaluation.folds < 2:
            raise ConfigError("evaluation.folds must be >= 2")
        self.participation.train.validate()
        self.baselines.train.validate()


def backend_profile(config: RunConfig, profile: str) -> RunConfig:
    """Swap the encoder block for a named profile; training knobs stay put."""
    if profile == "toy":
        encoder = EncoderSettings()
    elif profile == "pretrained":
        encoder = EncoderSettings(
            visual_a={"id": "vgg16"},
            visual_b={"id": "resnet50"},
            caption={"id": "bert"},
            frames_per_video=50,
            image_size=224,
        )
    else:
        raise ConfigError(f"unknown backend profile {profile!r} (toy, pretrained)")
    return dataclasses.replace(config, encoder=encoder)


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    return RunConfig.from_dict(obj)


def config_hash(config: RunConfig) -> str:
    payload = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


# ---- content hashing and stage metadata ------------------------------------


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return "sha256:" + h.hexdigest()


def tree_sha256(directory: Path) -> str:
    """Hash of a directory's file names and contents, order-independent."""
    directory = Path(directory)
    h = hashlib.sha256()
    for p in sorted(directory.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(directory).as_posix().encode("utf-8"))
            h.update(b"\0")
            h.update(p.read_bytes())
    return "sha256:" + h.hexdigest()


def hash_path(path: Path) -> str:
    path = Path(path)
    if not path.exists():
        raise ProvenanceError(f"expected artifact is missing: {path}")
    return tree_sha256(path) if path.is_dir() else file_sha256(path)


def _meta_path(out_dir: Path, stage: str) -> Path:
    return Path(out_dir) / "meta" / f"{stage}.json"


def write_stage_meta(out_dir: Path, stage: str, config: RunConfig,
                     inputs: Mapping[str, str], outputs: Mapping[str, str],
                     extra: Mapping[str, Any] | None = None) -> dict[str, Any]:
    meta = {
        "stage": stage,
        "config_hash": config_hash(config),
        "inputs": dict(sorted(inputs.items())),
        "outputs": dict(sorted(outputs.items())),
        "extra": dict(extra or {}),
    }
    path = _meta_path(out_dir, stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return meta


def require_stage(out_dir: Path, stage: str, config: RunConfig,
                  needed_for: str) -> dict[str, Any]:
    """Load a prior stage's metadata and verify configuration and artifacts."""
    path = _meta_path(out_dir, stage)
    if not path.exists():
        raise ProvenanceError(
            f"{needed_for} needs the {stage} stage;"
            f" run `deepchallenger {stage}` first"
        )
    meta = json.loads(path.read_text(encoding="utf-8"))
    if meta.get("config_hash") != config_hash(config):
        raise ProvenanceError(
            f"{stage} artifacts were built under a different configuration;"
            f" rerun `deepchallenger {stage}`"
        )
    for name, recorded in meta.get("outputs", {}).items():
        actual = hash_path(Path(out_dir) / name)
        if actual != recorded:
            raise ProvenanceError(
                f"artifact {name} changed since {stage} ran;"
                f" rerun `deepchallenger {stage}`"
            )
    return meta


def require_corpus(out_dir: Path, config: RunConfig, needed_for: str) -> dict[str, Any]:
    present = [s for s in ("synth", "ingest") if _meta_path(out_dir, s).exists()]
    if not present:
        raise ProvenanceError(
            f"{needed_for} needs a corpus;"
            " run `deepchallenger synth` or `deepchallenger ingest` first"
        )
    if len(present) == 2:
        raise ProvenanceError(
            "both synth and ingest metadata are present, the corpus origin"
            " is ambiguous; delete one of meta/synth.json, meta/ingest.json"
        )
    return require_stage(out_dir, present[0], config, needed_for)


def _load_corpus(out_dir: Path) -> Corpus:
    manifest = Path(out_dir) / "corpus" / "manifest.jsonl"
    if not manifest.exists():
        raise ProvenanceError(
            "no corpus manifest in the run directory;"
            " run `deepchallenger synth` or `deepchallenger ingest` first"
        )
    return load_manifest(manifest)


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, rows: Sequence[Mapping[str, Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(row, sort_keys=True) for row in rows]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---- corpus stages ----------------------------------------------------------


def stage_synth(out_dir: str | Path, config: RunConfig) -> dict[str, Any]:
    """Generate the synthetic corpus under <out_dir>/corpus."""
    out_dir = Path(out_dir)
    corpus_dir = out_dir / "corpus"
    effective_seed = derive_seed(config.seed, "synth", config.synth.seed)
    synth_config = dataclasses.replace(config.synth, seed=effective_seed)
    shutil.rmtree(corpus_dir / "frames", ignore_errors=True)
    corpus = generate_synthetic_corpus(synth_config, corpus_dir)
    _meta_path(out_dir, "ingest").unlink(missing_ok=True)
    outputs = {
        "corpus/manifest.jsonl": file_sha256(corpus_dir / "manifest.jsonl"),
        "corpus/planted.json": file_sha256(corpus_dir / "planted.json"),
    }
    extra = {
        "videos": len(corpus),
        "tagged": len(corpus.tagged_videos()),
        "users": len(corpus.users),
        "challenges": len(corpus.challenge_labels),
        "effective_seed": effective_seed,
    }
    write_stage_meta(out_dir, "synth", config, {}, outputs, extra)
    return extra


def stage_ingest(out_dir: str | Path, config: RunConfig,
                 manifest: str | Path) -> dict[str, Any]:
    """Validate an external manifest and normalize it into the run directory.

    Frame paths are resolved against the source manifest's directory and
    written out absolute, so later stages only ever read from the run
    directory's own manifest.
    """
    out_dir = Path(out_dir)
    source = Path(manifest)
    corpus = load_manifest(source)
    resolved = [
        dataclasses.replace(v, frame_source=str((source.parent / v.frame_source).resolve()))
        for v in corpus.videos
    ]
    corpus_dir = out_dir / "corpus"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    normalized = Corpus(resolved, root=corpus_dir)
    save_manifest(normalized, corpus_dir / "manifest.jsonl")
    (corpus_dir / "planted.json").unlink(missing_ok=True)
    _meta_path(out_dir, "synth").unlink(missing_ok=True)
    inputs = {"source-manifest": file_sha256(source)}
    outputs = {"corpus/manifest.jsonl": file_sha256(corpus_dir / "manifest.jsonl")}
    extra = {
        "videos": len(normalized),
        "tagged": len(normalized.tagged_videos()),
        "users": len(normalized.users),
        "challenges": len(normalized.challenge_labels),
        "source": source.name,
    }
    write_stage_meta(out_dir, "ingest", config, inputs, outputs, extra)
    return extra


# ---- encode ------------------------------------------------------------------


def _raw_store_dir(out_dir: Path, letter: str) -> Path:
    return Path(out_dir) / "stores" / f"raw-{letter}"


def stage_encode(out_dir: str | Path, config: RunConfig) -> dict[str, Any]:
    """Encode the corpus into two raw stores, one per visual backbone."""
    out_dir = Path(out_dir)
    corpus_meta = require_corpus(out_dir, config, "encode")
    corpus = _load_corpus(out_dir)
    caption_backend = build_caption_backend(config.encoder.caption)
    reports = {}
    for letter, backend_config in (("a", config.encoder.visual_a),
                                   ("b", config.encoder.visual_b)):
        visual_backend = build_visual_backend(backend_config)
        reports[letter] = encode_corpus(
            corpus, _raw_store_dir(out_dir, letter), visual_backend, caption_backend,
            config.encoder.frames_per_video, config.encoder.image_size,
        )
    failures = {f"raw-{letter}:{vid}": msg
                for letter, report in sorted(reports.items())
                for vid, msg in sorted(report.failed.items())}
    if failures:
        shown = list(failures.items())[:5]
        detail = "; ".join(f"{k}: {v}" for k, v in shown)
        raise EncodingError(
            f"{len(failures)} video(s) failed to encode ({detail}"
            + ("; ..." if len(failures) > 5 else "") + ")"
        )
    inputs = {"corpus/manifest.jsonl": corpus_meta["outputs"]["corpus/manifest.jsonl"]}
    outputs = {f"stores/raw-{letter}": tree_sha256(_raw_store_dir(out_dir, letter))
               for letter in ("a", "b")}
    extra = {
        f"raw-{letter}": {
            "total": r.total, "encoded": r.encoded,
            "skipped": r.skipped, "reset": r.reset,
        }
        for letter, r in sorted(reports.items())
    }
    write_stage_meta(out_dir, "encode", config, inputs, outputs, extra)
    return extra


# ---- proxies -----------------------------------------------------------------


def _task_labels(corpus: Corpus, task: str) -> dict[str, str]:
    """video_id -> class label for one proxy task.

    The challenge proxy classifies challenge-tagged videos by tag; the
    user proxy classifies profile (untagged) videos by author, keeping
    its classes predictable from content.
    """
    if task == "challenge":
        return {v.video_id: v.challenge_tag for v in corpus.tagged_videos()}
    return {v.video_id: v.user_id for v in corpus.untagged_videos()}


def _proxy_settings(config: RunConfig, task: str) -> ProxySettings:
    return config.proxy_challenge if task == "challenge" else config.proxy_user


def stage_train_proxy(out_dir: str | Path, config: RunConfig) -> dict[str, Any]:
    """Train both proxy heads and materialize the learned embedding stores."""
    out_dir = Path(out_dir)
    encode_meta = require_stage(out_dir, "encode", config, "train-proxy")
    corpus = _load_corpus(out_dir)
    raw_stores = {letter: EmbeddingStore.open(_raw_store_dir(out_dir, letter))
                  for letter in ("a", "b")}

    extra: dict[str, Any] = {}
    outputs: dict[str, str] = {}
    heads = {}
    for task in ("challenge", "user"):
        settings = _proxy_settings(config, task)
        store = raw_stores[settings.store]
        labels = _task_labels(corpus, task)
        train_ids, test_ids = split_train_test(
            sorted(labels), config.video_split_fraction,
            derive_seed(config.seed, "split", task),
        )
        train_config = dataclasses.replace(
            settings.train, seed=derive_seed(config.seed, "train", task))
        head, log = train_proxy(
            store, {vid: labels[vid] for vid in train_ids}, train_config,
            hidden_dim=settings.hidden_dim,
            include_caption=settings.include_caption, task=task,
        )
        report = evaluate_proxy(head, store, labels, test_ids)
        model_dir = out_dir / "models" / f"proxy-{task}"
        head.save(model_dir)
        log.save_jsonl(model_dir / "train_log.jsonl")
        _write_json(model_dir / "metrics.json", report.to_dict())
        heads[task] = (head, store)
        outputs[f"models/proxy-{task}"] = tree_sha256(model_dir)
        extra[task] = {
            "classes": len(head.classes),
            "train_videos": len(train_ids),
            "test_videos": len(test_ids),
            "store": settings.store,
            "holdout_macro_f1": report.macro_f1,
            "best_epoch": log.best_epoch,
        }

    tagged_ids = sorted(v.video_id for v in corpus.tagged_videos())
    all_ids = sorted(v.video_id for v in corpus.videos)
    for task, ids in (("challenge", tagged_ids), ("user", all_ids)):
        head, store = heads[task]
        learned_dir = out_dir / "stores" / f"learned-{task}"
        provenance = {
            "kind": "learned",
            "task": task,
            "head_version": head.head_version(),
            "source": tree_sha256(store.directory),
            "hidden_dim": head.hidden_dim,
            "include_caption": head.include_caption,
        }
        learned = EmbeddingStore.open_or_create(learned_dir, provenance)
        learned.reset(provenance)
        for emb in extract_learned_embeddings(head, store, ids):
            meta = store.meta(emb.video_id)
            learned.append(emb.video_id, emb.vector, meta={
                "user_id": meta["user_id"],
                "challenge_tag": meta["challenge_tag"],
                "position": meta["position"],
            })
        outputs[f"stores/learned-{task}"] = tree_sha256(learned_dir)
        extra[task]["learned_videos"] = len(ids)

    inputs = dict(encode_meta["outputs"])
    write_stage_meta(out_dir, "train-proxy", config, inputs, outputs, extra)
    return extra


# ---- representations ----------------------------------------------------------


def stage_build_reprs(out_dir: str | Path, config: RunConfig) -> dict[str, Any]:
    """Build fixed-arity challenge and user representations, audited."""
    out_dir = Path(out_dir)
    proxy_meta = require_stage(out_dir, "train-proxy", config, "build-reprs")
    corpus = _load_corpus(out_dir)
    learned_challenge = EmbeddingStore.open(out_dir / "stores" / "learned-challenge")
    learned_user = EmbeddingStore.open(out_dir / "stores" / "learned-user")

    reprs_seed = derive_seed(config.seed, "reprs")
    n_c, m_u = config.representations.n_c, config.representations.m_u
    challenges = [
        build_challenge_representation(tag, learned_challenge, n_c, reprs_seed)
        for tag in corpus.challenge_labels
    ]
    exclusion = {v.video_id for v in corpus.tagged_videos()}
    users = [
        build_user_representation(uid, learned_user, m_u, exclusion)
        for uid in corpus.users
    ]
    audit = audit_no_leakage(users, challenges)
    if not audit.ok:
        first = audit.violations[0]
        raise LeakageError(
            f"{len(audit.violations)} user/challenge pair(s) share contributing"
            f" videos (first: user {first[0]} and challenge {first[1]} share"
            f" {', '.join(first[2])}); refusing to materialize representations"
        )
    provenance = {
        "kind": "representations",
        "n_c": n_c,
        "m_u": m_u,
        "seed": reprs_seed,
        "challenge_head": learned_challenge.provenance["head_version"],
        "user_head": learned_user.provenance["head_version"],
    }
    reprs_dir = out_dir / "reprs"
    write_representation_store(reprs_dir, provenance, challenges, users)
    _write_json(reprs_dir / "audit.json", audit.to_dict())

    inputs = {name: proxy_meta["outputs"][name]
              for name in ("stores/learned-challenge", "stores/learned-user")}
    outputs = {"reprs": tree_sha256(reprs_dir)}
    extra = {
        "challenges": len(challenges),
        "users": len(users),
        "challenge_padding": sum(c.padding_count for c in challenges),
        "user_padding": sum(u.padding_count for u in users),
        "excluded_videos": len(exclusion),
        "audit_ok": audit.ok,
    }
    write_stage_meta(out_dir, "build-reprs", config, inputs, outputs, extra)
    return extra


# ---- participation -------------------------------------------------------------


def _split_pairs(pairs: Sequence[ParticipationPair], fraction: float,
                 seed: int) -> tuple[list[ParticipationPair], list[ParticipationPair]]:
    """Label-stratified train/test split over pair keys."""
    by_key = {p.key: p for p in pairs}
    train_keys: list = []
    test_keys: list = []
    for label in (0, 1):
        keys = [p.key for p in pairs if p.label == label]
        if not keys:
            continue
        part = split_train_test(keys, fraction, derive_seed(seed, "label", label))
        train_keys.extend(part[0])
        test_keys.extend(part[1])
    if not test_keys:
        raise ConfigError(
            "participation.train_fraction leaves no held-out pairs; lower it"
        )
    return ([by_key[k] for k in sorted(train_keys)],
            [by_key[k] for k in sorted(test_keys)])


def _baseline_variant(kind: str) -> tuple[str, bool]:
    """(raw store letter, include_caption) encoded in a baseline kind."""
    if kind not in BASELINE_KINDS:
        raise ConfigError(f"unknown baseline kind {kind!r} (choose from {BASELINE_KINDS})")
    return kind[-1], kind.startswith("visual+text")


def stage_train_participation(out_dir: str | Path, config: RunConfig,
                              baselines: Sequence[str] = BASELINE_KINDS) -> dict[str, Any]:
    """Train the participation head (and baselines) on a pair-level split."""
    out_dir = Path(out_dir)
    reprs_meta = require_stage(out_dir, "build-reprs", config, "train-participation")
    corpus = _load_corpus(out_dir)
    reprs = RepresentationSet.from_store(EmbeddingStore.open(out_dir / "reprs"))
    pairs = build_pairs(corpus, corpus.challenge_labels)
    train_pairs, test_pairs = _split_pairs(
        pairs, config.participation.train_fraction,
        derive_seed(config.seed, "split", "pairs"),
    )

    train_config = dataclasses.replace(
        config.participation.train,
        seed=derive_seed(config.seed, "train", "participation"),
    )
    model, log = train_participation(
        train_pairs, reprs, train_config, hidden_dim=config.participation.hidden_dim)
    model_dir = out_dir / "models" / "participation"
    model.save(model_dir)
    log.save_jsonl(model_dir / "train_log.jsonl")
    rows = predict_pairs(model, test_pairs, reprs)
    _write_jsonl(model_dir / "predictions.jsonl", rows)
    report = evaluate_labels([r["true_label"] for r in rows],
                             [r["label"] for r in rows], classes=(0, 1))
    _write_json(model_dir / "metrics.json", report.to_dict())

    outputs = {"models/participation": tree_sha256(model_dir)}
    extra: dict[str, Any] = {
        "train_pairs": len(train_pairs),
        "test_pairs": len(test_pairs),
        "positives": sum(p.label for p in pairs),
        "holdout_macro_f1": report.macro_f1,
        "baselines": sorted(baselines),
    }

    if baselines:
        exclusion = {v.video_id for v in corpus.tagged_videos()}
        m_u = config.representations.m_u
        for kind in baselines:
            letter, include_caption = _baseline_variant(kind)
            store = EmbeddingStore.open(_raw_store_dir(out_dir, letter))
            features = baseline_user_features(
                store, corpus.users, m_u, exclusion, include_caption)
            baseline_config = dataclasses.replace(
                config.baselines.train,
                seed=derive_seed(config.seed, "train", "baseline", kind),
            )
            baseline, baseline_log = train_baseline(
                train_pairs, features, corpus.challenge_labels, baseline_config,
                hidden_dim=config.baselines.hidden_dim, kind=kind,
            )
            baseline_dir = out_dir / "models" / f"baseline-{kind}"
            baseline.save(baseline_dir)
            baseline_log.save_jsonl(baseline_dir / "train_log.jsonl")
            baseline_rows = []
            for pair in sorted(test_pairs, key=lambda p: p.key):
                proba, label = baseline.predict_pair(
                    features[pair.user_id], pair.challenge_tag)
                baseline_rows.append({
                    "user_id": pair.user_id, "challenge_tag": pair.challenge_tag,
                    "probability": proba, "label": label,
                    "true_label": pair.label, "fold": None,
                })
            _write_jsonl(baseline_dir / "predictions.jsonl", baseline_rows)
            baseline_report = evaluate_labels(
                [r["true_label"] for r in baseline_rows],
                [r["label"] for r in baseline_rows], classes=(0, 1))
            _write_json(baseline_dir / "metrics.json", baseline_report.to_dict())
            outputs[f"models/baseline-{kind}"] = tree_sha256(baseline_dir)
            extra[f"baseline_{kind}_macro_f1"] = baseline_report.macro_f1

    inputs = dict(reprs_meta["outputs"])
    write_stage_meta(out_dir, "train-participation", config, inputs, outputs, extra)
    return extra


# ---- evaluation -----------------------------------------------------------------


def _variant_label(store: EmbeddingStore, include_caption: bool) -> str:
    provenance = store.provenance
    if include_caption:
        return f"{provenance['backbone_id']} + {provenance['encoder_id']}"
    return str(provenance["backbone_id"])


def _proxy_fold_runner(config: RunConfig, task: str, store: EmbeddingStore,
                       include_caption: bool, labels: Mapping[str, str],
                       variant: str) -> Callable[[list, list], MetricsReport]:
    settings = _proxy_settings(config, task)
    counter = itertools.count()

    def runner(train_items: list, test_items: list) -> MetricsReport:
        fold = next(counter)
        fold_config = dataclasses.replace(
            settings.train,
            seed=derive_seed(config.seed, "eval", "proxy", task, variant, fold),
        )
        head, _ = train_proxy(
            store, {vid: labels[vid] for vid in train_items}, fold_config,
            hidden_dim=settings.hidden_dim, include_caption=include_caption,
            task=task,
        )
        return evaluate_proxy(head, store, labels, test_items)

    return runner


def _participation_fold_runner(config: RunConfig, reprs: RepresentationSet,
                               by_key: Mapping[tuple, ParticipationPair]
                               ) -> Callable[[list, list], MetricsReport]:
    counter = itertools.count()

    def runner(train_items: list, test_items: list) -> MetricsReport:
        fold = next(counter)
        fold_config = dataclasses.replace(
            config.participation.train,
            seed=derive_seed(config.seed, "eval", "participation", fold),
        )
        model, _ = train_participation(
            [by_key[k] for k in train_items], reprs, fold_config,
            hidden_dim=config.participation.hidden_dim)
        rows = predict_pairs(model, [by_key[k] for k in test_items], reprs)
        return evaluate_labels([r["true_label"] for r in rows],
                               [r["label"] for r in rows], classes=(0, 1))

    return runner


def _baseline_fold_runner(config: RunConfig, kind: str,
                          features: Mapping[str, Any], classes: Sequence[str],
                          by_key: Mapping[tuple, ParticipationPair]
                          ) -> Callable[[list, list], MetricsReport]:
    counter = itertools.count()

    def runner(train_items: list, test_items: list) -> MetricsReport:
        fold = next(counter)
        fold_config = dataclasses.replace(
            config.baselines.train,
            seed=derive_seed(config.seed, "eval", "baseline", kind, fold),
        )
        model, _ = train_baseline(
            [by_key[k] for k in train_items], features, classes, fold_config,
            hidden_dim=config.baselines.hidden_dim, kind=kind,
        )
        true, predicted = [], []
        for key in sorted(test_items):
            pair = by_key[key]
            _, label = model.predict_pair(features[pair.user_id], pair.challenge_tag)
            true.append(pair.label)
            predicted.append(label)
        return evaluate_labels(true, predicted, classes=(0, 1))

    return runner


def stage_evaluate(out_dir: str | Path, config: RunConfig,
                   baselines: Sequence[str] = BASELINE_KINDS) -> dict[str, Any]:
    """Cross-validate both proxy tasks and the participation comparison."""
    out_dir = Path(out_dir)
    require_stage(out_dir, "train-participation", config, "evaluate")
    corpus = _load_corpus(out_dir)
    raw_stores = {letter: EmbeddingStore.open(_raw_store_dir(out_dir, letter))
                  for letter in ("a", "b")}
    folds = config.evaluation.folds

    proxy_rows = []
    for task in ("challenge", "user"):
        labels = _task_labels(corpus, task)
        plan = stratified_folds(labels, folds,
                                derive_seed(config.seed, "eval", "proxy", task))
        for letter in ("a", "b"):
            for include_caption in (False, True):
                store = raw_stores[letter]
                variant = _variant_label(store, include_caption)
                runner = _proxy_fold_runner(
                    config, task, store, include_caption, labels, variant)
                aggregate = cross_validate(runner, plan)
                proxy_rows.append({
                    "task": task,
                    "model": variant,
                    "report": aggregate.to_dict(),
                })

    pairs = build_pairs(corpus, corpus.challenge_labels)
    by_key = {p.key: p for p in pairs}
    plan = stratified_pair_folds(pairs, folds, derive_seed(config.seed, "eval", "pairs"))
    reprs = RepresentationSet.from_store(EmbeddingStore.open(out_dir / "reprs"))
    participation_rows = [{
        "model": "deepChallenger",
        "report": cross_validate(
            _participation_fold_runner(config, reprs, by_key), plan).to_dict(),
    }]
    exclusion = {v.video_id for v in corpus.tagged_videos()}
    for kind in baselines:
        letter, include_caption = _baseline_variant(kind)
        store = raw_stores[letter]
        features = baseline_user_features(
            store, corpus.users, config.representations.m_u, exclusion, include_caption)
        runner = _baseline_fold_runner(
            config, kind, features, corpus.challenge_labels, by_key)
        participation_rows.append({
            "model": _variant_label(store, include_caption),
            "report": cross_validate(runner, plan).to_dict(),
        })

    eval_dir = out_dir / "eval"
    _write_json(eval_dir / "proxy_metrics.json", {"folds": folds, "rows": proxy_rows})
    _write_json(eval_dir / "participation_metrics.json",
                {"folds": folds, "rows": participation_rows})

    inputs = {
        "stores/raw-a": tree_sha256(_raw_store_dir(out_dir, "a")),
        "stores/raw-b": tree_sha256(_raw_store_dir(out_dir, "b")),
        "reprs": tree_sha256(out_dir / "reprs"),
    }
    outputs = {
        "eval/proxy_metrics.json": file_sha256(eval_dir / "proxy_metrics.json"),
        "eval/participation_metrics.json": file_sha256(
            eval_dir / "participation_metrics.json"),
    }
    extra = {
        "folds": folds,
        "baselines": sorted(baselines),
        "proxy_variants": sorted({row["model"] for row in proxy_rows}),
    }
    write_stage_meta(out_dir, "evaluate", config, inputs, outputs, extra)
    return extra


# ---- report ---------------------------------------------------------------------


_TASK_SECTIONS = {"challenge": "video -> challenge", "user": "video -> user"}


def stage_report(out_dir: str | Path, config: RunConfig) -> dict[str, Any]:
    """Render the evaluation into a text report plus a structured mirror."""
    out_dir = Path(out_dir)
    expected = config_hash(config)
    meta_dir = out_dir / "meta"
    if meta_dir.is_dir():
        for meta_file in sorted(meta_dir.glob("*.json")):
            recorded = json.loads(meta_file.read_text(encoding="utf-8"))
            if recorded.get("config_hash") != expected:
                raise ProvenanceError(
                    f"mixed provenance: stage {recorded.get('stage', meta_file.stem)}"
                    " was built under a different configuration; rerun it"
                )
    eval_meta = require_stage(out_dir, "evaluate", config, "report")

    eval_dir = out_dir / "eval"
    proxy_payload = json.loads(
        (eval_dir / "proxy_metrics.json").read_text(encoding="utf-8"))
    participation_payload = json.loads(
        (eval_dir / "participation_metrics.json").read_text(encoding="utf-8"))
    folds = proxy_payload["folds"]

    proxy_entries = [
        (_TASK_SECTIONS[row["task"]], row["model"], MetricsReport.from_dict(row["report"]))
        for row in proxy_payload["rows"]
    ]
    participation_entries = [
        (row["model"], MetricsReport.from_dict(row["report"]))
        for row in participation_payload["rows"]
    ]

    lines = [
        "deepChallenger evaluation",
        "",
        f"Proxy tasks ({folds}-fold cross-validation)",
        "",
        render_report(proxy_entries, layout="proxy_table").rstrip("\n"),
        "",
        f"Participation ({folds}-fold cross-validation)",
        "",
        render_report(participation_entries, layout="participation_table").rstrip("\n"),
        "",
    ]
    report_dir = out_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "report.txt").write_text("\n".join(lines), encoding="utf-8")
    _write_json(report_dir / "report.json", {
        "config_hash": expected,
        "folds": folds,
        "proxy": proxy_payload["rows"],
        "participation": participation_payload["rows"],
    })

    inputs = dict(eval_meta["outputs"])
    outputs = {
        "report/report.txt": file_sha256(report_dir / "report.txt"),
        "report/report.json": file_sha256(report_dir / "report.json"),
    }
    extra = {"folds": folds, "rows": len(participation_entries)}
    write_stage_meta(out_dir, "report", config, inputs, outputs, extra)
    return extra
