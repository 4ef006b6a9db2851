"""Pluggable visual and caption encoder backends.

A visual backend turns one preprocessed frame into a ``d_f``-vector, a
caption backend turns caption text into a ``d_t``-vector.  Which network
plays which role is configuration, not code: the challenge pipeline
defaults to the VGG16-class backbone and the user pipeline to the
ResNet-50-class one, and either is selectable for either.

Two deterministic toy backends ship in-tree so the whole pipeline runs,
and is testable, without downloading any pretrained model:

* ``toy-visual`` — nearest-index downsample of the grayscale frame to a
  small grid, then a fixed seeded random projection to ``d_f``.
* ``toy-caption`` — whitespace tokens hashed (sha256, seeded) to fixed
  pseudorandom vectors, averaged; order-insensitive by construction, and
  the empty caption encodes the zero vector.

The pretrained adapters (``vgg16``/``resnet50`` via torchvision, ``bert``
via transformers) import their frameworks lazily and raise
``BackendUnavailableError`` with a clear message when the framework or the
weights cannot be loaded.  Pretrained encoders are frozen feature
extractors; nothing here fine-tunes them.
"""

from __future__ import annotations

import hashlib
from typing import Any, Mapping

import numpy as np

from .errors import BackendUnavailableError, ConfigError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class VisualBackend:
    """Frame encoder capability: declares d_f, determinism and an id."""

    backend_id: str
    d_f: int
    deterministic: bool
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def encode_frames(self, frames: np.ndarray) -> np.ndarray:
        """(F, H, W, 3) normalized frames -> (F, d_f) float32."""
        raise NotImplementedError


class CaptionBackend:
    """Caption encoder capability: declares d_t, determinism and an id."""

    backend_id: str
    d_t: int
    deterministic: bool

    def encode(self, caption: str) -> tuple[np.ndarray, int]:
        """Caption text -> ((d_t,) float32 vector, token count)."""
        raise NotImplementedError


class ToyVisualBackend(VisualBackend):
    """Seeded random projection of a downsampled grayscale frame."""

    def __init__(self, d_f: int = 16, seed: int = 0, pool: int = 8):
        if d_f < 1 or pool < 1:
            raise ConfigError("toy-visual: d_f and pool must be >= 1")
        self.d_f = d_f
        self.pool = pool
        self.seed = seed
        self.deterministic = True
        self.mean = (0.0, 0.0, 0.0)
        self.std = (1.0, 1.0, 1.0)
        self.backend_id = f"toy-visual-d{d_f}-s{seed}"
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((pool * pool, d_f)) / np.sqrt(pool * pool)

    def encode_frames(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ConfigError(f"toy-visual expects (F, H, W, 3), got {frames.shape}")
        gray = frames.mean(axis=-1)
        h, w = gray.shape[1], gray.shape[2]
        ri = (np.arange(self.pool) * h) // self.pool
        ci = (np.arange(self.pool) * w) // self.pool
        small = gray[:, ri][:, :, ci].reshape(gray.shape[0], -1)
        return (small @ self._projection).astype(np.float32)


class ToyCaptionBackend(CaptionBackend):
    """Order-insensitive mean of seeded token-hash vectors."""

    def __init__(self, d_t: int = 32, seed: int = 0, max_tokens: int = 32,
                 keep: str = "tail"):
        if d_t < 1 or max_tokens < 1:
            raise ConfigError("toy-caption: d_t and max_tokens must be >= 1")
        if keep not in ("head", "tail"):
            raise ConfigError(f"toy-caption: keep must be 'head' or 'tail', got {keep!r}")
        self.d_t = d_t
        self.seed = seed
        self.max_tokens = max_tokens
        # Which end survives truncation.  Informative hashtags tend to sit at
        # the end of short-video captions, hence the tail default.
        self.keep = keep
        self.deterministic = True
        self.backend_id = f"toy-caption-d{d_t}-s{seed}"

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.standard_normal(self.d_t) / np.sqrt(self.d_t)

    def encode(self, caption: str) -> tuple[np.ndarray, int]:
        tokens = caption.split()
        if len(tokens) > self.max_tokens:
            tokens = tokens[-self.max_tokens:] if self.keep == "tail" else tokens[: self.max_tokens]
        if not tokens:
            return np.zeros(self.d_t, dtype=np.float32), 0
        vecs = np.stack([self._token_vector(t) for t in tokens])
        return vecs.mean(axis=0).astype(np.float32), len(tokens)


class TorchVisualBackend(VisualBackend):
    """torchvision backbone truncated at its penultimate feature layer.

    d_f is whatever that layer emits; it is probed at construction time and
    recorded in the backend id, never hard-coded.
    """

    def __init__(self, arch: str, pretrained: bool = True, device: str = "cpu"):
        if arch not in ("vgg16", "resnet50"):
            raise ConfigError(f"unknown torchvision arch {arch!r}")
        try:
            import torch
            from torchvision import models
        except ImportError as e:
            raise BackendUnavailableError(
                f"backend {arch!r} needs torch and torchvision; install the"
                " 'pretrained' extra"
            ) from e
        self._torch = torch
        try:
            if arch == "vgg16":
                weights = models.VGG16_Weights.IMAGENET1K_V1 if pretrained else None
                net = models.vgg16(weights=weights)
                net.classifier = net.classifier[:-1]
            else:
                weights = models.ResNet50_Weights.IMAGENET1K_V1 if pretrained else None
                net = models.resnet50(weights=weights)
                net.fc = torch.nn.Identity()
        except Exception as e:
            raise BackendUnavailableError(
                f"could not load {arch} weights (offline?): {e}"
            ) from e
        net.eval()
        self._net = net.to(device)
        self._device = device
        self.deterministic = True
        self.mean = IMAGENET_MEAN
        self.std = IMAGENET_STD
        with torch.no_grad():
            probe = torch.zeros(1, 3, 224, 224, device=device)
            self.d_f = int(self._net(probe).shape[-1])
        self.backend_id = f"{arch}-d{self.d_f}" + ("" if pretrained else "-untrained")

    def encode_frames(self, frames: np.ndarray) -> np.ndarray:
        torch = self._torch
        x = torch.from_numpy(np.ascontiguousarray(frames.transpose(0, 3, 1, 2))).float()
        with torch.no_grad():
            out = self._net(x.to(self._device))
        return out.cpu().numpy().astype(np.float32)


class BertCaptionBackend(CaptionBackend):
    """Pretrained BERT classifier-token sequence embedding (d_t = 768)."""

    def __init__(self, model_name: str = "bert-base-uncased", max_tokens: int = 512,
                 keep: str = "tail", device: str = "cpu"):
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoTokenizer
        except ImportError as e:
            raise BackendUnavailableError(
                "backend 'bert' needs torch and transformers; install the"
                " 'pretrained' extra"
            ) from e
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_name)
            self._model = AutoModel.from_pretrained(model_name).to(device).eval()
        except Exception as e:
            raise BackendUnavailableError(
                f"could not load {model_name} (offline?): {e}"
            ) from e
        self._tokenizer.truncation_side = "left" if keep == "tail" else "right"
        import torch
        self._torch = torch
        self._device = device
        self.max_tokens = max_tokens
        self.keep = keep
        self.deterministic = True
        self.d_t = int(self._model.config.hidden_size)
        self.backend_id = f"bert-{model_name}-d{self.d_t}"

    def encode(self, caption: str) -> tuple[np.ndarray, int]:
        torch = self._torch
        enc = self._tokenizer(caption, return_tensors="pt", truncation=True,
                              max_length=self.max_tokens)
        with torch.no_grad():
            out = self._model(**{k: v.to(self._device) for k, v in enc.items()})
        cls = out.last_hidden_state[:, 0, :].squeeze(0).cpu().numpy()
        return cls.astype(np.float32), int(enc["input_ids"].shape[1])


def build_visual_backend(config: Mapping[str, Any]) -> VisualBackend:
    """Instantiate a visual backend from a config dict with an 'id' key."""
    cfg = dict(config)
    backend_id = cfg.pop("id", None)
    if backend_id == "toy-visual":
        return ToyVisualBackend(**cfg)
    if backend_id in ("vgg16", "resnet50"):
        return TorchVisualBackend(backend_id, **cfg)
    raise ConfigError(f"unknown visual backend id {backend_id!r}")


def build_caption_backend(config: Mapping[str, Any]) -> CaptionBackend:
    """Instantiate a caption backend from a config dict with an 'id' key."""
    cfg = dict(config)
    backend_id = cfg.pop("id", None)
    if backend_id == "toy-caption":
        return ToyCaptionBackend(**cfg)
    if backend_id == "bert":
        return BertCaptionBackend(**cfg)
    raise ConfigError(f"unknown caption backend id {backend_id!r}")
