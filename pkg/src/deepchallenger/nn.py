"""Two-layer feed-forward heads with Adam, dropout and early stopping.

All math is plain numpy in float64, which buys three things torch would
make awkward: byte-identical retraining runs, cheap analytic-vs-numeric
gradient checks, and an exact label-flip symmetry for the binary head.

The symmetry hinges on two implementation choices.  The output layer
starts at exactly zero, so two trainings that differ only by flipped
binary labels see bit-for-bit negated output-layer gradients and hence
bit-for-bit negated output weights at every Adam step.  And the binary
loss and residual are computed in a branch form, selecting between
``softplus(z)``/``softplus(-z)`` by label, so the mirrored run evaluates
literally the same float expressions and early stopping cannot diverge.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
from pathlib import Path
from typing import Any, BinaryIO, Mapping

import numpy as np

from .errors import ConfigError, NumericError, WeightsError
from .seeding import derive_rng

WEIGHTS_MAGIC = b"DCW1\n"
_PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings shared by every head in the pipeline."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 4
    max_epochs: int = 30
    dropout: float = 0.2
    patience: int = 5
    val_fraction: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not (0 <= self.dropout < 1):
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not (0 <= self.val_fraction < 1):
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training option(s): {sorted(unknown)}")
        config = cls(**data)
        config.validate()
        return config


@dataclasses.dataclass
class TrainLog:
    """Per-epoch losses plus where early stopping landed."""

    entries: list[dict[str, Any]]
    best_epoch: int
    stopped_epoch: int
    train_size: int
    val_size: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "entries": self.entries,
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
            "train_size": self.train_size,
            "val_size": self.val_size,
        }

    def save_jsonl(self, path: Path) -> None:
        lines = [json.dumps(e, sort_keys=True) for e in self.entries]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


class FeedForwardHead:
    """input -> hidden ReLU -> output, with softmax or sigmoid on top.

    The hidden activation doubles as a learned embedding; ``hidden()``
    exposes it without dropout.  ``head='softmax'`` trains single-label
    cross-entropy against integer class labels; ``head='sigmoid'`` trains
    per-output binary cross-entropy against 0/1 targets, optionally
    restricted to a 0/1 mask of active outputs.
    """

    def __init__(self, input_dim: int, hidden_dim: int, output_dim: int,
                 head: str = "softmax", seed: int = 0):
        if input_dim < 1 or hidden_dim < 1 or output_dim < 1:
            raise ConfigError("input_dim, hidden_dim and output_dim must be >= 1")
        if head not in ("softmax", "sigmoid"):
            raise ConfigError(f"head must be 'softmax' or 'sigmoid', got {head!r}")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.output_dim = output_dim
        self.head = head
        self.seed = seed
        rng = derive_rng(seed, "init", input_dim, hidden_dim, output_dim, head)
        self.W1 = rng.standard_normal((input_dim, hidden_dim)) * np.sqrt(2.0 / input_dim)
        self.b1 = np.zeros(hidden_dim)
        # Zero output layer: see the module docstring on flip symmetry.
        self.W2 = np.zeros((hidden_dim, output_dim))
        self.b2 = np.zeros(output_dim)

    # ---- forward ---------------------------------------------------------

    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ConfigError(
                f"expected input of shape (N, {self.input_dim}), got {X.shape}"
            )
        return X

    def hidden(self, X: np.ndarray) -> np.ndarray:
        """Hidden-layer activations with no dropout: the learned embedding."""
        X = self._check_input(X)
        return np.maximum(X @ self.W1 + self.b1, 0.0)

    def decision_values(self, X: np.ndarray) -> np.ndarray:
        """Pre-activation outputs (logits), no dropout."""
        return self.hidden(X) @ self.W2 + self.b2

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        z = self.decision_values(X)
        if self.head == "softmax":
            z = z - z.max(axis=1, keepdims=True)
            ez = np.exp(z)
            return ez / ez.sum(axis=1, keepdims=True)
        return _sigmoid(z)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Hard labels: argmax classes, or per-output 1 when p >= 0.5."""
        proba = self.predict_proba(X)
        if self.head == "softmax":
            return proba.argmax(axis=1)
        return (proba >= 0.5).astype(np.int64)

    # ---- loss and gradients ---------------------------------------------

    def _check_targets(self, X: np.ndarray, y: np.ndarray,
                       mask: np.ndarray | None) -> tuple[np.ndarray, np.ndarray | None]:
        if self.head == "softmax":
            if mask is not None:
                raise ConfigError("output masks only apply to the sigmoid head")
            y = np.asarray(y)
            if y.shape != (X.shape[0],):
                raise ConfigError(f"expected labels of shape ({X.shape[0]},), got {y.shape}")
            if not np.issubdtype(y.dtype, np.integer):
                raise ConfigError("softmax head needs integer class labels")
            if y.min() < 0 or y.max() >= self.output_dim:
                raise ConfigError(
                    f"class labels must lie in [0, {self.output_dim}), got"
                    f" [{y.min()}, {y.max()}]"
                )
            return y, None
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape != (X.shape[0], self.output_dim):
            raise ConfigError(
                f"expected targets of shape ({X.shape[0]}, {self.output_dim}),"
                f" got {y.shape}"
            )
        if not np.isin(y, (0.0, 1.0)).all():
            raise ConfigError("sigmoid head needs 0/1 targets")
        if mask is not None:
            mask = np.asarray(mask, dtype=np.float64)
            if mask.ndim == 1:
                mask = mask[:, None]
            if mask.shape != y.shape:
                raise ConfigError(f"mask shape {mask.shape} does not match targets {y.shape}")
            if not np.isin(mask, (0.0, 1.0)).all():
                raise ConfigError("mask entries must be 0 or 1")
            if mask.sum() == 0:
                raise ConfigError("mask selects no outputs")
        return y, mask

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray,
                       mask: np.ndarray | None = None,
                       dropout_mask: np.ndarray | None = None,
                       ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean loss on a batch and analytic gradients for all parameters."""
        X = self._check_input(X)
        y, mask = self._check_targets(X, y, mask)
        h = np.maximum(X @ self.W1 + self.b1, 0.0)
        h_out = h if dropout_mask is None else h * dropout_mask
        z = h_out @ self.W2 + self.b2
        n = X.shape[0]

        if self.head == "softmax":
            shifted = z - z.max(axis=1, keepdims=True)
            log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            log_proba = shifted - log_norm
            loss = float(-log_proba[np.arange(n), y].mean())
            dz = np.exp(log_proba)
            dz[np.arange(n), y] -= 1.0
            dz /= n
        else:
            positive = y > 0.5
            # Branch form, not softplus(z) - y*z: both selected expressions
            # are evaluated verbatim by the label-flipped twin run, which
            # keeps losses, and so early stopping, bit-identical there.
            per_output = np.where(positive, _softplus(-z), _softplus(z))
            residual = np.where(positive, -_sigmoid(-z), _sigmoid(z))
            if mask is None:
                loss = float(per_output.mean())
                dz = residual / per_output.size
            else:
                active = mask.sum()
                loss = float((per_output * mask).sum() / active)
                dz = residual * mask / active

        if not np.isfinite(loss):
            raise NumericError("non-finite training loss")
        dW2 = h_out.T @ dz
        db2 = dz.sum(axis=0)
        dh = dz @ self.W2.T
        if dropout_mask is not None:
            dh = dh * dropout_mask
        dh[h <= 0.0] = 0.0
        dW1 = X.T @ dh
        db1 = dh.sum(axis=0)
        return loss, {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}

    def evaluate_loss(self, X: np.ndarray, y: np.ndarray,
                      mask: np.ndarray | None = None) -> float:
        loss, _ = self.loss_and_grads(X, y, mask=mask)
        return loss

    def evaluate_accuracy(self, X: np.ndarray, y: np.ndarray,
                          mask: np.ndarray | None = None) -> float:
        X = self._check_input(X)
        y, mask = self._check_targets(X, y, mask)
        if self.head == "softmax":
            return float((self.predict(X) == y).mean())
        hits = (self.predict(X) == y).astype(np.float64)
        if mask is None:
            return float(hits.mean())
        return float((hits * mask).sum() / mask.sum())

    # ---- training --------------------------------------------------------

    def fit(self, X: np.ndarray, y: np.ndarray, config: TrainConfig,
            mask: np.ndarray | None = None) -> TrainLog:
        """Adam with per-epoch shuffling, dropout, and early stopping.

        A seeded slice of the rows is held out; when its loss stops
        improving for ``patience`` epochs, training halts and the weights
        snapshot from the best epoch (the untrained state counts) is
        restored.  ``val_fraction=0`` disables the hold-out and runs all
        ``max_epochs``, keeping the final weights.
        """
        config.validate()
        X = self._check_input(X)
        y, mask = self._check_targets(X, y, mask)
        n = X.shape[0]

        n_val = int(round(config.val_fraction * n)) if config.val_fraction > 0 else 0
        if config.val_fraction > 0:
            n_val = max(1, n_val)
        if n_val >= n:
            raise ConfigError(
                f"validation slice of {n_val} rows leaves no training rows (n={n})"
            )
        order = derive_rng(config.seed, "val-split").permutation(n)
        val_idx, train_idx = order[:n_val], order[n_val:]
        X_train, X_val = X[train_idx], X[val_idx]

        def take(arr: np.ndarray | None, idx: np.ndarray) -> np.ndarray | None:
            return None if arr is None else arr[idx]

        y_train, y_val = y[train_idx], y[val_idx]
        mask_train, mask_val = take(mask, train_idx), take(mask, val_idx)

        batch_rng = derive_rng(config.seed, "batch-order")
        dropout_rng = derive_rng(config.seed, "dropout")
        adam_m = {name: np.zeros_like(getattr(self, name)) for name in _PARAM_NAMES}
        adam_v = {name: np.zeros_like(getattr(self, name)) for name in _PARAM_NAMES}
        step = 0

        def epoch_entry(epoch: int) -> dict[str, Any]:
            entry: dict[str, Any] = {
                "epoch": epoch,
                "train_loss": self.evaluate_loss(X_train, y_train, mask=mask_train),
                "train_acc": self.evaluate_accuracy(X_train, y_train, mask=mask_train),
                "val_loss": None,
                "val_acc": None,
            }
            if n_val:
                entry["val_loss"] = self.evaluate_loss(X_val, y_val, mask=mask_val)
                entry["val_acc"] = self.evaluate_accuracy(X_val, y_val, mask=mask_val)
            return entry

        def snapshot() -> dict[str, np.ndarray]:
            return {name: getattr(self, name).copy() for name in _PARAM_NAMES}

        entries: list[dict[str, Any]] = [epoch_entry(0)]
        best = entries[0]["val_loss"]
        best_epoch = 0
        best_params = snapshot() if n_val else None

        stopped_epoch = 0
        for epoch in range(1, config.max_epochs + 1):
            stopped_epoch = epoch
            perm = batch_rng.permutation(len(train_idx))
            for start in range(0, len(perm), config.batch_size):
                rows = perm[start:start + config.batch_size]
                xb, yb = X_train[rows], y_train[rows]
                mb = None if mask_train is None else mask_train[rows]
                dropout_mask = None
                if config.dropout > 0:
                    keep = dropout_rng.random((len(rows), self.hidden_dim)) >= config.dropout
                    dropout_mask = keep / (1.0 - config.dropout)
                _, grads = self.loss_and_grads(xb, yb, mask=mb,
                                               dropout_mask=dropout_mask)
                step += 1
                for name in _PARAM_NAMES:
                    g = grads[name]
                    adam_m[name] = config.beta1 * adam_m[name] + (1 - config.beta1) * g
                    adam_v[name] = config.beta2 * adam_v[name] + (1 - config.beta2) * (g * g)
                    m_hat = adam_m[name] / (1 - config.beta1 ** step)
                    v_hat = adam_v[name] / (1 - config.beta2 ** step)
                    param = getattr(self, name)
                    param -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
                    if not np.all(np.isfinite(param)):
                        raise NumericError(f"non-finite values in {name} at epoch {epoch}")

            entry = epoch_entry(epoch)
            entries.append(entry)
            if n_val:
                current = entry["val_loss"]
                if current < best:
                    best = current
                    best_epoch = epoch
                    best_params = snapshot()
                elif epoch - best_epoch >= config.patience:
                    break

        if best_params is not None:
            for name in _PARAM_NAMES:
                setattr(self, name, best_params[name])
        else:
            best_epoch = stopped_epoch
        return TrainLog(entries=entries, best_epoch=best_epoch,
                        stopped_epoch=stopped_epoch,
                        train_size=len(train_idx), val_size=n_val)

    # ---- persistence -----------------------------------------------------

    def _write(self, fh: BinaryIO) -> None:
        header = {
            "format": "dc-weights",
            "format_version": 1,
            "head": self.head,
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "output_dim": self.output_dim,
            "seed": self.seed,
            "arrays": [
                {"name": name, "shape": list(getattr(self, name).shape), "dtype": "<f8"}
                for name in _PARAM_NAMES
            ],
        }
        fh.write(WEIGHTS_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name in _PARAM_NAMES:
            fh.write(np.ascontiguousarray(getattr(self, name), dtype="<f8").tobytes())

    def save(self, path: Path) -> None:
        """Write weights to a timestamp-free binary container."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            self._write(fh)

    def version(self) -> str:
        """sha256 of the serialized weights; identifies the trained state."""
        buf = io.BytesIO()
        self._write(buf)
        return hashlib.sha256(buf.getvalue()).hexdigest()

    @classmethod
    def load(cls, path: Path, expect_input_dim: int | None = None) -> "FeedForwardHead":
        path = Path(path)
        try:
            raw = path.read_bytes()
        except FileNotFoundError as e:
            raise WeightsError(f"weights file missing: {path}") from e
        if not raw.startswith(WEIGHTS_MAGIC):
            raise WeightsError(f"{path} is not a weights file (bad magic)")
        body = raw[len(WEIGHTS_MAGIC):]
        newline = body.find(b"\n")
        if newline < 0:
            raise WeightsError(f"{path}: truncated header")
        try:
            header = json.loads(body[:newline].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise WeightsError(f"{path}: corrupt header: {e}") from e
        if header.get("format") != "dc-weights" or header.get("format_version") != 1:
            raise WeightsError(f"{path}: unsupported weights format")
        if expect_input_dim is not None and header["input_dim"] != expect_input_dim:
            raise WeightsError(
                f"{path}: weights expect {header['input_dim']}-dim inputs,"
                f" caller supplies {expect_input_dim}-dim"
            )
        model = cls(header["input_dim"], header["hidden_dim"], header["output_dim"],
                    head=header["head"], seed=header.get("seed", 0))
        offset = newline + 1
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape))
            end = offset + count * 8
            if end > len(body):
                raise WeightsError(f"{path}: truncated array {spec['name']}")
            arr = np.frombuffer(body[offset:end], dtype="<f8").reshape(shape).copy()
            setattr(model, spec["name"], arr)
            offset = end
        if offset != len(body):
            raise WeightsError(f"{path}: trailing bytes after arrays")
        return model
