"""Trainable two-layer classification head over frozen embeddings.

Forward: hidden = relu(W1 z + b1), logits = W2 hidden + b2. Trained with
mini-batch SGD on mean cross-entropy plus L2 weight decay (applied to all
parameters, momentum 0), learning rate lr0 * decay_factor^floor(e/decay_every).
Everything is float64 numpy and bit-reproducible given the schedule seed.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IngestionError, ParameterError, ShapeError, TrainingError


@dataclass
class ProbeHead:
    W1: np.ndarray  # hidden_dim x D
    b1: np.ndarray  # hidden_dim
    W2: np.ndarray  # out_dim x hidden_dim
    b2: np.ndarray  # out_dim

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]

    def params(self) -> tuple[np.ndarray, ...]:
        return (self.W1, self.b1, self.W2, self.b2)

    def copy(self) -> "ProbeHead":
        return ProbeHead(*(p.copy() for p in self.params()))


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 30
    lr0: float = 1e-3
    decay_factor: float = 0.1
    decay_every: int = 20
    weight_decay: float = 8e-4
    batch_size: int = 64
    seed: int = 0

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch index."""
        return self.lr0 * self.decay_factor ** (epoch // self.decay_every)


def init_head(
    input_dim: int, hidden_dim: int, out_dim: int, rng: np.random.Generator
) -> ProbeHead:
    """Uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)) per layer."""

    def layer(fan_out, fan_in):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_out, fan_in))

    return ProbeHead(
        W1=layer(hidden_dim, input_dim),
        b1=np.zeros(hidden_dim),
        W2=layer(out_dim, hidden_dim),
        b2=np.zeros(out_dim),
    )


def forward(head: ProbeHead, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample forward pass: (logits, hidden activations)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (head.input_dim,):
        raise ShapeError(f"expected input of shape ({head.input_dim},), got {z.shape}")
    hidden = np.maximum(head.W1 @ z + head.b1, 0.0)
    logits = head.W2 @ hidden + head.b2
    return logits, hidden


def forward_batch(head: ProbeHead, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched forward pass: (N x out_dim logits, N x hidden_dim activations)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != head.input_dim:
        raise ShapeError(f"expected N x {head.input_dim} input, got {X.shape}")
    hidden = np.maximum(X @ head.W1.T + head.b1, 0.0)
    logits = hidden @ head.W2.T + head.b2
    return logits, hidden


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def predict_proba(head: ProbeHead, z: np.ndarray) -> np.ndarray:
    logits, _ = forward(head, z)
    return _softmax_rows(logits[None, :])[0]


def predict_proba_batch(head: ProbeHead, X: np.ndarray) -> np.ndarray:
    logits, _ = forward_batch(head, X)
    return _softmax_rows(logits)


def hidden_features(head: ProbeHead, X: np.ndarray) -> np.ndarray:
    """Hidden-layer activations used as the adaptive feature space."""
    _, hidden = forward_batch(head, X)
    return hidden


def loss_and_gradients(
    head: ProbeHead, X: np.ndarray, y: np.ndarray, weight_decay: float
) -> tuple[float, tuple[np.ndarray, ...]]:
    """Mean cross-entropy plus 0.5*wd*||params||^2 and its exact gradients."""
    n = X.shape[0]
    hidden_pre = X @ head.W1.T + head.b1
    hidden = np.maximum(hidden_pre, 0.0)
    logits = hidden @ head.W2.T + head.b2
    probs = _softmax_rows(logits)
    ce = -np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300)))
    reg = 0.5 * weight_decay * sum(float(np.sum(p * p)) for p in head.params())

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    gW2 = dlogits.T @ hidden + weight_decay * head.W2
    gb2 = dlogits.sum(axis=0) + weight_decay * head.b2
    dhidden = dlogits @ head.W2
    dhidden_pre = dhidden * (hidden_pre > 0.0)
    gW1 = dhidden_pre.T @ X + weight_decay * head.W1
    gb1 = dhidden_pre.sum(axis=0) + weight_decay * head.b1
    return ce + reg, (gW1, gb1, gW2, gb2)


def sgd_step(head: ProbeHead, grads: tuple[np.ndarray, ...], lr: float) -> None:
    for p, g in zip(head.params(), grads):
        p -= lr * g


@dataclass
class TrainResult:
    head: ProbeHead
    epoch_losses: list[float] = field(default_factory=list)


def train(
    head: ProbeHead, X: np.ndarray, y: np.ndarray, schedule: TrainSchedule
) -> TrainResult:
    """Mini-batch SGD with seeded shuffling; returns per-epoch mean loss.

    The head is updated in place and also returned inside the result.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise TrainingError("empty training set")
    if X.shape[0] != y.shape[0]:
        raise ShapeError("feature/label count mismatch")
    if np.any(y < 0) or np.any(y >= head.out_dim):
        raise TrainingError(f"labels must be in [0, {head.out_dim})")
    if schedule.epochs < 1 or schedule.lr0 <= 0:
        raise ParameterError("schedule requires epochs >= 1 and lr0 > 0")

    rng = np.random.default_rng(schedule.seed)
    n = X.shape[0]
    losses = []
    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, schedule.batch_size):
            batch = order[start : start + schedule.batch_size]
            loss, grads = loss_and_gradients(head, X[batch], y[batch], schedule.weight_decay)
            sgd_step(head, grads, lr)
            epoch_loss += loss
            batches += 1
        losses.append(epoch_loss / batches)
    return TrainResult(head=head, epoch_losses=losses)


_CHECKPOINT_PARAMS = ("W1", "b1", "W2", "b2")


def save_head(head: ProbeHead, directory) -> Path:
    """Checkpoint the head: one embedding-format file per parameter plus a
    manifest naming them. Biases are stored as 1 x n matrices."""
    from .data import write_embeddings  # shared binary format

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"format": "probe-head", "version": 1, "params": {}}
    for name in _CHECKPOINT_PARAMS:
        value = getattr(head, name)
        matrix = value if value.ndim == 2 else value[None, :]
        write_embeddings(directory / f"{name}.bin", matrix)
        manifest["params"][name] = {"file": f"{name}.bin", "shape": list(value.shape)}
    path = directory / "head.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8")
    return path


def load_head(directory) -> ProbeHead:
    from .data import read_embeddings

    directory = Path(directory)
    manifest_path = directory / "head.json"
    if not manifest_path.exists():
        raise IngestionError(f"missing head manifest {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != "probe-head":
        raise IngestionError(f"{manifest_path}: not a probe-head manifest")
    values = {}
    for name in _CHECKPOINT_PARAMS:
        entry = manifest["params"][name]
        matrix = read_embeddings(directory / entry["file"])
        values[name] = matrix.reshape(entry["shape"])
    return ProbeHead(**values)


def evaluate_macc(head: ProbeHead, X_test: np.ndarray, y_test: np.ndarray) -> float:
    """Fraction of argmax-correct predictions on an ID-only test set.

    When the head carries an extra non-target output, predicting it counts
    as wrong here.
    """
    X_test = np.asarray(X_test, dtype=np.float64)
    y_test = np.asarray(y_test, dtype=np.int64)
    if X_test.shape[0] == 0:
        raise TrainingError("empty test set")
    logits, _ = forward_batch(head, X_test)
    predictions = np.argmax(logits, axis=1)
    return float(np.mean(predictions == y_test))
