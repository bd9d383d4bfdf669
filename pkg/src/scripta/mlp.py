"""Feed-forward classifier trained with plain SGD.

The network is input -> hidden -> hidden -> classes (1024 and 512 units by
default) with tanh hidden layers.  The output layer is softmax by default;
per-unit logistic outputs are available as a configuration switch.  Hidden
layers use inverted dropout during training.  Weights live on the float32
grid at all times (initialization and every update round through float32)
while arithmetic runs in float64, so saving to the 32-bit model container
and loading back reproduces the exact same network.

Besides the class posteriors, the two hidden activation vectors are exposed
as embeddings: nearest-neighbour search over them is what turns the trained
network into a similarity metric, which is how unseen classes are handled.
Training history therefore tracks, per epoch, the validation error of the
output layer and of 1-NN classification over each hidden layer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import FeatureStore
from .errors import ConfigError, FormatError

DEFAULT_HIDDEN = (1024, 512)
HIDDEN_ACTIVATION = "tanh"
OUTPUT_ACTIVATIONS = ("softmax", "logistic")

MODEL_MAGIC = b"SMLP"
MODEL_VERSION = 1

LOG_CLAMP = 1e-12


def _f32_grid(a: np.ndarray) -> np.ndarray:
    # float64 values that are exactly representable in float32
    return a.astype(np.float32).astype(np.float64)


@dataclass
class MlpModel:
    """Weights plus the metadata needed to use them consistently.

    ``weights[i]`` has shape (fan_in, fan_out); ``biases[i]`` has shape
    (fan_out,).  ``config_digest`` ties the model to the feature extraction
    configuration it was trained on; it is None until the first training
    run binds it.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    class_list: tuple[str, ...]
    output_activation: str = "softmax"
    config_digest: bytes | None = None
    seed: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        if len(self.weights) < 2:
            raise ValueError("need at least one hidden layer")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError("bias shape must match weight fan-out")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise ValueError("consecutive layer shapes do not chain")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(
                f"output activation must be one of {OUTPUT_ACTIVATIONS}"
            )
        if self.weights[-1].shape[1] != len(self.class_list):
            raise ValueError("output width must equal the number of classes")
        if self.config_digest is not None and len(self.config_digest) != 32:
            raise ValueError("config digest must be 32 bytes")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_list)

    @property
    def n_parameters(self) -> int:
        return sum((w.shape[0] + 1) * w.shape[1] for w in self.weights)


@dataclass(frozen=True)
class LayerActivations:
    """Activations of one forward pass: two hidden layers and the output."""

    hidden1: np.ndarray
    hidden2: np.ndarray
    output: np.ndarray


@dataclass(frozen=True)
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.01
    dropout_keep: float = 0.5
    validation_fraction: float = 0.1
    batch_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout keep probability must be in (0, 1]")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation fraction must be in [0, 1)")
        if not self.batch_scale > 0:
            raise ValueError("batch scale must be positive")


@dataclass
class TrainingHistory:
    """Per-epoch validation errors; ``train_loss`` is None when reloaded
    from a report file, which does not carry it."""

    output_error: np.ndarray
    layer1_error: np.ndarray
    layer2_error: np.ndarray
    train_loss: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.output_error)
        if len(self.layer1_error) != n or len(self.layer2_error) != n:
            raise ValueError("history columns must have equal length")
        if self.train_loss is not None and len(self.train_loss) != n:
            raise ValueError("history columns must have equal length")

    @property
    def n_epochs(self) -> int:
        return len(self.output_error)


# ---------------------------------------------------------------------------
# construction and forward pass


def init_model(
    input_dim: int,
    class_list: Sequence[str],
    seed: int = 0,
    hidden_sizes: Sequence[int] = DEFAULT_HIDDEN,
    output_activation: str = "softmax",
    config_digest: bytes | None = None,
) -> MlpModel:
    """Glorot-uniform weights (limit sqrt(6/(fan_in+fan_out))), zero biases."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    class_list = tuple(class_list)
    if len(class_list) < 2:
        raise ValueError("need at least 2 classes")
    if len(set(class_list)) != len(class_list):
        raise ValueError("class_list contains duplicates")
    rng = np.random.default_rng(seed)
    sizes = (int(input_dim),) + tuple(int(h) for h in hidden_sizes) + (len(class_list),)
    if any(s < 1 for s in sizes):
        raise ValueError("layer sizes must be positive")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(_f32_grid(rng.uniform(-limit, limit, (fan_in, fan_out))))
        biases.append(np.zeros(fan_out))
    return MlpModel(
        weights,
        biases,
        class_list,
        output_activation=output_activation,
        config_digest=config_digest,
        seed=seed,
    )


def make_dropout_masks(
    rng: np.random.Generator, sizes: Sequence[int], n: int, keep: float
) -> list[np.ndarray]:
    """Inverted-dropout masks: entries are 0 with probability 1-keep, else
    1/keep, so masked activations keep their expected value."""
    if not 0.0 < keep <= 1.0:
        raise ValueError("keep probability must be in (0, 1]")
    return [(rng.random((n, s)) < keep) / keep for s in sizes]


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def forward(
    model: MlpModel, x: np.ndarray, dropout_masks: list[np.ndarray] | None = None
) -> LayerActivations:
    """Batch forward pass; hidden activations are post-dropout when masks
    are given (training) and raw otherwise (inference)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(
            f"input must be (n, {model.input_dim}), got {x.shape}"
        )
    if dropout_masks is not None and len(dropout_masks) != len(model.weights) - 1:
        raise ValueError("one dropout mask per hidden layer expected")
    h1 = np.tanh(x @ model.weights[0] + model.biases[0])
    if dropout_masks is not None:
        h1 = h1 * dropout_masks[0]
    h2 = np.tanh(h1 @ model.weights[1] + model.biases[1])
    if dropout_masks is not None:
        h2 = h2 * dropout_masks[1]
    z3 = h2 @ model.weights[2] + model.biases[2]
    if model.output_activation == "softmax":
        out = _softmax(z3)
    else:
        out = 1.0 / (1.0 + np.exp(-z3))
    return LayerActivations(h1, h2, out)


def cross_entropy(output: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true classes, outputs clamped at
    1e-12 so empty posteriors cannot produce infinities."""
    labels = np.asarray(labels)
    picked = output[np.arange(output.shape[0]), labels]
    return float(-np.log(np.maximum(picked, LOG_CLAMP)).mean())


def backward(
    model: MlpModel,
    x: np.ndarray,
    acts: LayerActivations,
    labels: np.ndarray,
    dropout_masks: list[np.ndarray] | None = None,
) -> Gradients:
    """Gradients of the mean cross-entropy for the batch that produced
    ``acts`` (same input and same dropout masks)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    labels = np.asarray(labels)
    onehot = np.zeros_like(acts.output)
    onehot[np.arange(n), labels] = 1.0

    if model.output_activation == "softmax":
        dz3 = (acts.output - onehot) / n
    else:
        # only the true-class unit feeds this loss
        dz3 = onehot * (acts.output - 1.0) / n

    h1, h2 = acts.hidden1, acts.hidden2
    if dropout_masks is None:
        t1, t2 = h1, h2
    else:
        # recover raw tanh values behind the masks; zeroed units do not
        # matter because the mask multiplies them out again below
        m1, m2 = dropout_masks
        t1 = np.where(m1 > 0, h1 / np.where(m1 > 0, m1, 1.0), 0.0)
        t2 = np.where(m2 > 0, h2 / np.where(m2 > 0, m2, 1.0), 0.0)

    dw3 = h2.T @ dz3
    db3 = dz3.sum(axis=0)
    dh2 = dz3 @ model.weights[2].T
    if dropout_masks is not None:
        dh2 = dh2 * dropout_masks[1]
    dz2 = dh2 * (1.0 - t2 * t2)
    dw2 = h1.T @ dz2
    db2 = dz2.sum(axis=0)
    dh1 = dz2 @ model.weights[1].T
    if dropout_masks is not None:
        dh1 = dh1 * dropout_masks[0]
    dz1 = dh1 * (1.0 - t1 * t1)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return Gradients([dw1, dw2, dw3], [db1, db2, db3])


# ---------------------------------------------------------------------------
# training


def compute_batch_size(batch_scale: float, n_train: int, n_classes: int) -> int:
    """Mini-batch size: proportional to samples per class, never below 32,
    never above the training set size."""
    b = max(32, round(batch_scale * n_train / n_classes))
    return min(b, n_train)


def train(
    model: MlpModel, store: FeatureStore, cfg: TrainConfig
) -> tuple[MlpModel, TrainingHistory]:
    """SGD on cross-entropy; returns a trained copy and per-epoch history.

    The validation subset is carved out of the store at random (seeded).
    With ``validation_fraction`` 0 the history is measured on the training
    set itself, which is optimistic but keeps small runs simple.  Hidden
    1-NN errors use the training subset as gallery.
    """
    if store.dim != model.input_dim:
        raise ConfigError(
            f"store dim {store.dim} does not match model input {model.input_dim}"
        )
    if tuple(store.class_list) != tuple(model.class_list):
        raise ConfigError("store and model class lists differ")
    if model.config_digest is not None and store.digest != model.config_digest:
        raise ConfigError("store and model were built with different configurations")
    if store.n_samples < 2:
        raise ConfigError("need at least 2 samples to train")

    from . import metricknn  # deferred: metricknn imports this module

    rng = np.random.default_rng(cfg.seed)
    n = store.n_samples
    x_all = store.features.astype(np.float64)
    y_all = store.labels.astype(np.int64)

    if cfg.validation_fraction > 0.0:
        perm = rng.permutation(n)
        n_val = max(1, round(cfg.validation_fraction * n))
        if n_val >= n:
            raise ConfigError("validation fraction leaves no training samples")
        val_idx, train_idx = perm[:n_val], perm[n_val:]
    else:
        train_idx = np.arange(n)
        val_idx = np.arange(n)

    x_train, y_train = x_all[train_idx], y_all[train_idx]
    x_val, y_val = x_all[val_idx], y_all[val_idx]
    n_train = x_train.shape[0]
    batch = compute_batch_size(cfg.batch_scale, n_train, model.n_classes)

    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    trained = MlpModel(
        weights,
        biases,
        model.class_list,
        output_activation=model.output_activation,
        config_digest=model.config_digest or store.digest,
        seed=cfg.seed,
    )
    hidden_sizes = trained.layer_sizes[1:-1]

    losses, out_err, l1_err, l2_err = [], [], [], []
    for _ in range(cfg.epochs):
        order = rng.permutation(n_train)
        total_loss = 0.0
        for start in range(0, n_train, batch):
            idx = order[start : start + batch]
            xb, yb = x_train[idx], y_train[idx]
            masks = None
            if cfg.dropout_keep < 1.0:
                masks = make_dropout_masks(
                    rng, hidden_sizes, len(idx), cfg.dropout_keep
                )
            acts = forward(trained, xb, masks)
            total_loss += cross_entropy(acts.output, yb) * len(idx)
            grads = backward(trained, xb, acts, yb, masks)
            for i in range(len(weights)):
                weights[i] -= cfg.learning_rate * grads.weights[i]
                weights[i][:] = _f32_grid(weights[i])
                biases[i] -= cfg.learning_rate * grads.biases[i]
                biases[i][:] = _f32_grid(biases[i])
        losses.append(total_loss / n_train)

        val_acts = embed_batch(trained, x_val)
        train_acts = embed_batch(trained, x_train)
        out_err.append(float((val_acts.output.argmax(axis=1) != y_val).mean()))
        for errs, layer in ((l1_err, "hidden1"), (l2_err, "hidden2")):
            pred = metricknn.knn_predict(
                getattr(train_acts, layer),
                y_train,
                getattr(val_acts, layer),
                k=1,
            )
            errs.append(float((pred != y_val).mean()))

    history = TrainingHistory(
        np.array(out_err), np.array(l1_err), np.array(l2_err), np.array(losses)
    )
    return trained, history


# ---------------------------------------------------------------------------
# embeddings


def embed(model: MlpModel, x: np.ndarray) -> LayerActivations:
    """Activations for a single feature vector (1-D in, 1-D fields out)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("embed expects a single 1-D feature vector")
    acts = forward(model, x[None, :])
    return LayerActivations(acts.hidden1[0], acts.hidden2[0], acts.output[0])


def embed_batch(model: MlpModel, x: np.ndarray) -> LayerActivations:
    """Dropout-free activations for a batch of feature vectors."""
    return forward(model, x)


# ---------------------------------------------------------------------------
# persistence


def save_model(model: MlpModel, path: str | Path) -> None:
    """Write the model container: magic ``SMLP``, u32 version, u32 header
    length, JSON header, then all weights and biases as little-endian
    float32 (lossless here because weights stay on the float32 grid)."""
    header = {
        "layer_sizes": list(model.layer_sizes),
        "activations": [HIDDEN_ACTIVATION] * (len(model.weights) - 1)
        + [model.output_activation],
        "class_list": list(model.class_list),
        "config_digest": model.config_digest.hex() if model.config_digest else None,
        "seed": model.seed,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(blob)), blob]
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> MlpModel:
    """Read a model container back; inverse of :func:`save_model`."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12:
        raise FormatError(f"{path}: too short for a model header")
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {MODEL_MAGIC!r}")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    if len(data) < 12 + header_len:
        raise FormatError(f"{path}: truncated JSON header")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
        sizes = [int(s) for s in header["layer_sizes"]]
        activations = [str(a) for a in header["activations"]]
        class_list = tuple(str(c) for c in header["class_list"])
        digest_hex = header["config_digest"]
        seed = int(header["seed"])
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed model header: {exc}") from exc
    if len(sizes) < 3 or len(activations) != len(sizes) - 1:
        raise FormatError(f"{path}: inconsistent layer metadata")
    if any(a != HIDDEN_ACTIVATION for a in activations[:-1]):
        raise FormatError(f"{path}: unsupported hidden activation")
    if activations[-1] not in OUTPUT_ACTIVATIONS:
        raise FormatError(f"{path}: unsupported output activation {activations[-1]!r}")

    expected = 12 + header_len + 4 * sum(
        (a + 1) * b for a, b in zip(sizes, sizes[1:])
    )
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for layer sizes {sizes}, "
            f"found {len(data)}"
        )
    offset = 12 + header_len
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        w = np.frombuffer(data, dtype="<f4", count=fan_in * fan_out, offset=offset)
        offset += 4 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f4", count=fan_out, offset=offset)
        offset += 4 * fan_out
        weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
        biases.append(b.astype(np.float64))
    digest = bytes.fromhex(digest_hex) if digest_hex else None
    return MlpModel(
        weights,
        biases,
        class_list,
        output_activation=activations[-1],
        config_digest=digest,
        seed=seed,
    )
