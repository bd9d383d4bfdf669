"""Exact nearest-neighbour search over network activations.

The trained network doubles as a similarity metric: probe images are
classified by finding their nearest gallery neighbours in one of the hidden
activation spaces.  Because the gallery defines the label space, classes the
network never saw during training are handled the same way as seen ones.

Search is exhaustive and fully deterministic: neighbours at equal distance
rank by insertion order, and tied votes go to the tied class appearing
nearest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import FeatureStore
from .errors import ConfigError
from .mlp import MlpModel, embed_batch

METRICS = ("euclidean", "cosine")

EVAL_ROUTES = ("output", "layer1", "layer2")


@dataclass(frozen=True)
class KnnIndex:
    """Gallery of vectors with integer labels and a fixed metric."""

    vectors: np.ndarray
    labels: np.ndarray
    metric: str = "euclidean"

    def __post_init__(self):
        v, l = self.vectors, self.labels
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError("vectors must be a non-empty (n, d) array")
        if l.shape != (v.shape[0],):
            raise ValueError("labels must align with vectors")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")

    @property
    def n_samples(self) -> int:
        return self.vectors.shape[0]


def build_index(
    vectors: np.ndarray, labels: np.ndarray, metric: str = "euclidean"
) -> KnnIndex:
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not np.all(np.isfinite(vectors)):
        raise ValueError("gallery vectors must be finite")
    return KnnIndex(vectors, labels, metric)


def _distances(index: KnnIndex, probe: np.ndarray) -> np.ndarray:
    if index.metric == "euclidean":
        diff = index.vectors - probe
        return np.einsum("ij,ij->i", diff, diff)  # squared; order-equivalent
    norms = np.sqrt(np.einsum("ij,ij->i", index.vectors, index.vectors))
    pnorm = float(np.sqrt(probe @ probe))
    denom = norms * pnorm
    sim = np.zeros(index.n_samples)
    ok = denom > 0.0
    sim[ok] = (index.vectors[ok] @ probe) / denom[ok]
    # zero-norm vectors count as maximally dissimilar
    return 1.0 - sim


def _vote(neighbour_labels: np.ndarray) -> int:
    values, counts = np.unique(neighbour_labels, return_counts=True)
    best = counts.max()
    tied = set(values[counts == best].tolist())
    for lb in neighbour_labels:  # nearest first
        if int(lb) in tied:
            return int(lb)
    raise AssertionError("unreachable: some neighbour holds the top vote")


def classify(index: KnnIndex, probe: np.ndarray, k: int = 1) -> int:
    """Label of the majority among the k nearest gallery entries."""
    probe = np.asarray(probe, dtype=np.float64)
    if probe.ndim != 1 or probe.shape[0] != index.vectors.shape[1]:
        raise ValueError(
            f"probe must be a 1-D vector of dim {index.vectors.shape[1]}"
        )
    if not 1 <= k <= index.n_samples:
        raise ValueError(f"k must be in [1, {index.n_samples}]")
    d = _distances(index, probe)
    order = np.lexsort((np.arange(d.shape[0]), d))[:k]
    return _vote(index.labels[order])


def knn_predict(
    gallery: np.ndarray,
    labels: np.ndarray,
    probes: np.ndarray,
    k: int = 1,
    metric: str = "euclidean",
) -> np.ndarray:
    """Predict a label for every probe row; see :func:`classify`."""
    index = build_index(gallery, labels, metric)
    probes = np.asarray(probes, dtype=np.float64)
    if probes.ndim != 2 or probes.shape[1] != index.vectors.shape[1]:
        raise ValueError("probes must be (m, d) with the gallery's dim")
    return np.array(
        [classify(index, p, k) for p in probes], dtype=np.int64
    )


# ---------------------------------------------------------------------------
# evaluation drivers


def _check_stores(model: MlpModel, *stores: FeatureStore):
    for store in stores:
        if store.dim != model.input_dim:
            raise ConfigError(
                f"store dim {store.dim} does not match model input "
                f"{model.input_dim}"
            )
        if model.config_digest is not None and store.digest != model.config_digest:
            raise ConfigError(
                "store and model were built with different configurations"
            )


def evaluate_layerwise(
    model: MlpModel,
    gallery: FeatureStore,
    probes: FeatureStore,
    k: int = 1,
    metric: str = "euclidean",
) -> dict[str, np.ndarray]:
    """Predicted class names for the probes along all three routes.

    ``output`` classifies with the network head directly (the gallery plays
    no part); ``layer1``/``layer2`` run k-NN over the hidden activations
    with the gallery as reference set.  Hidden routes take their label space
    from the gallery, so a gallery may contain classes the model never saw.
    """
    _check_stores(model, gallery, probes)
    if gallery.n_samples < 1:
        raise ConfigError("gallery store is empty")
    g_acts = embed_batch(model, gallery.features.astype(np.float64))
    p_acts = embed_batch(model, probes.features.astype(np.float64))
    out = {}
    model_names = np.array(model.class_list)
    out["output"] = model_names[p_acts.output.argmax(axis=1)]
    gallery_names = np.array(gallery.class_list)
    for route, attr in (("layer1", "hidden1"), ("layer2", "hidden2")):
        pred = knn_predict(
            getattr(g_acts, attr),
            gallery.labels.astype(np.int64),
            getattr(p_acts, attr),
            k=k,
            metric=metric,
        )
        out[route] = gallery_names[pred]
    return out


@dataclass(frozen=True)
class ClassAccuracy:
    name: str
    seen: bool
    support: int
    accuracy: float


@dataclass(frozen=True)
class CrossDomainResult:
    """Per-class accuracy of gallery k-NN, split into classes the model was
    trained on (seen) and the rest.  Averages are unweighted over classes."""

    per_class: tuple[ClassAccuracy, ...]
    seen_average: float | None
    unseen_average: float | None
    predictions: np.ndarray


def cross_domain_eval(
    model: MlpModel,
    gallery: FeatureStore,
    probes: FeatureStore,
    layer: int = 2,
    k: int = 1,
    metric: str = "euclidean",
) -> CrossDomainResult:
    """Nearest-neighbour transfer evaluation over one hidden layer."""
    if layer not in (1, 2):
        raise ValueError("layer must be 1 or 2")
    route = f"layer{layer}"
    preds = evaluate_layerwise(model, gallery, probes, k=k, metric=metric)[route]
    true = np.array(probes.label_names())
    seen_set = set(model.class_list)
    rows = []
    for name in sorted(set(true.tolist())):
        mask = true == name
        support = int(mask.sum())
        acc = float((preds[mask] == name).mean())
        rows.append(ClassAccuracy(name, name in seen_set, support, acc))
    seen_accs = [r.accuracy for r in rows if r.seen]
    unseen_accs = [r.accuracy for r in rows if not r.seen]
    return CrossDomainResult(
        tuple(rows),
        float(np.mean(seen_accs)) if seen_accs else None,
        float(np.mean(unseen_accs)) if unseen_accs else None,
        preds,
    )
