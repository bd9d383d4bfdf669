"""Sample manifests, grouped cross-validation folds, and feature stores.

A dataset is described by a CSV manifest with the exact header
``path,label,split,group``.  Paths are resolved against the manifest's
directory unless absolute, labels are free-form class names, split is one of
``train``, ``val``, ``test``, and group is an optional writer or source id
used to keep related samples on the same side of a cross-validation fold.

Extracted features are persisted in a small binary container (magic
``SRSF``) with a JSON sidecar describing the class list and extraction
configuration.  The container embeds the configuration digest so stores and
models built under different settings cannot be combined unnoticed.
"""

from __future__ import annotations

import csv
import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, ManifestError
from .imagecore import load_image, preprocess
from .srslbp import DEFAULT_RADII, DEFAULT_ZONES, config_digest, extract_features

MANIFEST_FIELDS = ("path", "label", "split", "group")
SPLITS = ("train", "val", "test")

STORE_MAGIC = b"SRSF"
STORE_VERSION = 1


@dataclass(frozen=True)
class SampleRecord:
    """One manifest row."""

    path: str
    label: str
    split: str
    group: str = ""


@dataclass(frozen=True)
class Manifest:
    records: tuple[SampleRecord, ...]
    class_list: tuple[str, ...]
    root: Path

    def resolve(self, record: SampleRecord) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() else self.root / p

    def subset(self, splits: Iterable[str]) -> tuple[SampleRecord, ...]:
        wanted = set(splits)
        return tuple(r for r in self.records if r.split in wanted)


def load_manifest(path: str | Path) -> Manifest:
    """Parse and validate a manifest CSV."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ManifestError(f"manifest {path} is empty")
    if tuple(rows[0]) != MANIFEST_FIELDS:
        raise ManifestError(
            f"manifest {path} has header {rows[0]!r}, "
            f"expected {','.join(MANIFEST_FIELDS)!r}"
        )
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(MANIFEST_FIELDS):
            raise ManifestError(
                f"manifest {path} line {lineno}: expected "
                f"{len(MANIFEST_FIELDS)} fields, got {len(row)}"
            )
        rec = SampleRecord(*row)
        if not rec.path:
            raise ManifestError(f"manifest {path} line {lineno}: empty path")
        if not rec.label:
            raise ManifestError(f"manifest {path} line {lineno}: empty label")
        if rec.split not in SPLITS:
            raise ManifestError(
                f"manifest {path} line {lineno}: split {rec.split!r} "
                f"not one of {'/'.join(SPLITS)}"
            )
        records.append(rec)
    if not records:
        raise ManifestError(f"manifest {path} has no sample rows")
    class_list = tuple(sorted({r.label for r in records}))
    return Manifest(tuple(records), class_list, path.resolve().parent)


def find_duplicate_paths(manifest: Manifest) -> dict[str, list[int]]:
    """Map each path that occurs in more than one row to its row indices.

    Duplicates are legal (the same image may serve several splits) but
    usually indicate a preparation mistake, so they are reported rather
    than rejected.
    """
    seen: dict[str, list[int]] = {}
    for i, rec in enumerate(manifest.records):
        seen.setdefault(rec.path, []).append(i)
    return {p: idx for p, idx in seen.items() if len(idx) > 1}


# ---------------------------------------------------------------------------
# grouped folds


@dataclass(frozen=True)
class Fold:
    """One cross-validation fold: the held-out groups and index split."""

    groups: tuple[str, ...]
    train_indices: np.ndarray
    test_indices: np.ndarray


def make_group_folds(
    records: Sequence[SampleRecord], n_folds: int | None = None
) -> list[Fold]:
    """Split records into folds that never separate a group.

    With ``n_folds`` omitted each distinct group becomes one fold
    (leave-one-group-out).  Otherwise the sorted groups are dealt
    round-robin into ``n_folds`` folds.  Group names sort as strings, so
    fold assignment is deterministic for a given manifest.
    """
    groups = sorted({r.group for r in records})
    if len(groups) < 2:
        raise ValueError("grouped folds need at least 2 distinct groups")
    if n_folds is None:
        n_folds = len(groups)
    if not 2 <= n_folds <= len(groups):
        raise ValueError(
            f"n_folds must be in [2, {len(groups)}] for {len(groups)} groups, "
            f"got {n_folds}"
        )
    folds = []
    for i in range(n_folds):
        held_out = tuple(groups[i::n_folds])
        wanted = set(held_out)
        test_idx = np.array(
            [j for j, r in enumerate(records) if r.group in wanted], dtype=np.int64
        )
        train_idx = np.array(
            [j for j, r in enumerate(records) if r.group not in wanted],
            dtype=np.int64,
        )
        folds.append(Fold(held_out, train_idx, test_idx))
    return folds


# ---------------------------------------------------------------------------
# feature stores


@dataclass
class FeatureStore:
    """Extracted features for a set of samples.

    ``features`` is (n, dim) float32, ``labels`` holds u32 indices into
    ``class_list``.  The store keeps the full class list of the manifest it
    came from, so stores extracted from different splits share a label
    space.
    """

    features: np.ndarray
    labels: np.ndarray
    class_list: tuple[str, ...]
    radii: tuple[int, ...]
    zones: str

    def __post_init__(self):
        f, l = self.features, self.labels
        if f.ndim != 2 or f.dtype != np.float32:
            raise ValueError("features must be a 2-D float32 array")
        if l.shape != (f.shape[0],) or l.dtype != np.uint32:
            raise ValueError("labels must be a (n,) uint32 array")
        if len(self.class_list) == 0:
            raise ValueError("class_list must not be empty")
        if f.shape[0] and int(l.max()) >= len(self.class_list):
            raise ValueError("label index out of range for class_list")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def digest(self) -> bytes:
        return config_digest(self.radii, self.zones)

    def label_names(self) -> list[str]:
        return [self.class_list[i] for i in self.labels]


def _extract_one(args: tuple[str, tuple[int, ...], str]) -> np.ndarray:
    path, radii, zones = args
    img = preprocess(load_image(path))
    return extract_features(img, radii, zones).values.astype(np.float32)


def extract_store(
    manifest: Manifest,
    records: Sequence[SampleRecord] | None = None,
    radii: Iterable[int] = DEFAULT_RADII,
    zones: str = DEFAULT_ZONES,
    workers: int = 1,
) -> FeatureStore:
    """Extract features for ``records`` (default: every manifest row).

    Labels index into the manifest's full class list even when the record
    subset misses some classes.  ``workers`` > 1 fans file decoding and
    extraction out to worker processes; results keep record order either
    way.
    """
    if records is None:
        records = manifest.records
    radii = tuple(int(r) for r in radii)
    index = {name: i for i, name in enumerate(manifest.class_list)}
    for rec in records:
        if rec.label not in index:
            raise ManifestError(f"label {rec.label!r} not in manifest class list")
    jobs = [(str(manifest.resolve(r)), radii, zones) for r in records]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_extract_one, jobs, chunksize=4))
    else:
        rows = [_extract_one(j) for j in jobs]
    dim = len(radii) * (1 if zones == "global" else 3) * 256
    features = (
        np.stack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    )
    labels = np.array([index[r.label] for r in records], dtype=np.uint32)
    return FeatureStore(features, labels, manifest.class_list, radii, zones)


def write_features(store: FeatureStore, path: str | Path) -> None:
    """Serialize a store to ``path`` plus a ``<path>.json`` sidecar.

    Layout (all little-endian): magic ``SRSF``, u32 version, u32 n_samples,
    u32 dim, 32-byte config digest, n*dim float32 features row-major, n u32
    labels.
    """
    path = Path(path)
    header = STORE_MAGIC + struct.pack(
        "<III", STORE_VERSION, store.n_samples, store.dim
    )
    body = (
        header
        + store.digest
        + np.ascontiguousarray(store.features, dtype="<f4").tobytes()
        + np.ascontiguousarray(store.labels, dtype="<u4").tobytes()
    )
    path.write_bytes(body)
    sidecar = {
        "class_list": list(store.class_list),
        "radii": list(store.radii),
        "zones": store.zones,
        "digest": store.digest.hex(),
    }
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, indent=2) + "\n", encoding="utf-8"
    )


def read_features(path: str | Path) -> FeatureStore:
    """Load a store written by :func:`write_features`, verifying all fields."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 48:
        raise FormatError(f"{path}: too short for a feature store header")
    if data[:4] != STORE_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {STORE_MAGIC!r}")
    version, n, dim = struct.unpack_from("<III", data, 4)
    if version != STORE_VERSION:
        raise FormatError(f"{path}: unsupported store version {version}")
    digest = data[16:48]
    expected = 48 + 4 * n * dim + 4 * n
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {n} samples of dim {dim}, "
            f"found {len(data)}"
        )
    features = (
        np.frombuffer(data, dtype="<f4", count=n * dim, offset=48)
        .reshape(n, dim)
        .copy()
    )
    labels = np.frombuffer(
        data, dtype="<u4", count=n, offset=48 + 4 * n * dim
    ).copy()

    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise FormatError(f"{path}: missing sidecar {sidecar_path.name}")
    try:
        meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
        class_list = tuple(str(c) for c in meta["class_list"])
        radii = tuple(int(r) for r in meta["radii"])
        zones = str(meta["zones"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{sidecar_path}: malformed sidecar: {exc}") from exc
    if config_digest(radii, zones) != digest:
        raise FormatError(
            f"{path}: config digest does not match sidecar radii/zones"
        )
    if n and labels.max() >= len(class_list):
        raise FormatError(f"{path}: label index exceeds class list")
    expected_dim = len(radii) * (1 if zones == "global" else 3) * 256
    if dim != expected_dim:
        raise FormatError(
            f"{path}: dim {dim} does not match configuration ({expected_dim})"
        )
    return FeatureStore(features, labels, class_list, radii, zones)
