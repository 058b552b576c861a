"""Embedding-file I/O, dataset manifests, and the sample/domain schema.

One binary container serves anchors, features, and caption embeddings alike;
the JSON manifest binds files to roles.  Target labels, when present, are
evaluation-only: training code paths read labels through
``DomainSplit.training_labels`` which hides them, and every evaluation read
is counted so tests can prove isolation.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import as_matrix
from .errors import (
    BadMagicError,
    ClassCountMismatchError,
    DanglingReferenceError,
    DimMismatchError,
    InvalidConfigError,
    LabelOutOfRangeError,
    LagunaError,
    MissingSourceLabelsError,
    NoLabelsForSplitError,
    RatioOutOfRangeError,
    ShapeMismatchError,
    TruncatedFileError,
)

MAGIC = b"LGEMB1\n"
_HEADER = struct.Struct("<II")

#: formatting contract for all CSV exports: 9 significant digits
FLOAT_FORMAT = "%.9g"


def write_embeddings(path, matrix) -> None:
    """Store a matrix as magic + u32 count + u32 dim + float32 LE rows."""
    m = as_matrix(matrix)
    rows, cols = m.shape
    if rows < 1 or cols < 1:
        raise DimMismatchError(f"refusing to write empty matrix {m.shape}")
    if np.any(np.abs(m) > np.finfo(np.float32).max):
        raise ShapeMismatchError("values exceed 32-bit float range")
    narrow = m.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(rows, cols))
        fh.write(np.ascontiguousarray(narrow).tobytes())


def read_embeddings(path) -> np.ndarray:
    """Load a matrix written by write_embeddings, widened to float64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC):
        raise TruncatedFileError(f"{path}: shorter than the magic header")
    if blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not an embedding file")
    if len(blob) < len(MAGIC) + _HEADER.size:
        raise TruncatedFileError(f"{path}: header cut short")
    rows, cols = _HEADER.unpack_from(blob, len(MAGIC))
    if rows < 1 or cols < 1:
        raise DimMismatchError(f"{path}: degenerate header count={rows} dim={cols}")
    payload = blob[len(MAGIC) + _HEADER.size:]
    expected = rows * cols * 4
    if len(payload) != expected:
        raise TruncatedFileError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    return as_matrix(flat.reshape(rows, cols).astype(np.float64))


def write_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "label_id"])
        for i, y in enumerate(labels):
            writer.writerow([i, int(y)])


def read_labels(path) -> np.ndarray:
    """Read an `index,label_id` CSV; indices must cover 0..n-1 exactly."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TruncatedFileError(f"{path}: empty label file") from None
        if [h.strip() for h in header] != ["index", "label_id"]:
            raise LagunaError(f"{path}: expected header 'index,label_id', got {header}")
        pairs = [(int(row[0]), int(row[1])) for row in reader if row]
    if not pairs:
        raise TruncatedFileError(f"{path}: no label rows")
    n = len(pairs)
    out = np.full(n, -1, dtype=np.int64)
    for idx, label in pairs:
        if not (0 <= idx < n) or out[idx] != -1:
            raise LagunaError(f"{path}: indices must cover 0..{n - 1} exactly once")
        out[idx] = label
    return out


@dataclass(frozen=True)
class Sample:
    """Training-visible view of one data point (target labels hidden)."""
    index: int
    domain: str
    feature: np.ndarray
    caption_embedding: np.ndarray
    label: int | None


@dataclass
class DomainSplit:
    """All arrays for one domain, plus label access control."""

    features: np.ndarray
    captions: np.ndarray
    labels: np.ndarray | None = None
    eval_only: bool = False
    indices: np.ndarray | None = None
    eval_label_reads: int = field(default=0, compare=False)

    def __post_init__(self):
        self.features = as_matrix(self.features)
        self.captions = as_matrix(self.captions)
        if self.features.shape[0] != self.captions.shape[0]:
            raise DimMismatchError(
                f"{self.features.shape[0]} features vs {self.captions.shape[0]} captions"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
            if self.labels.shape[0] != self.features.shape[0]:
                raise DimMismatchError(
                    f"{self.labels.shape[0]} labels vs {self.features.shape[0]} samples"
                )
        if self.indices is None:
            self.indices = np.arange(self.features.shape[0], dtype=np.int64)
        else:
            self.indices = np.asarray(self.indices, dtype=np.int64).ravel()

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def caption_dim(self) -> int:
        return self.captions.shape[1]

    def training_labels(self) -> np.ndarray | None:
        """Labels usable during training; None when they are eval-only."""
        if self.labels is None or self.eval_only:
            return None
        return self.labels

    def eval_labels(self) -> np.ndarray:
        """Labels for scoring only; every call is counted."""
        if self.labels is None:
            raise NoLabelsForSplitError("split carries no labels")
        self.eval_label_reads += 1
        return self.labels


@dataclass
class Dataset:
    class_names: tuple
    anchors: np.ndarray
    source: DomainSplit
    target: DomainSplit

    def __post_init__(self):
        self.class_names = tuple(str(c) for c in self.class_names)
        self.anchors = as_matrix(self.anchors)
        if len(self.class_names) < 2:
            raise ClassCountMismatchError("need at least 2 classes")
        if self.anchors.shape[0] != len(self.class_names):
            raise ClassCountMismatchError(
                f"{self.anchors.shape[0]} anchor rows for {len(self.class_names)} classes"
            )
        if self.source.feature_dim != self.target.feature_dim:
            raise DimMismatchError("source/target feature dims differ")
        if self.source.caption_dim != self.target.caption_dim:
            raise DimMismatchError("source/target caption dims differ")
        for split, name in ((self.source, "source"), (self.target, "target")):
            if split.labels is not None:
                bad = (split.labels < 0) | (split.labels >= self.n_classes)
                if np.any(bad):
                    raise LabelOutOfRangeError(f"{name} labels outside [0, {self.n_classes})")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def anchor_dim(self) -> int:
        return self.anchors.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.source.feature_dim

    @property
    def caption_dim(self) -> int:
        return self.source.caption_dim

    @property
    def merged_size(self) -> int:
        return self.source.n + self.target.n

    def samples(self):
        """Yield training-visible samples, source first then target."""
        src_labels = self.source.training_labels()
        for row in range(self.source.n):
            yield Sample(int(self.source.indices[row]), "source",
                         self.source.features[row], self.source.captions[row],
                         int(src_labels[row]))
        for row in range(self.target.n):
            yield Sample(int(self.target.indices[row]), "target",
                         self.target.features[row], self.target.captions[row],
                         None)


def _resolve(base: Path, rel) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def load_manifest(path) -> Dataset:
    """Parse and fully validate a dataset manifest."""
    path = Path(path)
    if not path.exists():
        raise DanglingReferenceError(f"manifest not found: {path}")
    base = path.parent
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}: not valid JSON ({exc})") from exc

    for key in ("classes", "anchors", "domains"):
        if key not in doc:
            raise InvalidConfigError(f"{path}: manifest missing '{key}'")
    domains = doc["domains"]
    for dom in ("source", "target"):
        if dom not in domains:
            raise InvalidConfigError(f"{path}: manifest missing domains.{dom}")
        for key in ("features", "captions"):
            if key not in domains[dom]:
                raise InvalidConfigError(f"{path}: manifest missing domains.{dom}.{key}")
    if "labels" not in domains["source"]:
        raise MissingSourceLabelsError("manifest declares no source label file")

    class_names = tuple(str(c) for c in doc["classes"])

    def load_matrix(rel, description):
        p = _resolve(base, rel)
        if not p.exists():
            raise DanglingReferenceError(f"{description} missing: {p}")
        return read_embeddings(p)

    anchors = load_matrix(doc["anchors"], "anchor file")

    def load_split(dom, labels_required):
        entry = domains[dom]
        features = load_matrix(entry["features"], f"{dom} feature file")
        captions = load_matrix(entry["captions"], f"{dom} caption file")
        labels = None
        if "labels" in entry:
            p = _resolve(base, entry["labels"])
            if not p.exists():
                if labels_required:
                    raise MissingSourceLabelsError(f"source label file missing: {p}")
                raise DanglingReferenceError(f"{dom} label file missing: {p}")
            labels = read_labels(p)
        return DomainSplit(features, captions, labels, eval_only=(dom == "target"))

    source = load_split("source", labels_required=True)
    target = load_split("target", labels_required=False)
    if source.labels is None:
        raise MissingSourceLabelsError("source split has no labels")
    return Dataset(class_names, anchors, source, target)


def subsample_target(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    """Deterministic, per-class-proportional cut of the target split.

    Samples are ordered by a fixed priority (seeded shuffle within class,
    classes interleaved by fractional progress) and a prefix of length
    round(ratio * N_t) is kept, so a higher ratio always selects a superset
    of a lower one under the same seed.  Source data is untouched; ratio 1.0
    returns the dataset as-is.
    """
    ratio = float(ratio)
    if not (0.0 < ratio <= 1.0):
        raise RatioOutOfRangeError(f"ratio must lie in (0, 1], got {ratio}")
    if ratio == 1.0:
        return dataset

    target = dataset.target
    n_t = target.n
    # Stratification uses eval-only labels when the manifest ships them
    # (harness datasets do); unlabeled targets fall back to one stratum.
    strata_labels = target.labels if target.labels is not None else np.zeros(n_t, dtype=np.int64)
    rng = np.random.default_rng(seed)
    order = []  # (priority, class_rank, within_class_rank, row)
    for rank, cls in enumerate(np.unique(strata_labels)):
        rows = np.flatnonzero(strata_labels == cls)
        perm = rng.permutation(rows)
        size = len(perm)
        for j, row in enumerate(perm):
            order.append(((j + 1) / size, rank, j, int(row)))
    order.sort()
    keep_n = max(1, int(np.floor(ratio * n_t + 0.5)))
    keep = sorted(entry[3] for entry in order[:keep_n])
    keep = np.asarray(keep, dtype=np.int64)

    new_target = DomainSplit(
        target.features[keep],
        target.captions[keep],
        None if target.labels is None else target.labels[keep],
        eval_only=target.eval_only,
        indices=target.indices[keep],
    )
    return Dataset(dataset.class_names, dataset.anchors, dataset.source, new_target)
