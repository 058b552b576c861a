"""Anchor sets and relative encodings.

A relative encoding positions a vector by its cosine similarity to every
class anchor instead of by absolute coordinates.  Fixed reference anchors
define the geometry every later training stage aligns to; learnable anchor
sets start volume-matched to the reference so the spread regularizer reads
zero at initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import autodiff
from .autodiff import Node, as_matrix
from .errors import (
    ClassCountMismatchError,
    DimMismatchError,
    DimTooSmallError,
    InvalidConfigError,
    NonPositiveTemperatureError,
    ZeroVectorError,
)

NORM_FLOOR = 1e-12

_ROLES = ("reference", "source", "target")


@dataclass(frozen=True)
class AnchorSet:
    """One anchor vector per class; rows are read-only once constructed."""

    vectors: np.ndarray
    role: str = "reference"
    learnable: bool = False

    def __post_init__(self):
        arr = as_matrix(self.vectors).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "vectors", arr)
        if self.role not in _ROLES:
            raise InvalidConfigError(f"unknown anchor role {self.role!r}")
        norms = np.linalg.norm(arr, axis=1)
        if np.any(norms < NORM_FLOOR):
            raise ZeroVectorError("anchor row with near-zero norm")

    @property
    def n_classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _anchor_matrix(anchors) -> np.ndarray:
    return anchors.vectors if isinstance(anchors, AnchorSet) else as_matrix(anchors)


def rel_rows(queries, anchors, eps: float = NORM_FLOOR) -> np.ndarray:
    """Relative encodings for a batch: row i = cosines of query i vs all anchors.

    Shares the forward path of the differentiable op so training and
    inference can never disagree.  Zero-norm queries are a hard error here
    (transient near-zero rows inside training graphs use the eps guard
    instead).
    """
    q = as_matrix(queries)
    a = _anchor_matrix(anchors)
    if q.shape[1] != a.shape[1]:
        raise DimMismatchError(f"query dim {q.shape[1]} vs anchor dim {a.shape[1]}")
    if np.any(np.linalg.norm(q, axis=1) < NORM_FLOOR):
        raise ZeroVectorError("query vector with near-zero norm")
    return autodiff.cosine_rows(Node(q), Node(a), eps).value


def rel(v, anchors, eps: float = NORM_FLOOR) -> np.ndarray:
    """Relative encoding of a single vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        v = v.ravel()
    return rel_rows(v.reshape(1, -1), anchors, eps)[0]


def reference_affinities(anchors) -> np.ndarray:
    """Pairwise anchor cosines with an exactly-unit diagonal.

    The result is symmetrized so downstream equality checks don't depend on
    summation order inside the matrix product.
    """
    a = _anchor_matrix(anchors)
    r = rel_rows(a, a)
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    return r


def gram_logdet(m: np.ndarray) -> float:
    """log det of a symmetric PD matrix, with the shared jitter ladder."""
    return float(autodiff.cholesky_logdet_ladder(Node(as_matrix(m))).value[0, 0])


def init_learnable_anchors(n_classes: int, dim: int, reference: AnchorSet,
                           seed: int, role: str = "source") -> AnchorSet:
    """Seeded random anchors rescaled so their Gram log-det matches the reference.

    Scaling every row by c shifts logdet(Gram) by 2*n*log(c), so a single
    closed-form constant exactly cancels the gap left by the raw draw.
    """
    if dim < n_classes:
        raise DimTooSmallError(
            f"dim {dim} < {n_classes} classes makes the Gram matrix singular"
        )
    if n_classes != reference.n_classes:
        raise ClassCountMismatchError(
            f"{n_classes} anchors requested against a {reference.n_classes}-class reference"
        )
    ref_logdet = gram_logdet(reference.vectors @ reference.vectors.T)
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n_classes, dim))
    raw_logdet = gram_logdet(raw @ raw.T)
    c = math.exp((ref_logdet - raw_logdet) / (2.0 * n_classes))
    return AnchorSet(c * raw, role=role, learnable=True)


def classify_by_relative(encoding, temperature: float = 1.0):
    """Class probabilities and argmax label from one relative encoding.

    Ties break to the lowest class index.
    """
    if temperature <= 0.0:
        raise NonPositiveTemperatureError(f"temperature={temperature}")
    r = np.asarray(encoding, dtype=np.float64).ravel()
    z = r / temperature
    z = z - z.max()
    e = np.exp(z)
    probs = e / e.sum()
    return probs, int(np.argmax(probs))


class RelativeEncoder(TransformerMixin, BaseEstimator):
    """sklearn-style transformer turning vectors into relative encodings."""

    def __init__(self, anchors=None, epsilon=NORM_FLOOR):
        self.anchors = anchors
        self.epsilon = epsilon

    def fit(self, X, y=None):
        if self.anchors is None:
            raise InvalidConfigError("RelativeEncoder needs an anchor matrix")
        anchors = _anchor_matrix(self.anchors)
        X = as_matrix(X)
        if X.shape[1] != anchors.shape[1]:
            raise DimMismatchError(
                f"data dim {X.shape[1]} vs anchor dim {anchors.shape[1]}"
            )
        self.anchors_ = anchors.copy()
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "anchors_"):
            raise InvalidConfigError("RelativeEncoder is not fitted")
        return rel_rows(X, self.anchors_, self.epsilon)
