"""Training objectives shared by the pseudo-labeling and classifier stages.

All losses return 1x1 graph nodes so they compose under the weighted sums
used in training.  Structure targets are always treated as constants: the
models being trained move toward the reference geometry, never the other
way around.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff
from .autodiff import JITTER_LADDER, Node, as_matrix
from .errors import DimMismatchError, InvalidConfigError, LengthMismatchError


@dataclass(frozen=True)
class LossWeights:
    """Weights for the classification / structure / volume terms."""

    classification: float = 1.0
    structure: float = 0.1
    volume: float = 0.001

    def __post_init__(self):
        for name in ("classification", "structure", "volume"):
            if getattr(self, name) < 0.0:
                raise InvalidConfigError(f"loss weight {name} must be >= 0")


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _constant_value(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else as_matrix(x)


def structure_loss(predicted, target) -> Node:
    """Mean absolute difference between two relative encodings.

    Gradient flows only into `predicted`; `target` is re-wrapped as a
    constant even if a graph node is passed.
    """
    pred = _as_node(predicted)
    tgt = _constant_value(target)
    if pred.value.shape[1] != tgt.shape[1]:
        raise LengthMismatchError(
            f"encoding lengths differ: {pred.value.shape[1]} vs {tgt.shape[1]}"
        )
    if pred.value.shape[0] != tgt.shape[0]:
        raise LengthMismatchError(
            f"row counts differ: {pred.value.shape[0]} vs {tgt.shape[0]}"
        )
    return autodiff.mean(autodiff.abs_(autodiff.sub(pred, Node(tgt))))


def cross_entropy(logits, labels) -> Node:
    """Mean negative log-likelihood (stable log-sum-exp form)."""
    return autodiff.cross_entropy(_as_node(logits), labels)


@dataclass(frozen=True)
class GramTriple:
    """Reference Gram (fixed) plus the two learnable-anchor Grams."""

    reference: np.ndarray
    source: object  # Node or matrix
    target: object  # Node or matrix

    @classmethod
    def from_anchors(cls, reference_vectors, source_node: Node, target_node: Node):
        ref = as_matrix(reference_vectors)
        return cls(
            reference=ref @ ref.T,
            source=autodiff.matmul(source_node, autodiff.transpose(source_node)),
            target=autodiff.matmul(target_node, autodiff.transpose(target_node)),
        )


def volume_regularizer(grams: GramTriple, ladder=JITTER_LADDER) -> Node:
    """|logdet(target Gram) - logdet(reference)| + same for the source Gram.

    Differentiable through the learnable Grams; the reference log-det is a
    constant.
    """
    ref_logdet = float(
        autodiff.cholesky_logdet_ladder(Node(as_matrix(grams.reference)), ladder).value[0, 0]
    )
    ref_node = Node([[ref_logdet]])

    def gap(gram) -> Node:
        ld = autodiff.cholesky_logdet_ladder(_as_node(gram), ladder)
        return autodiff.abs_(autodiff.sub(ld, ref_node))

    return autodiff.add(gap(grams.target), gap(grams.source))


def supervisor_objective(encodings, labels, anchor_targets,
                         weights: LossWeights, temperature: float = 1.0) -> Node:
    """Pseudo-labeling stage loss: weighted cross-entropy + structure term.

    `encodings` are relative encodings of the projected captions; logits are
    the encodings divided by the softmax temperature.
    """
    enc = _as_node(encodings)
    logits = autodiff.scale(enc, 1.0 / temperature)
    ce = cross_entropy(logits, labels)
    ls = structure_loss(enc, anchor_targets)
    return autodiff.add(
        autodiff.scale(ce, weights.classification),
        autodiff.scale(ls, weights.structure),
    )


def classifier_objective(ce_term, ls_term, reg_term, weights: LossWeights) -> Node:
    """Weighted sum of the classifier-stage terms; absent terms contribute 0."""
    parts = []
    for term, w in ((ce_term, weights.classification),
                    (ls_term, weights.structure),
                    (reg_term, weights.volume)):
        if term is not None:
            parts.append(autodiff.scale(_as_node(term), w))
    if not parts:
        return Node([[0.0]])
    total = parts[0]
    for part in parts[1:]:
        total = autodiff.add(total, part)
    return total


def absolute_alignment_loss(latent, anchor_rows) -> Node:
    """Mean of (1 - cosine) between each latent row and its class anchor.

    The direct-alignment baseline: pull representations onto the reference
    anchors in absolute coordinates instead of matching relative structure.
    """
    g = _as_node(latent)
    a = _constant_value(anchor_rows)
    if g.value.shape[1] != a.shape[1]:
        raise DimMismatchError(
            f"latent dim {g.value.shape[1]} vs anchor dim {a.shape[1]}"
        )
    if g.value.shape[0] != a.shape[0]:
        raise DimMismatchError(
            f"row counts differ: {g.value.shape[0]} vs {a.shape[0]}"
        )
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    a_hat = a / np.maximum(norms, 1e-12)
    paired = autodiff.mul(autodiff.l2_normalize_rows(g), Node(a_hat))
    mean_cos = autodiff.scale(autodiff.sum_(paired), 1.0 / g.value.shape[0])
    return autodiff.sub(Node([[1.0]]), mean_cos)
