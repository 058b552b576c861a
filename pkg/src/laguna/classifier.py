"""Cross-domain visual classifier over precomputed feature embeddings.

One shared encoder/attention/head parameter set serves both domains; each
domain additionally owns a learnable anchor set.  Training minimizes
weighted cross-entropy (labels on source, pseudo-labels on target) plus a
structure term matching relative encodings to reference geometry and a
volume term keeping the learnable anchors' Gram log-determinant near the
reference's.  Every piece is switchable so baselines from the ablation
ladder drop out of the same code path.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import autodiff
from .autodiff import Node
from .data import Dataset, FLOAT_FORMAT, read_embeddings, subsample_target, write_embeddings
from .encoding import (
    AnchorSet,
    NORM_FLOOR,
    gram_logdet,
    init_learnable_anchors,
    reference_affinities,
    rel_rows,
)
from .errors import (
    DimMismatchError,
    InvalidConfigError,
    LagunaError,
    MissingPseudoLabelsError,
    MissingSourceLabelsError,
    NoLabelsForSplitError,
    ZeroVectorError,
)
from .losses import (
    GramTriple,
    LossWeights,
    absolute_alignment_loss,
    classifier_objective,
    cross_entropy,
    structure_loss,
    volume_regularizer,
)
from .optim import AdamW
from .supervisor import PseudoLabelTable

CHECKPOINT_NAME = "classifier.json"

#: ablation ladder: each preset fixes the five architecture switches
PRESETS = {
    "s1": dict(use_reference_anchors=False, absolute_alignment=False,
               anchors_shared=False, use_attention=False, use_regularizer=False),
    "s2": dict(use_reference_anchors=True, absolute_alignment=True,
               anchors_shared=False, use_attention=False, use_regularizer=False),
    "s3": dict(use_reference_anchors=True, absolute_alignment=False,
               anchors_shared=True, use_attention=False, use_regularizer=False),
    "s4": dict(use_reference_anchors=True, absolute_alignment=False,
               anchors_shared=False, use_attention=False, use_regularizer=False),
    "s5": dict(use_reference_anchors=True, absolute_alignment=False,
               anchors_shared=False, use_attention=True, use_regularizer=False),
    "full": dict(use_reference_anchors=True, absolute_alignment=False,
                 anchors_shared=False, use_attention=True, use_regularizer=True),
}

PRESET_ORDER = ("s1", "s2", "s3", "s4", "s5", "full")


def preset_switches(name: str) -> dict:
    if name not in PRESETS:
        raise InvalidConfigError(f"unknown preset {name!r}; choose from {PRESET_ORDER}")
    return dict(PRESETS[name])


@dataclass(frozen=True)
class TrainConfig:
    """Bundle of everything a classifier training run depends on."""

    weights: LossWeights = field(default_factory=LossWeights)
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 0.0
    anchor_weight_decay: float | None = None
    seed: int = 0
    target_structure_mode: str = "caption"
    use_reference_anchors: bool = True
    anchors_shared_across_domains: bool = False
    absolute_alignment_mode: bool = False
    use_cd_attention: bool = True
    use_reg: bool = True
    target_ratio: float = 1.0
    latent_dim: int = 16
    encoder_hidden: int | None = None
    head_hidden: int | None = None
    n_heads: int = 1
    lr_schedule: str = "cosine"

    def with_preset(self, name: str) -> "TrainConfig":
        sw = preset_switches(name)
        return dataclasses.replace(
            self,
            use_reference_anchors=sw["use_reference_anchors"],
            absolute_alignment_mode=sw["absolute_alignment"],
            anchors_shared_across_domains=sw["anchors_shared"],
            use_cd_attention=sw["use_attention"],
            use_reg=sw["use_regularizer"],
        )

    def estimator_kwargs(self, reference_anchors) -> dict:
        return dict(
            reference_anchors=reference_anchors,
            latent_dim=self.latent_dim,
            encoder_hidden=self.encoder_hidden,
            head_hidden=self.head_hidden,
            n_heads=self.n_heads,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            anchor_weight_decay=self.anchor_weight_decay,
            lambda_classification=self.weights.classification,
            lambda_structure=self.weights.structure,
            lambda_volume=self.weights.volume,
            target_structure=self.target_structure_mode,
            use_reference_anchors=self.use_reference_anchors,
            anchors_shared=self.anchors_shared_across_domains,
            absolute_alignment=self.absolute_alignment_mode,
            use_attention=self.use_cd_attention,
            use_regularizer=self.use_reg,
            lr_schedule=self.lr_schedule,
            random_state=self.seed,
        )


def cross_domain_attend(queries: Node, keys: Node, values: Node,
                        wq: Node, wk: Node, wv: Node, n_heads: int = 1) -> Node:
    """Scaled dot-product attention over anchors, residual included.

    Queries are latent representations; keys come from the query domain's
    anchors and values always from the source anchors, so the output mixes
    domain-specific relations with source-grounded content.
    """
    dim = queries.value.shape[1]
    for name, node in (("keys", keys), ("values", values),
                       ("wq", wq), ("wk", wk), ("wv", wv)):
        if node.value.shape[1] != dim or (name.startswith("w") and node.value.shape[0] != dim):
            raise DimMismatchError(f"{name} shape {node.value.shape} incompatible with dim {dim}")
    if n_heads < 1 or dim % n_heads != 0:
        raise InvalidConfigError(f"{n_heads} heads do not divide dim {dim}")
    d_head = dim // n_heads
    q = autodiff.matmul(queries, wq)
    k = autodiff.matmul(keys, wk)
    v = autodiff.matmul(values, wv)
    outputs = []
    for h in range(n_heads):
        lo, hi = h * d_head, (h + 1) * d_head
        qh = autodiff.slice_cols(q, lo, hi)
        kh = autodiff.slice_cols(k, lo, hi)
        vh = autodiff.slice_cols(v, lo, hi)
        scores = autodiff.scale(autodiff.matmul(qh, autodiff.transpose(kh)),
                                1.0 / math.sqrt(d_head))
        attn = autodiff.softmax_rows(scores)
        outputs.append(autodiff.matmul(attn, vh))
    mixed = outputs[0] if n_heads == 1 else autodiff.concat_cols(outputs)
    return autodiff.add(mixed, queries)


class CrossDomainClassifier(ClassifierMixin, BaseEstimator):
    """Two-branch classifier with shared weights and per-domain anchors."""

    def __init__(self, reference_anchors=None, latent_dim=16, encoder_hidden=None,
                 head_hidden=None, n_heads=1, epochs=10, batch_size=32,
                 learning_rate=1e-4, weight_decay=0.0, anchor_weight_decay=None,
                 lambda_classification=1.0, lambda_structure=0.1,
                 lambda_volume=0.001, target_structure="caption",
                 use_reference_anchors=True, anchors_shared=False,
                 absolute_alignment=False, use_attention=True,
                 use_regularizer=True, lr_schedule="cosine", random_state=0):
        self.reference_anchors = reference_anchors
        self.latent_dim = latent_dim
        self.encoder_hidden = encoder_hidden
        self.head_hidden = head_hidden
        self.n_heads = n_heads
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.anchor_weight_decay = anchor_weight_decay
        self.lambda_classification = lambda_classification
        self.lambda_structure = lambda_structure
        self.lambda_volume = lambda_volume
        self.target_structure = target_structure
        self.use_reference_anchors = use_reference_anchors
        self.anchors_shared = anchors_shared
        self.absolute_alignment = absolute_alignment
        self.use_attention = use_attention
        self.use_regularizer = use_regularizer
        self.lr_schedule = lr_schedule
        self.random_state = random_state

    # -- configuration ----------------------------------------------------

    @property
    def _has_learnable_anchors(self) -> bool:
        return bool(self.use_reference_anchors and not self.absolute_alignment)

    def _reference_matrix(self) -> np.ndarray | None:
        if self.reference_anchors is None:
            return None
        if isinstance(self.reference_anchors, AnchorSet):
            return self.reference_anchors.vectors
        return autodiff.as_matrix(self.reference_anchors)

    def _validate_config(self, n_classes: int):
        ref = self._reference_matrix()
        if self.use_reference_anchors and ref is None:
            raise InvalidConfigError("reference anchors required but not given")
        if self.absolute_alignment and not self.use_reference_anchors:
            raise InvalidConfigError("absolute alignment needs reference anchors")
        if self.absolute_alignment and ref is not None and ref.shape[1] != self.latent_dim:
            raise InvalidConfigError(
                f"absolute alignment needs latent_dim == reference dim "
                f"({self.latent_dim} != {ref.shape[1]})"
            )
        for flag, name in ((self.use_attention, "cross-domain attention"),
                           (self.use_regularizer, "the volume regularizer"),
                           (self.anchors_shared, "shared anchors")):
            if flag and not self._has_learnable_anchors:
                raise InvalidConfigError(f"{name} requires learnable anchors")
        if self.target_structure not in ("caption", "pseudo_anchor"):
            raise InvalidConfigError(f"unknown target_structure {self.target_structure!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise InvalidConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.n_heads < 1 or self.latent_dim % self.n_heads != 0:
            raise InvalidConfigError(
                f"{self.n_heads} heads do not divide latent dim {self.latent_dim}"
            )
        if ref is not None and ref.shape[0] != n_classes:
            raise DimMismatchError(
                f"{ref.shape[0]} reference anchors for {n_classes} classes"
            )

    def _hidden_dims(self, n_classes: int):
        enc = self.encoder_hidden or max(2 * self.latent_dim, 2 * n_classes)
        head = self.head_hidden or max(self.latent_dim, 2 * n_classes)
        return int(enc), int(head)

    # -- parameter construction and graph building ------------------------

    def _init_params(self, feature_dim: int, n_classes: int, rng) -> dict:
        """Fresh parameter nodes; draw order is fixed for reproducibility."""
        enc_hidden, head_hidden = self._hidden_dims(n_classes)
        d = self.latent_dim

        def affine(fan_in, fan_out):
            w = Node(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
            b = Node(np.zeros((1, fan_out)))
            return w, b

        params = {}
        params["enc_w1"], params["enc_b1"] = affine(feature_dim, enc_hidden)
        params["enc_w2"], params["enc_b2"] = affine(enc_hidden, d)
        params["head_w1"], params["head_b1"] = affine(d, head_hidden)
        params["head_w2"], params["head_b2"] = affine(head_hidden, n_classes)
        if self.use_attention:
            for name in ("attn_wq", "attn_wk", "attn_wv"):
                params[name] = Node(rng.standard_normal((d, d)) / np.sqrt(d))
        if self._has_learnable_anchors:
            # both domains start from one volume-matched draw: identical
            # frames at init keep their relative encodings comparable, and
            # per-domain adaptation comes from training alone
            reference = AnchorSet(self._reference_matrix())
            anchor_seed = int(rng.integers(2**31))
            src = init_learnable_anchors(n_classes, d, reference, anchor_seed, role="source")
            params["anchors_source"] = Node(src.vectors.copy())
            if self.anchors_shared:
                params["anchors_target"] = params["anchors_source"]
            else:
                tgt = init_learnable_anchors(n_classes, d, reference, anchor_seed, role="target")
                params["anchors_target"] = Node(tgt.vectors.copy())
        return params

    def _encode(self, params: dict, xb: Node) -> Node:
        hid = autodiff.tanh(autodiff.add_rowvec(
            autodiff.matmul(xb, params["enc_w1"]), params["enc_b1"]))
        return autodiff.add_rowvec(autodiff.matmul(hid, params["enc_w2"]), params["enc_b2"])

    def _head(self, params: dict, f: Node) -> Node:
        hid = autodiff.tanh(autodiff.add_rowvec(
            autodiff.matmul(f, params["head_w1"]), params["head_b1"]))
        return autodiff.add_rowvec(autodiff.matmul(hid, params["head_w2"]), params["head_b2"])

    def _branch(self, params: dict, x: np.ndarray, y: np.ndarray,
                struct_target: np.ndarray | None, domain: str):
        """Forward one domain's slice of a batch; returns (ce, ls) nodes."""
        xb = Node(x)
        g = self._encode(params, xb)
        ls = None
        if struct_target is not None:
            if self.absolute_alignment:
                ls = absolute_alignment_loss(g, struct_target)
            else:
                own = params["anchors_target"] if domain == "target" else params["anchors_source"]
                r_g = autodiff.cosine_rows(g, own)
                ls = structure_loss(r_g, struct_target)
        f = g
        if self.use_attention:
            keys = params["anchors_target"] if domain == "target" else params["anchors_source"]
            f = cross_domain_attend(g, keys, params["anchors_source"],
                                    params["attn_wq"], params["attn_wk"],
                                    params["attn_wv"], self.n_heads)
        logits = self._head(params, f)
        ce = cross_entropy(logits, y)
        return ce, ls

    def _batch_objective(self, params: dict, x: np.ndarray, y: np.ndarray,
                         is_target: np.ndarray, struct_targets: np.ndarray | None,
                         weights: LossWeights):
        """Full objective for one merged batch; also returns raw terms."""
        n = x.shape[0]
        src = np.flatnonzero(~is_target)
        tgt = np.flatnonzero(is_target)
        ce_parts, ls_parts = [], []
        for rows, domain in ((src, "source"), (tgt, "target")):
            if rows.size == 0:
                continue
            st = struct_targets[rows] if struct_targets is not None else None
            ce, ls = self._branch(params, x[rows], y[rows], st, domain)
            frac = rows.size / n
            ce_parts.append(autodiff.scale(ce, frac))
            if ls is not None:
                ls_parts.append(autodiff.scale(ls, frac))

        def combine(parts):
            if not parts:
                return None
            total = parts[0]
            for p in parts[1:]:
                total = autodiff.add(total, p)
            return total

        ce_term = combine(ce_parts)
        ls_term = combine(ls_parts)
        reg_term = None
        if self.use_regularizer:
            grams = GramTriple.from_anchors(self._reference_matrix(),
                                            params["anchors_source"],
                                            params["anchors_target"])
            reg_term = volume_regularizer(grams)
        total = classifier_objective(ce_term, ls_term, reg_term, weights)
        return total, ce_term, ls_term, reg_term

    # -- training ---------------------------------------------------------

    def _structure_targets(self, y_source: np.ndarray, tgt_labels: np.ndarray,
                           tgt_enc: np.ndarray | None):
        """Constant per-sample targets for the structure term, or None."""
        if not self.use_reference_anchors:
            return None
        ref = self._reference_matrix()
        if self.absolute_alignment:
            src_rows = ref[y_source]
            tgt_rows = ref[tgt_labels] if tgt_labels.size else np.zeros((0, ref.shape[1]))
        else:
            ref_aff = reference_affinities(ref)
            src_rows = ref_aff[y_source]
            if tgt_labels.size == 0:
                tgt_rows = np.zeros((0, ref_aff.shape[1]))
            elif self.target_structure == "caption":
                tgt_rows = rel_rows(tgt_enc, ref)
            else:
                tgt_rows = ref_aff[tgt_labels]
        return np.concatenate([src_rows, tgt_rows], axis=0)

    def _gather_pseudo(self, dataset: Dataset, pseudo: PseudoLabelTable | None):
        if dataset.target.n == 0:
            return np.zeros(0, dtype=np.int64), np.zeros((0, 1))
        if pseudo is None:
            raise MissingPseudoLabelsError("target samples present but no pseudo-label table")
        lookup = {int(idx): row for row, idx in enumerate(pseudo.indices)}
        rows = []
        for idx in dataset.target.indices:
            if int(idx) not in lookup:
                raise MissingPseudoLabelsError(f"no pseudo-label for target sample {int(idx)}")
            rows.append(lookup[int(idx)])
        rows = np.asarray(rows, dtype=np.int64)
        return pseudo.labels[rows], pseudo.encodings[rows]

    def fit(self, dataset: Dataset, pseudo_labels: PseudoLabelTable | None = None):
        n_classes = dataset.n_classes
        self._validate_config(n_classes)
        y_source = dataset.source.training_labels()
        if y_source is None:
            raise MissingSourceLabelsError("source split has no training labels")
        tgt_labels, tgt_enc = self._gather_pseudo(dataset, pseudo_labels)
        weights = LossWeights(self.lambda_classification, self.lambda_structure,
                              self.lambda_volume)

        x = np.concatenate([dataset.source.features, dataset.target.features], axis=0)
        y = np.concatenate([y_source, tgt_labels])
        is_target = np.concatenate([
            np.zeros(dataset.source.n, dtype=bool),
            np.ones(dataset.target.n, dtype=bool),
        ])
        struct_targets = self._structure_targets(y_source, tgt_labels, tgt_enc)

        rng = np.random.default_rng(self.random_state)
        params = self._init_params(dataset.feature_dim, n_classes, rng)
        anchor_names = {"anchors_source", "anchors_target"}
        unique_params, seen, anchor_params = [], set(), []
        for name, node in params.items():
            if id(node) in seen:
                continue
            seen.add(id(node))
            (anchor_params if name in anchor_names else unique_params).append(node)

        m = x.shape[0]
        batch = max(1, int(self.batch_size))
        n_batches = (m + batch - 1) // batch
        total_steps = int(self.epochs) * n_batches
        schedule = total_steps if (self.lr_schedule == "cosine" and total_steps > 0) else None

        optimizers = []
        awd = self.weight_decay if self.anchor_weight_decay is None else self.anchor_weight_decay
        if anchor_params and awd != self.weight_decay:
            optimizers.append(AdamW(unique_params, lr=self.learning_rate,
                                    weight_decay=self.weight_decay, total_steps=schedule))
            optimizers.append(AdamW(anchor_params, lr=self.learning_rate,
                                    weight_decay=awd, total_steps=schedule))
        else:
            optimizers.append(AdamW(unique_params + anchor_params, lr=self.learning_rate,
                                    weight_decay=self.weight_decay, total_steps=schedule))

        ref = self._reference_matrix()
        ref_logdet = gram_logdet(ref @ ref.T) if ref is not None else None

        loss_log, volume_log, epoch_curve = [], [], []
        structure_gap = []

        def log_volumes(step):
            if self._has_learnable_anchors:
                volume_log.append((
                    step,
                    gram_logdet(params["anchors_source"].value @ params["anchors_source"].value.T),
                    gram_logdet(params["anchors_target"].value @ params["anchors_target"].value.T),
                ))

        def target_gap():
            if struct_targets is None or self.absolute_alignment or dataset.target.n == 0:
                return None
            g = self._encode(params, Node(x[is_target])).value
            r = autodiff.cosine_rows(Node(g), params["anchors_target"]).value
            return float(np.mean(np.abs(r - struct_targets[is_target])))

        log_volumes(0)
        gap = target_gap()
        if gap is not None:
            structure_gap.append(gap)

        step = 0
        for _ in range(int(self.epochs)):
            perm = rng.permutation(m)
            epoch_loss = 0.0
            for start in range(0, m, batch):
                rows = perm[start:start + batch]
                total, ce_t, ls_t, reg_t = self._batch_objective(
                    params, x[rows], y[rows], is_target[rows],
                    None if struct_targets is None else struct_targets[rows],
                    weights)
                autodiff.backward(total)
                for opt in optimizers:
                    opt.step()
                step += 1
                if self._has_learnable_anchors:
                    for node in anchor_params:
                        if np.any(np.linalg.norm(node.value, axis=1) < NORM_FLOOR):
                            raise ZeroVectorError("learnable anchor row collapsed to zero norm")
                log_volumes(step)
                value = float(total.value[0, 0])
                loss_log.append((
                    step,
                    float(ce_t.value[0, 0]) if ce_t is not None else 0.0,
                    float(ls_t.value[0, 0]) if ls_t is not None else 0.0,
                    float(reg_t.value[0, 0]) if reg_t is not None else 0.0,
                    value,
                ))
                epoch_loss += value * len(rows)
            epoch_curve.append(epoch_loss / m)
            gap = target_gap()
            if gap is not None:
                structure_gap.append(gap)

        self.params_ = {name: node.value.copy() for name, node in params.items()}
        if self.anchors_shared and "anchors_source" in params:
            # keep the aliasing visible after training
            self.params_["anchors_target"] = self.params_["anchors_source"]
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = dataset.feature_dim
        self.n_classes_ = n_classes
        self.reference_anchors_ = None if ref is None else ref.copy()
        self.ref_logdet_ = ref_logdet
        self.loss_log_ = loss_log
        self.volume_log_ = volume_log
        self.epoch_loss_curve_ = epoch_curve
        self.structure_gap_log_ = structure_gap
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise InvalidConfigError("classifier is not fitted")

    # -- inference --------------------------------------------------------

    def _param_nodes(self) -> dict:
        nodes = {}
        for name, arr in self.params_.items():
            if name == "anchors_target" and self.anchors_shared:
                nodes[name] = nodes["anchors_source"]
            else:
                nodes[name] = Node(arr)
        return nodes

    def forward(self, X, domain: str = "target"):
        """Latent, attended, and logit arrays for a batch of features."""
        self._check_fitted()
        if domain not in ("source", "target"):
            raise InvalidConfigError(f"unknown domain {domain!r}")
        params = self._param_nodes()
        x = autodiff.as_matrix(X)
        if x.shape[1] != self.n_features_in_:
            raise DimMismatchError(
                f"feature dim {x.shape[1]}, trained on {self.n_features_in_}"
            )
        g = self._encode(params, Node(x))
        f = g
        if self.use_attention:
            keys = params["anchors_target"] if domain == "target" else params["anchors_source"]
            f = cross_domain_attend(g, keys, params["anchors_source"],
                                    params["attn_wq"], params["attn_wk"],
                                    params["attn_wv"], self.n_heads)
        logits = self._head(params, f)
        return g.value, f.value, logits.value

    def decision_function(self, X, domain: str = "target") -> np.ndarray:
        return self.forward(X, domain)[2]

    def predict(self, X, domain: str = "target") -> np.ndarray:
        return np.argmax(self.decision_function(X, domain), axis=1)

    def relative_encodings(self, X, domain: str = "target") -> np.ndarray:
        """r_g of each sample against its own domain's anchor set."""
        self._check_fitted()
        g = self.forward(X, domain)[0]
        key = "anchors_target" if domain == "target" else "anchors_source"
        if key in self.params_:
            anchors = self.params_[key]
        elif self.reference_anchors_ is not None and \
                self.reference_anchors_.shape[1] == g.shape[1]:
            anchors = self.reference_anchors_
        else:
            raise InvalidConfigError("no anchor set available for relative encodings")
        return autodiff.cosine_rows(Node(g), Node(anchors)).value


# -- dataset-level operations ----------------------------------------------

def train_classifier(dataset: Dataset, pseudo_labels: PseudoLabelTable | None,
                     config: TrainConfig) -> CrossDomainClassifier:
    """Run a full training pass described by a TrainConfig."""
    if config.target_ratio != 1.0:
        dataset = subsample_target(dataset, config.target_ratio, config.seed)
    model = CrossDomainClassifier(**config.estimator_kwargs(dataset.anchors))
    return model.fit(dataset, pseudo_labels)


def evaluate(model: CrossDomainClassifier, dataset: Dataset,
             split: str = "target") -> dict:
    """Accuracy, unweighted mean per-class recall, and the per-class vector."""
    if split == "target":
        part = dataset.target
        labels = part.eval_labels()
    elif split == "source":
        part = dataset.source
        labels = part.labels
        if labels is None:
            raise NoLabelsForSplitError("source split has no labels")
    else:
        raise InvalidConfigError(f"unknown split {split!r}")
    predicted = model.predict(part.features, domain=split)
    accuracy = float(np.mean(predicted == labels))
    per_class = []
    recalls = []
    for c in range(dataset.n_classes):
        mask = labels == c
        if mask.any():
            recall = float(np.mean(predicted[mask] == c))
            per_class.append(recall)
            recalls.append(recall)
        else:
            per_class.append(None)
    return {
        "accuracy": accuracy,
        "mean_per_class_accuracy": float(np.mean(recalls)) if recalls else 0.0,
        "per_class": per_class,
    }


def export_embeddings(model: CrossDomainClassifier, dataset: Dataset, out_path,
                      pseudo_labels: PseudoLabelTable | None = None) -> None:
    """CSV of latent and relative coordinates for every sample.

    Label column holds the training-visible class: ground truth for source
    rows, the pseudo-label for target rows (eval labels as fallback, -1 if
    nothing is known).
    """
    rows = _export_rows(model, dataset, pseudo_labels)
    n_g = model.latent_dim
    n_r = dataset.n_classes
    header = (["index", "domain", "label"]
              + [f"g{i}" for i in range(n_g)]
              + [f"r{i}" for i in range(n_r)])
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for index, domain, label, g, r in rows:
            writer.writerow([index, domain, label]
                            + [FLOAT_FORMAT % v for v in g]
                            + [FLOAT_FORMAT % v for v in r])


def _target_export_labels(dataset: Dataset,
                          pseudo_labels: PseudoLabelTable | None) -> np.ndarray:
    if pseudo_labels is not None:
        lookup = {int(i): int(y) for i, y in zip(pseudo_labels.indices, pseudo_labels.labels)}
        return np.array([lookup.get(int(i), -1) for i in dataset.target.indices],
                        dtype=np.int64)
    if dataset.target.labels is not None:
        return dataset.target.eval_labels()
    return np.full(dataset.target.n, -1, dtype=np.int64)


def _export_rows(model, dataset, pseudo_labels):
    y_src = dataset.source.training_labels()
    y_tgt = _target_export_labels(dataset, pseudo_labels)
    out = []
    for split, domain, labels in ((dataset.source, "source", y_src),
                                  (dataset.target, "target", y_tgt)):
        if split.n == 0:
            continue
        g = model.forward(split.features, domain)[0]
        r = model.relative_encodings(split.features, domain)
        for row in range(split.n):
            out.append((int(split.indices[row]), domain, int(labels[row]),
                        g[row], r[row]))
    return out


def cross_domain_separation(model: CrossDomainClassifier, dataset: Dataset,
                            pseudo_labels: PseudoLabelTable | None = None) -> dict:
    """Mean cross-domain class-centroid distance in both coordinate systems.

    Each space (absolute latents, relative encodings) is centered on its
    global mean and scaled by the RMS distance to it, so the two distances
    are comparable.  Class grouping uses training-visible labels.
    """
    y_src = dataset.source.training_labels()
    y_tgt = _target_export_labels(dataset, pseudo_labels)
    g_src = model.forward(dataset.source.features, "source")[0]
    g_tgt = model.forward(dataset.target.features, "target")[0]
    r_src = model.relative_encodings(dataset.source.features, "source")
    r_tgt = model.relative_encodings(dataset.target.features, "target")

    def mean_centroid_distance(a_src, a_tgt):
        stacked = np.concatenate([a_src, a_tgt], axis=0)
        center = stacked.mean(axis=0)
        scale = np.sqrt(np.mean(np.sum((stacked - center) ** 2, axis=1)))
        scale = max(scale, NORM_FLOOR)
        ns, nt = (a_src - center) / scale, (a_tgt - center) / scale
        dists = []
        for c in np.intersect1d(np.unique(y_src), np.unique(y_tgt)):
            if c < 0:
                continue
            mu_s = ns[y_src == c].mean(axis=0)
            mu_t = nt[y_tgt == c].mean(axis=0)
            dists.append(float(np.linalg.norm(mu_s - mu_t)))
        if not dists:
            raise LagunaError("no class present in both domains")
        return float(np.mean(dists))

    return {
        "absolute": mean_centroid_distance(g_src, g_tgt),
        "relative": mean_centroid_distance(r_src, r_tgt),
    }


# -- persistence -----------------------------------------------------------

def save_classifier(model: CrossDomainClassifier, out_dir) -> None:
    model._check_fitted()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stored = []
    for name, arr in model.params_.items():
        if name == "anchors_target" and model.anchors_shared:
            continue
        write_embeddings(out_dir / f"{name}.lgemb", arr)
        stored.append(name)
    if model.reference_anchors_ is not None:
        write_embeddings(out_dir / "reference_anchors.lgemb", model.reference_anchors_)
    with open(out_dir / "loss_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "ce", "ls", "reg", "total"])
        for entry in model.loss_log_:
            writer.writerow([entry[0]] + [FLOAT_FORMAT % v for v in entry[1:]])
    config = {k: v for k, v in model.get_params().items() if k != "reference_anchors"}
    desc = {
        "kind": "cross-domain-classifier",
        "config": config,
        "has_reference_anchors": model.reference_anchors_ is not None,
        "stored_params": sorted(stored),
        "n_classes": int(model.n_classes_),
        "feature_dim": int(model.n_features_in_),
        "ref_logdet": model.ref_logdet_,
        "epoch_loss_curve": [float(v) for v in model.epoch_loss_curve_],
        "volume_log": [[int(s), float(a), float(b)] for s, a, b in model.volume_log_],
        "structure_gap_log": [float(v) for v in model.structure_gap_log_],
    }
    with open(out_dir / CHECKPOINT_NAME, "w") as fh:
        json.dump(desc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_classifier(in_dir) -> CrossDomainClassifier:
    in_dir = Path(in_dir)
    desc_path = in_dir / CHECKPOINT_NAME
    if not desc_path.exists():
        raise LagunaError(f"no classifier checkpoint at {desc_path}")
    desc = json.loads(desc_path.read_text())
    config = dict(desc["config"])
    reference = None
    if desc["has_reference_anchors"]:
        reference = read_embeddings(in_dir / "reference_anchors.lgemb")
    model = CrossDomainClassifier(reference_anchors=reference, **config)
    model.params_ = {name: read_embeddings(in_dir / f"{name}.lgemb")
                     for name in desc["stored_params"]}
    if model.anchors_shared and "anchors_source" in model.params_:
        model.params_["anchors_target"] = model.params_["anchors_source"]
    model.classes_ = np.arange(desc["n_classes"])
    model.n_classes_ = desc["n_classes"]
    model.n_features_in_ = desc["feature_dim"]
    model.reference_anchors_ = reference
    model.ref_logdet_ = desc["ref_logdet"]
    model.epoch_loss_curve_ = list(desc["epoch_loss_curve"])
    model.volume_log_ = [tuple(entry) for entry in desc["volume_log"]]
    model.structure_gap_log_ = list(desc["structure_gap_log"])
    with open(in_dir / "loss_log.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        model.loss_log_ = [
            (int(row[0]),) + tuple(float(v) for v in row[1:]) for row in reader
        ]
    return model
