"""Caption-to-reference-space supervisor and target pseudo-labeling.

The supervisor is a small trainable projection (two affine layers with a
tanh between) that maps precomputed caption embeddings into the reference
anchor space.  It is trained on labeled source captions so that the
relative encoding of a projected caption both classifies its sample and
mirrors the anchor geometry; after training it is frozen and used to
pseudo-label the target split and to supply structure-guidance encodings.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import autodiff
from .autodiff import Node
from .data import Dataset, read_embeddings, write_embeddings
from .encoding import (
    AnchorSet,
    NORM_FLOOR,
    classify_by_relative,
    reference_affinities,
    rel_rows,
)
from .errors import (
    DimMismatchError,
    InvalidConfigError,
    LagunaError,
    MissingSourceLabelsError,
    NoLabelsForSplitError,
    ZeroVectorError,
)
from .losses import LossWeights, supervisor_objective
from .optim import AdamW

CHECKPOINT_NAME = "supervisor.json"


@dataclass
class PseudoLabelTable:
    """Per-target-sample pseudo-label, projected encoding, and relative row."""

    indices: np.ndarray
    labels: np.ndarray
    encodings: np.ndarray
    relative: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).ravel()
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        self.encodings = autodiff.as_matrix(self.encodings)
        self.relative = autodiff.as_matrix(self.relative)
        n = self.indices.shape[0]
        if not (self.labels.shape[0] == self.encodings.shape[0]
                == self.relative.shape[0] == n):
            raise DimMismatchError("pseudo-label table fields disagree in length")
        if len(np.unique(self.indices)) != n:
            raise LagunaError("pseudo-label table repeats a sample index")
        order = np.argsort(self.indices)
        self.indices = self.indices[order]
        self.labels = self.labels[order]
        self.encodings = self.encodings[order]
        self.relative = self.relative[order]
        if np.any(self.labels != np.argmax(self.relative, axis=1)):
            raise LagunaError("stored pseudo-labels disagree with relative argmax")

    def __len__(self) -> int:
        return self.indices.shape[0]

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "pseudo_labels.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "pseudo_label"])
            for idx, y in zip(self.indices, self.labels):
                writer.writerow([int(idx), int(y)])
        write_embeddings(out_dir / "pseudo_encodings.lgemb", self.encodings)

    @classmethod
    def load(cls, in_dir, anchors) -> "PseudoLabelTable":
        in_dir = Path(in_dir)
        csv_path = in_dir / "pseudo_labels.csv"
        if not csv_path.exists():
            raise LagunaError(f"no pseudo-label table at {csv_path}")
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["index", "pseudo_label"]:
                raise LagunaError(f"{csv_path}: unexpected header {header}")
            pairs = [(int(row[0]), int(row[1])) for row in reader if row]
        encodings = read_embeddings(in_dir / "pseudo_encodings.lgemb")
        if len(pairs) != encodings.shape[0]:
            raise DimMismatchError("pseudo-label CSV and encoding file lengths differ")
        indices = np.array([p[0] for p in pairs], dtype=np.int64)
        labels = np.array([p[1] for p in pairs], dtype=np.int64)
        relative = rel_rows(encodings, anchors)
        if np.any(labels != np.argmax(relative, axis=1)):
            raise InvalidConfigError(
                "pseudo-label table inconsistent with the given anchors"
            )
        return cls(indices, labels, encodings, relative)


class LanguageSupervisor(ClassifierMixin, BaseEstimator):
    """Projection head over caption embeddings, aligned to reference anchors.

    fit(X, y) trains on source captions; predict/pseudo_label_table then
    classify by softmax over relative encodings in the anchor space.
    """

    def __init__(self, anchors=None, hidden_dim=None, epochs=5, batch_size=64,
                 learning_rate=1e-4, weight_decay=0.0,
                 lambda_classification=1.0, lambda_structure=0.1,
                 temperature=1.0, random_state=0):
        self.anchors = anchors
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.lambda_classification = lambda_classification
        self.lambda_structure = lambda_structure
        self.temperature = temperature
        self.random_state = random_state

    # -- training ---------------------------------------------------------

    def fit(self, X, y):
        if self.anchors is None:
            raise InvalidConfigError("LanguageSupervisor needs reference anchors")
        anchors = self.anchors if isinstance(self.anchors, AnchorSet) else AnchorSet(self.anchors)
        X = autodiff.as_matrix(X)
        y = np.asarray(y, dtype=np.int64).ravel()
        if y.shape[0] != X.shape[0]:
            raise DimMismatchError(f"{y.shape[0]} labels for {X.shape[0]} captions")
        n_classes = anchors.n_classes
        out_dim = anchors.dim
        hidden = self.hidden_dim if self.hidden_dim else max(out_dim, 2 * n_classes)
        weights = LossWeights(self.lambda_classification, self.lambda_structure, 0.0)
        ref_aff = reference_affinities(anchors)

        rng = np.random.default_rng(self.random_state)
        w1 = Node(rng.standard_normal((X.shape[1], hidden)) / np.sqrt(X.shape[1]))
        b1 = Node(np.zeros((1, hidden)))
        w2 = Node(rng.standard_normal((hidden, out_dim)) / np.sqrt(hidden))
        b2 = Node(np.zeros((1, out_dim)))
        params = [w1, b1, w2, b2]
        opt = AdamW(params, lr=self.learning_rate, weight_decay=self.weight_decay)

        anchor_node = Node(anchors.vectors)
        n = X.shape[0]
        batch = max(1, int(self.batch_size))
        curve = []
        for _ in range(int(self.epochs)):
            perm = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, batch):
                rows = perm[start:start + batch]
                xb = Node(X[rows])
                hid = autodiff.tanh(autodiff.add_rowvec(autodiff.matmul(xb, w1), b1))
                z = autodiff.add_rowvec(autodiff.matmul(hid, w2), b2)
                r = autodiff.cosine_rows(z, anchor_node)
                loss = supervisor_objective(r, y[rows], ref_aff[y[rows]],
                                            weights, self.temperature)
                autodiff.backward(loss)
                opt.step()
                epoch_loss += float(loss.value[0, 0]) * len(rows)
            curve.append(epoch_loss / n)

        self.anchors_ = anchors
        self.w1_, self.b1_ = w1.value.copy(), b1.value.copy()
        self.w2_, self.b2_ = w2.value.copy(), b2.value.copy()
        self.hidden_dim_ = hidden
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = X.shape[1]
        self.loss_curve_ = curve
        return self

    def _check_fitted(self):
        if not hasattr(self, "w1_"):
            raise InvalidConfigError("supervisor is not fitted")

    # -- inference --------------------------------------------------------

    def transform(self, X) -> np.ndarray:
        """Project captions into the anchor space; zero outputs are a hard error."""
        self._check_fitted()
        X = autodiff.as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DimMismatchError(
                f"caption dim {X.shape[1]}, trained on {self.n_features_in_}"
            )
        z = np.tanh(X @ self.w1_ + self.b1_) @ self.w2_ + self.b2_
        if np.any(np.linalg.norm(z, axis=1) < NORM_FLOOR):
            raise ZeroVectorError("supervisor emitted a near-zero encoding")
        return z

    def relative_encodings(self, X) -> np.ndarray:
        return rel_rows(self.transform(X), self.anchors_)

    def predict_proba(self, X) -> np.ndarray:
        r = self.relative_encodings(X)
        return np.stack([classify_by_relative(row, self.temperature)[0] for row in r])

    def predict(self, X) -> np.ndarray:
        r = self.relative_encodings(X)
        return np.argmax(r, axis=1)

    def pseudo_label_table(self, X, indices=None) -> PseudoLabelTable:
        z = self.transform(X)
        r = rel_rows(z, self.anchors_)
        labels = np.argmax(r, axis=1)
        if indices is None:
            indices = np.arange(z.shape[0])
        return PseudoLabelTable(indices, labels, z, r)

    # -- persistence ------------------------------------------------------

    def parameter_arrays(self) -> dict:
        self._check_fitted()
        return {"w1": self.w1_, "b1": self.b1_, "w2": self.w2_, "b2": self.b2_}

    def save(self, out_dir) -> None:
        self._check_fitted()
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, arr in self.parameter_arrays().items():
            write_embeddings(out_dir / f"{name}.lgemb", arr)
        write_embeddings(out_dir / "anchors.lgemb", self.anchors_.vectors)
        desc = {
            "kind": "language-supervisor",
            "caption_dim": int(self.n_features_in_),
            "hidden_dim": int(self.hidden_dim_),
            "output_dim": int(self.anchors_.dim),
            "n_classes": int(self.anchors_.n_classes),
            "temperature": float(self.temperature),
            "config": {
                "epochs": int(self.epochs),
                "batch_size": int(self.batch_size),
                "learning_rate": float(self.learning_rate),
                "weight_decay": float(self.weight_decay),
                "lambda_classification": float(self.lambda_classification),
                "lambda_structure": float(self.lambda_structure),
                "random_state": int(self.random_state),
            },
            "loss_curve": [float(v) for v in self.loss_curve_],
        }
        with open(out_dir / CHECKPOINT_NAME, "w") as fh:
            json.dump(desc, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, in_dir) -> "LanguageSupervisor":
        in_dir = Path(in_dir)
        desc_path = in_dir / CHECKPOINT_NAME
        if not desc_path.exists():
            raise LagunaError(f"no supervisor checkpoint at {desc_path}")
        desc = json.loads(desc_path.read_text())
        cfg = desc["config"]
        model = cls(
            anchors=read_embeddings(in_dir / "anchors.lgemb"),
            hidden_dim=desc["hidden_dim"],
            epochs=cfg["epochs"],
            batch_size=cfg["batch_size"],
            learning_rate=cfg["learning_rate"],
            weight_decay=cfg["weight_decay"],
            lambda_classification=cfg["lambda_classification"],
            lambda_structure=cfg["lambda_structure"],
            temperature=desc["temperature"],
            random_state=cfg["random_state"],
        )
        model.anchors_ = AnchorSet(model.anchors)
        model.w1_ = read_embeddings(in_dir / "w1.lgemb")
        model.b1_ = read_embeddings(in_dir / "b1.lgemb")
        model.w2_ = read_embeddings(in_dir / "w2.lgemb")
        model.b2_ = read_embeddings(in_dir / "b2.lgemb")
        model.hidden_dim_ = desc["hidden_dim"]
        model.classes_ = np.arange(desc["n_classes"])
        model.n_features_in_ = desc["caption_dim"]
        model.loss_curve_ = list(desc["loss_curve"])
        return model


# -- dataset-level helpers -------------------------------------------------

def train_supervisor(dataset: Dataset, **params) -> LanguageSupervisor:
    """Fit a supervisor on the labeled source captions of a dataset."""
    y = dataset.source.training_labels()
    if y is None:
        raise MissingSourceLabelsError("source split has no training labels")
    model = LanguageSupervisor(anchors=AnchorSet(dataset.anchors), **params)
    return model.fit(dataset.source.captions, y)


def pseudo_label(model: LanguageSupervisor, dataset: Dataset) -> PseudoLabelTable:
    """Label every target sample with the supervisor's argmax class."""
    return model.pseudo_label_table(dataset.target.captions, dataset.target.indices)


def supervisor_accuracy(model: LanguageSupervisor, dataset: Dataset,
                        split: str = "source") -> float:
    """Fraction of argmax matches on a labeled split."""
    if split == "source":
        part = dataset.source
        labels = part.labels if not part.eval_only else None
        if labels is None:
            raise NoLabelsForSplitError("source split has no labels")
    elif split == "target":
        labels = dataset.target.eval_labels()
        part = dataset.target
    else:
        raise InvalidConfigError(f"unknown split {split!r}")
    predicted = model.predict(part.captions)
    return float(np.mean(predicted == labels))
