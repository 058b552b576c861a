"""Language-guided unsupervised domain adaptation over precomputed embeddings.

Pipeline in three stages: align class text embeddings to reference anchors
by relative (cosine) encoding, pseudo-label the unlabeled target domain
with a caption supervisor, then train a cross-domain classifier whose
learnable per-domain anchors are kept honest by structure and volume
terms.  Everything runs on a small hand-rolled reverse-mode autodiff core
so the whole system stays inspectable at desk scale.
"""

__version__ = "0.1.0"

from .autodiff import Node
from .benchmark import SynthConfig, generate
from .classifier import (
    CrossDomainClassifier,
    TrainConfig,
    cross_domain_separation,
    evaluate,
    export_embeddings,
    load_classifier,
    save_classifier,
    train_classifier,
)
from .data import (
    Dataset,
    load_manifest,
    read_embeddings,
    read_labels,
    subsample_target,
    write_embeddings,
    write_labels,
)
from .encoding import AnchorSet, RelativeEncoder, rel, rel_rows
from .errors import LagunaError
from .losses import LossWeights
from .optim import AdamW
from .supervisor import (
    LanguageSupervisor,
    PseudoLabelTable,
    pseudo_label,
    supervisor_accuracy,
    train_supervisor,
)

__all__ = [
    "AdamW",
    "AnchorSet",
    "CrossDomainClassifier",
    "Dataset",
    "LagunaError",
    "LanguageSupervisor",
    "LossWeights",
    "Node",
    "PseudoLabelTable",
    "RelativeEncoder",
    "SynthConfig",
    "TrainConfig",
    "__version__",
    "cross_domain_separation",
    "evaluate",
    "export_embeddings",
    "generate",
    "load_classifier",
    "load_manifest",
    "pseudo_label",
    "read_embeddings",
    "read_labels",
    "rel",
    "rel_rows",
    "save_classifier",
    "subsample_target",
    "supervisor_accuracy",
    "train_classifier",
    "train_supervisor",
    "write_embeddings",
    "write_labels",
]
