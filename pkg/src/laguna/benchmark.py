"""Synthetic two-domain benchmark and the experiment harnesses built on it.

Feature clusters are Gaussian blobs around class prototypes; the target
domain sees the prototypes rotated plane-by-plane, rescaled, and translated.
Caption embeddings live in an unshifted space shared by both domains: an
orthonormal injection of the class anchor plus noise, so language carries
class identity regardless of the visual shift.  Every array is drawn from
its own child seed stream, which keeps captions byte-identical when only
the feature-shift knobs change.
"""

from __future__ import annotations

import dataclasses
import json
import math
import statistics
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import (
    PRESET_ORDER,
    TrainConfig,
    evaluate,
    train_classifier,
)
from .data import Dataset, load_manifest, subsample_target, write_embeddings, write_labels
from .errors import InvalidConfigError
from .losses import LossWeights
from .supervisor import pseudo_label, supervisor_accuracy, train_supervisor

# Desk-scale training configurations used by the harnesses and the
# acceptance suite.  Deliberately hotter than the CLI defaults: at a few
# hundred optimizer steps the 1e-4 default barely moves a fresh network.
HARNESS_SUPERVISOR = dict(epochs=30, batch_size=64, learning_rate=5e-3,
                          lambda_structure=5.0)
HARNESS_CLASSIFIER = dict(epochs=12, batch_size=32, learning_rate=5e-3,
                          lr_schedule="cosine", latent_dim=16,
                          weights=LossWeights(1.0, 3.0, 0.001))

#: anchor weight decay used by the collapse probe (both arms), providing the
#: shrink pressure that the volume term is expected to resist
COLLAPSE_ANCHOR_DECAY = 0.20
#: structure weight for the collapse probe: ten times the stock default
COLLAPSE_STRUCTURE_WEIGHT = 10 * LossWeights().structure


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic generator; defaults are the benchmark setting."""

    n_classes: int = 10
    feature_dim: int = 32
    anchor_dim: int = 16
    caption_dim: int = 24
    samples_per_class: int = 100
    rotation_angle: float = math.pi / 3.0
    translation_scale: float = 0.5
    feature_scale: float = 1.0
    noise_sigma_features: float = 2.2
    noise_sigma_captions: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise InvalidConfigError("need at least 2 classes")
        for name in ("feature_dim", "anchor_dim", "caption_dim"):
            if getattr(self, name) < self.n_classes:
                raise InvalidConfigError(f"{name} must be >= n_classes")
        if self.samples_per_class < 1:
            raise InvalidConfigError("samples_per_class must be >= 1")
        for name in ("noise_sigma_features", "noise_sigma_captions"):
            if getattr(self, name) < 0.0:
                raise InvalidConfigError(f"{name} must be >= 0")
        if not (0.0 <= self.rotation_angle <= math.pi):
            raise InvalidConfigError("rotation_angle must lie in [0, pi]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _pairwise_rotation(dim: int, angle: float) -> np.ndarray:
    """Block-diagonal rotation by `angle` in each consecutive coordinate pair."""
    r = np.eye(dim)
    c, s = math.cos(angle), math.sin(angle)
    for i in range(0, dim - 1, 2):
        r[i, i] = c
        r[i, i + 1] = -s
        r[i + 1, i] = s
        r[i + 1, i + 1] = c
    return r


def _orthonormal_injection(rng, out_dim: int, in_dim: int) -> np.ndarray:
    """Column-orthonormal map R^in -> R^out with sign-fixed QR."""
    m = rng.standard_normal((out_dim, in_dim))
    q, r = np.linalg.qr(m)
    return q * np.sign(np.diag(r))


def _draw_anchors(rng, n: int, dim: int) -> np.ndarray:
    """Random anchors where odd rows lean on their even sibling (cosine ~0.5),
    giving the affinity matrix visible off-diagonal structure."""
    g = rng.standard_normal((n, dim))
    a = g.copy()
    for k in range(1, n, 2):
        a[k] = 0.5 * a[k - 1] + math.sqrt(0.75) * g[k]
    return a


def generate(cfg: SynthConfig, out_dir) -> Path:
    """Write a complete benchmark dataset; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    streams = np.random.SeedSequence(cfg.seed).spawn(8)
    (rng_anchor, rng_proto, rng_src, rng_tgt,
     rng_cap_src, rng_cap_tgt, rng_map, rng_shift) = map(np.random.default_rng, streams)

    n, m = cfg.n_classes, cfg.samples_per_class
    anchors = _draw_anchors(rng_anchor, n, cfg.anchor_dim)
    prototypes = rng_proto.standard_normal((n, cfg.feature_dim))
    rotation = _pairwise_rotation(cfg.feature_dim, cfg.rotation_angle)
    translation = cfg.translation_scale * rng_shift.standard_normal(cfg.feature_dim)
    target_prototypes = (cfg.feature_scale * prototypes) @ rotation.T + translation

    labels = np.repeat(np.arange(n), m)
    src_feat = prototypes[labels] + cfg.noise_sigma_features * \
        rng_src.standard_normal((n * m, cfg.feature_dim))
    tgt_feat = target_prototypes[labels] + cfg.noise_sigma_features * \
        rng_tgt.standard_normal((n * m, cfg.feature_dim))

    injection = _orthonormal_injection(rng_map, cfg.caption_dim, cfg.anchor_dim)
    caption_means = anchors @ injection.T
    src_cap = caption_means[labels] + cfg.noise_sigma_captions * \
        rng_cap_src.standard_normal((n * m, cfg.caption_dim))
    tgt_cap = caption_means[labels] + cfg.noise_sigma_captions * \
        rng_cap_tgt.standard_normal((n * m, cfg.caption_dim))

    write_embeddings(out_dir / "anchors.lgemb", anchors)
    write_embeddings(out_dir / "source_features.lgemb", src_feat)
    write_embeddings(out_dir / "source_captions.lgemb", src_cap)
    write_embeddings(out_dir / "target_features.lgemb", tgt_feat)
    write_embeddings(out_dir / "target_captions.lgemb", tgt_cap)
    write_labels(out_dir / "source_labels.csv", labels)
    write_labels(out_dir / "target_labels.csv", labels)

    manifest = {
        "classes": [f"class_{i:02d}" for i in range(n)],
        "anchors": "anchors.lgemb",
        "domains": {
            "source": {
                "features": "source_features.lgemb",
                "captions": "source_captions.lgemb",
                "labels": "source_labels.csv",
            },
            "target": {
                "features": "target_features.lgemb",
                "captions": "target_captions.lgemb",
                "labels": "target_labels.csv",
            },
        },
        "generator": cfg.to_dict(),
    }
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest_path


# -- harnesses -------------------------------------------------------------

def _base_config(overrides: dict | None) -> TrainConfig:
    merged = dict(HARNESS_CLASSIFIER)
    if overrides:
        merged.update(overrides)
    weights = merged.pop("weights", LossWeights())
    return TrainConfig(weights=weights, **merged)


def _fit_supervisor(dataset: Dataset, seed: int, supervisor_params: dict | None):
    params = dict(HARNESS_SUPERVISOR)
    if supervisor_params:
        params.update(supervisor_params)
    params["random_state"] = seed
    return train_supervisor(dataset, **params)


def run_ablation(manifest_path, presets=PRESET_ORDER, seeds=(0, 1, 2, 3, 4),
                 supervisor_params: dict | None = None,
                 classifier_overrides: dict | None = None) -> dict:
    """Train every preset at every seed; report medians and improvements.

    The first preset in the list is the comparison baseline for the
    absolute-improvement column; the relative column compares each row to
    the previous one.
    """
    presets = list(presets)
    seeds = [int(s) for s in seeds]
    dataset = load_manifest(manifest_path)
    base = _base_config(classifier_overrides)

    accuracy = {p: [] for p in presets}
    supervisor_acc, pseudo_acc = [], []
    for seed in seeds:
        sup = _fit_supervisor(dataset, seed, supervisor_params)
        table = pseudo_label(sup, dataset)
        supervisor_acc.append(supervisor_accuracy(sup, dataset, "source"))
        # benchmark oracle: scored against eval-only labels, never trained on
        pseudo_acc.append(float(np.mean(table.labels == dataset.target.eval_labels())))
        for preset in presets:
            cfg = dataclasses.replace(base.with_preset(preset), seed=seed)
            model = train_classifier(dataset, table, cfg)
            metrics = evaluate(model, dataset, "target")
            accuracy[preset].append(100.0 * metrics["accuracy"])

    median = {p: statistics.median(accuracy[p]) for p in presets}
    baseline = presets[0]
    report = {
        "manifest": str(manifest_path),
        "presets": presets,
        "seeds": seeds,
        "accuracy": accuracy,
        "median": median,
        "absolute_improvement": {p: median[p] - median[baseline] for p in presets},
        "relative_improvement": {
            p: median[p] - median[presets[i - 1]] if i else 0.0
            for i, p in enumerate(presets)
        },
        "supervisor_source_accuracy": supervisor_acc,
        "pseudo_label_accuracy": pseudo_acc,
    }
    return report


def ablation_markdown(report: dict) -> str:
    lines = [
        "| setting | median acc. | rel. imp. | abs. imp. |",
        "| --- | --- | --- | --- |",
    ]
    for preset in report["presets"]:
        lines.append("| {} | {:.2f} | {:+.2f} | {:+.2f} |".format(
            preset,
            report["median"][preset],
            report["relative_improvement"][preset],
            report["absolute_improvement"][preset],
        ))
    return "\n".join(lines) + "\n"


def run_ratio_sweep(manifest_path, ratios=(0.1, 0.5, 1.0), seeds=(0, 1, 2, 3, 4),
                    supervisor_params: dict | None = None,
                    classifier_overrides: dict | None = None,
                    tolerance: float = 1.0) -> dict:
    """Median target accuracy per target-data ratio, evaluated on the full split."""
    ratios = [float(r) for r in ratios]
    seeds = [int(s) for s in seeds]
    dataset = load_manifest(manifest_path)
    base = _base_config(classifier_overrides)

    accuracy = {r: [] for r in ratios}
    for seed in seeds:
        sup = _fit_supervisor(dataset, seed, supervisor_params)
        table = pseudo_label(sup, dataset)
        for ratio in ratios:
            cfg = dataclasses.replace(base, seed=seed, target_ratio=ratio)
            model = train_classifier(dataset, table, cfg)
            metrics = evaluate(model, dataset, "target")
            accuracy[ratio].append(100.0 * metrics["accuracy"])

    median = {r: statistics.median(accuracy[r]) for r in ratios}
    ordered = sorted(ratios)
    non_decreasing = all(
        median[hi] >= median[lo] - tolerance
        for lo, hi in zip(ordered, ordered[1:])
    )
    return {
        "manifest": str(manifest_path),
        "ratios": ratios,
        "seeds": seeds,
        "accuracy": {str(r): accuracy[r] for r in ratios},
        "median": {str(r): median[r] for r in ratios},
        "non_decreasing_within_tolerance": bool(non_decreasing),
        "tolerance": tolerance,
    }


def ratio_markdown(report: dict) -> str:
    lines = ["| ratio | median acc. |", "| --- | --- |"]
    for ratio in report["ratios"]:
        lines.append("| {:.0%} | {:.2f} |".format(ratio, report["median"][str(ratio)]))
    return "\n".join(lines) + "\n"


def run_collapse_probe(manifest_path, seeds=(0, 1, 2, 3, 4),
                       volume_weights=(0.001, 0.0),
                       supervisor_params: dict | None = None,
                       classifier_overrides: dict | None = None) -> dict:
    """Collapse-prone training with and without the volume term.

    The structure weight is raised tenfold and the anchors get their own
    weight decay, which steadily shrinks their norms; the probe records how
    far each arm's source-anchor Gram log-det drifts from the reference
    log-det over training.
    """
    seeds = [int(s) for s in seeds]
    dataset = load_manifest(manifest_path)
    overrides = dict(classifier_overrides or {})
    overrides.setdefault("anchor_weight_decay", COLLAPSE_ANCHOR_DECAY)
    base = _base_config(overrides)

    arms = {str(lam3): [] for lam3 in volume_weights}
    for seed in seeds:
        sup = _fit_supervisor(dataset, seed, supervisor_params)
        table = pseudo_label(sup, dataset)
        for lam3 in volume_weights:
            weights = LossWeights(base.weights.classification,
                                  COLLAPSE_STRUCTURE_WEIGHT, lam3)
            cfg = dataclasses.replace(base.with_preset("full"), seed=seed,
                                      weights=weights, use_reg=(lam3 > 0.0))
            model = train_classifier(dataset, table, cfg)
            # gaps of the source-anchor Gram log-det against the reference
            gaps = [s - model.ref_logdet_ for _, s, _ in model.volume_log_]
            arms[str(lam3)].append({
                "max_abs_gap": max(abs(g) for g in gaps),
                "final_drop": -gaps[-1],
            })
    summary = {
        key: {
            "runs": runs,
            "median_max_abs_gap": statistics.median(r["max_abs_gap"] for r in runs),
            "median_final_drop": statistics.median(r["final_drop"] for r in runs),
        }
        for key, runs in arms.items()
    }
    return {
        "manifest": str(manifest_path),
        "seeds": seeds,
        "anchor_weight_decay": overrides["anchor_weight_decay"],
        "structure_weight": COLLAPSE_STRUCTURE_WEIGHT,
        "arms": summary,
    }


def baseline_accuracy_for_angle(cfg: SynthConfig, angle: float, out_dir,
                                seeds=(0, 1, 2),
                                supervisor_params: dict | None = None,
                                classifier_overrides: dict | None = None) -> float:
    """Median target accuracy of the plain baseline at a given rotation."""
    shifted = dataclasses.replace(cfg, rotation_angle=angle)
    manifest = generate(shifted, out_dir)
    dataset = load_manifest(manifest)
    base = _base_config(classifier_overrides)
    accs = []
    for seed in seeds:
        sup = _fit_supervisor(dataset, seed, supervisor_params)
        table = pseudo_label(sup, dataset)
        cfg_run = dataclasses.replace(base.with_preset("s1"), seed=seed)
        model = train_classifier(dataset, table, cfg_run)
        accs.append(100.0 * evaluate(model, dataset, "target")["accuracy"])
    return statistics.median(accs)
