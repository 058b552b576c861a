"""Command-line driver for the three-stage pipeline.

Each stage is its own subcommand with file handoffs between them, so any
stage can be rerun or inspected in isolation:

    laguna synth            --out data/
    laguna train-supervisor --manifest data/manifest.json --out sup/
    laguna pseudo-label     --manifest data/manifest.json --supervisor sup/ --out pl/
    laguna train-classifier --manifest data/manifest.json --pseudo-labels pl/ --out clf/
    laguna eval             --manifest data/manifest.json --model clf/ --out metrics/

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage error
(bad flags, missing inputs, impossible configurations).  `--seed` falls
back to the LAGUNA_SEED environment variable, then to 0.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import benchmark, classifier, data, provenance, supervisor
from .classifier import TrainConfig
from .errors import InvalidConfigError, LagunaError
from .losses import LossWeights


class UsageError(Exception):
    """Bad invocation detected before any real work starts."""


# -- shared helpers --------------------------------------------------------

def resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("LAGUNA_SEED", "")
    if not env:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"LAGUNA_SEED must be an integer, got {env!r}") from None


def require_exists(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def require_checkpoint(path, name: str, what: str) -> Path:
    d = Path(path)
    if d.is_file() and d.name == name:
        d = d.parent
    if not (d / name).exists():
        raise UsageError(f"{what} not found: {d / name}")
    return d


def _config_dict(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def manifest_inputs(manifest_path) -> dict:
    """Manifest file plus every data file it references, for hashing."""
    manifest_path = Path(manifest_path)
    inputs = {"manifest": manifest_path}
    try:
        doc = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError):
        return inputs
    base = manifest_path.parent
    if isinstance(doc, dict):
        if isinstance(doc.get("anchors"), str):
            inputs["anchors"] = base / doc["anchors"]
        domains = doc.get("domains")
        if isinstance(domains, dict):
            for dom, entry in domains.items():
                if isinstance(entry, dict):
                    for key, rel in entry.items():
                        if isinstance(rel, str):
                            inputs[f"{dom}_{key}"] = base / rel
    return {k: p for k, p in inputs.items() if Path(p).exists()}


def dir_inputs(dir_path, prefix: str) -> dict:
    """Checkpoint artifacts inside a directory, keyed for hashing."""
    out = {}
    for p in sorted(Path(dir_path).iterdir()):
        if p.suffix in (".lgemb", ".json", ".csv") and p.name != provenance.PROVENANCE_NAME:
            out[f"{prefix}:{p.name}"] = p
    return out


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip() != ""]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip() != ""]


# -- subcommands -----------------------------------------------------------

def cmd_synth(args) -> int:
    args.seed = resolve_seed(args)
    try:
        cfg = benchmark.SynthConfig(
            n_classes=args.classes,
            feature_dim=args.feature_dim,
            anchor_dim=args.anchor_dim,
            caption_dim=args.caption_dim,
            samples_per_class=args.samples,
            rotation_angle=math.radians(args.rotation_degrees),
            translation_scale=args.translation,
            feature_scale=args.scale,
            noise_sigma_features=args.sigma_features,
            noise_sigma_captions=args.sigma_captions,
            seed=args.seed,
        )
    except InvalidConfigError as exc:
        raise UsageError(str(exc)) from None
    manifest = benchmark.generate(cfg, args.out)
    provenance.write_provenance(args.out, "synth", _config_dict(args))
    print(manifest)
    return 0


def cmd_train_supervisor(args) -> int:
    args.seed = resolve_seed(args)
    manifest = require_exists(args.manifest, "manifest")
    dataset = data.load_manifest(manifest)
    model = supervisor.train_supervisor(
        dataset,
        hidden_dim=args.hidden,
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        lambda_classification=args.lambda1,
        lambda_structure=args.lambda2,
        temperature=args.temperature,
        random_state=args.seed,
    )
    out = Path(args.out)
    model.save(out)
    accuracy = supervisor.supervisor_accuracy(model, dataset, "source")
    _write_json(out / "accuracy.json", {"source_accuracy": accuracy})
    provenance.write_provenance(out, "train-supervisor", _config_dict(args),
                                manifest_inputs(manifest))
    print(f"source accuracy: {accuracy:.4f}")
    return 0


def cmd_pseudo_label(args) -> int:
    args.seed = resolve_seed(args)
    manifest = require_exists(args.manifest, "manifest")
    sup_dir = require_checkpoint(args.supervisor, supervisor.CHECKPOINT_NAME,
                                 "supervisor checkpoint")
    dataset = data.load_manifest(manifest)
    if args.target_ratio != 1.0:
        dataset = data.subsample_target(dataset, args.target_ratio, args.seed)
    model = supervisor.LanguageSupervisor.load(sup_dir)
    table = supervisor.pseudo_label(model, dataset)
    out = Path(args.out)
    table.save(out)
    inputs = manifest_inputs(manifest) | dir_inputs(sup_dir, "supervisor")
    provenance.write_provenance(out, "pseudo-label", _config_dict(args), inputs)
    print(f"pseudo-labeled {len(table)} target samples")
    return 0


def cmd_train_classifier(args) -> int:
    args.seed = resolve_seed(args)
    manifest = require_exists(args.manifest, "manifest")
    dataset = data.load_manifest(manifest)
    table = None
    table_dir = None
    if args.pseudo_labels is not None:
        table_dir = require_exists(args.pseudo_labels, "pseudo-label table")
        if table_dir.is_file():
            table_dir = table_dir.parent
        table = supervisor.PseudoLabelTable.load(table_dir, dataset.anchors)
    elif dataset.target.n > 0:
        raise UsageError("--pseudo-labels is required when the manifest has target samples")
    config = TrainConfig(
        weights=LossWeights(args.lambda1, args.lambda2, args.lambda3),
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        anchor_weight_decay=args.anchor_weight_decay,
        seed=args.seed,
        target_structure_mode=args.target_structure.replace("-", "_"),
        target_ratio=args.target_ratio,
        latent_dim=args.latent_dim,
        n_heads=args.heads,
        lr_schedule=args.lr_schedule,
    ).with_preset(args.preset)
    model = classifier.train_classifier(dataset, table, config)
    out = Path(args.out)
    classifier.save_classifier(model, out)
    inputs = manifest_inputs(manifest)
    if table_dir is not None:
        inputs |= dir_inputs(table_dir, "pseudo_labels")
    provenance.write_provenance(out, "train-classifier", _config_dict(args), inputs)
    print(f"trained {len(model.loss_log_)} steps; "
          f"final loss {model.loss_log_[-1][-1]:.6f}")
    return 0


def cmd_eval(args) -> int:
    manifest = require_exists(args.manifest, "manifest")
    model_dir = require_checkpoint(args.model, classifier.CHECKPOINT_NAME,
                                   "classifier checkpoint")
    dataset = data.load_manifest(manifest)
    model = classifier.load_classifier(model_dir)
    metrics = classifier.evaluate(model, dataset, args.split)
    metrics["loss_curve"] = [float(v) for v in model.epoch_loss_curve_]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", metrics)
    inputs = manifest_inputs(manifest) | dir_inputs(model_dir, "classifier")
    provenance.write_provenance(out, "eval", _config_dict(args), inputs)
    print(f"{args.split} accuracy: {metrics['accuracy']:.4f} "
          f"(mean per-class {metrics['mean_per_class_accuracy']:.4f})")
    return 0


def cmd_export(args) -> int:
    manifest = require_exists(args.manifest, "manifest")
    model_dir = require_checkpoint(args.model, classifier.CHECKPOINT_NAME,
                                   "classifier checkpoint")
    dataset = data.load_manifest(manifest)
    model = classifier.load_classifier(model_dir)
    table = None
    inputs = manifest_inputs(manifest) | dir_inputs(model_dir, "classifier")
    if args.pseudo_labels is not None:
        table_dir = require_exists(args.pseudo_labels, "pseudo-label table")
        if table_dir.is_file():
            table_dir = table_dir.parent
        table = supervisor.PseudoLabelTable.load(table_dir, dataset.anchors)
        inputs |= dir_inputs(table_dir, "pseudo_labels")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "embeddings.csv"
    classifier.export_embeddings(model, dataset, csv_path, table)
    provenance.write_provenance(out, "export", _config_dict(args), inputs)
    print(csv_path)
    return 0


def cmd_ablate(args) -> int:
    manifest = require_exists(args.manifest, "manifest")
    seeds = _int_list(args.seeds)
    if not seeds:
        raise UsageError("--seeds must name at least one seed")
    sup_params = {}
    if args.sup_epochs is not None:
        sup_params["epochs"] = args.sup_epochs
    if args.sup_lr is not None:
        sup_params["learning_rate"] = args.sup_lr
    clf_overrides = {}
    if args.epochs is not None:
        clf_overrides["epochs"] = args.epochs
    if args.lr is not None:
        clf_overrides["learning_rate"] = args.lr
    if args.mode == "ladder":
        presets = [p.strip() for p in args.presets.split(",") if p.strip()]
        report = benchmark.run_ablation(manifest, presets=presets, seeds=seeds,
                                        supervisor_params=sup_params or None,
                                        classifier_overrides=clf_overrides or None)
        text = benchmark.ablation_markdown(report)
    else:
        ratios = _float_list(args.ratios)
        if not ratios:
            raise UsageError("--ratios must name at least one ratio")
        report = benchmark.run_ratio_sweep(manifest, ratios=ratios, seeds=seeds,
                                           supervisor_params=sup_params or None,
                                           classifier_overrides=clf_overrides or None)
        text = benchmark.ratio_markdown(report)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report)
    (out / "report.md").write_text(text)
    provenance.write_provenance(out, "ablate", _config_dict(args),
                                manifest_inputs(manifest))
    print(text, end="")
    return 0


# -- parser ----------------------------------------------------------------

def _add_seed(parser):
    parser.add_argument("--seed", type=int, default=None,
                        help="random seed (default: LAGUNA_SEED or 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="laguna",
        description="Language-guided domain adaptation over precomputed embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic two-domain benchmark")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--samples", type=int, default=100,
                   help="samples per class per domain")
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--anchor-dim", type=int, default=16)
    p.add_argument("--caption-dim", type=int, default=24)
    p.add_argument("--rotation-degrees", type=float, default=60.0)
    p.add_argument("--translation", type=float, default=0.5)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--sigma-features", type=float, default=2.2)
    p.add_argument("--sigma-captions", type=float, default=1.0)
    _add_seed(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-supervisor", help="fit the caption supervisor on source")
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--temperature", type=float, default=1.0)
    _add_seed(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_supervisor)

    p = sub.add_parser("pseudo-label", help="label the target split with a supervisor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--supervisor", required=True)
    p.add_argument("--target-ratio", type=float, default=1.0)
    _add_seed(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("train-classifier", help="fit the cross-domain classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pseudo-labels", default=None)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--anchor-weight-decay", type=float, default=None)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=0.1)
    p.add_argument("--lambda3", type=float, default=0.001)
    p.add_argument("--target-structure", choices=("caption", "pseudo-anchor"),
                   default="caption")
    p.add_argument("--preset", choices=classifier.PRESET_ORDER, default="full")
    p.add_argument("--target-ratio", type=float, default=1.0)
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--lr-schedule", choices=("cosine", "constant"), default="cosine")
    _add_seed(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("eval", help="score a trained classifier on a labeled split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("target", "source"), default="target")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="dump latent and relative coordinates to CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--pseudo-labels", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("ablate", help="run the preset ladder or the ratio sweep")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("ladder", "ratio"), default="ladder")
    p.add_argument("--presets", default=",".join(classifier.PRESET_ORDER))
    p.add_argument("--ratios", default="0.1,0.5,1.0")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--epochs", type=int, default=None,
                   help="classifier epochs (default: harness setting)")
    p.add_argument("--lr", type=float, default=None,
                   help="classifier learning rate (default: harness setting)")
    p.add_argument("--sup-epochs", type=int, default=None)
    p.add_argument("--sup-lr", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return int(args.func(args))
    except (UsageError, InvalidConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (LagunaError, np.linalg.LinAlgError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
