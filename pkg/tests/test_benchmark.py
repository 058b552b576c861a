"""Synthetic benchmark generator and the experiment harnesses."""

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from laguna.benchmark import (
    SynthConfig,
    ablation_markdown,
    generate,
    ratio_markdown,
    run_ablation,
    run_collapse_probe,
    run_ratio_sweep,
)
from laguna.data import load_manifest, read_embeddings
from laguna.errors import InvalidConfigError

TINY = SynthConfig(n_classes=3, feature_dim=8, anchor_dim=4, caption_dim=5,
                   samples_per_class=10, noise_sigma_features=0.6,
                   noise_sigma_captions=0.2)
FAST_SUP = dict(epochs=5, batch_size=16, learning_rate=2e-2)
FAST_CLF = dict(epochs=2, batch_size=16, learning_rate=1e-2, latent_dim=4)


def dir_digest(path: Path) -> str:
    h = hashlib.sha256()
    for f in sorted(path.rglob("*")):
        if f.is_file():
            h.update(f.name.encode())
            h.update(f.read_bytes())
    return h.hexdigest()


# -- configuration ---------------------------------------------------------

def test_config_validation():
    with pytest.raises(InvalidConfigError):
        SynthConfig(n_classes=1)
    with pytest.raises(InvalidConfigError):
        SynthConfig(n_classes=5, anchor_dim=4)
    with pytest.raises(InvalidConfigError):
        SynthConfig(n_classes=5, caption_dim=4, anchor_dim=8, feature_dim=8)
    with pytest.raises(InvalidConfigError):
        SynthConfig(samples_per_class=0)
    with pytest.raises(InvalidConfigError):
        SynthConfig(noise_sigma_features=-0.1)
    with pytest.raises(InvalidConfigError):
        SynthConfig(rotation_angle=3.5)


def test_config_to_dict_roundtrips():
    cfg = SynthConfig(n_classes=4, anchor_dim=6, caption_dim=7, feature_dim=9,
                      seed=11)
    assert SynthConfig(**cfg.to_dict()) == cfg


# -- generated artifacts ---------------------------------------------------

def test_generate_writes_a_loadable_dataset(tmp_path):
    manifest = generate(TINY, tmp_path)
    names = {f.name for f in tmp_path.iterdir()}
    assert names == {"anchors.lgemb", "source_features.lgemb", "source_captions.lgemb",
                     "target_features.lgemb", "target_captions.lgemb",
                     "source_labels.csv", "target_labels.csv", "manifest.json"}
    ds = load_manifest(manifest)
    assert ds.n_classes == 3
    assert ds.source.n == ds.target.n == 30
    assert ds.feature_dim == 8 and ds.caption_dim == 5 and ds.anchor_dim == 4
    # target ground truth is present for scoring only
    assert ds.target.eval_only
    assert ds.target.training_labels() is None
    assert ds.source.training_labels().tolist() == np.repeat(np.arange(3), 10).tolist()
    doc = json.loads(manifest.read_text())
    assert doc["generator"] == TINY.to_dict()


def test_generation_is_deterministic_and_seed_sensitive(tmp_path):
    generate(TINY, tmp_path / "a")
    generate(TINY, tmp_path / "b")
    assert dir_digest(tmp_path / "a") == dir_digest(tmp_path / "b")
    import dataclasses
    generate(dataclasses.replace(TINY, seed=1), tmp_path / "c")
    assert dir_digest(tmp_path / "a") != dir_digest(tmp_path / "c")


def test_sibling_anchor_pairs_share_half_their_direction(tmp_path):
    cfg = SynthConfig(n_classes=6, feature_dim=12, anchor_dim=64, caption_dim=64,
                      samples_per_class=1)
    generate(cfg, tmp_path)
    anchors = read_embeddings(tmp_path / "anchors.lgemb")
    for k in (1, 3, 5):
        u, v = anchors[k - 1], anchors[k]
        cos = u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
        # cosine concentrates around 0.5 as the dimension grows
        assert 0.25 < cos < 0.75


def test_captions_ignore_feature_space_knobs(tmp_path):
    """Separate seed streams: feature shifts leave language files untouched."""
    import dataclasses
    generate(TINY, tmp_path / "a")
    shifted = dataclasses.replace(TINY, rotation_angle=1.2, translation_scale=3.0,
                                  feature_scale=2.0)
    generate(shifted, tmp_path / "b")
    for name in ("anchors.lgemb", "source_captions.lgemb", "target_captions.lgemb",
                 "source_labels.csv", "target_labels.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "source_features.lgemb").read_bytes() == \
        (tmp_path / "b" / "source_features.lgemb").read_bytes()
    assert (tmp_path / "a" / "target_features.lgemb").read_bytes() != \
        (tmp_path / "b" / "target_features.lgemb").read_bytes()


def test_identity_shift_makes_domains_identical(tmp_path):
    import dataclasses
    cfg = dataclasses.replace(TINY, rotation_angle=0.0, translation_scale=0.0,
                              feature_scale=1.0, noise_sigma_features=0.0)
    generate(cfg, tmp_path)
    src = read_embeddings(tmp_path / "source_features.lgemb")
    tgt = read_embeddings(tmp_path / "target_features.lgemb")
    assert np.array_equal(src, tgt)


def test_rotation_preserves_prototype_norms(tmp_path):
    import dataclasses
    cfg = dataclasses.replace(TINY, rotation_angle=math.pi / 3, translation_scale=0.0,
                              feature_scale=1.0, noise_sigma_features=0.0)
    generate(cfg, tmp_path)
    src = read_embeddings(tmp_path / "source_features.lgemb")
    tgt = read_embeddings(tmp_path / "target_features.lgemb")
    assert not np.allclose(src, tgt)
    assert np.allclose(np.linalg.norm(src, axis=1), np.linalg.norm(tgt, axis=1),
                       atol=1e-5)


def test_noiseless_captions_sit_on_the_injected_anchors(tmp_path):
    import dataclasses
    cfg = dataclasses.replace(TINY, noise_sigma_captions=0.0)
    generate(cfg, tmp_path)
    caps = read_embeddings(tmp_path / "source_captions.lgemb")
    anchors = read_embeddings(tmp_path / "anchors.lgemb")
    labels = np.repeat(np.arange(3), 10)
    # orthonormal injection preserves norms and within-class captions collapse
    for c in range(3):
        rows = caps[labels == c]
        assert np.allclose(rows, rows[0], atol=1e-6)
        assert np.linalg.norm(rows[0]) == pytest.approx(
            np.linalg.norm(anchors[c]), abs=1e-5)


# -- harnesses -------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    return generate(TINY, out)


def test_ablation_report_structure(tiny_manifest):
    rep = run_ablation(tiny_manifest, presets=("s1", "full"), seeds=(0, 1),
                       supervisor_params=FAST_SUP, classifier_overrides=FAST_CLF)
    assert rep["presets"] == ["s1", "full"]
    assert set(rep["accuracy"]) == {"s1", "full"}
    assert all(len(v) == 2 for v in rep["accuracy"].values())
    assert rep["absolute_improvement"]["s1"] == 0.0
    assert rep["relative_improvement"]["full"] == pytest.approx(
        rep["median"]["full"] - rep["median"]["s1"])
    assert len(rep["pseudo_label_accuracy"]) == 2
    md = ablation_markdown(rep)
    assert md.startswith("| setting |") and "| full |" in md


def test_ratio_sweep_report_structure(tiny_manifest):
    rep = run_ratio_sweep(tiny_manifest, ratios=(0.5, 1.0), seeds=(0,),
                          supervisor_params=FAST_SUP, classifier_overrides=FAST_CLF)
    assert rep["ratios"] == [0.5, 1.0]
    assert set(rep["median"]) == {"0.5", "1.0"}
    assert isinstance(rep["non_decreasing_within_tolerance"], bool)
    md = ratio_markdown(rep)
    assert "| 50% |" in md and "| 100% |" in md


def test_collapse_probe_report_structure(tiny_manifest):
    rep = run_collapse_probe(tiny_manifest, seeds=(0,),
                             volume_weights=(0.001, 0.0),
                             supervisor_params=FAST_SUP,
                             classifier_overrides=FAST_CLF)
    assert set(rep["arms"]) == {"0.001", "0.0"}
    for arm in rep["arms"].values():
        assert len(arm["runs"]) == 1
        assert arm["median_max_abs_gap"] >= 0.0
    assert rep["structure_weight"] == pytest.approx(1.0)
