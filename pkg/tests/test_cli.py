"""Command-line pipeline: exit codes, artifacts, provenance, determinism."""

import json
from pathlib import Path

import numpy as np
import pytest

from laguna.cli import main

SYNTH = ["synth", "--classes", "3", "--samples", "8", "--feature-dim", "8",
         "--anchor-dim", "4", "--caption-dim", "5", "--sigma-features", "0.6",
         "--sigma-captions", "0.2"]
SUP = ["train-supervisor", "--epochs", "40", "--batch", "16", "--lr", "0.02"]
CLF = ["train-classifier", "--epochs", "2", "--batch", "16", "--lr", "0.01",
       "--latent-dim", "4"]


def read_json(path):
    return json.loads(Path(path).read_text())


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """One synthetic dataset plus trained stage artifacts, built via the CLI."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(SYNTH + ["--out", str(data)]) == 0
    manifest = data / "manifest.json"
    sup = root / "sup"
    assert main(SUP + ["--manifest", str(manifest), "--seed", "0",
                       "--out", str(sup)]) == 0
    plt = root / "plt"
    assert main(["pseudo-label", "--manifest", str(manifest),
                 "--supervisor", str(sup), "--out", str(plt)]) == 0
    clf = root / "clf"
    assert main(CLF + ["--manifest", str(manifest), "--pseudo-labels", str(plt),
                       "--seed", "0", "--out", str(clf)]) == 0
    return {"root": root, "manifest": manifest, "sup": sup, "plt": plt, "clf": clf}


# -- stage artifacts -------------------------------------------------------

def test_synth_writes_manifest_and_provenance(work):
    data = work["manifest"].parent
    assert work["manifest"].exists()
    prov = read_json(data / "provenance.json")
    assert prov["command"] == "synth"
    assert set(prov) == {"command", "config", "config_hash", "inputs", "versions"}
    assert len(prov["config_hash"]) == 64
    assert {"package", "python", "numpy"} <= set(prov["versions"])


def test_supervisor_artifacts(work):
    sup = work["sup"]
    assert (sup / "supervisor.json").exists()
    acc = read_json(sup / "accuracy.json")
    assert 0.9 <= acc["source_accuracy"] <= 1.0
    prov = read_json(sup / "provenance.json")
    assert prov["command"] == "train-supervisor"
    assert {"manifest", "anchors", "source_features"} <= set(prov["inputs"])


def test_pseudo_label_artifacts(work):
    plt = work["plt"]
    lines = (plt / "pseudo_labels.csv").read_text().splitlines()
    assert lines[0] == "index,pseudo_label"
    assert len(lines) - 1 == 24
    assert (plt / "pseudo_encodings.lgemb").exists()
    assert read_json(plt / "provenance.json")["command"] == "pseudo-label"


def test_classifier_checkpoint(work):
    clf = work["clf"]
    assert (clf / "classifier.json").exists()
    log = (clf / "loss_log.csv").read_text().splitlines()
    assert log[0] == "step,ce,ls,reg,total"


def test_eval_and_export(work):
    out = work["root"] / "metrics"
    assert main(["eval", "--manifest", str(work["manifest"]), "--model",
                 str(work["clf"]), "--split", "target", "--out", str(out)]) == 0
    metrics = read_json(out / "metrics.json")
    assert {"accuracy", "mean_per_class_accuracy", "per_class", "loss_curve"} <= set(metrics)
    assert len(metrics["per_class"]) == 3
    assert main(["eval", "--manifest", str(work["manifest"]), "--model",
                 str(work["clf"]), "--split", "source", "--out", str(out)]) == 0
    exp = work["root"] / "emb"
    assert main(["export", "--manifest", str(work["manifest"]), "--model",
                 str(work["clf"]), "--pseudo-labels", str(work["plt"]),
                 "--out", str(exp)]) == 0
    lines = (exp / "embeddings.csv").read_text().splitlines()
    assert lines[0].split(",")[:3] == ["index", "domain", "label"]
    assert len(lines) == 1 + 48


def test_pseudo_label_ratio_subsamples(work, tmp_path):
    out = tmp_path / "half"
    assert main(["pseudo-label", "--manifest", str(work["manifest"]),
                 "--supervisor", str(work["sup"]), "--target-ratio", "0.5",
                 "--seed", "0", "--out", str(out)]) == 0
    lines = (out / "pseudo_labels.csv").read_text().splitlines()
    assert len(lines) - 1 == 12


def test_pseudo_anchor_structure_mode(work, tmp_path):
    out = tmp_path / "pa"
    assert main(CLF + ["--manifest", str(work["manifest"]), "--pseudo-labels",
                       str(work["plt"]), "--target-structure", "pseudo-anchor",
                       "--preset", "s4", "--seed", "1", "--out", str(out)]) == 0


def test_ablate_ladder_and_ratio(work, tmp_path):
    out = tmp_path / "ladder"
    assert main(["ablate", "--manifest", str(work["manifest"]), "--mode", "ladder",
                 "--presets", "s1,full", "--seeds", "0", "--epochs", "2",
                 "--lr", "0.01", "--sup-epochs", "4", "--sup-lr", "0.02",
                 "--out", str(out)]) == 0
    assert (out / "report.json").exists() and (out / "report.md").exists()
    assert "| s1 |" in (out / "report.md").read_text()
    out2 = tmp_path / "ratio"
    assert main(["ablate", "--manifest", str(work["manifest"]), "--mode", "ratio",
                 "--ratios", "0.5,1.0", "--seeds", "0", "--epochs", "2",
                 "--lr", "0.01", "--sup-epochs", "4", "--sup-lr", "0.02",
                 "--out", str(out2)]) == 0
    assert "non_decreasing_within_tolerance" in read_json(out2 / "report.json")


# -- exit codes ------------------------------------------------------------

def test_usage_errors_exit_2(work, tmp_path):
    assert main(SYNTH) == 2  # --out missing
    assert main(["synth", "--classes", "1", "--out", str(tmp_path / "x")]) == 2
    assert main(["no-such-command"]) == 2
    assert main(SUP + ["--manifest", str(tmp_path / "nope.json"),
                       "--out", str(tmp_path / "s")]) == 2
    assert main(CLF + ["--manifest", str(work["manifest"]),
                       "--out", str(tmp_path / "c")]) == 2  # pseudo labels required


def test_runtime_errors_exit_1(work, tmp_path, capsys):
    # corrupt one embedding payload: well-formed flags, broken data
    import shutil
    broken = tmp_path / "broken"
    shutil.copytree(work["manifest"].parent, broken)
    f = broken / "source_captions.lgemb"
    f.write_bytes(f.read_bytes()[:-8])
    code = main(SUP + ["--manifest", str(broken / "manifest.json"),
                       "--out", str(tmp_path / "s")])
    assert code == 1
    assert "error" in capsys.readouterr().err.lower()


def test_env_seed_matches_explicit_flag(work, tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    monkeypatch.delenv("LAGUNA_SEED", raising=False)
    assert main(SUP + ["--manifest", str(work["manifest"]), "--seed", "7",
                       "--out", str(a)]) == 0
    monkeypatch.setenv("LAGUNA_SEED", "7")
    assert main(SUP + ["--manifest", str(work["manifest"]), "--out", str(b)]) == 0
    for name in ("w1.lgemb", "b1.lgemb", "w2.lgemb", "b2.lgemb", "supervisor.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_env_seed_must_be_integer(work, tmp_path, monkeypatch):
    monkeypatch.setenv("LAGUNA_SEED", "lots")
    assert main(SUP + ["--manifest", str(work["manifest"]),
                       "--out", str(tmp_path / "s")]) == 2


def test_identical_flags_identical_model_bytes(work, tmp_path):
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert main(CLF + ["--manifest", str(work["manifest"]), "--pseudo-labels",
                           str(work["plt"]), "--seed", "3", "--out", str(out)]) == 0
        outs.append(out)
    a, b = outs
    names = {f.name for f in a.iterdir()} - {"provenance.json"}
    assert names == {f.name for f in b.iterdir()} - {"provenance.json"}
    for name in sorted(names):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
