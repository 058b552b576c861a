"""Deterministic run fingerprints: config hashes, input hashes, versions.

Every CLI invocation drops a `provenance.json` beside its outputs.  The
record contains no timestamps or host details, so two runs with the same
flags on the same inputs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path

import numpy as np

PROVENANCE_NAME = "provenance.json"
_CHUNK = 1 << 20


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        while chunk := fh.read(_CHUNK):
            digest.update(chunk)
    return digest.hexdigest()


def canonical_json(obj) -> str:
    """Minimal stable rendering used for hashing configs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return sha256_bytes(canonical_json(config).encode())


def _package_version() -> str:
    from . import __version__
    return __version__


def build_record(command: str, config: dict, inputs: dict | None = None) -> dict:
    return {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": {name: sha256_file(path) for name, path in sorted((inputs or {}).items())},
        "versions": {
            "package": _package_version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }


def write_provenance(out_dir, command: str, config: dict,
                     inputs: dict | None = None) -> Path:
    """Write the provenance record into `out_dir`; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = build_record(command, config, inputs)
    path = out_dir / PROVENANCE_NAME
    with open(path, "w") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path
