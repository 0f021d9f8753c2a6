"""Run manifests: reproducibility metadata for every output directory.

The manifest itself is fully deterministic (command, config snapshot,
seed, content hashes of inputs, artifact paths), so reruns with the same
seed produce byte-identical manifest files.  Wall-clock time is recorded
separately in timing.json to keep that property.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

MANIFEST_NAME = "manifest.json"
TIMING_NAME = "timing.json"


def config_hash(config: dict) -> str:
    """Content hash of a JSON-serialisable config."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    input_hashes: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    wall_clock_sec: float | None = None

    def add_input(self, name, path):
        self.input_hashes[str(name)] = file_hash(path)

    def add_artifact(self, path):
        self.artifacts.append(str(path))

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        body = {
            "command": self.command,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "seed": self.seed,
            "input_hashes": dict(sorted(self.input_hashes.items())),
            "artifacts": sorted(self.artifacts),
        }
        (out_dir / MANIFEST_NAME).write_text(
            json.dumps(body, sort_keys=True, indent=2) + "\n")
        if self.wall_clock_sec is not None:
            (out_dir / TIMING_NAME).write_text(
                json.dumps({"wall_clock_sec": self.wall_clock_sec}) + "\n")


def read_manifest(out_dir) -> dict:
    return json.loads((Path(out_dir) / MANIFEST_NAME).read_text())
