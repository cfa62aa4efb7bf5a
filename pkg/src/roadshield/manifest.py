"""Run manifests: enough resolved state to reproduce any command exactly.

A manifest is written next to every command's outputs.  It contains no
timestamps or host data, so re-running the same command over the same inputs
produces a byte-identical manifest (and byte-identical outputs).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

TOOL_NAME = "roadshield"
TOOL_VERSION = "0.1.0"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    parameters: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)     # label -> {path, sha256}
    outputs: dict = field(default_factory=dict)    # label -> {path, sha256}

    def add_input(self, label: str, path) -> None:
        self.inputs[label] = {"path": str(path), "sha256": sha256_file(path)}

    def add_output(self, label: str, path) -> None:
        self.outputs[label] = {"path": Path(path).name, "sha256": sha256_file(path)}

    def to_json(self) -> str:
        doc = {
            "tool": {"name": TOOL_NAME, "version": TOOL_VERSION},
            "command": self.command,
            "parameters": self.parameters,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / f"{self.command}.manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
        return path
