"""Run manifests: what a pipeline step read, wrote, and ran with."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hash: str
    tool_version: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    started_at: float = 0.0
    wall_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def add_input(self, path: str | Path) -> None:
        self.inputs[str(path)] = file_sha256(path)

    def add_output(self, path: str | Path) -> None:
        self.outputs[str(path)] = file_sha256(path)

    def write(self, path: str | Path) -> None:
        payload = {
            "command": self.command,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "started_at": self.started_at,
            "wall_seconds": self.wall_seconds,
            "extra": self.extra,
        }
        Path(path).write_text(
            json.dumps(payload, indent=2, sort_keys=False, ensure_ascii=False) + "\n",
            encoding="utf-8")


class ManifestTimer:
    """Context manager stamping start time and wall time onto a manifest."""

    def __init__(self, manifest: RunManifest):
        self.manifest = manifest

    def __enter__(self) -> RunManifest:
        self.manifest.started_at = time.time()
        self._t0 = time.monotonic()
        return self.manifest

    def __exit__(self, *exc) -> None:
        self.manifest.wall_seconds = time.monotonic() - self._t0


def read_manifest(path: str | Path) -> RunManifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from None
    required = {"command", "config_hash", "tool_version", "inputs", "outputs"}
    missing = required - set(data)
    if missing:
        raise FormatError(f"{path}: manifest missing keys {sorted(missing)}")
    return RunManifest(
        command=data["command"],
        config_hash=data["config_hash"],
        tool_version=data["tool_version"],
        inputs=dict(data["inputs"]),
        outputs=dict(data["outputs"]),
        started_at=float(data.get("started_at", 0.0)),
        wall_seconds=float(data.get("wall_seconds", 0.0)),
        extra=dict(data.get("extra", {})),
    )
