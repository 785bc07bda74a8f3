import hashlib
import json

import pytest

from scicomm_drift.errors import FormatError
from scicomm_drift.manifest import (
    ManifestTimer, RunManifest, file_sha256, read_manifest,
)


def test_file_sha256_matches_hashlib(tmp_path):
    blob = b"alpha\x00beta" * 4097
    path = tmp_path / "blob.bin"
    path.write_bytes(blob)
    assert file_sha256(path) == hashlib.sha256(blob).hexdigest()
    empty = tmp_path / "empty"
    empty.write_bytes(b"")
    assert file_sha256(empty) == hashlib.sha256(b"").hexdigest()


def test_write_read_round_trip(tmp_path):
    src = tmp_path / "in.jsonl"
    src.write_text('{"a": 1}\n', encoding="utf-8")
    out = tmp_path / "out.jsonl"
    out.write_text("result\n", encoding="utf-8")

    manifest = RunManifest(command="pair", config_hash="c" * 64, tool_version="0.1.0")
    with ManifestTimer(manifest):
        manifest.add_input(src)
        manifest.add_output(out)
        manifest.extra["n_pairs"] = 418
    path = tmp_path / "manifest.json"
    manifest.write(path)

    loaded = read_manifest(path)
    assert loaded.command == "pair"
    assert loaded.inputs == {str(src): file_sha256(src)}
    assert loaded.outputs == {str(out): file_sha256(out)}
    assert loaded.extra == {"n_pairs": 418}
    assert loaded.started_at > 0
    assert loaded.wall_seconds >= 0

    data = json.loads(path.read_text(encoding="utf-8"))
    assert list(data) == ["command", "config_hash", "tool_version", "inputs",
                          "outputs", "started_at", "wall_seconds", "extra"]


def test_read_manifest_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(FormatError):
        read_manifest(bad)

    partial = tmp_path / "partial.json"
    partial.write_text(json.dumps({"command": "x", "inputs": {}}), encoding="utf-8")
    with pytest.raises(FormatError) as err:
        read_manifest(partial)
    assert "config_hash" in str(err.value)


def test_timer_measures_elapsed(tmp_path):
    manifest = RunManifest(command="t", config_hash="0", tool_version="0")
    with ManifestTimer(manifest) as inner:
        assert inner is manifest
    assert 0 <= manifest.wall_seconds < 5.0
