"""Run manifests: what a command wrote, hashed for later verification."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_manifest(path, config_text: str, tool_version: str, seed,
                   stages: list[dict]) -> Path:
    """Write the manifest once, at the end of a run.

    ``stages`` entries carry name, wall_clock_s, and the files written;
    every file is re-stat'ed and hashed here, so the manifest can only
    reference files that exist.
    """
    path = Path(path)
    doc = {
        "config_sha256": sha256_text(config_text),
        "tool_version": tool_version,
        "seed": seed,
        "stages": [],
    }
    for stage in stages:
        files = []
        for fp in stage["files"]:
            fp = Path(fp)
            files.append({
                "path": fp.name,
                "sha256": sha256_file(fp),
                "bytes": fp.stat().st_size,
            })
        doc["stages"].append({
            "name": stage["name"],
            "wall_clock_s": stage["wall_clock_s"],
            "files": files,
        })
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def verify_manifest(path) -> list[str]:
    """Re-hash every listed file; returns a list of problems (empty = ok)."""
    path = Path(path)
    with open(path) as f:
        doc = json.load(f)
    problems = []
    for stage in doc.get("stages", []):
        for entry in stage.get("files", []):
            fp = path.parent / entry["path"]
            if not fp.exists():
                problems.append(f"missing file {entry['path']}")
                continue
            if sha256_file(fp) != entry["sha256"]:
                problems.append(f"hash mismatch for {entry['path']}")
            elif fp.stat().st_size != entry["bytes"]:
                problems.append(f"size mismatch for {entry['path']}")
    return problems
