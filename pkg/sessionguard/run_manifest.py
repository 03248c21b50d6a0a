"""
PR 10 — Run Manifest

Verifies a run's artifacts and records how they were produced.

Creates:
- <out_dir>/manifest.json with
  - artifacts: name, size_bytes, status (ready | missing | error)
  - inputs: path and git-style blob hash of every input file
  - config_digest, seeds, command of the latest stage
  - stages: the same fields per command (ingest, train, evaluate, ...)
  - metadata.timestamp (the only timestamp a run writes)
"""

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence


class RunManifestError(Exception):
    """Raised when a manifest cannot be built"""
    pass


MANIFEST_NAME = "manifest.json"

# Never listed as artifacts
_EXCLUDED = {MANIFEST_NAME, "events.log", "events.1.log"}


def git_blob_sha1(path: Path) -> str:
    """Hash that `git hash-object` would report for the file."""
    data = Path(path).read_bytes()
    header = f"blob {len(data)}\0".encode("utf-8")
    return hashlib.sha1(header + data).hexdigest()


def _artifact_entry(path: Path) -> Dict:
    entry: Dict = {"name": path.name, "size_bytes": path.stat().st_size, "status": "ready"}
    if path.suffix == ".json":
        try:
            with open(path, "r", encoding="utf-8") as f:
                json.load(f)
        except Exception as e:
            entry["status"] = "error"
            entry["error"] = f"Invalid JSON: {str(e)}"
    return entry


def _previous_stages(out_dir: Path) -> Dict[str, Dict]:
    """Stage entries of an existing manifest; an unreadable one contributes none."""
    path = out_dir / MANIFEST_NAME
    if not path.exists():
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            stages = json.load(f).get("stages", {})
    except (OSError, json.JSONDecodeError, AttributeError):
        return {}
    return stages if isinstance(stages, dict) else {}


def build_manifest(
    out_dir: Path,
    command: str,
    config_digest: str,
    seeds: Sequence[int],
    inputs: Sequence[Path] = (),
    required: Sequence[str] = (),
    extra: Optional[Dict] = None,
) -> Dict:
    """
    Scan out_dir, hash the inputs and write manifest.json.

    Each command keeps its own entry under "stages", so evaluate does not
    erase what train recorded. Required artifacts of every recorded stage
    count towards the status.

    Args:
        out_dir: Run output directory
        command: CLI command that produced the run
        config_digest: RunConfig digest
        seeds: Seeds trained or evaluated
        inputs: Input files (corpora, model artifacts) to fingerprint
        required: Artifact names that must exist; absent ones are listed as missing
        extra: Additional top-level fields

    Returns:
        Dict with manifest content; status COMPLETED or INCOMPLETE
    """
    out_dir = Path(out_dir)
    if not out_dir.exists():
        raise RunManifestError(f"Run directory not found: {out_dir}")

    artifacts: List[Dict] = [
        _artifact_entry(p) for p in sorted(out_dir.iterdir())
        if p.is_file() and p.name not in _EXCLUDED
    ]
    fingerprints = []
    for path in inputs:
        path = Path(path)
        if not path.exists():
            raise RunManifestError(f"input not found: {path}")
        fingerprints.append({"path": str(path), "git_blob_sha1": git_blob_sha1(path)})

    stages = _previous_stages(out_dir)
    stages[command] = {
        "config_digest": config_digest,
        "seeds": list(seeds),
        "inputs": fingerprints,
        "required": list(required),
    }
    present = {a["name"] for a in artifacts}
    wanted = list(required) + [name for stage in stages.values() for name in stage.get("required", [])]
    missing = [name for name in dict.fromkeys(wanted) if name not in present]
    artifacts.extend({"name": name, "status": "missing"} for name in missing)

    broken = [a["name"] for a in artifacts if a["status"] != "ready"]
    manifest = {
        "status": "INCOMPLETE" if broken else "COMPLETED",
        "command": command,
        "config_digest": config_digest,
        "seeds": list(seeds),
        "inputs": fingerprints,
        "artifacts": artifacts,
        "missing_required": missing,
        "stages": stages,
        "metadata": {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "total_artifacts": len(present),
        },
    }
    if extra:
        manifest.update(extra)

    with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, ensure_ascii=False, sort_keys=True)
    return manifest


def load_manifest(out_dir: Path) -> Dict:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        raise RunManifestError(f"Manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


__all__ = [
    "RunManifestError",
    "MANIFEST_NAME",
    "git_blob_sha1",
    "build_manifest",
    "load_manifest",
]
