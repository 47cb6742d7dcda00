"""Content-hash stage caching.

Each pipeline stage records a manifest (parameter hash, input file hashes,
output file hashes) under <workdir>/manifests/. A stage is skipped when
its manifest matches the current inputs and all outputs are present with
matching hashes; deleting any output forces a re-run, which reproduces it
byte-identically because every stage is deterministic.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Callable, Sequence

from .errors import DataError

log = logging.getLogger("tempo.cache")


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def params_hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _hash_files(workdir: Path, paths: Sequence[Path]) -> dict[str, str]:
    out = {}
    for p in paths:
        out[str(Path(p).relative_to(workdir))] = file_sha256(p)
    return out


def run_stage(
    workdir: Path,
    name: str,
    params: dict,
    inputs: Sequence[Path],
    outputs: Sequence[Path],
    fn: Callable[[], None],
) -> bool:
    """Run fn unless the recorded manifest still matches; True when run."""
    for p in inputs:
        if not Path(p).exists():
            raise DataError(f"stage {name}: missing input {p}")
    manifest_path = workdir / "manifests" / f"{name}.json"
    phash = params_hash(params)
    in_hashes = _hash_files(workdir, inputs)
    if manifest_path.exists():
        try:
            doc = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            doc = None
        if (
            doc
            and doc.get("params") == phash
            and doc.get("inputs") == in_hashes
            and all(Path(p).exists() for p in outputs)
            and _hash_files(workdir, outputs) == doc.get("outputs")
        ):
            log.info("stage %s: up to date, skipping", name)
            return False
    log.info("stage %s: running", name)
    fn()
    for p in outputs:
        if not Path(p).exists():
            raise DataError(f"stage {name} did not produce expected output {p}")
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "stage": name,
        "params": phash,
        "inputs": in_hashes,
        "outputs": _hash_files(workdir, outputs),
    }
    manifest_path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                             encoding="utf-8")
    return True
