# utils/manifest.py
"""Run manifest: config echo, version, seeds, timestamps and input digests."""
import json
import logging
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

from utils.errors import CheckpointError

ARTIFACT_VERSION = "1.0.0"
MANIFEST_NAME = "manifest.json"


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def build_manifest(config, store_digest: Optional[str] = None) -> Dict[str, Any]:
    return {
        "artifact_version": ARTIFACT_VERSION,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seeds": {"run": config.run.seed, "knn": config.knn.seed},
        "generations": {
            "seed": config.seed_generations,
            "evolution": config.evolution_generations,
            "total": config.total_generations,
        },
        "digests": {"refdb": store_digest},
        "timestamps": {"created": _now(), "updated": _now()},
    }


def save_manifest(run_dir, manifest: Dict[str, Any]) -> Path:
    path = Path(run_dir) / MANIFEST_NAME
    os.makedirs(path.parent, exist_ok=True)
    manifest["timestamps"]["updated"] = _now()
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2)
    logging.debug(f"[Manifest] Saved {path}")
    return path


def load_manifest(run_dir) -> Dict[str, Any]:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.is_file():
        raise CheckpointError(f"no manifest in {run_dir}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def verify_manifest(manifest: Dict[str, Any], config, store_digest: Optional[str]) -> None:
    """Resume guard: the config hash and reference digest must match the recorded ones."""
    if manifest.get("config_hash") != config.config_hash():
        raise CheckpointError("config hash differs from the run manifest")
    recorded = manifest.get("digests", {}).get("refdb")
    if recorded != store_digest:
        raise CheckpointError(f"reference store digest {store_digest} differs from recorded {recorded}")
