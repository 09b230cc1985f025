"""Checkpoint save/load.

A checkpoint is a plain directory:

    setup.pt         - setup prompt template source
    update.pt        - update prompt template source
    policies/<id>.txt  - scripts of live policies
    retired/<id>.txt   - scripts of dead policies (kept for provenance)
    tracker.json     - per-policy statistics (priority, weight, lineage)
    config.json      - config snapshot of the run that wrote it
    manifest.json    - {"format_version": ..., "batch_index": ...}

Everything is text or canonical JSON, so checkpoints are diffable, small
(hundreds of kilobytes), and bit-stable: save -> load -> save reproduces
tracker.json byte for byte, and reloading preserves priorities, weights,
and the rank order exactly. Loading never needs a gateway, which is what
makes LLM-free inference possible.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

from .policies import PolicyRecord

FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class PolicyModel:
    """Prompts plus the policy population: everything training mutates."""

    setup_template: str
    update_template: str
    policies: List[PolicyRecord] = field(default_factory=list)
    batch_index: int = 0

    def alive(self) -> List[PolicyRecord]:
        return [p for p in self.policies if p.alive]


def _dump_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + "\n"


def save_checkpoint(
    model: PolicyModel, config_snapshot: Dict[str, Any], directory: Union[str, Path]
) -> Path:
    """Write the checkpoint atomically (build aside, then swap)."""
    target = Path(directory)
    staging = target.parent / (target.name + ".tmp")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    (staging / "setup.pt").write_text(model.setup_template, encoding="utf-8")
    (staging / "update.pt").write_text(model.update_template, encoding="utf-8")
    (staging / "policies").mkdir()
    (staging / "retired").mkdir()
    tracker: Dict[str, Any] = {}
    for record in model.policies:
        if record.id in tracker:
            raise CheckpointError(f"duplicate policy id {record.id}")
        tracker[record.id] = {
            "priority": record.priority,
            "weight": record.weight,
            "created_at_batch": record.created_at_batch,
            "parent_id": record.parent_id,
            "alive": record.alive,
        }
        subdir = "policies" if record.alive else "retired"
        (staging / subdir / f"{record.id}.txt").write_text(record.script, encoding="utf-8")
    (staging / "tracker.json").write_text(_dump_json({"policies": tracker}), encoding="utf-8")
    (staging / "config.json").write_text(_dump_json(config_snapshot), encoding="utf-8")
    (staging / "manifest.json").write_text(
        _dump_json({"format_version": FORMAT_VERSION, "batch_index": model.batch_index}),
        encoding="utf-8",
    )
    if target.exists():
        old = target.parent / (target.name + ".old")
        if old.exists():
            shutil.rmtree(old)
        target.rename(old)
        staging.rename(target)
        shutil.rmtree(old)
    else:
        staging.rename(target)
    return target


def _load_json(path: Path) -> Any:
    if not path.is_file():
        raise CheckpointError(f"missing checkpoint file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"malformed JSON in {path}: {exc}") from exc


def load_checkpoint(directory: Union[str, Path]) -> Tuple[PolicyModel, Dict[str, Any]]:
    """Rebuild (model, config snapshot) from a checkpoint directory."""
    root = Path(directory)
    if not root.is_dir():
        raise CheckpointError(f"checkpoint directory not found: {root}")
    manifest = _load_json(root / "manifest.json")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format_version {version!r} is not supported (expected {FORMAT_VERSION})"
        )
    tracker = _load_json(root / "tracker.json")
    config = _load_json(root / "config.json")
    for name in ("setup.pt", "update.pt"):
        if not (root / name).is_file():
            raise CheckpointError(f"missing checkpoint file: {root / name}")
    policies = []
    entries = tracker.get("policies", {})
    for policy_id in sorted(entries):
        stats = entries[policy_id]
        subdir = "policies" if stats.get("alive", True) else "retired"
        script_path = root / subdir / f"{policy_id}.txt"
        if not script_path.is_file():
            raise CheckpointError(
                f"tracker references {policy_id} but {script_path} does not exist"
            )
        policies.append(
            PolicyRecord(
                id=policy_id,
                script=script_path.read_text(encoding="utf-8"),
                priority=float(stats["priority"]),
                weight=float(stats["weight"]),
                created_at_batch=int(stats["created_at_batch"]),
                parent_id=stats.get("parent_id"),
                alive=bool(stats.get("alive", True)),
            )
        )
    model = PolicyModel(
        setup_template=(root / "setup.pt").read_text(encoding="utf-8"),
        update_template=(root / "update.pt").read_text(encoding="utf-8"),
        policies=policies,
        batch_index=int(manifest.get("batch_index", 0)),
    )
    return model, config
