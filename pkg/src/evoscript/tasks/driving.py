"""Driving-objective task backed by logged record fixtures.

Each record carries the scene description handed to the policy (ego and
nearby actor states in world coordinates, distances to the next red light
and stop sign, the target waypoint), the expert action label, the behavior
action that actually drove during logging, and an infraction flag. The
policy must return a categorical speed level and a turning angle; speed
levels map to target speeds of MOVE=6, SLOW=1, STOP=0 m/s.

Fixtures are JSON-lines files. Loading validates the schema and reports
the offending line number; serialization is canonical so a load/dump
round-trip is byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from ..objectives import DrivingAction
from ..replay import ORIGINS, Sample

SPEED_LEVEL_MPS = {"MOVE": 6.0, "SLOW": 1.0, "STOP": 0.0}
MPS_SPEED_LEVEL = {v: k for k, v in SPEED_LEVEL_MPS.items()}

_ACTOR_FIELDS = ("location", "orientation_deg", "speed_mps", "length_m", "width_m")


class DrivingSchemaError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line


def speed_level_to_mps(level: str) -> float:
    if level not in SPEED_LEVEL_MPS:
        raise DrivingSchemaError(f"unknown speed level {level!r}")
    return SPEED_LEVEL_MPS[level]


def mps_to_speed_level(speed: float) -> str:
    if speed not in MPS_SPEED_LEVEL:
        raise DrivingSchemaError(f"no speed level maps to {speed!r} m/s")
    return MPS_SPEED_LEVEL[speed]


def _check_actor(raw: Any, line: int, label: str) -> Dict[str, Any]:
    if not isinstance(raw, dict):
        raise DrivingSchemaError(f"{label} must be an object", line)
    for key in _ACTOR_FIELDS:
        if key not in raw:
            raise DrivingSchemaError(f"{label} is missing field {key!r}", line)
    loc = raw["location"]
    if not isinstance(loc, list) or len(loc) != 2:
        raise DrivingSchemaError(f"{label}.location must be [x, y]", line)
    for key in ("orientation_deg", "speed_mps", "length_m", "width_m"):
        if not isinstance(raw[key], (int, float)) or isinstance(raw[key], bool):
            raise DrivingSchemaError(f"{label}.{key} must be a number", line)
    return raw


def _check_action(raw: Any, line: int, label: str) -> DrivingAction:
    if not isinstance(raw, dict):
        raise DrivingSchemaError(f"{label} must be an object", line)
    level = raw.get("speed_level")
    if level not in SPEED_LEVEL_MPS:
        raise DrivingSchemaError(
            f"{label}.speed_level must be one of {sorted(SPEED_LEVEL_MPS)}, got {level!r}", line
        )
    angle = raw.get("angle_deg", 0.0)
    if not isinstance(angle, (int, float)) or isinstance(angle, bool):
        raise DrivingSchemaError(f"{label}.angle_deg must be a number", line)
    return DrivingAction(speed_level=level, angle_deg=float(angle))


def record_to_sample(record: Dict[str, Any], line: int = 0) -> Sample:
    if not isinstance(record, dict):
        raise DrivingSchemaError("record must be an object", line)
    raw_input = record.get("input")
    if not isinstance(raw_input, dict):
        raise DrivingSchemaError("record is missing the input object", line)
    _check_actor(raw_input.get("ego"), line, "input.ego")
    actors = raw_input.get("actors", [])
    if not isinstance(actors, list):
        raise DrivingSchemaError("input.actors must be a list", line)
    for i, actor in enumerate(actors):
        _check_actor(actor, line, f"input.actors[{i}]")
        if actor.get("kind") not in ("vehicle", "pedestrian"):
            raise DrivingSchemaError(
                f"input.actors[{i}].kind must be 'vehicle' or 'pedestrian'", line
            )
    for key in ("distance_to_red_light_m", "distance_to_stop_sign_m"):
        value = raw_input.get(key)
        if value is not None and (not isinstance(value, (int, float)) or isinstance(value, bool)):
            raise DrivingSchemaError(f"input.{key} must be a number or null", line)
    waypoint = raw_input.get("target_waypoint")
    if not isinstance(waypoint, list) or len(waypoint) != 2:
        raise DrivingSchemaError("input.target_waypoint must be [x, y]", line)

    if "expert_action" not in record:
        raise DrivingSchemaError("record is missing expert_action", line)
    expert = _check_action(record["expert_action"], line, "expert_action")
    behavior = None
    if record.get("behavior_action") is not None:
        behavior = _check_action(record["behavior_action"], line, "behavior_action")
    infraction = record.get("infraction", False)
    if not isinstance(infraction, bool):
        raise DrivingSchemaError("infraction must be a boolean", line)
    if infraction and behavior is None:
        raise DrivingSchemaError("infraction records need a behavior_action", line)
    origin = record.get("origin", "offline")
    if origin not in ORIGINS:
        raise DrivingSchemaError(f"origin must be one of {ORIGINS}, got {origin!r}", line)
    exception_hint = record.get("exception_hint", False)
    if not isinstance(exception_hint, bool):
        raise DrivingSchemaError("exception_hint must be a boolean", line)
    return Sample(
        input=raw_input,
        expert_action=expert,
        behavior_action=behavior,
        infraction=infraction,
        exception_hint=exception_hint,
        origin=origin,
    )


def sample_to_record(sample: Sample) -> Dict[str, Any]:
    action = lambda a: None if a is None else {
        "speed_level": a.speed_level,
        "angle_deg": a.angle_deg,
    }
    return {
        "input": sample.input,
        "expert_action": action(sample.expert_action),
        "behavior_action": action(sample.behavior_action),
        "infraction": sample.infraction,
        "exception_hint": sample.exception_hint,
        "origin": sample.origin,
    }


def load_driving_fixtures(path: Union[str, Path]) -> List[Sample]:
    """Parse and validate a JSON-lines fixture file."""
    path = Path(path)
    samples = []
    with path.open(encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except ValueError as exc:
                raise DrivingSchemaError(f"invalid JSON: {exc}", line_number) from exc
            samples.append(record_to_sample(record, line_number))
    if not samples:
        raise DrivingSchemaError(f"empty dataset: {path}")
    return samples


def dump_driving_fixtures(samples: List[Sample]) -> str:
    """Canonical JSONL form; load followed by dump is byte-identical."""
    lines = [
        json.dumps(sample_to_record(s), sort_keys=True, separators=(",", ":"),
                   allow_nan=False, ensure_ascii=False)
        for s in samples
    ]
    return "\n".join(lines) + "\n"
