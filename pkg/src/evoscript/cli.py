"""Command-line front end.

Three subcommands cover the whole workflow:

* ``train``   - run the optimization loop for a task, writing checkpoints
                and a JSONL metrics log under the output directory;
* ``eval``    - load a checkpoint and score its best policy on a dataset
                split or on environment episodes (no LLM involved);
* ``inspect`` - print the ranked policy table of a checkpoint.

Machine-readable results go to stdout; human logs go to stderr. Exit
codes: 0 success, 2 config/usage error, 3 checkpoint error, 4 gateway
failure, 5 task error, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from .checkpoint import CheckpointError, CheckpointVersionError, load_checkpoint
from .execution import Executor, ExecutorPool, ScriptedExecutor, SubprocessExecutor
from .gateway import FixtureExhausted, GatewayError, build_gateway
from .policies import rerank
from .tasks import Task, TaskError, get_task, task_names
from .training import ConfigError, Trainer, TrainerConfig, evaluate_model

logger = logging.getLogger("evoscript")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_GATEWAY = 4
EXIT_TASK = 5

_EXIT_CODE_HELP = """exit codes:
  0  success
  2  configuration or usage error
  3  checkpoint missing, malformed, or of an unsupported version
  4  gateway (LLM backend) failure
  5  task error
  1  unexpected internal error
"""


def build_executor(task: Task, config: TrainerConfig) -> Executor:
    settings = config.executor
    kind = settings.get("kind", "scripted")
    if kind == "scripted":
        return ScriptedExecutor(table=task.behaviors())
    if kind == "subprocess":
        worker_cmd = settings.get("worker_cmd")
        if not worker_cmd:
            raise ConfigError("executor.worker_cmd is required for the subprocess executor")
        lanes = int(settings.get("lanes", 1))
        grace_ms = int(settings.get("grace_ms", 500))
        # Each worker gets a scratch working directory (containment posture,
        # not a sandbox: see protocol.md).
        return ExecutorPool(
            lambda i: SubprocessExecutor(
                worker_cmd, grace_ms=grace_ms,
                cwd=tempfile.mkdtemp(prefix=f"policy-worker-{i}-"),
            ),
            lanes=lanes,
        )
    raise ConfigError(f"unknown executor kind {kind!r}")


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
        )
        return out.stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _load_config(args) -> TrainerConfig:
    if getattr(args, "config", None):
        config = TrainerConfig.from_file(args.config)
    else:
        config = TrainerConfig()
    overrides: Dict[str, Any] = {}
    if getattr(args, "task", None):
        overrides["task"] = args.task
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        data = config.to_dict()
        data.update(overrides)
        config = TrainerConfig.from_dict(data)
    return config


def cmd_train(args) -> int:
    config = _load_config(args)
    task = get_task(config.task)
    out_dir = Path(args.out)
    manifest_path = out_dir / "run.json"
    if manifest_path.exists() and not args.resume:
        raise ConfigError(
            f"{out_dir} already holds a run; pass --resume <checkpoint> or a fresh --out"
        )
    model = None
    if args.resume:
        model, _ = load_checkpoint(args.resume)
        logger.info("resuming from %s at batch %d", args.resume, model.batch_index)
    gateway = build_gateway(config.gateway)
    executor = build_executor(task, config)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "run_id": out_dir.name,
        "task": task.name,
        "config": str(args.config) if args.config else "defaults",
        "checkpoint_dir": str(out_dir / "checkpoint"),
        "metrics_path": str(out_dir / "metrics.jsonl"),
        "started_at": _now(),
        "ended_at": None,
        "git_describe": _git_describe(),
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    try:
        trainer = Trainer(task, config, gateway, executor, out_dir=out_dir)
        outcome = trainer.train(model)
    finally:
        executor.close()
    manifest["ended_at"] = _now()
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    final = outcome["metrics"][-1] if outcome["metrics"] else {}
    logger.info("training done: %s", final)
    print(json.dumps({"checkpoint_dir": outcome["checkpoint_dir"], "final": final},
                     sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    model, snapshot = load_checkpoint(args.checkpoint)
    data = dict(snapshot)
    if args.task:
        data["task"] = args.task
    if args.seed is not None:
        data["seed"] = args.seed
    config = TrainerConfig.from_dict(data)
    task = get_task(config.task)
    executor = build_executor(task, config)
    try:
        summary = evaluate_model(
            task, config, model, executor, split=args.split, episodes=args.episodes
        )
    finally:
        executor.close()
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _lineage(policies, record) -> List[str]:
    by_id = {p.id: p for p in policies}
    chain = [record.id]
    seen = {record.id}
    current = record
    while current.parent_id and current.parent_id in by_id and current.parent_id not in seen:
        chain.append(current.parent_id)
        seen.add(current.parent_id)
        current = by_id[current.parent_id]
    return list(reversed(chain))  # root first


def cmd_inspect(args) -> int:
    if args.top <= 0:
        raise ConfigError("--top must be positive")
    model, _ = load_checkpoint(args.checkpoint)
    ranked = rerank(model.alive())[: args.top]
    rows = []
    for rank, record in enumerate(ranked, start=1):
        rows.append(
            {
                "rank": rank,
                "id": record.id,
                "priority": record.priority,
                "weight": record.weight,
                "created_at_batch": record.created_at_batch,
                "lineage": _lineage(model.policies, record),
                "script_path": str(Path(args.checkpoint) / "policies" / f"{record.id}.txt"),
            }
        )
    if args.json:
        print(json.dumps({"policies": rows}, sort_keys=True))
    else:
        for row in rows:
            print(
                f"#{row['rank']:<3} {row['id']}  P={row['priority']:.6g}  "
                f"W={row['weight']:.6g}  lineage={' -> '.join(row['lineage'])}"
            )
            print(f"     script: {row['script_path']}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evoscript",
        description="Evolutionary optimization of LLM-generated policy scripts.",
        epilog=_EXIT_CODE_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run the training loop",
                           epilog=_EXIT_CODE_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    train.add_argument("--task", choices=task_names(), help="task pack (overrides config)")
    train.add_argument("--config", help="JSON config file")
    train.add_argument("--out", required=True, help="output directory for this run")
    train.add_argument("--resume", help="checkpoint directory to resume from")
    train.add_argument("--seed", type=int, help="seed override")
    train.set_defaults(func=cmd_train)

    evaluate = sub.add_parser("eval", help="evaluate a checkpoint (no LLM needed)")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--task", choices=task_names(), help="override the checkpoint task")
    evaluate.add_argument("--split", default="val", choices=["train", "val"])
    evaluate.add_argument("--episodes", type=int, default=10)
    evaluate.add_argument("--seed", type=int, default=None)
    evaluate.set_defaults(func=cmd_eval)

    inspect = sub.add_parser("inspect", help="print the ranked policy table")
    inspect.add_argument("--checkpoint", required=True)
    inspect.add_argument("--top", type=int, default=10)
    inspect.add_argument("--json", action="store_true")
    inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", force=True,
    )
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TaskError) as exc:
        kind = EXIT_TASK if isinstance(exc, TaskError) else EXIT_CONFIG
        logger.error("%s", exc)
        return kind
    except (CheckpointVersionError, CheckpointError) as exc:
        logger.error("%s", exc)
        return EXIT_CHECKPOINT
    except (FixtureExhausted, GatewayError) as exc:
        logger.error("gateway failure: %s", exc)
        return EXIT_GATEWAY
    except Exception:  # pragma: no cover - the catch-all for CI visibility
        logger.exception("unexpected error")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
