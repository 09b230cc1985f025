"""Training orchestration.

One training step mirrors a gradient step, with scripts for parameters:

1. forward: run every live policy on the batch and score each prediction
   (exception/timeout/protocol failures score the exception penalty);
2. backward: fold the per-sample scores into each policy's priority;
3. update: rerank, keep the top ``n_keep``, ask the gateway for
   ``n_responses`` rewrites of each of the top ``n_update`` policies
   (feeding back that policy's worst-scoring sample, its prints, and its
   exception trace), evaluate the newcomers on the same batch, rerank.

A checkpoint is saved after every batch, and a JSONL metrics line records
the population's best/mean priority. The update step is transactional: if
the gateway fails after retries, the model is left untouched.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .checkpoint import PolicyModel, save_checkpoint
from .execution import (
    DEFAULT_TIMEOUT_MS,
    ExecutionRequest,
    ExecutionResult,
    Executor,
)
from .gateway import ChatMessage, Gateway, GatewayError, extract_code
from .objectives import EPISODIC_RETURN, MIXED_IL_RL, SUPERVISED, score_mixed_il_rl
from .policies import (
    BatchScores,
    PolicyRecord,
    best_policy,
    make_policy_id,
    rerank,
    script_hash,
    select,
    update_priority,
)
from .replay import ReplayBuffer, Sample
from .templates import (
    TemplateDir,
    TemplateError,
    parse as parse_template,
    render as render_template,
)
from .tasks import PROMPTS_ROOT, Task

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    pass


@dataclass
class TrainerConfig:
    task: str = "sudoku"
    n_update: int = 2
    n_responses: int = 2
    n_keep: int = 20
    n_initial: int = 0  # 0 means: use n_responses
    gamma: Optional[float] = None  # None means: the task's default
    batch_size: int = 10
    max_batches: int = 5
    exception_penalty: float = -10.0
    infraction_penalty: float = -10.0
    angle_penalty: float = -10.0
    theta_max_deg: float = 10.0
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    seed: int = 0
    episodes_per_eval: int = 5
    max_episode_steps: int = 500
    cut_on_infraction: bool = True
    task_params: Dict[str, Any] = field(default_factory=dict)
    gateway: Dict[str, Any] = field(default_factory=dict)
    executor: Dict[str, Any] = field(default_factory=dict)
    replay: Dict[str, Any] = field(default_factory=dict)
    prompt_root: Optional[str] = None

    def __post_init__(self):
        if self.n_update < 1 or self.n_responses < 1 or self.n_keep < 1:
            raise ConfigError("n_update, n_responses and n_keep must be >= 1")
        if self.n_update > self.n_keep:
            raise ConfigError("n_update must be <= n_keep")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainerConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "TrainerConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def resolved_gamma(self, task: Task) -> float:
        return task.default_gamma if self.gamma is None else self.gamma

    def resolved_n_initial(self) -> int:
        return self.n_initial or self.n_responses


@dataclass
class EpisodeTrace:
    """What the update prompt gets to see about one rollout."""

    episode_return: float
    lines: List[str]
    termination: str
    exception: Optional[Dict[str, str]] = None
    prints: List[str] = field(default_factory=list)


class Trainer:
    def __init__(
        self,
        task: Task,
        config: TrainerConfig,
        gateway: Optional[Gateway],
        executor: Executor,
        out_dir: Optional[Path] = None,
    ):
        self.task = task
        self.config = config
        self.gateway = gateway
        self.executor = executor
        self.out_dir = Path(out_dir) if out_dir else None
        self.objective = task.objective(config)
        self.gamma = config.resolved_gamma(task)
        self.temperature = float(config.gateway.get("temperature", 1.0))
        prompt_root = Path(config.prompt_root) if config.prompt_root else PROMPTS_ROOT
        self.templates = TemplateDir(prompt_root)
        self.n_queries = 0

    # -- model lifecycle ----------------------------------------------------

    def new_model(self) -> PolicyModel:
        return PolicyModel(
            setup_template=self.templates.source(f"{self.task.name}/setup"),
            update_template=self.templates.source(f"{self.task.name}/update"),
        )

    def _complete(self, messages: List[ChatMessage], n: int) -> List[str]:
        if self.gateway is None:
            raise GatewayError("no gateway configured (inference-only mode)")
        responses = self.gateway.complete(
            messages, n=n, temperature=self.temperature, seed=self.config.seed
        )
        self.n_queries += 1
        return [r.text for r in responses]

    def setup_prompt(self) -> List[ChatMessage]:
        tpl = parse_template(self._model.setup_template, f"{self.task.name}/setup")
        text = render_template(tpl, self.task.setup_bindings(), resolver=self.templates.source)
        return [ChatMessage("user", text)]

    def initialize_policies(self, model: PolicyModel) -> None:
        """Generate the initial population from the setup prompt."""
        self._model = model
        texts = self._complete(self.setup_prompt(), self.config.resolved_n_initial())
        records = self._records_from_responses(texts, model, parent=None)
        model.policies.extend(records)
        if not records:
            raise GatewayError("setup produced no usable policy scripts")

    def _records_from_responses(
        self, texts: Sequence[str], model: PolicyModel, parent: Optional[PolicyRecord]
    ) -> List[PolicyRecord]:
        seen = {script_hash(p.script) for p in model.alive()}
        records = []
        for text in texts:
            try:
                script = extract_code(text)
            except GatewayError as exc:
                logger.warning("dropping unusable response: %s", exc)
                continue
            digest = script_hash(script)
            if digest in seen:
                continue
            seen.add(digest)
            records.append(
                PolicyRecord(
                    id=make_policy_id(model.batch_index, script),
                    script=script,
                    created_at_batch=model.batch_index,
                    parent_id=parent.id if parent else None,
                )
            )
        return records

    # -- forward / backward --------------------------------------------------

    def forward_batch(
        self, policies: Sequence[PolicyRecord], batch: Sequence[Sample], batch_index: int
    ) -> Tuple[BatchScores, Dict[str, List[ExecutionResult]]]:
        """Score matrix over (policies x samples) plus raw execution results."""
        if not batch:
            raise ConfigError("empty batch")
        scores: Dict[str, List[float]] = {}
        results: Dict[str, List[ExecutionResult]] = {}
        for policy in policies:
            policy_results = self.executor.run_batch(
                policy.script,
                [s.input for s in batch],
                timeout_ms=self.config.timeout_ms,
                entrypoint=self.task.entrypoint,
                request_prefix=f"b{batch_index:04d}-{policy.id}",
            )
            results[policy.id] = policy_results
            scores[policy.id] = [
                self._score_sample(sample, result) for sample, result in zip(batch, policy_results)
            ]
        return BatchScores(batch_index, scores, len(batch)), results

    def _score_sample(self, sample: Sample, result: ExecutionResult) -> float:
        if self.objective.kind == SUPERVISED:
            if not result.ok:
                return self.objective.exception_penalty
            return self.task.score(result.output, sample)
        if self.objective.kind == MIXED_IL_RL:
            action = self.task.parse_action(result.output) if result.ok else None
            return score_mixed_il_rl(
                self.objective,
                action,
                sample.expert_action,
                sample.behavior_action,
                sample.infraction,
                had_exception=not result.ok,
            )
        raise ConfigError(f"objective {self.objective.kind} does not score dataset samples")

    def backward(self, model: PolicyModel, batch_scores: BatchScores) -> None:
        """Fold batch scores into each scored policy's (P, W)."""
        updated = {}
        for policy_id, values in batch_scores.scores.items():
            record = next(p for p in model.policies if p.id == policy_id)
            updated[policy_id] = update_priority(record, values, self.gamma)
        model.policies = [updated.get(p.id, p) for p in model.policies]

    # -- environment rollouts -------------------------------------------------

    def _episode_seed(self, batch_index: int, episode: int) -> int:
        return self.config.seed * 1_000_003 + batch_index * 1_000 + episode

    def evaluate_in_env(
        self, policy: PolicyRecord, episodes: int, batch_index: int
    ) -> List[EpisodeTrace]:
        if episodes < 1:
            raise ConfigError("episodes must be >= 1")
        traces = []
        for episode in range(episodes):
            traces.append(self._rollout(policy, self._episode_seed(batch_index, episode)))
        return traces

    def _rollout(self, policy: PolicyRecord, seed: int) -> EpisodeTrace:
        env = self.task.make_env()
        observation = env.reset(seed)
        lines = [_format_state("initial:", observation)]
        total = 0.0
        termination = f"survived the full {self.config.max_episode_steps} steps"
        exception = None
        prints: List[str] = []
        for step in range(self.config.max_episode_steps):
            request = ExecutionRequest(
                request_id=f"ep{seed}-{step:04d}",
                script=policy.script,
                entrypoint=self.task.entrypoint,
                input=observation,
                timeout_ms=self.config.timeout_ms,
            )
            result = self.executor.run(request)
            prints = result.prints or prints
            if not result.ok:
                total += self.objective.exception_penalty
                termination = f"policy failed with status {result.status} at step {step}"
                exception = result.exception.to_dict() if result.exception else None
                lines.append(f"step {step:4d}: <{result.status}>")
                break
            action = result.output
            if action not in (0, 1):
                total += self.objective.exception_penalty
                termination = f"policy returned invalid action {action!r} at step {step}"
                lines.append(f"step {step:4d}: action={action!r} (invalid)")
                break
            observation, reward, done = env.step(action)
            total += reward
            lines.append(_format_state(f"step {step:4d}: action={action} ->", observation))
            if done:
                if step + 1 < self.config.max_episode_steps:
                    termination = f"episode ended after {step + 1} steps (pole or track limit)"
                break
        return EpisodeTrace(
            episode_return=total,
            lines=_head_tail(lines, 10),
            termination=termination,
            exception=exception,
            prints=prints,
        )

    def forward_batch_env(
        self, policies: Sequence[PolicyRecord], batch_index: int
    ) -> Tuple[BatchScores, Dict[str, EpisodeTrace]]:
        episodes = self.config.episodes_per_eval
        scores: Dict[str, List[float]] = {}
        worst: Dict[str, EpisodeTrace] = {}
        for policy in policies:
            traces = self.evaluate_in_env(policy, episodes, batch_index)
            scores[policy.id] = [t.episode_return for t in traces]
            worst[policy.id] = min(traces, key=lambda t: t.episode_return)
        return BatchScores(batch_index, scores, episodes), worst

    # -- update step -----------------------------------------------------------

    def build_update_prompt(
        self, policy: PolicyRecord, worst: Dict[str, Any]
    ) -> List[ChatMessage]:
        bindings = dict(self.task.setup_bindings())
        bindings.update(
            {
                "script": policy.script,
                "score": worst.get("score"),
                "input": worst.get("input"),
                "output": worst.get("output"),
                "has_output": worst.get("has_output", False),
                "expected": worst.get("expected"),
                "exception": worst.get("exception"),
                "prints": worst.get("prints", []),
                "trace_lines": worst.get("trace_lines", []),
                "termination": worst.get("termination"),
            }
        )
        try:
            tpl = parse_template(self._model.update_template, f"{self.task.name}/update")
            text = render_template(tpl, bindings, resolver=self.templates.source)
        except TemplateError as exc:
            raise TemplateError(f"update prompt for policy {policy.id}: {exc}") from exc
        return [ChatMessage("user", text)]

    def _worst_from_dataset(
        self,
        policy: PolicyRecord,
        batch: Sequence[Sample],
        scores: List[float],
        results: List[ExecutionResult],
    ) -> Dict[str, Any]:
        index = min(range(len(scores)), key=lambda i: scores[i])  # ties: first index
        sample, result = batch[index], results[index]
        expected = sample.expected
        if expected is None and sample.expert_action is not None:
            expected = {
                "speed_level": sample.expert_action.speed_level,
                "angle_deg": sample.expert_action.angle_deg,
            }
        return {
            "score": scores[index],
            "input": sample.input,
            "output": result.output if result.ok else None,
            "has_output": result.ok,
            "expected": expected,
            "exception": result.exception.to_dict() if result.exception else None,
            "prints": result.prints,
        }

    def _worst_from_env(self, trace: EpisodeTrace) -> Dict[str, Any]:
        return {
            "score": trace.episode_return,
            "input": None,
            "output": None,
            "has_output": False,
            "expected": None,
            "exception": trace.exception,
            "prints": trace.prints,
            "trace_lines": trace.lines,
            "termination": trace.termination,
        }

    def update_step(
        self,
        model: PolicyModel,
        batch: Optional[Sequence[Sample]],
        batch_scores: BatchScores,
        worst_info: Dict[str, Dict[str, Any]],
    ) -> int:
        """Rerank, keep, rewrite, evaluate newcomers. Returns newcomer count.

        All gateway traffic happens before the model is touched, so a
        gateway failure aborts the step with the model unchanged.
        """
        config = self.config
        ranked = rerank(model.alive())
        to_update = ranked[: config.n_update]
        response_batches = []
        for policy in to_update:
            prompt = self.build_update_prompt(policy, worst_info[policy.id])
            response_batches.append((policy, self._complete(prompt, config.n_responses)))

        # Gateway traffic is done; mutate the population.
        select(ranked, config.n_keep, config.n_update)
        new_records: List[PolicyRecord] = []
        for parent, texts in response_batches:
            records = self._records_from_responses(texts, model, parent)
            new_records.extend(records)
            model.policies.extend(records)
        if new_records:
            if self.objective.kind == EPISODIC_RETURN:
                new_scores, _ = self.forward_batch_env(new_records, batch_scores.batch_index)
            else:
                new_scores, _ = self.forward_batch(
                    new_records, batch, batch_scores.batch_index
                )
            self.backward(model, new_scores)
        n_alive = len(model.alive())
        bound = config.n_keep + config.n_update * config.n_responses
        assert n_alive <= bound, f"population {n_alive} exceeds bound {bound}"
        return len(new_records)

    # -- train loop --------------------------------------------------------------

    def train(self, model: Optional[PolicyModel] = None) -> Dict[str, Any]:
        config = self.config
        checkpoint_dir = metrics_path = None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            checkpoint_dir = self.out_dir / "checkpoint"
            metrics_path = self.out_dir / "metrics.jsonl"
            if model is None and metrics_path.exists():
                metrics_path.unlink()

        if model is None:
            model = self.new_model()
        self._model = model
        if not model.policies:
            self.initialize_policies(model)

        batches = self._batch_source(model)
        metrics: List[Dict[str, Any]] = []
        first_batch = model.batch_index + 1
        for batch_index in range(first_batch, first_batch + config.max_batches):
            model.batch_index = batch_index
            alive = rerank(model.alive())
            if self.objective.kind == EPISODIC_RETURN:
                batch = None
                batch_scores, worst_traces = self.forward_batch_env(alive, batch_index)
                worst_info = {
                    pid: self._worst_from_env(trace) for pid, trace in worst_traces.items()
                }
            else:
                batch = next(batches)
                batch_scores, results = self.forward_batch(alive, batch, batch_index)
                worst_info = {
                    p.id: self._worst_from_dataset(
                        p, batch, batch_scores.scores[p.id], results[p.id]
                    )
                    for p in alive
                }
            self.backward(model, batch_scores)
            self.update_step(model, batch, batch_scores, worst_info)

            line = self._metrics_line(model, batch_index)
            metrics.append(line)
            if checkpoint_dir:
                save_checkpoint(model, config.to_dict(), checkpoint_dir)
                with metrics_path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps(line, sort_keys=True) + "\n")

        return {
            "model": model,
            "metrics": metrics,
            "checkpoint_dir": str(checkpoint_dir) if checkpoint_dir else None,
            "metrics_path": str(metrics_path) if metrics_path else None,
        }

    def _metrics_line(self, model: PolicyModel, batch_index: int) -> Dict[str, Any]:
        alive = model.alive()
        priorities = [p.priority for p in alive]
        return {
            "k": batch_index,
            "best_P": max(priorities),
            "mean_P": sum(priorities) / len(priorities),
            "n_policies": len(alive),
            "n_queries": self.n_queries,
        }

    def _batch_source(self, model: PolicyModel):
        """Yields training batches; None-based env tasks never call this."""
        if self.objective.kind == EPISODIC_RETURN:
            return iter(())
        data = self.task.dataset(self.config, split="train")
        if not data:
            raise ConfigError("empty dataset")
        if self.objective.kind == MIXED_IL_RL:
            self._validate_driving_dataset(data)
            replay_cfg = self.config.replay
            n_offline = int(replay_cfg.get("n_offline", 0))
            n_online = int(replay_cfg.get("n_online", 0))
            if n_offline or n_online:
                return self._replay_batches(data, n_offline, n_online)
        return self._plain_batches(data)

    def _plain_batches(self, data: List[Sample]):
        cursor = 0
        while True:
            batch = [data[(cursor + i) % len(data)] for i in range(self.config.batch_size)]
            cursor = (cursor + self.config.batch_size) % len(data)
            yield batch

    def _replay_batches(self, data: List[Sample], n_offline: int, n_online: int):
        """DAgger-style emulation: stream the logged fixture records into
        the buffer and cut a batch early whenever an infraction arrives."""
        replay_cfg = self.config.replay
        buffer = ReplayBuffer(
            capacity=int(replay_cfg.get("capacity", 100_000)),
            infraction_weight=float(replay_cfg.get("infraction_weight", 100.0)),
        )
        rng = random.Random(self.config.seed)
        cursor = 0
        while True:
            added = 0
            while added < self.config.batch_size:
                sample = data[cursor % len(data)]
                cursor += 1
                buffer.add(sample)
                added += 1
                if self.config.cut_on_infraction and sample.infraction:
                    break
            yield buffer.sample_split(n_offline, n_online, rng)

    def _validate_driving_dataset(self, data: List[Sample]) -> None:
        for index, sample in enumerate(data):
            if sample.expert_action is None:
                raise ConfigError(f"sample {index} lacks expert_action")
            if sample.infraction and sample.behavior_action is None:
                raise ConfigError(f"infraction sample {index} lacks behavior_action")


def _format_state(prefix: str, observation: Dict[str, float]) -> str:
    parts = ", ".join(f"{key}={value:.4f}" for key, value in observation.items())
    return f"{prefix} {parts}"


def _head_tail(lines: List[str], keep: int) -> List[str]:
    if len(lines) <= 2 * keep + 1:
        return lines
    omitted = len(lines) - 2 * keep
    return lines[:keep] + [f"... {omitted} steps omitted ..."] + lines[-keep:]


def evaluate_model(
    task: Task,
    config: TrainerConfig,
    model: PolicyModel,
    executor: Executor,
    split: str = "val",
    episodes: int = 10,
) -> Dict[str, Any]:
    """Run the best policy without any gateway; returns summary statistics."""
    trainer = Trainer(task, config, gateway=None, executor=executor)
    best = best_policy(model.policies)
    if trainer.objective.kind == EPISODIC_RETURN:
        traces = trainer.evaluate_in_env(best, episodes, batch_index=0)
        returns = [t.episode_return for t in traces]
        exceptions = sum(1 for t in traces if t.exception is not None)
        return {
            "mean_score": sum(returns) / len(returns),
            "n": len(returns),
            "exceptions": exceptions,
            "best_id": best.id,
        }
    data = task.dataset(config, split=split)
    if not data:
        raise ConfigError("empty evaluation split")
    scores, results = trainer.forward_batch([best], data, batch_index=0)
    exceptions = sum(1 for r in results[best.id] if not r.ok)
    values = scores.scores[best.id]
    return {
        "mean_score": sum(values) / len(values),
        "n": len(values),
        "exceptions": exceptions,
        "best_id": best.id,
    }
