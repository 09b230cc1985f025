"""evoscript: evolutionary, data-driven optimization of LLM-generated policy scripts."""

__version__ = "0.1.0"

from .checkpoint import PolicyModel, load_checkpoint, save_checkpoint
from .execution import ExecutionRequest, ExecutionResult, ScriptedExecutor, SubprocessExecutor
from .gateway import ChatMessage, LlmResponse, ScriptedGateway, extract_code
from .objectives import DrivingAction, ObjectiveSpec, score_mixed_il_rl
from .policies import PolicyRecord, best_policy, rerank, select, update_priority
from .replay import ReplayBuffer, Sample
from .training import Trainer, TrainerConfig, evaluate_model

__all__ = [
    "ChatMessage",
    "DrivingAction",
    "ExecutionRequest",
    "ExecutionResult",
    "LlmResponse",
    "ObjectiveSpec",
    "PolicyModel",
    "PolicyRecord",
    "ReplayBuffer",
    "Sample",
    "ScriptedExecutor",
    "ScriptedGateway",
    "SubprocessExecutor",
    "Trainer",
    "TrainerConfig",
    "best_policy",
    "evaluate_model",
    "extract_code",
    "load_checkpoint",
    "rerank",
    "save_checkpoint",
    "score_mixed_il_rl",
    "select",
    "update_priority",
]
