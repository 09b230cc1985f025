"""Policy script execution.

Running generated code is the one place this framework touches untrusted
input, so every failure mode is encoded in the result status rather than
raised: ``ok``, ``exception`` (the script raised), ``timeout`` (the script
exceeded its budget and the worker was killed), or ``protocol_error``
(unusable script, undecodable output, or a broken worker). ``run`` never
raises because of policy misbehavior.

Two executors implement the same contract:

* ``ScriptedExecutor`` is an in-process test double dispatching on a
  ``# behavior: <name>`` marker comment to a table of deterministic
  functions. It lets the whole training stack run with no worker process.
* ``SubprocessExecutor`` drives an external worker over newline-delimited
  JSON on stdin/stdout (see ``protocol.md``). One persistent worker per
  lane; the parent enforces timeouts by killing and respawning it.

Captured prints and exception traces ride along in the result; the update
prompts feed them back to the model.
"""

from __future__ import annotations

import contextlib
import io
import json
import re
import subprocess
import threading
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from queue import Empty, Queue
from typing import Any, Callable, Dict, List, Optional, Sequence

PROTOCOL_VERSION = 1

STATUS_OK = "ok"
STATUS_EXCEPTION = "exception"
STATUS_TIMEOUT = "timeout"
STATUS_PROTOCOL_ERROR = "protocol_error"
STATUSES = (STATUS_OK, STATUS_EXCEPTION, STATUS_TIMEOUT, STATUS_PROTOCOL_ERROR)

BEHAVIOR_MARKER = re.compile(r"^#\s*behavior:\s*([A-Za-z0-9_.\-]+)\s*$", re.MULTILINE)

DEFAULT_TIMEOUT_MS = 2000
DEFAULT_GRACE_MS = 500


def protocol_dumps(obj: Any) -> str:
    """Canonical one-line JSON used on the worker wire and in fixtures."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False,
                      ensure_ascii=False)


@dataclass
class ExecutionRequest:
    request_id: str
    script: str
    entrypoint: str
    input: Dict[str, Any]
    timeout_ms: int = DEFAULT_TIMEOUT_MS

    def __post_init__(self):
        if not self.entrypoint:
            raise ValueError("entrypoint must not be empty")
        if self.timeout_ms < 1:
            raise ValueError("timeout_ms must be >= 1")

    def to_wire(self) -> str:
        return protocol_dumps(
            {
                "request_id": self.request_id,
                "script": self.script,
                "entrypoint": self.entrypoint,
                "input": self.input,
                "timeout_ms": self.timeout_ms,
            }
        )


@dataclass
class ExceptionInfo:
    type: str
    message: str
    trace: str

    def to_dict(self) -> Dict[str, str]:
        return {"type": self.type, "message": self.message, "trace": self.trace}


@dataclass
class ExecutionResult:
    request_id: str
    status: str
    output: Any = None
    exception: Optional[ExceptionInfo] = None
    prints: List[str] = field(default_factory=list)
    wall_ms: int = 0

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"invalid status {self.status!r}")
        if self.status == STATUS_OK and self.exception is not None:
            raise ValueError("ok results cannot carry an exception")
        if self.status == STATUS_EXCEPTION and (
            self.exception is None or not self.exception.trace
        ):
            raise ValueError("exception results need a non-empty trace")

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


class _SimulatedHang(Exception):
    """Raised by scripted behaviors that emulate an endless loop."""


# --- scripted executor -------------------------------------------------------

def _behavior_identity(values: Dict[str, Any]) -> Any:
    if len(values) == 1:
        return next(iter(values.values()))
    return dict(values)


def _behavior_raise(values: Dict[str, Any]) -> Any:
    print("about to fail")
    raise ValueError("intentional failure")


def _behavior_hang(values: Dict[str, Any]) -> Any:
    raise _SimulatedHang()


BUILTIN_BEHAVIORS: Dict[str, Callable[[Dict[str, Any]], Any]] = {
    "identity": _behavior_identity,
    "raise": _behavior_raise,
    "hang": _behavior_hang,
}


def behavior_marker(script: str) -> Optional[str]:
    match = BEHAVIOR_MARKER.search(script)
    return match.group(1) if match else None


def load_script_behavior(script: str, entrypoint: str) -> Callable[[Dict[str, Any]], Any]:
    """Compile a trusted repo-asset script into a behavior function.

    Used to register committed reference policies with the scripted
    executor so both executors run the very same code.
    """
    namespace: Dict[str, Any] = {"__name__": "policy"}
    exec(compile(script, "<policy>", "exec"), namespace)
    fn = namespace.get(entrypoint)
    if not callable(fn):
        raise ValueError(f"script does not define entrypoint {entrypoint!r}")
    return lambda values: fn(**values)


class Executor:
    """Common surface: run one request, or a batch against one script."""

    def run(self, request: ExecutionRequest) -> ExecutionResult:
        raise NotImplementedError

    def run_batch(
        self,
        script: str,
        inputs: Sequence[Dict[str, Any]],
        timeout_ms: int = DEFAULT_TIMEOUT_MS,
        entrypoint: str = "run",
        request_prefix: str = "batch",
    ) -> List[ExecutionResult]:
        results = []
        for index, values in enumerate(inputs):
            request = ExecutionRequest(
                request_id=f"{request_prefix}-{index:05d}",
                script=script,
                entrypoint=entrypoint,
                input=values,
                timeout_ms=timeout_ms,
            )
            results.append(self.run(request))
        return results

    def close(self) -> None:
        pass

    def __enter__(self) -> "Executor":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class ScriptedExecutor(Executor):
    """Deterministic in-process executor keyed on behavior markers.

    Single-threaded by design (print capture redirects process stdout);
    lane-level parallelism belongs to the subprocess executor.
    """

    def __init__(self, table: Optional[Dict[str, Callable[[Dict[str, Any]], Any]]] = None):
        self.table = dict(BUILTIN_BEHAVIORS)
        if table:
            self.table.update(table)

    def run(self, request: ExecutionRequest) -> ExecutionResult:
        started = time.monotonic()
        marker = behavior_marker(request.script)
        if marker is None:
            return ExecutionResult(
                request.request_id,
                STATUS_PROTOCOL_ERROR,
                exception=ExceptionInfo(
                    "UnknownBehavior", "script has no '# behavior:' marker", ""
                ),
            )
        fn = self.table.get(marker)
        if fn is None:
            return ExecutionResult(
                request.request_id,
                STATUS_PROTOCOL_ERROR,
                exception=ExceptionInfo("UnknownBehavior", f"unknown behavior {marker!r}", ""),
            )
        buffer = io.StringIO()
        try:
            with contextlib.redirect_stdout(buffer):
                output = fn(dict(request.input))
        except _SimulatedHang:
            return ExecutionResult(
                request.request_id,
                STATUS_TIMEOUT,
                prints=_split_prints(buffer.getvalue()),
                wall_ms=request.timeout_ms,
            )
        except Exception as exc:
            return ExecutionResult(
                request.request_id,
                STATUS_EXCEPTION,
                exception=ExceptionInfo(
                    type(exc).__name__, str(exc), traceback.format_exc()
                ),
                prints=_split_prints(buffer.getvalue()),
                wall_ms=_elapsed_ms(started),
            )
        prints = _split_prints(buffer.getvalue())
        try:
            protocol_dumps(output)
        except (TypeError, ValueError):
            return ExecutionResult(
                request.request_id,
                STATUS_PROTOCOL_ERROR,
                exception=ExceptionInfo(
                    "UnserializableOutput",
                    f"output of type {type(output).__name__} is not protocol-serializable",
                    "",
                ),
                prints=prints,
                wall_ms=_elapsed_ms(started),
            )
        return ExecutionResult(
            request.request_id, STATUS_OK, output=output, prints=prints,
            wall_ms=_elapsed_ms(started),
        )


# --- subprocess executor -----------------------------------------------------

class SubprocessExecutor(Executor):
    """Owns one worker subprocess and speaks the JSON-lines protocol to it.

    The worker cannot be trusted to self-limit, so the parent enforces the
    per-request timeout: no response within ``timeout_ms + grace_ms`` kills
    the worker, reports ``timeout``, and a fresh worker serves the next
    request.
    """

    def __init__(
        self,
        worker_cmd: Sequence[str],
        grace_ms: int = DEFAULT_GRACE_MS,
        handshake_timeout_ms: int = 10_000,
        cwd: Optional[str] = None,
    ):
        self.worker_cmd = list(worker_cmd)
        self.grace_ms = grace_ms
        self.handshake_timeout_ms = handshake_timeout_ms
        self.cwd = cwd
        self._proc: Optional[subprocess.Popen] = None
        self._lines: "Queue[Optional[str]]" = Queue()
        self._lock = threading.Lock()

    def _reader(self, proc: subprocess.Popen, queue: "Queue[Optional[str]]") -> None:
        assert proc.stdout is not None
        for raw in proc.stdout:
            queue.put(raw.decode("utf-8", errors="replace"))
        queue.put(None)

    def _spawn(self) -> None:
        self._lines = Queue()
        self._proc = subprocess.Popen(
            self.worker_cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            cwd=self.cwd,
        )
        threading.Thread(
            target=self._reader, args=(self._proc, self._lines), daemon=True
        ).start()
        try:
            line = self._next_line(self.handshake_timeout_ms / 1000.0)
        except TimeoutError:
            raise RuntimeError("worker did not complete the handshake in time") from None
        if line is None:
            raise RuntimeError("worker did not produce a handshake line")
        try:
            hello = json.loads(line)
        except ValueError as exc:
            raise RuntimeError(f"malformed worker handshake: {line!r}") from exc
        if hello.get("type") != "hello" or hello.get("protocol_version") != PROTOCOL_VERSION:
            raise RuntimeError(f"incompatible worker handshake: {line!r}")

    def _next_line(self, timeout_s: float) -> Optional[str]:
        try:
            return self._lines.get(timeout=timeout_s)
        except Empty:
            raise TimeoutError()

    def _kill(self) -> None:
        if self._proc is not None:
            with contextlib.suppress(Exception):
                self._proc.kill()
            with contextlib.suppress(Exception):
                self._proc.wait(timeout=5)
        self._proc = None

    def run(self, request: ExecutionRequest) -> ExecutionResult:
        with self._lock:
            started = time.monotonic()
            try:
                if self._proc is None or self._proc.poll() is not None:
                    self._kill()
                    self._spawn()
                assert self._proc is not None and self._proc.stdin is not None
                self._proc.stdin.write((request.to_wire() + "\n").encode("utf-8"))
                self._proc.stdin.flush()
                deadline_s = (request.timeout_ms + self.grace_ms) / 1000.0
                line = self._next_line(deadline_s)
            except TimeoutError:
                self._kill()
                return ExecutionResult(
                    request.request_id, STATUS_TIMEOUT, wall_ms=_elapsed_ms(started)
                )
            except Exception as exc:
                self._kill()
                return ExecutionResult(
                    request.request_id,
                    STATUS_PROTOCOL_ERROR,
                    exception=ExceptionInfo(type(exc).__name__, str(exc), ""),
                    wall_ms=_elapsed_ms(started),
                )
            if line is None:  # worker closed stdout (crashed or exited)
                self._kill()
                return ExecutionResult(
                    request.request_id,
                    STATUS_PROTOCOL_ERROR,
                    exception=ExceptionInfo("WorkerExited", "worker exited mid-request", ""),
                    wall_ms=_elapsed_ms(started),
                )
            return self._decode_response(request, line, started)

    def _decode_response(
        self, request: ExecutionRequest, line: str, started: float
    ) -> ExecutionResult:
        def protocol_error(message: str) -> ExecutionResult:
            # Kill the worker: after a framing error the stream cannot be trusted.
            self._kill()
            return ExecutionResult(
                request.request_id,
                STATUS_PROTOCOL_ERROR,
                exception=ExceptionInfo("ProtocolError", message, ""),
                wall_ms=_elapsed_ms(started),
            )

        try:
            payload = json.loads(line)
        except ValueError:
            return protocol_error(f"undecodable response line: {line[:200]!r}")
        if not isinstance(payload, dict):
            return protocol_error("response is not an object")
        if payload.get("request_id") != request.request_id:
            return protocol_error(
                f"response id {payload.get('request_id')!r} does not match request"
            )
        status = payload.get("status")
        if status not in STATUSES:
            return protocol_error(f"invalid status {status!r}")
        exception = None
        if payload.get("exception") is not None:
            raw = payload["exception"]
            if not isinstance(raw, dict):
                return protocol_error("exception field is not an object")
            exception = ExceptionInfo(
                str(raw.get("type", "")), str(raw.get("message", "")), str(raw.get("trace", ""))
            )
        prints = payload.get("prints", [])
        if not isinstance(prints, list) or any(not isinstance(p, str) for p in prints):
            return protocol_error("prints field is not a list of strings")
        try:
            return ExecutionResult(
                request.request_id,
                status,
                output=payload.get("output"),
                exception=exception,
                prints=prints,
                wall_ms=_elapsed_ms(started),
            )
        except ValueError as exc:
            return protocol_error(str(exc))

    def close(self) -> None:
        with self._lock:
            self._kill()


class ExecutorPool(Executor):
    """Fans a batch out over several lanes; each lane is its own executor."""

    def __init__(self, lane_factory: Callable[[int], Executor], lanes: int = 1):
        if lanes < 1:
            raise ValueError("need at least one lane")
        self._lanes = [lane_factory(i) for i in range(lanes)]

    def run(self, request: ExecutionRequest) -> ExecutionResult:
        return self._lanes[0].run(request)

    def run_batch(self, script, inputs, timeout_ms=DEFAULT_TIMEOUT_MS, entrypoint="run",
                  request_prefix="batch"):
        requests = [
            ExecutionRequest(
                request_id=f"{request_prefix}-{index:05d}",
                script=script,
                entrypoint=entrypoint,
                input=values,
                timeout_ms=timeout_ms,
            )
            for index, values in enumerate(inputs)
        ]
        if len(self._lanes) == 1 or len(requests) <= 1:
            return [self._lanes[0].run(r) for r in requests]
        with ThreadPoolExecutor(max_workers=len(self._lanes)) as pool:
            futures = [
                pool.submit(self._lanes[i % len(self._lanes)].run, request)
                for i, request in enumerate(requests)
            ]
            return [f.result() for f in futures]

    def close(self) -> None:
        for lane in self._lanes:
            lane.close()


def _split_prints(text: str) -> List[str]:
    if not text:
        return []
    return text.splitlines()


def _elapsed_ms(started: float) -> int:
    return int((time.monotonic() - started) * 1000)
