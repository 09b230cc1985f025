"""Policy worker: one JSON request line in, exactly one response line out.

The parent process (the trainer's subprocess executor) writes request
objects to our stdin, one per line, and reads response objects from our
stdout (see protocol.md at the repository root). Everything that can go
wrong is reported as a response status, never as a crash: arbitrary
request bytes still produce exactly one well-formed response line.

Protocol stdout is sacred: while a policy script runs, its stdout is
redirected into the response's ``prints`` array, and worker diagnostics
go to stderr. The worker never self-enforces timeouts; a parent that
stops hearing from us kills the process and starts a fresh one.

Exception traces sent back to the parent contain only frames from the
policy script itself (file ``"<policy>"``), so they are byte-stable
across machines and never leak worker paths into model prompts.
"""

from __future__ import annotations

import argparse
import builtins
import contextlib
import hashlib
import io
import json
import linecache
import sys
import traceback
from collections import OrderedDict

PROTOCOL_VERSION = 1
POLICY_FILENAME = "<policy>"
COMPILE_CACHE_SIZE = 128

STATUS_OK = "ok"
STATUS_EXCEPTION = "exception"
STATUS_PROTOCOL_ERROR = "protocol_error"


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False,
                      ensure_ascii=False)


class EntrypointError(Exception):
    pass


def make_import_guard(allowed_spec: str):
    """Restrict what policy scripts may import. Containment, not a sandbox."""
    names = {part.strip() for part in allowed_spec.split(",") if part.strip()}
    allow_all = "all" in names
    allow_stdlib = "stdlib" in names
    extra = names - {"all", "stdlib"}
    real_import = builtins.__import__

    def guarded(name, globals=None, locals=None, fromlist=(), level=0):
        root = name.split(".")[0]
        if level == 0 and not allow_all:
            if not ((allow_stdlib and root in sys.stdlib_module_names) or root in extra):
                raise ImportError(f"import of {root!r} is not allowed in policy scripts")
        return real_import(name, globals, locals, fromlist, level)

    return guarded


class PolicyRunner:
    """Compiles scripts (cached by content hash) and runs entrypoints."""

    def __init__(self, allowed_imports: str = "stdlib"):
        self._cache: "OrderedDict[str, object]" = OrderedDict()
        self._builtins = dict(vars(builtins))
        self._builtins["__import__"] = make_import_guard(allowed_imports)

    def _compiled(self, script: str):
        key = hashlib.sha256(script.encode("utf-8")).hexdigest()
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        code = compile(script, POLICY_FILENAME, "exec")
        self._cache[key] = code
        if len(self._cache) > COMPILE_CACHE_SIZE:
            self._cache.popitem(last=False)
        return code

    def run(self, script: str, entrypoint: str, values: dict):
        """Returns (status, output, exception|None, prints)."""
        # Let tracebacks show policy source lines despite the pseudo-filename.
        linecache.cache[POLICY_FILENAME] = (
            len(script), None, script.splitlines(True), POLICY_FILENAME
        )
        buffer = io.StringIO()
        try:
            with contextlib.redirect_stdout(buffer):
                code = self._compiled(script)
                namespace = {"__name__": "policy", "__builtins__": self._builtins}
                exec(code, namespace)
                fn = namespace.get(entrypoint)
                if not callable(fn):
                    raise EntrypointError(
                        f"script does not define entrypoint {entrypoint!r}"
                    )
                output = fn(**values)
        except KeyboardInterrupt:
            raise
        except BaseException as exc:
            return STATUS_EXCEPTION, None, exception_payload(exc), split_lines(buffer)
        prints = split_lines(buffer)
        try:
            canonical(output)
        except (TypeError, ValueError):
            payload = {
                "type": "UnserializableOutput",
                "message": f"output of type {type(output).__name__} is not protocol-serializable",
                "trace": "",
            }
            return STATUS_PROTOCOL_ERROR, None, payload, prints
        return STATUS_OK, output, None, prints


def split_lines(buffer: io.StringIO):
    text = buffer.getvalue()
    return text.splitlines() if text else []


def exception_payload(exc: BaseException) -> dict:
    te = traceback.TracebackException.from_exception(exc)
    lines = ["Traceback (most recent call last):\n"]
    for frame in te.stack:
        if frame.filename != POLICY_FILENAME:
            continue
        lines.append(f'  File "{POLICY_FILENAME}", line {frame.lineno}, in {frame.name}\n')
        if frame.line:
            lines.append(f"    {frame.line}\n")
    lines.extend(te.format_exception_only())
    return {
        "type": type(exc).__name__,
        "message": str(exc),
        "trace": "".join(lines),
    }


def respond(out, payload: dict) -> None:
    out.write(canonical(payload) + "\n")
    out.flush()


def handle_line(runner: PolicyRunner, raw: str, out) -> None:
    def protocol_error(request_id, message):
        respond(out, {
            "request_id": request_id,
            "status": STATUS_PROTOCOL_ERROR,
            "output": None,
            "exception": {"type": "ProtocolError", "message": message, "trace": ""},
            "prints": [],
        })

    try:
        request = json.loads(raw)
    except ValueError as exc:
        protocol_error(None, f"request line is not valid JSON: {exc}")
        return
    if not isinstance(request, dict):
        protocol_error(None, "request is not an object")
        return
    request_id = request.get("request_id")
    script = request.get("script")
    entrypoint = request.get("entrypoint")
    values = request.get("input")
    if not isinstance(script, str) or not isinstance(entrypoint, str) or not entrypoint:
        protocol_error(request_id, "request needs string fields 'script' and 'entrypoint'")
        return
    if not isinstance(values, dict):
        protocol_error(request_id, "request field 'input' must be an object")
        return
    try:
        status, output, exception, prints = runner.run(script, entrypoint, values)
    except KeyboardInterrupt:
        raise
    except BaseException as exc:  # belt and braces: one line in, one line out
        print(f"policy-runner internal error: {exc!r}", file=sys.stderr)
        protocol_error(request_id, f"internal worker error: {type(exc).__name__}")
        return
    respond(out, {
        "request_id": request_id,
        "status": status,
        "output": output,
        "exception": exception,
        "prints": prints,
    })


def serve(stdin_buffer, out, allowed_imports: str = "stdlib") -> None:
    respond(out, {"type": "hello", "protocol_version": PROTOCOL_VERSION})
    runner = PolicyRunner(allowed_imports)
    for raw_bytes in stdin_buffer:
        raw = raw_bytes.decode("utf-8", errors="replace").strip("\r\n")
        handle_line(runner, raw, out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="policy-runner-shim",
        description="JSON-lines policy execution worker (see protocol.md).",
    )
    parser.add_argument(
        "--allowed-imports",
        default="stdlib",
        help="comma-separated allowlist for policy imports: 'stdlib', module "
             "names, or 'all' (default: stdlib)",
    )
    args = parser.parse_args(argv)
    serve(sys.stdin.buffer, sys.stdout, args.allowed_imports)
    return 0


if __name__ == "__main__":
    sys.exit(main())
