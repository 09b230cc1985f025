"""Helpers to drive a live worker process over its stdin/stdout."""

import json
import subprocess
import sys

import pytest

WORKER_CMD = [sys.executable, "-m", "policy_runner"]


class WorkerProcess:
    def __init__(self, extra_args=()):
        self.proc = subprocess.Popen(
            WORKER_CMD + list(extra_args),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )
        self.hello = json.loads(self.read_line())

    def send_line(self, line: str) -> None:
        self.proc.stdin.write((line + "\n").encode("utf-8"))
        self.proc.stdin.flush()

    def send_bytes(self, data: bytes) -> None:
        self.proc.stdin.write(data)
        self.proc.stdin.flush()

    def read_line(self) -> str:
        raw = self.proc.stdout.readline()
        if not raw:
            raise AssertionError("worker closed stdout unexpectedly")
        return raw.decode("utf-8").rstrip("\n")

    def exchange(self, line: str) -> str:
        self.send_line(line)
        return self.read_line()

    def request(self, request_id, script, entrypoint="run", values=None) -> dict:
        line = json.dumps(
            {
                "request_id": request_id,
                "script": script,
                "entrypoint": entrypoint,
                "input": values or {},
                "timeout_ms": 2000,
            },
            sort_keys=True, separators=(",", ":"), ensure_ascii=False,
        )
        return json.loads(self.exchange(line))

    def close(self):
        try:
            self.proc.stdin.close()
            self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()


@pytest.fixture
def worker():
    process = WorkerProcess()
    yield process
    process.close()
