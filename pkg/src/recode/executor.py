"""Drives sandbox runner processes and lints candidates for randomness.

All execution failures flow back as Rendering variants rather than exceptions
so the selection step can rank partial candidate pools.
"""

from __future__ import annotations

import os
import re
import signal
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import DecodeError
from .images import decode_image
from .types import ProgramSource, Rendering

# A runner process gets this long after the timeout kill before we give up
# reaping it.
KILL_GRACE_S = 5.0

_EXIT_CLASSES = {2: "exception", 3: "protocol", 4: "import"}

# Lexical randomness scan. Dotted random-module chains are matched as a single
# span so `np.random.normal` produces one warning, not two. Matches inside
# string literals are flagged too (documented false-positive class).
_DETERMINISM_RE = re.compile(
    r"(?:np|numpy)\.random(?:\.\w+)*"
    r"|\brandom\b(?:\.\w+)*"
    r"|\bshuffle\b"
    r"|\b(?:normal|uniform|randn|randint|choice|permutation)\s*\("
    r"|\bseed\s*\("
    r"|\btime\.time\s*\(\s*\)"
)


@dataclass(frozen=True)
class ExecLimits:
    timeout_s: float = 60.0
    max_output_pixels: int = 64_000_000
    max_stderr_bytes: int = 16_384

    def __post_init__(self) -> None:
        if self.timeout_s <= 0 or self.max_output_pixels <= 0 or self.max_stderr_bytes <= 0:
            raise ValueError("all execution limits must be positive")


def lint_determinism(src: ProgramSource) -> list[tuple[int, int, str]]:
    """Flag randomness tokens as (start, end, token) byte offsets. Advisory only."""
    return [(m.start(), m.end(), m.group(0)) for m in _DETERMINISM_RE.finditer(src.text)]


def _tail(data: bytes, limit: int) -> str:
    return data[-limit:].decode("utf-8", errors="replace")


def render(src: ProgramSource, limits: ExecLimits, runner_cmd: Sequence[str]) -> Rendering:
    """Execute one program through the runner protocol and decode its PNG.

    The runner is spawned in its own session inside a fresh temp directory;
    on timeout the whole process group is killed so no orphans survive.
    """
    started = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="recode-render-") as tmp:
        input_path = Path(tmp) / "candidate.py"
        output_path = Path(tmp) / "out.png"
        input_path.write_text(src.text + "\n", encoding="utf-8")
        cmd = [*runner_cmd, str(input_path), str(output_path)]
        try:
            proc = subprocess.Popen(
                cmd,
                stdout=subprocess.DEVNULL,
                stderr=subprocess.PIPE,
                cwd=tmp,
                start_new_session=True,
            )
        except OSError as exc:
            wall = int((time.monotonic() - started) * 1000)
            return Rendering.protocol_error(f"runner could not be spawned: {exc}", wall)

        try:
            _, stderr = proc.communicate(timeout=limits.timeout_s)
        except subprocess.TimeoutExpired:
            _kill_process_group(proc)
            try:
                _, stderr = proc.communicate(timeout=KILL_GRACE_S)
            except subprocess.TimeoutExpired:
                stderr = b""
            wall = int((time.monotonic() - started) * 1000)
            return Rendering.timeout(wall, stderr_tail=_tail(stderr or b"", limits.max_stderr_bytes))

        wall = int((time.monotonic() - started) * 1000)
        tail = _tail(stderr or b"", limits.max_stderr_bytes)

        if proc.returncode != 0:
            exit_class = _EXIT_CLASSES.get(proc.returncode, f"unknown({proc.returncode})")
            return Rendering.exec_error(exit_class, f"runner exited {proc.returncode}", wall, tail)

        try:
            png_bytes = output_path.read_bytes()
        except OSError as exc:
            return Rendering.protocol_error(f"runner exited 0 but wrote no output: {exc}", wall, tail)
        try:
            image = decode_image(png_bytes)
        except DecodeError as exc:
            return Rendering.protocol_error(f"runner output is not a decodable PNG: {exc}", wall, tail)
        if image.pixel_count > limits.max_output_pixels:
            return Rendering.protocol_error(
                f"output of {image.pixel_count} pixels exceeds the {limits.max_output_pixels} limit",
                wall,
                tail,
            )
        return Rendering.ok(image, wall, stderr_tail=tail)


def _kill_process_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def render_many(
    sources: Sequence[ProgramSource | None],
    limits: ExecLimits,
    runner_cmd: Sequence[str],
    parallelism: int = 1,
) -> list[Rendering | None]:
    """Render several candidates, optionally in parallel. None entries pass through."""
    if parallelism <= 1 or len(sources) <= 1:
        return [None if s is None else render(s, limits, runner_cmd) for s in sources]
    results: list[Rendering | None] = [None] * len(sources)
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = {
            pool.submit(render, s, limits, runner_cmd): i
            for i, s in enumerate(sources)
            if s is not None
        }
        for future, idx in futures.items():
            results[idx] = future.result()
    return results
