"""Job archives and the simulated parallel program they declare.

An uploaded bundle is a POSIX ustar tar containing a `job.toml` manifest
(key = value lines; ints, quoted strings or bare words; full-line comments
start with '#') plus arbitrary payload files. The manifest declares the
simulated program:

    declared_runtime_s = 2
    declared_output = "hello from rank"
    failure_mode = "none"          # none | nonzero_exit | runaway
    failure_rank = 1               # optional; omitted = every rank fails
"""

from __future__ import annotations

import io
import tarfile
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from ..errors import ClusterError

JOB_MANIFEST_NAME = "job.toml"


class ArchiveCorrupt(ClusterError):
    code = "archive_corrupt"


class FailureMode(str, Enum):
    NONE = "none"
    NONZERO_EXIT = "nonzero_exit"
    RUNAWAY = "runaway"


@dataclass(frozen=True)
class SimJobScript:
    """Declared behaviour of the fake parallel program, one instance per rank."""

    declared_runtime_s: int
    declared_output: str
    failure_mode: FailureMode = FailureMode.NONE
    failure_rank: Optional[int] = None

    def __post_init__(self) -> None:
        if self.declared_runtime_s <= 0:
            raise ValueError("declared_runtime_s must be positive")

    def exit_code_for_rank(self, rank: int) -> int:
        if self.failure_mode is FailureMode.NONZERO_EXIT and (
            self.failure_rank is None or self.failure_rank == rank
        ):
            return 2
        return 0


def parse_manifest_text(text: str) -> SimJobScript:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ArchiveCorrupt(f"{JOB_MANIFEST_NAME} line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if value.startswith('"') and value.endswith('"') and len(value) >= 2:
            values[key] = value[1:-1]
        else:
            try:
                values[key] = int(value)
            except ValueError:
                values[key] = value
    try:
        script = SimJobScript(
            declared_runtime_s=int(values["declared_runtime_s"]),
            declared_output=str(values.get("declared_output", "")),
            failure_mode=FailureMode(str(values.get("failure_mode", "none"))),
            failure_rank=(
                int(values["failure_rank"]) if "failure_rank" in values else None  # type: ignore[arg-type]
            ),
        )
    except (KeyError, ValueError) as exc:
        raise ArchiveCorrupt(f"bad {JOB_MANIFEST_NAME}: {exc}") from exc
    return script


def render_manifest(script: SimJobScript) -> str:
    lines = [
        f"declared_runtime_s = {script.declared_runtime_s}",
        f'declared_output = "{script.declared_output}"',
        f'failure_mode = "{script.failure_mode.value}"',
    ]
    if script.failure_rank is not None:
        lines.append(f"failure_rank = {script.failure_rank}")
    return "\n".join(lines) + "\n"


def build_job_archive(script: SimJobScript, payload: Optional[dict[str, bytes]] = None) -> bytes:
    """Pack a runnable job bundle (used by tests, demos and the console fixtures)."""
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        _add_member(tar, JOB_MANIFEST_NAME, render_manifest(script).encode("utf-8"))
        for name, data in (payload or {}).items():
            _add_member(tar, name, data)
    return buf.getvalue()


def _add_member(tar: tarfile.TarFile, name: str, data: bytes) -> None:
    info = tarfile.TarInfo(name=name)
    info.size = len(data)
    tar.addfile(info, io.BytesIO(data))


def parse_job_archive(data: bytes) -> tuple[SimJobScript, dict[str, bytes]]:
    """Unpack an uploaded bundle; raises ArchiveCorrupt on anything malformed."""
    try:
        with tarfile.open(fileobj=io.BytesIO(data), mode="r") as tar:
            files: dict[str, bytes] = {}
            for member in tar.getmembers():
                if not member.isfile():
                    continue
                extracted = tar.extractfile(member)
                if extracted is not None:
                    files[member.name] = extracted.read()
    except tarfile.TarError as exc:
        raise ArchiveCorrupt(f"not a readable tar archive: {exc}") from exc
    if JOB_MANIFEST_NAME not in files:
        raise ArchiveCorrupt(f"archive lacks a {JOB_MANIFEST_NAME} manifest")
    script = parse_manifest_text(files[JOB_MANIFEST_NAME].decode("utf-8", "replace"))
    return script, files


def build_result_archive(rank_outputs: list[tuple[int, str, int, str]]) -> bytes:
    """Collect per-rank outputs into one artifact: rank_<i>.out files in a tar.

    rank_outputs rows are (rank, node_id, exit_code, output).
    """
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        for rank, node_id, exit_code, output in sorted(rank_outputs):
            body = f"rank: {rank}\nnode: {node_id}\nexit: {exit_code}\n\n{output}\n"
            _add_member(tar, f"rank_{rank}.out", body.encode("utf-8"))
    return buf.getvalue()
