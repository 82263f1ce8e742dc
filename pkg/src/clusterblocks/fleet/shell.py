"""The node's closed mini-shell.

Not a real shell on purpose: anonymous users drive it, so the command set is
a fixed allowlist (echo, sleep, env, cat, run) with no quoting surprises
beyond shlex and no filesystem outside the node's staged files.
"""

from __future__ import annotations

import shlex

from ..clock import Clock
from .jobs import FailureMode, parse_manifest_text, ArchiveCorrupt


def run_command(
    command: str,
    *,
    env: dict[str, str],
    files: dict[str, bytes],
    clock: Clock,
) -> tuple[int, str, str]:
    """Interpret one command line; returns (exit_code, stdout, stderr)."""
    try:
        argv = shlex.split(command)
    except ValueError as exc:
        return 2, "", f"parse error: {exc}\n"
    if not argv:
        return 0, "", ""
    name, args = argv[0], argv[1:]

    if name == "echo":
        return 0, " ".join(args) + "\n", ""

    if name == "sleep":
        try:
            seconds = float(args[0]) if args else 0.0
        except ValueError:
            return 1, "", f"sleep: invalid interval {args[0]!r}\n"
        clock.sleep(max(0.0, seconds))
        return 0, "", ""

    if name == "env":
        listing = "".join(f"{k}={v}\n" for k, v in sorted(env.items()))
        return 0, listing, ""

    if name == "cat":
        if not args:
            return 1, "", "cat: missing file name\n"
        out = []
        for file_name in args:
            if file_name not in files:
                return 1, "", f"cat: {file_name}: no such staged file\n"
            out.append(files[file_name].decode("utf-8", "replace"))
        return 0, "".join(out), ""

    if name == "run":
        if not args:
            return 1, "", "run: missing script manifest name\n"
        file_name = args[0]
        if file_name not in files:
            return 1, "", f"run: {file_name}: no such staged file\n"
        try:
            script = parse_manifest_text(files[file_name].decode("utf-8", "replace"))
        except ArchiveCorrupt as exc:
            return 1, "", f"run: {exc}\n"
        if script.failure_mode is FailureMode.RUNAWAY:
            return 124, "", "run: script declares it never terminates; refusing foreground run\n"
        clock.sleep(float(script.declared_runtime_s))
        rank = int(args[1]) if len(args) > 1 else 0
        return script.exit_code_for_rank(rank), script.declared_output + "\n", ""

    return 127, "", f"{name}: command not found\n"
