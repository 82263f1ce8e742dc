"""Embedded transactional store: the data-access tier.

Single-directory layout, no external database:

    records/<kind>/<id>.json   latest committed version of each record
    streams/<stream>.ndjson    append-only event logs (telemetry, audit)
    artifacts/<job_id>         raw result archives

Records commit via temp-file + fsync + atomic rename, so a crash leaves
either the old or the new complete file. Transactions are optimistic:
reads record versions, commit re-validates them under one lock and either
applies every buffered write or raises Conflict. Listing a kind also pins
that kind's catalog version, which closes the phantom window (two
transactions both observing "no block owns node X" cannot both commit).
"""

from __future__ import annotations

import copy
import json
import os
import threading
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from .errors import ClusterError


class Kind(str, Enum):
    APPLICATION = "application"
    BLOCK = "block"
    JOB = "job"
    ARTIFACT = "artifact"
    TELEMETRY = "telemetry"
    AUDIT = "audit"


class Conflict(ClusterError):
    code = "conflict"


class NotFound(ClusterError):
    code = "not_found"


class SimulatedCrash(BaseException):
    """Raised by test crash hooks; deliberately not an Exception subclass."""


def canonical_json(value) -> str:
    """Canonical form used for every byte that hits disk: sorted keys, tight separators."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


class Transaction:
    """Buffered read/write view handed to a transact() closure."""

    def __init__(self, store: "Store"):
        self._store = store
        self.read_versions: dict[tuple[str, str], int] = {}
        self.catalog_versions: dict[str, int] = {}
        self.writes: dict[tuple[str, str], dict] = {}

    def read(self, kind: Kind, record_id: str) -> Optional[dict]:
        key = (kind.value, record_id)
        if key in self.writes:
            return copy.deepcopy(self.writes[key])
        version, body = self._store._snapshot(kind, record_id)
        self.read_versions.setdefault(key, version)
        return copy.deepcopy(body) if body is not None else None

    def list_ids(self, kind: Kind) -> list[str]:
        ids, catalog_version = self._store._snapshot_catalog(kind)
        self.catalog_versions.setdefault(kind.value, catalog_version)
        for (k, record_id) in self.writes:
            if k == kind.value and record_id not in ids:
                ids.append(record_id)
        return sorted(ids)

    def write(self, kind: Kind, record_id: str, body: dict) -> None:
        canonical_json(body)  # fail fast on unserializable bodies
        self.writes[(kind.value, record_id)] = copy.deepcopy(body)


class Store:
    """Durable record/event/artifact storage behind the transactional contract."""

    def __init__(self, root: str | Path, durable: bool = True):
        self.root = Path(root)
        self.durable = durable
        self._lock = threading.RLock()
        self._records: dict[tuple[str, str], tuple[int, dict]] = {}
        self._catalog_versions: dict[str, int] = {k.value: 0 for k in Kind}
        self._stream_seqs: dict[str, int] = {}
        self._stream_cache: dict[str, list[dict]] = {}
        self._file_op_hook: Optional[Callable[[str], None]] = None
        for sub in ("records", "streams", "artifacts"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self._recover()

    # -- recovery -----------------------------------------------------------

    def _recover(self) -> None:
        records_dir = self.root / "records"
        for kind_dir in sorted(records_dir.iterdir()) if records_dir.exists() else []:
            for path in sorted(kind_dir.glob("*.json")):
                raw = json.loads(path.read_text("utf-8"))
                key = (raw["kind"], raw["id"])
                self._records[key] = (raw["version"], raw["body"])
        for tmp in records_dir.glob("**/*.tmp"):
            tmp.unlink()
        for path in sorted((self.root / "streams").glob("*.ndjson")):
            self._recover_stream(path)

    def _recover_stream(self, path: Path) -> None:
        stream = path.stem
        events: list[dict] = []
        good_bytes = 0
        with path.open("rb") as fh:
            for line in fh:
                if not line.endswith(b"\n"):
                    break  # torn tail from an in-flight append; drop it
                try:
                    events.append(json.loads(line))
                except ValueError:
                    break
                good_bytes += len(line)
        with path.open("rb+") as fh:
            fh.truncate(good_bytes)
        self._stream_cache[stream] = events
        self._stream_seqs[stream] = events[-1]["seq"] if events else 0

    # -- low-level file ops (crash-hook instrumented) -------------------------

    def set_file_op_hook(self, hook: Optional[Callable[[str], None]]) -> None:
        """Test hook invoked before each primitive file operation; may raise."""
        self._file_op_hook = hook

    def _file_op(self, label: str) -> None:
        if self._file_op_hook is not None:
            self._file_op_hook(label)

    def _write_atomic(self, path: Path, data: bytes) -> None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        self._file_op(f"tmp-write:{path.name}")
        with tmp.open("wb") as fh:
            fh.write(data)
            fh.flush()
            if self.durable:
                os.fsync(fh.fileno())
        self._file_op(f"rename:{path.name}")
        os.replace(tmp, path)

    # -- snapshots ------------------------------------------------------------

    def _snapshot(self, kind: Kind, record_id: str) -> tuple[int, Optional[dict]]:
        with self._lock:
            version, body = self._records.get((kind.value, record_id), (0, None))
            return version, copy.deepcopy(body) if body is not None else None

    def _snapshot_catalog(self, kind: Kind) -> tuple[list[str], int]:
        with self._lock:
            ids = [rid for (k, rid) in self._records if k == kind.value]
            return ids, self._catalog_versions[kind.value]

    # -- public record API ------------------------------------------------------

    def get(self, kind: Kind, record_id: str) -> Optional[dict]:
        return self._snapshot(kind, record_id)[1]

    def version(self, kind: Kind, record_id: str) -> int:
        return self._snapshot(kind, record_id)[0]

    def list_ids(self, kind: Kind) -> list[str]:
        return sorted(self._snapshot_catalog(kind)[0])

    def transact(self, fn: Callable[[Transaction], object]):
        """Run fn against a transaction and commit; raises Conflict if stale.

        fn must be pure over its reads (it may run again after a Conflict
        retry by run()); all writes land atomically or not at all.
        """
        txn = Transaction(self)
        result = fn(txn)
        self._commit(txn)
        return result

    def run(self, fn: Callable[[Transaction], object], max_attempts: int = 16):
        """transact() with the standard optimistic retry loop."""
        for attempt in range(max_attempts):
            try:
                return self.transact(fn)
            except Conflict:
                if attempt == max_attempts - 1:
                    raise
        raise AssertionError("unreachable")

    def _commit(self, txn: Transaction) -> None:
        with self._lock:
            for (kind, record_id), seen_version in txn.read_versions.items():
                current, _ = self._records.get((kind, record_id), (0, None))
                if current != seen_version:
                    raise Conflict(f"record {kind}/{record_id} changed underfoot")
            for kind, seen_catalog in txn.catalog_versions.items():
                if self._catalog_versions[kind] != seen_catalog:
                    raise Conflict(f"catalog for kind {kind} changed underfoot")
            for (kind, record_id), body in txn.writes.items():
                current, _ = self._records.get((kind, record_id), (0, None))
                new_version = current + 1
                raw = canonical_json(
                    {"kind": kind, "id": record_id, "version": new_version, "body": body}
                )
                kind_dir = self.root / "records" / kind
                kind_dir.mkdir(parents=True, exist_ok=True)
                self._write_atomic(kind_dir / f"{record_id}.json", raw.encode("utf-8"))
                self._records[(kind, record_id)] = (new_version, copy.deepcopy(body))
                if current == 0:
                    self._catalog_versions[kind] += 1

    # -- event streams ----------------------------------------------------------

    def append_event(self, stream: str, payload: dict) -> int:
        """Append to a stream; the sequence is gapless and durable before return."""
        with self._lock:
            seq = self._stream_seqs.get(stream, 0) + 1
            event = {"seq": seq, "payload": payload}
            line = (canonical_json(event) + "\n").encode("utf-8")
            path = self.root / "streams" / f"{stream}.ndjson"
            self._file_op(f"stream-append:{stream}")
            with path.open("ab") as fh:
                fh.write(line)
                fh.flush()
                if self.durable:
                    os.fsync(fh.fileno())
            self._stream_seqs[stream] = seq
            self._stream_cache.setdefault(stream, []).append(event)
            return seq

    def read_events(self, stream: str, since_seq: int = 0) -> list[dict]:
        """Events are shared with the cache; callers must treat them as read-only."""
        with self._lock:
            return [e for e in self._stream_cache.get(stream, []) if e["seq"] > since_seq]

    # -- artifacts ----------------------------------------------------------------

    def put_artifact(self, job_id: str, data: bytes) -> None:
        with self._lock:
            self._write_atomic(self.root / "artifacts" / job_id, data)

    def get_artifact(self, job_id: str) -> bytes:
        path = self.root / "artifacts" / job_id
        if not path.exists():
            raise NotFound(f"no artifact stored for job {job_id}")
        return path.read_bytes()

    def has_artifact(self, job_id: str) -> bool:
        return (self.root / "artifacts" / job_id).exists()
