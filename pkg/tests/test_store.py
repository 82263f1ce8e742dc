"""Embedded store: transactions, streams, artifacts, crash consistency."""

from __future__ import annotations

import itertools
import json
import os
import random
import signal
import subprocess
import sys
import threading
import time
from pathlib import Path

import pytest

from clusterblocks.store import Conflict, Kind, NotFound, SimulatedCrash, Store


class TestTransactions:
    def test_version_bumps_by_one_per_commit(self, tmp_store):
        tmp_store.run(lambda txn: txn.write(Kind.JOB, "j1", {"x": 1}))
        assert tmp_store.version(Kind.JOB, "j1") == 1
        tmp_store.run(lambda txn: txn.write(Kind.JOB, "j1", {"x": 2}))
        assert tmp_store.version(Kind.JOB, "j1") == 2
        assert tmp_store.get(Kind.JOB, "j1") == {"x": 2}

    def test_read_only_transaction_always_commits(self, tmp_store):
        tmp_store.run(lambda txn: txn.write(Kind.JOB, "j1", {"x": 1}))
        result = tmp_store.transact(lambda txn: txn.read(Kind.JOB, "j1"))
        assert result == {"x": 1}

    def test_write_after_concurrent_bump_conflicts(self, tmp_store):
        tmp_store.run(lambda txn: txn.write(Kind.JOB, "j1", {"x": 1}))

        def stale(txn):
            body = txn.read(Kind.JOB, "j1")
            # a competing commit lands between our read and our commit
            tmp_store.run(lambda inner: inner.write(Kind.JOB, "j1", {"x": 99}))
            body["x"] += 1
            txn.write(Kind.JOB, "j1", body)

        with pytest.raises(Conflict):
            tmp_store.transact(stale)
        assert tmp_store.get(Kind.JOB, "j1") == {"x": 99}  # nothing from the loser landed

    def test_overlapping_reserves_one_commits(self, tmp_store):
        """Phantom protection: both list blocks, both write; one must lose."""

        def reserve_a(txn):
            txn.list_ids(Kind.BLOCK)
            # second reservation sneaks in after our catalog read
            tmp_store.run(
                lambda inner: inner.write(Kind.BLOCK, "b2", {"nodes": ["n1", "n2"]})
            )
            txn.write(Kind.BLOCK, "b1", {"nodes": ["n2", "n3"]})

        with pytest.raises(Conflict):
            tmp_store.transact(reserve_a)
        assert tmp_store.list_ids(Kind.BLOCK) == ["b2"]

    def test_run_retries_conflicts(self, tmp_store):
        tmp_store.run(lambda txn: txn.write(Kind.JOB, "j1", {"n": 0}))
        attempts = {"count": 0}

        def bump(txn):
            body = txn.read(Kind.JOB, "j1")
            if attempts["count"] == 0:
                attempts["count"] += 1
                tmp_store.run(lambda inner: inner.write(Kind.JOB, "j1", {"n": 10}))
            body["n"] += 1
            txn.write(Kind.JOB, "j1", body)

        tmp_store.run(bump)
        assert tmp_store.get(Kind.JOB, "j1") == {"n": 11}


class TestStreams:
    def test_sequences_are_gapless(self, tmp_store):
        assert tmp_store.append_event("audit", {"a": 1}) == 1
        assert tmp_store.append_event("audit", {"a": 2}) == 2
        assert [e["seq"] for e in tmp_store.read_events("audit")] == [1, 2]

    def test_replay_after_restart(self, tmp_path):
        store = Store(tmp_path / "s", durable=False)
        for i in range(5):
            store.append_event("telemetry", {"i": i})
        reopened = Store(tmp_path / "s", durable=False)
        events = reopened.read_events("telemetry")
        assert [e["payload"]["i"] for e in events] == list(range(5))
        assert reopened.append_event("telemetry", {"i": 5}) == 6

    def test_concurrent_appends_no_gaps_no_duplicates(self, tmp_store):
        def appender(tag):
            for i in range(200):
                tmp_store.append_event("audit", {"tag": tag, "i": i})

        threads = [threading.Thread(target=appender, args=(t,)) for t in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        seqs = [e["seq"] for e in tmp_store.read_events("audit")]
        assert seqs == list(range(1, 801))

    def test_torn_tail_line_dropped_on_recovery(self, tmp_path):
        store = Store(tmp_path / "s", durable=False)
        store.append_event("audit", {"ok": 1})
        path = tmp_path / "s" / "streams" / "audit.ndjson"
        with path.open("ab") as fh:
            fh.write(b'{"seq": 2, "payload": {"half"')  # torn in-flight append
        reopened = Store(tmp_path / "s", durable=False)
        assert [e["seq"] for e in reopened.read_events("audit")] == [1]
        assert reopened.append_event("audit", {"ok": 2}) == 2


class TestArtifacts:
    def test_round_trip_repeatable(self, tmp_store):
        tmp_store.put_artifact("j1", b"\x00\x01result")
        assert tmp_store.get_artifact("j1") == b"\x00\x01result"
        assert tmp_store.get_artifact("j1") == b"\x00\x01result"

    def test_unknown_job(self, tmp_store):
        with pytest.raises(NotFound):
            tmp_store.get_artifact("j-missing")

    def test_survives_restart(self, tmp_path):
        Store(tmp_path / "s", durable=False).put_artifact("j1", b"abc")
        assert Store(tmp_path / "s", durable=False).get_artifact("j1") == b"abc"


def verify_store_dir(root: Path) -> None:
    """Recovery oracle: every record parses, version matches its body counter,
    stream sequences are gapless and ascending."""
    reopened = Store(root, durable=False)
    for kind_dir in (root / "records").iterdir():
        for path in kind_dir.glob("*.json"):
            raw = json.loads(path.read_text())  # parseable
            assert raw["version"] == raw["body"]["n"], path
    for stream_path in (root / "streams").glob("*.ndjson"):
        seqs = [e["seq"] for e in reopened.read_events(stream_path.stem)]
        assert seqs == list(range(1, len(seqs) + 1)), stream_path


def run_crashy_transactions(root: Path, transactions: int, crash_every: tuple[int, int], rng: random.Random) -> int:
    """Run N random transactions, injecting SimulatedCrash at random file ops.

    Returns how many crashes were injected; the store is reopened (recovered)
    after each one and verified at the end by the caller.
    """
    crashes = 0
    store = Store(root, durable=False)
    done = 0
    while done < transactions:
        fuse = rng.randint(*crash_every)
        state = {"ops": 0}

        def hook(label, state=state, fuse=fuse):
            state["ops"] += 1
            if state["ops"] >= fuse:
                raise SimulatedCrash(label)

        store.set_file_op_hook(hook)
        try:
            while done < transactions:
                record_id = f"r{rng.randrange(6)}"

                def bump(txn, record_id=record_id):
                    body = txn.read(Kind.APPLICATION, record_id) or {"n": 0}
                    body["n"] += 1
                    txn.write(Kind.APPLICATION, record_id, body)

                store.run(bump)
                if done % 4 == 0:
                    store.append_event("audit", {"i": done})
                done += 1
        except SimulatedCrash:
            crashes += 1
            store = Store(root, durable=False)  # recover and continue
    store.set_file_op_hook(None)
    return crashes


def test_crash_consistency_simulated_kill_points(tmp_path):
    rng = random.Random(77)
    root = tmp_path / "crashy"
    crashes = run_crashy_transactions(root, transactions=300, crash_every=(5, 40), rng=rng)
    assert crashes > 10  # the fuse actually fired many times
    verify_store_dir(root)


def test_crash_consistency_sigkill_subprocess(tmp_path):
    root = tmp_path / "killed"
    child = subprocess.Popen(
        [sys.executable, str(Path(__file__).parent / "_crash_child.py"), str(root)],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    time.sleep(1.0)  # let it commit a few hundred transactions
    os.kill(child.pid, signal.SIGKILL)
    child.wait(timeout=10)
    verify_store_dir(root)


def test_serializable_history_matches_some_sequential_order(tmp_store):
    """Small-history isolation oracle, checked by enumeration."""
    tmp_store.run(lambda txn: txn.write(Kind.JOB, "r1", {"s": ""}))
    tmp_store.run(lambda txn: txn.write(Kind.JOB, "r2", {"s": ""}))
    tags = ["a", "b", "c"]

    def tag_writer(tag):
        def fn(txn):
            one = txn.read(Kind.JOB, "r1")
            two = txn.read(Kind.JOB, "r2")
            one["s"] += tag
            two["s"] += tag
            txn.write(Kind.JOB, "r1", one)
            txn.write(Kind.JOB, "r2", two)

        tmp_store.run(fn)

    threads = [threading.Thread(target=tag_writer, args=(t,)) for t in tags]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    final = (tmp_store.get(Kind.JOB, "r1")["s"], tmp_store.get(Kind.JOB, "r2")["s"])
    sequential_outcomes = {
        ("".join(p), "".join(p)) for p in itertools.permutations(tags)
    }
    assert final in sequential_outcomes
