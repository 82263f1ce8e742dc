"""Application-logic tier: workflow orchestration between HTTP and the fleet.

This layer owns auth, drives the domain state machine, talks to the store
(data tier) and to the node channel. The presentation tier (api.py) calls
only into this module and never touches store or fleet itself.
"""

from __future__ import annotations

import fnmatch
import math
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Optional

from .. import allocator
from ..allocator import (
    EXHAUSTIVE_LIMIT,
    AllocationRequest,
    Assignment,
    GaParams,
    Inventory,
    RaceLost,
    allocate_exhaustive,
    allocate_ga,
)
from ..clock import Clock
from ..domain import (
    Applicant,
    Application,
    AppEvent,
    AppState,
    Block,
    Job,
    JobState,
    LEGAL_TRANSITIONS,
    NodeRecord,
    PeriodState,
    Policy,
    PowerState,
    check_approval_bounds,
    new_id,
    period_status,
    transition_application,
    validate_registration,
)
from ..errors import ClusterError
from ..fleet import Cluster, NodeUnreachable, SensorFault, TransferDirection
from ..fleet.modules import manifest_entry
from ..sentinel import (
    AUDIT_STREAM,
    Sentinel,
    UnknownApplication,
    record_transition,
    settle_job_runs,
)
from ..store import Kind, NotFound, Store
from .config import GatewayConfig


class BadCredential(ClusterError):
    code = "bad_credential"


class BadToken(ClusterError):
    code = "bad_token"


class NotActive(ClusterError):
    code = "not_active"


class WrongJobState(ClusterError):
    code = "wrong_job_state"


class NotFinished(ClusterError):
    code = "not_finished"


class ArchiveTooLarge(ClusterError):
    code = "archive_too_large"


class NoNodesMatched(ClusterError):
    code = "no_nodes_matched"


class EmptyArchive(ClusterError):
    code = "empty_archive"


class BadRequest(ClusterError):
    code = "bad_request"


class GatewayService:
    """One instance per deployment; safe for concurrent callers."""

    def __init__(
        self,
        config: GatewayConfig,
        clock: Optional[Clock] = None,
        nodes: Optional[Iterable[NodeRecord]] = None,
        store: Optional[Store] = None,
    ):
        self.config = config
        self.policy: Policy = config.policy()
        self.clock = clock if clock is not None else Clock()
        self.store = store if store is not None else Store(config.data_dir)
        node_list = list(nodes) if nodes is not None else allocator.load_inventory(config.inventory)
        self.inventory = Inventory(node_list)
        self.cluster = Cluster(
            node_list,
            clock=self.clock,
            gateway_identity=config.gateway_identity,
            envelope_sink=self._audit_envelope,
        )
        self.sentinel = Sentinel(
            store=self.store,
            cluster=self.cluster,
            inventory=self.inventory,
            policy=self.policy,
            clock=self.clock,
            action_log_path=config.action_log_path(),
        )
        self._mutate = threading.RLock()
        self._restore_durable_state()

    # -- boot recovery -------------------------------------------------------

    def _restore_durable_state(self) -> None:
        """Re-adopt blocks of live applications; fail jobs orphaned by a restart."""
        self._jobs_by_app: dict[str, list[str]] = {}
        for job_id in self.store.list_ids(Kind.JOB):
            body = self.store.get(Kind.JOB, job_id)
            if body:
                self._jobs_by_app.setdefault(body["app_id"], []).append(job_id)
        live_apps = set()
        for app_id in self.store.list_ids(Kind.APPLICATION):
            body = self.store.get(Kind.APPLICATION, app_id)
            if body and body["state"] in (AppState.CONFIRMED.value, AppState.ACTIVE.value):
                live_apps.add(app_id)
        for block_id in self.store.list_ids(Kind.BLOCK):
            body = self.store.get(Kind.BLOCK, block_id)
            if body and body["app_id"] in live_apps:
                self.inventory.adopt(Block.from_body(body))
        for job_id in self.store.list_ids(Kind.JOB):
            body = self.store.get(Kind.JOB, job_id)
            if body and body["state"] == JobState.RUNNING.value:

                def orphan(txn, job_id=job_id):
                    current = txn.read(Kind.JOB, job_id)
                    if current and current["state"] == JobState.RUNNING.value:
                        current["state"] = JobState.FAILED.value
                        current["finished_at"] = self.clock.now()
                        current["exit_status"] = 1
                        current["diagnostic"] = "lost at gateway restart"
                        txn.write(Kind.JOB, job_id, current)

                self.store.run(orphan)
                if not self.store.has_artifact(job_id):
                    self.store.put_artifact(job_id, b"")

    # -- audit plumbing ---------------------------------------------------------

    def _audit_envelope(self, envelope) -> None:
        result = envelope.result
        self.store.append_event(
            AUDIT_STREAM,
            {
                "event": "envelope",
                "target": envelope.target,
                "command": envelope.command,
                "sender": envelope.sender_identity,
                "context": envelope.context,
                "at": envelope.sent_at,
                "exit_code": result.exit_code if result else None,
                "error": envelope.error,
            },
        )

    # -- auth helpers ---------------------------------------------------------------

    def require_admin(self, secret: Optional[str]) -> None:
        if not secret or secret != self.config.admin_secret:
            raise BadCredential("admin secret rejected")

    def _app_for_token(self, token: Optional[str]) -> Application:
        if token:
            for app_id in self.store.list_ids(Kind.APPLICATION):
                body = self.store.get(Kind.APPLICATION, app_id)
                if body and body["access_token"] and body["access_token"] == token:
                    return Application.from_body(body)
        raise BadToken("access token rejected")

    def _authorized_app(self, app_id: str, token: Optional[str]) -> Application:
        app = self._app_for_token(token)
        if app.app_id != app_id:
            # existence of foreign applications is hidden
            raise UnknownApplication(f"no application {app_id}")
        return app

    def _load_app(self, app_id: str) -> Application:
        body = self.store.get(Kind.APPLICATION, app_id)
        if body is None:
            raise NotFound(f"no application {app_id}")
        return Application.from_body(body)

    def _transition_stored_app(self, app_id: str, event: AppEvent, **kwargs) -> Application:
        """Apply a domain event to the stored application, atomically + audited."""

        def apply(txn):
            body = txn.read(Kind.APPLICATION, app_id)
            if body is None:
                raise NotFound(f"no application {app_id}")
            current = Application.from_body(body)
            updated = transition_application(current, event, **kwargs)
            txn.write(Kind.APPLICATION, app_id, updated.to_body())
            return current.state, updated

        previous, updated = self.store.run(apply)
        record_transition(self.store, updated, previous, self.clock.now())
        return updated

    # -- user workflow ------------------------------------------------------------

    def submit_registration(
        self, name: str, contact: str, job_description: str, nodes_requested: int
    ) -> dict:
        app = validate_registration(
            Applicant(name=name, contact=contact, job_description=job_description),
            nodes_requested,
            self.policy,
        )
        self.store.run(lambda txn: txn.write(Kind.APPLICATION, app.app_id, app.to_body()))
        self.store.append_event(
            AUDIT_STREAM,
            {
                "event": "app_transition",
                "app_id": app.app_id,
                "from": None,
                "to": app.state.value,
                "at": self.clock.now(),
            },
        )
        return {"app_id": app.app_id}

    def get_application(self, app_id: str, token: Optional[str]) -> dict:
        app = self._authorized_app(app_id, token)
        return self._application_view(app)

    def confirm(self, app_id: str, token: Optional[str]) -> dict:
        """User acknowledges the assignment: reserve nodes, power on, go Active."""
        self._authorized_app(app_id, token)
        with self._mutate:
            app = self._load_app(app_id)
            if AppEvent.CONFIRM not in LEGAL_TRANSITIONS[app.state]:
                # single-shot transition; a second confirm lands here
                transition_application(app, AppEvent.CONFIRM, policy=self.policy)
            assert app.period is not None
            duration = app.period[1] - app.period[0]
            now = self.clock.now()
            period = (now, now + duration)
            assignment = Assignment(node_ids=app.assignment, fitness=0.0)
            try:
                block = self.inventory.reserve(assignment, app_id, period)
            except RaceLost:
                # one retry with a fresh allocation before giving up
                fresh = self._allocate(len(app.assignment))
                block = self.inventory.reserve(fresh, app_id, period)
            self.store.run(lambda txn: txn.write(Kind.BLOCK, block.block_id, block.to_body()))
            self._transition_stored_app(
                app_id,
                AppEvent.CONFIRM,
                assignment=list(block.node_ids),
                period=period,
                policy=self.policy,
            )
            for node_id in block.node_ids:
                self.cluster.set_power(node_id, PowerState.ON, context=app_id)
            all_on = all(
                self.inventory.node(nid).power is PowerState.ON for nid in block.node_ids
            )
            if all_on:
                self._transition_stored_app(app_id, AppEvent.ACTIVATE)
            return {"block_id": block.block_id, "master_node": block.master_node}

    def upload_job(
        self, app_id: str, token: Optional[str], archive: bytes, environment: str
    ) -> dict:
        self._authorized_app(app_id, token)
        with self._mutate:
            app = self._load_app(app_id)
            if app.state is not AppState.ACTIVE:
                raise NotActive(f"application is {app.state.value}, not active")
            if not archive:
                raise EmptyArchive("uploaded archive is empty")
            if len(archive) > self.config.max_upload_bytes:
                raise ArchiveTooLarge(
                    f"archive is {len(archive)} bytes; cap is {self.config.max_upload_bytes}"
                )
            manifest_entry(self.cluster.manifest, environment)  # UnknownModule if absent
            block = self._block_for_app(app_id)
            job_id = new_id("job")
            job = Job(
                job_id=job_id,
                block_id=block.block_id,
                app_id=app_id,
                environment=environment,
                archive_name=f"{job_id}.tar",
            )
            self.cluster.transfer_file(
                self.config.gateway_identity,
                block.master_node,
                TransferDirection.IN,
                job.archive_name,
                archive,
                context=app_id,
            )
            self.store.run(lambda txn: txn.write(Kind.JOB, job.job_id, job.to_body()))
            self._jobs_by_app.setdefault(app_id, []).append(job.job_id)
            self.store.append_event(
                AUDIT_STREAM,
                {"event": "job_uploaded", "job_id": job.job_id, "app_id": app_id,
                 "environment": environment, "at": self.clock.now()},
            )
            return {"job_id": job.job_id, "state": job.state.value}

    def execute_job(self, token: Optional[str], job_id: str) -> dict:
        app_id = self._app_for_token(token).app_id
        with self._mutate:
            app = self._load_app(app_id)
            job = self._owned_job(app.app_id, job_id)
            if app.state is not AppState.ACTIVE:
                raise NotActive(f"application is {app.state.value}, not active")
            if job.state is not JobState.UPLOADED:
                raise WrongJobState(f"job is {job.state.value}, expected uploaded")
            block = self._block_for_app(app_id)
            self.cluster.switch_module(block, job.environment, context=app_id)
            run = self.cluster.spawn_job(
                block, job.job_id, job.archive_name, job.environment, context=app_id
            )

            def mark_running(txn):
                body = txn.read(Kind.JOB, job.job_id)
                assert body is not None
                body["state"] = JobState.RUNNING.value
                body["started_at"] = run.started_at
                txn.write(Kind.JOB, job.job_id, body)

            self.store.run(mark_running)
            self.store.append_event(
                AUDIT_STREAM,
                {"event": "job_started", "job_id": job.job_id, "app_id": app_id,
                 "at": run.started_at},
            )
            return {"job_id": job.job_id, "state": JobState.RUNNING.value}

    def job_status(self, token: Optional[str], job_id: str) -> dict:
        app = self._app_for_token(token)
        settle_job_runs(self.store, self.cluster, self.clock.now())
        job = self._owned_job(app.app_id, job_id)
        view = {"job_id": job.job_id, "state": job.state.value, "environment": job.environment}
        if job.started_at is not None:
            view["started_at"] = job.started_at
        if job.finished_at is not None:
            view["finished_at"] = job.finished_at
        if job.diagnostic:
            view["diagnostic"] = job.diagnostic
        return view

    def download_results(self, token: Optional[str], job_id: str) -> bytes:
        app = self._app_for_token(token)
        settle_job_runs(self.store, self.cluster, self.clock.now())
        job = self._owned_job(app.app_id, job_id)
        if job.state not in (JobState.FINISHED, JobState.FAILED):
            raise NotFinished(f"job is {job.state.value}; results exist once it ends")
        return self.store.get_artifact(job_id)

    def usage_report(self, app_id: str, token: Optional[str], admin_secret: Optional[str]) -> dict:
        if admin_secret is not None:
            self.require_admin(admin_secret)
        else:
            self._authorized_app(app_id, token)
        return self.sentinel.usage_report(app_id)

    def _owned_job(self, app_id: str, job_id: str) -> Job:
        body = self.store.get(Kind.JOB, job_id)
        if body is None or body["app_id"] != app_id:
            raise NotFound(f"no job {job_id}")  # foreign jobs are invisible
        return Job.from_body(body)

    def _block_for_app(self, app_id: str) -> Block:
        for block in self.inventory.active_blocks():
            if block.app_id == app_id:
                return block
        raise NotActive(f"application {app_id} holds no active block")

    # -- allocation ----------------------------------------------------------------

    def _allocate(self, node_count: int, min_perf_score: int = 0) -> Assignment:
        """GA search, taking the exhaustive path while the space is oracle-sized."""
        request = AllocationRequest(node_count=node_count, min_perf_score=min_perf_score)
        free = self.inventory.free_nodes()
        if len(free) >= node_count and math.comb(len(free), node_count) <= EXHAUSTIVE_LIMIT:
            return allocate_exhaustive(request, free)
        seed = zlib.crc32(f"{node_count}/{len(free)}".encode())
        return allocate_ga(request, free, GaParams(rng_seed=seed))

    # -- admin surface ---------------------------------------------------------------

    def admin_review(self, secret: Optional[str], app_id: str, decision: dict) -> dict:
        self.require_admin(secret)
        with self._mutate:
            app = self._load_app(app_id)
            verb = decision.get("decision")
            if verb == "reject":
                updated = self._transition_stored_app(app_id, AppEvent.REJECT)
                return {"app_id": app_id, "state": updated.state.value}
            if verb != "approve":
                raise BadRequest(f"unknown review decision {verb!r}")
            if decision.get("node_count") is None or decision.get("period_hours") is None:
                raise BadRequest("approve needs node_count and period_hours")
            node_count = int(decision["node_count"])
            period_hours = float(decision["period_hours"])
            if AppEvent.APPROVE not in LEGAL_TRANSITIONS[app.state]:
                transition_application(app, AppEvent.APPROVE)  # raises IllegalTransition
            free = len(self.inventory.free_nodes())
            if node_count > free:
                raise allocator.InsufficientFreeNodes(
                    f"request wants {node_count} nodes but only {free} are free"
                )
            check_approval_bounds(node_count, period_hours, self.policy)
            assignment = self._allocate(node_count)
            now = self.clock.now()
            period = (now, now + period_hours * 3600.0)
            updated = self._transition_stored_app(
                app_id,
                AppEvent.APPROVE,
                assignment=list(assignment.node_ids),
                period=period,
                policy=self.policy,
            )
            return {
                "app_id": app_id,
                "state": updated.state.value,
                "assignment": list(assignment.node_ids),
                "fitness": assignment.fitness,
                "period_hours": period_hours,
                "access_token": updated.access_token,  # delivered out-of-band at desk scale
            }

    def admin_preview(self, secret: Optional[str], app_id: str, node_count: int) -> dict:
        """Dry-run allocation for the review screen; changes nothing."""
        self.require_admin(secret)
        self._load_app(app_id)
        free = len(self.inventory.free_nodes())
        if node_count > free:
            raise allocator.InsufficientFreeNodes(
                f"request wants {node_count} nodes but only {free} are free"
            )
        check_approval_bounds(node_count, self.policy.max_period_hours, self.policy)
        assignment = self._allocate(node_count)
        return {
            "app_id": app_id,
            "assignment": list(assignment.node_ids),
            "fitness": assignment.fitness,
        }

    def list_applications(self, secret: Optional[str], state: Optional[str] = None) -> list[dict]:
        self.require_admin(secret)
        views = []
        for app_id in self.store.list_ids(Kind.APPLICATION):
            body = self.store.get(Kind.APPLICATION, app_id)
            if body is None or (state is not None and body["state"] != state):
                continue
            app = Application.from_body(body)
            view = self._application_view(app)
            view["applicant"] = {
                "name": app.applicant.name,
                "contact": app.applicant.contact,
                "job_description": app.applicant.job_description,
            }
            views.append(view)
        return views

    def cluster_snapshot(self, admin_secret: Optional[str] = None) -> dict:
        """Monitoring view; the public variant redacts ownership identities."""
        admin = False
        if admin_secret is not None:
            self.require_admin(admin_secret)
            admin = True
        stale = self.sentinel.stale_nodes()
        nodes = []
        for record in sorted(self.inventory.nodes, key=lambda r: r.node_id):
            try:
                sample = self.cluster.read_sensors(record.node_id)
                temperature, load = sample.temperature_c, sample.load
            except SensorFault:
                last = self.sentinel.last_samples.get(record.node_id)
                temperature = last["temperature_c"] if last else None
                load = last["load"] if last else None
            entry = {
                "node_id": record.node_id,
                "power": record.power.value,
                "temperature_c": temperature,
                "load": load,
                "owned": record.owner is not None,
                "stale": record.node_id in stale,
                "tier": record.spec.label,
            }
            if admin:
                entry["owner"] = record.owner
            nodes.append(entry)
        view = {
            "nodes": nodes,
            "tick_seconds": self.policy.sentinel_tick_seconds,
            "environments": sorted(self.cluster.manifest),
        }
        if admin:
            now = self.clock.now()
            blocks = []
            for block in self.inventory.active_blocks():
                status = period_status(block.period, now)
                blocks.append(
                    {
                        "block_id": block.block_id,
                        "app_id": block.app_id,
                        "size": len(block.node_ids),
                        "master_node": block.master_node,
                        "period_remaining_s": (
                            status.remaining_s if status.state is PeriodState.RUNNING else 0.0
                        ),
                    }
                )
            view["blocks"] = blocks
        return view

    def admin_fanout(self, secret: Optional[str], selector: str, command: str) -> list[dict]:
        """Run one command on every selected node concurrently; partial failure is fine."""
        self.require_admin(secret)
        matched = self._select_nodes(selector)
        if not matched:
            raise NoNodesMatched(f"selector {selector!r} matched no nodes")

        def one(node_id: str) -> dict:
            try:
                envelope = self.cluster.exec_command(
                    self.config.gateway_identity, node_id, command, context="fanout"
                )
                result = envelope.result
                assert result is not None
                return {
                    "node_id": node_id,
                    "exit_code": result.exit_code,
                    "stdout": result.stdout,
                    "stderr": result.stderr,
                }
            except NodeUnreachable:
                return {"node_id": node_id, "error": "node_unreachable"}

        with ThreadPoolExecutor(max_workers=min(16, len(matched))) as pool:
            results = list(pool.map(one, matched))
        return results

    def _select_nodes(self, selector: str) -> list[str]:
        all_ids = self.cluster.node_ids()
        if selector.strip() in ("all", "*"):
            return all_ids
        matched: list[str] = []
        for pattern in (p.strip() for p in selector.split(",")):
            if not pattern:
                continue
            for node_id in all_ids:
                if fnmatch.fnmatch(node_id, pattern) and node_id not in matched:
                    matched.append(node_id)
        return sorted(matched)

    # -- views -----------------------------------------------------------------------

    def _application_view(self, app: Application) -> dict:
        view: dict = {
            "app_id": app.app_id,
            "state": app.state.value,
            "nodes_requested": app.nodes_requested,
            "assignment": list(app.assignment),
            "period": list(app.period) if app.period else None,
        }
        block = next(
            (b for b in self.inventory.active_blocks() if b.app_id == app.app_id), None
        )
        if block is not None:
            view["block_id"] = block.block_id
            view["master_node"] = block.master_node
        jobs = []
        for job_id in self._jobs_by_app.get(app.app_id, []):
            body = self.store.get(Kind.JOB, job_id)
            if body:
                jobs.append(
                    {
                        "job_id": body["job_id"],
                        "state": body["state"],
                        "environment": body["environment"],
                        "started_at": body["started_at"],
                        "finished_at": body["finished_at"],
                    }
                )
        view["jobs"] = jobs
        return view
