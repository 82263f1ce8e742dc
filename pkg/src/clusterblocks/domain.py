"""Domain types and the application workflow state machine.

Everything here is value-semantics: transitions return new Application
instances and never touch shared state, so any thread may call them.
"""

from __future__ import annotations

import secrets
import uuid
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

from .errors import ClusterError

Period = tuple[float, float]  # (start, end) unix seconds, end-exclusive


# ---------------------------------------------------------------------------
# errors

class EmptyField(ClusterError):
    code = "empty_field"


class NonPositiveNodeCount(ClusterError):
    code = "non_positive_node_count"


class IllegalTransition(ClusterError):
    code = "illegal_transition"


class PeriodTooLong(ClusterError):
    code = "period_too_long"


class BadAssignment(ClusterError):
    code = "bad_assignment"


class InvalidPeriod(ClusterError):
    code = "invalid_period"


class NodeCountOutOfPolicy(ClusterError):
    code = "node_count_out_of_policy"


# ---------------------------------------------------------------------------
# node inventory types

class PowerState(str, Enum):
    OFF = "off"
    ON = "on"


@dataclass(frozen=True)
class NodeSpecClass:
    """One tier of the heterogeneous inventory ladder."""

    label: str
    perf_score: int  # abstract performance units, strictly ordered across tiers
    mem_mb: int

    def __post_init__(self) -> None:
        if self.perf_score <= 0:
            raise ValueError(f"perf_score must be positive, got {self.perf_score}")
        if self.mem_mb <= 0:
            raise ValueError(f"mem_mb must be positive, got {self.mem_mb}")


@dataclass
class NodeRecord:
    """Live state of one simulated machine."""

    node_id: str
    spec: NodeSpecClass
    power: PowerState = PowerState.OFF
    owner: Optional[str] = None  # block_id while reserved
    temperature_c: float = 25.0
    load: float = 0.0

    @property
    def free(self) -> bool:
        return self.owner is None


# ---------------------------------------------------------------------------
# policy

@dataclass(frozen=True)
class Policy:
    """Operator policy knobs with the stock public-cluster defaults."""

    min_nodes: int = 2
    max_nodes: int = 4
    max_period_hours: int = 72
    temp_threshold_c: float = 60.0
    sentinel_tick_seconds: int = 5

    def __post_init__(self) -> None:
        if self.min_nodes <= 0 or self.max_nodes <= 0:
            raise ValueError("node bounds must be positive")
        if self.min_nodes > self.max_nodes:
            raise ValueError(f"min_nodes {self.min_nodes} > max_nodes {self.max_nodes}")
        if self.max_period_hours <= 0:
            raise ValueError("max_period_hours must be positive")
        if self.temp_threshold_c <= 0:
            raise ValueError("temp_threshold_c must be positive")
        if self.sentinel_tick_seconds <= 0:
            raise ValueError("sentinel_tick_seconds must be positive")

    @property
    def max_period_seconds(self) -> float:
        return self.max_period_hours * 3600.0


def check_approval_bounds(node_count: int, period_hours: float, policy: Policy) -> None:
    """Reject an approval outside the policy's node-count and period windows."""
    if not (policy.min_nodes <= node_count <= policy.max_nodes):
        raise NodeCountOutOfPolicy(
            f"node count {node_count} outside policy window "
            f"[{policy.min_nodes}, {policy.max_nodes}]"
        )
    if period_hours <= 0:
        raise InvalidPeriod(f"period of {period_hours}h is not usable")
    if period_hours > policy.max_period_hours:
        raise PeriodTooLong(
            f"period {period_hours}h exceeds the {policy.max_period_hours}h cap"
        )


# ---------------------------------------------------------------------------
# application workflow

class AppState(str, Enum):
    SUBMITTED = "submitted"
    APPROVED = "approved"
    REJECTED = "rejected"
    CONFIRMED = "confirmed"
    ACTIVE = "active"
    EXPIRED = "expired"
    CLOSED = "closed"


class AppEvent(str, Enum):
    APPROVE = "approve"
    REJECT = "reject"
    CONFIRM = "confirm"
    ACTIVATE = "activate"
    EXPIRE = "expire"
    CLOSE = "close"


# The complete legal-transition table; anything absent is IllegalTransition.
LEGAL_TRANSITIONS: dict[AppState, dict[AppEvent, AppState]] = {
    AppState.SUBMITTED: {
        AppEvent.APPROVE: AppState.APPROVED,
        AppEvent.REJECT: AppState.REJECTED,
    },
    AppState.APPROVED: {
        AppEvent.CONFIRM: AppState.CONFIRMED,
        AppEvent.REJECT: AppState.REJECTED,
    },
    AppState.CONFIRMED: {AppEvent.ACTIVATE: AppState.ACTIVE},
    AppState.ACTIVE: {AppEvent.EXPIRE: AppState.EXPIRED},
    AppState.EXPIRED: {AppEvent.CLOSE: AppState.CLOSED},
    AppState.REJECTED: {},
    AppState.CLOSED: {},
}

# States in which an application holds a node assignment and usage period.
ASSIGNED_STATES = frozenset(
    {AppState.APPROVED, AppState.CONFIRMED, AppState.ACTIVE, AppState.EXPIRED, AppState.CLOSED}
)


@dataclass(frozen=True)
class Applicant:
    name: str
    contact: str
    job_description: str


@dataclass(frozen=True)
class Application:
    """One access request moving through the registration-to-power-off workflow."""

    app_id: str
    applicant: Applicant
    nodes_requested: int
    state: AppState = AppState.SUBMITTED
    assignment: tuple[str, ...] = ()
    period: Optional[Period] = None
    access_token: Optional[str] = None

    def __post_init__(self) -> None:
        assigned = self.state in ASSIGNED_STATES
        if assigned and (not self.assignment or self.period is None):
            raise ValueError(f"state {self.state.value} requires assignment and period")
        if not assigned and (self.assignment or self.period is not None):
            raise ValueError(f"state {self.state.value} must not carry assignment or period")

    def to_body(self) -> dict:
        return {
            "app_id": self.app_id,
            "applicant": {
                "name": self.applicant.name,
                "contact": self.applicant.contact,
                "job_description": self.applicant.job_description,
            },
            "nodes_requested": self.nodes_requested,
            "state": self.state.value,
            "assignment": list(self.assignment),
            "period": list(self.period) if self.period else None,
            "access_token": self.access_token,
        }

    @classmethod
    def from_body(cls, body: dict) -> "Application":
        return cls(
            app_id=body["app_id"],
            applicant=Applicant(**body["applicant"]),
            nodes_requested=body["nodes_requested"],
            state=AppState(body["state"]),
            assignment=tuple(body["assignment"]),
            period=tuple(body["period"]) if body["period"] else None,
            access_token=body["access_token"],
        )


def new_access_token() -> str:
    """32 random bytes, hex-encoded: the anonymous user's only identity."""
    return secrets.token_hex(32)


def new_id(prefix: str) -> str:
    return f"{prefix}-{uuid.uuid4().hex[:12]}"


def validate_registration(
    applicant: Applicant, nodes_requested: int, policy: Policy
) -> Application:
    """Turn a raw registration form into a fresh Submitted application.

    nodes_requested is recorded verbatim; the admin decides the actual count
    within policy bounds at review time.
    """
    for field_name in ("name", "contact", "job_description"):
        if not getattr(applicant, field_name).strip():
            raise EmptyField(f"registration field '{field_name}' is empty")
    if nodes_requested <= 0:
        raise NonPositiveNodeCount(f"nodes_requested must be >= 1, got {nodes_requested}")
    del policy  # bounds are enforced at approval, not registration
    return Application(
        app_id=new_id("app"),
        applicant=applicant,
        nodes_requested=nodes_requested,
    )


def transition_application(
    app: Application,
    event: AppEvent,
    *,
    assignment: Optional[list[str]] = None,
    period: Optional[Period] = None,
    policy: Optional[Policy] = None,
    token_factory: Callable[[], str] = new_access_token,
) -> Application:
    """Apply one workflow event, returning the updated application.

    Legality of (state, event) is checked first, so illegal pairs raise
    IllegalTransition regardless of payload. Approve requires assignment,
    period and policy; Confirm may re-base the period (the usage clock starts
    at confirmation); Reject clears any tentative assignment.
    """
    table = LEGAL_TRANSITIONS[app.state]
    if event not in table:
        raise IllegalTransition(
            f"event '{event.value}' is not legal in state '{app.state.value}'"
        )
    next_state = table[event]

    if event is AppEvent.APPROVE:
        if not assignment:
            raise BadAssignment("approval requires a non-empty node assignment")
        if period is None:
            raise InvalidPeriod("approval requires a usage period")
        _check_period(period, policy)
        return replace(
            app,
            state=next_state,
            assignment=tuple(assignment),
            period=period,
            access_token=token_factory(),
        )

    if event is AppEvent.REJECT:
        return replace(app, state=next_state, assignment=(), period=None, access_token=None)

    if event is AppEvent.CONFIRM:
        # the usage clock starts now, and a lost reservation race may have
        # re-allocated the assignment
        updates: dict = {"state": next_state}
        if period is not None:
            _check_period(period, policy)
            updates["period"] = period
        if assignment:
            updates["assignment"] = tuple(assignment)
        return replace(app, **updates)

    return replace(app, state=next_state)


def _check_period(period: Period, policy: Optional[Policy]) -> None:
    start, end = period
    if start >= end:
        raise InvalidPeriod(f"period start {start} is not before end {end}")
    if policy is not None and (end - start) > policy.max_period_seconds:
        raise PeriodTooLong(
            f"period of {(end - start) / 3600.0:.1f}h exceeds the "
            f"{policy.max_period_hours}h cap"
        )


# ---------------------------------------------------------------------------
# usage-period arithmetic

class PeriodState(str, Enum):
    NOT_STARTED = "not_started"
    RUNNING = "running"
    OVER = "over"


@dataclass(frozen=True)
class PeriodStatus:
    state: PeriodState
    remaining_s: float = 0.0


def period_status(period: Period, now: float) -> PeriodStatus:
    """Pure classification of `now` against an end-exclusive usage window."""
    start, end = period
    if start >= end:
        raise InvalidPeriod(f"period start {start} is not before end {end}")
    if now < start:
        return PeriodStatus(PeriodState.NOT_STARTED)
    if now >= end:
        return PeriodStatus(PeriodState.OVER)
    return PeriodStatus(PeriodState.RUNNING, remaining_s=end - now)


# ---------------------------------------------------------------------------
# blocks and jobs

@dataclass(frozen=True)
class Block:
    """An approved, isolated set of nodes with a master and a usage period."""

    block_id: str
    app_id: str
    node_ids: tuple[str, ...]
    master_node: str
    period: Period

    def __post_init__(self) -> None:
        if not self.node_ids:
            raise ValueError("a block needs at least one node")
        if self.master_node not in self.node_ids:
            raise ValueError(f"master {self.master_node} is not a block member")
        if len(set(self.node_ids)) != len(self.node_ids):
            raise ValueError("block node_ids must be distinct")

    def to_body(self) -> dict:
        return {
            "block_id": self.block_id,
            "app_id": self.app_id,
            "node_ids": list(self.node_ids),
            "master_node": self.master_node,
            "period": list(self.period),
        }

    @classmethod
    def from_body(cls, body: dict) -> "Block":
        return cls(
            block_id=body["block_id"],
            app_id=body["app_id"],
            node_ids=tuple(body["node_ids"]),
            master_node=body["master_node"],
            period=tuple(body["period"]),
        )


class JobState(str, Enum):
    UPLOADED = "uploaded"
    RUNNING = "running"
    FINISHED = "finished"
    FAILED = "failed"


@dataclass(frozen=True)
class Job:
    """An uploaded program bundle and its execution lifecycle."""

    job_id: str
    block_id: str
    app_id: str
    environment: str
    archive_name: str = "job.tar"
    state: JobState = JobState.UPLOADED
    started_at: Optional[float] = None
    finished_at: Optional[float] = None
    exit_status: Optional[int] = None
    diagnostic: str = ""

    def to_body(self) -> dict:
        return {
            "job_id": self.job_id,
            "block_id": self.block_id,
            "app_id": self.app_id,
            "environment": self.environment,
            "archive_name": self.archive_name,
            "state": self.state.value,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "exit_status": self.exit_status,
            "diagnostic": self.diagnostic,
        }

    @classmethod
    def from_body(cls, body: dict) -> "Job":
        return cls(
            job_id=body["job_id"],
            block_id=body["block_id"],
            app_id=body["app_id"],
            environment=body["environment"],
            archive_name=body["archive_name"],
            state=JobState(body["state"]),
            started_at=body["started_at"],
            finished_at=body["finished_at"],
            exit_status=body["exit_status"],
            diagnostic=body["diagnostic"],
        )
