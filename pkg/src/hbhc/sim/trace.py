"""Append-only simulation trace."""

from __future__ import annotations

import csv
import io
from collections import Counter, defaultdict
from dataclasses import dataclass, field

CSV_COLUMNS = ("epoch", "agent_id", "level", "event_type", "outcome", "reject_reason", "heartbeat_age_epochs")

NO_HEARTBEAT = "NoHeartbeat"


@dataclass(frozen=True, slots=True)
class TraceRecord:
    epoch: int
    time_ms: int
    agent_id: str
    level: int
    event_type: str  # heartbeat | delivery | auth | state
    outcome: str
    reject_reason: str = ""
    heartbeat_age_epochs: int | None = None

    def row(self) -> tuple:
        age = "" if self.heartbeat_age_epochs is None else self.heartbeat_age_epochs
        return (self.epoch, self.agent_id, self.level, self.event_type, self.outcome, self.reject_reason, age)


@dataclass
class SimTrace:
    records: list[TraceRecord] = field(default_factory=list)
    heartbeats_per_epoch: Counter = field(default_factory=Counter)
    deliveries_attempted: int = 0
    deliveries_succeeded: int = 0
    delivered_bytes: int = 0
    network_ops: Counter = field(default_factory=Counter)
    coverage: dict[str, int] = field(default_factory=dict)
    gossip_rounds: list[int] = field(default_factory=list)
    max_consecutive_missed: int = 0

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def auths(self, agent_id: str | None = None) -> list[TraceRecord]:
        return [
            r for r in self.records
            if r.event_type == "auth" and (agent_id is None or r.agent_id == agent_id)
        ]

    def auth_counts(self, until_ms: int | None = None) -> tuple[int, int]:
        """(attempts, denied) among attempts strictly before ``until_ms``."""
        total = denied = 0
        for r in self.records:
            if r.event_type != "auth" or (until_ms is not None and r.time_ms >= until_ms):
                continue
            total += 1
            denied += r.outcome != "accept"
        return total, denied

    def fprr(self, until_ms: int | None = None) -> float:
        """Denied fraction of legitimate attempts; pass the first revocation time as ``until_ms``."""
        total, denied = self.auth_counts(until_ms)
        return denied / total if total else 0.0

    def last_accept_ms(self, agent_id: str) -> int | None:
        times = [r.time_ms for r in self.auths(agent_id) if r.outcome == "accept"]
        return max(times) if times else None

    def zombie_window_ms(self, agent_id: str, revoked_at_ms: int, hold_ms: int = 0) -> int:
        """Last acceptance after revocation, relative to it.

        ``hold_ms`` credits each accepted sample with the sampling interval
        that follows it; zero when nothing after revocation was accepted.
        """
        after = [r.time_ms for r in self.auths(agent_id) if r.outcome == "accept" and r.time_ms > revoked_at_ms]
        if not after:
            return 0
        return max(after) - revoked_at_ms + hold_ms

    def denied_at_end(self, agent_ids) -> dict[str, bool]:
        """Whether each agent's final recorded attempt was rejected."""
        last: dict[str, TraceRecord] = {}
        for r in self.records:
            if r.event_type == "auth":
                last[r.agent_id] = r
        return {aid: aid in last and last[aid].outcome != "accept" for aid in agent_ids}

    def first_permanent_denial_ms(self, agent_id: str) -> int | None:
        """Time of the first rejection after which no attempt was accepted."""
        result = None
        for r in self.auths(agent_id):
            if r.outcome == "accept":
                result = None
            elif result is None:
                result = r.time_ms
        return result

    def states_by_epoch(self) -> dict[int, Counter]:
        out: dict[int, Counter] = defaultdict(Counter)
        for r in self.records:
            if r.event_type == "state":
                out[r.epoch][r.outcome] += 1
        return dict(out)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.records:
            writer.writerow(r.row())
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text
