"""Deterministic, tick-driven swarm simulation.

Each tick runs, in order: parent emissions and deliveries, explicit
revocation broadcasts, authentication attempts, and (on true epoch
boundaries) lifecycle classification. Randomness comes from streams spawned
off one ``SeedSequence`` and drawn as fixed matrices, so raising a drop rate
only ever turns deliveries into drops.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from hbhc.heartbeat import (
    DEFAULT_PRECOMPUTE_CAP,
    FRAME_SIZE,
    SENTINEL_EPOCH,
    FreshnessMode,
    Heartbeat,
    heartbeat_for_epoch,
    revocation_heartbeat,
    sequence_heartbeat_gen,
)
from hbhc.sim.delivery import (
    DeliveryModel,
    DualPath,
    Gossip,
    Precompute,
    Pull,
    Push,
    build_overlay,
    delivery_from_dict,
    delivery_to_dict,
    gossip_spread,
)
from hbhc.sim.swarm import ROOT_ID, HierarchySpec, Swarm, build_swarm
from hbhc.sim.trace import NO_HEARTBEAT, SimTrace, TraceRecord
from hbhc.verify import (
    AncestorLink,
    Challenge,
    FreshnessPolicy,
    RejectReason,
    Verdict,
    check_liveness,
    classify_state,
    create_auth_proof,
    verify_chain,
)

VERIFIER = "verifier"
CRYPTO_MODES = ("full", "freshness")


@dataclass(frozen=True)
class RevocationEvent:
    parent_id: str
    at_ms: int
    mode: str = "implicit"

    def __post_init__(self):
        if self.mode not in ("implicit", "explicit"):
            raise ValueError("revocation mode must be 'implicit' or 'explicit'")


@dataclass(frozen=True)
class ExclusionEvent:
    """Selective revocation: the parent stops sending to one child."""

    parent_id: str
    child_id: str
    at_ms: int


@dataclass(frozen=True)
class PartitionEvent:
    entities: tuple[str, ...]
    from_ms: int
    to_ms: int

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        if self.to_ms < self.from_ms:
            raise ValueError("partition ends before it starts")

    def covers(self, entity: str, t_ms: int) -> bool:
        return self.from_ms <= t_ms < self.to_ms and entity in self.entities


@dataclass
class SimClock:
    true_time_ms: int = 0
    per_entity_offset_ms: dict[str, int] = field(default_factory=dict)

    def view(self, entity: str) -> int:
        return self.true_time_ms + self.per_entity_offset_ms.get(entity, 0)


@dataclass
class SimConfig:
    spec: HierarchySpec
    delivery: DeliveryModel = field(default_factory=Push)
    policy: FreshnessPolicy = field(default_factory=lambda: FreshnessPolicy(10_000))
    duration_epochs: int = 100
    auth_cadence_ms: int | None = None
    auth_phase_ms: int = 0
    revocation_events: tuple[RevocationEvent, ...] = ()
    exclusion_events: tuple[ExclusionEvent, ...] = ()
    partition_events: tuple[PartitionEvent, ...] = ()
    clock_offsets_ms: dict[str, int] = field(default_factory=dict)
    rng_seed: int = 0
    tick_ms: int = 100
    crypto: str = "full"
    auth_agents: tuple[str, ...] | None = None
    trust_parents: bool = True
    record_deliveries: bool = True
    record_states: bool = True
    precompute_cap: int = DEFAULT_PRECOMPUTE_CAP

    @property
    def interval_ms(self) -> int:
        return self.policy.interval_ms

    @property
    def end_ms(self) -> int:
        return self.duration_epochs * self.interval_ms

    def validate(self) -> None:
        if self.duration_epochs < 1:
            raise ValueError("duration_epochs must be at least 1")
        if self.tick_ms <= 0 or self.interval_ms % self.tick_ms:
            raise ValueError("tick_ms must divide the heartbeat interval")
        period = self.auth_cadence_ms or self.interval_ms
        if period <= 0 or period % self.tick_ms or self.auth_phase_ms % self.tick_ms:
            raise ValueError("auth cadence and phase must be multiples of tick_ms")
        if self.auth_phase_ms < 0:
            raise ValueError("auth_phase_ms must be non-negative")
        if self.crypto not in CRYPTO_MODES:
            raise ValueError(f"crypto must be one of {CRYPTO_MODES}")
        if isinstance(self.delivery, Precompute) and self.delivery.buffer_epochs > self.precompute_cap:
            raise ValueError("precompute buffer exceeds the horizon cap")
        if self.policy.mode is FreshnessMode.SEQUENCE:
            if len(self.spec.levels) > 1:
                raise ValueError("sequence mode supports single-level hierarchies only")
            if isinstance(self.delivery, Precompute):
                raise ValueError("sequence mode cannot pre-compute heartbeats")

    def to_dict(self) -> dict:
        return {
            "levels": list(self.spec.levels),
            "root_seed_hex": self.spec.root_seed.hex(),
            "delivery": delivery_to_dict(self.delivery),
            "policy": self.policy.to_dict(),
            "duration_epochs": self.duration_epochs,
            "auth_cadence_ms": self.auth_cadence_ms,
            "auth_phase_ms": self.auth_phase_ms,
            "revocation_events": [e.__dict__ for e in self.revocation_events],
            "exclusion_events": [e.__dict__ for e in self.exclusion_events],
            "partition_events": [
                {"entities": list(e.entities), "from_ms": e.from_ms, "to_ms": e.to_ms}
                for e in self.partition_events
            ],
            "clock_offsets_ms": dict(self.clock_offsets_ms),
            "rng_seed": self.rng_seed,
            "tick_ms": self.tick_ms,
            "crypto": self.crypto,
            "auth_agents": None if self.auth_agents is None else list(self.auth_agents),
            "trust_parents": self.trust_parents,
            "record_deliveries": self.record_deliveries,
            "record_states": self.record_states,
        }

    @classmethod
    def from_dict(cls, data: dict) -> SimConfig:
        data = dict(data)
        seed_hex = data.pop("root_seed_hex", None)
        spec = HierarchySpec(
            tuple(data.pop("levels")),
            bytes.fromhex(seed_hex) if seed_hex else HierarchySpec((1,)).root_seed,
        )
        policy = FreshnessPolicy(**data.pop("policy", {"interval_ms": 10_000}))
        delivery = delivery_from_dict(data.pop("delivery", {"kind": "push"}))
        agents = data.pop("auth_agents", None)
        return cls(
            spec=spec,
            delivery=delivery,
            policy=policy,
            revocation_events=tuple(RevocationEvent(**e) for e in data.pop("revocation_events", ())),
            exclusion_events=tuple(ExclusionEvent(**e) for e in data.pop("exclusion_events", ())),
            partition_events=tuple(PartitionEvent(**e) for e in data.pop("partition_events", ())),
            auth_agents=None if agents is None else tuple(agents),
            **data,
        )

    @classmethod
    def from_json(cls, text: str) -> SimConfig:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Payload:
    """A heartbeat as held by a child, with the sender's ancestor evidence.

    ``links`` is None when the sender itself held no heartbeat to forward,
    in which case the child cannot build a complete chain.
    """

    epoch: int
    heartbeat: Heartbeat | None
    links: tuple | None


class Simulation:
    def __init__(self, config: SimConfig, swarm: Swarm | None = None):
        config.validate()
        self.config = config
        self.policy = config.policy
        self.swarm = swarm if swarm is not None else build_swarm(config.spec)
        self._check_events()
        self.full = config.crypto == "full"
        self.sequence = self.policy.mode is FreshnessMode.SEQUENCE
        self.state = self.swarm.verifier_state()
        if not config.trust_parents:
            self.state.cached_parent_keys.clear()
        self.clock = SimClock(0, dict(config.clock_offsets_ms))
        self.trace = SimTrace()
        self.revoked_at: dict[str, int] = {}
        self.revocation_mode: dict[str, str] = {}
        self.exclusions: dict[tuple[str, str], int] = {}
        self.partitions: list[PartitionEvent] = list(config.partition_events)
        for ev in config.revocation_events:
            self.revoke_parent(ev.parent_id, ev.at_ms, ev.mode)
        for ev in config.exclusion_events:
            self.exclude_child(ev.parent_id, ev.child_id, ev.at_ms)

        self.parents = self.swarm.parents
        self.children = {p: self.swarm.children_of[p] for p in self.parents}
        self.levels = {aid: ident.level for aid, ident in self.swarm.agents.items()}
        agents = config.auth_agents
        if agents is None:
            agents = tuple(a for a in self.swarm.agents if a != ROOT_ID)
        self.auth_agents = tuple(agents)

        self.held: dict[str, dict[int, Payload]] = {a: {} for a in self.swarm.agents}
        self.sentinel_held: dict[str, Payload] = {}
        self.latest: dict[str, Payload] = {}
        self.last_emitted: dict[str, int] = {}
        self.emit_count: dict[str, int] = {p: 0 for p in self.parents}
        self.broadcast_done: set[str] = set()
        self.ever_received: set[str] = set()
        self.missed_run: dict[str, int] = {}
        self._hb_cache: dict[tuple[str, int], Heartbeat] = {}

        drops_ss, gossip_ss, challenge_ss, pull_ss = np.random.SeedSequence(config.rng_seed).spawn(4)
        n_epochs = config.duration_epochs + 1
        self._drops: dict[str, np.ndarray] = {}
        self._gossip: dict[str, tuple] = {}
        delivery = config.delivery
        paths = delivery.paths if isinstance(delivery, DualPath) else 1
        for parent, parent_ss, gossip_parent_ss in zip(
            self.parents, drops_ss.spawn(len(self.parents)), gossip_ss.spawn(len(self.parents))
        ):
            n_children = len(self.children[parent])
            rng = np.random.default_rng(parent_ss)
            self._drops[parent] = rng.random((paths, n_epochs, n_children))
            if isinstance(delivery, Gossip):
                grng = np.random.default_rng(gossip_parent_ss)
                overlay = build_overlay(n_children, delivery.fanout, grng)
                seeds = grng.choice(n_children, size=min(delivery.seed_set_size, n_children), replace=False)
                seed_u = grng.random((n_epochs, len(seeds)))
                hop_u = grng.random((n_epochs, n_children, overlay.shape[1]))
                self._gossip[parent] = (overlay, seeds, seed_u, hop_u)
        self._challenge_rng = np.random.default_rng(challenge_ss)
        self._nonce_pool = b""
        self._pull_rng = np.random.default_rng(pull_ss)

        if isinstance(delivery, Precompute):
            self._provision_buffers()

    # -- events ---------------------------------------------------------------

    def _check_events(self) -> None:
        for ev in self.config.revocation_events:
            if not self.swarm.children_of.get(ev.parent_id):
                raise ValueError(f"unknown parent {ev.parent_id!r}")
        for ev in self.config.exclusion_events:
            if self.swarm.parent_of.get(ev.child_id) != ev.parent_id:
                raise ValueError(f"{ev.child_id!r} is not a child of {ev.parent_id!r}")

    def revoke_parent(self, parent_id: str, at_ms: int, mode: str = "implicit") -> None:
        """Implicit mode stops emission after ``at_ms``; explicit also broadcasts the sentinel."""
        if not self.swarm.children_of.get(parent_id):
            raise ValueError(f"unknown parent {parent_id!r}")
        if parent_id in self.revoked_at:
            raise ValueError(f"{parent_id!r} already revoked")
        RevocationEvent(parent_id, at_ms, mode)
        self.revoked_at[parent_id] = at_ms
        self.revocation_mode[parent_id] = mode

    def exclude_child(self, parent_id: str, child_id: str, at_ms: int) -> None:
        if self.swarm.parent_of.get(child_id) != parent_id:
            raise ValueError(f"{child_id!r} is not a child of {parent_id!r}")
        self.exclusions[(parent_id, child_id)] = at_ms

    def partition(self, entities, from_ms: int, to_ms: int) -> None:
        self.partitions.append(PartitionEvent(tuple(entities), from_ms, to_ms))

    def _partitioned(self, entity: str, t_ms: int) -> bool:
        return any(p.covers(entity, t_ms) for p in self.partitions)

    def _excluded(self, parent: str, child: str, t_ms: int) -> bool:
        at = self.exclusions.get((parent, child))
        return at is not None and t_ms >= at

    def _live(self, parent: str, t_ms: int) -> bool:
        at = self.revoked_at.get(parent)
        return at is None or t_ms <= at

    # -- heartbeats -----------------------------------------------------------

    def _heartbeat(self, parent: str, epoch: int) -> Heartbeat | None:
        if not self.full:
            return None
        key = (parent, epoch)
        hb = self._hb_cache.get(key)
        if hb is None:
            identity = self.swarm.agents[parent]
            if epoch == SENTINEL_EPOCH:
                hb = revocation_heartbeat(identity)
            elif self.sequence:
                hb = sequence_heartbeat_gen(identity, epoch)
            else:
                hb = heartbeat_for_epoch(identity, epoch)
            self._hb_cache[key] = hb
        return hb

    def _local_epoch(self, entity: str) -> int:
        return self.clock.view(entity) // self.policy.interval_ms

    def _best(self, agent: str, t_ms: int) -> Payload | None:
        if agent in self.sentinel_held:
            return self.sentinel_held[agent]
        held = self.held[agent]
        if not held:
            return None
        if self.sequence:
            return held[max(held)]
        now_epoch = self._local_epoch(agent)
        usable = [e for e in held if e <= now_epoch]
        return held[max(usable)] if usable else held[min(held)]

    def _chain_of(self, parent: str, t_ms: int) -> tuple | None:
        """Ancestor evidence a parent attaches to what it sends."""
        if parent == ROOT_ID or parent not in self.swarm.parent_of:
            return ()
        own = self._best(parent, t_ms)
        if own is None or own.links is None:
            return None
        return ((self.swarm.credentials[parent], own.epoch, own.heartbeat),) + own.links

    def _store(self, child: str, payloads: list[Payload]) -> None:
        held = self.held[child]
        for payload in payloads:
            held[payload.epoch] = payload
        if len(held) > 32:
            newest = max(held)
            for e in [e for e in held if e < newest - 16]:
                del held[e]

    def _payloads(self, parent: str, epoch: int, t_ms: int) -> list[Payload]:
        links = self._chain_of(parent, t_ms)
        span = self.config.delivery.buffer_epochs if isinstance(self.config.delivery, Precompute) else 1
        return [Payload(epoch + i, self._heartbeat(parent, epoch + i), links) for i in range(span)]

    def _provision_buffers(self) -> None:
        # parents appear before their children in swarm order
        for parent in self.parents:
            local = self.clock.view(parent)
            if local < 0:
                continue
            payloads = self._payloads(parent, local // self.policy.interval_ms, 0)
            for child in self.children[parent]:
                self._store(child, payloads)

    def _emit(self, parent: str, t_ms: int, true_epoch: int) -> None:
        local = self.clock.view(parent)
        if local < 0:
            return
        if self.sequence:
            boundary = local // self.policy.interval_ms
            if self.last_emitted.get(parent) == boundary:
                return
            self.last_emitted[parent] = boundary
            self.emit_count[parent] += 1
            epoch = self.emit_count[parent]
        else:
            epoch = local // self.policy.interval_ms
            if self.last_emitted.get(parent, -1) >= epoch:
                return
            self.last_emitted[parent] = epoch
            self.emit_count[parent] += 1
        self.trace.heartbeats_per_epoch[true_epoch] += 1
        if self.config.record_deliveries:
            self.trace.append(TraceRecord(true_epoch, t_ms, parent, self.levels[parent], "heartbeat", "emitted"))
        payloads = self._payloads(parent, epoch, t_ms)
        self.latest[parent] = payloads[0]
        delivery = self.config.delivery
        if isinstance(delivery, Pull):
            return
        kids = self.children[parent]
        blocked = {
            j for j, child in enumerate(kids)
            if self._excluded(parent, child, t_ms) or self._partitioned(child, t_ms)
        }
        parent_cut = self._partitioned(parent, t_ms)
        u = self._drops[parent]
        if isinstance(delivery, Gossip):
            overlay, seeds, seed_u, hop_u = self._gossip[parent]
            p = delivery.per_hop_drop
            seed_drop = (seed_u[true_epoch] < p) | np.array([parent_cut or int(s) in blocked for s in seeds])
            hop_drop = hop_u[true_epoch] < p
            if blocked:
                idx = sorted(blocked)
                hop_drop[idx, :] = True
                hop_drop |= np.isin(overlay, idx)
            holders, rounds = gossip_spread(overlay, seeds, seed_drop, hop_drop, delivery.rounds_for(len(kids)))
            self.trace.gossip_rounds.append(rounds)
        frames = len(payloads)
        for j, child in enumerate(kids):
            if (parent, child) in self.exclusions and self._excluded(parent, child, t_ms):
                continue
            self.trace.deliveries_attempted += 1
            if parent_cut or j in blocked:
                ok = False
            elif isinstance(delivery, Gossip):
                ok = j in holders
            elif isinstance(delivery, DualPath):
                ok = bool((u[:, true_epoch, j] >= delivery.drop_rate_per_path).any())
            else:
                ok = bool(u[0, true_epoch, j] >= delivery.drop_rate)
            if ok:
                self._store(child, payloads)
                self.ever_received.add(child)
                self.trace.deliveries_succeeded += 1
                self.trace.delivered_bytes += FRAME_SIZE * frames
                self.trace.network_ops[parent] += 1
                self.trace.network_ops[child] += 1
                self.missed_run[child] = 0
            else:
                run = self.missed_run.get(child, 0) + 1
                self.missed_run[child] = run
                self.trace.max_consecutive_missed = max(self.trace.max_consecutive_missed, run)
            if self.config.record_deliveries:
                self.trace.append(TraceRecord(
                    true_epoch, t_ms, child, self.levels[child], "delivery", "delivered" if ok else "dropped"
                ))

    def _broadcast_sentinel(self, parent: str, t_ms: int) -> None:
        self.broadcast_done.add(parent)
        payload = Payload(SENTINEL_EPOCH, self._heartbeat(parent, SENTINEL_EPOCH), self._chain_of(parent, t_ms))
        if self._partitioned(parent, t_ms):
            return
        for child in self.children[parent]:
            if self._partitioned(child, t_ms):
                continue
            self.sentinel_held[child] = payload
            self.trace.network_ops[parent] += 1
            self.trace.network_ops[child] += 1

    # -- authentication -------------------------------------------------------

    def _pull(self, agent: str, t_ms: int) -> None:
        parent = self.swarm.parent_of[agent]
        draw = self._pull_rng.random()
        if parent not in self.latest or self._excluded(parent, agent, t_ms):
            return
        if self._partitioned(agent, t_ms) or self._partitioned(parent, t_ms):
            return
        self.trace.network_ops[agent] += 1
        if draw < self.config.delivery.drop_rate:
            return
        self.trace.network_ops[parent] += 1
        self._store(agent, [self.latest[parent]])
        self.ever_received.add(agent)

    def _next_nonce(self) -> bytes:
        if not self._nonce_pool:
            self._nonce_pool = self._challenge_rng.bytes(32 * 1024)
        nonce, self._nonce_pool = self._nonce_pool[:32], self._nonce_pool[32:]
        return nonce

    def _verify(self, agent: str, payload: Payload, now_ms: int) -> Verdict:
        cred = self.swarm.credentials[agent]
        nonce = self._next_nonce()
        if self.full:
            challenge = Challenge(nonce, now_ms)
            proof = create_auth_proof(self.swarm.agents[agent].identity_sk, cred, payload.heartbeat, nonce)
            links = [AncestorLink(c, e, hb.sig) for c, e, hb in payload.links]
            return verify_chain(proof, links, self.state, challenge, now_ms, self.policy)
        for link_cred, epoch, _ in payload.links:
            verdict = self._liveness(link_cred.parent_id, link_cred.child_id, epoch, now_ms, commit=False)
            if not verdict:
                return verdict
        if self.state.chain_anchors and self._top_of(cred, payload.links) not in self.state.chain_anchors:
            return Verdict(False, RejectReason.CHAIN_INCOMPLETE)
        return self._liveness(cred.parent_id, agent, payload.epoch, now_ms, commit=True)

    @staticmethod
    def _top_of(cred, links) -> str:
        return links[-1][0].parent_id if links else cred.parent_id

    def _liveness(self, parent: str, child: str, epoch: int, now_ms: int, commit: bool) -> Verdict:
        verdict = check_liveness(self.state, parent, child, epoch, now_ms, self.policy, commit=commit)
        if verdict.reason is RejectReason.SENTINEL_REVOKED and epoch == SENTINEL_EPOCH:
            # honest sentinels always carry a valid signature
            with self.state.lock:
                self.state.sentinel_revoked.add(parent)
        return verdict

    def _attempt(self, agent: str, t_ms: int, true_epoch: int) -> None:
        if isinstance(self.config.delivery, Pull) and agent not in self.sentinel_held:
            self._pull(agent, t_ms)
        payload = self._best(agent, t_ms)
        level = self.levels[agent]
        if payload is None or payload.links is None:
            self.trace.append(TraceRecord(true_epoch, t_ms, agent, level, "auth", "reject", NO_HEARTBEAT))
            return
        verdict = self._verify(agent, payload, self.clock.view(VERIFIER))
        self.trace.append(TraceRecord(
            true_epoch, t_ms, agent, level, "auth", verdict.label,
            verdict.reason.value if verdict.reason else "", verdict.heartbeat_age_epochs,
        ))

    def _record_states(self, t_ms: int, true_epoch: int) -> None:
        now = self.clock.view(VERIFIER)
        for agent in self.auth_agents:
            payload = self._best(agent, t_ms)
            epoch = None
            if payload is not None and payload.links is not None:
                epoch = min([payload.epoch] + [e for _, e, _ in payload.links])
            revoked = [self.revoked_at[a] for a in self.swarm.ancestors(agent) if a in self.revoked_at]
            state = classify_state(epoch, min(revoked) if revoked else None, now, self.policy)
            self.trace.append(TraceRecord(true_epoch, t_ms, agent, self.levels[agent], "state", state.value))

    # -- main loop ------------------------------------------------------------

    def step(self, t_ms: int) -> None:
        cfg = self.config
        interval = self.policy.interval_ms
        self.clock.true_time_ms = t_ms
        true_epoch = t_ms // interval
        for parent in self.parents:
            if self._live(parent, t_ms):
                self._emit(parent, t_ms, true_epoch)
        for parent, at in self.revoked_at.items():
            if self.revocation_mode[parent] == "explicit" and t_ms >= at and parent not in self.broadcast_done:
                self._broadcast_sentinel(parent, t_ms)
        period = cfg.auth_cadence_ms or interval
        offset = t_ms - cfg.auth_phase_ms
        if offset >= 0 and offset % period == 0:
            for agent in self.auth_agents:
                self._attempt(agent, t_ms, true_epoch)
        if cfg.record_states and not self.sequence and t_ms % interval == 0:
            self._record_states(t_ms, true_epoch)

    def _event_ticks(self) -> list[int]:
        """Ticks at which something can happen; stepping only these is exact."""
        cfg = self.config
        tick, end, interval = cfg.tick_ms, cfg.end_ms, self.policy.interval_ms

        def up(t):
            return -(-t // tick) * tick

        times = set(range(0, end, interval))
        times.update(range(cfg.auth_phase_ms, end, cfg.auth_cadence_ms or interval))
        times.update(up(at) for at in self.revoked_at.values())
        for offset in {self.clock.per_entity_offset_ms.get(p, 0) for p in self.parents}:
            first = -(-offset // interval) * interval - offset
            times.update(up(t) for t in range(first, end, interval))
        times.add(0)
        return sorted(t for t in times if 0 <= t < end)

    def run(self) -> SimTrace:
        for t_ms in self._event_ticks():
            self.step(t_ms)
        for parent in self.parents:
            self.trace.coverage[parent] = sum(1 for c in self.children[parent] if c in self.ever_received)
        self.trace.network_ops.setdefault(VERIFIER, 0)
        return self.trace


def run(config: SimConfig, swarm: Swarm | None = None) -> SimTrace:
    return Simulation(config, swarm).run()
