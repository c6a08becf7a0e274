"""Challenge-response proofs and offline verification.

A verifier decides using only its ``VerifierState`` (cached parent heartbeat
keys, sequence counters, latched sentinel revocations), the proof, the
challenge it issued, and its own clock. Nothing here performs I/O.
"""

from __future__ import annotations

import enum
import random
import secrets
import threading
from dataclasses import dataclass, field

from hbhc import crypto
from hbhc.crypto import SecretScalar
from hbhc.heartbeat import (
    SENTINEL_EPOCH,
    FreshnessMode,
    Heartbeat,
    commitment_for,
    epoch_bytes,
)
from hbhc.keys import Credential, compute_hb_binding

DEFAULT_CHALLENGE_TTL_MS = 30_000
NONCE_SIZE = 32


class RejectReason(str, enum.Enum):
    UNKNOWN_PARENT = "UnknownParent"
    SENTINEL_REVOKED = "SentinelRevoked"
    HEARTBEAT_EXPIRED = "HeartbeatExpired"
    FUTURE_HEARTBEAT = "FutureHeartbeat"
    SEQUENCE_REGRESSION = "SequenceRegression"
    SEQUENCE_GAP_EXCEEDED = "SequenceGapExceeded"
    INVALID_HEARTBEAT_SIG = "InvalidHeartbeatSig"
    BINDING_MISMATCH = "BindingMismatch"
    INVALID_CHILD_SIG = "InvalidChildSig"
    CHALLENGE_INVALID = "ChallengeInvalid"
    EPOCH_BELOW_MINIMUM = "EpochBelowMinimum"
    CHAIN_INCOMPLETE = "ChainIncomplete"


class LifecycleState(str, enum.Enum):
    ACTIVE = "Active"
    ZOMBIE = "Zombie"
    TERMINATED = "Terminated"


@dataclass(frozen=True)
class FreshnessPolicy:
    interval_ms: int
    max_age_epochs: int = 3
    grace_epochs: int = 0
    mode: FreshnessMode = FreshnessMode.TIME_EPOCH
    max_sequence_gap: int = 3

    def __post_init__(self):
        if self.interval_ms <= 0:
            raise ValueError("interval_ms must be positive")
        if self.max_age_epochs < 0 or self.grace_epochs < 0:
            raise ValueError("max_age_epochs and grace_epochs must be non-negative")
        if self.max_sequence_gap <= 0:
            raise ValueError("max_sequence_gap must be positive")
        object.__setattr__(self, "mode", FreshnessMode(self.mode))

    @property
    def max_heartbeat_age_ms(self) -> int:
        """W_max in milliseconds."""
        return self.max_age_epochs * self.interval_ms

    @property
    def accept_window_epochs(self) -> int:
        return self.max_age_epochs + self.grace_epochs

    def zombie_bound_ms(self, clock_lag_ms: int = 0) -> int:
        """W_max + interval + grace + lag: the worst-case zombie window."""
        return (self.accept_window_epochs + 1) * self.interval_ms + max(0, clock_lag_ms)

    def current_epoch(self, now_ms: int) -> int:
        return now_ms // self.interval_ms

    def to_dict(self) -> dict:
        return {
            "interval_ms": self.interval_ms,
            "max_age_epochs": self.max_age_epochs,
            "grace_epochs": self.grace_epochs,
            "mode": self.mode.value,
            "max_sequence_gap": self.max_sequence_gap,
        }


@dataclass
class Challenge:
    nonce: bytes
    issued_at_ms: int
    ttl_ms: int = DEFAULT_CHALLENGE_TTL_MS
    used: bool = False

    def expired(self, now_ms: int) -> bool:
        return now_ms - self.issued_at_ms > self.ttl_ms


def issue_challenge(
    now_ms: int, rng: random.Random | None = None, ttl_ms: int = DEFAULT_CHALLENGE_TTL_MS
) -> Challenge:
    if ttl_ms <= 0:
        raise ValueError("ttl_ms must be positive")
    nonce = rng.randbytes(NONCE_SIZE) if rng is not None else secrets.token_bytes(NONCE_SIZE)
    return Challenge(nonce=nonce, issued_at_ms=now_ms, ttl_ms=ttl_ms)


@dataclass(frozen=True)
class AuthProof:
    credential: Credential
    epoch: int
    heartbeat_sig: bytes
    child_sig: bytes

    def to_dict(self) -> dict:
        return {
            "credential": self.credential.to_dict(),
            "epoch": self.epoch,
            "heartbeat_sig_hex": self.heartbeat_sig.hex(),
            "child_sig_hex": self.child_sig.hex(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> AuthProof:
        try:
            credential = Credential.from_fields(data["credential"])
            epoch = int(data["epoch"])
            hb_sig = bytes.fromhex(data["heartbeat_sig_hex"])
            child_sig = bytes.fromhex(data["child_sig_hex"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed proof: {exc}") from exc
        if not 0 <= epoch <= SENTINEL_EPOCH:
            raise ValueError("proof epoch out of 64-bit range")
        if len(hb_sig) != crypto.SIGNATURE_SIZE or len(child_sig) != crypto.SIGNATURE_SIZE:
            raise ValueError("signatures must be 64 bytes")
        return cls(credential, epoch, hb_sig, child_sig)


@dataclass(frozen=True)
class AncestorLink:
    """Liveness evidence for one ancestor above the authenticating agent.

    ``credential`` is the ancestor's own credential; ``epoch`` and
    ``heartbeat_sig`` come from the heartbeat its parent issued.
    """

    credential: Credential
    epoch: int
    heartbeat_sig: bytes

    @classmethod
    def from_heartbeat(cls, credential: Credential, heartbeat: Heartbeat) -> AncestorLink:
        return cls(credential, heartbeat.epoch, heartbeat.sig)


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: RejectReason | None = None
    heartbeat_age_epochs: int | None = None

    def __bool__(self) -> bool:
        return self.accepted

    @property
    def label(self) -> str:
        return "accept" if self.accepted else "reject"


def _reject(reason: RejectReason, age: int | None = None) -> Verdict:
    return Verdict(False, reason, age)


@dataclass
class VerifierState:
    cached_parent_keys: dict[str, bytes] = field(default_factory=dict)
    last_sequence: dict[str, int] = field(default_factory=dict)
    sentinel_revoked: set[str] = field(default_factory=set)
    # when non-empty, every proof's ancestor chain must end at one of these
    chain_anchors: set[str] = field(default_factory=set)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def trust(self, parent_id: str, hpk: bytes) -> None:
        """Cache a parent's heartbeat key during trust establishment."""
        if not crypto.is_valid_public_key(hpk):
            raise ValueError("parent heartbeat key is not a valid curve point")
        with self.lock:
            self.cached_parent_keys[parent_id] = bytes(hpk)

    def observe_heartbeat(self, parent_id: str, heartbeat: Heartbeat) -> bool:
        """Latch a sentinel broadcast. Returns True if the parent is now revoked."""
        with self.lock:
            hpk = self.cached_parent_keys.get(parent_id)
        if hpk is None or heartbeat.hpk != hpk or not heartbeat.is_sentinel:
            return False
        if not heartbeat.is_authentic():
            return False
        with self.lock:
            self.sentinel_revoked.add(parent_id)
        return True


def proof_data(nonce: bytes, epoch: int, heartbeat_sig: bytes) -> bytes:
    return nonce + epoch_bytes(epoch) + heartbeat_sig


def create_auth_proof(
    child_sk: SecretScalar, credential: Credential, heartbeat: Heartbeat, challenge_nonce: bytes
) -> AuthProof:
    if len(challenge_nonce) != NONCE_SIZE:
        raise ValueError("challenge nonce must be 32 bytes")
    data = proof_data(challenge_nonce, heartbeat.epoch, heartbeat.sig)
    return AuthProof(credential, heartbeat.epoch, heartbeat.sig, crypto.sign(child_sk, data))


def freshness_verdict(epoch: int, now_ms: int, policy: FreshnessPolicy) -> Verdict:
    """Time-epoch freshness rule alone, without any state."""
    age = policy.current_epoch(now_ms) - epoch
    if age < 0:
        return _reject(RejectReason.FUTURE_HEARTBEAT, age)
    if age > policy.accept_window_epochs:
        return _reject(RejectReason.HEARTBEAT_EXPIRED, age)
    return Verdict(True, None, age)


def _screen(
    state: VerifierState,
    parent_id: str,
    child_id: str,
    epoch: int,
    now_ms: int,
    policy: FreshnessPolicy,
    sequence: bool,
) -> tuple[Verdict, bytes | None]:
    # caller holds state.lock
    hpk = state.cached_parent_keys.get(parent_id)
    if hpk is None:
        return _reject(RejectReason.UNKNOWN_PARENT), None
    if parent_id in state.sentinel_revoked or epoch == SENTINEL_EPOCH:
        return _reject(RejectReason.SENTINEL_REVOKED), hpk
    if sequence and policy.mode is FreshnessMode.SEQUENCE:
        last = state.last_sequence.get(child_id, 0)
        if epoch <= last:
            return _reject(RejectReason.SEQUENCE_REGRESSION), hpk
        if epoch - last > policy.max_sequence_gap:
            return _reject(RejectReason.SEQUENCE_GAP_EXCEEDED), hpk
        return Verdict(True), hpk
    return freshness_verdict(epoch, now_ms, policy), hpk


def check_liveness(
    state: VerifierState,
    parent_id: str,
    child_id: str,
    epoch: int,
    now_ms: int,
    policy: FreshnessPolicy,
    commit: bool = False,
) -> Verdict:
    """Run the state-dependent checks (parent known, not revoked, fresh).

    This is the part of verification that can change over time; signatures
    of an honestly generated proof are constant. With ``commit`` the
    sequence counter advances on acceptance as in a full verification.
    """
    with state.lock:
        verdict, _ = _screen(state, parent_id, child_id, epoch, now_ms, policy, sequence=True)
        if verdict and commit and policy.mode is FreshnessMode.SEQUENCE:
            state.last_sequence[child_id] = epoch
    return verdict


def _latch_sentinel(state: VerifierState, parent_id: str, hpk: bytes, epoch: int, sig: bytes) -> None:
    if epoch != SENTINEL_EPOCH:
        return
    if crypto.verify(hpk, commitment_for(hpk, epoch), sig):
        with state.lock:
            state.sentinel_revoked.add(parent_id)


def _check_link_crypto(hpk: bytes, credential: Credential, epoch: int, hb_sig: bytes) -> Verdict | None:
    if not crypto.verify(hpk, commitment_for(hpk, epoch), hb_sig):
        return _reject(RejectReason.INVALID_HEARTBEAT_SIG)
    if credential.hb_binding != compute_hb_binding(hpk, credential.child_id):
        return _reject(RejectReason.BINDING_MISMATCH)
    return None


def verify_auth(
    proof: AuthProof,
    state: VerifierState,
    challenge: Challenge,
    now_ms: int,
    policy: FreshnessPolicy,
) -> Verdict:
    """Validate a child's proof; the first failing check is reported.

    Order: parent known, sentinel latch, sentinel epoch, freshness (or
    sequence), heartbeat signature, binding, child signature, challenge.
    On acceptance the challenge is consumed and, in sequence mode, the
    child's counter advances, atomically with respect to other callers.
    """
    cred = proof.credential
    parent_id = cred.parent_id
    with state.lock:
        verdict, hpk = _screen(state, parent_id, cred.child_id, proof.epoch, now_ms, policy, sequence=True)
    if not verdict:
        if verdict.reason is RejectReason.SENTINEL_REVOKED and hpk is not None:
            _latch_sentinel(state, parent_id, hpk, proof.epoch, proof.heartbeat_sig)
        return verdict
    age = verdict.heartbeat_age_epochs

    failed = _check_link_crypto(hpk, cred, proof.epoch, proof.heartbeat_sig)
    if failed is not None:
        return failed
    data = proof_data(challenge.nonce, proof.epoch, proof.heartbeat_sig)
    if not crypto.verify(cred.child_pk, data, proof.child_sig):
        return _reject(RejectReason.INVALID_CHILD_SIG, age)

    with state.lock:
        # state may have moved while signatures were checked
        recheck, _ = _screen(state, parent_id, cred.child_id, proof.epoch, now_ms, policy, sequence=True)
        if not recheck:
            return recheck
        if challenge.used or challenge.expired(now_ms):
            return _reject(RejectReason.CHALLENGE_INVALID, age)
        challenge.used = True
        if policy.mode is FreshnessMode.SEQUENCE:
            state.last_sequence[cred.child_id] = proof.epoch
    return Verdict(True, None, age)


def verify_chain(
    proof: AuthProof,
    links: list[AncestorLink],
    state: VerifierState,
    challenge: Challenge,
    now_ms: int,
    policy: FreshnessPolicy,
) -> Verdict:
    """Verify a proof from an agent below level 1.

    ``links`` runs upward from the agent's parent to the child of the root;
    each must carry a fresh, correctly bound heartbeat from its own parent,
    so revoking any ancestor stops every descendant within one window. If
    the state names chain anchors, the chain must end at one of them.
    """
    if links and policy.mode is not FreshnessMode.TIME_EPOCH:
        raise ValueError("chain verification requires time-epoch freshness")
    expected_id = proof.credential.parent_id
    for link in links:
        cred = link.credential
        if cred.child_id != expected_id:
            return _reject(RejectReason.BINDING_MISMATCH)
        with state.lock:
            verdict, hpk = _screen(state, cred.parent_id, cred.child_id, link.epoch, now_ms, policy, sequence=False)
        if not verdict:
            if verdict.reason is RejectReason.SENTINEL_REVOKED and hpk is not None:
                _latch_sentinel(state, cred.parent_id, hpk, link.epoch, link.heartbeat_sig)
            return verdict
        failed = _check_link_crypto(hpk, cred, link.epoch, link.heartbeat_sig)
        if failed is not None:
            return failed
        expected_id = cred.parent_id
    if state.chain_anchors and expected_id not in state.chain_anchors:
        return _reject(RejectReason.CHAIN_INCOMPLETE)
    return verify_auth(proof, state, challenge, now_ms, policy)


def classify_state(
    last_heartbeat_epoch: int | None,
    parent_revoked_at_ms: int | None,
    now_ms: int,
    policy: FreshnessPolicy,
) -> LifecycleState:
    if last_heartbeat_epoch is None or last_heartbeat_epoch == SENTINEL_EPOCH:
        return LifecycleState.TERMINATED
    if not freshness_verdict(last_heartbeat_epoch, now_ms, policy):
        return LifecycleState.TERMINATED
    if parent_revoked_at_ms is not None and parent_revoked_at_ms <= now_ms:
        return LifecycleState.ZOMBIE
    return LifecycleState.ACTIVE


class LifecycleTracker:
    """Verifier-side lifecycle of one child, driven by heartbeats it is shown.

    Once Terminated, the agent stays Terminated until an authentic heartbeat
    with a newer epoch is offered, whatever the clock does in between.
    """

    def __init__(self, parent_hpk: bytes, policy: FreshnessPolicy):
        self.parent_hpk = parent_hpk
        self.policy = policy
        self.held_epoch: int | None = None
        self.revoked_at_ms: int | None = None
        self.sentinel_seen = False
        self._terminated_at_epoch: int | None = None
        self._terminated = False

    def offer(self, heartbeat: Heartbeat) -> bool:
        if heartbeat.hpk != self.parent_hpk or not heartbeat.is_authentic():
            return False
        if heartbeat.is_sentinel:
            self.sentinel_seen = True
            return True
        if self.held_epoch is None or heartbeat.epoch > self.held_epoch:
            self.held_epoch = heartbeat.epoch
        return True

    def revoke(self, at_ms: int) -> None:
        if self.revoked_at_ms is None or at_ms < self.revoked_at_ms:
            self.revoked_at_ms = at_ms

    def state(self, now_ms: int) -> LifecycleState:
        if self.sentinel_seen:
            return LifecycleState.TERMINATED
        if self._terminated and self.held_epoch == self._terminated_at_epoch:
            return LifecycleState.TERMINATED
        current = classify_state(self.held_epoch, self.revoked_at_ms, now_ms, self.policy)
        if current is LifecycleState.TERMINATED:
            self._terminated = True
            self._terminated_at_epoch = self.held_epoch
        else:
            self._terminated = False
        return current
