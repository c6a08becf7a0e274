"""Heartbeat generation, pre-computation and the 168-byte wire frame."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from hbhc import crypto
from hbhc.keys import AgentIdentity

SENTINEL_EPOCH = 2**64 - 1
FRAME_SIZE = 168
DEFAULT_PRECOMPUTE_CAP = 3

_COMMITMENT = slice(0, 32)
_SIGNATURE = slice(32, 96)
_EPOCH = slice(96, 104)
_HPK = slice(104, 168)


class FreshnessMode(str, enum.Enum):
    TIME_EPOCH = "time-epoch"
    SEQUENCE = "sequence"


class HeartbeatError(ValueError):
    pass


class HeartbeatFormatError(HeartbeatError):
    """A received frame failed length, commitment or signature checks."""


@dataclass(frozen=True)
class HeartbeatConfig:
    interval_ms: int
    mode: FreshnessMode = FreshnessMode.TIME_EPOCH
    precompute_cap: int = DEFAULT_PRECOMPUTE_CAP

    def __post_init__(self):
        if self.interval_ms <= 0:
            raise HeartbeatError("interval_ms must be positive")
        object.__setattr__(self, "mode", FreshnessMode(self.mode))


@dataclass(frozen=True)
class Heartbeat:
    epoch: int
    commitment: bytes
    sig: bytes
    hpk: bytes

    @property
    def is_sentinel(self) -> bool:
        return self.epoch == SENTINEL_EPOCH

    def is_authentic(self) -> bool:
        return self.commitment == commitment_for(self.hpk, self.epoch) and crypto.verify(
            self.hpk, self.commitment, self.sig
        )


@dataclass(frozen=True)
class PrecomputeBuffer:
    heartbeats: tuple[Heartbeat, ...] = field(default=())

    @property
    def horizon_epochs(self) -> int:
        return len(self.heartbeats)

    def for_epoch(self, epoch: int) -> Heartbeat | None:
        for hb in self.heartbeats:
            if hb.epoch == epoch:
                return hb
        return None


def epoch_bytes(epoch: int) -> bytes:
    return epoch.to_bytes(8, "big")


def commitment_for(hpk: bytes, epoch: int) -> bytes:
    return crypto.sha256(hpk + epoch_bytes(epoch))


def _signed(parent: AgentIdentity, epoch: int) -> Heartbeat:
    if not 0 <= epoch <= SENTINEL_EPOCH:
        raise HeartbeatError("epoch out of 64-bit range")
    commitment = commitment_for(parent.heartbeat_pk, epoch)
    return Heartbeat(epoch, commitment, crypto.sign(parent.heartbeat_sk, commitment), parent.heartbeat_pk)


def epoch_at(now_ms: int, interval_ms: int) -> int:
    return now_ms // interval_ms


def heartbeat_gen(parent: AgentIdentity, now_ms: int, config: HeartbeatConfig) -> Heartbeat:
    if config.mode is not FreshnessMode.TIME_EPOCH:
        raise HeartbeatError("heartbeat_gen requires time-epoch mode")
    if now_ms < 0:
        raise HeartbeatError("now_ms must be non-negative")
    return _signed(parent, epoch_at(now_ms, config.interval_ms))


def heartbeat_for_epoch(parent: AgentIdentity, epoch: int) -> Heartbeat:
    """Sign an explicit epoch value; the simulator and precompute use this."""
    if epoch == SENTINEL_EPOCH:
        raise HeartbeatError("use revocation_heartbeat for the sentinel")
    return _signed(parent, epoch)


def sequence_heartbeat_gen(parent: AgentIdentity, seq: int) -> Heartbeat:
    if seq == SENTINEL_EPOCH:
        raise HeartbeatError("sequence number collides with the revocation sentinel")
    return _signed(parent, seq)


def revocation_heartbeat(parent: AgentIdentity) -> Heartbeat:
    return _signed(parent, SENTINEL_EPOCH)


def precompute(
    parent: AgentIdentity, start_epoch: int, n: int, config: HeartbeatConfig
) -> PrecomputeBuffer:
    if n <= 0:
        raise HeartbeatError("precompute count must be positive")
    if n > config.precompute_cap:
        raise HeartbeatError(f"precompute horizon {n} exceeds cap {config.precompute_cap}")
    if start_epoch + n - 1 >= SENTINEL_EPOCH:
        raise HeartbeatError("precompute range reaches the sentinel epoch")
    return PrecomputeBuffer(tuple(_signed(parent, start_epoch + i) for i in range(n)))


def serialize_heartbeat(hb: Heartbeat) -> bytes:
    frame = hb.commitment + hb.sig + epoch_bytes(hb.epoch) + hb.hpk
    if len(frame) != FRAME_SIZE:
        raise HeartbeatError(f"heartbeat frame is {len(frame)} bytes, expected {FRAME_SIZE}")
    return frame


def deserialize_heartbeat(frame: bytes) -> Heartbeat:
    if len(frame) != FRAME_SIZE:
        raise HeartbeatFormatError(f"frame must be {FRAME_SIZE} bytes, got {len(frame)}")
    hb = Heartbeat(
        epoch=int.from_bytes(frame[_EPOCH], "big"),
        commitment=bytes(frame[_COMMITMENT]),
        sig=bytes(frame[_SIGNATURE]),
        hpk=bytes(frame[_HPK]),
    )
    if hb.commitment != commitment_for(hb.hpk, hb.epoch):
        raise HeartbeatFormatError("commitment does not match hpk and epoch")
    if not crypto.verify(hb.hpk, hb.commitment, hb.sig):
        raise HeartbeatFormatError("heartbeat signature invalid")
    return hb


def push_bandwidth(n_children: int, interval_ms: int) -> float:
    """Bytes per second pushed to ``n_children`` at one frame per interval."""
    if n_children < 0 or interval_ms <= 0:
        raise HeartbeatError("invalid bandwidth parameters")
    return FRAME_SIZE * n_children * 1000 / interval_ms
