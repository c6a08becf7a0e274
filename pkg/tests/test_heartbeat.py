import hashlib
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from hbhc import crypto
from hbhc.heartbeat import (
    FRAME_SIZE,
    SENTINEL_EPOCH,
    FreshnessMode,
    Heartbeat,
    HeartbeatConfig,
    HeartbeatError,
    HeartbeatFormatError,
    deserialize_heartbeat,
    heartbeat_for_epoch,
    heartbeat_gen,
    precompute,
    push_bandwidth,
    revocation_heartbeat,
    sequence_heartbeat_gen,
    serialize_heartbeat,
)
from hbhc.keys import create_root

epochs = st.integers(min_value=0, max_value=SENTINEL_EPOCH - 1)


@pytest.mark.parametrize("now_ms,epoch", [(25_000, 2), (0, 0), (9_999, 0), (10_000, 1)])
def test_epoch_from_time(root, now_ms, epoch):
    assert heartbeat_gen(root, now_ms, HeartbeatConfig(10_000)).epoch == epoch


def test_commitment_and_signature_match_oracle(root):
    hb = heartbeat_gen(root, 25_000, HeartbeatConfig(10_000))
    expected = hashlib.sha256(root.heartbeat_pk + (2).to_bytes(8, "big")).digest()
    assert hb.commitment == expected
    assert oracles.verify(root.heartbeat_pk, hb.commitment, hb.sig)
    assert hb.hpk == root.heartbeat_pk
    assert hb.is_authentic()


def test_config_validation(root):
    with pytest.raises(HeartbeatError):
        HeartbeatConfig(0)
    with pytest.raises(HeartbeatError):
        heartbeat_gen(root, -1, HeartbeatConfig(1000))
    with pytest.raises(HeartbeatError):
        heartbeat_gen(root, 0, HeartbeatConfig(1000, FreshnessMode.SEQUENCE))


def test_sequence_heartbeats(root):
    beats = [sequence_heartbeat_gen(root, s) for s in (1, 2, 3)]
    assert [b.epoch for b in beats] == [1, 2, 3]
    assert all(b.is_authentic() for b in beats)
    with pytest.raises(HeartbeatError):
        sequence_heartbeat_gen(root, SENTINEL_EPOCH)


def test_sentinel(root):
    hb = revocation_heartbeat(root)
    assert hb.epoch == 0xFFFFFFFFFFFFFFFF
    assert hb.is_sentinel and hb.is_authentic()
    with pytest.raises(HeartbeatError):
        heartbeat_for_epoch(root, SENTINEL_EPOCH)


def test_precompute(root):
    buf = precompute(root, 10, 3, HeartbeatConfig(10_000))
    assert [h.epoch for h in buf.heartbeats] == [10, 11, 12]
    assert buf.horizon_epochs == 3
    assert buf.for_epoch(11).epoch == 11 and buf.for_epoch(13) is None
    with pytest.raises(HeartbeatError):
        precompute(root, 10, 4, HeartbeatConfig(10_000))
    with pytest.raises(HeartbeatError):
        precompute(root, SENTINEL_EPOCH - 1, 2, HeartbeatConfig(10_000, precompute_cap=5))


@given(st.integers(min_value=0, max_value=10**12), st.integers(min_value=0, max_value=10**12),
       st.integers(min_value=1, max_value=10**6))
def test_epoch_monotone(a, b, interval):
    root = create_root("m", b"\x05" * 32)
    lo, hi = sorted((a, b))
    cfg = HeartbeatConfig(interval)
    assert lo // interval <= hi // interval
    # signing is cheap enough to spot-check a few
    if a % 97 == 0:
        assert heartbeat_gen(root, lo, cfg).epoch <= heartbeat_gen(root, hi, cfg).epoch


def test_wire_layout(root):
    hb = heartbeat_for_epoch(root, 0x0102030405060708)
    frame = serialize_heartbeat(hb)
    assert len(frame) == FRAME_SIZE == 168
    assert frame[:32] == hb.commitment
    assert frame[32:96] == hb.sig
    assert frame[96:104] == bytes.fromhex("0102030405060708")
    assert frame[104:] == root.heartbeat_pk


def test_roundtrip_random_heartbeats():
    """10^4 heartbeats from 100 parents at random epochs."""
    rng = random.Random(99)
    parents = [create_root(f"p{i}", rng.randbytes(32)) for i in range(100)]
    for _ in range(10_000):
        parent = rng.choice(parents)
        epoch = rng.choice((0, SENTINEL_EPOCH, rng.randrange(SENTINEL_EPOCH)))
        hb = revocation_heartbeat(parent) if epoch == SENTINEL_EPOCH else heartbeat_for_epoch(parent, epoch)
        frame = serialize_heartbeat(hb)
        assert len(frame) == FRAME_SIZE
        assert deserialize_heartbeat(frame) == hb


def test_every_single_bit_flip_detected(root):
    frame = serialize_heartbeat(heartbeat_for_epoch(root, 12345))
    for bit in range(FRAME_SIZE * 8):
        mutated = bytearray(frame)
        mutated[bit // 8] ^= 1 << (bit % 8)
        with pytest.raises(HeartbeatFormatError):
            deserialize_heartbeat(bytes(mutated))


@pytest.mark.parametrize("size", [0, 167, 169, 336])
def test_wrong_length(size):
    with pytest.raises(HeartbeatFormatError):
        deserialize_heartbeat(b"\x00" * size)


def test_forged_frame_rejected(root, other_root):
    hb = heartbeat_for_epoch(root, 5)
    forged = Heartbeat(hb.epoch, hb.commitment, hb.sig, other_root.heartbeat_pk)
    with pytest.raises(HeartbeatError):
        deserialize_heartbeat(serialize_heartbeat(forged))


@given(epochs)
def test_any_epoch_roundtrips(epoch):
    root = create_root("h", b"\x06" * 32)
    hb = heartbeat_for_epoch(root, epoch)
    assert deserialize_heartbeat(serialize_heartbeat(hb)) == hb
    assert crypto.verify(hb.hpk, hb.commitment, hb.sig)


@pytest.mark.parametrize("n,interval,expected", [(1000, 10_000, 16_800), (10, 2000, 840), (0, 1000, 0)])
def test_push_bandwidth(n, interval, expected):
    assert push_bandwidth(n, interval) == expected
    assert push_bandwidth(n, interval) == 168 * n * 1000 / interval


def test_bandwidth_binary_kb():
    assert round(push_bandwidth(1000, 10_000) / 1024, 1) == 16.4
