"""Hashing, keyed derivation and secp256k1 ECDSA.

Public keys travel as 64 raw bytes (x || y, no SEC1 prefix) and signatures
as 64 raw bytes (r || s). Signing uses RFC 6979 nonces and always emits
low-s; verification refuses high-s.
"""

from __future__ import annotations

import hashlib
import hmac
from functools import lru_cache

import coincurve
from coincurve.ecdsa import cdata_to_der, deserialize_compact

CURVE_ORDER = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
HALF_ORDER = CURVE_ORDER // 2

PUBLIC_KEY_SIZE = 64
SIGNATURE_SIZE = 64
DIGEST_SIZE = 32

MAX_SCALAR_RETRIES = 255


class CryptoError(ValueError):
    """Raised for invalid key material handed to a primitive."""


class SecretScalar:
    """A secp256k1 private scalar in ``[1, n)``."""

    __slots__ = ("_value",)

    def __init__(self, value: int):
        if not 0 < value < CURVE_ORDER:
            raise CryptoError("secret scalar out of range")
        self._value = value

    @classmethod
    def from_bytes(cls, data: bytes) -> SecretScalar:
        if len(data) != 32:
            raise CryptoError("secret scalar must be 32 bytes")
        return cls(int.from_bytes(data, "big"))

    @property
    def value(self) -> int:
        return self._value

    def to_bytes(self) -> bytes:
        return self._value.to_bytes(32, "big")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SecretScalar):
            return NotImplemented
        return hmac.compare_digest(self.to_bytes(), other.to_bytes())

    def __hash__(self) -> int:
        return hash(("SecretScalar", self._value))

    def __repr__(self) -> str:
        return "SecretScalar(<redacted>)"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def kdf(key: bytes, label: bytes) -> bytes:
    """HMAC-SHA256 keyed by ``key`` over ``label``."""
    if not key:
        raise CryptoError("kdf key must be non-empty")
    return hmac.new(key, label, hashlib.sha256).digest()


def scalar_from_bytes(candidate: bytes, context: bytes) -> SecretScalar:
    """Map 32 bytes onto a valid scalar, re-deriving on the zero residue.

    ``candidate mod n`` is used when nonzero. Otherwise the candidate is
    re-keyed as ``kdf(candidate, context || counter)`` for counter 1..255.
    """
    if len(candidate) != 32:
        raise CryptoError("scalar candidate must be 32 bytes")
    value = int.from_bytes(candidate, "big") % CURVE_ORDER
    if value:
        return SecretScalar(value)
    # kdf rejects an empty key; an all-zero candidate is still a valid key
    for counter in range(1, MAX_SCALAR_RETRIES + 1):
        derived = kdf(candidate, context + bytes([counter]))
        value = int.from_bytes(derived, "big") % CURVE_ORDER
        if value:
            return SecretScalar(value)
    raise CryptoError("scalar derivation did not converge")


@lru_cache(maxsize=65536)
def _private_key(value: int) -> coincurve.PrivateKey:
    return coincurve.PrivateKey(value.to_bytes(32, "big"))


@lru_cache(maxsize=65536)
def _public_key(raw: bytes) -> coincurve.PublicKey:
    return coincurve.PublicKey(b"\x04" + raw)


def keypair(sk: SecretScalar) -> bytes:
    """Return the 64-byte public point ``sk * G``."""
    return _private_key(sk.value).public_key.format(compressed=False)[1:]


def is_valid_public_key(pk: bytes) -> bool:
    if not isinstance(pk, (bytes, bytearray)) or len(pk) != PUBLIC_KEY_SIZE:
        return False
    try:
        _public_key(bytes(pk))
    except (ValueError, TypeError):
        return False
    return True


def sign(sk: SecretScalar, message: bytes) -> bytes:
    compact = _private_key(sk.value).sign_recoverable(message)[:SIGNATURE_SIZE]
    # libsecp256k1 already normalizes; keep the guard for the wire contract
    r, s = compact[:32], int.from_bytes(compact[32:], "big")
    if s > HALF_ORDER:
        s = CURVE_ORDER - s
    return r + s.to_bytes(32, "big")


def verify(pk: bytes, message: bytes, sig: bytes) -> bool:
    """Return True iff ``sig`` is a valid low-s signature of ``message``.

    Malformed keys or signatures yield False rather than an exception.
    """
    if len(pk) != PUBLIC_KEY_SIZE or len(sig) != SIGNATURE_SIZE:
        return False
    r = int.from_bytes(sig[:32], "big")
    s = int.from_bytes(sig[32:], "big")
    if not (0 < r < CURVE_ORDER and 0 < s <= HALF_ORDER):
        return False
    try:
        public = _public_key(bytes(pk))
        der = cdata_to_der(deserialize_compact(bytes(sig)))
        return public.verify(der, message)
    except (ValueError, TypeError):
        return False
