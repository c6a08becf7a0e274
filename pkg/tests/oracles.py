"""Independent reference implementations used to cross-check the library.

Nothing here imports hbhc. The curve math is textbook affine arithmetic over
the secp256k1 parameters and the nonce generator follows RFC 6979 section
3.2 with HMAC-SHA256. Slow, but only ever used on small samples.
"""

from __future__ import annotations

import hashlib

P = 2**256 - 2**32 - 977
N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
GX = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
GY = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8
G = (GX, GY)

SHA256_VECTORS = {
    b"": "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855",
    b"abc": "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad",
}
# RFC 4231 test case 2
HMAC_VECTOR = (b"Jefe", b"what do ya want for nothing?",
               "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843")


def hmac_sha256(key: bytes, msg: bytes) -> bytes:
    """HMAC built from the raw construction rather than the hmac module."""
    block = 64
    if len(key) > block:
        key = hashlib.sha256(key).digest()
    key = key.ljust(block, b"\x00")
    inner = hashlib.sha256(bytes(b ^ 0x36 for b in key) + msg).digest()
    return hashlib.sha256(bytes(b ^ 0x5C for b in key) + inner).digest()


def on_curve(point) -> bool:
    x, y = point
    return (y * y - x * x * x - 7) % P == 0


def point_add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    (x1, y1), (x2, y2) = a, b
    if x1 == x2 and (y1 + y2) % P == 0:
        return None
    if a == b:
        lam = 3 * x1 * x1 * pow(2 * y1, -1, P) % P
    else:
        lam = (y2 - y1) * pow(x2 - x1, -1, P) % P
    x3 = (lam * lam - x1 - x2) % P
    return x3, (lam * (x1 - x3) - y1) % P


def scalar_mult(k: int, point=G):
    result = None
    addend = point
    while k:
        if k & 1:
            result = point_add(result, addend)
        addend = point_add(addend, addend)
        k >>= 1
    return result


def encode_point(point) -> bytes:
    return point[0].to_bytes(32, "big") + point[1].to_bytes(32, "big")


def decode_point(raw: bytes):
    return int.from_bytes(raw[:32], "big"), int.from_bytes(raw[32:], "big")


def public_key(sk: int) -> bytes:
    return encode_point(scalar_mult(sk))


def rfc6979_nonce(sk: int, digest: bytes) -> int:
    x = sk.to_bytes(32, "big")
    h = (int.from_bytes(digest, "big") % N).to_bytes(32, "big")
    v = b"\x01" * 32
    k = b"\x00" * 32
    k = hmac_sha256(k, v + b"\x00" + x + h)
    v = hmac_sha256(k, v)
    k = hmac_sha256(k, v + b"\x01" + x + h)
    v = hmac_sha256(k, v)
    while True:
        v = hmac_sha256(k, v)
        candidate = int.from_bytes(v, "big")
        if 1 <= candidate < N:
            return candidate
        k = hmac_sha256(k, v + b"\x00")
        v = hmac_sha256(k, v)


def sign(sk: int, message: bytes) -> bytes:
    """Deterministic ECDSA over SHA-256(message), low-s normalized."""
    digest = hashlib.sha256(message).digest()
    z = int.from_bytes(digest, "big")
    k = rfc6979_nonce(sk, digest)
    r = scalar_mult(k)[0] % N
    s = pow(k, -1, N) * (z + r * sk) % N
    if s > N // 2:
        s = N - s
    return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def verify(pk: bytes, message: bytes, sig: bytes) -> bool:
    if len(pk) != 64 or len(sig) != 64:
        return False
    point = decode_point(pk)
    if not on_curve(point):
        return False
    r, s = int.from_bytes(sig[:32], "big"), int.from_bytes(sig[32:], "big")
    if not (0 < r < N and 0 < s <= N // 2):
        return False
    z = int.from_bytes(hashlib.sha256(message).digest(), "big")
    w = pow(s, -1, N)
    res = point_add(scalar_mult(z * w % N), scalar_mult(r * w % N, point))
    return res is not None and res[0] % N == r


def zombie_bound_ms(interval_ms: int, max_age: int, lag_ms: int = 0, grace: int = 0) -> int:
    """Worst-case window, written out independently of FreshnessPolicy."""
    return max_age * interval_ms + interval_ms + grace * interval_ms + max(0, lag_ms)


def accepts_age(now_ms: int, epoch: int, interval_ms: int, window: int) -> bool:
    age = now_ms // interval_ms - epoch
    return 0 <= age <= window
