"""Token claim extension carrying the heartbeat binding.

Token signature validation is the caller's job; this module only encodes,
decodes and applies the extra epoch floor on top of ``verify_auth``.
"""

from __future__ import annotations

from dataclasses import dataclass

from hbhc import crypto
from hbhc.keys import Credential, KeyHierarchyError
from hbhc.verify import (
    AncestorLink,
    AuthProof,
    Challenge,
    FreshnessPolicy,
    RejectReason,
    Verdict,
    VerifierState,
    verify_chain,
)

HB_BINDING = "hb_binding"
HPK_PARENT = "hpk_parent"
HB_EPOCH_MIN = "hb_epoch_min"


class ClaimError(ValueError):
    pass


@dataclass(frozen=True)
class HeartbeatClaims:
    credential: Credential
    hpk_parent: bytes
    hb_epoch_min: int


def embed_claims(credential: Credential, parent_hpk: bytes, min_epoch: int) -> dict[str, str]:
    if len(parent_hpk) != crypto.PUBLIC_KEY_SIZE:
        raise ClaimError("hpk_parent must be 64 bytes")
    if not 0 <= min_epoch < 2**64:
        raise ClaimError("hb_epoch_min out of range")
    claims = {
        "child_id": credential.child_id,
        "child_pk": credential.child_pk.hex(),
        "parent_id": credential.parent_id,
        "issued_at_epoch": str(credential.issued_at_epoch),
        HB_BINDING: credential.hb_binding.hex(),
        HPK_PARENT: parent_hpk.hex(),
        HB_EPOCH_MIN: min_epoch.to_bytes(8, "big").hex(),
    }
    return claims


def extract_claims(claims: dict) -> HeartbeatClaims:
    for key in (HB_BINDING, HPK_PARENT, HB_EPOCH_MIN):
        if key not in claims:
            raise ClaimError(f"missing claim {key!r}")
    try:
        hpk = bytes.fromhex(claims[HPK_PARENT])
        epoch_raw = bytes.fromhex(claims[HB_EPOCH_MIN])
    except (TypeError, ValueError) as exc:
        raise ClaimError(f"malformed claim: {exc}") from exc
    if len(hpk) != crypto.PUBLIC_KEY_SIZE:
        raise ClaimError("hpk_parent must decode to 64 bytes")
    if len(epoch_raw) != 8:
        raise ClaimError("hb_epoch_min must decode to 8 bytes")
    try:
        credential = Credential.from_fields(claims)
    except KeyHierarchyError as exc:
        raise ClaimError(str(exc)) from exc
    return HeartbeatClaims(credential, hpk, int.from_bytes(epoch_raw, "big"))


def verify_with_claims(
    claims: dict,
    proof: AuthProof,
    state: VerifierState,
    challenge: Challenge,
    now_ms: int,
    policy: FreshnessPolicy,
    links: list[AncestorLink] | None = None,
) -> Verdict:
    """Apply the claim constraints, then the ordinary proof verification.

    The proof's credential must be the one the token describes, and its
    heartbeat epoch must not be below ``hb_epoch_min``.
    """
    parsed = extract_claims(claims)
    if proof.credential != parsed.credential:
        return Verdict(False, RejectReason.BINDING_MISMATCH)
    with state.lock:
        cached = state.cached_parent_keys.get(parsed.credential.parent_id)
    if cached is not None and cached != parsed.hpk_parent:
        return Verdict(False, RejectReason.BINDING_MISMATCH)
    if proof.epoch < parsed.hb_epoch_min:
        return Verdict(False, RejectReason.EPOCH_BELOW_MINIMUM)
    return verify_chain(proof, links or [], state, challenge, now_ms, policy)
