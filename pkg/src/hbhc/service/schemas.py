"""Request and response bodies for the verifier service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, field_validator

from hbhc import crypto
from hbhc.keys import Credential
from hbhc.verify import NONCE_SIZE, AncestorLink, AuthProof

MAX_EPOCH = 2**64 - 1


def _hex(value: str, size: int, name: str) -> str:
    try:
        raw = bytes.fromhex(value)
    except ValueError as exc:
        raise ValueError(f"{name} is not valid hex") from exc
    if len(raw) != size:
        raise ValueError(f"{name} must be {size} bytes, got {len(raw)}")
    return value.lower()


class RegisterParentRequest(BaseModel):
    parent_id: str = Field(min_length=1, max_length=256)
    hpk_hex: str

    @field_validator("hpk_hex")
    @classmethod
    def _point(cls, v: str) -> str:
        v = _hex(v, crypto.PUBLIC_KEY_SIZE, "hpk_hex")
        if not crypto.is_valid_public_key(bytes.fromhex(v)):
            raise ValueError("hpk_hex is not a point on the curve")
        return v


class RegisterParentResponse(BaseModel):
    status: Literal["registered", "unchanged"]
    parent_id: str


class ChallengeResponse(BaseModel):
    challenge_hex: str
    ttl_ms: int
    issued_at_ms: int


class CredentialFields(BaseModel):
    child_id: str = Field(min_length=1, max_length=256)
    child_pk: str
    hb_binding: str
    parent_id: str = Field(min_length=1, max_length=256)
    issued_at_epoch: int = Field(ge=0, le=MAX_EPOCH)

    @field_validator("child_pk")
    @classmethod
    def _pk(cls, v: str) -> str:
        return _hex(v, crypto.PUBLIC_KEY_SIZE, "child_pk")

    @field_validator("hb_binding")
    @classmethod
    def _binding(cls, v: str) -> str:
        return _hex(v, crypto.DIGEST_SIZE, "hb_binding")

    def to_credential(self) -> Credential:
        return Credential.from_fields(self.model_dump())

    @classmethod
    def of(cls, credential: Credential) -> CredentialFields:
        return cls(**credential.to_dict())


class AncestorLinkBody(CredentialFields):
    epoch: int = Field(ge=0, le=MAX_EPOCH)
    heartbeat_sig_hex: str

    @field_validator("heartbeat_sig_hex")
    @classmethod
    def _sig(cls, v: str) -> str:
        return _hex(v, crypto.SIGNATURE_SIZE, "heartbeat_sig_hex")

    def to_link(self) -> AncestorLink:
        return AncestorLink(self.to_credential(), self.epoch, bytes.fromhex(self.heartbeat_sig_hex))


class VerifyRequest(CredentialFields):
    epoch: int = Field(ge=0, le=MAX_EPOCH)
    heartbeat_sig_hex: str
    child_sig_hex: str
    challenge_hex: str
    ancestors: list[AncestorLinkBody] = Field(default_factory=list)

    @field_validator("heartbeat_sig_hex", "child_sig_hex")
    @classmethod
    def _sig(cls, v: str) -> str:
        return _hex(v, crypto.SIGNATURE_SIZE, "signature")

    @field_validator("challenge_hex")
    @classmethod
    def _nonce(cls, v: str) -> str:
        return _hex(v, NONCE_SIZE, "challenge_hex")

    def to_proof(self) -> AuthProof:
        return AuthProof(
            self.to_credential(),
            self.epoch,
            bytes.fromhex(self.heartbeat_sig_hex),
            bytes.fromhex(self.child_sig_hex),
        )

    @classmethod
    def of(cls, proof: AuthProof, challenge_nonce: bytes, ancestors=()) -> VerifyRequest:
        return cls(
            **proof.credential.to_dict(),
            epoch=proof.epoch,
            heartbeat_sig_hex=proof.heartbeat_sig.hex(),
            child_sig_hex=proof.child_sig.hex(),
            challenge_hex=challenge_nonce.hex(),
            ancestors=[
                AncestorLinkBody(**link.credential.to_dict(), epoch=link.epoch,
                                 heartbeat_sig_hex=link.heartbeat_sig.hex())
                for link in ancestors
            ],
        )


class VerifyResponse(BaseModel):
    result: Literal["accept", "reject"]
    reason: str | None = None
    heartbeat_age_epochs: int | None = None
    server_time_ms: int


class HealthResponse(BaseModel):
    status: Literal["ok"] = "ok"
    uptime_ms: int
    verifications_total: int
    policy: dict


class ErrorResponse(BaseModel):
    error: str
    detail: list | str | None = None
