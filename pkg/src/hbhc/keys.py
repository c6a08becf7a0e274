"""Agent key hierarchy: identity, heartbeat and child-derivation keys."""

from __future__ import annotations

from collections.abc import MutableSet
from dataclasses import dataclass, field

from hbhc import crypto
from hbhc.crypto import SecretScalar

MAX_AGENT_ID_BYTES = 256

HEARTBEAT_LABEL = b"heartbeat"
CHILDREN_LABEL = b"children"
CHILD_PREFIX = b"child:"
ROOT_CONTEXT = b"root"


class KeyHierarchyError(ValueError):
    pass


class DuplicateChildError(KeyHierarchyError):
    pass


def validate_agent_id(agent_id: str) -> bytes:
    """Return the UTF-8 encoding of a well-formed agent id."""
    if not isinstance(agent_id, str) or not agent_id:
        raise KeyHierarchyError("agent id must be a non-empty string")
    encoded = agent_id.encode("utf-8")
    if len(encoded) > MAX_AGENT_ID_BYTES:
        raise KeyHierarchyError(f"agent id exceeds {MAX_AGENT_ID_BYTES} bytes")
    # the credential text encoding is line-oriented
    if any(ch in agent_id for ch in "\r\n\x00"):
        raise KeyHierarchyError("agent id must not contain line breaks or NUL")
    return encoded


@dataclass(frozen=True)
class AgentIdentity:
    agent_id: str
    identity_sk: SecretScalar = field(repr=False)
    identity_pk: bytes
    heartbeat_sk: SecretScalar = field(repr=False)
    heartbeat_pk: bytes
    child_derivation_key: bytes = field(repr=False)
    level: int = 0

    @property
    def public(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "level": self.level,
            "identity_pk": self.identity_pk.hex(),
            "heartbeat_pk": self.heartbeat_pk.hex(),
        }


@dataclass(frozen=True)
class Credential:
    child_id: str
    child_pk: bytes
    hb_binding: bytes
    parent_id: str
    issued_at_epoch: int

    FIELDS = ("child_id", "child_pk", "hb_binding", "parent_id", "issued_at_epoch")

    def to_text(self) -> str:
        """Line-oriented ``key=value`` encoding with hex binary fields."""
        values = {
            "child_id": self.child_id,
            "child_pk": self.child_pk.hex(),
            "hb_binding": self.hb_binding.hex(),
            "parent_id": self.parent_id,
            "issued_at_epoch": str(self.issued_at_epoch),
        }
        return "".join(f"{name}={values[name]}\n" for name in self.FIELDS)

    @classmethod
    def from_text(cls, text: str) -> Credential:
        pairs = {}
        # split on newline only; ids may contain other separators
        for line in text.split("\n"):
            if not line.strip("\r"):
                continue
            name, sep, value = line.partition("=")
            if not sep:
                raise KeyHierarchyError(f"malformed credential line: {line!r}")
            pairs[name.strip()] = value
        missing = [name for name in cls.FIELDS if name not in pairs]
        if missing:
            raise KeyHierarchyError(f"credential missing fields: {', '.join(missing)}")
        return cls.from_fields(pairs)

    def to_dict(self) -> dict:
        return {
            "child_id": self.child_id,
            "child_pk": self.child_pk.hex(),
            "hb_binding": self.hb_binding.hex(),
            "parent_id": self.parent_id,
            "issued_at_epoch": self.issued_at_epoch,
        }

    @classmethod
    def from_fields(cls, fields: dict) -> Credential:
        try:
            child_pk = bytes.fromhex(fields["child_pk"])
            hb_binding = bytes.fromhex(fields["hb_binding"])
            epoch = int(fields["issued_at_epoch"])
        except (KeyError, ValueError, TypeError) as exc:
            raise KeyHierarchyError(f"malformed credential: {exc}") from exc
        if len(child_pk) != crypto.PUBLIC_KEY_SIZE:
            raise KeyHierarchyError("child_pk must be 64 bytes")
        if len(hb_binding) != crypto.DIGEST_SIZE:
            raise KeyHierarchyError("hb_binding must be 32 bytes")
        if not 0 <= epoch < 2**64:
            raise KeyHierarchyError("issued_at_epoch out of range")
        validate_agent_id(fields["child_id"])
        validate_agent_id(fields["parent_id"])
        return cls(fields["child_id"], child_pk, hb_binding, fields["parent_id"], epoch)


def derive_heartbeat_keys(identity_sk: SecretScalar) -> tuple[SecretScalar, bytes]:
    hsk = crypto.scalar_from_bytes(
        crypto.kdf(identity_sk.to_bytes(), HEARTBEAT_LABEL), HEARTBEAT_LABEL
    )
    return hsk, crypto.keypair(hsk)


def _identity_from_sk(agent_id: str, sk: SecretScalar, level: int) -> AgentIdentity:
    hsk, hpk = derive_heartbeat_keys(sk)
    return AgentIdentity(
        agent_id=agent_id,
        identity_sk=sk,
        identity_pk=crypto.keypair(sk),
        heartbeat_sk=hsk,
        heartbeat_pk=hpk,
        child_derivation_key=crypto.kdf(sk.to_bytes(), CHILDREN_LABEL),
        level=level,
    )


def create_root(agent_id: str, seed: bytes) -> AgentIdentity:
    validate_agent_id(agent_id)
    if len(seed) != 32:
        raise KeyHierarchyError("root seed must be 32 bytes")
    return _identity_from_sk(agent_id, crypto.scalar_from_bytes(seed, ROOT_CONTEXT), 0)


def restore_identity(agent_id: str, identity_sk: SecretScalar, level: int) -> AgentIdentity:
    """Rebuild an identity from its identity scalar; all other keys derive from it."""
    validate_agent_id(agent_id)
    if level < 0:
        raise KeyHierarchyError("level must be non-negative")
    return _identity_from_sk(agent_id, identity_sk, level)


def derive_child(parent: AgentIdentity, child_id: str) -> AgentIdentity:
    label = CHILD_PREFIX + validate_agent_id(child_id)
    sk = crypto.scalar_from_bytes(crypto.kdf(parent.child_derivation_key, label), label)
    return _identity_from_sk(child_id, sk, parent.level + 1)


def compute_hb_binding(parent_hpk: bytes, child_id: str) -> bytes:
    return crypto.sha256(parent_hpk + child_id.encode("utf-8"))


def issue_credential(
    parent: AgentIdentity,
    child_id: str,
    now_epoch: int,
    issued: MutableSet[str] | None = None,
) -> tuple[Credential, AgentIdentity]:
    """Derive ``child_id`` under ``parent`` and issue its heartbeat-bound credential.

    ``issued`` is the parent's registry of already-issued child ids; when
    supplied, a repeated id is refused and new ids are recorded in it.
    """
    if issued is not None and child_id in issued:
        raise DuplicateChildError(f"credential already issued for {child_id!r}")
    if not 0 <= now_epoch < 2**64:
        raise KeyHierarchyError("epoch out of range")
    child = derive_child(parent, child_id)
    credential = Credential(
        child_id=child_id,
        child_pk=child.identity_pk,
        hb_binding=compute_hb_binding(parent.heartbeat_pk, child_id),
        parent_id=parent.agent_id,
        issued_at_epoch=now_epoch,
    )
    if issued is not None:
        issued.add(child_id)
    return credential, child
