"""Concurrent load generator for the verifier service.

Each request runs the whole flow: fetch a challenge, build the proof
client-side, submit it. Every exchange is recorded so the decisions can be
replayed offline against ``verify_auth`` at the server's reported time.
"""

from __future__ import annotations

import asyncio
import secrets
import statistics
import time
from dataclasses import dataclass, field

import httpx
import numpy as np

from hbhc.heartbeat import heartbeat_for_epoch
from hbhc.keys import AgentIdentity, Credential, create_root, issue_credential
from hbhc.service.schemas import VerifyRequest
from hbhc.verify import (
    AuthProof,
    Challenge,
    FreshnessPolicy,
    VerifierState,
    create_auth_proof,
    verify_auth,
)


@dataclass
class BenchRecord:
    proof: AuthProof
    nonce: bytes
    issued_at_ms: int
    ttl_ms: int
    server_time_ms: int
    result: str
    reason: str | None


@dataclass
class BenchReport:
    concurrency: int
    requests: int
    completed: int = 0
    transport_errors: int = 0
    accepts: int = 0
    rejects: int = 0
    mismatches: int | None = None
    mean_ms: float = 0.0
    p99_ms: float = 0.0
    flow_mean_ms: float = 0.0
    rps: float = 0.0
    elapsed_s: float = 0.0
    policy: FreshnessPolicy | None = None
    records: list[BenchRecord] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k not in ("records", "policy")}
        out["policy"] = self.policy.to_dict() if self.policy else None
        return out


def _tamper(sig: bytes) -> bytes:
    return bytes([sig[0] ^ 0x01]) + sig[1:]


async def _run(url: str, concurrency: int, total: int, children: int, tamper_every: int,
               parent: AgentIdentity, members: list[tuple[Credential, AgentIdentity]]) -> BenchReport:
    report = BenchReport(concurrency, total)
    verify_lat: list[float] = []
    flow_lat: list[float] = []
    counter = iter(range(total))
    limits = httpx.Limits(max_connections=concurrency, max_keepalive_connections=concurrency)
    beats: dict[int, object] = {}

    async with httpx.AsyncClient(base_url=url, limits=limits, timeout=60.0) as client:
        reg = await client.post("/parents", json={"parent_id": parent.agent_id, "hpk_hex": parent.heartbeat_pk.hex()})
        reg.raise_for_status()
        health = (await client.get("/health")).json()
        interval = health["policy"]["interval_ms"]

        async def worker():
            for i in counter:
                cred, child = members[i % len(members)]
                start = time.perf_counter()
                try:
                    ch = (await client.post("/challenge")).json()
                    nonce = bytes.fromhex(ch["challenge_hex"])
                    epoch = ch["issued_at_ms"] // interval
                    if epoch not in beats:
                        beats[epoch] = heartbeat_for_epoch(parent, epoch)
                    proof = create_auth_proof(child.identity_sk, cred, beats[epoch], nonce)
                    if tamper_every and i % tamper_every == tamper_every - 1:
                        proof = AuthProof(proof.credential, proof.epoch, proof.heartbeat_sig, _tamper(proof.child_sig))
                    body = VerifyRequest.of(proof, nonce).model_dump()
                    sent = time.perf_counter()
                    resp = await client.post("/verify", json=body)
                    done = time.perf_counter()
                except httpx.HTTPError:
                    report.transport_errors += 1
                    continue
                if resp.status_code != 200:
                    report.transport_errors += 1
                    continue
                data = resp.json()
                verify_lat.append(done - sent)
                flow_lat.append(done - start)
                report.completed += 1
                if data["result"] == "accept":
                    report.accepts += 1
                else:
                    report.rejects += 1
                report.records.append(BenchRecord(
                    proof, nonce, ch["issued_at_ms"], ch["ttl_ms"], data["server_time_ms"],
                    data["result"], data["reason"],
                ))

        began = time.perf_counter()
        await asyncio.gather(*(worker() for _ in range(concurrency)))
        report.elapsed_s = time.perf_counter() - began

    if verify_lat:
        report.mean_ms = statistics.fmean(verify_lat) * 1e3
        report.p99_ms = float(np.percentile(verify_lat, 99)) * 1e3
        report.flow_mean_ms = statistics.fmean(flow_lat) * 1e3
        report.rps = report.completed / report.elapsed_s
    report.policy = FreshnessPolicy(**health["policy"])
    return report


def oracle_mismatches(records: list[BenchRecord], parent_id: str, hpk: bytes, policy: FreshnessPolicy) -> int:
    """Replay each recorded proof offline; count decisions that differ."""
    state = VerifierState()
    state.trust(parent_id, hpk)
    mismatches = 0
    for rec in records:
        challenge = Challenge(rec.nonce, rec.issued_at_ms, rec.ttl_ms)
        verdict = verify_auth(rec.proof, state, challenge, rec.server_time_ms, policy)
        reason = verdict.reason.value if verdict.reason else None
        mismatches += (verdict.label, reason) != (rec.result, rec.reason)
    return mismatches


def run_bench(url: str, concurrency: int = 100, total: int = 1000, children: int = 10,
              tamper_every: int = 0, seed: bytes | None = None) -> BenchReport:
    if concurrency <= 0 or total <= 0:
        raise ValueError("concurrency and total must be positive")
    parent = create_root(f"bench-{secrets.token_hex(4)}", seed or secrets.token_bytes(32))
    issued: set[str] = set()
    members = [issue_credential(parent, f"{parent.agent_id}.{i}", 0, issued) for i in range(children)]
    report = asyncio.run(_run(url, concurrency, total, children, tamper_every, parent, members))
    report.mismatches = oracle_mismatches(report.records, parent.agent_id, parent.heartbeat_pk, report.policy)
    return report
