"""HTTP transport around the offline verifier.

The service adds no protocol logic: ``/verify`` decides with the same
``verify_chain`` call an offline verifier would make, using the server's
clock. Protocol rejections are HTTP 200 with ``result: "reject"``; only a
challenge problem changes the status (404 unknown, 409 used, 410 expired).
"""

from __future__ import annotations

import contextlib
import os
import secrets
import socket
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import uvicorn
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from hbhc.keys import KeyHierarchyError
from hbhc.service.schemas import (
    ChallengeResponse,
    HealthResponse,
    RegisterParentRequest,
    RegisterParentResponse,
    VerifyRequest,
    VerifyResponse,
)
from hbhc.verify import (
    DEFAULT_CHALLENGE_TTL_MS,
    NONCE_SIZE,
    Challenge,
    FreshnessPolicy,
    RejectReason,
    VerifierState,
    verify_chain,
)

DEFAULT_BIND = "127.0.0.1"
DEFAULT_PORT = 8080


@dataclass
class ServiceConfig:
    bind: str = DEFAULT_BIND
    port: int = DEFAULT_PORT
    challenge_ttl_ms: int = DEFAULT_CHALLENGE_TTL_MS
    policy: FreshnessPolicy = field(default_factory=lambda: FreshnessPolicy(10_000))
    max_connections: int = 10_000
    backlog: int = 2048

    @classmethod
    def from_env(cls, **overrides) -> ServiceConfig:
        env = {}
        if "HBHC_BIND" in os.environ:
            env["bind"] = os.environ["HBHC_BIND"]
        if "HBHC_PORT" in os.environ:
            env["port"] = int(os.environ["HBHC_PORT"])
        env.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**env)


def wall_clock_ms() -> Callable[[], int]:
    """Wall time sampled once, advanced by the monotonic clock."""
    base_wall = time.time_ns() // 1_000_000
    base_mono = time.monotonic_ns()
    return lambda: base_wall + (time.monotonic_ns() - base_mono) // 1_000_000


class ChallengeStore:
    """Issued challenges. Spent or expired entries linger so reuse gets a precise status."""

    def __init__(self, ttl_ms: int, retain_ms: int | None = None):
        self.ttl_ms = ttl_ms
        self.retain_ms = retain_ms if retain_ms is not None else 10 * ttl_ms
        self._items: dict[bytes, Challenge] = {}
        self._lock = threading.Lock()
        self._issued = 0

    def issue(self, now_ms: int) -> Challenge:
        challenge = Challenge(secrets.token_bytes(NONCE_SIZE), now_ms, self.ttl_ms)
        with self._lock:
            self._items[challenge.nonce] = challenge
            self._issued += 1
            if self._issued % 4096 == 0:
                self._prune(now_ms)
        return challenge

    def get(self, nonce: bytes) -> Challenge | None:
        with self._lock:
            return self._items.get(nonce)

    def _prune(self, now_ms: int) -> None:
        stale = [n for n, c in self._items.items() if now_ms - c.issued_at_ms > self.retain_ms]
        for nonce in stale:
            del self._items[nonce]

    def __len__(self) -> int:
        return len(self._items)


class VerifierService:
    def __init__(self, config: ServiceConfig, clock: Callable[[], int] | None = None):
        self.config = config
        self.clock = clock or wall_clock_ms()
        self.state = VerifierState()
        self.challenges = ChallengeStore(config.challenge_ttl_ms)
        self.started_ms = self.clock()
        self._count_lock = threading.Lock()
        self.verifications_total = 0

    def register(self, body: RegisterParentRequest) -> tuple[int, dict]:
        hpk = bytes.fromhex(body.hpk_hex)
        with self.state.lock:
            existing = self.state.cached_parent_keys.get(body.parent_id)
            if existing is None:
                self.state.cached_parent_keys[body.parent_id] = hpk
                return 200, RegisterParentResponse(status="registered", parent_id=body.parent_id).model_dump()
        if existing == hpk:
            return 200, RegisterParentResponse(status="unchanged", parent_id=body.parent_id).model_dump()
        return 409, {"error": "conflict", "detail": f"{body.parent_id} is registered with a different key"}

    def verify(self, body: VerifyRequest) -> tuple[int, dict]:
        proof = body.to_proof()
        links = [link.to_link() for link in body.ancestors]
        nonce = bytes.fromhex(body.challenge_hex)
        challenge = self.challenges.get(nonce)
        status_on_challenge = 409
        if challenge is None:
            # run the ordinary checks against a spent placeholder so the
            # first failure is still reported in protocol order
            challenge = Challenge(nonce, 0, self.config.challenge_ttl_ms, used=True)
            status_on_challenge = 404
        now = self.clock()
        verdict = verify_chain(proof, links, self.state, challenge, now, self.config.policy)
        with self._count_lock:
            self.verifications_total += 1
        status = 200
        if verdict.reason is RejectReason.CHALLENGE_INVALID:
            if status_on_challenge == 404:
                status = 404
            elif challenge.used:
                status = 409
            else:
                status = 410
        response = VerifyResponse(
            result=verdict.label,
            reason=verdict.reason.value if verdict.reason else None,
            heartbeat_age_epochs=verdict.heartbeat_age_epochs,
            server_time_ms=now,
        )
        return status, response.model_dump()

    def health(self) -> dict:
        with self._count_lock:
            total = self.verifications_total
        return HealthResponse(
            uptime_ms=max(0, self.clock() - self.started_ms),
            verifications_total=total,
            policy=self.config.policy.to_dict(),
        ).model_dump()


def create_app(config: ServiceConfig | None = None, clock: Callable[[], int] | None = None) -> FastAPI:
    service = VerifierService(config or ServiceConfig(), clock)
    app = FastAPI(title="hbhc verifier")
    app.state.service = service

    @app.exception_handler(RequestValidationError)
    async def _invalid(request: Request, exc: RequestValidationError):
        detail = [{"loc": list(e.get("loc", ())), "msg": e.get("msg", "")} for e in exc.errors()]
        return JSONResponse({"error": "malformed request", "detail": detail}, status_code=400)

    @app.exception_handler(KeyHierarchyError)
    async def _bad_credential(request: Request, exc: KeyHierarchyError):
        return JSONResponse({"error": "malformed credential", "detail": str(exc)}, status_code=400)

    @app.post("/parents")
    async def register_parent(body: RegisterParentRequest):
        status, payload = service.register(body)
        return JSONResponse(payload, status_code=status)

    @app.post("/challenge", response_model=ChallengeResponse)
    async def new_challenge():
        challenge = service.challenges.issue(service.clock())
        return ChallengeResponse(
            challenge_hex=challenge.nonce.hex(), ttl_ms=challenge.ttl_ms, issued_at_ms=challenge.issued_at_ms
        )

    @app.post("/verify")
    async def verify(body: VerifyRequest):
        status, payload = service.verify(body)
        return JSONResponse(payload, status_code=status)

    @app.get("/health", response_model=HealthResponse)
    async def health():
        return service.health()

    return app


def serve(config: ServiceConfig, log_level: str = "warning") -> None:
    uvicorn.run(
        create_app(config),
        host=config.bind,
        port=config.port,
        backlog=config.backlog,
        limit_concurrency=config.max_connections,
        log_level=log_level,
    )


def free_port(host: str = DEFAULT_BIND) -> int:
    with socket.socket() as sock:
        sock.bind((host, 0))
        return sock.getsockname()[1]


@contextlib.contextmanager
def running_server(app: FastAPI, host: str = DEFAULT_BIND, port: int | None = None):
    """Run ``app`` on a background thread; yields the base URL."""
    port = port or free_port(host)
    server = uvicorn.Server(uvicorn.Config(app, host=host, port=port, log_level="warning", backlog=2048))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline or not thread.is_alive():
            raise RuntimeError("server did not start")
        time.sleep(0.01)
    try:
        yield f"http://{host}:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=10)
