"""Command-line entry point.

Each subcommand parses flags, calls into the library and prints the result.
Validation failures are reported as a JSON object on stderr with exit code 2.
"""

from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

import click

from hbhc.crypto import CryptoError, SecretScalar
from hbhc.heartbeat import (
    FreshnessMode,
    HeartbeatConfig,
    HeartbeatError,
    deserialize_heartbeat,
    heartbeat_gen,
    precompute,
    revocation_heartbeat,
    sequence_heartbeat_gen,
    serialize_heartbeat,
)
from hbhc.keys import AgentIdentity, Credential, KeyHierarchyError, create_root, issue_credential, restore_identity
from hbhc.verify import (
    DEFAULT_CHALLENGE_TTL_MS,
    AuthProof,
    Challenge,
    FreshnessPolicy,
    VerifierState,
    create_auth_proof,
    issue_challenge,
    verify_auth,
)

EXIT_REJECT = 1
EXIT_INVALID = 2


class InputError(Exception):
    def __init__(self, error: str, detail=None):
        super().__init__(error)
        self.error = error
        self.detail = detail


def _fail(error: str, detail=None) -> int:
    click.echo(json.dumps({"error": error, "detail": detail}), err=True)
    return EXIT_INVALID


class _Cli(click.Group):
    """Group that turns every input problem into a structured JSON error."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
            code = rv if isinstance(rv, int) else 0
        except click.exceptions.Exit as exc:
            code = exc.exit_code
        except click.exceptions.Abort:
            code = _fail("aborted")
        except click.ClickException as exc:
            code = _fail("invalid usage", exc.format_message())
        except InputError as exc:
            code = _fail(exc.error, exc.detail)
        except (KeyHierarchyError, HeartbeatError, CryptoError, ValueError, OSError) as exc:
            code = _fail(type(exc).__name__, str(exc))
        if standalone_mode:
            sys.exit(code)
        return code


def _now(now_ms: int | None) -> int:
    return now_ms if now_ms is not None else time.time_ns() // 1_000_000


def _seed(seed: int) -> int:
    env = os.environ.get("HBHC_SEED")
    if env is None:
        return seed
    try:
        return int(env)
    except ValueError:
        raise InputError("invalid HBHC_SEED", env) from None


def _hex_arg(value: str, name: str, size: int | None = None) -> bytes:
    try:
        raw = bytes.fromhex(value.strip())
    except ValueError:
        raise InputError(f"{name} is not valid hex") from None
    if size is not None and len(raw) != size:
        raise InputError(f"{name} must be {size} bytes", {"got": len(raw)})
    return raw


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON", str(exc)) from None


def _write_identity(identity: AgentIdentity, prefix: str) -> dict:
    public = Path(f"{prefix}.public.json")
    secret = Path(f"{prefix}.secret.json")
    public.parent.mkdir(parents=True, exist_ok=True)
    public.write_text(json.dumps(identity.public, indent=2) + "\n")
    body = {
        "agent_id": identity.agent_id,
        "level": identity.level,
        "identity_sk_hex": identity.identity_sk.to_bytes().hex(),
    }
    fd = os.open(secret, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w") as fh:
        fh.write(json.dumps(body, indent=2) + "\n")
    return {"public": str(public), "secret": str(secret)}


def _load_identity(path: str) -> AgentIdentity:
    data = _read_json(path)
    try:
        sk = SecretScalar.from_bytes(bytes.fromhex(data["identity_sk_hex"]))
        return restore_identity(data["agent_id"], sk, int(data.get("level", 0)))
    except KeyError as exc:
        raise InputError(f"{path} is not a secret identity file", f"missing {exc}") from None


def _load_credential(path: str) -> Credential:
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return Credential.from_fields(json.loads(text))
    return Credential.from_text(text)


def _policy(interval_ms, max_age, grace, mode, max_gap) -> FreshnessPolicy:
    return FreshnessPolicy(interval_ms, max_age, grace, FreshnessMode(mode), max_gap)


@click.group(cls=_Cli)
@click.version_option(package_name="artifact")
def cli():
    """Heartbeat-bound hierarchical credentials."""


@cli.command()
@click.option("--seed-hex", required=True, help="32-byte root seed, hex.")
@click.option("--agent-id", default="root", show_default=True)
@click.option("--out", required=True, help="Output prefix; writes PREFIX.public.json and PREFIX.secret.json.")
def keygen(seed_hex, agent_id, out):
    """Create a root identity from a seed."""
    root = create_root(agent_id, _hex_arg(seed_hex, "seed-hex", 32))
    click.echo(json.dumps({**root.public, "files": _write_identity(root, out)}))


@cli.command("derive-child")
@click.option("--parent-file", required=True, help="Parent secret identity file.")
@click.option("--child-id", required=True)
@click.option("--out", required=True, help="Output prefix for the child's identity and credential.")
@click.option("--epoch", default=0, show_default=True, type=int, help="issued_at_epoch for the credential.")
def derive_child(parent_file, child_id, out, epoch):
    """Derive a child identity and issue its credential."""
    parent = _load_identity(parent_file)
    credential, child = issue_credential(parent, child_id, epoch)
    files = _write_identity(child, out)
    cred_path = Path(f"{out}.credential")
    cred_path.write_text(credential.to_text())
    files["credential"] = str(cred_path)
    click.echo(json.dumps({"credential": credential.to_dict(), "files": files}))


@cli.command()
@click.option("--identity-file", required=True, help="Parent secret identity file.")
@click.option("--now-ms", type=int, default=None, help="Defaults to the wall clock.")
@click.option("--interval-ms", type=click.IntRange(min=1), default=10_000, show_default=True)
@click.option("--sentinel", is_flag=True, help="Emit the revocation sentinel.")
@click.option("--seq", type=click.IntRange(min=0), default=None, help="Sequence-mode counter.")
@click.option("--precompute", "count", type=click.IntRange(min=1), default=None,
              help="Emit frames for this many epochs from now.")
def heartbeat(identity_file, now_ms, interval_ms, sentinel, seq, count):
    """Emit heartbeat frames as hex, one per line."""
    if sum([sentinel, seq is not None, count is not None]) > 1:
        raise InputError("--sentinel, --seq and --precompute are mutually exclusive")
    parent = _load_identity(identity_file)
    if sentinel:
        frames = [revocation_heartbeat(parent)]
    elif seq is not None:
        frames = [sequence_heartbeat_gen(parent, seq)]
    else:
        config = HeartbeatConfig(interval_ms)
        now = _now(now_ms)
        if count:
            frames = list(precompute(parent, now // interval_ms, count, config).heartbeats)
        else:
            frames = [heartbeat_gen(parent, now, config)]
    for hb in frames:
        click.echo(serialize_heartbeat(hb).hex())


@cli.command()
@click.option("--ttl-ms", type=click.IntRange(min=1), default=DEFAULT_CHALLENGE_TTL_MS, show_default=True)
@click.option("--now-ms", type=int, default=None)
def challenge(ttl_ms, now_ms):
    """Issue a random challenge nonce."""
    ch = issue_challenge(_now(now_ms), ttl_ms=ttl_ms)
    click.echo(json.dumps({"challenge_hex": ch.nonce.hex(), "ttl_ms": ch.ttl_ms, "issued_at_ms": ch.issued_at_ms}))


@cli.command()
@click.option("--child-file", required=True, help="Child secret identity file.")
@click.option("--credential-file", required=True)
@click.option("--heartbeat-hex", required=True, help="A 168-byte heartbeat frame, hex.")
@click.option("--challenge-hex", required=True)
def prove(child_file, credential_file, heartbeat_hex, challenge_hex):
    """Build an authentication proof over a heartbeat and challenge."""
    child = _load_identity(child_file)
    credential = _load_credential(credential_file)
    if credential.child_pk != child.identity_pk:
        raise InputError("credential does not belong to this identity")
    hb = deserialize_heartbeat(_hex_arg(heartbeat_hex, "heartbeat-hex"))
    proof = create_auth_proof(child.identity_sk, credential, hb, _hex_arg(challenge_hex, "challenge-hex"))
    click.echo(json.dumps(proof.to_dict()))


@cli.command()
@click.option("--proof-json", required=True, help="Proof JSON literal, a file path, or '-' for stdin.")
@click.option("--parent-hpk-hex", required=True)
@click.option("--challenge-hex", required=True)
@click.option("--now-ms", type=int, default=None)
@click.option("--interval-ms", type=click.IntRange(min=1), default=10_000, show_default=True)
@click.option("--max-age", type=click.IntRange(min=0), default=3, show_default=True)
@click.option("--grace", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--mode", type=click.Choice([m.value for m in FreshnessMode]), default=FreshnessMode.TIME_EPOCH.value,
              show_default=True)
@click.option("--max-gap", type=click.IntRange(min=1), default=3, show_default=True)
def verify(proof_json, parent_hpk_hex, challenge_hex, now_ms, interval_ms, max_age, grace, mode, max_gap):
    """Verify one proof offline; exit 0 on accept, 1 on reject."""
    if proof_json == "-":
        text = sys.stdin.read()
    elif proof_json.lstrip().startswith("{"):
        text = proof_json
    else:
        text = Path(proof_json).read_text()
    try:
        proof = AuthProof.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise InputError("proof is not valid JSON", str(exc)) from None
    state = VerifierState()
    state.trust(proof.credential.parent_id, _hex_arg(parent_hpk_hex, "parent-hpk-hex", 64))
    now = _now(now_ms)
    # the challenge was issued by this verifier a moment ago
    nonce = _hex_arg(challenge_hex, "challenge-hex")
    verdict = verify_auth(proof, state, Challenge(nonce, now), now,
                          _policy(interval_ms, max_age, grace, mode, max_gap))
    if verdict.accepted:
        click.echo("accept")
        return 0
    click.echo(f"reject {verdict.reason.value}")
    return EXIT_REJECT


@cli.command()
@click.option("--config-file", required=True, help="JSON simulator configuration.")
@click.option("--seed", type=int, default=None, help="Overrides rng_seed in the config.")
@click.option("--csv-out", default=None, help="Write the trace CSV here; stdout if omitted.")
def simulate(config_file, seed, csv_out):
    """Run the swarm simulator."""
    from hbhc.sim import SimConfig, run

    data = _read_json(config_file)
    if seed is not None or "HBHC_SEED" in os.environ:
        data["rng_seed"] = _seed(seed if seed is not None else 0)
    try:
        config = SimConfig.from_dict(data)
    except (TypeError, KeyError) as exc:
        raise InputError("invalid simulator config", str(exc)) from None
    trace = run(config)
    total, denied = trace.auth_counts()
    # denials after a revocation are intended, so FPRR stops at the first one
    cutoff = min((e.at_ms for e in config.revocation_events), default=None)
    if csv_out:
        trace.to_csv(csv_out)
        click.echo(json.dumps({"auths": total, "denied": denied, "fprr": trace.fprr(cutoff),
                               "csv": csv_out, "network_ops": trace.network_ops}))
    else:
        click.echo(trace.to_csv(), nl=False)


@cli.command()
@click.argument("name")
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out-dir", default=None, help="Write NAME.csv and NAME.summary.txt here.")
def experiment(name, seed, out_dir):
    """Run one experiment, or 'all'; exit 1 if any verdict fails."""
    from hbhc.experiments import EXPERIMENTS, run_experiment

    names = list(EXPERIMENTS) if name == "all" else [name]
    unknown = [n for n in names if n not in EXPERIMENTS]
    if unknown:
        raise InputError("unknown experiment", {"name": unknown[0], "choices": ["all", *EXPERIMENTS]})
    seed = _seed(seed)
    failed = 0
    for n in names:
        report = run_experiment(n, seed, out_dir)
        click.echo(report.summary())
        failed += not report.passed
    return EXIT_REJECT if failed else 0


@cli.command()
@click.option("--bind", default=None, help="Defaults to HBHC_BIND or 127.0.0.1.")
@click.option("--port", type=click.IntRange(0, 65535), default=None, help="Defaults to HBHC_PORT or 8080.")
@click.option("--interval-ms", type=click.IntRange(min=1), default=10_000, show_default=True)
@click.option("--max-age", type=click.IntRange(min=0), default=3, show_default=True)
@click.option("--grace", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--mode", type=click.Choice([m.value for m in FreshnessMode]), default=FreshnessMode.TIME_EPOCH.value)
@click.option("--max-gap", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--ttl-ms", type=click.IntRange(min=1), default=DEFAULT_CHALLENGE_TTL_MS, show_default=True)
def serve(bind, port, interval_ms, max_age, grace, mode, max_gap, ttl_ms):
    """Start the HTTP verifier."""
    from hbhc.service.app import ServiceConfig, serve as run_server

    config = ServiceConfig.from_env(
        bind=bind, port=port, challenge_ttl_ms=ttl_ms,
        policy=_policy(interval_ms, max_age, grace, mode, max_gap),
    )
    click.echo(f"listening on http://{config.bind}:{config.port}", err=True)
    run_server(config, log_level="info")


@cli.command()
@click.option("--url", required=True, help="Base URL of a running verifier.")
@click.option("--concurrency", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--requests", "total", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--children", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--tamper-every", type=click.IntRange(min=0), default=0, show_default=True,
              help="Corrupt every Nth child signature to exercise rejections.")
def bench(url, concurrency, total, children, tamper_every):
    """Load the verifier and check every decision against an offline replay."""
    from hbhc.service.bench import run_bench

    report = run_bench(url, concurrency, total, children, tamper_every)
    click.echo(json.dumps(report.as_dict(), indent=2))
    return EXIT_REJECT if report.transport_errors or report.mismatches else 0


def main(argv=None) -> int:
    return cli.main(args=argv, prog_name="hbhc", standalone_mode=False)


if __name__ == "__main__":
    sys.exit(main())
