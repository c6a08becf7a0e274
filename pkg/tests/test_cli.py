import json
import os
import stat
import subprocess
import sys

import pytest
from click.testing import CliRunner

from hbhc.cli import cli, main
from hbhc.heartbeat import FRAME_SIZE, SENTINEL_EPOCH, deserialize_heartbeat
from hbhc.keys import Credential

SEED = "11" * 32


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args, **kw):
    return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False, **kw)


@pytest.fixture
def hierarchy(runner, tmp_path):
    root = tmp_path / "root"
    child = tmp_path / "child"
    out = invoke(runner, "keygen", "--seed-hex", SEED, "--out", root)
    assert out.exit_code == 0, out.stderr
    out = invoke(runner, "derive-child", "--parent-file", f"{root}.secret.json", "--child-id", "root.w1",
                 "--out", child)
    assert out.exit_code == 0, out.stderr
    return root, child, json.loads(out.stdout)


def flow(runner, hierarchy, hb_now=100_000, verify_now=100_500, **verify_opts):
    root, child, _ = hierarchy
    frame = invoke(runner, "heartbeat", "--identity-file", f"{root}.secret.json", "--now-ms", hb_now).stdout.strip()
    ch = json.loads(invoke(runner, "challenge", "--now-ms", verify_now).stdout)
    proof = invoke(runner, "prove", "--child-file", f"{child}.secret.json", "--credential-file",
                   f"{child}.credential", "--heartbeat-hex", frame, "--challenge-hex", ch["challenge_hex"]).stdout
    hpk = json.loads((root.parent / "root.public.json").read_text())["heartbeat_pk"]
    extra = [x for k, v in verify_opts.items() for x in (f"--{k.replace('_', '-')}", v)]
    return invoke(runner, "verify", "--proof-json", proof.strip(), "--parent-hpk-hex", hpk,
                  "--challenge-hex", ch["challenge_hex"], "--now-ms", verify_now, *extra)


def test_golden_flow(runner, hierarchy):
    out = flow(runner, hierarchy)
    assert (out.exit_code, out.stdout) == (0, "accept\n")


def test_expired_exits_one(runner, hierarchy):
    out = flow(runner, hierarchy, verify_now=140_000)
    assert (out.exit_code, out.stdout) == (1, "reject HeartbeatExpired\n")


def test_grace_extends_window(runner, hierarchy):
    out = flow(runner, hierarchy, verify_now=140_000, grace=1)
    assert out.exit_code == 0


def test_identity_files(hierarchy):
    root, child, derived = hierarchy
    public = json.loads((root.parent / "root.public.json").read_text())
    assert "identity_sk_hex" not in public
    assert stat.S_IMODE(os.stat(f"{root}.secret.json").st_mode) == 0o600
    cred = Credential.from_text((root.parent / "child.credential").read_text())
    assert cred.to_dict() == derived["credential"]
    assert cred.parent_id == "root" and cred.child_id == "root.w1"


def test_keygen_is_deterministic(runner, tmp_path):
    a = invoke(runner, "keygen", "--seed-hex", SEED, "--out", tmp_path / "a").stdout
    b = invoke(runner, "keygen", "--seed-hex", SEED, "--out", tmp_path / "b").stdout
    assert json.loads(a)["identity_pk"] == json.loads(b)["identity_pk"]


def test_heartbeat_variants(runner, hierarchy):
    root, _, _ = hierarchy
    ident = f"{root}.secret.json"
    frames = invoke(runner, "heartbeat", "--identity-file", ident, "--now-ms", 25_000, "--precompute", 3).stdout.split()
    assert [deserialize_heartbeat(bytes.fromhex(f)).epoch for f in frames] == [2, 3, 4]
    assert all(len(f) == 2 * FRAME_SIZE for f in frames)
    sentinel = invoke(runner, "heartbeat", "--identity-file", ident, "--sentinel").stdout.strip()
    assert deserialize_heartbeat(bytes.fromhex(sentinel)).epoch == SENTINEL_EPOCH
    seq = invoke(runner, "heartbeat", "--identity-file", ident, "--seq", 9).stdout.strip()
    assert deserialize_heartbeat(bytes.fromhex(seq)).epoch == 9


@pytest.mark.parametrize("args", [
    ["keygen", "--seed-hex", "zz", "--out", "x"],
    ["keygen", "--seed-hex", "11" * 31, "--out", "x"],
    ["keygen"],
    ["challenge", "--ttl-ms", "0"],
    ["no-such-command"],
    ["experiment", "nope"],
])
def test_structured_errors(runner, args):
    out = runner.invoke(cli, args)
    assert out.exit_code == 2
    err = json.loads(out.stderr)
    assert set(err) == {"error", "detail"}


def test_heartbeat_flag_conflicts(runner, hierarchy):
    root, _, _ = hierarchy
    ident = f"{root}.secret.json"
    for extra in (["--sentinel", "--seq", "1"], ["--precompute", "5"]):
        out = invoke(runner, "heartbeat", "--identity-file", ident, "--now-ms", 0, *extra)
        assert out.exit_code == 2 and "error" in json.loads(out.stderr)


def test_wrong_credential_for_identity(runner, hierarchy, tmp_path):
    root, child, _ = hierarchy
    frame = invoke(runner, "heartbeat", "--identity-file", f"{root}.secret.json", "--now-ms", 0).stdout.strip()
    out = invoke(runner, "prove", "--child-file", f"{root}.secret.json", "--credential-file",
                 f"{child}.credential", "--heartbeat-hex", frame, "--challenge-hex", "00" * 32)
    assert out.exit_code == 2


def test_main_returns_code(hierarchy, capsys):
    root, _, _ = hierarchy
    assert main(["heartbeat", "--identity-file", f"{root}.secret.json", "--now-ms", "0"]) == 0
    assert main(["keygen", "--seed-hex", "00"]) == 2
    capsys.readouterr()


def test_simulate(runner, tmp_path):
    config = tmp_path / "sim.json"
    config.write_text(json.dumps({
        "levels": [3], "policy": {"interval_ms": 1000, "max_age_epochs": 1},
        "delivery": {"kind": "push", "drop_rate": 0.3}, "duration_epochs": 20, "rng_seed": 1,
    }))
    summary = json.loads(invoke(runner, "simulate", "--config-file", config, "--csv-out", tmp_path / "t.csv").stdout)
    assert summary["auths"] == 60 and summary["network_ops"]["verifier"] == 0
    stdout = invoke(runner, "simulate", "--config-file", config).stdout
    assert stdout == (tmp_path / "t.csv").read_text()
    reseeded = invoke(runner, "simulate", "--config-file", config, "--seed", 2).stdout
    assert reseeded != stdout
    env = invoke(runner, "simulate", "--config-file", config, env={"HBHC_SEED": "2"}).stdout
    assert env == reseeded


def test_experiment_command(runner, tmp_path):
    out = invoke(runner, "experiment", "partition", "--seed", 5, "--out-dir", tmp_path)
    assert out.exit_code == 0
    assert out.stdout.startswith("[partition] PASS")
    first = (tmp_path / "partition.csv").read_text()
    invoke(runner, "experiment", "partition", "--seed", 5, "--out-dir", tmp_path)
    assert (tmp_path / "partition.csv").read_text() == first


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "hbhc.cli", "keygen", "--seed-hex", "0"],
                         capture_output=True, text=True)
    assert out.returncode == 2
    assert json.loads(out.stderr)["error"]
