import hashlib
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from hbhc.heartbeat import heartbeat_for_epoch
from hbhc.keys import create_root, issue_credential
from hbhc.verify import Challenge, FreshnessPolicy, VerifierState

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

INTERVAL = 10_000


def seed_of(label: str) -> bytes:
    return hashlib.sha256(label.encode()).digest()


@pytest.fixture(scope="session")
def root():
    return create_root("root", seed_of("test-root"))


@pytest.fixture(scope="session")
def other_root():
    return create_root("other", seed_of("test-other"))


@pytest.fixture(scope="session")
def member(root):
    """(credential, identity) of one child of ``root``."""
    return issue_credential(root, "root.worker-1", 0)


@pytest.fixture
def policy():
    return FreshnessPolicy(INTERVAL, max_age_epochs=3)


@pytest.fixture
def state(root):
    s = VerifierState()
    s.trust(root.agent_id, root.heartbeat_pk)
    return s


@pytest.fixture
def fresh_challenge():
    def make(now_ms=0, nonce=None, ttl_ms=30_000):
        return Challenge(nonce or hashlib.sha256(str(now_ms).encode()).digest(), now_ms, ttl_ms)

    return make


@pytest.fixture(scope="session")
def beat(root):
    cache = {}

    def get(epoch):
        if epoch not in cache:
            cache[epoch] = heartbeat_for_epoch(root, epoch)
        return cache[epoch]

    return get


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
