import json
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hbhc.heartbeat import FreshnessMode
from hbhc.sim import (
    VERIFIER,
    DualPath,
    ExclusionEvent,
    Gossip,
    HierarchySpec,
    PartitionEvent,
    Precompute,
    Pull,
    Push,
    RevocationEvent,
    SimConfig,
    Simulation,
    build_swarm,
    run,
)
from hbhc.sim.delivery import build_overlay, delivery_from_dict, delivery_to_dict, gossip_round, gossip_spread
from hbhc.sim.swarm import ROOT_ID
from hbhc.sim.trace import CSV_COLUMNS
from hbhc.verify import FreshnessPolicy

SMALL = HierarchySpec((4,))


@pytest.fixture(scope="module")
def swarm_small():
    return build_swarm(SMALL)


@pytest.fixture(scope="module")
def swarm_cascade():
    return build_swarm(HierarchySpec((3, 5, 2)))


def outcomes(trace):
    return {(r.agent_id, r.time_ms): r.outcome for r in trace.auths()}


def cfg(**kw):
    base = dict(spec=SMALL, policy=FreshnessPolicy(1000, 2), duration_epochs=30, record_states=False)
    base.update(kw)
    return SimConfig(**base)


class TestSwarm:
    def test_cascade_shape(self, swarm_cascade):
        assert len(swarm_cascade.agents) == 49 == HierarchySpec((3, 5, 2)).agent_count
        levels = defaultdict(int)
        for ident in swarm_cascade.agents.values():
            levels[ident.level] += 1
        assert dict(levels) == {0: 1, 1: 3, 2: 15, 3: 30}

    def test_flat(self):
        swarm = build_swarm(HierarchySpec((50,)))
        assert len(swarm.agents) == 51
        assert swarm.parents == [ROOT_ID]

    def test_deterministic(self):
        a, b = build_swarm(HierarchySpec((1,))), build_swarm(HierarchySpec((1,)))
        assert a.agents == b.agents and a.credentials == b.credentials

    def test_verifier_trusts_every_parent(self, swarm_cascade):
        state = swarm_cascade.verifier_state()
        assert set(state.cached_parent_keys) == set(swarm_cascade.parents)
        assert len(state.cached_parent_keys) == 1 + 3 + 15

    def test_ancestry(self, swarm_cascade):
        leaf = "root.0.0.0"
        assert swarm_cascade.ancestors(leaf) == ["root.0.0", "root.0", "root"]
        assert len(swarm_cascade.descendants(ROOT_ID)) == 48

    @pytest.mark.parametrize("levels", [(), (0,), (2, -1)])
    def test_bad_spec(self, levels):
        with pytest.raises(ValueError):
            HierarchySpec(levels)


class TestConfig:
    def test_json_roundtrip(self):
        c = cfg(delivery=Gossip(3, 2, 0.1), revocation_events=(RevocationEvent(ROOT_ID, 5000, "explicit"),),
                partition_events=(PartitionEvent(("root.1",), 0, 4000),),
                exclusion_events=(ExclusionEvent(ROOT_ID, "root.2", 3000),),
                clock_offsets_ms={VERIFIER: -500})
        again = SimConfig.from_json(json.dumps(c.to_dict()))
        assert again.to_dict() == c.to_dict()
        assert run(again).to_csv() == run(c).to_csv()

    @pytest.mark.parametrize("model", [Push(0.1), DualPath(0.2, 3), Precompute(2, 0.3), Pull(0.5), Gossip(4, 2, 0.1, 7)])
    def test_delivery_roundtrip(self, model):
        assert delivery_from_dict(delivery_to_dict(model)) == model

    @pytest.mark.parametrize("bad", [
        lambda: Push(1.5), lambda: DualPath(-0.1), lambda: Gossip(0),
        lambda: RevocationEvent(ROOT_ID, 0, "loud"), lambda: PartitionEvent(("a",), 10, 5),
    ])
    def test_invalid_models(self, bad):
        with pytest.raises(ValueError):
            bad()

    @pytest.mark.parametrize("kw", [
        {"duration_epochs": 0},
        {"tick_ms": 300},
        {"auth_cadence_ms": 150},
        {"crypto": "partial"},
        {"revocation_events": (RevocationEvent("nobody", 0),)},
        {"exclusion_events": (ExclusionEvent(ROOT_ID, "root.9", 0),)},
        {"delivery": Precompute(5)},
    ])
    def test_rejected_before_start(self, kw):
        with pytest.raises(ValueError):
            Simulation(cfg(**kw))

    def test_sequence_mode_single_level_only(self):
        seq = FreshnessPolicy(1000, mode=FreshnessMode.SEQUENCE)
        with pytest.raises(ValueError):
            Simulation(cfg(spec=HierarchySpec((2, 2)), policy=seq))


class TestRuns:
    def test_lossless_all_accept(self):
        trace = run(cfg())
        total, denied = trace.auth_counts()
        assert total == 4 * 30 and denied == 0

    def test_reproducible(self):
        c = cfg(delivery=Push(0.3), rng_seed=5)
        assert run(c).to_csv() == run(c).to_csv()
        assert run(c).to_csv() != run(cfg(delivery=Push(0.3), rng_seed=6)).to_csv()

    @pytest.mark.parametrize("delivery", [Push(0.3), DualPath(0.3), Precompute(3, 0.3), Pull(0.3), Gossip(2, 2, 0.2)])
    def test_freshness_mode_matches_full_crypto(self, delivery):
        spec = HierarchySpec((3, 2))
        kw = dict(spec=spec, delivery=delivery, rng_seed=3, duration_epochs=12, auth_cadence_ms=500,
                  revocation_events=(RevocationEvent("root.1", 4200),),
                  clock_offsets_ms={VERIFIER: -700}, record_states=True)
        full = run(cfg(crypto="full", **kw))
        quick = run(cfg(crypto="freshness", **kw))
        assert full.to_csv() == quick.to_csv()

    def test_event_ticks_equal_every_tick(self):
        c = cfg(delivery=Push(0.2), auth_cadence_ms=300, auth_phase_ms=100, rng_seed=2,
                revocation_events=(RevocationEvent(ROOT_ID, 7_450),), clock_offsets_ms={ROOT_ID: 250, VERIFIER: -400},
                record_states=True)
        sim = Simulation(c)
        for t in range(0, c.end_ms, c.tick_ms):
            sim.step(t)
        assert sim.trace.records == run(c).records

    def test_one_heartbeat_per_parent_per_epoch(self, swarm_cascade):
        trace = run(cfg(spec=HierarchySpec((3, 5, 2)), duration_epochs=5), swarm_cascade)
        assert set(trace.heartbeats_per_epoch.values()) == {19}

    def test_verifier_never_touches_network(self):
        trace = run(cfg(delivery=Pull(0.2)))
        assert trace.network_ops[VERIFIER] == 0

    def test_csv_columns(self, tmp_path):
        trace = run(cfg(duration_epochs=3))
        path = tmp_path / "t.csv"
        text = trace.to_csv(path)
        assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
        assert path.read_text() == text
        assert any(",auth,accept,," in line for line in text.splitlines())


class TestRevocation:
    def test_root_revocation_cascade(self, swarm_cascade):
        interval, max_age = 5000, 3
        bound = oracles.zombie_bound_ms(interval, max_age)
        assert bound == 20_000
        t_r = 10 * interval + 1234
        c = cfg(spec=HierarchySpec((3, 5, 2)), policy=FreshnessPolicy(interval, max_age), duration_epochs=20,
                auth_cadence_ms=200, revocation_events=(RevocationEvent(ROOT_ID, t_r),))
        trace = run(c, swarm_cascade)
        non_root = [a for a in swarm_cascade.agents if a != ROOT_ID]
        assert len(non_root) == 48
        assert all(trace.denied_at_end(non_root).values())
        for agent in non_root:
            assert trace.zombie_window_ms(agent, t_r) <= bound
            assert trace.first_permanent_denial_ms(agent) <= t_r + bound

    def test_mid_level_revocation_spares_siblings(self, swarm_cascade):
        c = cfg(spec=HierarchySpec((3, 5, 2)), policy=FreshnessPolicy(1000, 2), duration_epochs=12,
                revocation_events=(RevocationEvent("root.1", 3000),))
        trace = run(c, swarm_cascade)
        revoked = {"root.1", *swarm_cascade.descendants("root.1")} - {"root.1"}
        ends = trace.denied_at_end([a for a in swarm_cascade.agents if a != ROOT_ID])
        for agent, denied in ends.items():
            assert denied == (agent in revoked), agent

    def test_terminated_by_window(self):
        interval, max_age, e = 1000, 2, 5
        c = cfg(policy=FreshnessPolicy(interval, max_age), revocation_events=(RevocationEvent(ROOT_ID, e * interval),),
                record_states=True, duration_epochs=15)
        states = run(c).states_by_epoch()
        for epoch, counts in states.items():
            if epoch >= e + max_age + 1:
                assert counts == {"Terminated": 4}
            if epoch < e:
                assert counts == {"Active": 4}
        assert any("Zombie" in counts for counts in states.values())

    def test_exclusion(self):
        c = cfg(exclusion_events=(ExclusionEvent(ROOT_ID, "root.2", 5000),))
        trace = run(c)
        ends = trace.denied_at_end(["root.0", "root.1", "root.2", "root.3"])
        assert ends == {"root.0": False, "root.1": False, "root.2": True, "root.3": False}
        assert trace.first_permanent_denial_ms("root.2") <= 5000 + oracles.zombie_bound_ms(1000, 2)

    def test_explicit_sentinel_stops_immediately(self):
        t_r = 5000
        c = cfg(auth_cadence_ms=100, revocation_events=(RevocationEvent(ROOT_ID, t_r, "explicit"),))
        trace = run(c)
        for agent in ("root.0", "root.1"):
            assert trace.last_accept_ms(agent) < t_r
        reasons = {r.reject_reason for r in trace.auths() if r.time_ms >= t_r}
        assert reasons == {"SentinelRevoked"}

    def test_partition_keeps_verifying_locally(self):
        c = cfg(policy=FreshnessPolicy(2000, 3), partition_events=(PartitionEvent(("root.0",), 2000, 60_000),))
        trace = run(c)
        ages = {r.heartbeat_age_epochs: r.outcome for r in trace.auths("root.0") if r.heartbeat_age_epochs is not None}
        assert {a for a, o in ages.items() if o == "accept"} == {0, 1, 2, 3}
        assert all(o == "reject" for a, o in ages.items() if a >= 4) and 4 in ages
        assert trace.network_ops[VERIFIER] == 0

    def test_cold_cache(self):
        trace = run(cfg(trust_parents=False, duration_epochs=3))
        assert {r.reject_reason for r in trace.auths()} == {"UnknownParent"}


def _accepted(trace):
    return {k for k, v in outcomes(trace).items() if v == "accept"}


@settings(max_examples=15)
@given(st.integers(min_value=0, max_value=2**16), st.floats(min_value=0, max_value=0.6),
       st.floats(min_value=0, max_value=0.4))
def test_drop_monotonicity(seed, low, extra):
    """Raising the drop rate never creates an acceptance."""
    base = dict(policy=FreshnessPolicy(1000, 1), crypto="freshness", rng_seed=seed, duration_epochs=25)
    lossy = _accepted(run(cfg(delivery=Push(min(1.0, low + extra)), **base)))
    clean = _accepted(run(cfg(delivery=Push(low), **base)))
    assert lossy <= clean


@settings(max_examples=10)
@given(st.integers(min_value=0, max_value=2**16), st.integers(min_value=0, max_value=5000))
def test_partition_and_forward_skew_monotone(seed, lead):
    base = dict(delivery=Push(0.1), policy=FreshnessPolicy(1000, 2), crypto="freshness", rng_seed=seed,
                duration_epochs=20)
    clean = _accepted(run(cfg(**base)))
    cut = _accepted(run(cfg(partition_events=(PartitionEvent(("root.1", "root.3"), 4000, 9000),), **base)))
    ahead = _accepted(run(cfg(clock_offsets_ms={VERIFIER: lead}, **base)))
    assert cut <= clean
    assert ahead <= clean


@settings(max_examples=10)
@given(st.integers(min_value=0, max_value=2**16), st.sampled_from([0.05, 0.1, 0.3, 0.5]))
def test_dual_path_dominates(seed, p):
    base = dict(policy=FreshnessPolicy(1000, 1), crypto="freshness", rng_seed=seed, duration_epochs=40)
    single = run(cfg(delivery=Push(p), **base))
    dual = run(cfg(delivery=DualPath(p), **base))
    assert dual.fprr() <= single.fprr()
    assert _accepted(single) <= _accepted(dual)


@settings(max_examples=20)
@given(st.integers(min_value=0, max_value=2**16), st.sampled_from([1000, 2000, 5000]), st.integers(1, 4),
       st.integers(min_value=0, max_value=20_000), st.integers(min_value=0, max_value=4999))
def test_zombie_bound_property(seed, interval, max_age, lag, offset):
    lag = lag // 100 * 100
    t_r = (max_age + 2) * interval + offset // 100 * 100
    c = cfg(spec=HierarchySpec((1,)), policy=FreshnessPolicy(interval, max_age), crypto="freshness",
            auth_cadence_ms=100, rng_seed=seed, clock_offsets_ms={VERIFIER: -lag},
            duration_epochs=(t_r + lag) // interval + max_age + 4, revocation_events=(RevocationEvent(ROOT_ID, t_r),))
    assert run(c).zombie_window_ms("root.0", t_r) <= oracles.zombie_bound_ms(interval, max_age, lag)


class TestGossip:
    def test_overlay_shape(self):
        overlay = build_overlay(10, 3, np.random.default_rng(0))
        assert overlay.shape == (10, 3)
        for i, row in enumerate(overlay):
            assert i not in row and len(set(row)) == 3

    def test_round_and_spread(self):
        overlay = np.array([[1], [2], [3], [0]])
        holders = {0}
        assert gossip_round(overlay, [0], holders, np.zeros((4, 1), bool)) == [1]
        reached, rounds = gossip_spread(overlay, np.array([0]), np.array([False]), np.zeros((4, 1), bool), 10)
        assert reached == {0, 1, 2, 3} and rounds == 4
        reached, _ = gossip_spread(overlay, np.array([0]), np.array([False]), np.ones((4, 1), bool), 10)
        assert reached == {0}

    def test_round_cap(self):
        assert Gossip(5).rounds_for(100) == 7 + 3
        assert Gossip(5, max_rounds=2).rounds_for(100) == 2

    def test_lossless_gossip_full_coverage(self):
        trace = run(cfg(spec=HierarchySpec((30,)), delivery=Gossip(4, 3, 0.0), duration_epochs=5, crypto="freshness"))
        assert trace.coverage[ROOT_ID] == 30
