"""Agent hierarchies for simulation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from hbhc.keys import AgentIdentity, Credential, create_root, issue_credential
from hbhc.verify import VerifierState

ROOT_ID = "root"
DEFAULT_ROOT_SEED = hashlib.sha256(b"hbhc-sim-root").digest()


@dataclass(frozen=True)
class HierarchySpec:
    """Branching factor per level below the root; ``[3, 5, 2]`` gives 49 agents."""

    levels: tuple[int, ...]
    root_seed: bytes = DEFAULT_ROOT_SEED

    def __post_init__(self):
        levels = tuple(int(b) for b in self.levels)
        if not levels:
            raise ValueError("hierarchy needs at least one level")
        if any(b <= 0 for b in levels):
            raise ValueError("branching factors must be positive")
        if len(self.root_seed) != 32:
            raise ValueError("root seed must be 32 bytes")
        object.__setattr__(self, "levels", levels)

    @property
    def agent_count(self) -> int:
        total, width = 1, 1
        for branching in self.levels:
            width *= branching
            total += width
        return total


@dataclass
class Swarm:
    agents: dict[str, AgentIdentity]
    credentials: dict[str, Credential]
    parent_of: dict[str, str]
    children_of: dict[str, list[str]] = field(default_factory=dict)

    @property
    def root(self) -> AgentIdentity:
        return self.agents[ROOT_ID]

    @property
    def parents(self) -> list[str]:
        return [aid for aid, kids in self.children_of.items() if kids]

    def ancestors(self, agent_id: str) -> list[str]:
        """Parent first, root last."""
        chain = []
        while agent_id in self.parent_of:
            agent_id = self.parent_of[agent_id]
            chain.append(agent_id)
        return chain

    def descendants(self, agent_id: str) -> list[str]:
        out, stack = [], list(self.children_of.get(agent_id, ()))
        while stack:
            aid = stack.pop()
            out.append(aid)
            stack.extend(self.children_of.get(aid, ()))
        return sorted(out)

    def verifier_state(self) -> VerifierState:
        """A verifier that completed trust establishment with every parent."""
        state = VerifierState(chain_anchors={ROOT_ID})
        for aid in self.parents:
            state.cached_parent_keys[aid] = self.agents[aid].heartbeat_pk
        return state


def build_swarm(spec: HierarchySpec, issued_at_epoch: int = 0) -> Swarm:
    root = create_root(ROOT_ID, spec.root_seed)
    swarm = Swarm({ROOT_ID: root}, {}, {}, {ROOT_ID: []})
    frontier = [root]
    for branching in spec.levels:
        next_frontier = []
        for parent in frontier:
            issued: set[str] = set()
            for i in range(branching):
                child_id = f"{parent.agent_id}.{i}"
                cred, child = issue_credential(parent, child_id, issued_at_epoch, issued)
                swarm.agents[child_id] = child
                swarm.credentials[child_id] = cred
                swarm.parent_of[child_id] = parent.agent_id
                swarm.children_of[parent.agent_id].append(child_id)
                swarm.children_of[child_id] = []
                next_frontier.append(child)
        frontier = next_frontier
    return swarm
