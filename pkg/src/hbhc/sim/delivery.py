"""Heartbeat delivery models and the gossip overlay."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _check_probability(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1]")


@dataclass(frozen=True)
class Push:
    drop_rate: float = 0.0

    def __post_init__(self):
        _check_probability("drop_rate", self.drop_rate)


@dataclass(frozen=True)
class DualPath:
    drop_rate_per_path: float = 0.0
    paths: int = 2

    def __post_init__(self):
        _check_probability("drop_rate_per_path", self.drop_rate_per_path)
        if self.paths < 1:
            raise ValueError("paths must be positive")


@dataclass(frozen=True)
class Precompute:
    buffer_epochs: int = 3
    drop_rate: float = 0.0

    def __post_init__(self):
        _check_probability("drop_rate", self.drop_rate)
        if self.buffer_epochs < 1:
            raise ValueError("buffer_epochs must be positive")


@dataclass(frozen=True)
class Pull:
    drop_rate: float = 0.0

    def __post_init__(self):
        _check_probability("drop_rate", self.drop_rate)


@dataclass(frozen=True)
class Gossip:
    fanout: int = 5
    seed_set_size: int = 5
    per_hop_drop: float = 0.0
    max_rounds: int | None = None

    def __post_init__(self):
        _check_probability("per_hop_drop", self.per_hop_drop)
        if self.fanout < 1 or self.seed_set_size < 1:
            raise ValueError("fanout and seed_set_size must be positive")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ValueError("max_rounds must be positive")

    def rounds_for(self, n: int) -> int:
        if self.max_rounds is not None:
            return self.max_rounds
        return math.ceil(math.log2(max(n, 2))) + 3


DeliveryModel = Push | DualPath | Precompute | Pull | Gossip

_KINDS = {"push": Push, "dual_path": DualPath, "precompute": Precompute, "pull": Pull, "gossip": Gossip}


def delivery_from_dict(data: dict) -> DeliveryModel:
    data = dict(data)
    kind = data.pop("kind", "push")
    if kind not in _KINDS:
        raise ValueError(f"unknown delivery model {kind!r}")
    return _KINDS[kind](**data)


def delivery_to_dict(model: DeliveryModel) -> dict:
    kind = next(k for k, cls in _KINDS.items() if isinstance(model, cls))
    return {"kind": kind, **model.__dict__}


def build_overlay(n: int, fanout: int, rng: np.random.Generator) -> np.ndarray:
    """Directed overlay: row ``i`` lists ``fanout`` distinct peers of node ``i``."""
    k = min(fanout, n - 1)
    overlay = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        # choose among the other n-1 nodes, then skip over i
        picks = rng.choice(n - 1, size=k, replace=False)
        overlay[i] = picks + (picks >= i)
    return overlay


def gossip_round(
    overlay: np.ndarray,
    frontier: list[int],
    holders: set[int],
    drops: np.ndarray,
) -> list[int]:
    """Forward from each frontier node to its out-neighbours once.

    ``drops[i, j]`` marks the hop from node ``i`` to its ``j``-th neighbour
    as lost. Newly reached nodes are added to ``holders`` and returned as
    the next frontier.
    """
    reached = []
    for node in frontier:
        for j, peer in enumerate(overlay[node]):
            peer = int(peer)
            if drops[node, j] or peer in holders:
                continue
            holders.add(peer)
            reached.append(peer)
    return reached


def gossip_spread(
    overlay: np.ndarray,
    seeds: np.ndarray,
    seed_drops: np.ndarray,
    hop_drops: np.ndarray,
    max_rounds: int,
) -> tuple[set[int], int]:
    """Parent seeds the heartbeat, then nodes forward until fixpoint or the round cap."""
    holders = {int(s) for s, dropped in zip(seeds, seed_drops) if not dropped}
    frontier = sorted(holders)
    rounds = 0
    while frontier and rounds < max_rounds:
        frontier = gossip_round(overlay, frontier, holders, hop_drops)
        rounds += 1
    return holders, rounds
