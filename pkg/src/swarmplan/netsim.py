"""Deterministic event-driven models of the two swarm networks.

The broadcast network is lossy: per message and receiver, an independent RNG
derived from (seed, message count, receiver id) decides drop and latency, so
the realized delivery schedule is a pure function of the configuration.  The
chain network is reliable and ordered; it only carries clock sync and the
sequential startup handshake.
"""

from __future__ import annotations

import csv
import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BroadcastConfig:
    latency: tuple[float, float] = (0.0, 0.0)
    drop_probability: float = 0.0
    rebroadcast_period: float = 0.1
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.latency
        if lo < 0 or hi < lo:
            raise ValueError(f"latency bounds must satisfy 0 <= min <= max, got {self.latency}")
        if not 0 <= self.drop_probability < 1:
            raise ValueError("drop probability must lie in [0, 1)")
        if not self.rebroadcast_period > 0:
            raise ValueError("rebroadcast period must be positive")


@dataclass(frozen=True)
class ChainConfig:
    startup_order: tuple[int, ...]
    clock_skews: dict = field(default_factory=dict)
    sync_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "startup_order", tuple(self.startup_order))
        if len(set(self.startup_order)) != len(self.startup_order):
            raise ValueError("startup order must be a permutation of agent ids")


class EventQueue:
    """Global simulation queue ordered by (time, insertion sequence)."""

    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()

    def push(self, time: float, kind: str, payload=None):
        heapq.heappush(self._heap, (float(time), next(self._seq), kind, payload))

    def pop(self):
        time, _, kind, payload = heapq.heappop(self._heap)
        return time, kind, payload

    def __len__(self):
        return len(self._heap)

    def next_time(self) -> float:
        return self._heap[0][0]


class BroadcastNetwork:
    """Lossy latency-prone fan-out of trajectory messages.

    Every (message, receiver) outcome comes from its own generator seeded by
    SeedSequence(seed, spawn_key=(message count, receiver)), which makes the
    schedule reproducible and independent of delivery processing order.
    """

    DELIVER = "net_deliver"

    def __init__(self, config: BroadcastConfig, agent_ids, queue: EventQueue):
        self.config = config
        self.agent_ids = tuple(sorted(agent_ids))
        self.queue = queue
        self.message_count = 0
        self.trace: list[dict] = []

    def broadcast(self, sender: int, epoch: int, payload: bytes, now: float) -> int:
        """Schedule deliveries to all other agents; returns how many survive."""
        lo, hi = self.config.latency
        delivered = 0
        for receiver in self.agent_ids:
            if receiver == sender:
                continue
            rng = np.random.default_rng(
                np.random.SeedSequence(self.config.seed, spawn_key=(self.message_count, receiver))
            )
            drop = rng.random() < self.config.drop_probability
            delay = rng.uniform(lo, hi) if hi > lo else lo
            row = {
                "send_time": now,
                "sender": sender,
                "receiver": receiver,
                "epoch": epoch,
                "delivered": int(not drop),
                "delivery_time": now + delay if not drop else "",
            }
            self.trace.append(row)
            if not drop:
                self.queue.push(now + delay, self.DELIVER, (receiver, sender, payload))
                delivered += 1
        self.message_count += 1
        return delivered

    def write_trace(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(
                f,
                fieldnames=["send_time", "sender", "receiver", "epoch", "delivered", "delivery_time"],
            )
            writer.writeheader()
            for row in self.trace:
                out = dict(row)
                out["send_time"] = f"{row['send_time']:.6f}"
                if row["delivery_time"] != "":
                    out["delivery_time"] = f"{row['delivery_time']:.6f}"
                writer.writerow(out)


def sync_clocks(chain: ChainConfig, agent_ids) -> dict:
    """One-shot clock corrections against the reference agent's clock.

    The reference is the first agent in startup order (falling back to the
    lowest id); after applying corrections every perceived clock equals the
    reference's, so pairwise disagreement is zero up to float rounding.
    Returns zero corrections when sync is disabled.
    """
    ids = sorted(agent_ids)
    if not chain.sync_enabled:
        return {aid: 0.0 for aid in ids}
    ref = chain.startup_order[0] if chain.startup_order else ids[0]
    ref_skew = float(chain.clock_skews.get(ref, 0.0))
    return {aid: float(chain.clock_skews.get(aid, 0.0)) - ref_skew for aid in ids}


def chain_startup(chain: ChainConfig, agent_ids) -> tuple[int, ...]:
    """Validated sequential startup schedule over the reliable chain."""
    ids = set(agent_ids)
    if set(chain.startup_order) != ids:
        raise ValueError(
            f"startup order {chain.startup_order} does not cover agent ids {sorted(ids)}"
        )
    return chain.startup_order
