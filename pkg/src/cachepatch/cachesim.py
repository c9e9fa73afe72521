"""Set-associative LRU cache model.

A deterministic stand-in for an L1 data cache: cold start, physical byte
addresses, write-allocate, least-recently-used replacement within each
set. The default geometry is 32 KB of 64-byte lines, 8-way associative,
which gives 512 lines spread over 64 sets.

Everything is value-level and pure apart from the explicit ``LRUCache``
state object, so concurrent simulations on distinct inputs are safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

__all__ = [
    "CacheConfig",
    "Access",
    "CacheStats",
    "LRUCache",
    "simulate",
    "simulate_addresses",
]

DEFAULT_SIZE_BYTES = 32768
DEFAULT_LINE_BYTES = 64
DEFAULT_ASSOCIATIVITY = 8


@dataclass(frozen=True)
class CacheConfig:
    """Cache geometry. size_bytes must equal line_bytes * associativity *
    num_sets with a power-of-two set count."""

    size_bytes: int = DEFAULT_SIZE_BYTES
    line_bytes: int = DEFAULT_LINE_BYTES
    associativity: int = DEFAULT_ASSOCIATIVITY

    def __post_init__(self):
        if self.size_bytes <= 0 or self.line_bytes <= 0 or self.associativity <= 0:
            raise ValueError("cache geometry fields must be positive")
        sets, remainder = divmod(self.size_bytes, self.line_bytes * self.associativity)
        if remainder or sets < 1:
            raise ValueError(
                "size_bytes must be line_bytes * associativity * num_sets "
                f"(got {self.size_bytes} = {self.line_bytes} * {self.associativity} * ?)"
            )
        if sets & (sets - 1):
            raise ValueError(f"number of sets must be a power of two, got {sets}")

    @property
    def num_sets(self) -> int:
        return self.size_bytes // (self.line_bytes * self.associativity)

    @property
    def num_lines(self) -> int:
        return self.size_bytes // self.line_bytes


@dataclass(frozen=True)
class Access:
    """One memory access. An access that straddles a line boundary touches
    both lines (and can therefore miss twice)."""

    kind: str  # "read" or "write"
    address: int
    size_bytes: int = 1

    def __post_init__(self):
        if self.kind not in ("read", "write"):
            raise ValueError(f"access kind must be 'read' or 'write', got {self.kind!r}")
        if not 0 <= self.address < 2**64:
            raise ValueError("address must be an unsigned 64-bit integer")
        if not 1 <= self.size_bytes <= 8:
            raise ValueError("access size must be between 1 and 8 bytes")


@dataclass
class CacheStats:
    accesses: int = 0
    misses: int = 0
    evictions: int = 0


class LRUCache:
    """Mutable simulation state; one instance per simulated run."""

    def __init__(self, config: CacheConfig):
        self.config = config
        self._num_sets = config.num_sets
        self._assoc = config.associativity
        # One list per set, most recently used line at the end.
        self._sets: list[list[int]] = [[] for _ in range(self._num_sets)]
        self.stats = CacheStats()

    def touch_line(self, line_id: int) -> bool:
        """Look up one cache line; returns True on a hit. Misses insert the
        line, evicting the set's LRU entry when the set is full."""
        ways = self._sets[line_id % self._num_sets]
        try:
            ways.remove(line_id)
        except ValueError:
            self.stats.misses += 1
            if len(ways) >= self._assoc:
                ways.pop(0)
                self.stats.evictions += 1
            ways.append(line_id)
            return False
        ways.append(line_id)
        return True

    def access(self, access: Access) -> None:
        self.stats.accesses += 1
        line_bytes = self.config.line_bytes
        first = access.address // line_bytes
        last = (access.address + access.size_bytes - 1) // line_bytes
        for line_id in range(first, last + 1):
            self.touch_line(line_id)


def simulate(config: CacheConfig, accesses: Iterable[Access]) -> CacheStats:
    """Run an access sequence through a cold cache and return its counters."""
    cache = LRUCache(config)
    for access in accesses:
        cache.access(access)
    return cache.stats


def simulate_addresses(config: CacheConfig, addresses, size_bytes: int = 1) -> CacheStats:
    """Simulate a dense stream of same-sized accesses given as raw byte
    addresses (any integer sequence; numpy arrays welcome).

    This is the hot path used by the simulator driver: reads and writes
    are indistinguishable to a write-allocate LRU miss counter, so only
    addresses matter.
    """
    if not 1 <= size_bytes <= 8:
        raise ValueError("access size must be between 1 and 8 bytes")
    cache = LRUCache(config)
    addrs = np.asarray(addresses, dtype=np.int64)
    cache.stats.accesses += int(addrs.size)
    if addrs.size == 0:
        return cache.stats
    if np.any(addrs < 0):
        raise ValueError("addresses must be non-negative")
    line_bytes = config.line_bytes
    first = addrs // line_bytes
    touch = cache.touch_line
    if size_bytes == 1:
        for line_id in first.tolist():
            touch(line_id)
        return cache.stats
    last = (addrs + (size_bytes - 1)) // line_bytes
    if np.array_equal(first, last):
        for line_id in first.tolist():
            touch(line_id)
        return cache.stats
    for lo, hi in zip(first.tolist(), last.tolist()):
        for line_id in range(lo, hi + 1):
            touch(line_id)
    return cache.stats
