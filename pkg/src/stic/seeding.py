"""Deterministic random streams for reproducible pipeline runs.

Every value is a pure function of (seed, stream id, index, sub-draw counter),
derived from SHA-256. This makes each decision site an independent stream:
adding a new site never perturbs existing ones, and any draw can be replayed
from its coordinates alone, regardless of worker scheduling or platform.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

_U53 = float(1 << 53)


def _digest_u64(seed: int, stream_id: str, index: int, sub: int) -> int:
    payload = f"{seed}:{stream_id}:{index}:{sub}".encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class SeededRng:
    """One stream of deterministic draws, positioned at a major index.

    The major ``index`` is typically a work-item position (e.g. an image's
    rank in the input ordering); successive draws advance only the sub-draw
    counter, so items never consume each other's randomness.
    """

    seed: int
    stream_id: str
    index: int = 0
    _sub: int = field(default=0, repr=False)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def at(self, index: int) -> "SeededRng":
        """Fresh cursor for the same stream positioned at ``index``."""
        return SeededRng(self.seed, self.stream_id, index)

    def next_uint(self) -> int:
        value = _digest_u64(self.seed, self.stream_id, self.index, self._sub)
        self._sub += 1
        return value

    def next_unit(self) -> float:
        """Uniform draw in [0, 1) with 53 bits of precision."""
        return (self.next_uint() >> 11) / _U53

    def next_uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_unit()

    def next_pick(self, n: int) -> int:
        """Uniform index in [0, n)."""
        if n < 1:
            raise ValueError(f"cannot pick from an empty set (n={n})")
        return int(self.next_unit() * n)
