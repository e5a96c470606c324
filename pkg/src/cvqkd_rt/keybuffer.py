#!/usr/bin/env python

"""
In-process key buffer: final keys feed the authentication pool first and
only the remainder is released to consumers.
"""

import logging
from collections import deque
from typing import Literal

import numpy as np

from cvqkd_rt.basemodels import KeyMaterial
from cvqkd_rt.config import defaults
from cvqkd_rt.errors import DomainError, PoolExhaustedError
from cvqkd_rt.framing import EpochKey, bootstrap_epoch

logger = logging.getLogger(__name__)

EPOCH_BITS = defaults.EPOCH_KEY_BYTES * 8


class KeyBuffer:
    """FIFO of released key bits plus the reserved authentication pool.

    Every produced bit lands in exactly one place: the pool or the consumer
    FIFO. ``segments`` records where, in produced-bit coordinates, so the
    two can be audited for overlap.
    """

    def __init__(
        self,
        psk: bytes,
        pool_target_epochs: int = defaults.AUTH_POOL_TARGET_EPOCHS,
        bootstrap_policy: Literal["psk", "halt"] = "psk",
    ):
        self._psk = psk
        self.pool_target_bits = pool_target_epochs * EPOCH_BITS
        self.bootstrap_policy = bootstrap_policy
        self._pool = np.zeros(0, dtype=np.uint8)
        self._released: deque[np.ndarray] = deque()
        self.bits_produced = 0
        self.bits_released = 0
        self.bits_consumed = 0
        self.epoch_pops = 0
        self.bootstrap_pops = 0
        self.segments: list[tuple[str, int, int]] = []

    @property
    def pool_bits(self) -> int:
        return int(self._pool.size)

    @property
    def available_bits(self) -> int:
        return sum(int(chunk.size) for chunk in self._released)

    def deposit(self, key: KeyMaterial) -> int:
        """Store a final key; returns how many bits were released to consumers."""
        if key.stage != "final":
            raise DomainError(f"only final keys enter the buffer, got {key.stage}")
        bits = np.asarray(key.bits, dtype=np.uint8)
        start = self.bits_produced
        need = max(self.pool_target_bits - self.pool_bits, 0)
        to_pool = min(need, bits.size)
        if to_pool:
            self._pool = np.concatenate((self._pool, bits[:to_pool]))
            self.segments.append(("auth", start, start + to_pool))
        released = bits[to_pool:]
        if released.size:
            self._released.append(released.copy())
            self.segments.append(("release", start + to_pool, start + bits.size))
        self.bits_produced += int(bits.size)
        self.bits_released += int(released.size)
        logger.debug(
            "Shot %d: %d bits to the auth pool, %d released", key.shot_id, to_pool, released.size
        )
        return int(released.size)

    def next_epoch(self, epoch: int) -> EpochKey:
        """Pop the next epoch key. The pop is destructive; bootstrap covers an empty pool."""
        self.epoch_pops += 1
        if self.pool_bits >= EPOCH_BITS:
            material = np.packbits(self._pool[:EPOCH_BITS]).tobytes()
            self._pool = self._pool[EPOCH_BITS:]
            return EpochKey(material, epoch=epoch, source="pool")
        if self.bootstrap_policy == "halt":
            self.epoch_pops -= 1
            raise PoolExhaustedError(
                f"authentication pool holds {self.pool_bits} bits, {EPOCH_BITS} needed"
            )
        self.bootstrap_pops += 1
        logger.debug("Epoch %d bootstrapped from the pre-shared key", epoch)
        return bootstrap_epoch(self._psk, epoch)

    def take(self, n_bits: int) -> np.ndarray:
        """Hand ``n_bits`` released bits to a consumer; bits are served once."""
        if n_bits < 0:
            raise DomainError("cannot take a negative number of bits")
        if n_bits > self.available_bits:
            raise PoolExhaustedError(f"{n_bits} bits requested, {self.available_bits} available")
        out = []
        remaining = n_bits
        while remaining:
            chunk = self._released[0]
            if chunk.size <= remaining:
                out.append(self._released.popleft())
                remaining -= chunk.size
            else:
                out.append(chunk[:remaining])
                self._released[0] = chunk[remaining:]
                remaining = 0
        self.bits_consumed += n_bits
        return np.concatenate(out) if out else np.zeros(0, dtype=np.uint8)

    def overlapping_segments(self) -> list[tuple[tuple[str, int, int], tuple[str, int, int]]]:
        """Pairs of auth/release segments that share produced bits (empty when sound)."""
        auth = [s for s in self.segments if s[0] == "auth"]
        release = [s for s in self.segments if s[0] == "release"]
        return [(a, r) for a in auth for r in release if a[1] < r[2] and r[1] < a[2]]
