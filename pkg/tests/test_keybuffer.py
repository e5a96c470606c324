import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure src/ is importable in tests without editable install
PROJECT_ROOT = Path(__file__).parent.parent
SRC_PATH = PROJECT_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))


from cvqkd_rt.basemodels import KeyMaterial  # noqa: E402
from cvqkd_rt.errors import DomainError, PoolExhaustedError  # noqa: E402
from cvqkd_rt.keybuffer import EPOCH_BITS, KeyBuffer  # noqa: E402

PSK = b"\x5a" * 32


def _final(n: int, shot_id: int = 0, seed: int = 0) -> KeyMaterial:
    bits = np.random.default_rng(seed).integers(0, 2, n, dtype=np.uint8)
    return KeyMaterial(bits=bits, shot_id=shot_id, stage="final")


def test_pool_fills_before_release() -> None:
    buffer = KeyBuffer(PSK, pool_target_epochs=2)
    assert EPOCH_BITS == 4096
    assert buffer.deposit(_final(5000, 0)) == 0
    assert buffer.pool_bits == 5000
    released = buffer.deposit(_final(5000, 1, seed=1))
    assert released == 10_000 - 2 * EPOCH_BITS
    assert buffer.pool_bits == 2 * EPOCH_BITS
    assert buffer.available_bits == released
    assert buffer.bits_produced == 10_000
    assert buffer.overlapping_segments() == []


def test_epochs_come_from_pool_then_psk() -> None:
    buffer = KeyBuffer(PSK, pool_target_epochs=1)
    key = _final(EPOCH_BITS + 100)
    buffer.deposit(key)
    first = buffer.next_epoch(0)
    assert first.source == "pool"
    assert first.material == np.packbits(key.bits[:EPOCH_BITS]).tobytes()
    assert buffer.pool_bits == 0
    second = buffer.next_epoch(1)
    assert second.source == "psk"
    assert buffer.bootstrap_pops == 1
    assert buffer.epoch_pops == 2


def test_halt_policy_raises_when_pool_is_short() -> None:
    buffer = KeyBuffer(PSK, pool_target_epochs=1, bootstrap_policy="halt")
    buffer.deposit(_final(100))
    with pytest.raises(PoolExhaustedError):
        buffer.next_epoch(0)
    assert buffer.epoch_pops == 0


def test_take_serves_bits_once_in_order() -> None:
    buffer = KeyBuffer(PSK, pool_target_epochs=1)
    a = _final(EPOCH_BITS + 10, 0, seed=1)
    b = _final(20, 1, seed=2)
    buffer.deposit(a)
    buffer.deposit(b)
    out = buffer.take(15)
    np.testing.assert_array_equal(out, np.concatenate([a.bits[EPOCH_BITS:], b.bits[:5]]))
    np.testing.assert_array_equal(buffer.take(15), b.bits[5:])
    assert buffer.available_bits == 0
    assert buffer.bits_consumed == 30
    with pytest.raises(PoolExhaustedError):
        buffer.take(1)
    assert buffer.take(0).size == 0


def test_deposit_and_take_validation() -> None:
    buffer = KeyBuffer(PSK)
    with pytest.raises(DomainError):
        buffer.deposit(KeyMaterial(bits=np.ones(8), shot_id=0, stage="confirmed"))
    with pytest.raises(DomainError):
        buffer.take(-1)


def test_segments_partition_produced_bits() -> None:
    buffer = KeyBuffer(PSK, pool_target_epochs=1)
    for shot in range(4):
        buffer.deposit(_final(1500, shot, seed=shot))
    buffer.next_epoch(0)
    # the pool refills after a pop
    buffer.deposit(_final(5000, 4, seed=9))
    assert buffer.overlapping_segments() == []
    covered = sorted((start, end) for _, start, end in buffer.segments)
    assert covered[0][0] == 0
    assert covered[-1][1] == buffer.bits_produced
    assert all(a[1] == b[0] for a, b in zip(covered, covered[1:]))
