import math
import sys
import zlib
from pathlib import Path

import numpy as np
import pytest

# Ensure src/ is importable in tests without editable install
PROJECT_ROOT = Path(__file__).parent.parent
SRC_PATH = PROJECT_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))


from cvqkd_rt import postprocessing as pp  # noqa: E402
from cvqkd_rt.basemodels import KeyMaterial, LdpcCode  # noqa: E402
from cvqkd_rt.errors import DomainError  # noqa: E402


def test_pack_frames_drops_tail() -> None:
    frames = pp.pack_frames(np.arange(10.0), 4)
    assert frames.shape == (2, 4)
    np.testing.assert_array_equal(frames[1], [4, 5, 6, 7])
    with pytest.raises(DomainError):
        pp.pack_frames(np.arange(3.0), 4)


def test_remaining_reals_interleaves_kept_symbols() -> None:
    pairs = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
    np.testing.assert_array_equal(pp.remaining_reals(pairs, np.array([1])), [0, 1, 4, 5])


def test_syndrome_packing() -> None:
    rng = np.random.default_rng(0)
    s = rng.integers(0, 2, (3, 1946), dtype=np.uint8)
    packed = pp.pack_syndromes(s)
    assert packed.shape == (3, math.ceil(1946 / 8))
    np.testing.assert_array_equal(pp.unpack_syndromes(packed, 1946), s)


def _correlated_frames(
    code: LdpcCode, frames: int, snr: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((frames, code.n)) * math.sqrt(snr)
    y = x + rng.standard_normal((frames, code.n))
    return x, y


def test_reconciliation_agrees_at_high_snr(small_code: LdpcCode) -> None:
    x, y = _correlated_frames(small_code, 4, snr=1.0, seed=1)
    bob = pp.reconcile_bob(y, small_code, seed=2)
    assert bob.bits.shape == (4, small_code.n)
    assert bob.alpha.shape == (4, small_code.n // 8, 8)
    assert bob.syndromes.shape == (4, small_code.m)

    result = pp.reconcile_alice(x, bob.alpha, bob.syndromes, small_code, noise_var=1.0)
    assert result.success.all()
    np.testing.assert_array_equal(result.bits, bob.bits)
    assert pp.frame_error_rate(result.success) == 0.0


def test_reconciliation_fails_without_correlation(small_code: LdpcCode) -> None:
    rng = np.random.default_rng(5)
    y = rng.standard_normal((2, small_code.n))
    x = rng.standard_normal((2, small_code.n))
    bob = pp.reconcile_bob(y, small_code, seed=6)
    result = pp.reconcile_alice(x, bob.alpha, bob.syndromes, small_code, 1.0, max_iter=30)
    assert not np.any(result.success & np.all(result.bits == bob.bits, axis=1))


@pytest.mark.asyncio
async def test_reconcile_alice_async(small_code: LdpcCode) -> None:
    x, y = _correlated_frames(small_code, 2, snr=1.0, seed=8)
    bob = pp.reconcile_bob(y, small_code, seed=9)
    result = await pp.reconcile_alice_async(x, bob.alpha, bob.syndromes, small_code, 1.0)
    np.testing.assert_array_equal(result.bits, bob.bits)


def test_reconcile_shape_checks(small_code: LdpcCode) -> None:
    with pytest.raises(DomainError):
        pp.reconcile_bob(np.zeros((1, 100)), small_code, seed=0)
    with pytest.raises(DomainError):
        pp.reconcile_alice(
            np.zeros((2, small_code.n)),
            np.zeros((1, small_code.n // 8, 8)),
            np.zeros((2, small_code.m)),
            small_code,
            1.0,
        )


def test_frame_error_rate() -> None:
    assert pp.frame_error_rate(np.array([True, False, True, True])) == pytest.approx(0.25)
    assert pp.frame_error_rate(np.array([], dtype=bool)) == 1.0


def test_reconciled_key_discards_failed_frames() -> None:
    bits = np.array([[0, 1, 1], [1, 1, 1], [0, 0, 1]], dtype=np.uint8)
    key = pp.reconciled_key(bits, np.array([True, False, True]), shot_id=4)
    assert key.stage == "reconciled"
    assert key.shot_id == 4
    np.testing.assert_array_equal(key.bits, [0, 1, 1, 0, 0, 1])


def test_crc32_matches_zlib() -> None:
    bits = np.array([1, 0, 1, 1, 0, 0, 0, 1, 1, 1], dtype=np.uint8)
    assert pp.crc32_bits(bits) == zlib.crc32(bytes([0b10110001, 0b11000000]))


def test_confirm() -> None:
    key = KeyMaterial(bits=np.array([1, 0, 1, 1], dtype=np.uint8), shot_id=0, stage="reconciled")
    confirmed = pp.confirm(key, pp.crc32_bits(key.bits))
    assert confirmed is not None
    assert confirmed.stage == "confirmed"
    flipped = np.array([1, 0, 1, 0], dtype=np.uint8)
    assert pp.confirm(key, pp.crc32_bits(flipped)) is None
    with pytest.raises(DomainError):
        pp.confirm(confirmed, pp.crc32_bits(key.bits))


def test_toeplitz_hash_matches_matrix_product() -> None:
    rng = np.random.default_rng(3)
    n, out = 300, 120
    bits = rng.integers(0, 2, n, dtype=np.uint8)
    seed_bits = rng.integers(0, 2, n + out - 1, dtype=np.uint8)
    i = np.arange(out)[:, None]
    j = np.arange(n)[None, :]
    matrix = seed_bits[i - j + n - 1].astype(np.int64)
    expected = (matrix @ bits.astype(np.int64)) % 2
    np.testing.assert_array_equal(pp.toeplitz_hash(bits, seed_bits, out), expected)


def test_toeplitz_hash_rejects() -> None:
    bits = np.ones(8, dtype=np.uint8)
    with pytest.raises(DomainError):
        pp.toeplitz_hash(bits, np.ones(20, dtype=np.uint8), 9)
    with pytest.raises(DomainError):
        pp.toeplitz_hash(bits, np.ones(5, dtype=np.uint8), 4)
    assert pp.toeplitz_hash(bits, np.zeros(0, dtype=np.uint8), 0).size == 0


def test_privacy_amplification_is_shared_and_sized() -> None:
    rng = np.random.default_rng(7)
    key = KeyMaterial(bits=rng.integers(0, 2, 4096), shot_id=2, stage="confirmed")
    seed = pp.new_hash_seed(11)
    assert len(seed) == pp.HASH_SEED_BYTES
    a = pp.privacy_amplify(key, seed, 1000)
    b = pp.privacy_amplify(key, seed, 1000)
    other = pp.privacy_amplify(key, pp.new_hash_seed(12), 1000)
    assert a.stage == "final"
    assert len(a) == 1000
    np.testing.assert_array_equal(a.bits, b.bits)
    assert not np.array_equal(a.bits, other.bits)
    # output of a random Toeplitz hash is close to balanced
    assert 0.4 < a.bits.mean() < 0.6


def test_privacy_amplification_requires_confirmed_key() -> None:
    key = KeyMaterial(bits=np.ones(16, dtype=np.uint8), shot_id=0, stage="reconciled")
    with pytest.raises(DomainError):
        pp.privacy_amplify(key, pp.new_hash_seed(0), 8)
    confirmed = KeyMaterial(bits=np.ones(16, dtype=np.uint8), shot_id=0, stage="confirmed")
    with pytest.raises(DomainError):
        pp.privacy_amplify(confirmed, pp.new_hash_seed(0), 17)
    assert len(pp.privacy_amplify(confirmed, pp.new_hash_seed(0), 0)) == 0


def test_expand_hash_seed() -> None:
    seed = pp.new_hash_seed(1)
    np.testing.assert_array_equal(pp.expand_hash_seed(seed, 64), pp.expand_hash_seed(seed, 64))
    with pytest.raises(DomainError):
        pp.expand_hash_seed(b"short", 10)


def test_secret_key_length() -> None:
    assert pp.secret_key_length(0.05, 1000, 500) == 50
    assert pp.secret_key_length(-0.1, 1000, 500) == 0
    assert pp.secret_key_length(math.nan, 1000, 500) == 0
    assert pp.secret_key_length(0.9, 1000, 500) == 500
