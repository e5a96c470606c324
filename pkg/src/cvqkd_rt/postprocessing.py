#!/usr/bin/env python

"""
Post-processing of the reconciled quadratures: frame packing, reverse
reconciliation, CRC confirmation and Toeplitz privacy amplification.

Bob is the reference. For every frame he draws a uniform codeword-space word
u, publishes the MDR rotations alpha and the syndrome H u; Alice decodes u
from her own symbols. Bits that survive confirmation are compressed with a
Toeplitz matrix drawn from a shared seed.
"""

import asyncio
import logging
import math
import zlib
from typing import NamedTuple

import numpy as np
from scipy import signal

from cvqkd_rt.basemodels import KeyMaterial, LdpcCode
from cvqkd_rt.config import defaults
from cvqkd_rt.core import SeedLike, as_generator
from cvqkd_rt.errors import DomainError
from cvqkd_rt.ldpc import BatchDecodeResult, get_decoder
from cvqkd_rt.mdr import mdr_forward_batch, mdr_llr_batch

logger = logging.getLogger(__name__)

HASH_SEED_BYTES = 16


class BobReconciliation(NamedTuple):
    bits: np.ndarray
    alpha: np.ndarray
    syndromes: np.ndarray


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------


def frame_count(n_reals: int, code_length: int) -> int:
    return n_reals // code_length


def pack_frames(reals: np.ndarray, code_length: int) -> np.ndarray:
    """Cut a real-valued sequence into (frames, n); the tail that fills no frame is dropped."""
    reals = np.asarray(reals, dtype=np.float64).ravel()
    frames = frame_count(reals.size, code_length)
    if frames == 0:
        raise DomainError(f"{reals.size} values do not fill a single {code_length}-bit frame")
    return reals[: frames * code_length].reshape(frames, code_length)


def remaining_reals(pairs: np.ndarray, disclosed: np.ndarray) -> np.ndarray:
    """Interleaved I/Q values of the symbols that were not disclosed."""
    pairs = np.asarray(pairs, dtype=np.float64)
    keep = np.ones(pairs.shape[0], dtype=bool)
    keep[np.asarray(disclosed, dtype=np.int64)] = False
    return pairs[keep].ravel()


def pack_syndromes(syndromes: np.ndarray) -> np.ndarray:
    return np.packbits(np.asarray(syndromes, dtype=np.uint8), axis=-1)


def unpack_syndromes(packed: np.ndarray, m: int) -> np.ndarray:
    return np.unpackbits(np.asarray(packed, dtype=np.uint8), axis=-1, count=m)


# ---------------------------------------------------------------------------
# Reconciliation
# ---------------------------------------------------------------------------


def reconcile_bob(
    y_frames: np.ndarray,
    code: LdpcCode,
    seed: SeedLike,
    dimension: int = defaults.MDR_DIMENSION,
) -> BobReconciliation:
    """Draw u per frame, rotate Bob's blocks onto it and compute H u."""
    y_frames = np.atleast_2d(np.asarray(y_frames, dtype=np.float64))
    frames, n = y_frames.shape
    if n != code.n or n % dimension:
        raise DomainError(f"frames must hold {code.n} values in blocks of {dimension}")
    rng = as_generator(seed)
    bits = rng.integers(0, 2, size=(frames, n), dtype=np.uint8)
    alpha, _ = mdr_forward_batch(
        y_frames.reshape(frames, -1, dimension), bits.reshape(frames, -1, dimension)
    )
    syndromes = get_decoder(code).syndrome(bits)
    return BobReconciliation(bits=bits, alpha=alpha, syndromes=syndromes)


def reconcile_alice(
    x_frames: np.ndarray,
    alpha: np.ndarray,
    syndromes: np.ndarray,
    code: LdpcCode,
    noise_var: float,
    max_iter: int = defaults.LDPC_MAX_ITER,
    batch_frames: int = defaults.LDPC_BATCH_FRAMES,
) -> BatchDecodeResult:
    """Alice's side: MDR LLRs from her frames, then syndrome decoding."""
    x_frames = np.atleast_2d(np.asarray(x_frames, dtype=np.float64))
    frames = x_frames.shape[0]
    alpha = np.asarray(alpha, dtype=np.float64)
    dimension = alpha.shape[-1]
    if alpha.shape != (frames, code.n // dimension, dimension):
        raise DomainError(f"alpha shape {alpha.shape} does not match {frames} frames")
    llrs = mdr_llr_batch(alpha, x_frames.reshape(frames, -1, dimension), noise_var)
    result = get_decoder(code).decode(
        llrs.reshape(frames, code.n), syndromes, max_iter=max_iter, batch_frames=batch_frames
    )
    logger.debug(
        "Decoded %d/%d frames, mean %.1f iterations",
        int(result.success.sum()),
        frames,
        float(result.iterations.mean()) if frames else 0.0,
    )
    return result


async def reconcile_alice_async(*args, **kwargs) -> BatchDecodeResult:
    """reconcile_alice in a worker thread so the event loop keeps serving frames."""
    return await asyncio.to_thread(reconcile_alice, *args, **kwargs)


def frame_error_rate(success: np.ndarray) -> float:
    success = np.asarray(success, dtype=bool)
    if success.size == 0:
        return 1.0
    return float(1.0 - success.mean())


def reconciled_key(bits: np.ndarray, success: np.ndarray, shot_id: int) -> KeyMaterial:
    """Concatenate the frames that decoded; failed frames are discarded on both sides."""
    bits = np.asarray(bits, dtype=np.uint8)
    success = np.asarray(success, dtype=bool)
    return KeyMaterial(bits=bits[success].ravel(), shot_id=shot_id, stage="reconciled")


# ---------------------------------------------------------------------------
# Confirmation
# ---------------------------------------------------------------------------


def crc32_bits(bits: np.ndarray) -> int:
    """IEEE CRC-32 of the bit string packed MSB-first into bytes."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    return zlib.crc32(np.packbits(bits).tobytes()) & 0xFFFFFFFF


def confirm(key: KeyMaterial, peer_crc: int) -> KeyMaterial | None:
    """Promote a reconciled key to confirmed if the peer's CRC matches."""
    if key.stage != "reconciled":
        raise DomainError(f"only reconciled keys can be confirmed, got {key.stage}")
    if crc32_bits(key.bits) != peer_crc:
        logger.warning("Confirmation CRC mismatch on shot %d", key.shot_id)
        return None
    return KeyMaterial(bits=key.bits, shot_id=key.shot_id, stage="confirmed")


# ---------------------------------------------------------------------------
# Privacy amplification
# ---------------------------------------------------------------------------


def new_hash_seed(seed: SeedLike) -> bytes:
    return as_generator(seed).bytes(HASH_SEED_BYTES)


def expand_hash_seed(seed: bytes, length: int) -> np.ndarray:
    """Expand a short shared seed into the ``length`` bits that define the matrix."""
    if len(seed) < HASH_SEED_BYTES:
        raise DomainError(f"hash seed must be at least {HASH_SEED_BYTES} bytes")
    rng = np.random.Generator(np.random.Philox(key=int.from_bytes(seed[:16], "big")))
    return rng.integers(0, 2, size=length, dtype=np.uint8)


def toeplitz_hash(bits: np.ndarray, seed_bits: np.ndarray, out_len: int) -> np.ndarray:
    """out = T bits mod 2 with T[i, j] = seed_bits[i - j + n - 1].

    T is out_len x n and fully defined by its n + out_len - 1 diagonals, so the
    product is a slice of a full convolution, evaluated with FFTs.
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    seed_bits = np.asarray(seed_bits, dtype=np.uint8).ravel()
    n = bits.size
    if out_len < 0 or out_len > n:
        raise DomainError(f"output length {out_len} must lie in [0, {n}]")
    if seed_bits.size != n + out_len - 1 and out_len > 0:
        raise DomainError(f"Toeplitz seed needs {n + out_len - 1} bits, got {seed_bits.size}")
    if out_len == 0:
        return np.zeros(0, dtype=np.uint8)
    full = signal.fftconvolve(seed_bits.astype(np.float64), bits.astype(np.float64))
    window = full[n - 1 : n - 1 + out_len]
    return (np.rint(window).astype(np.int64) & 1).astype(np.uint8)


def privacy_amplify(key: KeyMaterial, seed: bytes, out_len: int) -> KeyMaterial:
    """Compress a confirmed key to ``out_len`` bits."""
    if key.stage != "confirmed":
        raise DomainError(f"privacy amplification needs a confirmed key, got {key.stage}")
    n = len(key)
    if out_len > n:
        raise DomainError(f"cannot extract {out_len} bits from {n}")
    seed_bits = expand_hash_seed(seed, n + out_len - 1) if out_len else np.zeros(0, np.uint8)
    final = toeplitz_hash(key.bits, seed_bits, out_len)
    return KeyMaterial(bits=final, shot_id=key.shot_id, stage="final")


def secret_key_length(skf: float, n_symbols: int, reconciled_bits: int) -> int:
    """floor(SKF * N), capped at the reconciled length."""
    if skf <= 0.0 or not math.isfinite(skf):
        return 0
    target = int(math.floor(skf * n_symbols))
    if target > reconciled_bits:
        logger.warning(
            "Key length %d exceeds the %d reconciled bits, capping", target, reconciled_bits
        )
        return reconciled_bits
    return target
