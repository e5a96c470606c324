#!/usr/bin/env python

"""
Unit conversions, deterministic random streams and the Gaussian symbol source.

Every random draw in a shot comes from a named Philox stream keyed by
``(master_seed, shot_id, stream)``, so any shot can be replayed in isolation.
"""

import math

import numpy as np

from cvqkd_rt.basemodels import QuadratureBlock
from cvqkd_rt.config import defaults
from cvqkd_rt.errors import DomainError

RNG_STREAMS: tuple[str, ...] = (
    "alice_symbols",
    "channel_noise",
    "detector_noise",
    "codeword",
    "hash_seed",
    "disclosure",
    "calibration",
    "dsp_impairments",
)

SeedLike = int | np.random.Generator


def db_to_transmittance(loss_db: float) -> float:
    if not math.isfinite(loss_db):
        raise DomainError(f"loss must be finite, got {loss_db}")
    if loss_db < 0:
        raise DomainError(f"loss must be non-negative, got {loss_db} dB")
    return float(10.0 ** (-loss_db / 10.0))


def transmittance_to_db(transmittance: float) -> float:
    if not 0.0 < transmittance <= 1.0:
        raise DomainError(f"transmittance must lie in (0, 1], got {transmittance}")
    return float(-10.0 * math.log10(transmittance))


def fiber_km_to_loss_db(
    length_km: float, attenuation_db_per_km: float = defaults.FIBER_ATTENUATION_DB_PER_KM
) -> float:
    if length_km < 0:
        raise DomainError(f"fiber length must be non-negative, got {length_km} km")
    return float(length_km * attenuation_db_per_km)


def loss_db_to_fiber_km(
    loss_db: float, attenuation_db_per_km: float = defaults.FIBER_ATTENUATION_DB_PER_KM
) -> float:
    if loss_db < 0:
        raise DomainError(f"loss must be non-negative, got {loss_db} dB")
    return float(loss_db / attenuation_db_per_km)


def xi_output_to_input(xi_out: float, t_ch: float) -> float:
    """Channel-output excess noise referred back to the channel input."""
    if not 0.0 < t_ch <= 1.0:
        raise DomainError(f"transmittance must lie in (0, 1], got {t_ch}")
    return xi_out / t_ch


def xi_input_to_output(xi_in: float, t_ch: float) -> float:
    if not 0.0 < t_ch <= 1.0:
        raise DomainError(f"transmittance must lie in (0, 1], got {t_ch}")
    return xi_in * t_ch


def rng_stream(master_seed: int, shot_id: int, stream: str) -> np.random.Generator:
    """Counter-based generator for one named stream of one shot."""
    try:
        index = RNG_STREAMS.index(stream)
    except ValueError as e:
        raise DomainError(f"unknown RNG stream '{stream}'") from e
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(shot_id, index))
    return np.random.Generator(np.random.Philox(seq))


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def gaussian_symbols(
    seed: SeedLike,
    n: int,
    v_mod: float,
    symbol_rate_hz: float = defaults.SYMBOL_RATE_HZ,
) -> QuadratureBlock:
    """Draw ``n`` complex symbols with per-quadrature variance ``v_mod`` (SNU)."""
    if n < 1:
        raise DomainError(f"symbol count must be positive, got {n}")
    if not math.isfinite(v_mod) or v_mod < 0:
        raise DomainError(f"v_mod must be a finite non-negative variance, got {v_mod}")
    rng = as_generator(seed)
    draws = rng.standard_normal((2, n))
    draws *= math.sqrt(v_mod)
    return QuadratureBlock(
        i_samples=draws[0], q_samples=draws[1], symbol_rate_hz=symbol_rate_hz
    )
