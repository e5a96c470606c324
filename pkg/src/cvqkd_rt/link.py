#!/usr/bin/env python

"""
Symbol-level physical layer: Gaussian channel, trusted heterodyne receiver
and the two-step shot-noise calibration.

Per quadrature, Bob measures y = sqrt(T_ch T_rec / 2) x + n with
Var(n) = 1 + v_el + (T_rec / 2) xi_ch. The factor 1/2 is the heterodyne split.
"""

import logging
import math
from collections.abc import Callable, Sequence
from typing import NamedTuple

import numpy as np

from cvqkd_rt.basemodels import (
    CalibrationTraces,
    ChannelModel,
    DetectionBlock,
    DspDiagnostics,
    QuadratureBlock,
    ReceiverModel,
)
from cvqkd_rt.config import defaults
from cvqkd_rt.core import SeedLike, as_generator, rng_stream
from cvqkd_rt.errors import CalibrationError, DomainError

logger = logging.getLogger(__name__)


def signal_gain(ch: ChannelModel, rx: ReceiverModel) -> float:
    """Amplitude gain t = sqrt(T_ch T_rec / 2) from x to y."""
    return math.sqrt(ch.transmittance * rx.transmittance / 2.0)


def noise_variance(ch: ChannelModel, rx: ReceiverModel) -> float:
    """Variance of the additive noise at Bob, per quadrature (SNU)."""
    return 1.0 + rx.electronic_noise + 0.5 * rx.transmittance * ch.excess_noise_out


def output_variance(ch: ChannelModel, rx: ReceiverModel, v_mod: float) -> float:
    return signal_gain(ch, rx) ** 2 * v_mod + noise_variance(ch, rx)


def calibrate_snu(traces: CalibrationTraces) -> float:
    """N_shot = N_nosig - N_el, the divisor that normalizes every later sample."""
    shot_noise = traces.n_nosig - traces.n_el
    if shot_noise <= 0.0:
        raise CalibrationError(
            f"shot-noise calibration failed: N_nosig={traces.n_nosig:.6g} "
            f"does not exceed N_el={traces.n_el:.6g}"
        )
    return float(shot_noise)


def simulate_calibration_traces(
    rx: ReceiverModel,
    adc_shot_noise_variance: float = defaults.ADC_SHOT_NOISE_VARIANCE,
    n_samples: int = defaults.CALIBRATION_SAMPLES,
    seed: SeedLike = 0,
) -> CalibrationTraces:
    """Capture LO-off and LO-on/no-signal traces in raw detector units."""
    rng = as_generator(seed)
    scale = math.sqrt(adc_shot_noise_variance)
    electronic = rng.standard_normal(n_samples) * (math.sqrt(rx.electronic_noise) * scale)
    vacuum = rng.standard_normal(n_samples) * math.sqrt(
        (1.0 + rx.electronic_noise) * adc_shot_noise_variance
    )
    return CalibrationTraces(
        n_el=float(np.var(electronic)), n_nosig=float(np.var(vacuum))
    )


def normalize_detection(
    raw_i: np.ndarray,
    raw_q: np.ndarray,
    traces: CalibrationTraces,
    diagnostics: DspDiagnostics | None = None,
) -> DetectionBlock:
    """Divide raw samples by sqrt(N_shot); v_el is read off as N_el / N_shot."""
    shot_noise = calibrate_snu(traces)
    scale = 1.0 / math.sqrt(shot_noise)
    return DetectionBlock(
        y_i=np.asarray(raw_i) * scale,
        y_q=np.asarray(raw_q) * scale,
        shot_noise=shot_noise,
        v_el_hat=traces.n_el / shot_noise,
        diagnostics=diagnostics,
    )


def detect_raw(
    block: QuadratureBlock,
    ch: ChannelModel,
    rx: ReceiverModel,
    seed: SeedLike,
    adc_shot_noise_variance: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Bob's detector output in raw ADC units (vacuum variance = adc_shot_noise_variance)."""
    rng = as_generator(seed)
    n = len(block)
    gain = signal_gain(ch, rx)
    sigma = math.sqrt(noise_variance(ch, rx))
    noise = rng.standard_normal((2, n))
    noise *= sigma
    noise[0] += gain * block.i_samples
    noise[1] += gain * block.q_samples
    if adc_shot_noise_variance != 1.0:
        noise *= math.sqrt(adc_shot_noise_variance)
    return noise[0], noise[1]


def transmit(
    block: QuadratureBlock,
    ch: ChannelModel,
    rx: ReceiverModel,
    seed: SeedLike,
) -> DetectionBlock:
    """Send a block through the channel and measure it, already in SNU."""
    y_i, y_q = detect_raw(block, ch, rx, seed)
    return DetectionBlock(y_i=y_i, y_q=y_q, shot_noise=1.0, v_el_hat=rx.electronic_noise)


def sweep_xi_profile(
    loss_db: float,
    knots: Sequence[tuple[float, float]] = defaults.SWEEP_XI_KNOTS,
) -> float:
    """Piecewise-linear excess noise versus loss, held flat outside the knots."""
    xs = np.array([k[0] for k in knots], dtype=float)
    ys = np.array([k[1] for k in knots], dtype=float)
    return float(np.interp(loss_db, xs, ys))


def emulate_loss_sweep(
    points: Sequence[float],
    base: ChannelModel | None = None,
    xi_profile: Callable[[float], float] | Sequence[tuple[float, float]] | None = None,
) -> list[ChannelModel]:
    """Channel models for a list of losses (dB).

    By default every point keeps the base model's excess noise; ``xi_profile``
    may be a callable of loss_db or a list of (loss_db, xi_snu) knots.
    """
    points = [float(p) for p in points]
    if any(p < 0.0 or p > 30.0 for p in points):
        raise DomainError("sweep points must lie within [0, 30] dB")
    if any(b < a for a, b in zip(points, points[1:], strict=False)):
        raise DomainError("sweep points must be non-decreasing")
    base = base or ChannelModel()
    if xi_profile is None:
        profile: Callable[[float], float] = lambda _loss: base.excess_noise_out  # noqa: E731
    elif callable(xi_profile):
        profile = xi_profile
    else:
        knots = list(xi_profile)
        profile = lambda loss: sweep_xi_profile(loss, knots)  # noqa: E731
    return [ChannelModel(loss_db=p, excess_noise_out=profile(p)) for p in points]


def sweep_losses(
    max_loss_db: float = defaults.SWEEP_MAX_LOSS_DB, count: int = defaults.SWEEP_POINTS
) -> list[float]:
    return [float(v) for v in np.linspace(0.0, max_loss_db, count)]


class RawDetection(NamedTuple):
    """Bob's per-symbol detector output in raw ADC units."""

    y_i: np.ndarray
    y_q: np.ndarray
    diagnostics: DspDiagnostics | None = None


LinkPhysics = Callable[[QuadratureBlock, int], RawDetection]


def symbol_physics(
    ch: ChannelModel,
    rx: ReceiverModel,
    master_seed: int,
    adc_shot_noise_variance: float = defaults.ADC_SHOT_NOISE_VARIANCE,
) -> LinkPhysics:
    """Symbol-level channel plus detector, noise drawn from the shot's channel stream."""

    def apply(block: QuadratureBlock, shot_id: int) -> RawDetection:
        y_i, y_q = detect_raw(
            block,
            ch,
            rx,
            rng_stream(master_seed, shot_id, "channel_noise"),
            adc_shot_noise_variance,
        )
        return RawDetection(y_i, y_q)

    return apply
