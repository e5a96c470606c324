#!/usr/bin/env python

"""
Waveform-fidelity link: pulse shaping, pre-emphasis, pilot multiplexing,
oscillator and clock impairments, and Bob's pilot-aided recovery.

Sample-level noise has per-quadrature variance N0 = noise_variance(ch, rx);
with energy-normalized root-raised-cosine taps the matched filter leaves N0
per recovered symbol, so a waveform shot with every impairment zeroed has
the statistics of the symbol-level link.
"""

import json
import logging
import math
import struct
from collections.abc import Callable
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy.signal import fftconvolve
from scipy.special import i0

from cvqkd_rt.basemodels import (
    ChannelModel,
    DspConfig,
    DspDiagnostics,
    ImpairmentModel,
    PilotPlan,
    QuadratureBlock,
    ReceiverModel,
    Waveform,
)
from cvqkd_rt.config import defaults
from cvqkd_rt.core import SeedLike, as_generator, rng_stream
from cvqkd_rt.errors import DomainError, SyncError
from cvqkd_rt.link import LinkPhysics, RawDetection, noise_variance, signal_gain

logger = logging.getLogger(__name__)

TxResponse = Callable[[np.ndarray], np.ndarray]

WAVEFORM_MAGIC = b"CVQW"
WAVEFORM_VERSION = 1
_DUMP_PREFIX = struct.Struct("<4sHI")

RESAMPLER_HALF_WIDTH = 32
RESAMPLER_KAISER_BETA = 8.0
PILOT_SEARCH_FRACTION = 0.03
QUANTUM_BAND_MARGIN = 1.05


# ---------------------------------------------------------------------------
# Pulse shaping
# ---------------------------------------------------------------------------


def rrc_taps(rolloff: float, sps: int, span: int = defaults.RRC_SPAN_SYMBOLS) -> np.ndarray:
    """Root-raised-cosine taps, span*sps + 1 long, with unit energy."""
    if not 0.0 < rolloff <= 1.0:
        raise DomainError(f"rolloff must lie in (0, 1], got {rolloff}")
    if sps < 2:
        raise DomainError(f"samples per symbol must be at least 2, got {sps}")
    n_taps = span * sps + 1
    t = (np.arange(n_taps) - (n_taps - 1) / 2) / sps
    h = np.empty(n_taps)

    at_zero = np.isclose(t, 0.0)
    at_edge = np.isclose(np.abs(t), 1.0 / (4.0 * rolloff))
    general = ~(at_zero | at_edge)

    h[at_zero] = 1.0 - rolloff + 4.0 * rolloff / math.pi
    h[at_edge] = (rolloff / math.sqrt(2.0)) * (
        (1.0 + 2.0 / math.pi) * math.sin(math.pi / (4.0 * rolloff))
        + (1.0 - 2.0 / math.pi) * math.cos(math.pi / (4.0 * rolloff))
    )
    tg = t[general]
    h[general] = (
        np.sin(math.pi * tg * (1.0 - rolloff))
        + 4.0 * rolloff * tg * np.cos(math.pi * tg * (1.0 + rolloff))
    ) / (math.pi * tg * (1.0 - (4.0 * rolloff * tg) ** 2))
    return h / math.sqrt(float(np.dot(h, h)))


def shape(
    block: QuadratureBlock,
    rolloff: float = defaults.ROLLOFF,
    sps: int = defaults.SAMPLES_PER_SYMBOL,
    span: int = defaults.RRC_SPAN_SYMBOLS,
) -> Waveform:
    """Upsample and RRC-filter Alice's symbols; transients of (taps - 1) / 2 at each end."""
    taps = rrc_taps(rolloff, sps, span)
    half = (taps.size - 1) // 2
    n = len(block)
    upsampled = np.zeros(n * sps, dtype=np.complex128)
    upsampled[::sps] = block.as_complex()
    samples = fftconvolve(upsampled, taps)
    samples = np.concatenate((samples, np.zeros(n * sps + 2 * half - samples.size)))
    return Waveform(
        samples=samples,
        sample_rate_hz=block.symbol_rate_hz * sps,
        samples_per_symbol=sps,
        n_symbols=n,
        head=half,
        tail=half,
    )


def matched_filter(w: Waveform, rolloff: float, span: int = defaults.RRC_SPAN_SYMBOLS) -> np.ndarray:
    """Matched-filter and sample at the symbol centres; returns complex symbols."""
    taps = rrc_taps(rolloff, w.samples_per_symbol, span)
    half = (taps.size - 1) // 2
    filtered = fftconvolve(w.samples, taps)
    start = w.head + half
    return filtered[start : start + w.n_symbols * w.samples_per_symbol : w.samples_per_symbol]


def _frequencies(w: Waveform) -> np.ndarray:
    return sfft.fftfreq(w.samples.size, d=1.0 / w.sample_rate_hz)


def quantum_band_hz(w: Waveform, rolloff: float) -> float:
    """One-sided occupied bandwidth of the shaped quantum signal."""
    return (1.0 + rolloff) * w.symbol_rate_hz / 2.0


# ---------------------------------------------------------------------------
# Transmitter response and pre-emphasis
# ---------------------------------------------------------------------------


def lowpass_response(cutoff_hz: float) -> TxResponse:
    """First-order low-pass H(f) = 1 / (1 + j f / f_c)."""

    def response(f: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + 1j * f / cutoff_hz)

    return response


def _as_response(tx_response: TxResponse | float | None) -> TxResponse | None:
    if tx_response is None or callable(tx_response):
        return tx_response
    return lowpass_response(float(tx_response))


def apply_response(w: Waveform, response: TxResponse | float | None) -> Waveform:
    """Filter the waveform by a frequency response (cyclic, whole record)."""
    response = _as_response(response)
    if response is None:
        return w
    spectrum = sfft.fft(w.samples) * response(_frequencies(w))
    return w.replace_samples(sfft.ifft(spectrum))


def pre_emphasize(
    w: Waveform,
    tx_response: TxResponse | float | None,
    floor: float = defaults.PRE_EMPHASIS_FLOOR,
) -> Waveform:
    """Multiply by 1/H_tx over the full Nyquist band so that the cascade is flat."""
    response = _as_response(tx_response)
    if response is None:
        return w
    h = response(_frequencies(w))
    if np.min(np.abs(h)) < floor:
        raise DomainError(
            f"transmitter response falls to {np.min(np.abs(h)):.3g} in band; cannot pre-emphasize"
        )
    return w.replace_samples(sfft.ifft(sfft.fft(w.samples) / h))


# ---------------------------------------------------------------------------
# Pilots and impairments
# ---------------------------------------------------------------------------


def quantum_power(w: Waveform) -> float:
    """Mean per-sample power of the payload region."""
    body = w.samples[w.head : w.samples.size - w.tail]
    return float(np.mean(np.abs(body) ** 2)) if body.size else 0.0


def pilot_amplitude(plan_power_db: float, reference_power: float) -> float:
    return math.sqrt(reference_power * 10.0 ** (plan_power_db / 10.0))


def add_pilots(
    w: Waveform,
    plan: PilotPlan,
    rolloff: float = defaults.ROLLOFF,
    reference_power: float | None = None,
) -> Waveform:
    """Add the carrier and sync pilot tones, powers relative to the quantum band."""
    band = quantum_band_hz(w, rolloff)
    nyquist = w.sample_rate_hz / 2.0
    for name, offset in (("carrier", plan.carrier_offset_hz), ("sync", plan.sync_offset_hz)):
        if abs(offset) <= band * QUANTUM_BAND_MARGIN:
            raise DomainError(
                f"{name} pilot at {offset / 1e6:.3f} MHz lies inside the quantum band "
                f"(+/-{band / 1e6:.3f} MHz)"
            )
        if abs(offset) >= nyquist:
            raise DomainError(f"{name} pilot at {offset / 1e6:.3f} MHz is beyond Nyquist")
    if reference_power is None:
        reference_power = quantum_power(w)
    k = np.arange(w.samples.size)
    samples = w.samples.copy()
    for offset, power_db in (
        (plan.carrier_offset_hz, plan.carrier_power_db),
        (plan.sync_offset_hz, plan.sync_power_db),
    ):
        amplitude = pilot_amplitude(power_db, reference_power)
        samples += amplitude * np.exp(2j * math.pi * offset / w.sample_rate_hz * k)
    return w.replace_samples(samples)


def wiener_phase(n: int, linewidth_hz: float, sample_rate_hz: float, seed: SeedLike) -> np.ndarray:
    """Laser phase random walk; increments have variance 2 pi linewidth / f_s."""
    if linewidth_hz == 0.0:
        return np.zeros(n)
    rng = as_generator(seed)
    steps = rng.normal(0.0, math.sqrt(2.0 * math.pi * linewidth_hz / sample_rate_hz), n)
    return np.cumsum(steps)


def _kaiser_sinc(offset: np.ndarray, half_width: int, beta: float) -> np.ndarray:
    ratio = np.clip(offset / half_width, -1.0, 1.0)
    window = i0(beta * np.sqrt(1.0 - ratio**2)) / i0(beta)
    return np.sinc(offset) * window


def resample_clock(
    samples: np.ndarray,
    ratio: float,
    half_width: int = RESAMPLER_HALF_WIDTH,
    chunk: int = 1 << 13,
) -> np.ndarray:
    """Evaluate the band-limited signal at k * ratio; samples beyond the record are zero."""
    if ratio == 1.0:
        return samples
    n = samples.size
    padded = np.concatenate(
        (np.zeros(half_width, samples.dtype), samples, np.zeros(half_width + 2, samples.dtype))
    )
    taps = np.arange(-half_width + 1, half_width + 1)
    out = np.empty(n, dtype=np.complex128)
    for start in range(0, n, chunk):
        tau = np.arange(start, min(start + chunk, n)) * ratio
        base = np.floor(tau).astype(np.int64)
        frac = tau - base
        idx = base[:, None] + taps[None, :]
        valid = (idx >= 0) & (idx < n)
        weights = _kaiser_sinc(taps[None, :] - frac[:, None], half_width, RESAMPLER_KAISER_BETA)
        gathered = padded[np.clip(idx + half_width, 0, padded.size - 1)]
        out[start : start + tau.size] = np.sum(gathered * weights * valid, axis=1)
    return out


def apply_impairments(
    w: Waveform,
    impairments: ImpairmentModel,
    seed: SeedLike = 0,
    noise_var: float = 0.0,
) -> Waveform:
    """Receiver-side oscillator and clock impairments.

    Order: LO phase noise and residual frequency offset, additive white noise
    of per-quadrature variance ``noise_var``, receiver response, ADC clock
    offset.
    """
    rng = as_generator(seed)
    n = w.samples.size
    samples = w.samples
    phase = wiener_phase(n, impairments.linewidth_hz, w.sample_rate_hz, rng)
    if impairments.freq_offset_hz:
        phase = phase + 2.0 * math.pi * impairments.freq_offset_hz / w.sample_rate_hz * np.arange(n)
    if np.any(phase):
        samples = samples * np.exp(1j * phase)
    if noise_var > 0.0:
        noise = rng.standard_normal((2, n))
        noise *= math.sqrt(noise_var)
        samples = samples + (noise[0] + 1j * noise[1])
    w = w.replace_samples(samples)
    if impairments.rx_cutoff_hz is not None:
        w = apply_response(w, impairments.rx_cutoff_hz)
    if impairments.clock_offset_ppm:
        w = w.replace_samples(resample_clock(w.samples, 1.0 + impairments.clock_offset_ppm * 1e-6))
    return w


def coherent_front_end(
    w: Waveform,
    ch: ChannelModel,
    rx: ReceiverModel,
    impairments: ImpairmentModel,
    seed: SeedLike = 0,
    noiseless: bool = False,
) -> Waveform:
    """Channel loss and noise from the link model, then the receiver impairments."""
    attenuated = w.replace_samples(w.samples * signal_gain(ch, rx))
    noise_var = 0.0 if noiseless else noise_variance(ch, rx)
    return apply_impairments(attenuated, impairments, seed, noise_var)


# ---------------------------------------------------------------------------
# Recovery
# ---------------------------------------------------------------------------


def equalizer_taps(cutoff_hz: float, sample_rate_hz: float, n_taps: int) -> np.ndarray:
    """Zero-forcing inverse FIR of a first-order low-pass receiver, delay n_taps // 2."""
    f = sfft.fftfreq(n_taps, d=1.0 / sample_rate_hz)
    inverse = 1.0 + 1j * f / cutoff_hz
    taps = sfft.fftshift(sfft.ifft(inverse))
    return taps * np.kaiser(n_taps, 6.0)


def equalize(w: Waveform, cutoff_hz: float | None, n_taps: int = defaults.EQUALIZER_TAPS) -> Waveform:
    if cutoff_hz is None:
        return w
    taps = equalizer_taps(cutoff_hz, w.sample_rate_hz, n_taps)
    delay = n_taps // 2
    filtered = fftconvolve(w.samples, taps)
    return w.replace_samples(filtered[delay : delay + w.samples.size])


def _bandpass(spectrum: np.ndarray, freqs: np.ndarray, centre_hz: float, width_hz: float) -> np.ndarray:
    mask = np.abs(freqs - centre_hz) <= width_hz / 2.0
    return sfft.ifft(np.where(mask, spectrum, 0.0))


def _peak_frequency(power: np.ndarray, freqs: np.ndarray, nominal_hz: float, window_hz: float) -> float:
    region = np.abs(freqs - nominal_hz) <= window_hz
    if not region.any():
        raise SyncError(f"no spectrum near the pilot at {nominal_hz / 1e6:.3f} MHz")
    candidates = np.flatnonzero(region)
    return float(freqs[candidates[np.argmax(power[candidates])]])


def _phase_slope(z: np.ndarray) -> float:
    """Least-squares slope (rad/sample) of the unwrapped phase of ``z``."""
    phase = np.unwrap(np.angle(z))
    k = np.arange(z.size, dtype=np.float64)
    k -= k.mean()
    return float(np.dot(k, phase - phase.mean()) / np.dot(k, k))


def phase_noise_excess(v_mod: float, t_total: float, phase_var: float) -> float:
    """Per-quadrature excess noise at Bob (SNU) from a phase error of variance ``phase_var``."""
    return v_mod * t_total / 2.0 * phase_var


def measure_pilot(
    w: Waveform,
    pilot_hz: float,
    pilot_bandwidth_hz: float,
    rolloff: float,
) -> tuple[float, float]:
    """Pilot power and per-bin noise power (both per sample) from the spectrum."""
    n = w.samples.size
    freqs = _frequencies(w)
    power = np.abs(sfft.fft(w.samples)) ** 2 / float(n) ** 2
    band = quantum_band_hz(w, rolloff) * QUANTUM_BAND_MARGIN
    gap_lo = band + 0.1 * (abs(pilot_hz) - band)
    gap_hi = abs(pilot_hz) - pilot_bandwidth_hz - 0.1 * (abs(pilot_hz) - band)
    quiet = (np.abs(freqs) >= gap_lo) & (np.abs(freqs) <= gap_hi)
    noise_per_bin = float(np.mean(power[quiet])) if quiet.any() else 0.0
    in_pilot = np.abs(freqs - pilot_hz) <= pilot_bandwidth_hz / 2.0
    pilot_power = float(np.sum(power[in_pilot])) - noise_per_bin * int(in_pilot.sum())
    return max(pilot_power, 0.0), noise_per_bin


def recover(
    w: Waveform,
    plan: PilotPlan,
    config: DspConfig | None = None,
    v_mod: float = defaults.V_MOD_SNU,
    t_total: float = 1.0,
) -> tuple[QuadratureBlock, DspDiagnostics]:
    """Equalize, lock to the pilots, undo clock drift and phase, matched-filter.

    ``t_total`` is T_ch T_rec; it scales the residual phase error into excess noise.

    Raises:
        SyncError: carrier pilot SNR in the pilot bandwidth is below the lock threshold
    """
    config = config or DspConfig()
    fs = w.sample_rate_hz
    n = w.samples.size
    w = equalize(w, config.impairments.rx_cutoff_hz, config.equalizer_taps)

    freqs = _frequencies(w)
    spectrum = sfft.fft(w.samples)
    power = np.abs(spectrum) ** 2
    window = PILOT_SEARCH_FRACTION * fs
    carrier_hz = _peak_frequency(power, freqs, plan.carrier_offset_hz, window)
    sync_hz = _peak_frequency(power, freqs, plan.sync_offset_hz, window)

    pilot_power, noise_per_bin = measure_pilot(w, carrier_hz, config.pilot_bandwidth_hz, config.rolloff)
    bin_hz = fs / n
    noise_symbol_band = max(noise_per_bin * w.symbol_rate_hz / bin_hz, 1e-300)
    noise_pilot_band = max(noise_per_bin * config.pilot_bandwidth_hz / bin_hz, 1e-300)
    pilot_snr_db = 10.0 * math.log10(max(pilot_power, 1e-300) / noise_symbol_band)
    lock_snr_db = 10.0 * math.log10(max(pilot_power, 1e-300) / noise_pilot_band)
    if lock_snr_db < config.lock_threshold_db:
        raise SyncError(
            f"carrier pilot SNR {lock_snr_db:.1f} dB below the "
            f"{config.lock_threshold_db:.1f} dB lock threshold"
        )
    residual_phase_var = noise_pilot_band / (2.0 * pilot_power)

    carrier = _bandpass(spectrum, freqs, carrier_hz, config.pilot_bandwidth_hz)
    sync = _bandpass(spectrum, freqs, sync_hz, config.pilot_bandwidth_hz)
    guard = min(w.head + w.tail, n // 4)
    core = slice(guard, n - guard)

    # the pilot pair shares LO phase noise and offset; only the clock scales their spacing
    spacing = plan.carrier_offset_hz - plan.sync_offset_hz
    k = np.arange(n)
    beat = carrier * np.conj(sync) * np.exp(-2j * math.pi * spacing / fs * k)
    clock_error = _phase_slope(beat[core]) * fs / (2.0 * math.pi * spacing)
    clock_scale = 1.0 + clock_error

    reference = carrier * np.exp(-2j * math.pi * plan.carrier_offset_hz * clock_scale / fs * k)
    freq_offset_hz = _phase_slope(reference[core]) * fs / (2.0 * math.pi) / clock_scale
    magnitude = np.abs(reference)
    with np.errstate(divide="ignore", invalid="ignore"):
        derotate = np.where(magnitude > 0.0, np.conj(reference) / magnitude, 1.0)
    samples = w.samples * derotate
    samples = resample_clock(samples, 1.0 / clock_scale)

    band = quantum_band_hz(w, config.rolloff) * QUANTUM_BAND_MARGIN
    samples = sfft.ifft(np.where(np.abs(freqs) <= band, sfft.fft(samples), 0.0))
    symbols = matched_filter(w.replace_samples(samples), config.rolloff, config.rrc_span_symbols)

    diagnostics = DspDiagnostics(
        pilot_snr_db=pilot_snr_db,
        residual_phase_var=residual_phase_var,
        xi_phase_snu=phase_noise_excess(v_mod, t_total, residual_phase_var),
        clock_offset_ppm=clock_error * 1e6,
        freq_offset_hz=freq_offset_hz,
        locked=True,
    )
    logger.debug(
        "Pilot SNR %.1f dB, clock %.3f ppm, offset %.1f kHz",
        pilot_snr_db,
        diagnostics.clock_offset_ppm,
        freq_offset_hz / 1e3,
    )
    return QuadratureBlock.from_complex(symbols, w.symbol_rate_hz), diagnostics


# ---------------------------------------------------------------------------
# Link physics and waveform dumps
# ---------------------------------------------------------------------------


def transmit_waveform(block: QuadratureBlock, config: DspConfig) -> Waveform:
    """Alice's DAC waveform: shaped symbols plus pilots, pre-emphasized for the TX response."""
    w = shape(block, config.rolloff, config.samples_per_symbol, config.rrc_span_symbols)
    w = add_pilots(w, config.pilots, config.rolloff)
    return pre_emphasize(w, config.impairments.tx_cutoff_hz)


def waveform_physics(
    ch: ChannelModel,
    rx: ReceiverModel,
    config: DspConfig,
    master_seed: int,
    adc_shot_noise_variance: float = defaults.ADC_SHOT_NOISE_VARIANCE,
) -> LinkPhysics:
    """Link physics running every shot through the waveform chain."""
    adc_scale = math.sqrt(adc_shot_noise_variance)

    def apply(block: QuadratureBlock, shot_id: int) -> RawDetection:
        v_mod = float(np.mean(block.i_samples**2 + block.q_samples**2) / 2.0)
        w = transmit_waveform(block, config)
        w = apply_response(w, config.impairments.tx_cutoff_hz)
        w = coherent_front_end(
            w,
            ch,
            rx,
            config.impairments,
            rng_stream(master_seed, shot_id, "dsp_impairments"),
            noiseless=config.noiseless,
        )
        recovered, diagnostics = recover(
            w, config.pilots, config, v_mod, ch.transmittance * rx.transmittance
        )
        return RawDetection(
            recovered.i_samples * adc_scale, recovered.q_samples * adc_scale, diagnostics
        )

    return apply


def write_waveform(w: Waveform, path: str | Path) -> Path:
    """Dump a waveform: magic, version, JSON header, interleaved little-endian float32 I/Q."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(
        {
            "sample_rate_hz": w.sample_rate_hz,
            "samples_per_symbol": w.samples_per_symbol,
            "n_symbols": w.n_symbols,
            "head": w.head,
            "tail": w.tail,
            "n_samples": int(w.samples.size),
            "dtype": "<f4",
        }
    ).encode()
    interleaved = np.empty(2 * w.samples.size, dtype="<f4")
    interleaved[0::2] = w.samples.real
    interleaved[1::2] = w.samples.imag
    with path.open("wb") as fh:
        fh.write(_DUMP_PREFIX.pack(WAVEFORM_MAGIC, WAVEFORM_VERSION, len(header)))
        fh.write(header)
        fh.write(interleaved.tobytes())
    return path


def read_waveform(path: str | Path) -> Waveform:
    data = Path(path).read_bytes()
    if len(data) < _DUMP_PREFIX.size:
        raise DomainError(f"{path} is too short to be a waveform dump")
    magic, version, header_len = _DUMP_PREFIX.unpack_from(data)
    if magic != WAVEFORM_MAGIC:
        raise DomainError(f"{path} is not a waveform dump")
    if version != WAVEFORM_VERSION:
        raise DomainError(f"unsupported waveform dump version {version}")
    start = _DUMP_PREFIX.size
    header = json.loads(data[start : start + header_len])
    values = np.frombuffer(data[start + header_len :], dtype=header["dtype"])
    if values.size != 2 * header["n_samples"]:
        raise DomainError(f"{path} holds {values.size // 2} samples, header says {header['n_samples']}")
    return Waveform(
        samples=values[0::2].astype(np.float64) + 1j * values[1::2].astype(np.float64),
        sample_rate_hz=header["sample_rate_hz"],
        samples_per_symbol=header["samples_per_symbol"],
        n_symbols=header["n_symbols"],
        head=header["head"],
        tail=header["tail"],
    )
