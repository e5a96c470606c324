#!/usr/bin/env python

"""
Base Pydantic models for cvqkd-rt.

This module contains all Pydantic BaseModels used throughout the application:
link and receiver parameters, the protocol configuration tree, per-shot
records, security reports, post-processing values, classical-channel messages,
the LangGraph shot state and campaign descriptions.
"""

import math
import operator
from enum import IntEnum
from typing import Annotated, Any, ClassVar, Literal

import numpy as np
import scipy.sparse as sp
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)

from cvqkd_rt.config import defaults

SnuValue = Annotated[float, Field(ge=0.0, allow_inf_nan=False)]

ShotStatus = Literal[
    "success", "fail_sync", "fail_param_est", "fail_error_corr", "fail_confirm"
]
SHOT_STATUSES: tuple[str, ...] = (
    "success",
    "fail_sync",
    "fail_param_est",
    "fail_error_corr",
    "fail_confirm",
)
AttackModel = Literal["individual", "collective"]
ReceiverAccounting = Literal["excluded", "trusted_noise"]
Role = Literal["alice", "bob"]
KeyStage = Literal["reconciled", "confirmed", "final"]


def _readonly_array(value: Any, dtype: Any) -> np.ndarray:
    arr = np.array(value, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Link
# ---------------------------------------------------------------------------


class QuadratureBlock(BaseModel):
    """Paired I/Q symbol sequences in SNU amplitude units."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    i_samples: np.ndarray = Field(..., description="In-phase quadrature values")
    q_samples: np.ndarray = Field(..., description="Quadrature-phase values")
    symbol_rate_hz: float = Field(
        default=defaults.SYMBOL_RATE_HZ, gt=0, description="Symbol rate f_sym"
    )

    @field_validator("i_samples", "q_samples", mode="before")
    @classmethod
    def _as_float_array(cls, value: Any) -> np.ndarray:
        return _readonly_array(value, np.float64)

    @model_validator(mode="after")
    def _check_lengths(self) -> "QuadratureBlock":
        if self.i_samples.ndim != 1 or self.q_samples.ndim != 1:
            raise ValueError("quadratures must be one-dimensional")
        if self.i_samples.shape != self.q_samples.shape:
            raise ValueError(
                f"i/q length mismatch: {self.i_samples.size} != {self.q_samples.size}"
            )
        return self

    def __len__(self) -> int:
        return int(self.i_samples.size)

    def as_complex(self) -> np.ndarray:
        return self.i_samples + 1j * self.q_samples

    def as_pairs(self) -> np.ndarray:
        """Return an (n, 2) array of (i, q) rows."""
        return np.column_stack((self.i_samples, self.q_samples))

    @classmethod
    def from_complex(
        cls, values: np.ndarray, symbol_rate_hz: float = defaults.SYMBOL_RATE_HZ
    ) -> "QuadratureBlock":
        values = np.asarray(values)
        return cls(
            i_samples=values.real,
            q_samples=values.imag,
            symbol_rate_hz=symbol_rate_hz,
        )


class ChannelModel(BaseModel):
    """Untrusted Gaussian channel: loss and output-referred excess noise."""

    model_config = ConfigDict(frozen=True)

    loss_db: float = Field(
        default=defaults.CHANNEL_LOSS_DB,
        ge=0.0,
        allow_inf_nan=False,
        description="Channel loss in dB",
    )
    excess_noise_out: SnuValue = Field(
        default=defaults.XI_CH_SNU,
        description="Excess noise xi_ch referred to the channel output (SNU)",
    )

    @property
    def transmittance(self) -> float:
        return float(10.0 ** (-self.loss_db / 10.0))

    @classmethod
    def from_transmittance(
        cls, transmittance: float, excess_noise_out: float = 0.0
    ) -> "ChannelModel":
        if not 0.0 < transmittance <= 1.0:
            raise ValueError(f"transmittance must lie in (0, 1], got {transmittance}")
        return cls(
            loss_db=max(0.0, -10.0 * math.log10(transmittance)),
            excess_noise_out=excess_noise_out,
        )


class ReceiverModel(BaseModel):
    """Trusted receiver: detection efficiency and electronic noise."""

    model_config = ConfigDict(frozen=True)

    transmittance: float = Field(
        default=defaults.T_REC, gt=0.0, le=1.0, description="Receiver transmittance T_rec"
    )
    electronic_noise: SnuValue = Field(
        default=defaults.V_EL_SNU,
        description="Electronic noise v_el (identified with xi_rec), SNU",
    )
    trusted: bool = Field(
        default=True, description="Receiver noise and loss are excluded from Eve's share"
    )


class CalibrationTraces(BaseModel):
    """Variances of the two calibration captures, in raw detector units."""

    model_config = ConfigDict(frozen=True)

    n_el: SnuValue = Field(..., description="Variance with LO off and no signal (N_el)")
    n_nosig: SnuValue = Field(
        ..., description="Variance with LO on and no signal (N_nosig)"
    )


class DspDiagnostics(BaseModel):
    """Receiver DSP health indicators for one waveform shot."""

    model_config = ConfigDict(frozen=True)

    pilot_snr_db: float = Field(..., description="Carrier pilot SNR in the symbol bandwidth")
    residual_phase_var: float = Field(
        ..., ge=0.0, description="Predicted residual phase-error variance (rad^2)"
    )
    xi_phase_snu: float = Field(
        ..., ge=0.0, description="Excess noise at Bob from imperfect phase recovery (SNU)"
    )
    clock_offset_ppm: float = Field(default=0.0, description="Recovered clock offset")
    freq_offset_hz: float = Field(default=0.0, description="Recovered carrier offset")
    locked: bool = Field(default=True, description="Pilot SNR above the lock threshold")


class DetectionBlock(BaseModel):
    """Bob's measured quadratures normalized to SNU."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    y_i: np.ndarray = Field(..., description="Measured in-phase quadratures (SNU^1/2)")
    y_q: np.ndarray = Field(..., description="Measured quadrature-phase values")
    shot_noise: float = Field(
        default=1.0, gt=0.0, description="N_shot divisor applied to the raw samples"
    )
    v_el_hat: float | None = Field(
        default=None, description="Electronic noise recovered by calibration (SNU)"
    )
    diagnostics: DspDiagnostics | None = Field(
        default=None, description="Waveform-mode DSP diagnostics"
    )

    @field_validator("y_i", "y_q", mode="before")
    @classmethod
    def _as_float_array(cls, value: Any) -> np.ndarray:
        return _readonly_array(value, np.float64)

    @model_validator(mode="after")
    def _check_lengths(self) -> "DetectionBlock":
        if self.y_i.shape != self.y_q.shape:
            raise ValueError("y_i and y_q must have equal length")
        return self

    def __len__(self) -> int:
        return int(self.y_i.size)

    def as_pairs(self) -> np.ndarray:
        return np.column_stack((self.y_i, self.y_q))


# ---------------------------------------------------------------------------
# Waveform mode
# ---------------------------------------------------------------------------


class PilotPlan(BaseModel):
    """Frequency placement and power of the carrier and sync pilots."""

    model_config = ConfigDict(frozen=True)

    carrier_offset_hz: float = Field(
        default=defaults.PILOT_OFFSET_FRACTION
        * defaults.SYMBOL_RATE_HZ
        * defaults.SAMPLES_PER_SYMBOL,
        allow_inf_nan=False,
        description="Carrier pilot offset from baseband centre (Hz)",
    )
    carrier_power_db: float = Field(
        default=defaults.PILOT_POWER_DB,
        allow_inf_nan=False,
        description="Carrier pilot power relative to the quantum band power (dB)",
    )
    sync_offset_hz: float = Field(
        default=-defaults.PILOT_OFFSET_FRACTION
        * defaults.SYMBOL_RATE_HZ
        * defaults.SAMPLES_PER_SYMBOL,
        allow_inf_nan=False,
        description="Synchronization pilot offset (Hz)",
    )
    sync_power_db: float = Field(
        default=defaults.PILOT_POWER_DB,
        allow_inf_nan=False,
        description="Synchronization pilot relative power (dB)",
    )


class ImpairmentModel(BaseModel):
    """Transmitter and oscillator imperfections applied in waveform mode."""

    model_config = ConfigDict(frozen=True)

    linewidth_hz: float = Field(
        default=0.0, ge=0.0, description="Combined laser linewidth (Lorentzian)"
    )
    freq_offset_hz: float = Field(
        default=0.0, description="Residual carrier offset after the frequency lock"
    )
    clock_offset_ppm: float = Field(
        default=0.0, gt=-1000.0, lt=1000.0, description="Receiver clock offset"
    )
    tx_cutoff_hz: float | None = Field(
        default=None, gt=0.0, description="First-order low-pass TX response cutoff"
    )
    rx_cutoff_hz: float | None = Field(
        default=None, gt=0.0, description="First-order low-pass RX response cutoff"
    )


class Waveform(BaseModel):
    """Complex baseband samples with explicit filter transients."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: np.ndarray = Field(..., description="Complex baseband samples")
    sample_rate_hz: float = Field(..., gt=0.0, description="Sample rate f_s")
    samples_per_symbol: int = Field(..., ge=2, description="Oversampling factor")
    n_symbols: int = Field(..., ge=0, description="Number of payload symbols")
    head: int = Field(default=0, ge=0, description="Leading transient samples")
    tail: int = Field(default=0, ge=0, description="Trailing transient samples")

    @field_validator("samples", mode="before")
    @classmethod
    def _as_complex_array(cls, value: Any) -> np.ndarray:
        return _readonly_array(value, np.complex128)

    @model_validator(mode="after")
    def _check_length(self) -> "Waveform":
        expected = self.n_symbols * self.samples_per_symbol + self.head + self.tail
        if self.samples.size != expected:
            raise ValueError(
                f"waveform has {self.samples.size} samples, expected {expected}"
            )
        return self

    @property
    def symbol_rate_hz(self) -> float:
        return self.sample_rate_hz / self.samples_per_symbol

    def replace_samples(self, samples: np.ndarray, **changes: Any) -> "Waveform":
        values = self.model_dump(exclude={"samples"})
        values.update(changes)
        return Waveform(samples=samples, **values)


class DspConfig(BaseModel):
    """Waveform-mode parameters."""

    model_config = ConfigDict(frozen=True)

    samples_per_symbol: int = Field(default=defaults.SAMPLES_PER_SYMBOL, ge=2)
    rolloff: float = Field(default=defaults.ROLLOFF, gt=0.0, le=1.0)
    rrc_span_symbols: int = Field(default=defaults.RRC_SPAN_SYMBOLS, ge=2)
    waveform_symbols: int = Field(
        default=defaults.WAVEFORM_SYMBOLS,
        ge=1024,
        description="Symbols per shot in waveform mode",
    )
    pilots: PilotPlan = Field(default_factory=PilotPlan)
    impairments: ImpairmentModel = Field(default_factory=ImpairmentModel)
    pilot_bandwidth_hz: float = Field(default=defaults.PILOT_BANDWIDTH_HZ, gt=0.0)
    lock_threshold_db: float = Field(default=defaults.LOCK_THRESHOLD_DB)
    equalizer_taps: int = Field(default=defaults.EQUALIZER_TAPS, ge=2)
    noiseless: bool = Field(
        default=False, description="Skip additive noise (mechanism tests only)"
    )


# ---------------------------------------------------------------------------
# Protocol configuration
# ---------------------------------------------------------------------------


class LinkConfig(BaseModel):
    """Physical link used when a shot runs over the simulated channel."""

    model_config = ConfigDict(frozen=True)

    channel: ChannelModel = Field(default_factory=ChannelModel)
    receiver: ReceiverModel = Field(default_factory=ReceiverModel)
    adc_shot_noise_variance: float = Field(
        default=defaults.ADC_SHOT_NOISE_VARIANCE,
        gt=0.0,
        description="Vacuum variance in raw ADC units (unknown to Bob before calibration)",
    )
    calibration_samples: int = Field(default=defaults.CALIBRATION_SAMPLES, ge=1024)
    fiber_attenuation_db_per_km: float = Field(
        default=defaults.FIBER_ATTENUATION_DB_PER_KM, gt=0.0
    )


class ReconciliationConfig(BaseModel):
    """MDR and LDPC parameters."""

    model_config = ConfigDict(frozen=True)

    mdr_dimension: Literal[2, 4, 8] = Field(default=defaults.MDR_DIMENSION)
    code_length: int = Field(default=defaults.CODE_LENGTH, ge=64)
    code_rate: float = Field(default=defaults.CODE_RATE, gt=0.0, lt=0.5)
    code_seed: int = Field(default=defaults.CODE_SEED, ge=0)
    design_snr: float | None = Field(
        default=None,
        gt=0.0,
        description="Operating SNR of the code; None derives it by density evolution",
    )
    design_margin_db: float = Field(default=defaults.CODE_DESIGN_MARGIN_DB, ge=0.0)
    code_file: str | None = Field(default=None, description="Explicit code file path")
    cache_dir: str | None = Field(default=None, description="Code cache directory")
    max_iter: int = Field(default=defaults.LDPC_MAX_ITER, ge=1)
    batch_frames: int = Field(default=defaults.LDPC_BATCH_FRAMES, ge=1)
    snr_margin: float = Field(default=defaults.SNR_MARGIN, ge=0.0)
    fer_prior: float = Field(default=defaults.FER_PRIOR, ge=0.0, lt=1.0)
    fer_ewma_weight: float = Field(default=defaults.FER_EWMA_WEIGHT, gt=0.0, le=1.0)


class TimingConfig(BaseModel):
    """Live wall-clock or synthetic per-phase timing."""

    model_config = ConfigDict(frozen=True)

    mode: Literal["live", "synthetic"] = Field(default="live")
    phase_durations_s: dict[str, float] = Field(
        default_factory=lambda: dict(defaults.SYNTHETIC_TIMING_S),
        description="Synthetic seconds per phase",
    )
    message_timeout_s: float = Field(default=defaults.MESSAGE_TIMEOUT_S, gt=0.0)

    @field_validator("phase_durations_s")
    @classmethod
    def _non_negative(cls, value: dict[str, float]) -> dict[str, float]:
        unknown = set(value) - set(defaults.SYNTHETIC_TIMING_S)
        if unknown:
            raise ValueError(f"unknown timing phases: {sorted(unknown)}")
        if any(v < 0 for v in value.values()):
            raise ValueError("phase durations must be non-negative")
        return {**defaults.SYNTHETIC_TIMING_S, **value}


class TransportConfig(BaseModel):
    """Classical and quantum transport endpoints."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["loopback", "tcp"] = Field(default="loopback")
    host: str = Field(default=defaults.TCP_HOST)
    port: int = Field(default=defaults.TCP_PORT, ge=1, le=65535)
    quantum_port: int = Field(default=defaults.QUANTUM_TCP_PORT, ge=1, le=65535)


class SeedConfig(BaseModel):
    """Root of every deterministic random stream."""

    model_config = ConfigDict(frozen=True)

    master_seed: int = Field(default=1, ge=0)


class AuthConfig(BaseModel):
    """Classical-channel authentication parameters."""

    model_config = ConfigDict(frozen=True)

    psk_hex: str = Field(
        default=defaults.DEFAULT_PSK_HEX, description="Pre-shared bootstrap key (hex)"
    )
    bootstrap_policy: Literal["psk", "halt"] = Field(default="psk")
    pool_target_epochs: int = Field(default=defaults.AUTH_POOL_TARGET_EPOCHS, ge=1)

    @field_validator("psk_hex")
    @classmethod
    def _check_psk(cls, value: str) -> str:
        try:
            raw = bytes.fromhex(value)
        except ValueError as e:
            raise ValueError("psk_hex must be hexadecimal") from e
        if len(raw) < 32:
            raise ValueError("pre-shared key must be at least 32 bytes")
        return value


class ProtocolConfig(BaseModel):
    """Complete, versioned configuration of one node pair."""

    model_config = ConfigDict(frozen=True)

    schema_version: int = Field(default=defaults.SCHEMA_VERSION)
    symbols_per_shot: int = Field(default=defaults.SYMBOLS_PER_SHOT, ge=2)
    symbol_rate_hz: float = Field(default=defaults.SYMBOL_RATE_HZ, gt=0.0)
    v_mod_snu: float = Field(default=defaults.V_MOD_SNU, gt=0.0, allow_inf_nan=False)
    v_mod_bounds_snu: tuple[float, float] = Field(default=defaults.V_MOD_BOUNDS_SNU)
    adapt_v_mod: bool = Field(
        default=True, description="Use the optimizer's V_mod on the next shot"
    )
    disclosure_fraction: float = Field(default=defaults.DISCLOSURE_FRACTION, gt=0.0, lt=1.0)
    min_disclosed_pairs: int = Field(default=defaults.MIN_DISCLOSED_PAIRS, ge=2)
    attack_model: AttackModel = Field(default=defaults.ATTACK_MODEL)
    receiver_accounting: ReceiverAccounting = Field(
        default=defaults.RECEIVER_ACCOUNTING,
        description="excluded: Eve sees the channel only; trusted_noise: receiver noise enters",
    )
    waveform: bool = Field(default=False, description="Run the link through the DSP chain")
    link: LinkConfig = Field(default_factory=LinkConfig)
    reconciliation: ReconciliationConfig = Field(default_factory=ReconciliationConfig)
    timing: TimingConfig = Field(default_factory=TimingConfig)
    transport: TransportConfig = Field(default_factory=TransportConfig)
    seeds: SeedConfig = Field(default_factory=SeedConfig)
    auth: AuthConfig = Field(default_factory=AuthConfig)
    dsp: DspConfig = Field(default_factory=DspConfig)

    @field_validator("schema_version")
    @classmethod
    def _check_schema(cls, value: int) -> int:
        if value != defaults.SCHEMA_VERSION:
            raise ValueError(
                f"unsupported schema_version {value} (expected {defaults.SCHEMA_VERSION})"
            )
        return value

    @field_validator("symbols_per_shot")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError(f"symbols_per_shot must be a power of two, got {value}")
        return value

    @field_validator("v_mod_bounds_snu")
    @classmethod
    def _check_bounds(cls, value: tuple[float, float]) -> tuple[float, float]:
        lo, hi = value
        if not 0.0 < lo < hi:
            raise ValueError(f"v_mod bounds must satisfy 0 < lo < hi, got {value}")
        return value

    @property
    def shot_symbols(self) -> int:
        """Symbols actually sent per shot (reduced in waveform mode)."""
        if self.waveform:
            return min(self.symbols_per_shot, self.dsp.waveform_symbols)
        return self.symbols_per_shot

    @property
    def psk(self) -> bytes:
        return bytes.fromhex(self.auth.psk_hex)


# ---------------------------------------------------------------------------
# Security calculus
# ---------------------------------------------------------------------------


class ChannelEstimate(BaseModel):
    """Channel parameters recovered from disclosed symbol pairs."""

    model_config = ConfigDict(frozen=True)

    n_pairs: int = Field(..., ge=0, description="Disclosed real (x, y) pairs")
    t_hat: float = Field(..., description="Amplitude gain estimate")
    t_hat_std: float = Field(..., ge=0.0, description="Standard error of t_hat")
    t_ch_hat: float = Field(..., description="Channel transmittance estimate")
    t_ch_std: float = Field(..., ge=0.0, description="Standard error of T_ch")
    xi_ch_hat: float = Field(..., description="Raw excess-noise estimate (may be < 0)")
    xi_ch_std: float = Field(..., ge=0.0, description="Standard error of xi_ch")
    noise_var_hat: float = Field(..., description="Var(y - t_hat x), SNU")
    v_mod_hat: float = Field(..., description="Empirical modulation variance")
    usable: bool = Field(default=True, description="Estimate supports key generation")
    flagged: bool = Field(default=False, description="Raw estimate is non-physical")

    @model_validator(mode="after")
    def _check_range(self) -> "ChannelEstimate":
        if self.usable and not 0.0 <= self.t_ch_hat <= 1.05:
            raise ValueError(f"usable estimate with T_ch_hat={self.t_ch_hat} out of range")
        return self

    @property
    def xi_ch_clamped(self) -> float:
        return max(0.0, self.xi_ch_hat)

    def channel(self) -> ChannelModel:
        return ChannelModel.from_transmittance(
            min(max(self.t_ch_hat, 1e-12), 1.0), self.xi_ch_clamped
        )


class SecurityReport(BaseModel):
    """Mutual information, Eve's information and the resulting SKF."""

    model_config = ConfigDict(frozen=True)

    i_ab: float = Field(..., ge=0.0, description="Mutual information, bits/symbol")
    eve_info: float = Field(..., ge=0.0, description="chi_BE or I_EB, bits/symbol")
    skf: float = Field(..., description="Secret key fraction, bits/symbol")
    beta: float = Field(..., gt=0.0, le=1.0, description="Reconciliation efficiency")
    fer: float = Field(..., ge=0.0, lt=1.0, description="Frame error rate")
    disclosure_fraction: float = Field(..., gt=0.0, lt=1.0, description="nu")
    attack_model: AttackModel = Field(..., description="Eve's attack class")
    receiver_accounting: ReceiverAccounting = Field(
        default="excluded", description="How Bob's receiver enters Eve's information"
    )
    t_ch: float = Field(..., description="Channel transmittance used")
    xi_ch: float = Field(..., description="Output-referred excess noise used (SNU)")
    t_rec: float = Field(..., description="Receiver transmittance")
    v_el: float = Field(..., description="Electronic noise (SNU)")
    v_mod: float = Field(..., description="Modulation variance (SNU)")
    snr: float = Field(..., ge=0.0, description="Per-quadrature SNR at Bob")

    @model_validator(mode="after")
    def _check_skf(self) -> "SecurityReport":
        expected = (
            (1.0 - self.disclosure_fraction)
            * (1.0 - self.fer)
            * (self.beta * self.i_ab - self.eve_info)
        )
        if not math.isclose(self.skf, expected, rel_tol=1e-12, abs_tol=1e-15):
            raise ValueError(f"skf {self.skf} inconsistent with inputs ({expected})")
        return self


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------


class MdrMapping(BaseModel):
    """Orthogonal map sending Bob's normalized block onto a spherical codeword."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    dimension: Literal[2, 4, 8] = Field(..., description="Block dimension d")
    alpha: np.ndarray = Field(
        ..., description="Unit element a with M(v) = a * v in the d-dim algebra"
    )
    norm: float = Field(..., gt=0.0, description="Norm |y| of Bob's block")

    @field_validator("alpha", mode="before")
    @classmethod
    def _as_float_array(cls, value: Any) -> np.ndarray:
        return _readonly_array(value, np.float64)

    @model_validator(mode="after")
    def _check_unit(self) -> "MdrMapping":
        if self.alpha.shape != (self.dimension,):
            raise ValueError(f"alpha must have shape ({self.dimension},)")
        if abs(float(np.linalg.norm(self.alpha)) - 1.0) > 1e-9:
            raise ValueError("alpha must be a unit element")
        return self


class LdpcCode(BaseModel):
    """Sparse parity-check matrix with its construction parameters."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    code_id: str = Field(..., description="Stable identifier of the code")
    n: int = Field(..., ge=2, description="Codeword length (columns)")
    m: int = Field(..., ge=1, description="Parity checks (rows)")
    k: int = Field(..., ge=1, description="Information length n - m")
    seed: int = Field(..., ge=0, description="Construction seed")
    design_snr: float = Field(..., gt=0.0, description="Per-dimension operating SNR")
    parity_check: sp.csr_matrix = Field(..., description="m x n parity-check matrix")

    @model_validator(mode="after")
    def _check_shape(self) -> "LdpcCode":
        if self.parity_check.shape != (self.m, self.n):
            raise ValueError(
                f"parity-check shape {self.parity_check.shape} != ({self.m}, {self.n})"
            )
        if self.k != self.n - self.m:
            raise ValueError("k must equal n - m")
        return self

    @property
    def rate(self) -> float:
        return 1.0 - self.m / self.n


class CodePerformance(BaseModel):
    """Monte Carlo frame error rate of a code at one SNR."""

    snr: float = Field(..., gt=0.0, description="Per-dimension SNR of the simulated link")
    frames: int = Field(..., ge=1)
    frame_errors: int = Field(..., ge=0)
    fer: float = Field(..., ge=0.0, le=1.0)
    beta: float = Field(..., gt=0.0, description="2R / log2(1 + SNR)")
    mean_iterations: float = Field(..., ge=0.0)


class KeyMaterial(BaseModel):
    """A bit string with its provenance."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    bits: np.ndarray = Field(..., description="Bits as uint8 0/1 values")
    shot_id: int = Field(..., ge=0, description="Shot that produced the bits")
    stage: KeyStage = Field(..., description="Pipeline stage")

    @field_validator("bits", mode="before")
    @classmethod
    def _as_bits(cls, value: Any) -> np.ndarray:
        arr = _readonly_array(value, np.uint8)
        if arr.ndim != 1:
            raise ValueError("bits must be one-dimensional")
        if arr.size and arr.max() > 1:
            raise ValueError("bits must be 0/1 values")
        return arr

    def __len__(self) -> int:
        return int(self.bits.size)


# ---------------------------------------------------------------------------
# Classical channel
# ---------------------------------------------------------------------------


class PhaseTag(IntEnum):
    """Protocol phase carried in every frame header."""

    CAL = 1
    EXCH = 2
    EST = 3
    REC = 4
    CONF = 5
    AMP = 6
    ABORT = 7


class FrameMessage(BaseModel):
    """One authenticated classical-channel frame."""

    model_config = ConfigDict(frozen=True)

    version: int = Field(default=defaults.WIRE_VERSION, ge=0, le=255)
    phase: PhaseTag = Field(..., description="Protocol phase tag")
    shot_id: int = Field(..., ge=0, lt=2**64, description="Monotone shot identifier")
    payload: bytes = Field(..., description="Sequence number, JSON body and arrays")
    mac: bytes = Field(
        default=b"\x00" * defaults.MAC_TAG_BYTES, description="Poly1305 tag"
    )

    @field_validator("mac")
    @classmethod
    def _check_mac(cls, value: bytes) -> bytes:
        if len(value) != defaults.MAC_TAG_BYTES:
            raise ValueError(f"MAC must be {defaults.MAC_TAG_BYTES} bytes")
        return value


class ProtocolMessage(BaseModel):
    """Body of a frame. ``ARRAY_FIELDS`` travel as an npz blob."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    PHASE: ClassVar[PhaseTag]
    ARRAY_FIELDS: ClassVar[tuple[str, ...]] = ()

    kind: str


class StartShot(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.CAL
    kind: Literal["start_shot"] = "start_shot"
    v_mod: float = Field(..., gt=0.0)
    n_symbols: int = Field(..., ge=1)


class Ready(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.CAL
    kind: Literal["ready"] = "ready"
    ok: bool = True
    detail: str = ""


class SymbolsSent(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.EXCH
    kind: Literal["symbols_sent"] = "symbols_sent"
    n_symbols: int = Field(..., ge=1)


class SyncStatus(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.EXCH
    kind: Literal["sync_status"] = "sync_status"
    ok: bool
    detail: str = ""


class DisclosureRequest(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.EST
    kind: Literal["disclosure_request"] = "disclosure_request"
    seed: int = Field(..., ge=0)
    count: int = Field(..., ge=1)


class Disclosure(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.EST
    ARRAY_FIELDS: ClassVar[tuple[str, ...]] = ("x",)
    kind: Literal["disclosure"] = "disclosure"
    x: np.ndarray


class EstimationResult(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.EST
    kind: Literal["estimation_result"] = "estimation_result"
    proceed: bool
    skf: float | None = None
    snr: float | None = None
    detail: str = ""


class ReconciliationData(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.REC
    ARRAY_FIELDS: ClassVar[tuple[str, ...]] = ("alpha", "syndromes")
    kind: Literal["reconciliation_data"] = "reconciliation_data"
    code_id: str
    noise_var: float = Field(..., gt=0.0)
    alpha: np.ndarray
    syndromes: np.ndarray


class ReconciliationResult(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.REC
    ARRAY_FIELDS: ClassVar[tuple[str, ...]] = ("success",)
    kind: Literal["reconciliation_result"] = "reconciliation_result"
    success: np.ndarray
    iterations: int = 0


class ConfirmationDigest(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.CONF
    kind: Literal["confirmation_digest"] = "confirmation_digest"
    crc: int = Field(..., ge=0, lt=2**32)


class ConfirmationResult(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.CONF
    kind: Literal["confirmation_result"] = "confirmation_result"
    match: bool


class AmplificationSeed(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.AMP
    kind: Literal["amplification_seed"] = "amplification_seed"
    seed_hex: str
    out_len: int = Field(..., ge=0)


class AmplificationAck(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.AMP
    kind: Literal["amplification_ack"] = "amplification_ack"
    crc: int = Field(..., ge=0, lt=2**32)


class AmplificationResult(ProtocolMessage):
    """Bob's verdict on the final-key CRC; Alice deposits nothing without a match."""

    PHASE: ClassVar[PhaseTag] = PhaseTag.AMP
    kind: Literal["amplification_result"] = "amplification_result"
    match: bool


class Abort(ProtocolMessage):
    PHASE: ClassVar[PhaseTag] = PhaseTag.ABORT
    kind: Literal["abort"] = "abort"
    status: ShotStatus
    reason: str = ""


MESSAGE_TYPES: dict[str, type[ProtocolMessage]] = {
    cls.model_fields["kind"].default: cls
    for cls in (
        StartShot,
        Ready,
        SymbolsSent,
        SyncStatus,
        DisclosureRequest,
        Disclosure,
        EstimationResult,
        ReconciliationData,
        ReconciliationResult,
        ConfirmationDigest,
        ConfirmationResult,
        AmplificationSeed,
        AmplificationAck,
        AmplificationResult,
        Abort,
    )
}


# ---------------------------------------------------------------------------
# Shot accounting
# ---------------------------------------------------------------------------


class ShotRecord(BaseModel):
    """One protocol run as seen by one node; the unit of rate accounting."""

    shot_id: int = Field(..., ge=0)
    role: Role = Field(..., description="Node that produced the record")
    status: ShotStatus = Field(..., description="Outcome of the shot")
    v_mod: float = Field(..., ge=0.0, description="Modulation variance used (SNU)")
    next_v_mod: float | None = Field(default=None, description="V_mod chosen for the next shot")
    t_ch_hat: float | None = Field(default=None, description="Estimated T_ch")
    xi_ch_hat: float | None = Field(default=None, description="Raw estimated xi_ch (SNU)")
    t_rec: float | None = Field(default=None, description="Receiver transmittance")
    v_el: float | None = Field(default=None, description="Electronic noise (SNU)")
    snr: float | None = Field(default=None, description="Estimated per-quadrature SNR")
    i_ab: float | None = Field(default=None)
    eve_info: float | None = Field(default=None)
    skf: float | None = Field(default=None, description="SKF used for amplification")
    beta: float | None = Field(default=None, description="Reconciliation efficiency")
    fer: float | None = Field(default=None, description="Frame error rate of this shot")
    frames_total: int = Field(default=0, ge=0)
    frames_failed: int = Field(default=0, ge=0)
    key_bits: int = Field(default=0, ge=0, description="Final key bits produced")
    t_sym: float = Field(..., ge=0.0, description="Quantum exchange time (s)")
    t_total: float = Field(..., ge=0.0, description="Total shot time (s)")
    phase_durations: dict[str, float] = Field(default_factory=dict)
    wall_clock_start: float | None = Field(
        default=None, description="Unix time at shot start (live timing only)"
    )
    pilot_snr_db: float | None = Field(default=None)
    detail: str = Field(default="")

    @model_validator(mode="after")
    def _check_invariants(self) -> "ShotRecord":
        if (self.status == "success") != (self.key_bits > 0):
            raise ValueError("status 'success' must coincide with key_bits > 0")
        if self.t_sym > self.t_total * (1.0 + 1e-12):
            raise ValueError(f"t_sym {self.t_sym} exceeds t_total {self.t_total}")
        return self


class RateLedger(BaseModel):
    """Ordered shot records with the aggregates used by the rate metrics."""

    records: list[ShotRecord] = Field(default_factory=list)

    def append(self, record: ShotRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_key(self) -> int:
        return sum(r.key_bits for r in self.records if r.status == "success")

    @property
    def t_total(self) -> float:
        return float(math.fsum(r.t_total for r in self.records))

    @property
    def t_sym(self) -> float:
        return float(math.fsum(r.t_sym for r in self.records))

    def status_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(SHOT_STATUSES, 0)
        for record in self.records:
            counts[record.status] += 1
        return counts


class RateSummary(BaseModel):
    """Real-time and quantum-exchange key rates of a ledger."""

    shots: int = Field(..., ge=1)
    n_key: int = Field(..., ge=0, description="Total final key bits")
    t_total_s: float = Field(..., ge=0.0)
    t_sym_s: float = Field(..., ge=0.0)
    skr_rt: float = Field(..., ge=0.0, description="n_key / t (bit/s)")
    skr_qse: float = Field(..., ge=0.0, description="n_key / t_sym (bit/s)")
    skr_qse_alt: float | None = Field(
        default=None, description="mean successful SKF x f_sym (bit/s)"
    )
    p_suc: float = Field(..., ge=0.0, le=1.0)
    f_shot: float = Field(..., ge=0.0, description="Shots per second")
    overhead_x: float = Field(..., description="(t - t_sym) / t")
    overhead_ratio: float = Field(..., description="(t - t_sym) / t_sym")
    status_fractions: dict[str, float] = Field(default_factory=dict)


class ShotState(BaseModel):
    """LangGraph state for one shot of one node."""

    role: Role = Field(..., description="Node role")
    shot_id: int = Field(..., ge=0)
    v_mod: float = Field(..., gt=0.0, description="Modulation variance of this shot")
    status: ShotStatus | None = Field(default=None, description="Set once the shot ends")
    detail: str = Field(default="", description="Reason for a failure status")
    messages: Annotated[list[str], operator.add] = Field(
        default_factory=list, description="Processing messages, appended by each node"
    )
    errors: Annotated[list[str], operator.add] = Field(
        default_factory=list, description="Processing errors, appended by each node"
    )
    final_output: dict[str, Any] = Field(default_factory=dict, description="ShotRecord fields")


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------


class ChannelPoint(BaseModel):
    """One operating point of a campaign."""

    label: str = Field(..., description="Human-readable point name, e.g. '26km'")
    loss_db: float = Field(..., ge=0.0, le=30.0)
    fiber_km: float | None = Field(default=None, ge=0.0)
    xi_ch_snu: float = Field(default=0.0, ge=0.0)
    overrides: dict[str, Any] = Field(
        default_factory=dict, description="Per-point ProtocolConfig overrides"
    )


class CampaignSpec(BaseModel):
    """Points, budgets and outputs of a batch run."""

    points: list[ChannelPoint] = Field(..., min_length=1)
    shots_per_point: int | None = Field(default=10, ge=1)
    wall_time_s: float | None = Field(default=None, gt=0.0)
    overrides: dict[str, Any] = Field(default_factory=dict)
    out_dir: str = Field(default="workspace")
    parallel: bool = Field(default=False)
    preset: str | None = Field(default=None)

    @model_validator(mode="after")
    def _check_budget(self) -> "CampaignSpec":
        if self.shots_per_point is None and self.wall_time_s is None:
            raise ValueError("either shots_per_point or wall_time_s is required")
        return self


class PointSummary(BaseModel):
    """Per-point aggregates shaped like the fiber results table."""

    label: str
    l_ch_km: float | None = Field(default=None, description="Fiber length (km)")
    loss_db: float
    skr_rt_bps: float
    skr_qse_bps: float
    xi_ch_msnu: float | None = Field(default=None, description="Mean estimated xi_ch")
    xi_ch_std_msnu: float | None = Field(default=None)
    t_ch_pct: float | None = Field(default=None)
    xi_rec_msnu: float
    t_rec_pct: float
    v_mod_snu: float
    beta: float | None = None
    fer: float | None = None
    p_suc: float
    skf_bits: float | None = Field(default=None, description="Mean SKF of successful shots")
    symbol_snr_db: float | None = None
    n_key_bits: int
    shots: int


class CampaignSummary(BaseModel):
    """Summary of every point of a campaign."""

    preset: str | None = None
    master_seed: int
    points: list[PointSummary] = Field(default_factory=list)
    aborted: bool = False


# ---------------------------------------------------------------------------
# Published reference data
# ---------------------------------------------------------------------------


class ReferenceRow(BaseModel):
    """One published fiber operating point with its reported metrics."""

    model_config = ConfigDict(frozen=True)

    l_ch_km: float = Field(..., gt=0.0, description="Fiber length (km)")
    loss_db: float = Field(..., gt=0.0, description="Overall channel loss (dB)")
    skr_rt_bps: float = Field(..., ge=0.0, description="Real-time key rate (bit/s)")
    skr_qse_bps: float = Field(..., ge=0.0, description="Exchange-time key rate (bit/s)")
    skf_mbit: float = Field(..., ge=0.0, description="Secret key fraction (mbit/symbol)")
    skf_printed_digits: int = Field(
        ..., ge=0, description="Decimal places of the printed SKF (for rounding tolerance)"
    )
    xi_ch_msnu: float = Field(..., ge=0.0)
    t_ch_pct: float = Field(..., gt=0.0, le=100.0)
    xi_rec_msnu: float = Field(..., ge=0.0)
    t_rec_pct: float = Field(..., gt=0.0, le=100.0)
    v_mod_snu: float = Field(..., gt=0.0)
    beta_pct: float = Field(..., gt=0.0, le=100.0)
    fer_pct: float = Field(..., ge=0.0, lt=100.0)
    p_suc_pct: float = Field(..., ge=0.0, le=100.0)
    duration_min: float = Field(..., gt=0.0)
    shots: int = Field(..., ge=1)
    n_key_bits: float = Field(..., ge=0.0, description="Total key over the run (bits)")


class TableCheck(BaseModel):
    """SKF x f_sym against the printed exchange-time key rate for one row."""

    l_ch_km: float
    predicted_skr_qse_bps: float
    printed_skr_qse_bps: float
    relative_error: float
    tolerance: float
    passed: bool
    flagged: bool = Field(
        default=False, description="Printed numbers of this row are mutually inconsistent"
    )


class ClosureCheck(BaseModel):
    """SKF recomputed from a row's physical parameters against the printed SKF."""

    l_ch_km: float
    attack_model: AttackModel
    receiver_accounting: ReceiverAccounting
    disclosure_fraction: float
    skf_computed: float
    skf_printed: float
    ratio: float = Field(..., description="computed / printed")
    ratio_per_success: float = Field(..., description="computed / (printed / p_suc)")
    within_factor_two: bool


class ReferenceReport(BaseModel):
    """Every consistency check against the published operating points."""

    symbol_rate_hz: float
    table_checks: list[TableCheck] = Field(default_factory=list)
    closure_checks: list[ClosureCheck] = Field(default_factory=list)
    synthetic_rates: RateSummary | None = Field(
        default=None, description="Rates of the synthetic 26 km ledger"
    )
    published_skr_rt_bps: float | None = Field(default=None)
