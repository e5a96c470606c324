#!/usr/bin/env python

"""
Built-in defaults for cvqkd-rt.

Physical quantities carry their unit in the name. Variances are in shot-noise
units (SNU): the vacuum quadrature variance at the detection plane is 1.
"""

SCHEMA_VERSION = 1

# Shot geometry
SYMBOLS_PER_SHOT = 2**21
SYMBOL_RATE_HZ = 156.25e6
V_MOD_SNU = 4.2
V_MOD_BOUNDS_SNU = (0.5, 40.0)
DISCLOSURE_FRACTION = 0.1
MIN_DISCLOSED_PAIRS = 10_000
ATTACK_MODEL = "individual"
RECEIVER_ACCOUNTING = "excluded"

# Link
FIBER_ATTENUATION_DB_PER_KM = 0.2
CHANNEL_LOSS_DB = 5.76
XI_CH_SNU = 0.022
T_REC = 0.48
V_EL_SNU = 0.141
ADC_SHOT_NOISE_VARIANCE = 1.0
CALIBRATION_SAMPLES = 1 << 16

# Reconciliation
MDR_DIMENSION = 8
CODE_LENGTH = 2**15
CODE_RATE = 0.05
CODE_SEED = 20_151_021
CODE_DESIGN_MARGIN_DB = 0.7
CODE_LDGM_DEGREE = 2
CODE_CORE_DEGREE2_FRACTION = 0.6
LDPC_MAX_ITER = 200
LDPC_BATCH_FRAMES = 16
SNR_MARGIN = 0.02
FER_PRIOR = 0.1
FER_EWMA_WEIGHT = 0.2

# Authentication
MAC_TAG_BYTES = 16
MAC_KEY_BYTES = 32
EPOCH_SLOTS = 16
EPOCH_KEY_BYTES = MAC_KEY_BYTES * EPOCH_SLOTS
AUTH_POOL_TARGET_EPOCHS = 4
DEFAULT_PSK_HEX = "5a" * 32
WIRE_VERSION = 1

# Transport
TCP_HOST = "127.0.0.1"
TCP_PORT = 47100
QUANTUM_TCP_PORT = 47101
MESSAGE_TIMEOUT_S = 120.0

# Synthetic per-phase durations (seconds per shot)
SYNTHETIC_TIMING_S = {
    "calibration": 6.0,
    "exchange_overhead": 0.3,
    "estimation": 2.0,
    "reconciliation": 50.0,
    "confirmation": 0.5,
    "amplification": 7.5,
}

# Waveform mode
SAMPLES_PER_SYMBOL = 4
ROLLOFF = 0.2
RRC_SPAN_SYMBOLS = 64
WAVEFORM_SYMBOLS = 2**17
PILOT_OFFSET_FRACTION = 0.375
PILOT_POWER_DB = 20.0
PILOT_BANDWIDTH_HZ = 1.0e6
LOCK_THRESHOLD_DB = 6.0
EQUALIZER_TAPS = 64
PRE_EMPHASIS_FLOOR = 1e-3
LASER_LINEWIDTH_HZ = 28e3

# Cache
CACHE_DIR = "~/.cvqkd-rt/cache"

# Reference operating points: fiber length (km) -> output-referred excess noise (SNU)
FIBER_XI_PROFILE_SNU = {26: 0.0220, 52: 0.0124, 77: 0.0037, 102: 0.0008}

# Loss sweep excess-noise knots: (loss_db, xi_ch_snu)
SWEEP_XI_KNOTS = ((0.0, 0.036), (12.0, 0.010), (21.0, 0.010))
SWEEP_POINTS = 43
SWEEP_MAX_LOSS_DB = 21.0
