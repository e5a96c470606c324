#!/usr/bin/env python

"""
Security calculus: parameter estimation, mutual information, Eve's information
under Gaussian individual or collective attacks, the secret key fraction and the
modulation-variance optimizer.

Eve's information is a function of the channel (T_ch, xi) and V_mod: Bob's
receiver is excluded unless a caller opts into trusted-noise accounting.

Conventions: V = V_mod + 1, T = T_ch, eta = T_rec, xi is referred to the channel
output (xi_in = xi_out / T), all variances in SNU per quadrature.
"""

import logging
import math
from collections.abc import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from cvqkd_rt.basemodels import (
    AttackModel,
    ChannelEstimate,
    ChannelModel,
    ReceiverAccounting,
    ReceiverModel,
    SecurityReport,
)
from cvqkd_rt.config import defaults
from cvqkd_rt.errors import DomainError, NonPhysicalCovarianceError, ParameterEstimationError

logger = logging.getLogger(__name__)

_EIG_TOL = 1e-9


def g_entropy(x: float) -> float:
    """g(x) = (x+1) log2(x+1) - x log2(x), the thermal-state entropy."""
    if x <= 0.0:
        return 0.0
    return (x + 1.0) * math.log2(x + 1.0) - x * math.log2(x)


def symplectic_entropy(nu: float) -> float:
    """G(nu) = g((nu - 1) / 2) for a symplectic eigenvalue nu >= 1."""
    if nu < 1.0 - _EIG_TOL:
        raise NonPhysicalCovarianceError(f"symplectic eigenvalue {nu:.12g} < 1")
    return g_entropy(max(nu - 1.0, 0.0) / 2.0)


def _pair_from_invariants(total: float, product: float, what: str) -> tuple[float, float]:
    """Eigenvalues nu1 >= nu2 from nu1^2 + nu2^2 = total and nu1^2 nu2^2 = product."""
    disc = total * total - 4.0 * product
    if disc < -1e-9 * max(1.0, total * total):
        raise NonPhysicalCovarianceError(f"{what}: negative discriminant {disc:.6g}")
    root = math.sqrt(max(disc, 0.0))
    hi = math.sqrt(max((total + root) / 2.0, 0.0))
    lo = math.sqrt(max((total - root) / 2.0, 0.0))
    return hi, lo


def _check_inputs(t_ch: float, xi_out: float, t_rec: float, v_el: float, v_mod: float) -> None:
    if not 0.0 < t_ch <= 1.0:
        raise DomainError(f"T_ch must lie in (0, 1], got {t_ch}")
    if not 0.0 < t_rec <= 1.0:
        raise DomainError(f"T_rec must lie in (0, 1], got {t_rec}")
    if xi_out < 0.0 or v_el < 0.0 or v_mod < 0.0:
        raise DomainError("variances must be non-negative")


# ---------------------------------------------------------------------------
# Mutual information
# ---------------------------------------------------------------------------


def snr(ch: ChannelModel, rx: ReceiverModel, v_mod: float) -> float:
    """Per-quadrature SNR at Bob's detector."""
    signal = ch.transmittance * rx.transmittance / 2.0 * v_mod
    return signal / (1.0 + rx.electronic_noise + rx.transmittance / 2.0 * ch.excess_noise_out)


def mutual_information(ch: ChannelModel, rx: ReceiverModel, v_mod: float) -> float:
    """I_AB = log2(1 + SNR), both quadratures measured."""
    if v_mod < 0:
        raise DomainError(f"v_mod must be non-negative, got {v_mod}")
    return float(math.log2(1.0 + snr(ch, rx, v_mod)))


def v_mod_for_snr(ch: ChannelModel, rx: ReceiverModel, target_snr: float) -> float:
    """Modulation variance that produces ``target_snr`` on this link."""
    noise = 1.0 + rx.electronic_noise + rx.transmittance / 2.0 * ch.excess_noise_out
    return target_snr * noise / (ch.transmittance * rx.transmittance / 2.0)


# ---------------------------------------------------------------------------
# Eve's information
# ---------------------------------------------------------------------------


def eve_state_symplectic(t_ch: float, xi_out: float, v_mod: float) -> tuple[float, float]:
    """Symplectic eigenvalues of the untrusted-channel state (A, B): S(E) = S(AB)."""
    big_v = v_mod + 1.0
    chi_line = 1.0 / t_ch - 1.0 + xi_out / t_ch
    a = big_v**2 * (1.0 - 2.0 * t_ch) + 2.0 * t_ch + t_ch**2 * (big_v + chi_line) ** 2
    b = t_ch**2 * (big_v * chi_line + 1.0) ** 2
    return _pair_from_invariants(a, b, "two-mode state")


def eve_state_entropy(ch: ChannelModel, v_mod: float) -> float:
    """S(E), independent of the trusted receiver."""
    nu1, nu2 = eve_state_symplectic(ch.transmittance, ch.excess_noise_out, v_mod)
    return symplectic_entropy(nu1) + symplectic_entropy(nu2)


def conditional_output_variance(ch: ChannelModel, v_mod: float) -> float:
    """V_{B|E}: variance of the channel output given Eve's entangling-cloner modes."""
    big_v = v_mod + 1.0
    t = ch.transmittance
    return 1.0 / (t / big_v + 1.0 - t + ch.excess_noise_out)


def holevo_bound(
    t_ch: float, xi_out: float, v_mod: float, t_rec: float = 1.0, v_el: float = 0.0
) -> float:
    """chi_BE for reverse reconciliation with heterodyne detection.

    With the default ``t_rec`` and ``v_el`` Bob's heterodyne is ideal and the bound
    depends on (T_ch, xi_out, V_mod) only. Other values model a lossy, noisy
    receiver as trusted noise that Eve cannot purify.
    """
    _check_inputs(t_ch, xi_out, t_rec, v_el, v_mod)
    big_v = v_mod + 1.0
    chi_line = 1.0 / t_ch - 1.0 + xi_out / t_ch
    chi_het = (1.0 + (1.0 - t_rec) + 2.0 * v_el) / t_rec
    chi_tot = chi_line + chi_het / t_ch

    a = big_v**2 * (1.0 - 2.0 * t_ch) + 2.0 * t_ch + t_ch**2 * (big_v + chi_line) ** 2
    b = t_ch**2 * (big_v * chi_line + 1.0) ** 2
    sqrt_b = math.sqrt(b)
    denom = (t_ch * (big_v + chi_tot)) ** 2
    c = (
        a * chi_het**2
        + b
        + 1.0
        + 2.0 * chi_het * (big_v * sqrt_b + t_ch * (big_v + chi_line))
        + 2.0 * t_ch * (big_v**2 - 1.0)
    ) / denom
    d = (big_v + sqrt_b * chi_het) ** 2 / denom

    nu1, nu2 = _pair_from_invariants(a, b, "two-mode state")
    nu3, nu4 = _pair_from_invariants(c, d, "conditional state")
    chi = (
        symplectic_entropy(nu1)
        + symplectic_entropy(nu2)
        - symplectic_entropy(nu3)
        - symplectic_entropy(nu4)
    )
    return float(max(chi, 0.0))


def individual_information(
    t_ch: float, xi_out: float, v_mod: float, t_rec: float = 1.0, v_el: float = 0.0
) -> float:
    """I_EB for the optimal Gaussian individual attack on both measured quadratures.

    Computed from V_B and V_{B|E}; ``t_rec`` and ``v_el`` default to an ideal heterodyne.
    """
    _check_inputs(t_ch, xi_out, t_rec, v_el, v_mod)
    big_v = v_mod + 1.0
    b = t_ch * v_mod + 1.0 + xi_out
    v_b_given_e = 1.0 / (t_ch / big_v + 1.0 - t_ch + xi_out)
    v_y = t_rec / 2.0 * (b - 1.0) + 1.0 + v_el
    v_y_given_e = t_rec / 2.0 * (v_b_given_e - 1.0) + 1.0 + v_el
    if v_y_given_e <= 0.0:
        raise NonPhysicalCovarianceError("conditional variance of Bob's data is not positive")
    return float(max(math.log2(v_y / v_y_given_e), 0.0))


def eve_information(
    ch: ChannelModel,
    rx: ReceiverModel,
    v_mod: float,
    attack: AttackModel = "individual",
    receiver: ReceiverAccounting = "excluded",
) -> float:
    """Eve's information per symbol.

    ``receiver="excluded"`` ignores ``rx``: the bound is a function of the channel
    and V_mod alone. ``"trusted_noise"`` lets Bob's T_rec and v_el enter as noise
    Eve does not control.
    """
    if receiver == "excluded":
        t_rec, v_el = 1.0, 0.0
    elif receiver == "trusted_noise":
        t_rec, v_el = rx.transmittance, rx.electronic_noise
    else:
        raise DomainError(f"unknown receiver accounting '{receiver}'")
    args = (ch.transmittance, ch.excess_noise_out, v_mod, t_rec, v_el)
    if attack == "collective":
        return holevo_bound(*args)
    if attack == "individual":
        return individual_information(*args)
    raise DomainError(f"unknown attack model '{attack}'")


# ---------------------------------------------------------------------------
# Key fraction and bounds
# ---------------------------------------------------------------------------


def secret_key_fraction(
    i_ab: float, eve_info: float, beta: float, fer: float, nu: float
) -> float:
    """SKF = (1 - nu)(1 - FER)(beta I_AB - eve_info); negative values are returned as-is."""
    if not 0.0 < beta <= 1.0:
        raise DomainError(f"beta must lie in (0, 1], got {beta}")
    if not 0.0 <= fer < 1.0:
        raise DomainError(f"FER must lie in [0, 1), got {fer}")
    if not 0.0 < nu < 1.0:
        raise DomainError(f"disclosure fraction must lie in (0, 1), got {nu}")
    return (1.0 - nu) * (1.0 - fer) * (beta * i_ab - eve_info)


def plob_bound(transmittance: float) -> float:
    """-log2(1 - T): repeaterless capacity of a pure-loss channel."""
    if transmittance == 1.0:
        raise DomainError("PLOB bound diverges at T = 1")
    if not 0.0 <= transmittance < 1.0:
        raise DomainError(f"transmittance must lie in [0, 1), got {transmittance}")
    return float(-math.log2(1.0 - transmittance))


def security_report(
    ch: ChannelModel,
    rx: ReceiverModel,
    v_mod: float,
    beta: float,
    fer: float,
    nu: float,
    attack: AttackModel = "individual",
    receiver: ReceiverAccounting = "excluded",
) -> SecurityReport:
    i_ab = mutual_information(ch, rx, v_mod)
    eve = eve_information(ch, rx, v_mod, attack, receiver)
    return SecurityReport(
        i_ab=i_ab,
        eve_info=eve,
        skf=secret_key_fraction(i_ab, eve, beta, fer, nu),
        beta=beta,
        fer=fer,
        disclosure_fraction=nu,
        attack_model=attack,
        receiver_accounting=receiver,
        t_ch=ch.transmittance,
        xi_ch=ch.excess_noise_out,
        t_rec=rx.transmittance,
        v_el=rx.electronic_noise,
        v_mod=v_mod,
        snr=snr(ch, rx, v_mod),
    )


# ---------------------------------------------------------------------------
# Parameter estimation
# ---------------------------------------------------------------------------


def estimate_channel(
    x: np.ndarray,
    y: np.ndarray,
    v_mod: float,
    rx: ReceiverModel,
    min_pairs: int = defaults.MIN_DISCLOSED_PAIRS,
) -> ChannelEstimate:
    """Estimate T_ch and xi_ch from disclosed real pairs (x, y).

    t_hat = sum(xy) / sum(x^2), T_ch = 2 t_hat^2 / T_rec, and xi_ch solves
    Var(y - t_hat x) = 1 + v_el + (T_rec / 2) xi_ch. Standard errors are the
    usual asymptotic ones for a linear Gaussian model.
    """
    if rx.transmittance <= 0.0:
        raise DomainError("receiver transmittance must be positive")
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ParameterEstimationError("x and y must have the same number of values")
    m = x.size
    if m < min_pairs:
        raise ParameterEstimationError(f"{m} disclosed pairs, at least {min_pairs} required")

    sxx = float(np.dot(x, x))
    sxy = float(np.dot(x, y))
    half_rec = rx.transmittance / 2.0
    if sxx > 0.0:
        t_hat = sxy / sxx
        residual = y - t_hat * x
        s_hat = float(np.dot(residual, residual)) / m
        t_std = math.sqrt(s_hat / sxx)
    else:
        t_hat = 0.0
        s_hat = float(np.dot(y, y)) / m
        t_std = math.inf

    t_ch_hat = 2.0 * t_hat**2 / rx.transmittance
    t_ch_std = 4.0 * abs(t_hat) * t_std / rx.transmittance if math.isfinite(t_std) else math.inf
    xi_hat = (s_hat - 1.0 - rx.electronic_noise) / half_rec
    xi_std = s_hat * math.sqrt(2.0 / m) / half_rec

    usable = (
        sxx > 0.0
        and math.isfinite(t_ch_std)
        and 0.0 <= t_ch_hat <= 1.05
        and t_ch_std < 0.5 * t_ch_hat
    )
    flagged = xi_hat < 0.0
    if flagged:
        logger.debug("Raw excess-noise estimate %.6g SNU is below zero", xi_hat)
    return ChannelEstimate(
        n_pairs=m,
        t_hat=t_hat,
        t_hat_std=t_std,
        t_ch_hat=t_ch_hat,
        t_ch_std=t_ch_std,
        xi_ch_hat=xi_hat,
        xi_ch_std=xi_std,
        noise_var_hat=s_hat,
        v_mod_hat=sxx / m,
        usable=usable,
        flagged=flagged,
    )


def channel_from_estimate(estimate: ChannelEstimate) -> ChannelModel:
    """Channel used for key-rate evaluation; negative xi is clamped to zero."""
    if not estimate.usable:
        raise ParameterEstimationError("channel estimate is flagged unusable")
    if estimate.flagged:
        logger.warning(
            "Excess-noise estimate %.3f mSNU clamped to 0 for key-rate evaluation",
            estimate.xi_ch_hat * 1e3,
        )
    return estimate.channel()


# ---------------------------------------------------------------------------
# Modulation variance optimizer
# ---------------------------------------------------------------------------


def optimize_vmod(
    channel: ChannelModel | ChannelEstimate,
    rx: ReceiverModel,
    beta: float,
    fer: float,
    nu: float,
    bounds: tuple[float, float] = defaults.V_MOD_BOUNDS_SNU,
    attack: AttackModel = "individual",
    code_rate: float | None = None,
    min_snr: float | None = None,
    receiver: ReceiverAccounting = "excluded",
) -> float | None:
    """V_mod maximizing the SKF within ``bounds``, or None if SKF <= 0 everywhere.

    With ``code_rate`` set, the efficiency follows the code: beta(V) = 2R / I_AB(V),
    and the search window starts where the SNR reaches ``min_snr`` (default: the
    capacity point of the code).
    """
    lo, hi = bounds
    if not 0.0 < lo < hi:
        raise DomainError(f"bounds must satisfy 0 < lo < hi, got {bounds}")
    ch = channel_from_estimate(channel) if isinstance(channel, ChannelEstimate) else channel

    objective: Callable[[float], float]
    if code_rate is None:

        def objective(v: float) -> float:
            return secret_key_fraction(
                mutual_information(ch, rx, v),
                eve_information(ch, rx, v, attack, receiver),
                beta,
                fer,
                nu,
            )

    else:
        floor_snr = min_snr if min_snr is not None else 2.0 ** (2.0 * code_rate) - 1.0
        lo = max(lo, v_mod_for_snr(ch, rx, floor_snr))
        if lo >= hi:
            return None

        def objective(v: float) -> float:
            eve = eve_information(ch, rx, v, attack, receiver)
            return (1.0 - nu) * (1.0 - fer) * (2.0 * code_rate - eve)

    result = minimize_scalar(
        lambda v: -objective(v),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-7 * hi},
    )
    candidates = [(objective(lo), lo), (objective(hi), hi)]
    if result.success:
        candidates.append((-float(result.fun), float(result.x)))
    best_value = max(value for value, _ in candidates)
    if best_value <= 0.0:
        return None
    tol = 1e-12 * max(1.0, abs(best_value))
    return float(min(v for value, v in candidates if value >= best_value - tol))
