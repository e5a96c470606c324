#!/usr/bin/env python

"""
Rate accounting over a shot ledger and the per-shot key-length policy.

SKR_rt = n_key / t counts every second the system ran; SKR_qse = n_key / t_sym
counts only quantum-exchange time. Their ratio is t / t_sym exactly.
"""

import logging
import math

from cvqkd_rt.basemodels import RateLedger, RateSummary, SecurityReport
from cvqkd_rt.config import defaults
from cvqkd_rt.errors import DomainError
from cvqkd_rt.postprocessing import secret_key_length

logger = logging.getLogger(__name__)


def compute_rates(
    ledger: RateLedger, symbol_rate_hz: float = defaults.SYMBOL_RATE_HZ
) -> RateSummary:
    """Aggregate rates of a non-empty ledger."""
    shots = len(ledger)
    if shots == 0:
        raise DomainError("cannot compute rates of an empty ledger")
    n_key = ledger.n_key
    t_total = ledger.t_total
    t_sym = ledger.t_sym
    counts = ledger.status_counts()

    skfs = [r.skf for r in ledger.records if r.status == "success" and r.skf is not None]
    return RateSummary(
        shots=shots,
        n_key=n_key,
        t_total_s=t_total,
        t_sym_s=t_sym,
        skr_rt=n_key / t_total if t_total > 0 else 0.0,
        skr_qse=n_key / t_sym if t_sym > 0 else 0.0,
        skr_qse_alt=math.fsum(skfs) / len(skfs) * symbol_rate_hz if skfs else None,
        p_suc=counts["success"] / shots,
        f_shot=shots / t_total if t_total > 0 else 0.0,
        overhead_x=(t_total - t_sym) / t_total if t_total > 0 else 0.0,
        overhead_ratio=(t_total - t_sym) / t_sym if t_sym > 0 else 0.0,
        status_fractions={status: count / shots for status, count in counts.items()},
    )


def key_length_policy(report: SecurityReport, n_symbols: int, reconciled_len: int) -> int:
    """l = floor(SKF * n_symbols), capped at the reconciled length."""
    if not report.skf > 0.0:
        raise DomainError(f"no key can be extracted with SKF = {report.skf}")
    return secret_key_length(report.skf, n_symbols, reconciled_len)


class FerTracker:
    """Exponentially weighted FER used before the current shot has decoded."""

    def __init__(
        self,
        prior: float = defaults.FER_PRIOR,
        weight: float = defaults.FER_EWMA_WEIGHT,
    ):
        if not 0.0 <= prior < 1.0:
            raise DomainError("FER prior must lie in [0, 1)")
        if not (math.isfinite(weight) and 0.0 < weight <= 1.0):
            raise DomainError(f"FER EWMA weight must lie in (0, 1], got {weight}")
        self.value = prior
        self.weight = weight

    def update(self, fer: float) -> float:
        self.value = (1.0 - self.weight) * self.value + self.weight * fer
        return self.value
