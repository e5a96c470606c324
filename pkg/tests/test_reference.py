import sys
from pathlib import Path

import pytest

# Ensure src/ is importable in tests without editable install
PROJECT_ROOT = Path(__file__).parent.parent
SRC_PATH = PROJECT_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))


from cvqkd_rt import reference  # noqa: E402
from cvqkd_rt.rates import compute_rates  # noqa: E402


def test_fiber_rows() -> None:
    assert [row.l_ch_km for row in reference.FIBER_ROWS] == [26, 52, 77, 102]
    assert reference.fiber_row(52).v_mod_snu == 4.4
    with pytest.raises(KeyError):
        reference.fiber_row(40)


def test_table_arithmetic_flags_the_inconsistent_row() -> None:
    checks = {c.l_ch_km: c for c in reference.table_arithmetic_check()}
    assert checks[26].passed and checks[52].passed
    # last printed SKF digit dominates the tolerance
    assert checks[102].passed
    assert checks[102].tolerance > reference.TABLE_TOLERANCE
    assert not checks[77].passed
    assert checks[77].flagged
    assert checks[77].predicted_skr_qse_bps == pytest.approx(406_250.0)


def test_closure_at_26km_is_within_a_factor_of_two() -> None:
    check = reference.closure_check(reference.fiber_row(26))
    assert check.within_factor_two
    assert check.ratio == pytest.approx(1.546, abs=0.01)


def test_closure_at_52km_matches_per_success_skf() -> None:
    check = reference.closure_check(reference.fiber_row(52))
    assert 0.5 <= check.ratio_per_success <= 2.0
    assert check.ratio > check.ratio_per_success


def test_collective_closure_is_more_conservative() -> None:
    row = reference.fiber_row(26)
    individual = reference.closure_check(row, attack="individual")
    collective = reference.closure_check(row, attack="collective")
    assert collective.skf_computed < individual.skf_computed


def test_closure_needs_trusted_noise_accounting() -> None:
    row = reference.fiber_row(26)
    trusted = reference.closure_check(row)
    excluded = reference.closure_check(row, accounting="excluded")
    assert trusted.receiver_accounting == "trusted_noise"
    assert excluded.receiver_accounting == "excluded"
    assert excluded.skf_computed < trusted.skf_computed
    assert not excluded.within_factor_two


def test_synthetic_ledger_reproduces_the_published_rate() -> None:
    row = reference.fiber_row(26)
    ledger = reference.synthetic_ledger(row)
    assert len(ledger) == row.shots
    assert ledger.n_key == int(row.n_key_bits)
    rates = compute_rates(ledger)
    assert rates.p_suc == pytest.approx(row.p_suc_pct / 100.0, abs=0.002)
    assert rates.skr_rt == pytest.approx(684.1, rel=1e-3)
    assert rates.skr_rt == pytest.approx(row.skr_rt_bps, rel=0.1)


def test_reference_report() -> None:
    report = reference.reference_report()
    assert len(report.table_checks) == 4
    assert [c.l_ch_km for c in report.closure_checks] == [26, 52]
    assert report.synthetic_rates is not None
    assert report.published_skr_rt_bps == 721
