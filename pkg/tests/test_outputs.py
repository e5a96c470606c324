import sys
from pathlib import Path

import pytest

# Ensure src/ is importable in tests without editable install
PROJECT_ROOT = Path(__file__).parent.parent
SRC_PATH = PROJECT_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))


from cvqkd_rt.basemodels import (  # noqa: E402
    CampaignSummary,
    ChannelModel,
    PointSummary,
    ReceiverModel,
)
from cvqkd_rt.outputs import (  # noqa: E402
    check_jinja2_availability,
    get_template_directory,
    render_basemodel_to_adoc,
)
from cvqkd_rt.reference import reference_report  # noqa: E402
from cvqkd_rt.security import security_report  # noqa: E402

pytestmark = pytest.mark.skipif(not check_jinja2_availability(), reason="jinja2 not installed")

RECEIVER = ReceiverModel(transmittance=0.48, electronic_noise=0.141)


def test_check_jinja2_availability_imports() -> None:
    # Should not raise on import, returns a boolean
    assert isinstance(check_jinja2_availability(), bool)


def test_template_directory_has_every_template() -> None:
    names = {p.name for p in get_template_directory().glob("*.adoc.j2")}
    assert {"CampaignSummary.adoc.j2", "SecurityReport.adoc.j2", "ReferenceReport.adoc.j2"} <= names


def test_security_report_adoc() -> None:
    report = security_report(ChannelModel(loss_db=1.0, excess_noise_out=0.005), RECEIVER, 4.2, 0.95, 0.1, 0.1)
    text = render_basemodel_to_adoc(report)
    assert text.startswith("= Security report")
    assert "Attack model:: individual" in text
    assert "Receiver in Eve's bound:: excluded" in text
    assert "No key can be extracted" not in text


def test_security_report_adoc_without_key() -> None:
    report = security_report(ChannelModel(loss_db=20.0, excess_noise_out=0.1), RECEIVER, 4.0, 0.95, 0.1, 0.1)
    assert report.skf < 0
    assert "No key can be extracted" in render_basemodel_to_adoc(report)


def test_reference_report_adoc() -> None:
    text = render_basemodel_to_adoc(reference_report())
    assert "flagged" in text
    assert "Synthetic 26 km ledger" in text


def test_campaign_summary_adoc_handles_missing_values() -> None:
    summary = CampaignSummary(
        preset="sweep",
        master_seed=3,
        aborted=True,
        points=[
            PointSummary(
                label="10dB",
                loss_db=10.0,
                skr_rt_bps=0.0,
                skr_qse_bps=0.0,
                xi_rec_msnu=141.0,
                t_rec_pct=48.0,
                v_mod_snu=4.2,
                p_suc=0.0,
                n_key_bits=0,
                shots=3,
            )
        ],
    )
    text = render_basemodel_to_adoc(summary)
    assert text.startswith("= Campaign summary (sweep)")
    assert "WARNING: The campaign was interrupted" in text
    assert "n/a" in text
    assert "*10dB*: 0 key bits over 3 shots" in text


def test_missing_template() -> None:
    report = reference_report()
    with pytest.raises(FileNotFoundError):
        render_basemodel_to_adoc(report, template_name="Nope.adoc.j2")
