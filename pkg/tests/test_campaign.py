import math
import sys
from pathlib import Path
from typing import Any

import pytest

# Ensure src/ is importable in tests without editable install
PROJECT_ROOT = Path(__file__).parent.parent
SRC_PATH = PROJECT_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))


from cvqkd_rt import campaign  # noqa: E402
from cvqkd_rt.basemodels import (  # noqa: E402
    ChannelModel,
    ChannelPoint,
    ProtocolConfig,
    ReceiverModel,
    ShotRecord,
)
from cvqkd_rt.config import defaults  # noqa: E402
from cvqkd_rt.core import fiber_km_to_loss_db  # noqa: E402
from cvqkd_rt.errors import ConfigError, DomainError  # noqa: E402
from cvqkd_rt.link import sweep_xi_profile  # noqa: E402
from cvqkd_rt.reference import SWEEP_SNR_DECLINE_DB  # noqa: E402
from cvqkd_rt.security import plob_bound, snr  # noqa: E402
from cvqkd_rt.settings import build_config  # noqa: E402


def quick_config(tmp_path: Path) -> ProtocolConfig:
    data: dict[str, Any] = {
        "symbols_per_shot": 2**18,
        "v_mod_snu": 0.8,
        "adapt_v_mod": False,
        "disclosure_fraction": 0.5,
        "min_disclosed_pairs": 1000,
        "link": {"calibration_samples": 2**20},
        "reconciliation": {
            "code_length": 2048,
            "code_rate": 0.05,
            "code_seed": 7,
            "design_snr": 0.1,
            "cache_dir": str(tmp_path / "codes"),
        },
        "timing": {"mode": "synthetic", "message_timeout_s": 60.0},
    }
    return build_config(data)


QUIET_POINT = ChannelPoint(label="short", loss_db=0.5, xi_ch_snu=0.0)


# ---------------------------------------------------------------------------
# Points and specs
# ---------------------------------------------------------------------------


def test_parse_points() -> None:
    points = campaign.parse_points("26km, 10dB,52km,12.5dB")
    assert [p.label for p in points] == ["26km", "10dB", "52km", "12.5dB"]
    fiber, loss, long_fiber, long_loss = points
    assert fiber.fiber_km == 26
    assert fiber.loss_db == pytest.approx(fiber_km_to_loss_db(26))
    assert fiber.xi_ch_snu == defaults.FIBER_XI_PROFILE_SNU[26]
    assert fiber.overrides == {}
    assert loss.fiber_km is None
    assert loss.xi_ch_snu == pytest.approx(sweep_xi_profile(10.0))
    for point in (long_fiber, long_loss):
        assert point.overrides == {
            "reconciliation": {"code_rate": campaign.LONG_HAUL_CODE_RATE}
        }


def test_parse_points_unmeasured_span_uses_default_noise() -> None:
    (point,) = campaign.parse_points("30km", default_xi_snu=0.05)
    assert point.xi_ch_snu == 0.05


@pytest.mark.parametrize("text", ["26 miles", "km", "", " , "])
def test_parse_points_rejects(text: str) -> None:
    with pytest.raises(ConfigError):
        campaign.parse_points(text)


def test_presets() -> None:
    fiber = campaign.fiber_preset()
    assert [p.label for p in fiber] == ["26km", "52km", "77km", "102km"]
    assert fiber[0].loss_db == 5.76
    assert fiber[0].overrides == {}
    assert fiber[1].overrides["reconciliation"]["code_rate"] == campaign.LONG_HAUL_CODE_RATE

    sweep = campaign.sweep_preset()
    assert len(sweep) == defaults.SWEEP_POINTS
    assert sweep[0].loss_db == 0.0
    assert sweep[-1].loss_db == pytest.approx(defaults.SWEEP_MAX_LOSS_DB)
    assert sweep[0].xi_ch_snu == pytest.approx(0.036)


def test_build_spec() -> None:
    spec = campaign.build_spec(preset="fiber")
    assert spec.preset == "fiber"
    assert spec.shots_per_point == 10
    assert len(spec.points) == 4

    explicit = campaign.build_spec(preset="fiber", points="3dB", wall_time_s=100.0)
    assert explicit.preset is None
    assert [p.label for p in explicit.points] == ["3dB"]
    assert explicit.shots_per_point is None

    with pytest.raises(ConfigError, match="--points or --preset"):
        campaign.build_spec()
    with pytest.raises(ConfigError, match="unknown preset"):
        campaign.build_spec(preset="moon")


def test_point_config_precedence() -> None:
    base = build_config({})
    point = ChannelPoint(
        label="p",
        loss_db=12.0,
        xi_ch_snu=0.01,
        overrides={"reconciliation": {"code_rate": 0.015}, "v_mod_snu": 9.0},
    )
    config = campaign.point_config(base, point, {"reconciliation": {"code_rate": 0.02}})
    assert config.reconciliation.code_rate == 0.02
    assert config.v_mod_snu == 9.0
    assert config.link.channel.loss_db == 12.0
    assert config.link.channel.excess_noise_out == 0.01
    assert base.link.channel.loss_db != 12.0


# ---------------------------------------------------------------------------
# Running and reading back
# ---------------------------------------------------------------------------


def test_run_campaign_writes_ledgers_and_series(tmp_path: Path) -> None:
    out_dir = tmp_path / "run"
    spec = campaign.build_spec(points="1dB", shots=2, out_dir=str(out_dir))
    spec = spec.model_copy(update={"points": [QUIET_POINT]})
    summary = campaign.run_campaign(spec, quick_config(tmp_path))

    assert not summary.aborted
    (point,) = summary.points
    assert point.label == "short"
    assert point.shots == 2
    assert point.v_mod_snu == pytest.approx(0.8)
    for name in ("campaign.json", "summary.json", "summary.csv", "ledger_short.jsonl"):
        assert (out_dir / name).exists()

    loaded_spec, config, ledgers = campaign.load_campaign(out_dir)
    assert loaded_spec.points[0].label == "short"
    assert config.symbols_per_shot == 2**18
    (ledger,) = ledgers
    assert [r.shot_id for r in ledger.records] == [0, 1]

    timeline = campaign.emit_fig_data(ledgers, "timeline", out_dir)
    assert len(timeline) == 2
    assert timeline[-1]["time_s"] == pytest.approx(math.fsum(r.t_total for r in ledger.records))
    assert timeline[-1]["cumulative_key_bits"] == point.n_key_bits
    assert (out_dir / "timeline.csv").exists()
    assert (out_dir / "timeline.json").exists()

    (bounds,) = campaign.emit_fig_data(ledgers, "bounds")
    assert bounds["plob_channel"] == pytest.approx(plob_bound(10 ** -0.05))
    assert bounds["plob_total"] < bounds["plob_channel"]

    (sweep,) = campaign.emit_fig_data(ledgers, "sweep")
    assert sweep["loss_db"] == 0.5
    assert sweep["v_mod_snu"] == pytest.approx(0.8)

    with pytest.raises(ConfigError, match="unknown figure id"):
        campaign.emit_fig_data(ledgers, "histogram")


@pytest.mark.parametrize(
    "which, name",
    [("fig4", "timeline"), ("fig5", "sweep"), ("FIG6", "bounds"), ("sweep", "sweep")],
)
def test_figure_name_resolves_numbered_ids(which: str, name: str) -> None:
    assert campaign.figure_name(which) == name


def test_wall_time_budget_counts_ledger_time(tmp_path: Path) -> None:
    spec = campaign.build_spec(points="1dB", wall_time_s=1.0, out_dir=str(tmp_path / "wall"))
    spec = spec.model_copy(update={"points": [QUIET_POINT]})
    summary = campaign.run_campaign(spec, quick_config(tmp_path))
    # one synthetic shot already exceeds the budget
    assert summary.points[0].shots == 1


def test_load_campaign_requires_a_run(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="run a campaign first"):
        campaign.load_campaign(tmp_path)


def test_summarize_point_rejects_empty() -> None:
    with pytest.raises(DomainError):
        campaign.summarize_point(QUIET_POINT, [], build_config({}))


def test_sweep_series_symbol_snr_decline() -> None:
    receiver = ReceiverModel(transmittance=0.48, electronic_noise=0.141)
    schedule = {0.0: 4.2, 21.0: 10.0}
    ledgers = []
    for loss, v_mod in schedule.items():
        point = ChannelPoint(label=f"{loss:g}dB", loss_db=loss, xi_ch_snu=sweep_xi_profile(loss))
        channel = ChannelModel(loss_db=loss, excess_noise_out=point.xi_ch_snu)
        record = ShotRecord(
            shot_id=0,
            role="bob",
            status="fail_param_est",
            v_mod=v_mod,
            snr=snr(channel, receiver, v_mod),
            t_sym=0.01,
            t_total=10.0,
        )
        ledgers.append(campaign.PointLedger(point, [record]))

    first, last = campaign.emit_fig_data(ledgers, "sweep")
    decline = first["symbol_snr_db"] - last["symbol_snr_db"]
    normalized = first["snr_norm_db"] - last["snr_norm_db"]
    # constant-V_mod decline is set by loss and the excess-noise profile alone
    assert normalized == pytest.approx(20.98, abs=0.05)
    assert decline == pytest.approx(normalized - 10 * math.log10(10.0 / 4.2))
    assert decline == pytest.approx(SWEEP_SNR_DECLINE_DB, abs=1.0)
