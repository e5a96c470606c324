import json
import sys
from pathlib import Path

import pytest

# Ensure src/ is importable in tests without editable install
PROJECT_ROOT = Path(__file__).parent.parent
SRC_PATH = PROJECT_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))


from cvqkd_rt import __version__  # noqa: E402
from cvqkd_rt.cli import (  # noqa: E402
    EXIT_CONFIG,
    EXIT_FAILURE,
    EXIT_OK,
    parse_arguments,
    run_cli,
)


@pytest.fixture(autouse=True)
def isolated(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    """No config discovery from the real project or home directory."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("HOME", str(tmp_path))
    return tmp_path


def test_version(capsys: pytest.CaptureFixture[str]) -> None:
    assert run_cli(["-V"]) == EXIT_OK
    assert __version__ in capsys.readouterr().out


def test_no_command() -> None:
    assert run_cli([]) == EXIT_FAILURE


def test_parse_arguments_defaults() -> None:
    args = parse_arguments(["run", "--preset", "fiber"])
    assert args.command == "run"
    assert args.output == "verbose"
    assert args.overrides == []
    assert args.emit is None


def test_security_json(capsys: pytest.CaptureFixture[str]) -> None:
    code = run_cli(
        [
            "security",
            "--loss-db", "1.0",
            "--xi-ch", "0.005",
            "--v-mod", "4.2",
            "--beta", "0.95",
            "--fer", "0.1",
            "--output", "json",
        ]
    )
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["attack_model"] == "individual"
    assert report["receiver_accounting"] == "excluded"
    assert report["i_ab"] == pytest.approx(0.76638, abs=2e-4)
    assert report["eve_info"] == pytest.approx(0.50966, abs=2e-4)
    assert report["skf"] > 0


def test_security_collective_via_set(capsys: pytest.CaptureFixture[str]) -> None:
    code = run_cli(
        [
            "security",
            "--set", "attack_model=collective",
            "--set", "link.channel.loss_db=5.2",
            "--set", "link.channel.excess_noise_out=0.022",
            "--v-mod", "4.2",
            "--output", "json",
        ]
    )
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["attack_model"] == "collective"
    assert report["eve_info"] == pytest.approx(0.60787, abs=2e-4)


def test_security_trusted_noise_accounting(capsys: pytest.CaptureFixture[str]) -> None:
    code = run_cli(
        [
            "security",
            "--set", "attack_model=collective",
            "--set", "receiver_accounting=trusted_noise",
            "--set", "link.channel.loss_db=5.2",
            "--set", "link.channel.excess_noise_out=0.022",
            "--v-mod", "4.2",
            "--output", "json",
        ]
    )
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["receiver_accounting"] == "trusted_noise"
    assert report["eve_info"] == pytest.approx(0.29403, abs=2e-4)


def test_security_adoc(capsys: pytest.CaptureFixture[str]) -> None:
    assert run_cli(["security", "--output", "adoc"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("= Security report")


@pytest.mark.parametrize(
    "argv",
    [
        ["security", "--set", "novalue"],
        ["security", "--set", "link.channel.loss_db=-1"],
        ["security", "--config", "missing.yaml"],
    ],
)
def test_configuration_errors(argv: list[str]) -> None:
    assert run_cli([*argv, "--output", "json"]) == EXIT_CONFIG


def test_config_file_is_discovered(isolated: Path, capsys: pytest.CaptureFixture[str]) -> None:
    (isolated / "config").mkdir()
    (isolated / "config" / "cvqkd-rt.yaml").write_text("v_mod_snu: 2.5\n", encoding="utf-8")
    assert run_cli(["security", "--output", "json"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["v_mod"] == 2.5


def test_reference_json(capsys: pytest.CaptureFixture[str]) -> None:
    assert run_cli(["reference", "--output", "json"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    flagged = [c["l_ch_km"] for c in report["table_checks"] if c["flagged"]]
    assert flagged == [77]
    assert report["synthetic_rates"]["shots"] == 624


def test_reference_verbose_saves_report(isolated: Path) -> None:
    assert run_cli(["reference"]) == EXIT_OK
    assert list((isolated / "workspace").glob("*reference*.json"))


def test_emit_without_campaign() -> None:
    assert run_cli(["emit", "--out", "nowhere", "--emit", "table", "--output", "json"]) == EXIT_CONFIG


def test_run_then_emit(isolated: Path, capsys: pytest.CaptureFixture[str]) -> None:
    settings = [
        "symbols_per_shot=262144",
        "v_mod_snu=0.8",
        "adapt_v_mod=false",
        "disclosure_fraction=0.5",
        "min_disclosed_pairs=1000",
        "link.calibration_samples=1048576",
        "reconciliation.code_length=2048",
        "reconciliation.code_seed=7",
        "reconciliation.design_snr=0.1",
        f"reconciliation.cache_dir={isolated / 'codes'}",
    ]
    argv = ["run", "--points", "0.5dB", "--shots", "1", "--timing", "synthetic"]
    for item in settings:
        argv += ["--set", item]
    out_dir = isolated / "campaign"
    assert run_cli([*argv, "--out", str(out_dir), "--output", "json"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["points"][0]["label"] == "0.5dB"
    assert summary["points"][0]["shots"] == 1

    code = run_cli(
        ["emit", "--out", str(out_dir), "--emit", "table", "--emit", "timeline", "--output", "json"]
    )
    assert code == EXIT_OK
    assert json.loads(capsys.readouterr().out)["points"][0]["shots"] == 1
    assert (out_dir / "timeline.csv").exists()

    code = run_cli(["emit", "--out", str(out_dir), "--emit", "fig5", "--emit", "fig6", "--output", "json"])
    assert code == EXIT_OK
    capsys.readouterr()
    assert (out_dir / "sweep.csv").exists()
    assert (out_dir / "bounds.json").exists()


@pytest.mark.parametrize("alias", ["fig4", "fig5", "fig6"])
def test_numbered_figure_ids_are_accepted(alias: str) -> None:
    args = parse_arguments(["emit", "--emit", alias])
    assert args.emit == [alias]
