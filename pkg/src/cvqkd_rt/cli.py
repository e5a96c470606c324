#!/usr/bin/env python

"""
CLI entry point for cvqkd-rt that works properly when installed.
"""

import argparse
import asyncio
import json
import sys
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ValidationError
from rich.console import Console
from rich.table import Table

# Try to import from the installed package structure
try:
    from cvqkd_rt import __version__
    from cvqkd_rt.basemodels import CampaignSummary, ChannelModel, ProtocolConfig
    from cvqkd_rt.campaign import (
        FIGURE_ALIASES,
        FIGURE_IDS,
        PRESETS,
        build_spec,
        emit_fig_data,
        figure_name,
        load_campaign,
        point_config,
        run_campaign,
        summarize_point,
    )
    from cvqkd_rt.errors import (
        AuthenticationError,
        CampaignAbortedError,
        ConfigError,
        CvqkdError,
        PoolExhaustedError,
    )
    from cvqkd_rt.outputs import check_jinja2_availability, output_basemodel_as_adoc
    from cvqkd_rt.settings import deep_merge, load_config, parse_override
    from cvqkd_rt.shared_utilities import print_basemodel, save_structured_output, setup_logging
except ImportError:
    # Fall back to adding the project root to path (for development)
    project_root = Path(__file__).parent.parent.parent
    sys.path.insert(0, str(project_root / "src"))
    from cvqkd_rt import __version__
    from cvqkd_rt.basemodels import CampaignSummary, ChannelModel, ProtocolConfig
    from cvqkd_rt.campaign import (
        FIGURE_ALIASES,
        FIGURE_IDS,
        PRESETS,
        build_spec,
        emit_fig_data,
        figure_name,
        load_campaign,
        point_config,
        run_campaign,
        summarize_point,
    )
    from cvqkd_rt.errors import (
        AuthenticationError,
        CampaignAbortedError,
        ConfigError,
        CvqkdError,
        PoolExhaustedError,
    )
    from cvqkd_rt.outputs import check_jinja2_availability, output_basemodel_as_adoc
    from cvqkd_rt.settings import deep_merge, load_config, parse_override
    from cvqkd_rt.shared_utilities import print_basemodel, save_structured_output, setup_logging

console = Console()

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ABORTED = 3
EMIT_CHOICES = ("table", *FIGURE_IDS, *FIGURE_ALIASES)


def parse_arguments(argv: list[str] | None = None) -> argparse.Namespace:
    """Parse command line arguments for cvqkd-rt."""
    parser = argparse.ArgumentParser(
        description="cvqkd-rt - real-time CV-QKD protocol engine, link simulator and rate calculus",
        epilog=(
            "Examples:\n"
            "  cvqkd-rt run --preset fiber --shots 20 --out workspace/fiber\n"
            "  cvqkd-rt run --points 0dB,10dB,21dB --timing synthetic --emit sweep\n"
            "  cvqkd-rt emit --out workspace/fiber --emit bounds\n"
            "  cvqkd-rt reference --output adoc\n"
            "  cvqkd-rt node --role bob --port 47100"
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "-V",
        "--version",
        action="store_true",
        help="Show the cvqkd-rt version and exit",
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    run_parser = subparsers.add_parser("run", help="Run a shot campaign over one or more channel points")
    add_common_arguments(run_parser)
    add_config_arguments(run_parser)
    run_parser.add_argument("--preset", choices=sorted(PRESETS), default=None, help="Named point set")
    run_parser.add_argument(
        "--points", default=None, help="Comma-separated points such as 26km,52km or 0dB,21dB"
    )
    run_parser.add_argument("--shots", type=int, default=None, help="Shots per point (default: 10)")
    run_parser.add_argument(
        "--wall-time",
        dest="wall_time_s",
        type=float,
        default=None,
        help="Per-point budget in accounted protocol seconds",
    )
    run_parser.add_argument("--out", default="workspace", help="Output directory (default: workspace)")
    run_parser.add_argument(
        "--emit",
        action="append",
        choices=EMIT_CHOICES,
        default=None,
        help="Also write a table or figure series (repeatable)",
    )
    run_parser.add_argument(
        "--parallel", action="store_true", help="Run points in parallel processes"
    )

    emit_parser = subparsers.add_parser("emit", help="Derive tables and figure series from a campaign directory")
    add_common_arguments(emit_parser)
    emit_parser.add_argument("--out", default="workspace", help="Campaign directory (default: workspace)")
    emit_parser.add_argument(
        "--emit", action="append", choices=EMIT_CHOICES, required=True, help="What to emit (repeatable)"
    )

    reference_parser = subparsers.add_parser(
        "reference", help="Check the published operating points for internal consistency"
    )
    add_common_arguments(reference_parser)
    reference_parser.add_argument(
        "--nu", type=float, default=None, help="Disclosure fraction assumed by the closure check"
    )
    reference_parser.add_argument(
        "--attack", choices=["individual", "collective"], default=None, help="Attack model"
    )

    security_parser = subparsers.add_parser(
        "security", help="Evaluate the secret key fraction of one link"
    )
    add_common_arguments(security_parser)
    add_config_arguments(security_parser)
    security_parser.add_argument("--loss-db", type=float, default=None, help="Channel loss (dB)")
    security_parser.add_argument("--xi-ch", type=float, default=None, help="Excess noise (SNU)")
    security_parser.add_argument("--v-mod", type=float, default=None, help="Modulation variance (SNU)")
    security_parser.add_argument("--beta", type=float, default=0.95, help="Reconciliation efficiency")
    security_parser.add_argument("--fer", type=float, default=0.0, help="Frame error rate")

    node_parser = subparsers.add_parser("node", help="Run one protocol role over TCP")
    add_common_arguments(node_parser)
    add_config_arguments(node_parser)
    node_parser.add_argument("--role", choices=["alice", "bob"], required=True, help="Protocol role")
    node_parser.add_argument("--host", default=None, help="Classical channel host")
    node_parser.add_argument("--port", type=int, default=None, help="Classical channel port")
    node_parser.add_argument("--quantum-port", type=int, default=None, help="Quantum link port")
    node_parser.add_argument("--shots", type=int, default=10, help="Shots to run (default: 10)")
    node_parser.add_argument("--ledger", default=None, help="JSON-lines ledger path")

    return parser.parse_args(argv)


def add_common_arguments(parser):
    """Add common arguments to a parser."""
    parser.add_argument(
        "--verbose", "-v", action="store_true", help="Enable verbose output"
    )
    parser.add_argument(
        "--output",
        default="verbose",
        choices=["verbose", "json", "adoc"],
        help="Output format: 'verbose' for rich console output (default), 'json' for clean JSON output, 'adoc' for AsciiDoc output",
    )


def add_config_arguments(parser):
    """Add configuration-layer arguments to a parser."""
    parser.add_argument("--config", default=None, help="Explicit config file (YAML or JSON)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config key, e.g. reconciliation.code_rate=0.015 (repeatable)",
    )
    parser.add_argument("--seed", type=int, default=None, help="Master seed")
    parser.add_argument(
        "--waveform", action="store_true", help="Run the link through the waveform DSP chain"
    )
    parser.add_argument(
        "--timing", choices=["live", "synthetic"], default=None, help="Shot timing mode"
    )


def config_from_args(args) -> ProtocolConfig:
    """Effective config: file layers, then --set, then the dedicated flags."""
    overrides: dict[str, Any] = {}
    for text in args.overrides:
        overrides = deep_merge(overrides, parse_override(text))
    if args.seed is not None:
        overrides = deep_merge(overrides, {"seeds": {"master_seed": args.seed}})
    if args.waveform:
        overrides = deep_merge(overrides, {"waveform": True})
    if args.timing:
        overrides = deep_merge(overrides, {"timing": {"mode": args.timing}})
    transport = {
        key: value
        for key, value in (
            ("host", getattr(args, "host", None)),
            ("port", getattr(args, "port", None)),
            ("quantum_port", getattr(args, "quantum_port", None)),
        )
        if value is not None
    }
    if transport:
        overrides = deep_merge(overrides, {"transport": {"kind": "tcp", **transport}})
    return load_config(args.config, overrides)


def report_error(args, message: str) -> None:
    if args.output in ("json", "adoc"):
        print(f"Error: {message}", file=sys.stderr)
    else:
        console.print(f"[red]❌ {message}[/red]")


def emit_model(args, model: BaseModel, title: str) -> None:
    """Print a model in the selected output format."""
    if args.output == "json":
        print(model.model_dump_json(indent=2))
    elif args.output == "adoc":
        if not check_jinja2_availability():
            print("Error: Jinja2 is required for AsciiDoc output. Install it with 'pip install jinja2'", file=sys.stderr)
            sys.exit(EXIT_FAILURE)
        output_basemodel_as_adoc(model)
    else:
        print_basemodel(model, title)


def display_summary_table(summary: CampaignSummary) -> None:
    """Render the per-point table in the console."""
    table = Table(title="Campaign summary", show_lines=False)
    for header in ("Point", "Loss dB", "SKR_rt bit/s", "SKR_qse bit/s", "xi_ch mSNU", "V_mod", "beta", "FER", "p_suc", "Key bits"):
        table.add_column(header, justify="right")
    for p in summary.points:
        table.add_row(
            p.label,
            f"{p.loss_db:.2f}",
            f"{p.skr_rt_bps:.4g}",
            f"{p.skr_qse_bps:.4g}",
            "n/a" if p.xi_ch_msnu is None else f"{p.xi_ch_msnu:.1f}",
            f"{p.v_mod_snu:.2f}",
            "n/a" if p.beta is None else f"{p.beta:.3f}",
            "n/a" if p.fer is None else f"{p.fer:.3f}",
            f"{p.p_suc:.3f}",
            f"{p.n_key_bits:,}",
        )
    console.print(table)


def emit_series(args, out_dir: Path, which: list[str] | None) -> None:
    """Write the requested figure series of a finished campaign."""
    figures = list(dict.fromkeys(figure_name(w) for w in (which or []) if w != "table"))
    if not figures:
        return
    _, _, ledgers = load_campaign(out_dir)
    for fig in figures:
        rows = emit_fig_data(ledgers, fig, out_dir)
        if args.output == "verbose":
            console.print(f"[blue]📈 {fig}: {len(rows)} rows written to {out_dir / (fig + '.csv')}[/blue]")


def handle_run_command(args) -> None:
    """Handle the run command: campaign, summary, optional figure series."""
    is_clean_output = args.output in ("json", "adoc")
    config = config_from_args(args)
    spec = build_spec(
        preset=args.preset,
        points=args.points,
        shots=args.shots,
        wall_time_s=args.wall_time_s,
        out_dir=args.out,
        parallel=args.parallel,
        attenuation_db_per_km=config.link.fiber_attenuation_db_per_km,
    )
    if not is_clean_output:
        console.print(
            f"\n[bold blue]Campaign: {len(spec.points)} point(s), "
            f"{spec.shots_per_point or 'budgeted'} shots each, seed {config.seeds.master_seed}[/bold blue]"
        )

    # Each point runs its own event loop; interrupts land here and flush partial ledgers
    summary = run_campaign(spec, config)

    out_dir = Path(spec.out_dir)
    emit_series(args, out_dir, args.emit)
    if args.output == "verbose":
        display_summary_table(summary)
        console.print(f"\n[blue]💾 Ledgers and summary saved to: {out_dir}[/blue]")
    else:
        emit_model(args, summary, "Campaign Summary")


def handle_emit_command(args) -> None:
    """Handle the emit command on an existing campaign directory."""
    out_dir = Path(args.out)
    spec, config, ledgers = load_campaign(out_dir)
    if "table" in args.emit:
        summary = CampaignSummary(
            preset=spec.preset,
            master_seed=config.seeds.master_seed,
            points=[
                summarize_point(point, records, point_config(config, point, spec.overrides))
                for point, records in ledgers
                if records
            ],
        )
        if args.output == "verbose":
            display_summary_table(summary)
        else:
            emit_model(args, summary, "Campaign Summary")
    emit_series(args, out_dir, args.emit)


def handle_reference_command(args) -> None:
    """Handle the reference command: table arithmetic, closure and synthetic ledger."""
    from cvqkd_rt.config import defaults
    from cvqkd_rt.reference import reference_report

    report = reference_report(
        nu=args.nu if args.nu is not None else defaults.DISCLOSURE_FRACTION,
        attack=args.attack or defaults.ATTACK_MODEL,
    )
    if args.output == "verbose":
        console.print("\n[bold blue]Published operating points[/bold blue]")
        for check in report.table_checks:
            verdict = "[green]pass[/green]" if check.passed else (
                "[yellow]flagged[/yellow]" if check.flagged else "[red]FAIL[/red]"
            )
            console.print(
                f"  {check.l_ch_km:>5g} km  SKF x f_sym {check.predicted_skr_qse_bps:>10.4g} bit/s"
                f"  printed {check.printed_skr_qse_bps:>10.4g}  {verdict}"
            )
        for closure in report.closure_checks:
            console.print(
                f"  {closure.l_ch_km:>5g} km  SKF computed/printed = {closure.ratio:.3f}"
                f" (vs SKF/p_suc: {closure.ratio_per_success:.3f})"
            )
        if report.synthetic_rates:
            console.print(
                f"  synthetic 26 km ledger: SKR_rt {report.synthetic_rates.skr_rt:.1f} bit/s"
                f" (published {report.published_skr_rt_bps:g} bit/s)"
            )
        saved = save_structured_output(report.model_dump(mode="json"), "reference")
        console.print(f"\n[blue]💾 Report saved to: {saved}[/blue]")
    else:
        emit_model(args, report, "Reference Report")


def handle_security_command(args) -> None:
    """Handle the security command: one SecurityReport at the configured link."""
    from cvqkd_rt.security import security_report

    config = config_from_args(args)
    channel = config.link.channel
    channel = ChannelModel(
        loss_db=args.loss_db if args.loss_db is not None else channel.loss_db,
        excess_noise_out=args.xi_ch if args.xi_ch is not None else channel.excess_noise_out,
    )
    report = security_report(
        channel,
        config.link.receiver,
        args.v_mod if args.v_mod is not None else config.v_mod_snu,
        args.beta,
        args.fer,
        config.disclosure_fraction,
        config.attack_model,
        config.receiver_accounting,
    )
    emit_model(args, report, "Security Report")


def handle_node_command(args) -> None:
    """Handle the node command: one role over TCP."""
    from cvqkd_rt.engine import run_node

    config = config_from_args(args)
    if args.output == "verbose":
        tcfg = config.transport
        console.print(
            f"\n[bold blue]{args.role} on {tcfg.host}:{tcfg.port} "
            f"(quantum {tcfg.quantum_port}), {args.shots} shots[/bold blue]"
        )
    node = asyncio.run(run_node(args.role, config, args.shots, args.ledger))
    counts = node.ledger.status_counts()
    if args.output == "json":
        print(json.dumps({"role": args.role, "n_key": node.ledger.n_key, "status_counts": counts}, indent=2))
    else:
        console.print(f"[green]✅ {args.role}: {node.ledger.n_key:,} key bits; {counts}[/green]")


HANDLERS = {
    "run": handle_run_command,
    "emit": handle_emit_command,
    "reference": handle_reference_command,
    "security": handle_security_command,
    "node": handle_node_command,
}


def run_cli(argv: list[str] | None = None) -> int:
    """Main CLI entry point; returns the process exit code."""
    args = parse_arguments(argv)

    if getattr(args, "version", False):
        print(f"cvqkd-rt {__version__}")
        return EXIT_OK

    if args.command is None:
        console.print("[red]Error: No command specified[/red]")
        console.print("\n[blue]Available commands:[/blue]")
        console.print("  [bold]run[/bold]       - Run a shot campaign")
        console.print("  [bold]emit[/bold]      - Emit tables and figure series from ledgers")
        console.print("  [bold]reference[/bold] - Check the published operating points")
        console.print("  [bold]security[/bold]  - Evaluate the secret key fraction of one link")
        console.print("  [bold]node[/bold]      - Run one role over TCP")
        console.print("\n[dim]Use 'cvqkd-rt <command> --help' for detailed help on a command[/dim]")
        return EXIT_FAILURE

    setup_logging(verbose=args.verbose, json_output=args.output in ("json", "adoc"))
    try:
        HANDLERS[args.command](args)
    except (ConfigError, ValidationError) as e:
        report_error(args, f"Configuration error: {e}")
        return EXIT_CONFIG
    except (CampaignAbortedError, AuthenticationError, PoolExhaustedError) as e:
        report_error(args, f"Aborted: {e}")
        return EXIT_ABORTED
    except CvqkdError as e:
        report_error(args, str(e))
        if args.verbose:
            import traceback
            print(traceback.format_exc(), file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
