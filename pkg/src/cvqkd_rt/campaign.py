#!/usr/bin/env python

"""
Batch experiment driver: runs shot campaigns over fiber or loss-sweep points,
persists one JSON-lines ledger per point and derives every table and figure
series from those ledgers alone.
"""

import asyncio
import json
import logging
import math
import re
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from cvqkd_rt.basemodels import (
    CampaignSpec,
    CampaignSummary,
    ChannelPoint,
    PointSummary,
    ProtocolConfig,
    RateLedger,
    ShotRecord,
)
from cvqkd_rt.config import defaults
from cvqkd_rt.core import db_to_transmittance, fiber_km_to_loss_db
from cvqkd_rt.engine import open_pair
from cvqkd_rt.errors import CampaignAbortedError, ConfigError, DomainError
from cvqkd_rt.link import sweep_losses, sweep_xi_profile
from cvqkd_rt.rates import compute_rates
from cvqkd_rt.reference import FIBER_ROWS
from cvqkd_rt.security import plob_bound
from cvqkd_rt.settings import build_config, deep_merge
from cvqkd_rt.shared_utilities import read_ledger, write_csv, write_json

logger = logging.getLogger(__name__)

CAMPAIGN_FILE = "campaign.json"
SUMMARY_STEM = "summary"
LONG_HAUL_CODE_RATE = 0.015
LONG_HAUL_KM = 52.0
LONG_HAUL_LOSS_DB = 10.6
FIGURE_IDS = ("timeline", "sweep", "bounds")
FIGURE_ALIASES = {"fig4": "timeline", "fig5": "sweep", "fig6": "bounds"}
TABLE_COLUMNS = tuple(PointSummary.model_fields)

_POINT_RE = re.compile(r"^(?P<value>\d+(?:\.\d+)?)\s*(?P<unit>km|db)$", re.IGNORECASE)


class PointLedger(NamedTuple):
    point: ChannelPoint
    records: list[ShotRecord]


# ---------------------------------------------------------------------------
# Points and presets
# ---------------------------------------------------------------------------


def _long_haul(enabled: bool) -> dict[str, Any]:
    return {"reconciliation": {"code_rate": LONG_HAUL_CODE_RATE}} if enabled else {}


def fiber_preset() -> list[ChannelPoint]:
    """The four published fiber spans at their measured link losses."""
    points = []
    for row in FIBER_ROWS:
        overrides = _long_haul(row.l_ch_km >= LONG_HAUL_KM)
        points.append(
            ChannelPoint(
                label=f"{row.l_ch_km:g}km",
                loss_db=row.loss_db,
                fiber_km=row.l_ch_km,
                xi_ch_snu=defaults.FIBER_XI_PROFILE_SNU[int(row.l_ch_km)],
                overrides=overrides,
            )
        )
    return points


def sweep_preset(
    count: int = defaults.SWEEP_POINTS, max_loss_db: float = defaults.SWEEP_MAX_LOSS_DB
) -> list[ChannelPoint]:
    """Evenly spaced losses with the plateauing excess-noise profile."""
    return [
        ChannelPoint(
            label=f"{loss:g}dB",
            loss_db=loss,
            xi_ch_snu=sweep_xi_profile(loss),
            overrides=_long_haul(loss >= LONG_HAUL_LOSS_DB),
        )
        for loss in sweep_losses(max_loss_db, count)
    ]


PRESETS: dict[str, Callable[[], list[ChannelPoint]]] = {
    "fiber": fiber_preset,
    "sweep": sweep_preset,
}


def parse_points(
    text: str,
    attenuation_db_per_km: float = defaults.FIBER_ATTENUATION_DB_PER_KM,
    default_xi_snu: float = defaults.XI_CH_SNU,
) -> list[ChannelPoint]:
    """Points from strings like ``26km,52km`` or ``0dB,10.5dB``.

    Fiber points take their loss from the attenuation constant and their excess
    noise from the fiber profile when the length is one of the measured spans.
    Loss points follow the sweep profile.
    """
    points = []
    for item in (p.strip() for p in text.split(",")):
        if not item:
            continue
        match = _POINT_RE.match(item)
        if match is None:
            raise ConfigError(f"cannot parse point '{item}' (expected e.g. 26km or 10dB)")
        value = float(match["value"])
        if match["unit"].lower() == "km":
            xi = default_xi_snu
            if value.is_integer():
                xi = defaults.FIBER_XI_PROFILE_SNU.get(int(value), default_xi_snu)
            points.append(
                ChannelPoint(
                    label=f"{value:g}km",
                    loss_db=fiber_km_to_loss_db(value, attenuation_db_per_km),
                    fiber_km=value,
                    xi_ch_snu=xi,
                    overrides=_long_haul(value >= LONG_HAUL_KM),
                )
            )
        else:
            points.append(
                ChannelPoint(
                    label=f"{value:g}dB",
                    loss_db=value,
                    xi_ch_snu=sweep_xi_profile(value),
                    overrides=_long_haul(value >= LONG_HAUL_LOSS_DB),
                )
            )
    if not points:
        raise ConfigError("the point list is empty")
    return points


def build_spec(
    preset: str | None = None,
    points: str | None = None,
    shots: int | None = None,
    wall_time_s: float | None = None,
    out_dir: str = "workspace",
    overrides: dict[str, Any] | None = None,
    parallel: bool = False,
    attenuation_db_per_km: float = defaults.FIBER_ATTENUATION_DB_PER_KM,
) -> CampaignSpec:
    """Assemble a CampaignSpec from CLI-level choices; explicit points win over a preset."""
    if points:
        channel_points = parse_points(points, attenuation_db_per_km)
    elif preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (choose from {', '.join(PRESETS)})")
        channel_points = PRESETS[preset]()
    else:
        raise ConfigError("a campaign needs --points or --preset")
    if shots is None and wall_time_s is None:
        shots = 10
    return CampaignSpec(
        points=channel_points,
        shots_per_point=shots,
        wall_time_s=wall_time_s,
        overrides=overrides or {},
        out_dir=out_dir,
        parallel=parallel,
        preset=None if points else preset,
    )


def point_config(
    base: ProtocolConfig, point: ChannelPoint, overrides: dict[str, Any] | None = None
) -> ProtocolConfig:
    """Base config with the point's channel; campaign overrides win over preset ones."""
    data = deep_merge(base.model_dump(), point.overrides)
    data = deep_merge(data, overrides or {})
    data = deep_merge(
        data,
        {"link": {"channel": {"loss_db": point.loss_db, "excess_noise_out": point.xi_ch_snu}}},
    )
    return build_config(data)


def ledger_path(out_dir: str | Path, point: ChannelPoint) -> Path:
    return Path(out_dir) / f"ledger_{point.label}.jsonl"


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


async def _run_point_async(
    config: ProtocolConfig,
    shots: int | None,
    wall_time_s: float | None,
    path: Path,
) -> list[ShotRecord]:
    pair = open_pair(config, ledger_path=path, warm_start=True)
    ledger = pair.bob.ledger
    shot_id = 0
    while shots is None or shot_id < shots:
        if wall_time_s is not None and ledger.t_total >= wall_time_s:
            break
        await pair.run(range(shot_id, shot_id + 1))
        shot_id += 1
    return list(pair.bob_records)


def run_point(
    config: ProtocolConfig,
    point: ChannelPoint,
    shots: int | None,
    wall_time_s: float | None,
    out_dir: str | Path,
) -> list[ShotRecord]:
    """Run one point to its budget, streaming Bob's ledger to disk.

    The wall-time budget is counted in ledger time, so synthetic timing makes
    it deterministic.
    """
    path = ledger_path(out_dir, point)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.unlink(missing_ok=True)
    logger.info(
        "Point %s: %.2f dB, xi_ch %.1f mSNU", point.label, point.loss_db, point.xi_ch_snu * 1e3
    )
    return asyncio.run(_run_point_async(config, shots, wall_time_s, path))


def _point_worker(
    config_json: str, point_json: str, shots: int | None, wall_time_s: float | None, out_dir: str
) -> list[str]:
    config = ProtocolConfig.model_validate_json(config_json)
    point = ChannelPoint.model_validate_json(point_json)
    records = run_point(config, point, shots, wall_time_s, out_dir)
    return [r.model_dump_json() for r in records]


def _write_summary(summary: CampaignSummary, out_dir: Path) -> None:
    write_json(summary.model_dump(mode="json"), out_dir / f"{SUMMARY_STEM}.json")
    write_csv(
        [p.model_dump() for p in summary.points], out_dir / f"{SUMMARY_STEM}.csv", TABLE_COLUMNS
    )


def run_campaign(spec: CampaignSpec, base_config: ProtocolConfig) -> CampaignSummary:
    """Run every point of ``spec`` and write ledgers, summary CSV and JSON.

    Points run one after another unless ``spec.parallel``, which gives each
    point its own process and loopback pair. On KeyboardInterrupt the ledgers
    written so far are summarized and CampaignAbortedError is raised.
    """
    if not spec.points:
        raise ConfigError("a campaign needs at least one point")
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    configs = [point_config(base_config, p, spec.overrides) for p in spec.points]
    write_json(
        {
            "spec": spec.model_dump(mode="json"),
            "config": base_config.model_dump(mode="json"),
        },
        out_dir / CAMPAIGN_FILE,
    )

    results: dict[int, list[ShotRecord]] = {}
    aborted = False
    try:
        if spec.parallel and len(spec.points) > 1:
            with ProcessPoolExecutor() as pool:
                futures = {
                    i: pool.submit(
                        _point_worker,
                        cfg.model_dump_json(),
                        point.model_dump_json(),
                        spec.shots_per_point,
                        spec.wall_time_s,
                        str(out_dir),
                    )
                    for i, (cfg, point) in enumerate(zip(configs, spec.points, strict=True))
                }
                try:
                    for i, future in futures.items():
                        results[i] = [ShotRecord.model_validate_json(r) for r in future.result()]
                except KeyboardInterrupt:
                    pool.shutdown(wait=False, cancel_futures=True)
                    raise
        else:
            for i, (cfg, point) in enumerate(zip(configs, spec.points, strict=True)):
                results[i] = run_point(cfg, point, spec.shots_per_point, spec.wall_time_s, out_dir)
    except KeyboardInterrupt:
        aborted = True
        logger.warning("Campaign interrupted; summarizing the ledgers written so far")

    summaries = []
    for i, (cfg, point) in enumerate(zip(configs, spec.points, strict=True)):
        records = results.get(i)
        if records is None:
            path = ledger_path(out_dir, point)
            records = read_ledger(path) if path.exists() else []
        if records:
            summaries.append(summarize_point(point, records, cfg))

    summary = CampaignSummary(
        preset=spec.preset,
        master_seed=base_config.seeds.master_seed,
        points=summaries,
        aborted=aborted,
    )
    _write_summary(summary, out_dir)
    if aborted:
        raise CampaignAbortedError(
            f"campaign aborted after {len(summaries)} of {len(spec.points)} points; "
            f"partial results in {out_dir}"
        )
    return summary


# ---------------------------------------------------------------------------
# Tables and figure series
# ---------------------------------------------------------------------------


def _mean(values: Sequence[float]) -> float | None:
    return float(np.mean(values)) if values else None


def _db(value: float | None) -> float | None:
    if value is None or value <= 0.0:
        return None
    return 10.0 * math.log10(value)


def summarize_point(
    point: ChannelPoint, records: Sequence[ShotRecord], config: ProtocolConfig
) -> PointSummary:
    """Table-shaped aggregates of one point, computed from its ledger only."""
    if not records:
        raise DomainError(f"no shots recorded for point {point.label}")
    rates = compute_rates(RateLedger(records=list(records)), config.symbol_rate_hz)
    estimated = [r for r in records if r.xi_ch_hat is not None]
    successes = [r for r in records if r.status == "success"]
    xi = [r.xi_ch_hat * 1e3 for r in estimated]
    frames = sum(r.frames_total for r in records)
    failed = sum(r.frames_failed for r in records)
    receiver = config.link.receiver
    t_rec = _mean([r.t_rec for r in records if r.t_rec is not None])
    v_el = _mean([r.v_el for r in records if r.v_el is not None])
    return PointSummary(
        label=point.label,
        l_ch_km=point.fiber_km,
        loss_db=point.loss_db,
        skr_rt_bps=rates.skr_rt,
        skr_qse_bps=rates.skr_qse,
        xi_ch_msnu=_mean(xi),
        xi_ch_std_msnu=float(np.std(xi)) if xi else None,
        t_ch_pct=_mean([r.t_ch_hat * 100.0 for r in estimated if r.t_ch_hat is not None]),
        xi_rec_msnu=(v_el if v_el is not None else receiver.electronic_noise) * 1e3,
        t_rec_pct=(t_rec if t_rec is not None else receiver.transmittance) * 100.0,
        v_mod_snu=float(np.mean([r.v_mod for r in records])),
        beta=_mean([r.beta for r in successes if r.beta is not None]),
        fer=failed / frames if frames else None,
        p_suc=rates.p_suc,
        skf_bits=_mean([r.skf for r in successes if r.skf is not None]),
        symbol_snr_db=_db(_mean([r.snr for r in records if r.snr is not None])),
        n_key_bits=rates.n_key,
        shots=rates.shots,
    )


def load_campaign(out_dir: str | Path) -> tuple[CampaignSpec, ProtocolConfig, list[PointLedger]]:
    """Read a campaign directory back: spec, base config and per-point ledgers."""
    out_dir = Path(out_dir)
    path = out_dir / CAMPAIGN_FILE
    if not path.exists():
        raise ConfigError(f"{out_dir} holds no {CAMPAIGN_FILE}; run a campaign first")
    data = json.loads(path.read_text(encoding="utf-8"))
    spec = CampaignSpec.model_validate(data["spec"])
    config = build_config(data["config"])
    ledgers = []
    for point in spec.points:
        ledger_file = ledger_path(out_dir, point)
        if ledger_file.exists():
            ledgers.append(PointLedger(point, read_ledger(ledger_file)))
    return spec, config, ledgers


def _timeline_series(ledgers: Sequence[PointLedger], **_: Any) -> list[dict[str, Any]]:
    rows = []
    for point, records in ledgers:
        elapsed = 0.0
        cumulative = 0
        for r in records:
            elapsed += r.t_total
            cumulative += r.key_bits
            rows.append(
                {
                    "label": point.label,
                    "shot_id": r.shot_id,
                    "time_s": elapsed,
                    "key_bits": r.key_bits,
                    "cumulative_key_bits": cumulative,
                    "xi_ch_msnu": None if r.xi_ch_hat is None else r.xi_ch_hat * 1e3,
                    "status": r.status,
                }
            )
    return rows


def _sweep_series(
    ledgers: Sequence[PointLedger], reference_v_mod: float = defaults.V_MOD_SNU, **_: Any
) -> list[dict[str, Any]]:
    rows = []
    for point, records in ledgers:
        rates = compute_rates(RateLedger(records=list(records)))
        xi = [r.xi_ch_hat * 1e3 for r in records if r.xi_ch_hat is not None]
        with_snr = [r for r in records if r.snr is not None]
        snr = _mean([r.snr for r in with_snr])
        snr_norm = _mean([r.snr * reference_v_mod / r.v_mod for r in with_snr if r.v_mod > 0])
        rows.append(
            {
                "label": point.label,
                "loss_db": point.loss_db,
                "skr_rt_bps": rates.skr_rt,
                "skr_qse_bps": rates.skr_qse,
                "xi_ch_msnu": _mean(xi),
                "xi_ch_std_msnu": float(np.std(xi)) if xi else None,
                "symbol_snr_db": _db(snr),
                "snr_norm_db": _db(snr_norm),
                "v_mod_snu": float(np.mean([r.v_mod for r in records])),
                "p_suc": rates.p_suc,
            }
        )
    return rows


def _bounds_series(ledgers: Sequence[PointLedger], **_: Any) -> list[dict[str, Any]]:
    rows = []
    for point, records in ledgers:
        t_ch = db_to_transmittance(point.loss_db)
        t_rec = _mean([r.t_rec for r in records if r.t_rec is not None]) or defaults.T_REC
        skf = _mean([r.skf for r in records if r.status == "success" and r.skf is not None])
        rows.append(
            {
                "label": point.label,
                "loss_db": point.loss_db,
                "skf_bits": skf,
                "plob_channel": math.inf if t_ch >= 1.0 else plob_bound(t_ch),
                "plob_total": plob_bound(t_ch * t_rec),
            }
        )
    return rows


_FIGURES: dict[str, Callable[..., list[dict[str, Any]]]] = {
    "timeline": _timeline_series,
    "sweep": _sweep_series,
    "bounds": _bounds_series,
}


def figure_name(which: str) -> str:
    """Canonical series name for a figure id or one of its numbered aliases."""
    name = FIGURE_ALIASES.get(which.lower(), which.lower())
    if name not in _FIGURES:
        choices = ", ".join((*FIGURE_IDS, *FIGURE_ALIASES))
        raise ConfigError(f"unknown figure id '{which}' (choose from {choices})")
    return name


def emit_fig_data(
    ledgers: Sequence[PointLedger],
    which: str,
    out_dir: str | Path | None = None,
    **options: Any,
) -> list[dict[str, Any]]:
    """Figure series as rows; written to ``<which>.csv`` and ``.json`` when ``out_dir`` is set.

    ``timeline`` is cumulative key against time with per-shot key and excess
    noise; ``sweep`` is rates, excess noise and symbol SNR against loss;
    ``bounds`` is the SKF against loss next to the channel and
    total-transmittance PLOB columns. fig4, fig5 and fig6 name the same series.
    """
    which = figure_name(which)
    rows = _FIGURES[which](ledgers, **options)
    if out_dir is not None and rows:
        out_dir = Path(out_dir)
        write_csv(rows, out_dir / f"{which}.csv", list(rows[0]))
        write_json(rows, out_dir / f"{which}.json")
    return rows
