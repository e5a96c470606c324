#!/usr/bin/env python

"""
Shared utilities for cvqkd-rt.

Logging setup, the cache directory, structured output files (timestamped JSON,
JSON-lines ledgers, CSV tables) and console printing of models.
"""

import csv
import hashlib
import json
import logging
import os
from collections.abc import Iterable, Sequence
from datetime import datetime
from pathlib import Path
from typing import Any

from pydantic import BaseModel
from rich.console import Console
from rich.logging import RichHandler

from cvqkd_rt.basemodels import ShotRecord
from cvqkd_rt.config import defaults

console = Console()
PACKAGE_LOGGER = "cvqkd_rt"


def setup_logging(verbose: bool = False, json_output: bool = False) -> logging.Logger:
    """Install a RichHandler on the package logger (idempotent)."""
    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)
    # JSON mode keeps stdout clean; diagnostics go to stderr
    handler = RichHandler(
        console=Console(stderr=True) if json_output else console,
        show_path=verbose,
        rich_tracebacks=verbose,
        markup=False,
    )
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.propagate = False
    return logger


def get_cache_directory(custom_cache_dir: str | None = None) -> Path:
    """Get the cache directory path, creating it if it doesn't exist."""
    if custom_cache_dir:
        cache_dir = Path(custom_cache_dir).expanduser()
    else:
        cache_dir = Path(os.path.expanduser(defaults.CACHE_DIR))
    cache_dir.mkdir(parents=True, exist_ok=True)
    return cache_dir


def generate_cache_key(*parts: Any) -> str:
    """Stable filesystem-safe key for a tuple of parameters."""
    content_to_hash = "#".join(repr(p) for p in parts)
    return hashlib.sha256(content_to_hash.encode()).hexdigest()[:16]


def save_structured_output(
    output: dict[str, Any],
    content_type: str,
    save_path: str = "workspace",
) -> str:
    """
    Save structured output to a timestamped JSON file.

    Args:
        output: The dictionary to save
        content_type: Type of content for the filename
        save_path: Directory to save the file

    Returns:
        Path to the saved file
    """
    os.makedirs(save_path, exist_ok=True)

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    filename = f"{content_type}_{timestamp}.json"
    full_path = os.path.join(save_path, filename)

    with open(full_path, "w", encoding="utf-8") as f:
        json.dump(output, f, indent=2, ensure_ascii=False)

    return full_path


def write_json(output: dict[str, Any] | list[Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(output, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def append_jsonl(record: BaseModel, path: str | Path, exclude: set[str] | None = None) -> None:
    """Append one model as a JSON line, flushing immediately."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as f:
        f.write(record.model_dump_json(exclude=exclude) + "\n")
        f.flush()


def write_jsonl(
    records: Iterable[BaseModel], path: str | Path, exclude: set[str] | None = None
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for record in records:
            f.write(record.model_dump_json(exclude=exclude) + "\n")
    return path


def read_ledger(path: str | Path) -> list[ShotRecord]:
    """Read a JSON-lines shot ledger."""
    records = []
    with Path(path).open(encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(ShotRecord.model_validate_json(line))
    return records


def write_csv(rows: Sequence[dict[str, Any]], path: str | Path, columns: Sequence[str]) -> Path:
    """Write rows as CSV with a fixed column order; None becomes an empty cell."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    return path


def print_basemodel(model: BaseModel, title: str = "Model Output") -> None:
    """Print any BaseModel in a formatted way - works dynamically with any model."""
    console.print(f"[green]✅ {title}[/green]")
    model_dict = model.model_dump(mode="json")
    console.print_json(json.dumps(model_dict, ensure_ascii=False))

    list_fields = [
        f"{name}: {len(value)} items"
        for name, value in model_dict.items()
        if isinstance(value, list)
    ]
    if list_fields:
        console.print(f"📊 Summary: {', '.join(list_fields)}")
