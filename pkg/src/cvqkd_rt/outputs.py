#!/usr/bin/env python

"""
AsciiDoc rendering of campaign summaries, security reports and reference checks.

Models are dumped into a Jinja2 context; each model type has a template named
``<ModelName>.adoc.j2`` under ``templates/``.
"""

import sys
from datetime import datetime
from pathlib import Path
from typing import Any

from pydantic import BaseModel

try:
    from . import __version__ as TOOL_VERSION
except Exception:
    TOOL_VERSION = "unknown version"

try:
    from jinja2 import Environment, FileSystemLoader, StrictUndefined
    JINJA2_AVAILABLE = True
except ImportError:
    JINJA2_AVAILABLE = False
    Environment = FileSystemLoader = StrictUndefined = None  # type: ignore

try:
    from cvqkd_rt.basemodels import CampaignSummary, ReferenceReport, SecurityReport
except ImportError:
    project_root = Path(__file__).parent.parent.parent
    sys.path.insert(0, str(project_root / "src"))
    from cvqkd_rt.basemodels import CampaignSummary, ReferenceReport, SecurityReport

TEMPLATES: dict[type[BaseModel], str] = {
    CampaignSummary: "CampaignSummary.adoc.j2",
    SecurityReport: "SecurityReport.adoc.j2",
    ReferenceReport: "ReferenceReport.adoc.j2",
}


def _template_candidates() -> list[Path]:
    here = Path(__file__).parent
    return [here.parent.parent / "templates", here / "templates", Path.cwd() / "templates"]


def get_template_directory() -> Path:
    """Project ``templates/`` in development, the packaged copy when installed, else cwd."""
    candidates = _template_candidates()
    for candidate in candidates:
        if candidate.is_dir():
            return candidate
    searched = ", ".join(str(c) for c in candidates)
    raise FileNotFoundError(f"no templates directory found (searched {searched})")


def _fmt(value: Any, spec: str = ".4g") -> str:
    if value is None:
        return "n/a"
    return format(value, spec)


def get_jinja_environment():  # type: ignore
    if not JINJA2_AVAILABLE:
        raise ImportError("AsciiDoc output needs jinja2 (pip install jinja2)")
    env = Environment(  # type: ignore
        loader=FileSystemLoader(str(get_template_directory())),  # type: ignore
        autoescape=False,
        trim_blocks=True,
        lstrip_blocks=True,
        undefined=StrictUndefined,  # type: ignore
    )
    env.filters["fmt"] = _fmt
    return env


def render_basemodel_to_adoc(
    model: BaseModel,
    template_name: str | None = None,
    extra_context: dict[str, Any] | None = None,
) -> str:
    """Render ``model`` through its registered template.

    The template sees every model field plus ``timestamp``, ``model_type`` and
    ``version``; ``extra_context`` is merged last. A template that cannot be
    loaded raises FileNotFoundError.
    """
    env = get_jinja_environment()
    name = template_name or TEMPLATES.get(type(model), f"{type(model).__name__}.adoc.j2")
    try:
        template = env.get_template(name)
    except Exception as e:
        raise FileNotFoundError(f"Could not load template '{name}': {e}") from e

    context: dict[str, Any] = model.model_dump()
    context.update(
        timestamp=datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
        model_type=type(model).__name__,
        version=TOOL_VERSION,
    )
    context.update(extra_context or {})
    return template.render(**context)


def output_basemodel_as_adoc(model: BaseModel, extra_context: dict[str, Any] | None = None) -> None:
    print(render_basemodel_to_adoc(model, extra_context=extra_context))


def check_jinja2_availability() -> bool:
    return JINJA2_AVAILABLE
