"""Write metrics and run summaries as JSON, CSV or an SVG per-class bar chart."""

from __future__ import annotations

import io
import json
from pathlib import Path

from .evaluation import Metrics, RunSummary
from .plotting import class_accuracy_figure, save_figure

FORMATS = ("json", "csv", "svg")


class ReportError(ValueError):
    pass


def _as_groups(result) -> dict:
    if isinstance(result, (Metrics, RunSummary)):
        return {getattr(result, "label", "") or "accuracy": result}
    if isinstance(result, dict) and result and all(
            isinstance(v, (Metrics, RunSummary)) for v in result.values()):
        return dict(result)
    raise ReportError("expected Metrics, RunSummary, or a dict of them")


def render_csv(result: Metrics | RunSummary) -> str:
    buf = io.StringIO()
    buf.write("class_id,accuracy\n")
    for c, acc in enumerate(result.per_class_accuracy):
        buf.write(f"{c},{float(acc)!r}\n")
    buf.write(f"overall,{float(result.overall_accuracy)!r}\n")
    return buf.getvalue()


def render_json(result) -> str:
    groups = _as_groups(result)
    if isinstance(result, dict):
        doc = {k: v.to_json() for k, v in groups.items()}
    else:
        doc = result.to_json()
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def emit_report(result, fmt: str, path, title: str = "") -> Path:
    """Write ``result`` (a Metrics, a RunSummary, or a dict of those keyed by
    ablation name) in ``fmt``. CSV takes a single result."""
    if fmt not in FORMATS:
        raise ReportError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
    path = Path(path)
    if not path.parent.is_dir():
        raise ReportError(f"cannot write report: directory {path.parent} does not exist")
    try:
        if fmt == "json":
            path.write_text(render_json(result))
        elif fmt == "csv":
            if isinstance(result, dict):
                raise ReportError("csv reports take a single Metrics or RunSummary")
            path.write_text(render_csv(result))
        else:
            groups = {k: v.per_class_accuracy for k, v in _as_groups(result).items()}
            save_figure(class_accuracy_figure(groups, title), path, "svg")
    except OSError as exc:
        raise ReportError(f"cannot write report {path}: {exc}") from None
    return path
