"""
Report exports: json (structured), csv and md (tables), pdf (fpdf2).

Every exporter is deterministic: exporting the same report twice gives
byte-identical files.
"""
from __future__ import annotations
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Protocol, Sequence, Union

import pandas as pd

from forklab.errors import ConfigError, IoError
from forklab.host.events import EventLog
from forklab.pdf.pdf_generator import generate_table_pdf

logger = logging.getLogger(__name__)

ReportFormat = Literal["json", "md", "csv", "pdf"]
FORMATS: tuple[str, ...] = ("json", "md", "csv", "pdf")


class Report(Protocol):
    def to_rows(self) -> List[Dict[str, Any]]: ...

    def to_record(self) -> Dict[str, Any]: ...


def normalize_format(raw: Optional[str], path: Optional[Union[str, Path]] = None) -> ReportFormat:
    """
    Explicit format first, then the output file's suffix, then json.

    Raises ConfigError for a format nobody implements.
    """
    cleaned = (raw or "").strip().lower().lstrip(".")
    if not cleaned and path is not None:
        cleaned = Path(path).suffix.lower().lstrip(".")
        if cleaned == "markdown":
            cleaned = "md"
        if cleaned not in FORMATS:
            cleaned = ""
    if not cleaned:
        return "json"
    if cleaned == "markdown":
        return "md"
    if cleaned not in FORMATS:
        raise ConfigError("format", f"unknown format {raw!r} (choose from {list(FORMATS)})")
    return cleaned  # type: ignore[return-value]


def report_frame(report: Report) -> pd.DataFrame:
    rows = report.to_rows()
    columns = list(rows[0]) if rows else []
    return pd.DataFrame(rows, columns=columns)


def events_frame(log: EventLog) -> pd.DataFrame:
    """One row per event; the payload stays a JSON string so the columns are fixed."""
    return pd.DataFrame(
        [
            {"seq": e.seq, "t": e.t, "kind": e.kind, "data": json.dumps(e.data, sort_keys=True, separators=(",", ":"))}
            for e in log
        ],
        columns=["seq", "t", "kind", "data"],
    )


def _md_escape(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value).replace("|", "\\|")


def render_markdown(rows: Sequence[Dict[str, Any]], title: str = "") -> str:
    lines: List[str] = []
    if title:
        lines += [f"# {title}", ""]
    if not rows:
        return "\n".join(lines + ["(no rows)", ""])
    columns = list(rows[0])
    lines.append("| " + " | ".join(columns) + " |")
    lines.append("|" + "|".join("---" for _ in columns) + "|")
    for r in rows:
        lines.append("| " + " | ".join(_md_escape(r.get(c)) for c in columns) + " |")
    lines.append("")
    return "\n".join(lines)


def render_report(report: Report, fmt: ReportFormat, title: str = "forklab report") -> bytes:
    if fmt == "json":
        return (json.dumps(report.to_record(), indent=2, ensure_ascii=False) + "\n").encode("utf-8")
    if fmt == "csv":
        return report_frame(report).to_csv(index=False, lineterminator="\n").encode("utf-8")
    if fmt == "md":
        return render_markdown(report.to_rows(), title).encode("utf-8")
    rows = report.to_rows()
    return generate_table_pdf(title, list(rows[0]) if rows else [], rows)


def export_report(report: Report, fmt: ReportFormat, path: Union[str, Path], title: str = "forklab report") -> Path:
    """Write `report` to `path`; raises IoError when the file cannot be written."""
    path = Path(path)
    data = render_report(report, fmt, title)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as e:
        raise IoError(str(path), e) from None
    logger.info("wrote %s report to %s (%d bytes)", fmt, path, len(data))
    return path


def export_event_log(log: EventLog, path: Union[str, Path]) -> Path:
    """Event log as csv, or as JSON lines when the suffix is .jsonl."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix == ".jsonl":
            path.write_bytes(log.to_jsonl())
        else:
            path.write_bytes(events_frame(log).to_csv(index=False, lineterminator="\n").encode("utf-8"))
    except OSError as e:
        raise IoError(str(path), e) from None
    return path
