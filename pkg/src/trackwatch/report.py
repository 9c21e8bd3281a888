"""Discrepancy reports: prompt wrapping, training-pair datasets, and
report generation through a pluggable text-completion backend.

The remote backend speaks a minimal local-model protocol: POST
``{"model": ..., "prompt": ...}`` to a configurable path and read a JSON
body with a ``response`` text field. Any transport failure falls back to
the deterministic template so report generation never fails.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import httpx

from .detect import AnomalyEvent
from .ingest import format_instant

logger = logging.getLogger(__name__)


class ReportError(Exception):
    pass


class MissingFieldError(ReportError):
    pass


@dataclass(frozen=True)
class DiscrepancyRecord:
    spacecraft_id: float
    ground_antenna_orig_num: float
    ground_antenna_clean_num: float
    ground_antenna_id: float
    description_txt: str
    corrective_action_txt: str | None = None


# Null markers seen in exported report datasets.
_NULL_ACTIONS = {"", "none", "nan", "null"}


def _is_null_action(text: str | None) -> bool:
    return text is None or text.strip().lower() in _NULL_ACTIONS


def _format_id(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def read_discrepancy_csv(text: str) -> list[DiscrepancyRecord]:
    """Parse the canonical CSV export of the discrepancy-report dataset."""
    rows = list(csv.DictReader(io.StringIO(text)))
    records = []
    for row in rows:
        records.append(
            DiscrepancyRecord(
                spacecraft_id=float(row["SPACECRAFT_ID"]),
                ground_antenna_orig_num=float(row["GROUND_ANTENNA_ORIG_NUM"]),
                ground_antenna_clean_num=float(row["GROUND_ANTENNA_CLEAN_NUM"]),
                ground_antenna_id=float(row["GROUND_ANTENNA_ID"]),
                description_txt=row["DESCRIPTION_TXT"],
                corrective_action_txt=row.get("CORRECTIVE_ACTION_TXT") or None,
            )
        )
    return records


PROMPT_INSTRUCTION = (
    "Given the discrepancy above, state the corrective action taken or recommended."
)


def wrap_prompt(record: DiscrepancyRecord) -> str:
    """Deterministic labeled-line template; byte-stable for equal input."""
    if not record.description_txt or not record.description_txt.strip():
        raise MissingFieldError("description_txt is required")
    lines = [
        f"SPACECRAFT_ID: {_format_id(record.spacecraft_id)}",
        f"GROUND_ANTENNA_ORIG_NUM: {_format_id(record.ground_antenna_orig_num)}",
        f"GROUND_ANTENNA_CLEAN_NUM: {_format_id(record.ground_antenna_clean_num)}",
        f"GROUND_ANTENNA_ID: {_format_id(record.ground_antenna_id)}",
        f"DESCRIPTION: {record.description_txt.strip()}",
        "",
        PROMPT_INSTRUCTION,
    ]
    return "\n".join(lines)


def event_record(event: AnomalyEvent, verdict: str) -> DiscrepancyRecord:
    """Cast a verified anomaly into the discrepancy-record shape."""
    feature, value = ("reconstruction", event.error)
    if event.feature_snapshot:
        feature, value = next(iter(event.feature_snapshot.items()))
    description = (
        f"DSS-{event.key.dss}: {event.model_kind} reconstruction error "
        f"{event.error:.6g} exceeded threshold {event.threshold:.6g} at "
        f"{format_instant(event.timestamp_us)} (severity {event.severity}, "
        f"verdict {verdict}; {feature}={value:.6g})."
    )
    return DiscrepancyRecord(
        spacecraft_id=float(event.key.scid),
        ground_antenna_orig_num=float(event.key.dss),
        ground_antenna_clean_num=float(event.key.dss),
        ground_antenna_id=float(event.key.dss),
        description_txt=description,
    )


@dataclass
class PairDatasetResult:
    pairs_written: int
    skipped: int
    path: Path


def build_pair_dataset(records: Iterable[DiscrepancyRecord], path: str | Path) -> PairDatasetResult:
    """Write one {"prompt", "response"} JSON object per line.

    Records with a null or empty corrective action are skipped and counted.
    """
    path = Path(path)
    written = skipped = 0
    try:
        with path.open("w") as out:
            for record in records:
                if _is_null_action(record.corrective_action_txt):
                    skipped += 1
                    continue
                pair = {
                    "prompt": wrap_prompt(record),
                    "response": record.corrective_action_txt.strip(),  # type: ignore[union-attr]
                }
                out.write(json.dumps(pair) + "\n")
                written += 1
    except OSError as exc:
        raise ReportError(f"cannot write pair dataset: {exc}") from exc
    return PairDatasetResult(pairs_written=written, skipped=skipped, path=path)


@dataclass(frozen=True)
class TemplateBackend:
    pass


@dataclass(frozen=True)
class RemoteBackend:
    base_url: str
    model_name: str = "local-reasoner"
    path: str = "/api/generate"
    timeout: float = 10.0


ReasoningBackend = TemplateBackend | RemoteBackend

# Corrective-action skeletons keyed by severity; the feature name and
# model kind fill the slots.
_ACTION_TEMPLATES = {
    "High": (
        "Page the on-duty engineer: {feature} on DSS-{dss} breached its "
        "{model} reconstruction threshold. Hold the antenna out of the "
        "schedule until {feature} is re-verified and file a follow-up sweep "
        "of the affected pass."
    ),
    "Medium": (
        "Open a monitoring ticket for {feature} on DSS-{dss}: re-run the "
        "{model} reconstruction over the surrounding passes and compare "
        "against the last known-good track before clearing."
    ),
    "Low": (
        "Log for trend analysis: {feature} on DSS-{dss} exceeded the {model} "
        "threshold marginally. No immediate action; include in the weekly "
        "degradation review."
    ),
}


@dataclass
class DiscrepancyReport:
    event_id: str
    dss: int
    scid: int
    timestamp_us: int
    severity: str
    verdict: str
    description: str
    suggested_action: str
    backend_tag: str  # template | remote
    generation_log: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "dss": self.dss,
            "scid": self.scid,
            "timestamp_us": self.timestamp_us,
            "severity": self.severity,
            "verdict": self.verdict,
            "description": self.description,
            "suggested_action": self.suggested_action,
            "backend_tag": self.backend_tag,
            "generation_log": self.generation_log,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscrepancyReport":
        return cls(**doc)


def _template_action(event: AnomalyEvent) -> str:
    severity = event.severity or "Low"
    feature = "reconstruction"
    if event.feature_snapshot:
        feature = next(iter(event.feature_snapshot))
    template = _ACTION_TEMPLATES.get(severity, _ACTION_TEMPLATES["Low"])
    return template.format(feature=feature, dss=event.key.dss, model=event.model_kind)


def _remote_action(backend: RemoteBackend, prompt: str) -> str:
    url = backend.base_url.rstrip("/") + backend.path
    response = httpx.post(
        url,
        json={"model": backend.model_name, "prompt": prompt},
        timeout=backend.timeout,
    )
    response.raise_for_status()
    text = response.json().get("response", "")
    if not text:
        raise ReportError("remote backend returned an empty response")
    return text


def generate_report(
    event: AnomalyEvent,
    verdict: str,
    backend: ReasoningBackend = TemplateBackend(),
) -> DiscrepancyReport:
    """Produce exactly one report; remote failures fall back to the template."""
    record = event_record(event, verdict)
    generation_log = []
    if isinstance(backend, RemoteBackend):
        try:
            action = _remote_action(backend, wrap_prompt(record))
            tag = "remote"
            generation_log.append(f"remote backend {backend.base_url} answered")
        except Exception as exc:  # any transport or protocol failure
            action = _template_action(event)
            tag = "template"
            warning = f"remote backend failed ({exc}); fell back to template"
            generation_log.append(warning)
            logger.warning(warning)
    else:
        action = _template_action(event)
        tag = "template"
        generation_log.append("template backend")
    return DiscrepancyReport(
        event_id=event.id,
        dss=event.key.dss,
        scid=event.key.scid,
        timestamp_us=event.timestamp_us,
        severity=event.severity or "Low",
        verdict=verdict,
        description=record.description_txt,
        suggested_action=action,
        backend_tag=tag,
        generation_log=generation_log,
    )


_SECTION_ORDER = ("Summary", "Data", "Severity", "Verdict", "Suggested Action", "Provenance")


def render_report_markdown(report: DiscrepancyReport, event: AnomalyEvent | None = None) -> str:
    """Human-readable document with a stable section order."""
    lines = [f"# Discrepancy Report {report.event_id}", ""]
    lines += ["## Summary", report.description, ""]
    lines += ["## Data"]
    lines.append(f"- Track: DSS-{report.dss} / SCID {report.scid}")
    lines.append(f"- Instant: {format_instant(report.timestamp_us)}")
    if event is not None:
        lines.append(f"- Reconstruction error: {event.error:.6g} (threshold {event.threshold:.6g})")
        for name, value in event.feature_snapshot.items():
            lines.append(f"- {name}: {value:.6g}")
        context = event.context.to_dict()
        if any(v is not None for v in context.values()):
            for name, value in context.items():
                if value is not None:
                    lines.append(f"- weather {name}: {value:.6g}")
        else:
            lines.append("- weather context absent")
    else:
        lines.append("- weather context absent")
    lines += ["", "## Severity", report.severity, ""]
    lines += ["## Verdict", report.verdict, ""]
    lines += ["## Suggested Action", report.suggested_action, ""]
    lines += ["## Provenance"]
    lines.append(f"- backend: {report.backend_tag}")
    for entry in report.generation_log:
        lines.append(f"- {entry}")
    return "\n".join(lines) + "\n"
