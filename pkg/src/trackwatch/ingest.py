"""File-based transmitter mailbox: scan, classify, merge, and parse payloads.

Mailbox format
--------------
A mailbox is a directory of ``*.msg`` plain-text files. Each file starts
with header lines (``Subject:``, ``Date:``, ``To:``, and zero or more
``Attachment:`` lines naming sibling files), then a blank line, then the
body. This replaces a desktop-mail dependency with a portable, testable
substrate.

Subject grammar for station-transmitter mails (fixture-defined; upstream
mail systems never document one)::

    DSS-<n> <band>-<bandnum> ... part <i> of <k>

Payload formats
---------------
Station (JPL-era) transmitter bodies are comma-separated: a header line
naming the band pair's parameters (``datetime,dss,<params...>``) followed
by one data line per sample. Emails are split into parts that concatenate
line-aligned. Replacement (CEC-era) transmitter mails instead attach a
``.tar.gz`` holding exactly one large CSV.
"""

from __future__ import annotations

import csv
import gzip
import io
import logging
import re
import tarfile
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import Provenance, Record, TrackKey, build_track_frame, write_frames_csv

logger = logging.getLogger(__name__)

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_US = timedelta(microseconds=1)


class IngestError(Exception):
    pass


class MailboxIOError(IngestError):
    pass


class MalformedMessageError(IngestError):
    pass


class PartMissingError(IngestError):
    def __init__(self, part: int):
        super().__init__(f"part {part} missing")
        self.part = part


class DuplicatePartError(IngestError):
    def __init__(self, part: int):
        super().__init__(f"part {part} duplicated")
        self.part = part


class HeaderMissingError(IngestError):
    pass


class NotAnArchiveError(IngestError):
    pass


class ArchiveShapeError(IngestError):
    pass


class MissingFeatureError(IngestError):
    def __init__(self, feature: str):
        super().__init__(f"selected feature {feature!r} has no column")
        self.feature = feature


def parse_instant(text: str) -> int:
    """ISO-8601 instant to epoch microseconds (exact integer arithmetic)."""
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return (dt - _EPOCH) // _US


def format_instant(timestamp_us: int) -> str:
    dt = _EPOCH + timestamp_us * _US
    return dt.strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"


@dataclass(frozen=True)
class RawMessage:
    subject: str
    received: int  # epoch microseconds
    body: str
    attachments: tuple[tuple[str, bytes], ...] = ()
    recipient: str = ""
    source_path: str = ""


class Band(str, Enum):
    S = "S"
    X = "X"
    I = "I"


class BandNumber(str, Enum):
    SX20 = "sx20"
    T20K = "t20k"


@dataclass(frozen=True, order=True)
class BandKey:
    band: Band
    band_number: BandNumber


@dataclass(frozen=True)
class JplSource:
    band_key: BandKey
    dss: int
    part: int
    total_parts: int

    def __post_init__(self) -> None:
        if not 1 <= self.part <= self.total_parts:
            raise ValueError(f"part {self.part} outside 1..{self.total_parts}")


@dataclass(frozen=True)
class CecSource:
    dss: int | None = None


@dataclass(frozen=True)
class UnknownSource:
    pass


SourceKind = JplSource | CecSource | UnknownSource


@dataclass(frozen=True)
class TransmitterRecord:
    timestamp_us: int
    dss: int
    values: Mapping[str, float]


@dataclass
class SchemaReport:
    """What a payload's header actually carried versus the known schema."""

    columns_seen: list[str] = field(default_factory=list)
    columns_extra: list[str] = field(default_factory=list)
    columns_missing: list[str] = field(default_factory=list)
    rows_parsed: int = 0
    rows_rejected: int = 0
    rejected_lines: list[int] = field(default_factory=list)
    no_data: bool = False


@dataclass(frozen=True)
class MessageFilter:
    date_range: tuple[int, int] | None = None  # inclusive epoch-us bounds
    recipient: str | None = None
    subject_substring: str | None = None

    def matches(self, msg: RawMessage) -> bool:
        if self.date_range is not None:
            lo, hi = self.date_range
            if not lo <= msg.received <= hi:
                return False
        if self.recipient is not None and msg.recipient != self.recipient:
            return False
        if self.subject_substring is not None and self.subject_substring not in msg.subject:
            return False
        return True


def _read_message(path: Path) -> RawMessage:
    try:
        text = path.read_text()
    except OSError as exc:
        raise MalformedMessageError(f"{path}: unreadable ({exc})") from exc
    headers: dict[str, str] = {}
    attachments: list[tuple[str, bytes]] = []
    lines = text.splitlines()
    body_start = len(lines)
    for i, line in enumerate(lines):
        if not line.strip():
            body_start = i + 1
            break
        if ":" not in line:
            raise MalformedMessageError(f"{path}: bad header line {i + 1}: {line!r}")
        name, _, value = line.partition(":")
        name = name.strip().lower()
        value = value.strip()
        if name == "attachment":
            sibling = path.parent / value
            if not sibling.is_file():
                raise MalformedMessageError(f"{path}: attachment {value!r} not found")
            attachments.append((value, sibling.read_bytes()))
        else:
            headers[name] = value
    if "subject" not in headers:
        raise MalformedMessageError(f"{path}: no Subject header")
    if "date" not in headers:
        raise MalformedMessageError(f"{path}: no Date header")
    try:
        received = parse_instant(headers["date"])
    except ValueError as exc:
        raise MalformedMessageError(f"{path}: bad Date {headers['date']!r}") from exc
    return RawMessage(
        subject=headers["subject"],
        received=received,
        body="\n".join(lines[body_start:]),
        attachments=tuple(attachments),
        recipient=headers.get("to", ""),
        source_path=str(path),
    )


def scan_mailbox(mailbox_dir: str | Path, flt: MessageFilter | None = None) -> list[RawMessage]:
    """Read all ``*.msg`` files matching the filter, sorted by received time.

    Unreadable or malformed message files are skipped and logged; an
    unreadable directory raises MailboxIOError.
    """
    root = Path(mailbox_dir)
    if not root.is_dir():
        raise MailboxIOError(f"not a mailbox directory: {root}")
    flt = flt or MessageFilter()
    messages = []
    for path in sorted(root.glob("*.msg")):
        try:
            msg = _read_message(path)
        except MalformedMessageError as exc:
            logger.warning("skipping message: %s", exc)
            continue
        if flt.matches(msg):
            messages.append(msg)
    messages.sort(key=lambda m: (m.received, m.source_path))
    return messages


_JPL_SUBJECT = re.compile(
    r"DSS-(\d+)\s+([SXI])-(sx20|t20k)\b.*?\bpart\s+(\d+)\s+of\s+(\d+)",
    re.IGNORECASE | re.DOTALL,
)


def classify_message(msg: RawMessage) -> SourceKind:
    """Station mail when the subject matches the part grammar, replacement
    mail when a .tar.gz attachment is present, otherwise unknown."""
    m = _JPL_SUBJECT.search(msg.subject)
    if m:
        return JplSource(
            band_key=BandKey(Band(m.group(2).upper()), BandNumber(m.group(3).lower())),
            dss=int(m.group(1)),
            part=int(m.group(4)),
            total_parts=int(m.group(5)),
        )
    if any(name.endswith(".tar.gz") for name, _ in msg.attachments):
        dss_match = re.search(r"DSS-(\d+)", msg.subject)
        return CecSource(dss=int(dss_match.group(1)) if dss_match else None)
    return UnknownSource()


def merge_parts(messages: Sequence[tuple[RawMessage, JplSource]]) -> str:
    """Concatenate multi-part bodies in part order (parts are line-aligned)."""
    if not messages:
        raise ValueError("no parts to merge")
    first = messages[0][1]
    key = (first.band_key, first.dss, first.total_parts)
    seen: dict[int, str] = {}
    for msg, src in messages:
        if (src.band_key, src.dss, src.total_parts) != key:
            raise ValueError("parts from different sources cannot merge")
        if src.part in seen:
            raise DuplicatePartError(src.part)
        seen[src.part] = msg.body
    for part in range(1, first.total_parts + 1):
        if part not in seen:
            raise PartMissingError(part)
    pieces = []
    for part in range(1, first.total_parts + 1):
        body = seen[part]
        if body and not body.endswith("\n"):
            body += "\n"
        pieces.append(body)
    merged = "".join(pieces)
    return merged[:-1] if merged.endswith("\n") else merged


# Full station-transmitter parameter set; individual band pairs may carry
# a subset ("some have more parameters than others" holds per pair).
JPL_PARAMETERS = [
    "forward_power",
    "reverse_power",
    "drive_power",
    "exciter_power",
    "gain_slope",
    "running_time",
    "load_t_in_raw",
    "load_t_out_raw",
    "coll_t_out_raw",
    "vac_ion_v",
    "vac_ion_on_off",
    "fill_air_tach",
]


def parse_jpl_body(text: str, band_key: BandKey) -> tuple[list[TransmitterRecord], SchemaReport]:
    """Parse a merged station-transmitter body.

    The first non-blank line must be ``datetime,dss,<params...>``. Data
    lines that fail numeric or timestamp parsing are rejected and counted,
    never aborting the parse.
    """
    lines = text.splitlines()
    header_idx = next((i for i, ln in enumerate(lines) if ln.strip()), None)
    if header_idx is None:
        raise HeaderMissingError(f"no header line in {band_key} body")
    header = [c.strip() for c in lines[header_idx].split(",")]
    if len(header) < 2 or header[0] != "datetime" or header[1] != "dss":
        raise HeaderMissingError(f"bad header {lines[header_idx]!r}")
    params = header[2:]
    report = SchemaReport(
        columns_seen=list(header),
        columns_extra=[p for p in params if p not in JPL_PARAMETERS],
        columns_missing=[p for p in JPL_PARAMETERS if p not in params],
    )
    records = []
    for lineno, line in enumerate(lines[header_idx + 1:], start=header_idx + 2):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split(",")]
        try:
            if len(fields) != len(header):
                raise ValueError(f"{len(fields)} fields, expected {len(header)}")
            ts = parse_instant(fields[0])
            dss = int(float(fields[1]))
            values = {name: float(raw) for name, raw in zip(params, fields[2:])}
        except ValueError as exc:
            report.rows_rejected += 1
            report.rejected_lines.append(lineno)
            logger.warning("rejected line %d: %s", lineno, exc)
            continue
        records.append(TransmitterRecord(ts, dss, values))
        report.rows_parsed += 1
    report.no_data = report.rows_parsed == 0
    return records, report


def extract_cec_archive(data: bytes) -> tuple[str, str]:
    """Pull the single CSV member out of a gzip-compressed tar stream."""
    try:
        decompressed = gzip.decompress(data)
        tar = tarfile.open(fileobj=io.BytesIO(decompressed), mode="r:")
    except (gzip.BadGzipFile, tarfile.TarError, OSError, EOFError) as exc:
        raise NotAnArchiveError(str(exc)) from exc
    with tar:
        csv_members = [
            m for m in tar.getmembers() if m.isfile() and m.name.lower().endswith(".csv")
        ]
        if len(csv_members) != 1:
            raise ArchiveShapeError(
                f"expected exactly one CSV member, found {len(csv_members)}"
            )
        member = csv_members[0]
        payload = tar.extractfile(member)
        assert payload is not None
        return member.name, payload.read().decode("utf-8")


# Vendor column spellings mapped to canonical names.
CEC_ALIASES = {
    "forward_power_kw": "forward_power_kw",
    "fwd_pwr_kw": "forward_power_kw",
    "fwd_power_kw": "forward_power_kw",
    "body_current": "body_current",
    "body_current_ma": "body_current",
    "beam_current": "body_current",
}
CEC_DEFAULT_FEATURES = ("forward_power_kw", "body_current")
_CEC_TIME_COLUMNS = ("timestamp", "datetime", "time")
_CEC_DSS_COLUMNS = ("dss", "station")
_CEC_EQUIPMENT_COLUMNS = ("equipment", "equipment_class")


def parse_cec_csv(
    text: str,
    features: Sequence[str] = CEC_DEFAULT_FEATURES,
    equipment: str | None = None,
) -> tuple[list[TransmitterRecord], SchemaReport]:
    """Parse a replacement-transmitter CSV down to the selected features.

    The 70 m stations emit a superset of columns; everything outside the
    selection is reported as extra. Selecting a feature with no (aliased)
    column raises MissingFeatureError. When ``equipment`` is given, rows
    whose equipment column differs are dropped (counted as rejected).
    """
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(f.strip() for f in r)]
    if not rows:
        raise HeaderMissingError("empty CSV")
    header = [c.strip() for c in rows[0]]
    lower = [c.lower() for c in header]

    def find(names: Iterable[str]) -> int | None:
        for name in names:
            if name in lower:
                return lower.index(name)
        return None

    time_idx = find(_CEC_TIME_COLUMNS)
    if time_idx is None:
        raise HeaderMissingError(f"no timestamp column in {header}")
    dss_idx = find(_CEC_DSS_COLUMNS)
    if dss_idx is None:
        raise HeaderMissingError(f"no dss column in {header}")
    equip_idx = find(_CEC_EQUIPMENT_COLUMNS)

    canonical = [CEC_ALIASES.get(c, c) for c in lower]
    selected_idx: dict[str, int] = {}
    for feat in features:
        if feat not in canonical:
            raise MissingFeatureError(feat)
        selected_idx[feat] = canonical.index(feat)

    structural = {time_idx, dss_idx} | ({equip_idx} if equip_idx is not None else set())
    report = SchemaReport(
        columns_seen=list(header),
        columns_extra=[
            header[i]
            for i in range(len(header))
            if i not in structural and i not in selected_idx.values()
        ],
    )
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        fields = [f.strip() for f in row]
        try:
            if len(fields) != len(header):
                raise ValueError(f"{len(fields)} fields, expected {len(header)}")
            if equipment is not None and equip_idx is not None and fields[equip_idx] != equipment:
                raise ValueError(f"equipment {fields[equip_idx]!r} filtered out")
            ts = parse_instant(fields[time_idx])
            dss = int(float(fields[dss_idx]))
            values = {feat: float(fields[i]) for feat, i in selected_idx.items()}
        except ValueError as exc:
            report.rows_rejected += 1
            report.rejected_lines.append(lineno)
            logger.warning("rejected CSV line %d: %s", lineno, exc)
            continue
        records.append(TransmitterRecord(ts, dss, values))
        report.rows_parsed += 1
    report.no_data = report.rows_parsed == 0
    return records, report


# --- mailbox pipeline -------------------------------------------------------


@dataclass
class IngestSummary:
    files_written: dict[str, int] = field(default_factory=dict)  # name -> rows
    reports: dict[str, SchemaReport] = field(default_factory=dict)
    unknown_messages: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


def _records_to_csv(records: Sequence[TransmitterRecord]) -> str:
    """Canonical CSV for transmitter records (scid 0: no spacecraft)."""
    schema: dict[str, None] = {}
    for rec in records:
        for name in rec.values:
            schema.setdefault(name)
    core_records = [
        Record(
            rec.timestamp_us,
            TrackKey(rec.dss, 0),
            {name: rec.values.get(name, float("nan")) for name in schema},
            seq=i,
        )
        for i, rec in enumerate(records)
    ]
    frames = build_track_frame(core_records, Provenance.JPL)
    return write_frames_csv(frames.values())


def ingest_mailbox(
    mailbox_dir: str | Path,
    out_dir: str | Path,
    flt: MessageFilter | None = None,
    cec_features: Sequence[str] = CEC_DEFAULT_FEATURES,
    cec_equipment: str | None = None,
) -> IngestSummary:
    """Scan, classify, merge, parse, and write one canonical CSV per source.

    Station mails produce ``jpl_<band>_<bandnum>.csv`` (band pairs never
    share a file); replacement mails produce ``cec_dss<d>.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = IngestSummary()

    jpl_groups: dict[tuple[BandKey, int, int, int], list[tuple[RawMessage, JplSource]]] = {}
    cec_payloads: list[tuple[RawMessage, bytes]] = []
    for msg in scan_mailbox(mailbox_dir, flt):
        kind = classify_message(msg)
        if isinstance(kind, JplSource):
            day = msg.received // 86_400_000_000
            jpl_groups.setdefault(
                (kind.band_key, kind.dss, kind.total_parts, day), []
            ).append((msg, kind))
        elif isinstance(kind, CecSource):
            for name, data in msg.attachments:
                if name.endswith(".tar.gz"):
                    cec_payloads.append((msg, data))
                    break
        else:
            summary.unknown_messages.append(msg.subject)

    jpl_by_band: dict[BandKey, list[TransmitterRecord]] = {}
    for (band_key, dss, _total, _day), group in sorted(
        jpl_groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][3])
    ):
        label = f"{band_key.band.value}-{band_key.band_number.value} dss {dss}"
        try:
            body = merge_parts(group)
            records, report = parse_jpl_body(body, band_key)
        except IngestError as exc:
            summary.errors.append(f"{label}: {exc}")
            continue
        summary.reports[label] = report
        if report.no_data:
            logger.info("omitting empty dataset for %s", label)
            continue
        jpl_by_band.setdefault(band_key, []).extend(records)

    for band_key, records in sorted(jpl_by_band.items()):
        name = f"jpl_{band_key.band.value}_{band_key.band_number.value}.csv"
        (out / name).write_text(_records_to_csv(records))
        summary.files_written[name] = len(records)

    cec_by_dss: dict[int, list[TransmitterRecord]] = {}
    for msg, data in cec_payloads:
        try:
            member, text = extract_cec_archive(data)
            records, report = parse_cec_csv(text, cec_features, cec_equipment)
        except IngestError as exc:
            summary.errors.append(f"{msg.subject}: {exc}")
            continue
        summary.reports[member] = report
        for rec in records:
            cec_by_dss.setdefault(rec.dss, []).append(rec)

    for dss, records in sorted(cec_by_dss.items()):
        name = f"cec_dss{dss}.csv"
        (out / name).write_text(_records_to_csv(records))
        summary.files_written[name] = len(records)
    return summary
