"""Parsers for raw dataset files and annotation-driven segmentation.

Two adapters produce streams of :class:`RawLogLine`: the CASAS
whitespace-format parser and a generic CSV adapter driven by a column
mapping. :func:`segment_by_annotations` turns any such stream into
ActivityWindows using ground-truth begin/end markers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date as date_t, datetime, time as time_t
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

import yaml

from .errors import ConfigError, DataError
from .model import (
    ActivityWindow,
    HomeLayout,
    Modality,
    SensorEvent,
    modality_from_sensor_id,
)

_MARKERS = ("begin", "end")


@dataclass(frozen=True)
class Annotation:
    label: str
    marker: str  # "begin" | "end", canonical lowercase

    def __post_init__(self):
        if self.marker not in _MARKERS:
            raise DataError(f"annotation marker must be begin/end, got {self.marker!r}")


@dataclass(frozen=True)
class RawLogLine:
    """One parsed input line, before window assembly.

    A line usually carries at most one annotation; the CSV adapter may
    attach two (begin and end) when a label run is a single row.
    """

    date: date_t
    time: time_t
    sensor_id: str
    value: str
    modality: Modality
    annotations: tuple[Annotation, ...] = ()

    @property
    def timestamp(self) -> datetime:
        return datetime.combine(self.date, self.time)


@dataclass
class SegmentationReport:
    windows_emitted: int = 0
    orphan_begins: int = 0
    orphan_ends: int = 0
    lines_skipped: dict[str, int] = field(default_factory=dict)
    events_parsed: int = 0

    def skip(self, reason: str) -> None:
        self.lines_skipped[reason] = self.lines_skipped.get(reason, 0) + 1

    @property
    def total_skipped(self) -> int:
        return sum(self.lines_skipped.values())

    def summary(self) -> str:
        parts = [
            f"windows={self.windows_emitted}",
            f"orphan_begins={self.orphan_begins}",
            f"orphan_ends={self.orphan_ends}",
            f"events_parsed={self.events_parsed}",
            f"lines_skipped={self.total_skipped}",
        ]
        for reason, n in sorted(self.lines_skipped.items()):
            parts.append(f"  skipped[{reason}]={n}")
        return "\n".join(parts)


class LineParseError(DataError):
    """Recoverable per-line parse failure; the caller decides skip vs abort."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


def _parse_casas_timestamp(date_s: str, time_s: str, line_no: int) -> datetime:
    for fmt in ("%Y-%m-%d %H:%M:%S.%f", "%Y-%m-%d %H:%M:%S"):
        try:
            return datetime.strptime(f"{date_s} {time_s}", fmt)
        except ValueError:
            continue
    raise LineParseError(line_no, f"bad timestamp {date_s!r} {time_s!r}")


def parse_casas_line(line: str, line_no: int = 0) -> RawLogLine:
    """Parse one line of the CASAS whitespace format.

    Grammar: ``DATE TIME SENSOR VALUE [LABEL MARKER]`` with DATE =
    YYYY-MM-DD and TIME = HH:MM:SS[.ffffff]; 4 or 6 whitespace-separated
    fields are accepted, anything else is malformed.
    """
    fields = line.split()
    if len(fields) not in (4, 6):
        raise LineParseError(line_no, f"expected 4 or 6 fields, got {len(fields)}")
    ts = _parse_casas_timestamp(fields[0], fields[1], line_no)
    sensor_id, value = fields[2], fields[3]
    annotations: tuple[Annotation, ...] = ()
    if len(fields) == 6:
        label, marker = fields[4], fields[5].lower()
        if marker not in _MARKERS:
            raise LineParseError(line_no, f"bad annotation marker {fields[5]!r}")
        annotations = (Annotation(label=label, marker=marker),)
    return RawLogLine(
        date=ts.date(),
        time=ts.time(),
        sensor_id=sensor_id,
        value=value,
        modality=modality_from_sensor_id(sensor_id),
        annotations=annotations,
    )


def _to_event(line: RawLogLine, layout: Optional[HomeLayout]) -> SensorEvent:
    modality = line.modality
    if layout is not None and line.sensor_id in layout.sensors:
        modality = layout.sensors[line.sensor_id].modality
    return SensorEvent(
        timestamp=line.timestamp,
        sensor_id=line.sensor_id,
        modality=modality,
        value=line.value,
    )


def segment_by_annotations(
    lines: Iterable[RawLogLine],
    layout: Optional[HomeLayout] = None,
    window_id_prefix: str = "w",
    report: Optional[SegmentationReport] = None,
) -> tuple[list[ActivityWindow], SegmentationReport]:
    """Assemble windows from begin/end annotations, single pass.

    A window opens at ``begin(L)`` and closes at the matching ``end(L)``;
    every event between the two markers (inclusive) belongs to the window,
    so differently-labeled nested or overlapping windows each collect the
    shared events. A duplicate ``begin`` for an already-open label is
    ignored and counted as an orphan, as is an ``end`` with no open window
    and a ``begin`` still open at end of input.
    """
    if report is None:
        report = SegmentationReport()
    open_windows: dict[str, list[SensorEvent]] = {}
    windows: list[ActivityWindow] = []
    seq = 0
    for line in lines:
        for ann in line.annotations:
            if ann.marker == "begin":
                if ann.label in open_windows:
                    report.orphan_begins += 1
                else:
                    open_windows[ann.label] = []
        event = _to_event(line, layout)
        report.events_parsed += 1
        for events in open_windows.values():
            events.append(event)
        for ann in line.annotations:
            if ann.marker == "end":
                events = open_windows.pop(ann.label, None)
                if events is None:
                    report.orphan_ends += 1
                    continue
                seq += 1
                # stable sort absorbs the occasional clock jitter in real
                # logs; emitted windows must always pass validate_window
                events.sort(key=lambda e: e.timestamp)
                windows.append(
                    ActivityWindow.from_events(
                        events,
                        window_id=f"{window_id_prefix}{seq:06d}",
                        ground_truth=ann.label,
                    )
                )
    report.orphan_begins += len(open_windows)
    report.windows_emitted = len(windows)
    return windows, report


def iter_casas_lines(
    path: Union[str, Path],
    report: SegmentationReport,
    on_error: str = "skip",
) -> Iterator[RawLogLine]:
    """Yield parsed lines from a CASAS log, counting skips in the report.

    ``on_error="abort"`` re-raises the first :class:`LineParseError`.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", errors="replace") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                yield parse_casas_line(raw, line_no)
            except LineParseError as exc:
                if on_error == "abort":
                    raise
                report.skip(exc.reason)


def ingest_casas_file(
    path: Union[str, Path],
    layout: Optional[HomeLayout] = None,
    window_id_prefix: Optional[str] = None,
) -> tuple[list[ActivityWindow], SegmentationReport]:
    """Parse and segment one CASAS log file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    if window_id_prefix is None:
        window_id_prefix = f"{path.stem}-"
    report = SegmentationReport()
    lines = iter_casas_lines(path, report)
    return segment_by_annotations(
        lines, layout=layout, window_id_prefix=window_id_prefix, report=report
    )


# --- Generic CSV adapter ------------------------------------------------


@dataclass(frozen=True)
class CsvMapping:
    """Names the CSV columns holding each field.

    ``label`` is optional; when present, consecutive runs of the same
    label become begin/end markers at the run boundaries. ``modality`` is
    an optional column of raw kind strings (unknown kinds map to other).
    ``timestamp_format`` is a strptime pattern; by default ISO-8601 is
    parsed.
    """

    timestamp: str
    sensor_id: str
    value: str
    label: Optional[str] = None
    modality: Optional[str] = None
    timestamp_format: Optional[str] = None


def load_csv_mapping(path: Union[str, Path]) -> CsvMapping:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"CSV mapping file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"CSV mapping {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"CSV mapping {path} must be a mapping")
    required = {"timestamp", "sensor_id", "value"}
    missing = required - set(raw)
    if missing:
        raise ConfigError(f"CSV mapping {path}: missing keys {sorted(missing)}")
    known = required | {"label", "modality", "timestamp_format"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"CSV mapping {path}: unknown keys {sorted(unknown)}")
    return CsvMapping(**{k: raw[k] for k in raw})


def _parse_csv_timestamp(text: str, fmt: Optional[str]) -> datetime:
    if fmt:
        return datetime.strptime(text, fmt)
    return datetime.fromisoformat(text)


def parse_generic_csv(
    path: Union[str, Path],
    mapping: CsvMapping,
    report: Optional[SegmentationReport] = None,
) -> Iterator[RawLogLine]:
    """Yield events from a headered CSV in file order.

    Label-column runs are converted to begin/end annotations at the run
    boundaries; a single-row run carries both markers. Unparseable rows
    are counted in the report and skipped; a missing mapped column is a
    fatal config error.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    if report is None:
        report = SegmentationReport()

    def rows() -> Iterator[tuple[RawLogLine, str]]:
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            needed = [mapping.timestamp, mapping.sensor_id, mapping.value]
            if mapping.label:
                needed.append(mapping.label)
            if mapping.modality:
                needed.append(mapping.modality)
            for col in needed:
                if col not in header:
                    raise ConfigError(
                        f"{path}: mapped column {col!r} not in CSV header {header}"
                    )
            for row in reader:
                try:
                    ts = _parse_csv_timestamp(
                        (row[mapping.timestamp] or "").strip(), mapping.timestamp_format
                    )
                except ValueError:
                    report.skip("bad timestamp")
                    continue
                sensor_id = (row[mapping.sensor_id] or "").strip()
                if not sensor_id:
                    report.skip("empty sensor id")
                    continue
                if mapping.modality:
                    modality = Modality.from_raw(row.get(mapping.modality) or "")
                else:
                    modality = modality_from_sensor_id(sensor_id)
                label = ""
                if mapping.label:
                    label = (row.get(mapping.label) or "").strip()
                yield (
                    RawLogLine(
                        date=ts.date(),
                        time=ts.time(),
                        sensor_id=sensor_id,
                        value=(row[mapping.value] or "").strip(),
                        modality=modality,
                    ),
                    label,
                )

    prev: Optional[tuple[RawLogLine, str]] = None
    label_before_prev = ""
    for line, label in rows():
        if prev is not None:
            yield _mark_run_boundaries(prev[0], prev[1], label_before_prev, label)
            label_before_prev = prev[1]
        prev = (line, label)
    if prev is not None:
        yield _mark_run_boundaries(prev[0], prev[1], label_before_prev, "")


def _mark_run_boundaries(
    line: RawLogLine, label: str, before: str, after: str
) -> RawLogLine:
    if not label:
        return line
    annotations = []
    if label != before:
        annotations.append(Annotation(label=label, marker="begin"))
    if label != after:
        annotations.append(Annotation(label=label, marker="end"))
    if not annotations:
        return line
    return RawLogLine(
        date=line.date,
        time=line.time,
        sensor_id=line.sensor_id,
        value=line.value,
        modality=line.modality,
        annotations=tuple(annotations),
    )


def ingest_csv_file(
    path: Union[str, Path],
    mapping: CsvMapping,
    layout: Optional[HomeLayout] = None,
    window_id_prefix: Optional[str] = None,
) -> tuple[list[ActivityWindow], SegmentationReport]:
    """Parse and segment one mapped CSV file."""
    path = Path(path)
    if window_id_prefix is None:
        window_id_prefix = f"{path.stem}-"
    report = SegmentationReport()
    lines = parse_generic_csv(path, mapping, report=report)
    return segment_by_annotations(
        lines, layout=layout, window_id_prefix=window_id_prefix, report=report
    )


def filter_labels(
    windows: Iterable[ActivityWindow], drop: Iterable[str]
) -> list[ActivityWindow]:
    """Remove windows whose ground truth is in ``drop``; order preserved.

    An empty ``drop`` set is the identity. The usual call drops catch-all
    classes before evaluating against a fixed label set.
    """
    drop_set = set(drop)
    return [w for w in windows if w.ground_truth not in drop_set]
