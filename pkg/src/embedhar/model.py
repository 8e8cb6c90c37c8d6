"""Shared domain types: sensor events, activity windows, labels, home layouts.

Everything here is immutable after construction and safe to share across
parallel workers. The corpus interchange format (one JSON window per line)
and the layout config schema are owned by this module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import yaml

from .errors import ConfigError, DataError


class Modality(Enum):
    MOTION = "motion"
    DOOR = "door"
    MAGNETIC = "magnetic"
    PRESSURE = "pressure"
    SWITCH = "switch"
    TEMPERATURE = "temperature"
    SMART_PLUG = "smart-plug"
    SMARTPHONE_APP = "smartphone-app"
    OTHER = "other"

    @classmethod
    def from_raw(cls, raw: str) -> "Modality":
        """Map a raw kind string to a modality; unknown kinds become OTHER."""
        try:
            return cls(raw.strip().lower())
        except ValueError:
            return cls.OTHER


# Sensor-id prefix heuristic used by the CASAS parser and layout fallback.
_PREFIX_MODALITY = {
    "M": Modality.MOTION,
    "D": Modality.DOOR,
    "T": Modality.TEMPERATURE,
}


def modality_from_sensor_id(sensor_id: str) -> Modality:
    """Infer modality from the sensor-id prefix (M/D/T), else OTHER."""
    if sensor_id:
        inferred = _PREFIX_MODALITY.get(sensor_id[0].upper())
        if inferred is not None:
            return inferred
    return Modality.OTHER


@dataclass(frozen=True)
class SensorEvent:
    """One timestamped sensor firing."""

    timestamp: datetime
    sensor_id: str
    modality: Modality
    value: str

    def __post_init__(self):
        if not isinstance(self.timestamp, datetime):
            raise DataError(f"event timestamp must be a datetime, got {self.timestamp!r}")
        if not self.sensor_id:
            raise DataError("event sensor_id must be non-empty")
        if not isinstance(self.modality, Modality):
            raise DataError(f"event modality must be a Modality, got {self.modality!r}")


@dataclass(frozen=True)
class ActivityWindow:
    """An ordered sequence of events forming one datapoint.

    The constructor does not enforce invariants so that malformed windows
    can be represented and reported; use :func:`validate_window`.
    """

    events: tuple[SensorEvent, ...]
    start: datetime
    end: datetime
    ground_truth: Optional[str]
    window_id: str

    @classmethod
    def from_events(
        cls,
        events: Sequence[SensorEvent],
        window_id: str,
        ground_truth: Optional[str] = None,
    ) -> "ActivityWindow":
        """Build a window whose start/end are taken from the event list."""
        if not events:
            raise DataError(f"window {window_id!r}: cannot build a window from zero events")
        evs = tuple(events)
        return cls(
            events=evs,
            start=evs[0].timestamp,
            end=evs[-1].timestamp,
            ground_truth=ground_truth,
            window_id=window_id,
        )


def validate_window(w: ActivityWindow) -> tuple[str, ...]:
    """Return all invariant violations for a window; empty tuple means ok."""
    violations = []
    if not w.events:
        violations.append("empty events")
        return tuple(violations)
    for a, b in zip(w.events, w.events[1:]):
        if b.timestamp < a.timestamp:
            violations.append("unsorted events")
            break
    if w.start != w.events[0].timestamp:
        violations.append("start does not match first event timestamp")
    if w.end != w.events[-1].timestamp:
        violations.append("end does not match last event timestamp")
    if w.end < w.start:
        violations.append("end precedes start")
    return tuple(violations)


@dataclass(frozen=True)
class ActivityLabel:
    """Canonical activity label plus a human-readable display variant."""

    name: str
    display: str = ""

    def __post_init__(self):
        if not self.name:
            raise DataError("label name must be non-empty")
        if not self.display:
            object.__setattr__(self, "display", self.name)


def canonical_label_order(labels: Iterable[ActivityLabel]) -> list[ActivityLabel]:
    """Sort labels lexicographically by name; duplicates are an error.

    This order is the canonical tie-break order used everywhere a
    deterministic ranking of labels is needed.
    """
    out = sorted(labels, key=lambda l: l.name)
    for a, b in zip(out, out[1:]):
        if a.name == b.name:
            raise DataError(f"duplicate label {a.name!r}")
    return out


def canonical_label_names(names: Iterable[str]) -> list[str]:
    """Same canonical order for bare label-name strings."""
    out = sorted(names)
    for a, b in zip(out, out[1:]):
        if a == b:
            raise DataError(f"duplicate label {a!r}")
    return out


# --- Home layout -------------------------------------------------------

FALLBACK_LOCATION = "in an unknown location"
_PLACEHOLDER_CHARS = ("<", ">")


@dataclass(frozen=True)
class SensorInfo:
    """Prose phrases and modality for one sensor."""

    location_phrase: str
    context_phrase: str
    modality: Modality


@dataclass(frozen=True)
class HomeLayout:
    """Per-sensor location/context phrases for one home.

    Lookup is total: unmapped sensor ids get a fixed fallback record so
    summaries always render.
    """

    home_name: str
    sensors: Mapping[str, SensorInfo] = field(default_factory=dict)

    def lookup(self, sensor_id: str) -> SensorInfo:
        info = self.sensors.get(sensor_id)
        if info is not None:
            return info
        inferred = modality_from_sensor_id(sensor_id)
        word = inferred.value if inferred is not Modality.OTHER else "unidentified"
        return SensorInfo(
            location_phrase=FALLBACK_LOCATION,
            context_phrase=f"{word} sensor",
            modality=inferred,
        )


def lookup_sensor(layout: HomeLayout, sensor_id: str) -> SensorInfo:
    return layout.lookup(sensor_id)


def _check_phrase(what: str, sensor_id: str, phrase: str) -> str:
    if not isinstance(phrase, str) or not phrase.strip():
        raise ConfigError(f"layout sensor {sensor_id!r}: {what} must be non-empty prose")
    for ch in _PLACEHOLDER_CHARS:
        if ch in phrase:
            raise ConfigError(
                f"layout sensor {sensor_id!r}: {what} contains placeholder token {ch!r}"
            )
    # Digits are rejected here so that generated summaries can guarantee
    # their no-digits invariant; spell numbers out in the phrase instead.
    if any(c.isdigit() for c in phrase):
        raise ConfigError(
            f"layout sensor {sensor_id!r}: {what} contains a digit; write numbers as words"
        )
    return phrase.strip()


def load_layout(path: Union[str, Path]) -> HomeLayout:
    """Load and validate a layout config file (YAML or JSON).

    Schema::

        home_name: <string>
        sensors:
          <sensor_id>:
            location_phrase: <prose, no '<'/'>', no digits>
            context_phrase:  <prose, no '<'/'>', no digits>
            modality: motion | door | magnetic | pressure | switch |
                      temperature | smart-plug | smartphone-app | other
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"layout file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"layout file {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict) or "sensors" not in raw:
        raise ConfigError(f"layout file {path} must be a mapping with a 'sensors' key")
    sensors = {}
    for sensor_id, entry in (raw.get("sensors") or {}).items():
        sid = str(sensor_id)
        if not isinstance(entry, dict):
            raise ConfigError(f"layout sensor {sid!r}: entry must be a mapping")
        missing = {"location_phrase", "context_phrase", "modality"} - set(entry)
        if missing:
            raise ConfigError(f"layout sensor {sid!r}: missing fields {sorted(missing)}")
        mod_raw = str(entry["modality"]).strip().lower()
        try:
            modality = Modality(mod_raw)
        except ValueError:
            raise ConfigError(
                f"layout sensor {sid!r}: unknown modality {mod_raw!r}"
            ) from None
        sensors[sid] = SensorInfo(
            location_phrase=_check_phrase("location_phrase", sid, entry["location_phrase"]),
            context_phrase=_check_phrase("context_phrase", sid, entry["context_phrase"]),
            modality=modality,
        )
    return HomeLayout(home_name=str(raw.get("home_name", path.stem)), sensors=sensors)


# --- Corpus interchange format -----------------------------------------
#
# One window per line:
#   {"window_id": ..., "ground_truth": ... | null,
#    "events": [[iso-timestamp, sensor_id, modality, value], ...]}


def window_to_record(w: ActivityWindow) -> dict:
    return {
        "window_id": w.window_id,
        "ground_truth": w.ground_truth,
        "events": [
            [e.timestamp.isoformat(), e.sensor_id, e.modality.value, e.value]
            for e in w.events
        ],
    }


def window_from_record(record: dict) -> ActivityWindow:
    try:
        events = tuple(
            SensorEvent(
                timestamp=datetime.fromisoformat(ts),
                sensor_id=sid,
                modality=Modality.from_raw(mod),
                value=str(val),
            )
            for ts, sid, mod, val in record["events"]
        )
        return ActivityWindow(
            events=events,
            start=events[0].timestamp,
            end=events[-1].timestamp,
            ground_truth=record.get("ground_truth"),
            window_id=record["window_id"],
        )
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise DataError(f"malformed corpus record: {exc}") from exc


def write_corpus(windows: Iterable[ActivityWindow], path: Union[str, Path]) -> int:
    """Write windows to a line-delimited corpus file; returns the count."""
    path = Path(path)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for w in windows:
            fh.write(json.dumps(window_to_record(w), sort_keys=True, separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


def read_corpus(path: Union[str, Path], validate: bool = True) -> list[ActivityWindow]:
    """Read a corpus file; optionally validate every window's invariants."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    windows = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                w = window_from_record(record)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if validate:
                violations = validate_window(w)
                if violations:
                    raise DataError(
                        f"{path}:{lineno}: window {w.window_id!r} invalid: "
                        + "; ".join(violations)
                    )
            windows.append(w)
    return windows
