"""Rendering of sensor windows into natural-language summaries.

Each window becomes a short paragraph with a fixed sentence order: time,
duration, top locations, top sensors, then any special-rule sentences.
Every number is spelled out in words; generated text never contains a
digit or a placeholder bracket. The module also owns the registry of
one-sentence activity descriptors that the classifier embeds as anchors.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

import yaml

from .errors import ConfigError, DataError
from .model import ActivityWindow, HomeLayout, Modality, validate_window

log = logging.getLogger(__name__)

_ONES = (
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight",
    "nine", "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen",
    "sixteen", "seventeen", "eighteen", "nineteen",
)
_TENS = (
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy",
    "eighty", "ninety",
)


def int_to_words(n: int) -> str:
    """Spell a non-negative integer in English words.

    Hyphenates 21..99 and uses no "and" ("one hundred five"). Supports
    values up to 999,999,999, far beyond anything a summary needs.
    """
    if not isinstance(n, int) or isinstance(n, bool):
        raise ValueError(f"expected int, got {type(n).__name__}")
    if n < 0 or n > 999_999_999:
        raise ValueError(f"number out of range: {n}")
    if n < 20:
        return _ONES[n]
    if n < 100:
        tens, rem = divmod(n, 10)
        return _TENS[tens] if rem == 0 else f"{_TENS[tens]}-{_ONES[rem]}"
    if n < 1_000:
        hundreds, rem = divmod(n, 100)
        head = f"{_ONES[hundreds]} hundred"
        return head if rem == 0 else f"{head} {int_to_words(rem)}"
    for scale, scale_word in ((1_000_000, "million"), (1_000, "thousand")):
        if n >= scale:
            major, rem = divmod(n, scale)
            head = f"{int_to_words(major)} {scale_word}"
            return head if rem == 0 else f"{head} {int_to_words(rem)}"
    raise AssertionError("unreachable")


def _check_prose(context: str, text: str, allow_terminal_period: bool = False) -> str:
    """Validate a config-supplied phrase destined for generated text."""
    if not isinstance(text, str) or not text.strip():
        raise ConfigError(f"{context}: text must be non-empty prose")
    text = text.strip()
    for ch in ("<", ">"):
        if ch in text:
            raise ConfigError(f"{context}: contains placeholder token {ch!r}")
    if any(c.isdigit() for c in text):
        raise ConfigError(f"{context}: contains a digit; write numbers as words")
    for ch in ("!", "?"):
        if ch in text:
            raise ConfigError(f"{context}: contains sentence break {ch!r}")
    if "." in text:
        if allow_terminal_period and text.count(".") == 1 and text.endswith("."):
            pass
        else:
            raise ConfigError(f"{context}: contains an interior period")
    return text


# --- Configuration ------------------------------------------------------


@dataclass(frozen=True)
class PeriodRange:
    """Half-open hour range [start_hour, end_hour) with a prose label."""

    label: str
    start_hour: int
    end_hour: int

    def __post_init__(self):
        _check_prose(f"period {self.label!r}", self.label)
        if not (0 <= self.start_hour < self.end_hour <= 24):
            raise ConfigError(
                f"period {self.label!r}: bad hour range "
                f"[{self.start_hour}, {self.end_hour})"
            )


@dataclass(frozen=True)
class RuleTrigger:
    """Any-event predicate: an event must match every specified field."""

    sensor_ids: tuple[str, ...] = ()
    modalities: tuple[Modality, ...] = ()
    value_pattern: Optional[str] = None

    def __post_init__(self):
        if not self.sensor_ids and not self.modalities and self.value_pattern is None:
            raise ConfigError("rule trigger specifies no matchable field")
        for sid in self.sensor_ids:
            if not isinstance(sid, str) or not sid:
                raise ConfigError(f"rule trigger: bad sensor id {sid!r}")
        for m in self.modalities:
            if not isinstance(m, Modality):
                raise ConfigError(f"rule trigger: bad modality {m!r}")
        if self.value_pattern is not None:
            try:
                re.compile(self.value_pattern)
            except re.error as exc:
                raise ConfigError(
                    f"rule trigger: bad value pattern {self.value_pattern!r}: {exc}"
                ) from exc

    def matches(self, event) -> bool:
        if self.sensor_ids and event.sensor_id not in self.sensor_ids:
            return False
        if self.modalities and event.modality not in self.modalities:
            return False
        if self.value_pattern is not None:
            if re.search(self.value_pattern, event.value) is None:
                return False
        return True

    def fires(self, w: ActivityWindow) -> bool:
        return any(self.matches(e) for e in w.events)


@dataclass(frozen=True)
class SpecialRule:
    """Declarative per-dataset tweak applied when its trigger fires.

    Exactly one effect is set: ``force_sensor`` pushes a sensor into the
    top-k sensor slots, ``append_text`` adds one sentence after the
    skeleton.
    """

    name: str
    trigger: RuleTrigger
    force_sensor: Optional[str] = None
    append_text: Optional[str] = None

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise ConfigError("special rule needs a non-empty name")
        if (self.force_sensor is None) == (self.append_text is None):
            raise ConfigError(
                f"rule {self.name!r}: set exactly one of "
                "force_sensor_into_topk / append_sentence"
            )
        if self.force_sensor is not None and not self.force_sensor:
            raise ConfigError(f"rule {self.name!r}: empty forced sensor id")
        if self.append_text is not None:
            object.__setattr__(
                self, "append_text", _check_prose(f"rule {self.name!r}", self.append_text)
            )


DEFAULT_PERIODS = (
    PeriodRange("past midnight", 0, 4),
    PeriodRange("early morning", 4, 7),
    PeriodRange("morning", 7, 12),
    PeriodRange("afternoon", 12, 17),
    PeriodRange("evening", 17, 21),
    PeriodRange("night", 21, 24),
)


@dataclass(frozen=True)
class SummaryConfig:
    periods: tuple[PeriodRange, ...] = DEFAULT_PERIODS
    top_k_locations: int = 2
    top_k_sensors: int = 2
    special_rules: tuple[SpecialRule, ...] = ()

    def __post_init__(self):
        if self.top_k_locations < 1 or self.top_k_sensors < 1:
            raise ConfigError("top_k values must be >= 1")
        ordered = sorted(self.periods, key=lambda p: p.start_hour)
        if not ordered:
            raise ConfigError("periods must not be empty")
        if ordered[0].start_hour != 0 or ordered[-1].end_hour != 24:
            raise ConfigError("periods must cover hours zero through twenty-four")
        for a, b in zip(ordered, ordered[1:]):
            if a.end_hour != b.start_hour:
                raise ConfigError(
                    f"periods {a.label!r} and {b.label!r} leave a gap or overlap"
                )
        object.__setattr__(self, "periods", tuple(ordered))
        names = [r.name for r in self.special_rules]
        if len(names) != len(set(names)):
            raise ConfigError("special rule names must be unique")


def default_summary_config() -> SummaryConfig:
    return SummaryConfig()


def period_label(hour: int, cfg: SummaryConfig) -> str:
    for p in cfg.periods:
        if p.start_hour <= hour < p.end_hour:
            return p.label
    raise DataError(f"hour {hour} outside 0..23")


def load_summary_config(path: Union[str, Path]) -> SummaryConfig:
    """Load a summary config file (YAML).

    Schema (all keys optional)::

        top_k_locations: 2
        top_k_sensors: 2
        periods:
          - {label: morning, start: 7, end: 12}
          # ... must partition hours 0..24
        special_rules:
          - name: phone-call-mention
            trigger: {modalities: [smartphone-app]}
            force_sensor_into_topk: P001
          - name: front-door-note
            trigger: {sensor_ids: [D001]}
            append_sentence: The front door was used during this activity
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"summary config not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"summary config {path} is not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"summary config {path} must be a mapping")
    known = {"top_k_locations", "top_k_sensors", "periods", "special_rules"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"summary config {path}: unknown keys {sorted(unknown)}")

    kwargs: dict = {}
    for key in ("top_k_locations", "top_k_sensors"):
        if key in raw:
            value = raw[key]
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"summary config {path}: {key} must be an integer")
            kwargs[key] = value
    if "periods" in raw:
        if not isinstance(raw["periods"], list):
            raise ConfigError(f"summary config {path}: periods must be a list")
        periods = []
        for item in raw["periods"]:
            if not isinstance(item, dict) or set(item) != {"label", "start", "end"}:
                raise ConfigError(
                    f"summary config {path}: each period needs exactly "
                    "label/start/end"
                )
            if not isinstance(item["start"], int) or not isinstance(item["end"], int):
                raise ConfigError(
                    f"summary config {path}: period hours must be integers"
                )
            periods.append(
                PeriodRange(
                    label=str(item["label"]),
                    start_hour=item["start"],
                    end_hour=item["end"],
                )
            )
        kwargs["periods"] = tuple(periods)
    if "special_rules" in raw:
        if not isinstance(raw["special_rules"], list):
            raise ConfigError(f"summary config {path}: special_rules must be a list")
        kwargs["special_rules"] = tuple(
            _rule_from_mapping(path, item) for item in raw["special_rules"]
        )
    return SummaryConfig(**kwargs)


def _rule_from_mapping(path: Path, item) -> SpecialRule:
    if not isinstance(item, dict):
        raise ConfigError(f"summary config {path}: each special rule must be a mapping")
    known = {"name", "trigger", "force_sensor_into_topk", "append_sentence"}
    unknown = set(item) - known
    if unknown:
        raise ConfigError(
            f"summary config {path}: rule has unknown keys {sorted(unknown)}"
        )
    name = item.get("name")
    trig_raw = item.get("trigger")
    if not isinstance(trig_raw, dict):
        raise ConfigError(f"summary config {path}: rule {name!r} needs a trigger mapping")
    trig_known = {"sensor_ids", "modalities", "value_pattern"}
    trig_unknown = set(trig_raw) - trig_known
    if trig_unknown:
        raise ConfigError(
            f"summary config {path}: rule {name!r} trigger has unknown keys "
            f"{sorted(trig_unknown)}"
        )
    modalities = []
    for raw_mod in trig_raw.get("modalities", ()) or ():
        try:
            modalities.append(Modality(str(raw_mod)))
        except ValueError:
            valid = ", ".join(m.value for m in Modality)
            raise ConfigError(
                f"summary config {path}: rule {name!r} trigger names unknown "
                f"modality {raw_mod!r} (valid: {valid})"
            ) from None
    trigger = RuleTrigger(
        sensor_ids=tuple(str(s) for s in trig_raw.get("sensor_ids", ()) or ()),
        modalities=tuple(modalities),
        value_pattern=trig_raw.get("value_pattern"),
    )
    return SpecialRule(
        name=str(name) if name is not None else "",
        trigger=trigger,
        force_sensor=item.get("force_sensor_into_topk"),
        append_text=item.get("append_sentence"),
    )


# --- Rendering ----------------------------------------------------------


@dataclass(frozen=True)
class Summary:
    """One rendered window: ordered sentences plus the joined text."""

    window_id: str
    parts: tuple[str, ...]

    @property
    def text(self) -> str:
        return ". ".join(self.parts) + "."


def _clock_phrase(hour: int, cfg: SummaryConfig) -> str:
    meridiem = "AM" if hour < 12 else "PM"
    return f"{int_to_words(hour)} hours {meridiem} {period_label(hour, cfg)}"


def time_sentence(w: ActivityWindow, cfg: SummaryConfig) -> str:
    """Start and end clock sentence at hour granularity."""
    return (
        f"The activity started at {_clock_phrase(w.start.hour, cfg)}"
        f" and ended at {_clock_phrase(w.end.hour, cfg)}"
    )


def duration_sentence(w: ActivityWindow) -> str:
    """Elapsed-time sentence; unit picked from the raw span, then rounded.

    Rounding is half-up on the chosen unit, so a fifty-nine-and-a-half
    minute window reads "sixty minutes", not "one hours".
    """
    total = (w.end - w.start).total_seconds()
    if total < 60:
        unit, divisor = "second", 1.0
    elif total < 3600:
        unit, divisor = "minute", 60.0
    else:
        unit, divisor = "hour", 3600.0
    magnitude = int(math.floor(total / divisor + 0.5))
    unit_word = unit if magnitude == 1 else unit + "s"
    return f"The activity was performed for {int_to_words(magnitude)} {unit_word}"


def _ranked_by_count(keys: Iterable[str]) -> list[str]:
    """Distinct keys by descending count; ties go to the earlier arrival."""
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    for i, key in enumerate(keys):
        counts[key] = counts.get(key, 0) + 1
        first_seen.setdefault(key, i)
    return sorted(counts, key=lambda k: (-counts[k], first_seen[k]))


def location_sentence(w: ActivityWindow, layout: HomeLayout, cfg: SummaryConfig) -> str:
    """Top locations by event count; phrases carry their own preposition."""
    ranked = _ranked_by_count(
        layout.lookup(e.sensor_id).location_phrase for e in w.events
    )[: cfg.top_k_locations]
    if len(ranked) == 1:
        return f"The activity is taking place {ranked[0]} mainly"
    rest = " and ".join(ranked[1:])
    return f"The activity is taking place {ranked[0]} mainly and parts of it {rest}"


def fired_rules(w: ActivityWindow, cfg: SummaryConfig) -> tuple[SpecialRule, ...]:
    return tuple(r for r in cfg.special_rules if r.trigger.fires(w))


def sensor_sentence(
    w: ActivityWindow,
    layout: HomeLayout,
    cfg: SummaryConfig,
    fired: Optional[tuple[SpecialRule, ...]] = None,
) -> str:
    """Top sensors by event count, with forced sensors taking the lead slots."""
    if fired is None:
        fired = fired_rules(w, cfg)
    ranked = _ranked_by_count(e.sensor_id for e in w.events)
    forced: list[str] = []
    for rule in fired:
        if rule.force_sensor is not None and rule.force_sensor not in forced:
            forced.append(rule.force_sensor)
    forced = forced[: cfg.top_k_sensors]
    chosen = forced + [s for s in ranked if s not in forced]
    chosen = chosen[: cfg.top_k_sensors]
    contexts = [layout.lookup(s).context_phrase for s in chosen]
    if len(contexts) == 1:
        return f"The most commonly fired sensor in this activity is {contexts[0]}"
    listed = ", ".join(contexts[:-1]) + " and " + contexts[-1]
    return (
        f"The {int_to_words(len(contexts))} most commonly fired sensors "
        f"in this activity are {listed}"
    )


def summarize(
    w: ActivityWindow, layout: HomeLayout, cfg: Optional[SummaryConfig] = None
) -> Summary:
    """Render one window into its summary paragraph.

    Sentence order is fixed: time, duration, locations, sensors, then any
    append-sentence rules in config order. Pure function; identical
    inputs give byte-identical text.
    """
    if cfg is None:
        cfg = default_summary_config()
    problems = validate_window(w)
    if problems:
        raise DataError(f"window {w.window_id!r}: " + "; ".join(problems))
    fired = fired_rules(w, cfg)
    parts = [
        time_sentence(w, cfg),
        duration_sentence(w),
        location_sentence(w, layout, cfg),
        sensor_sentence(w, layout, cfg, fired),
    ]
    for rule in fired:
        if rule.append_text is not None:
            parts.append(rule.append_text)
    return Summary(window_id=w.window_id, parts=tuple(parts))


# --- Activity descriptors -----------------------------------------------


@dataclass(frozen=True)
class ActivityDescriptor:
    """One-sentence description of an activity, embedded as an anchor."""

    label: str
    text: str

    def __post_init__(self):
        if not self.label or not isinstance(self.label, str):
            raise ConfigError("descriptor needs a non-empty label")
        object.__setattr__(
            self,
            "text",
            _check_descriptor_text(self.label, self.text),
        )


def _check_descriptor_text(label: str, text) -> str:
    if not isinstance(text, str) or not text.strip():
        raise ConfigError(f"descriptor {label!r}: text must be non-empty prose")
    text = text.strip()
    for ch in ("<", ">"):
        if ch in text:
            raise ConfigError(
                f"descriptor {label!r}: contains placeholder token {ch!r}"
            )
    for ch in ("!", "?"):
        if ch in text:
            raise ConfigError(f"descriptor {label!r}: contains sentence break {ch!r}")
    if "." in text and not (text.count(".") == 1 and text.endswith(".")):
        raise ConfigError(
            f"descriptor {label!r}: must be a single sentence "
            "(period allowed only at the end)"
        )
    return text


_DURATION_CUES = ("second", "minute", "hour")


def lint_descriptor(desc: ActivityDescriptor) -> tuple[str, ...]:
    """Advisory checks for the duration-location-sensors ordering.

    These are warnings, not errors: the ordering convention helps keep
    descriptors comparable but nothing downstream depends on it.
    """
    warnings = []
    lowered = desc.text.lower()
    cue_positions = [lowered.find(c) for c in _DURATION_CUES if c in lowered]
    if not cue_positions:
        warnings.append(
            f"descriptor {desc.label!r}: no duration cue "
            "(second/minute/hour) found"
        )
    else:
        clause = lowered.find(" when ")
        if clause != -1 and min(cue_positions) > clause:
            warnings.append(
                f"descriptor {desc.label!r}: duration cue appears after the "
                "descriptive clause; state duration first"
            )
    return tuple(warnings)


class _NoDuplicateKeyLoader(yaml.SafeLoader):
    """YAML loader that rejects duplicate mapping keys instead of merging."""


def _construct_mapping_no_dups(loader, node, deep=False):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise ConfigError(f"duplicate label {key!r}")
        seen.add(key)
    return yaml.SafeLoader.construct_mapping(loader, node, deep=deep)


_NoDuplicateKeyLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping_no_dups
)


def load_descriptors(path: Union[str, Path]) -> dict[str, ActivityDescriptor]:
    """Load the label → descriptor registry from a YAML mapping file.

    Every entry must be a single sentence with no placeholder tokens;
    duplicate labels and multi-sentence texts are fatal errors naming the
    offending label. Ordering-convention issues are logged as warnings.
    Returned mapping iterates in canonical (sorted) label order.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"descriptor file not found: {path}")
    try:
        raw = yaml.load(path.read_text(encoding="utf-8"), Loader=_NoDuplicateKeyLoader)
    except ConfigError as exc:
        raise ConfigError(f"descriptor file {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"descriptor file {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict) or not raw:
        raise ConfigError(f"descriptor file {path} must be a non-empty mapping")
    entries = {str(k): v for k, v in raw.items()}
    if len(entries) != len(raw):
        raise ConfigError(f"descriptor file {path}: duplicate label after coercion")
    descriptors = {}
    for label in sorted(entries):
        desc = ActivityDescriptor(label=label, text=entries[label])
        for warning in lint_descriptor(desc):
            log.warning("%s: %s", path, warning)
        descriptors[label] = desc
    return descriptors
