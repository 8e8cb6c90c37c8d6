"""Experiment runners and metric computation.

Everything downstream of classification lives here: confusion-matrix
metrics, the zero-shot pipeline (summarize, embed, classify, score), the
ablation grid, and the few-shot protocol. Reports are plain data and
serialize to byte-stable JSON so reruns can be diffed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .classify import (
    KIND_EXEMPLAR,
    Anchor,
    AnchorSet,
    Prediction,
    build_fewshot_anchors,
    classify,
)
from .embedding import CacheMissError, EmbeddingProvider
from .errors import ConfigError, DataError
from .model import ActivityWindow, HomeLayout
from .textgen import ActivityDescriptor, SummaryConfig, summarize

ABLATION_CELLS = ("proposed", "no_summary", "no_descriptor", "alt_encoder", "l2_metric")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count matrix; rows are ground truth, columns are predictions."""

    labels: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        n = len(self.labels)
        if n == 0:
            raise DataError("confusion matrix needs at least one label")
        if len(set(self.labels)) != n:
            raise DataError("confusion matrix labels must be unique")
        if len(self.counts) != n or any(len(row) != n for row in self.counts):
            raise DataError("confusion matrix counts must be square over labels")
        for row in self.counts:
            for c in row:
                if not isinstance(c, int) or c < 0:
                    raise DataError(f"confusion matrix count {c!r} is not a natural number")

    @classmethod
    def from_pairs(
        cls, pairs: Sequence[tuple[str, str]], labels: Sequence[str]
    ) -> "ConfusionMatrix":
        index = {lb: i for i, lb in enumerate(labels)}
        counts = [[0] * len(labels) for _ in labels]
        for truth, predicted in pairs:
            if truth not in index:
                raise DataError(f"ground-truth label {truth!r} not in label set")
            if predicted not in index:
                raise DataError(f"predicted label {predicted!r} not in label set")
            counts[index[truth]][index[predicted]] += 1
        return cls(
            labels=tuple(labels), counts=tuple(tuple(row) for row in counts)
        )

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    @property
    def trace(self) -> int:
        return sum(self.counts[i][i] for i in range(len(self.labels)))

    def support(self, label: str) -> int:
        return sum(self.counts[self.labels.index(label)])


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvaluationReport:
    accuracy: float
    f1_weighted: float
    f1_macro: float
    per_class: dict[str, ClassScores]
    confusion: ConfusionMatrix
    metadata: dict[str, object] = field(default_factory=dict)

    def body(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1_weighted": self.f1_weighted,
            "f1_macro": self.f1_macro,
            "per_class": {
                lb: {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                }
                for lb, s in self.per_class.items()
            },
            "confusion": {
                "labels": list(self.confusion.labels),
                "counts": [list(row) for row in self.confusion.counts],
            },
            "metadata": dict(self.metadata),
        }

    def to_json(self) -> str:
        # sort_keys plus no timestamps anywhere makes reruns byte-identical
        return json.dumps(self.body(), sort_keys=True, indent=2) + "\n"


def compute_metrics(
    pairs: Sequence[tuple[str, str]],
    labels: Sequence[str],
    metadata: Optional[Mapping[str, object]] = None,
) -> EvaluationReport:
    """Score (truth, predicted) pairs against a fixed label set.

    Zero-denominator conventions: precision, recall and F1 are 0 when
    undefined, and zero-support labels still divide the macro average.
    Weighted F1 weights each label's F1 by its true support.
    """
    if not pairs:
        raise DataError("no prediction pairs to score")
    labels = list(labels)
    cm = ConfusionMatrix.from_pairs(pairs, labels)
    n = len(labels)
    row_sums = [sum(cm.counts[i]) for i in range(n)]
    col_sums = [sum(cm.counts[i][j] for i in range(n)) for j in range(n)]
    per_class: dict[str, ClassScores] = {}
    for i, lb in enumerate(labels):
        tp = cm.counts[i][i]
        fp = col_sums[i] - tp
        fn = row_sums[i] - tp
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = (
            2.0 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
        per_class[lb] = ClassScores(
            precision=precision, recall=recall, f1=f1, support=row_sums[i]
        )
    total = cm.total
    accuracy = cm.trace / total
    f1_macro = sum(s.f1 for s in per_class.values()) / n
    f1_weighted = sum(s.f1 * s.support for s in per_class.values()) / total
    return EvaluationReport(
        accuracy=accuracy,
        f1_weighted=f1_weighted,
        f1_macro=f1_macro,
        per_class=per_class,
        confusion=cm,
        metadata=dict(metadata or {}),
    )


# --- Zero-shot pipeline ---------------------------------------------------


def descriptor_texts(
    descriptors: Mapping[str, Union[str, ActivityDescriptor]]
) -> dict[str, str]:
    """Normalize a descriptor registry to a plain label → text mapping."""
    out: dict[str, str] = {}
    for label, value in descriptors.items():
        text = value.text if isinstance(value, ActivityDescriptor) else value
        if not isinstance(text, str) or not text:
            raise ConfigError(f"descriptor for {label!r} has no usable text")
        out[label] = text
    if not out:
        raise ConfigError("descriptor registry is empty")
    return out


def raw_event_text(w: ActivityWindow) -> str:
    """Timestamp-free event rendering used by the no-summary ablation."""
    return " ".join(
        f"{e.modality.value} sensor {e.sensor_id} {e.value}" for e in w.events
    )


def _check_coverage(corpus: Sequence[ActivityWindow], labels: Iterable[str]) -> None:
    label_set = set(labels)
    missing = set()
    for w in corpus:
        if w.ground_truth is None:
            raise DataError(f"window {w.window_id!r} has no ground-truth label")
        if w.ground_truth not in label_set:
            missing.add(w.ground_truth)
    if missing:
        raise DataError(
            "no descriptor for encountered labels: " + ", ".join(sorted(missing))
        )


def _embed_unique(provider: EmbeddingProvider, texts: Sequence[str]) -> list:
    unique: list[str] = []
    index: dict[str, int] = {}
    for t in texts:
        if t not in index:
            index[t] = len(unique)
            unique.append(t)
    embedded = provider.embed_batch(unique)
    return [embedded[index[t]] for t in texts]


@dataclass(frozen=True)
class ZeroShotResult:
    report: EvaluationReport
    predictions: tuple[Prediction, ...]
    anchors: AnchorSet


def run_zero_shot_detailed(
    corpus: Sequence[ActivityWindow],
    layout: HomeLayout,
    summary_cfg: SummaryConfig,
    descriptors: Mapping[str, Union[str, ActivityDescriptor]],
    provider: EmbeddingProvider,
    metric: str = "cosine",
    metadata: Optional[Mapping[str, object]] = None,
    window_texts: Optional[Sequence[str]] = None,
) -> ZeroShotResult:
    """Summarize, embed, classify and score one corpus.

    ``window_texts`` overrides the per-window text (summaries by
    default); the ablations use it. Coverage of every encountered
    ground-truth label by a descriptor is checked before any embedding
    happens. Deterministic given the provider and configs.
    """
    corpus = list(corpus)
    if not corpus:
        raise DataError("corpus is empty, nothing to evaluate")
    texts_by_label = descriptor_texts(descriptors)
    _check_coverage(corpus, texts_by_label)
    if window_texts is None:
        texts = [summarize(w, layout, summary_cfg).text for w in corpus]
    else:
        texts = list(window_texts)
        if len(texts) != len(corpus):
            raise DataError(
                f"{len(texts)} override texts for {len(corpus)} windows"
            )
    anchors = AnchorSet.from_descriptors(texts_by_label, provider)
    embeddings = _embed_unique(provider, texts)
    predictions = tuple(
        classify(emb, anchors, metric=metric, window_id=w.window_id)
        for w, emb in zip(corpus, embeddings)
    )
    pairs = [(w.ground_truth, p.predicted_label) for w, p in zip(corpus, predictions)]
    meta = {
        "metric": metric,
        "provider_model": provider.model_name,
        "provider_dim": provider.dim,
        "window_count": len(corpus),
    }
    meta.update(metadata or {})
    report = compute_metrics(pairs, sorted(texts_by_label), metadata=meta)
    return ZeroShotResult(report=report, predictions=predictions, anchors=anchors)


def run_zero_shot(
    corpus: Sequence[ActivityWindow],
    layout: HomeLayout,
    summary_cfg: SummaryConfig,
    descriptors: Mapping[str, Union[str, ActivityDescriptor]],
    provider: EmbeddingProvider,
    metric: str = "cosine",
    metadata: Optional[Mapping[str, object]] = None,
) -> EvaluationReport:
    return run_zero_shot_detailed(
        corpus, layout, summary_cfg, descriptors, provider, metric, metadata
    ).report


# --- Ablation grid ----------------------------------------------------------


def run_ablation(
    corpus: Sequence[ActivityWindow],
    layout: HomeLayout,
    summary_cfg: SummaryConfig,
    descriptors: Mapping[str, Union[str, ActivityDescriptor]],
    provider: EmbeddingProvider,
    metric: str = "cosine",
    alt_provider: Optional[EmbeddingProvider] = None,
    metadata: Optional[Mapping[str, object]] = None,
) -> dict[str, Optional[EvaluationReport]]:
    """Run the proposed configuration plus its four single-change variants.

    Cells: proposed; no_summary (raw event text instead of summaries);
    no_descriptor (bare label names as anchor texts); alt_encoder
    (second provider, cell is None when unavailable); l2_metric. An
    unavailable alternate encoder marks that cell None and the rest of
    the grid still runs.
    """
    corpus = list(corpus)
    base_meta = dict(metadata or {})

    def cell_meta(name: str) -> dict:
        meta = dict(base_meta)
        meta["experiment"] = name
        return meta

    results: dict[str, Optional[EvaluationReport]] = {}
    results["proposed"] = run_zero_shot(
        corpus, layout, summary_cfg, descriptors, provider, metric,
        metadata=cell_meta("proposed"),
    )
    raw_texts = [raw_event_text(w) for w in corpus]
    results["no_summary"] = run_zero_shot_detailed(
        corpus, layout, summary_cfg, descriptors, provider, metric,
        metadata=cell_meta("no_summary"), window_texts=raw_texts,
    ).report
    bare = {
        label: label.replace("_", " ")
        for label in descriptor_texts(descriptors)
    }
    results["no_descriptor"] = run_zero_shot(
        corpus, layout, summary_cfg, bare, provider, metric,
        metadata=cell_meta("no_descriptor"),
    )
    if alt_provider is None:
        results["alt_encoder"] = None
    else:
        try:
            results["alt_encoder"] = run_zero_shot(
                corpus, layout, summary_cfg, descriptors, alt_provider, metric,
                metadata=cell_meta("alt_encoder"),
            )
        except (CacheMissError, ConfigError):
            results["alt_encoder"] = None
    results["l2_metric"] = run_zero_shot(
        corpus, layout, summary_cfg, descriptors, provider, "l2",
        metadata=cell_meta("l2_metric"),
    )
    return results


# --- Few-shot protocol ------------------------------------------------------


@dataclass(frozen=True)
class FewShotRun:
    shots_per_class: int
    seed: int
    report: EvaluationReport


@dataclass(frozen=True)
class FewShotAggregate:
    shots_per_class: int
    runs: int
    f1_weighted_mean: float
    f1_weighted_variance: float


def split_support(
    windows: Sequence[ActivityWindow], support_fraction: float
) -> tuple[list[ActivityWindow], list[ActivityWindow]]:
    """Chronological per-class split; the earliest windows form support.

    Per class, floor(fraction * n) windows go to support; sampling
    exemplars from the past avoids leaking future context into anchors.
    """
    if not 0.0 <= support_fraction < 1.0:
        raise ConfigError(f"support fraction {support_fraction} outside [0, 1)")
    by_label: dict[str, list[ActivityWindow]] = {}
    for w in windows:
        if w.ground_truth is None:
            raise DataError(f"window {w.window_id!r} has no ground-truth label")
        by_label.setdefault(w.ground_truth, []).append(w)
    support_ids = set()
    for label in sorted(by_label):
        group = sorted(by_label[label], key=lambda w: (w.start, w.window_id))
        n_support = int(len(group) * support_fraction)
        support_ids.update(w.window_id for w in group[:n_support])
    support = [w for w in windows if w.window_id in support_ids]
    evaluation = [w for w in windows if w.window_id not in support_ids]
    return support, evaluation


def run_few_shot(
    corpus: Sequence[ActivityWindow],
    support: Sequence[ActivityWindow],
    layout: HomeLayout,
    summary_cfg: SummaryConfig,
    descriptors: Mapping[str, Union[str, ActivityDescriptor]],
    provider: EmbeddingProvider,
    shots: Sequence[int],
    seeds: Sequence[int],
    metric: str = "cosine",
    include_descriptors: bool = True,
    metadata: Optional[Mapping[str, object]] = None,
) -> list[FewShotRun]:
    """Evaluate with s exemplar anchors per class for each (s, seed).

    Exemplars are drawn uniformly without replacement from the support
    split only (classes with fewer than s support windows contribute all
    they have). With s = 0 the anchor set is untouched, so each run's
    report equals the zero-shot report structurally.
    """
    corpus = list(corpus)
    support = list(support)
    overlap = {w.window_id for w in corpus} & {w.window_id for w in support}
    if overlap:
        raise DataError(
            "support and evaluation splits share windows: "
            + ", ".join(sorted(overlap)[:5])
        )
    shots = list(shots)
    seeds = list(seeds)
    if any(s < 0 for s in shots):
        raise ConfigError("shot counts must be >= 0")
    if not support and any(s > 0 for s in shots):
        raise DataError("support split is empty for every class")
    texts_by_label = descriptor_texts(descriptors)
    for w in support:
        if w.ground_truth not in texts_by_label:
            raise DataError(
                f"support window {w.window_id!r} has label "
                f"{w.ground_truth!r} outside the descriptor set"
            )
    _check_coverage(corpus, texts_by_label)
    by_label: dict[str, list[ActivityWindow]] = {}
    for w in support:
        by_label.setdefault(w.ground_truth, []).append(w)
    support_texts = {
        w.window_id: summarize(w, layout, summary_cfg).text for w in support
    }
    labels = sorted(texts_by_label)
    base_anchors = AnchorSet.from_descriptors(texts_by_label, provider)
    corpus_texts = [summarize(w, layout, summary_cfg).text for w in corpus]
    embeddings = _embed_unique(provider, corpus_texts)
    meta = {
        "metric": metric,
        "provider_model": provider.model_name,
        "provider_dim": provider.dim,
        "window_count": len(corpus),
    }
    meta.update(metadata or {})

    runs: list[FewShotRun] = []
    for s in shots:
        for seed in seeds:
            rng = np.random.default_rng(seed)
            exemplars: list[tuple[str, str]] = []
            if s > 0:
                for label in sorted(by_label):
                    group = by_label[label]
                    if len(group) <= s:
                        chosen = list(range(len(group)))
                    else:
                        chosen = sorted(rng.choice(len(group), size=s, replace=False))
                    exemplars.extend(
                        (support_texts[group[i].window_id], label) for i in chosen
                    )
            if include_descriptors:
                anchors = build_fewshot_anchors(base_anchors, exemplars, provider)
            else:
                if not exemplars:
                    raise DataError("exemplar-only mode needs at least one shot")
                anchors = _exemplar_only_anchors(exemplars, provider)
            pairs = [
                (w.ground_truth, classify(emb, anchors, metric=metric).predicted_label)
                for w, emb in zip(corpus, embeddings)
            ]
            report = compute_metrics(pairs, labels, metadata=meta)
            runs.append(FewShotRun(shots_per_class=s, seed=seed, report=report))
    return runs


def _exemplar_only_anchors(
    exemplars: Sequence[tuple[str, str]], provider: EmbeddingProvider
) -> AnchorSet:
    embedded = provider.embed_batch([text for text, _ in exemplars])
    return AnchorSet(
        anchors=tuple(
            Anchor(
                label=label,
                embedding=emb,
                kind=KIND_EXEMPLAR,
                anchor_id=f"exemplar:{i:04d}",
            )
            for i, ((_, label), emb) in enumerate(zip(exemplars, embedded))
        )
    )


def aggregate_few_shot(runs: Sequence[FewShotRun]) -> list[FewShotAggregate]:
    """Mean and sample variance of weighted F1 per shot count."""
    by_shots: dict[int, list[float]] = {}
    for run in runs:
        by_shots.setdefault(run.shots_per_class, []).append(run.report.f1_weighted)
    aggregates = []
    for s in sorted(by_shots):
        values = by_shots[s]
        n = len(values)
        mean = sum(values) / n
        variance = (
            sum((v - mean) ** 2 for v in values) / (n - 1) if n > 1 else 0.0
        )
        aggregates.append(
            FewShotAggregate(
                shots_per_class=s,
                runs=n,
                f1_weighted_mean=mean,
                f1_weighted_variance=variance,
            )
        )
    return aggregates


# --- Report writers ---------------------------------------------------------


def write_report(report: EvaluationReport, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json(), encoding="utf-8")


def flatten_report(
    report: EvaluationReport, dataset: str, config: str
) -> list[tuple[str, str, str, float]]:
    return [
        (dataset, config, "accuracy", report.accuracy),
        (dataset, config, "f1_weighted", report.f1_weighted),
        (dataset, config, "f1_macro", report.f1_macro),
    ]


def write_flat_csv(
    rows: Iterable[tuple[str, str, str, float]], path: Union[str, Path]
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "config", "metric", "value"])
        for row in rows:
            writer.writerow([row[0], row[1], row[2], repr(float(row[3]))])


def write_confusion_csv(cm: ConfusionMatrix, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["truth\\predicted", *cm.labels])
        for label, row in zip(cm.labels, cm.counts):
            writer.writerow([label, *row])


_SHADES = " .:-=+*#%@"


def render_heatmap(cm: ConfusionMatrix) -> str:
    """Plain-text confusion heatmap for terminal inspection."""
    peak = max((c for row in cm.counts for c in row), default=0)
    width = max(len(lb) for lb in cm.labels)
    lines = []
    header = " " * (width + 1) + " ".join(lb[:3].ljust(3) for lb in cm.labels)
    lines.append(header.rstrip())
    for label, row in zip(cm.labels, cm.counts):
        cells = []
        for c in row:
            shade = _SHADES[min(9, (c * 9) // peak)] if peak else " "
            cells.append(f"{shade}{c:>2}")
        lines.append(f"{label.ljust(width)} " + " ".join(cells))
    return "\n".join(lines)
