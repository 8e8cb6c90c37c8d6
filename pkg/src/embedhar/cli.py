"""Command-line entry point.

Subcommands: ingest (raw logs to corpus), summarize (corpus to texts),
run (one experiment from a config file), validate-config. Exit codes: 0
success, 1 config or validation error, 2 data error, 3 provider error.
The EMBED_ENDPOINT environment variable overrides the configured HTTP
embedding endpoint; there is no other environment dependence.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import dataclass
from functools import wraps
from pathlib import Path
from typing import Optional

import click
import yaml

from . import evaluate as ev
from .classify import METRICS, top_anchors
from .embedding import EmbeddingProviderSpec, build_provider
from .errors import ConfigError, DataError, EmbedharError, ProviderError
from .ingest import (
    SegmentationReport,
    filter_labels,
    ingest_casas_file,
    ingest_csv_file,
    load_csv_mapping,
)
from .model import load_layout, read_corpus, write_corpus
from .textgen import load_descriptors, load_summary_config, summarize

ADAPTERS = ("casas", "csv")
EXPERIMENTS = ("zero-shot", "ablation", "few-shot")


def _exit_code(exc: EmbedharError) -> int:
    if isinstance(exc, ConfigError):
        return 1
    if isinstance(exc, ProviderError):
        return 3
    if isinstance(exc, DataError):
        return 2
    return 1


def _guard(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except EmbedharError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(_exit_code(exc))

    return wrapper


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@click.group()
def main():
    """Zero-shot activity recognition over smart-home sensor logs.

    Pipelines sensor windows through templated text summaries, sentence
    embeddings and similarity argmax against activity descriptors.
    """


# --- ingest -----------------------------------------------------------------


@main.command()
@click.argument("inputs", nargs=-1, required=True, type=click.Path(path_type=Path))
@click.option("--adapter", type=click.Choice(ADAPTERS), default="casas",
              show_default=True, help="Input file format.")
@click.option("--layout", "layout_path", type=click.Path(path_type=Path),
              help="Home layout file; refines event modalities when given.")
@click.option("--csv-mapping", "csv_mapping_path", type=click.Path(path_type=Path),
              help="Column mapping file (required for the csv adapter).")
@click.option("--output", "-o", required=True, type=click.Path(path_type=Path),
              help="Corpus file to write (one window per line).")
@click.option("--report", "report_path", type=click.Path(path_type=Path),
              help="Also write the segmentation report as JSON.")
@_guard
def ingest(inputs, adapter, layout_path, csv_mapping_path, output, report_path):
    """Segment annotated raw logs into an activity-window corpus."""
    layout = load_layout(layout_path) if layout_path else None
    mapping = None
    if adapter == "csv":
        if not csv_mapping_path:
            raise ConfigError("the csv adapter requires --csv-mapping")
        mapping = load_csv_mapping(csv_mapping_path)
    windows = []
    combined = SegmentationReport()
    for path in inputs:
        if adapter == "casas":
            got, rep = ingest_casas_file(path, layout=layout)
        else:
            got, rep = ingest_csv_file(path, mapping, layout=layout)
        windows.extend(got)
        combined.windows_emitted += rep.windows_emitted
        combined.orphan_begins += rep.orphan_begins
        combined.orphan_ends += rep.orphan_ends
        combined.events_parsed += rep.events_parsed
        for reason, n in rep.lines_skipped.items():
            combined.lines_skipped[reason] = combined.lines_skipped.get(reason, 0) + n
    count = write_corpus(windows, output)
    click.echo(combined.summary())
    click.echo(f"wrote {count} windows to {output}")
    if report_path:
        body = {
            "windows_emitted": combined.windows_emitted,
            "orphan_begins": combined.orphan_begins,
            "orphan_ends": combined.orphan_ends,
            "events_parsed": combined.events_parsed,
            "lines_skipped": dict(sorted(combined.lines_skipped.items())),
        }
        Path(report_path).write_text(
            json.dumps(body, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )


# --- summarize ----------------------------------------------------------------


def _text_line(record_id: str, text: str) -> str:
    return json.dumps({"id": record_id, "text": text}, sort_keys=True)


@main.command("summarize")
@click.argument("corpus", type=click.Path(path_type=Path))
@click.option("--layout", "layout_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--summary-config", "summary_config_path",
              type=click.Path(path_type=Path),
              help="Summary template settings; defaults apply when omitted.")
@click.option("--descriptors", "descriptors_path", type=click.Path(path_type=Path),
              help="Also emit each activity descriptor as a desc:<label> line.")
@click.option("--include-ablation-texts", is_flag=True,
              help="Also emit raw:<window_id> event renderings and, with "
                   "--descriptors, label:<label> bare names, so one embedding "
                   "pass covers the ablation grid.")
@click.option("--output", "-o", required=True, type=click.Path(path_type=Path),
              help="Line-delimited id/text file to write.")
@_guard
def summarize_cmd(corpus, layout_path, summary_config_path, descriptors_path,
                  include_ablation_texts, output):
    """Render every corpus window into its text summary."""
    layout = load_layout(layout_path)
    cfg = (
        load_summary_config(summary_config_path)
        if summary_config_path
        else None
    )
    windows = read_corpus(corpus)
    lines = [
        _text_line(w.window_id, summarize(w, layout, cfg).text) for w in windows
    ]
    descriptors = None
    if descriptors_path:
        descriptors = load_descriptors(descriptors_path)
        lines.extend(
            _text_line(f"desc:{label}", descriptors[label].text)
            for label in sorted(descriptors)
        )
    if include_ablation_texts:
        lines.extend(
            _text_line(f"raw:{w.window_id}", ev.raw_event_text(w)) for w in windows
        )
        if descriptors:
            lines.extend(
                _text_line(f"label:{label}", label.replace("_", " "))
                for label in sorted(descriptors)
            )
    out = Path(output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    click.echo(f"wrote {len(lines)} texts to {output}")


# --- run config ---------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """One experiment, fully described by a YAML file."""

    dataset: str
    layout_path: Path
    summary_config_path: Optional[Path]
    descriptors_path: Path
    provider: EmbeddingProviderSpec
    corpus_path: Path
    metric: str
    include_labels: Optional[tuple[str, ...]]
    exclude_labels: tuple[str, ...]
    experiment: str
    output_dir: Path
    shots: tuple[int, ...]
    seeds: tuple[int, ...]
    support_fraction: float
    fewshot_include_descriptors: bool
    alt_provider: Optional[EmbeddingProviderSpec]
    digests: dict[str, str]


def _provider_spec(raw, context: str, resolve=None) -> EmbeddingProviderSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"{context}: provider must be a mapping")
    known = {"backend", "model_name", "dim", "endpoint", "cache_path"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{context}: provider has unknown keys {sorted(unknown)}")
    if "backend" not in raw:
        raise ConfigError(f"{context}: provider needs a backend")
    cache_path = raw.get("cache_path")
    if cache_path is not None and resolve is not None:
        cache_path = str(resolve(cache_path))
    return EmbeddingProviderSpec(
        backend=raw["backend"],
        model_name=raw.get("model_name"),
        dim=raw.get("dim"),
        endpoint=raw.get("endpoint"),
        cache_path=cache_path,
    )


def load_run_config(path: Path) -> RunConfig:
    """Load and validate a run config; all referenced files must exist."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"run config not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"run config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"run config {path} must be a mapping")
    known = {
        "dataset", "corpus", "layout", "summary_config", "descriptors",
        "provider", "alt_provider", "metric", "labels", "experiment",
        "few_shot", "output_dir",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"run config {path}: unknown keys {sorted(unknown)}")
    for key in ("dataset", "corpus", "layout", "descriptors", "provider",
                "experiment", "output_dir"):
        if key not in raw:
            raise ConfigError(f"run config {path}: missing key {key!r}")
    experiment = raw["experiment"]
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            f"run config {path}: experiment must be one of {EXPERIMENTS}"
        )
    metric = raw.get("metric", "cosine")
    if metric not in METRICS:
        raise ConfigError(f"run config {path}: metric must be one of {METRICS}")

    base = path.parent

    def resolve(p) -> Path:
        return (base / str(p)).resolve() if not Path(str(p)).is_absolute() else Path(p)

    corpus_path = resolve(raw["corpus"])
    layout_path = resolve(raw["layout"])
    descriptors_path = resolve(raw["descriptors"])
    summary_config_path = (
        resolve(raw["summary_config"]) if raw.get("summary_config") else None
    )
    for p in (corpus_path, layout_path, descriptors_path, summary_config_path):
        if p is not None and not p.exists():
            raise ConfigError(f"run config {path}: referenced file missing: {p}")

    labels_raw = raw.get("labels") or {}
    if not isinstance(labels_raw, dict) or set(labels_raw) - {"include", "exclude"}:
        raise ConfigError(
            f"run config {path}: labels accepts only include/exclude lists"
        )
    include = labels_raw.get("include")
    exclude = labels_raw.get("exclude") or []

    few_raw = raw.get("few_shot") or {}
    few_known = {"shots", "seeds", "support_fraction", "include_descriptors"}
    if not isinstance(few_raw, dict) or set(few_raw) - few_known:
        raise ConfigError(
            f"run config {path}: few_shot accepts only {sorted(few_known)}"
        )

    provider = _provider_spec(raw["provider"], f"run config {path}", resolve)
    alt_provider = None
    if raw.get("alt_provider") is not None:
        alt_provider = _provider_spec(
            raw["alt_provider"], f"run config {path}", resolve
        )

    digests = {
        "config_digest": file_digest(path),
        "corpus_digest": file_digest(corpus_path),
        "layout_digest": file_digest(layout_path),
        "descriptors_digest": file_digest(descriptors_path),
    }
    if summary_config_path:
        digests["summary_config_digest"] = file_digest(summary_config_path)

    return RunConfig(
        dataset=str(raw["dataset"]),
        layout_path=layout_path,
        summary_config_path=summary_config_path,
        descriptors_path=descriptors_path,
        provider=provider,
        corpus_path=corpus_path,
        metric=metric,
        include_labels=tuple(str(x) for x in include) if include else None,
        exclude_labels=tuple(str(x) for x in exclude),
        experiment=experiment,
        output_dir=resolve(raw["output_dir"]),
        shots=tuple(int(s) for s in few_raw.get("shots", [1])),
        seeds=tuple(int(s) for s in few_raw.get("seeds", [0])),
        support_fraction=float(few_raw.get("support_fraction", 0.2)),
        fewshot_include_descriptors=bool(few_raw.get("include_descriptors", True)),
        alt_provider=alt_provider,
        digests=digests,
    )


def _load_run_inputs(cfg: RunConfig):
    layout = load_layout(cfg.layout_path)
    summary_cfg = (
        load_summary_config(cfg.summary_config_path)
        if cfg.summary_config_path
        else None
    )
    descriptors = load_descriptors(cfg.descriptors_path)
    windows = read_corpus(cfg.corpus_path)
    if cfg.include_labels is not None:
        included = set(cfg.include_labels)
        windows = [w for w in windows if w.ground_truth in included]
    windows = filter_labels(windows, cfg.exclude_labels)
    return layout, summary_cfg, descriptors, windows


def _build_provider(spec: EmbeddingProviderSpec):
    endpoint = os.environ.get("EMBED_ENDPOINT")
    if spec.backend == "http" and endpoint:
        spec = EmbeddingProviderSpec(
            backend=spec.backend,
            model_name=spec.model_name,
            dim=spec.dim,
            endpoint=endpoint,
            cache_path=spec.cache_path,
        )
    return build_provider(spec)


def _headline(report: ev.EvaluationReport) -> str:
    return (
        f"accuracy {report.accuracy:.4f}  "
        f"f1_weighted {report.f1_weighted:.4f}  "
        f"f1_macro {report.f1_macro:.4f}"
    )


def _write_predictions(result: ev.ZeroShotResult, path: Path) -> None:
    lines = []
    for p in result.predictions:
        best = top_anchors(p, result.anchors, n=3)
        lines.append(
            json.dumps(
                {
                    "window_id": p.window_id,
                    "predicted_label": p.predicted_label,
                    "metric": p.metric,
                    "top_anchors": [
                        {"anchor_id": a, "score": s} for a, s in best
                    ],
                },
                sort_keys=True,
            )
        )
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


@main.command()
@click.argument("config", type=click.Path(path_type=Path))
@_guard
def run(config):
    """Execute the experiment a run config describes."""
    cfg = load_run_config(config)
    layout, summary_cfg, descriptors, windows = _load_run_inputs(cfg)
    provider = _build_provider(cfg.provider)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    metadata = {"dataset": cfg.dataset, **cfg.digests}

    if cfg.experiment == "zero-shot":
        result = ev.run_zero_shot_detailed(
            windows, layout, summary_cfg, descriptors, provider,
            metric=cfg.metric, metadata=metadata,
        )
        ev.write_report(result.report, out / "report.json")
        ev.write_confusion_csv(result.report.confusion, out / "confusion.csv")
        ev.write_flat_csv(
            ev.flatten_report(result.report, cfg.dataset, "zero_shot"),
            out / "metrics.csv",
        )
        _write_predictions(result, out / "predictions.jsonl")
        click.echo(_headline(result.report))
        click.echo(ev.render_heatmap(result.report.confusion))
    elif cfg.experiment == "ablation":
        alt = _build_alt_provider(cfg)
        results = ev.run_ablation(
            windows, layout, summary_cfg, descriptors, provider,
            metric=cfg.metric, alt_provider=alt, metadata=metadata,
        )
        rows = []
        table_rows = []
        for cell, report in results.items():
            if report is None:
                table_rows.append([cell, "", "", ""])
                click.echo(f"{cell:>14}: unavailable")
                continue
            ev.write_report(report, out / f"report_{cell}.json")
            rows.extend(ev.flatten_report(report, cfg.dataset, cell))
            table_rows.append(
                [
                    cell,
                    repr(report.accuracy),
                    repr(report.f1_weighted),
                    repr(report.f1_macro),
                ]
            )
            click.echo(f"{cell:>14}: {_headline(report)}")
        ev.write_flat_csv(rows, out / "metrics.csv")
        _write_table_csv(
            ["config", "accuracy", "f1_weighted", "f1_macro"],
            table_rows,
            out / "ablation_table.csv",
        )
    else:
        support, evaluation = ev.split_support(windows, cfg.support_fraction)
        runs = ev.run_few_shot(
            evaluation, support, layout, summary_cfg, descriptors, provider,
            shots=cfg.shots, seeds=cfg.seeds, metric=cfg.metric,
            include_descriptors=cfg.fewshot_include_descriptors,
            metadata=metadata,
        )
        rows = []
        for r in runs:
            name = f"few_shot_s{r.shots_per_class:02d}_seed{r.seed}"
            ev.write_report(r.report, out / f"report_{name}.json")
            rows.extend(ev.flatten_report(r.report, cfg.dataset, name))
        ev.write_flat_csv(rows, out / "metrics.csv")
        aggregates = ev.aggregate_few_shot(runs)
        _write_table_csv(
            ["shots_per_class", "runs", "f1_weighted_mean", "f1_weighted_variance"],
            [
                [a.shots_per_class, a.runs, repr(a.f1_weighted_mean),
                 repr(a.f1_weighted_variance)]
                for a in aggregates
            ],
            out / "few_shot_aggregates.csv",
        )
        for a in aggregates:
            click.echo(
                f"shots {a.shots_per_class}: f1_weighted mean "
                f"{a.f1_weighted_mean:.4f} variance {a.f1_weighted_variance:.6f} "
                f"over {a.runs} runs"
            )
    click.echo(f"artifacts in {out}")


def _build_alt_provider(cfg: RunConfig):
    if cfg.alt_provider is None:
        return None
    try:
        return _build_provider(cfg.alt_provider)
    except (ConfigError, ProviderError) as exc:
        click.echo(f"alt encoder unavailable: {exc}", err=True)
        return None


def _write_table_csv(header, rows, path: Path) -> None:
    import csv as _csv

    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


@main.command("validate-config")
@click.argument("config", type=click.Path(path_type=Path))
@_guard
def validate_config(config):
    """Check a run config and everything it references, then print digests."""
    cfg = load_run_config(config)
    _load_run_inputs(cfg)
    for name, digest in sorted(cfg.digests.items()):
        click.echo(f"{name}: {digest}")
    click.echo("config ok")


if __name__ == "__main__":
    main()
