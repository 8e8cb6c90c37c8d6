"""End-to-end exercises of the command line surface.

Every test drives the click entry point in process through CliRunner,
with artifacts written to per-test temp directories. The run command is
checked against all three experiment kinds plus every provider backend,
including the cache-miss and dead-endpoint failure exits.
"""

import datetime as dt
import json
import re

import pytest
import yaml
from click.testing import CliRunner

from embedhar import (
    ActivityWindow,
    SensorEvent,
    cache_write,
    load_descriptors,
    load_layout,
    load_summary_config,
    read_corpus,
    summarize,
    write_corpus,
)
from embedhar import embedding as emb
from embedhar.cli import main

from helpers import DATA_DIR, EmbeddingServer

FIXTURE_LABELS = ["CookBreakfast", "DineLunch", "EnterHome", "NightToilet"]
PERFECT_HEADLINE = "accuracy 1.0000  f1_weighted 1.0000  f1_macro 1.0000"


def invoke(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env,
                              catch_exceptions=False)


def write_run_config(tmp_path, name="run.yaml", **overrides):
    body = {
        "dataset": "fixture",
        "corpus": str(DATA_DIR / "fixture_corpus.jsonl"),
        "layout": str(DATA_DIR / "fixture_layout.yaml"),
        "summary_config": str(DATA_DIR / "fixture_summary.yaml"),
        "descriptors": str(DATA_DIR / "fixture_descriptors.yaml"),
        "provider": {"backend": "test", "dim": 64},
        "experiment": "zero-shot",
        "output_dir": str(tmp_path / "out"),
    }
    body.update(overrides)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(body), encoding="utf-8")
    return path


def fixture_texts():
    """The exact strings a fixture-corpus run sends to its provider."""
    layout = load_layout(DATA_DIR / "fixture_layout.yaml")
    cfg = load_summary_config(DATA_DIR / "fixture_summary.yaml")
    windows = read_corpus(DATA_DIR / "fixture_corpus.jsonl", layout)
    descriptors = load_descriptors(DATA_DIR / "fixture_descriptors.yaml")
    return (
        [summarize(w, layout, cfg).text for w in windows]
        + [d.text for d in descriptors.values()]
    )


class TestHelp:
    def test_group_lists_subcommands(self):
        result = invoke("--help")
        assert result.exit_code == 0
        for name in ("ingest", "summarize", "run", "validate-config"):
            assert name in result.stdout


class TestIngest:
    def test_casas_log_to_corpus(self, tmp_path):
        out = tmp_path / "corpus.jsonl"
        result = invoke("ingest", DATA_DIR / "sample_casas.txt",
                        "--layout", DATA_DIR / "fixture_layout.yaml",
                        "-o", out)
        assert result.exit_code == 0
        assert "windows=2" in result.stdout
        assert "orphan_begins=2" in result.stdout
        assert "orphan_ends=1" in result.stdout
        assert "events_parsed=11" in result.stdout
        assert "lines_skipped=2" in result.stdout
        assert f"wrote 2 windows to {out}" in result.stdout
        layout = load_layout(DATA_DIR / "fixture_layout.yaml")
        windows = read_corpus(out, layout)
        assert [(w.window_id, w.ground_truth) for w in windows] == [
            ("sample_casas-000001", "Eat"),
            ("sample_casas-000002", "Sleep"),
        ]

    def test_report_json(self, tmp_path):
        report = tmp_path / "report.json"
        result = invoke("ingest", DATA_DIR / "sample_casas.txt",
                        "--layout", DATA_DIR / "fixture_layout.yaml",
                        "-o", tmp_path / "corpus.jsonl",
                        "--report", report)
        assert result.exit_code == 0
        payload = json.loads(report.read_text())
        assert payload["windows_emitted"] == 2
        assert payload["orphan_begins"] == 2
        assert payload["orphan_ends"] == 1
        assert payload["events_parsed"] == 11
        assert payload["lines_skipped"] == {
            "bad timestamp '2010-13-99' '12:00:00'": 1,
            "expected 4 or 6 fields, got 3": 1,
        }

    def test_missing_input_exits_2(self, tmp_path):
        missing = tmp_path / "no_such.txt"
        result = invoke("ingest", missing,
                        "--layout", DATA_DIR / "fixture_layout.yaml",
                        "-o", tmp_path / "corpus.jsonl")
        assert result.exit_code == 2
        assert "error:" in result.stderr
        assert str(missing) in result.stderr

    def test_csv_adapter_requires_mapping(self, tmp_path):
        csv = tmp_path / "rows.csv"
        csv.write_text("ts,sensor,state,act\n")
        result = invoke("ingest", csv, "--adapter", "csv",
                        "--layout", DATA_DIR / "fixture_layout.yaml",
                        "-o", tmp_path / "corpus.jsonl")
        assert result.exit_code == 1
        assert "csv-mapping" in result.stderr

    def test_csv_adapter_with_mapping(self, tmp_path):
        csv = tmp_path / "rows.csv"
        csv.write_text(
            "ts,sensor,state,act\n"
            "2010-11-04 06:00:00,M012,ON,Cook\n"
            "2010-11-04 06:00:10,M012,OFF,Cook\n"
            "2010-11-04 06:00:20,M021,ON,Eat\n"
        )
        mapping = tmp_path / "mapping.yaml"
        mapping.write_text(yaml.safe_dump({
            "timestamp": "ts", "sensor_id": "sensor",
            "value": "state", "label": "act",
        }))
        out = tmp_path / "corpus.jsonl"
        result = invoke("ingest", csv, "--adapter", "csv",
                        "--csv-mapping", mapping,
                        "--layout", DATA_DIR / "fixture_layout.yaml",
                        "-o", out)
        assert result.exit_code == 0
        assert f"wrote 2 windows to {out}" in result.stdout
        layout = load_layout(DATA_DIR / "fixture_layout.yaml")
        got = [(w.ground_truth, len(w.events)) for w in read_corpus(out, layout)]
        assert got == [("Cook", 2), ("Eat", 1)]


class TestSummarize:
    def run_summarize(self, out, *extra):
        return invoke("summarize", DATA_DIR / "fixture_corpus.jsonl",
                      "--layout", DATA_DIR / "fixture_layout.yaml",
                      "--summary-config", DATA_DIR / "fixture_summary.yaml",
                      "-o", out, *extra)

    def test_window_texts_only(self, tmp_path):
        out = tmp_path / "texts.jsonl"
        result = self.run_summarize(out)
        assert result.exit_code == 0
        assert f"wrote 4 texts to {out}" in result.stdout
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert [r["id"] for r in records] == [
            "fx-000001", "fx-000002", "fx-000003", "fx-000004",
        ]
        for r in records:
            assert set(r) == {"id", "text"}
            assert not re.search(r"[0-9<>]", r["text"])
            assert r["text"].endswith(".")

    def test_all_text_kinds(self, tmp_path):
        out = tmp_path / "texts.jsonl"
        result = self.run_summarize(
            out, "--descriptors", DATA_DIR / "fixture_descriptors.yaml",
            "--include-ablation-texts")
        assert result.exit_code == 0
        assert f"wrote 16 texts to {out}" in result.stdout
        records = [json.loads(line) for line in out.read_text().splitlines()]
        ids = [r["id"] for r in records]
        # fixed section order: window summaries, then descriptor texts,
        # then the two ablation text kinds
        assert ids[:4] == ["fx-000001", "fx-000002", "fx-000003", "fx-000004"]
        assert ids[4:8] == [f"desc:{label}" for label in FIXTURE_LABELS]
        assert ids[8:12] == [f"raw:fx-00000{i}" for i in (1, 2, 3, 4)]
        assert ids[12:] == [f"label:{label}" for label in FIXTURE_LABELS]
        by_id = {r["id"]: r["text"] for r in records}
        for label in FIXTURE_LABELS:
            assert by_id[f"label:{label}"] == label
        assert by_id["raw:fx-000002"] == (
            "motion sensor M003 ON motion sensor M003 OFF"
        )

    def test_rerun_is_byte_identical(self, tmp_path):
        first = tmp_path / "a.jsonl"
        second = tmp_path / "b.jsonl"
        assert self.run_summarize(first).exit_code == 0
        assert self.run_summarize(second).exit_code == 0
        assert first.read_bytes() == second.read_bytes()

    def test_corrupt_corpus_exits_2(self, tmp_path):
        corpus = tmp_path / "broken.jsonl"
        corpus.write_text('{"window_id": "w1"\n')
        result = invoke("summarize", corpus,
                        "--layout", DATA_DIR / "fixture_layout.yaml",
                        "-o", tmp_path / "texts.jsonl")
        assert result.exit_code == 2
        assert f"{corpus}:1:" in result.stderr


class TestValidateConfig:
    DIGEST_LINE = re.compile(r"^([a-z_]+_digest): ([0-9a-f]{64})$")

    def test_reports_digests_and_ok(self, tmp_path):
        cfg = write_run_config(tmp_path)
        result = invoke("validate-config", cfg)
        assert result.exit_code == 0
        lines = result.stdout.splitlines()
        assert lines[-1] == "config ok"
        names = []
        for line in lines[:-1]:
            m = self.DIGEST_LINE.match(line)
            assert m, line
            names.append(m.group(1))
        assert names == sorted(names)
        assert names == [
            "config_digest", "corpus_digest", "descriptors_digest",
            "layout_digest", "summary_config_digest",
        ]

    def test_digests_stable_and_input_scoped(self, tmp_path):
        cfg = write_run_config(tmp_path)
        first = invoke("validate-config", cfg).stdout
        assert invoke("validate-config", cfg).stdout == first
        # a config-only edit must move config_digest and nothing else
        moved = write_run_config(tmp_path, name="moved.yaml",
                                 output_dir=str(tmp_path / "elsewhere"))
        second = invoke("validate-config", moved).stdout
        before = dict(line.split(": ") for line in first.splitlines()[:-1])
        after = dict(line.split(": ") for line in second.splitlines()[:-1])
        assert before["config_digest"] != after["config_digest"]
        for name in ("corpus_digest", "layout_digest", "descriptors_digest",
                     "summary_config_digest"):
            assert before[name] == after[name]

    def test_summary_config_is_optional(self, tmp_path):
        cfg = write_run_config(tmp_path)
        body = yaml.safe_load(cfg.read_text())
        del body["summary_config"]
        cfg.write_text(yaml.safe_dump(body))
        result = invoke("validate-config", cfg)
        assert result.exit_code == 0
        assert "summary_config_digest" not in result.stdout
        assert result.stdout.splitlines()[-1] == "config ok"

    def test_missing_referenced_file_exits_1(self, tmp_path):
        cfg = write_run_config(tmp_path,
                               corpus=str(tmp_path / "gone.jsonl"))
        result = invoke("validate-config", cfg)
        assert result.exit_code == 1
        assert "gone.jsonl" in result.stderr

    def test_missing_config_exits_1(self, tmp_path):
        result = invoke("validate-config", tmp_path / "absent.yaml")
        assert result.exit_code == 1
        assert "error:" in result.stderr


class TestRunZeroShot:
    def test_artifacts_and_headline(self, tmp_path):
        cfg = write_run_config(tmp_path)
        result = invoke("run", cfg)
        assert result.exit_code == 0
        assert PERFECT_HEADLINE in result.stdout
        assert "CookBreakfast @" in result.stdout
        assert f"artifacts in {tmp_path / 'out'}" in result.stdout
        out = tmp_path / "out"
        assert {p.name for p in out.iterdir()} == {
            "report.json", "confusion.csv", "metrics.csv",
            "predictions.jsonl",
        }
        report = json.loads((out / "report.json").read_text())
        assert report["accuracy"] == 1.0
        assert report["metadata"]["metric"] == "cosine"
        assert report["metadata"]["provider_dim"] == 64
        assert report["metadata"]["window_count"] == 4

    def test_predictions_record_shape(self, tmp_path):
        cfg = write_run_config(tmp_path)
        assert invoke("run", cfg).exit_code == 0
        lines = (tmp_path / "out" / "predictions.jsonl").read_text().splitlines()
        assert len(lines) == 4
        corpus_order = ["CookBreakfast", "NightToilet", "DineLunch", "EnterHome"]
        for line, label in zip(lines, corpus_order):
            record = json.loads(line)
            assert set(record) == {
                "window_id", "predicted_label", "metric", "top_anchors",
            }
            assert record["predicted_label"] == label
            assert len(record["top_anchors"]) == 3
            scores = [a["score"] for a in record["top_anchors"]]
            assert scores == sorted(scores, reverse=True)
            assert record["top_anchors"][0]["anchor_id"] == f"descriptor:{label}"

    def test_confusion_csv_is_identity(self, tmp_path):
        cfg = write_run_config(tmp_path)
        assert invoke("run", cfg).exit_code == 0
        got = (tmp_path / "out" / "confusion.csv").read_text()
        assert got.splitlines()[0] == "truth\\predicted," + ",".join(FIXTURE_LABELS)
        assert got.splitlines()[1] == "CookBreakfast,1,0,0,0"

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg_a = write_run_config(tmp_path, name="a.yaml",
                                 output_dir=str(tmp_path / "out_a"))
        cfg_b = write_run_config(tmp_path, name="b.yaml",
                                 output_dir=str(tmp_path / "out_b"))
        assert invoke("run", cfg_a).exit_code == 0
        assert invoke("run", cfg_b).exit_code == 0
        for name in ("predictions.jsonl", "confusion.csv", "metrics.csv"):
            assert (tmp_path / "out_a" / name).read_bytes() == \
                (tmp_path / "out_b" / name).read_bytes()
        # report.json embeds the config digest, which covers output_dir,
        # so compare it with that one field masked
        rep_a = json.loads((tmp_path / "out_a" / "report.json").read_text())
        rep_b = json.loads((tmp_path / "out_b" / "report.json").read_text())
        rep_a["metadata"]["config_digest"] = ""
        rep_b["metadata"]["config_digest"] = ""
        assert rep_a == rep_b

    def test_output_dir_is_created(self, tmp_path):
        nested = tmp_path / "deep" / "nested" / "out"
        cfg = write_run_config(tmp_path, output_dir=str(nested))
        assert invoke("run", cfg).exit_code == 0
        assert (nested / "report.json").exists()

    def test_l2_metric_config(self, tmp_path):
        cfg = write_run_config(tmp_path, metric="l2")
        result = invoke("run", cfg)
        assert result.exit_code == 0
        assert PERFECT_HEADLINE in result.stdout
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["metadata"]["metric"] == "l2"


class TestRunAblation:
    def test_grid_without_alt_encoder(self, tmp_path):
        cfg = write_run_config(tmp_path, experiment="ablation")
        result = invoke("run", cfg)
        assert result.exit_code == 0
        assert f"proposed: {PERFECT_HEADLINE}" in result.stdout
        assert "alt_encoder: unavailable" in result.stdout
        out = tmp_path / "out"
        assert {p.name for p in out.iterdir()} == {
            "report_proposed.json", "report_no_summary.json",
            "report_no_descriptor.json", "report_l2_metric.json",
            "metrics.csv", "ablation_table.csv",
        }
        table = (out / "ablation_table.csv").read_text().splitlines()
        assert table[0] == "config,accuracy,f1_weighted,f1_macro"
        assert table[1] == "proposed,1.0,1.0,1.0"
        assert table[4] == "alt_encoder,,,"
        assert len(table) == 6
        proposed = json.loads((out / "report_proposed.json").read_text())
        degraded = json.loads((out / "report_no_summary.json").read_text())
        assert proposed["accuracy"] == 1.0
        assert degraded["accuracy"] < proposed["accuracy"]

    def test_alt_encoder_from_cache(self, tmp_path):
        # a fatter hash cache stands in for the second encoder
        alt_dim = 96
        entries = [(t, emb.test_embed(t, dim=alt_dim)) for t in fixture_texts()]
        alt_cache = tmp_path / "alt.embcache"
        cache_write(alt_cache, entries, model_name="alt-encoder")
        cfg = write_run_config(
            tmp_path, experiment="ablation",
            alt_provider={"backend": "cache", "cache_path": str(alt_cache)},
        )
        result = invoke("run", cfg)
        assert result.exit_code == 0
        assert "alt_encoder: unavailable" not in result.stdout
        out = tmp_path / "out"
        report = json.loads((out / "report_alt_encoder.json").read_text())
        assert report["metadata"]["provider_dim"] == alt_dim
        assert report["metadata"]["provider_model"] == "alt-encoder"
        table = (out / "ablation_table.csv").read_text().splitlines()
        assert table[4].startswith("alt_encoder,") and table[4] != "alt_encoder,,,"


class TestRunFewShot:
    def build_corpus(self, tmp_path):
        """Fixture corpus plus a day-earlier support twin per class."""
        layout = load_layout(DATA_DIR / "fixture_layout.yaml")
        windows = read_corpus(DATA_DIR / "fixture_corpus.jsonl", layout)
        shift = dt.timedelta(days=-1)
        support = [
            ActivityWindow(
                window_id="sup-" + w.window_id,
                events=[SensorEvent(e.timestamp + shift, e.sensor_id,
                                    e.modality, e.value) for e in w.events],
                start=w.start + shift, end=w.end + shift,
                ground_truth=w.ground_truth,
            )
            for w in windows
        ]
        path = tmp_path / "corpus8.jsonl"
        write_corpus(support + list(windows), path)
        return path

    def test_grid_reports_and_aggregates(self, tmp_path):
        cfg = write_run_config(
            tmp_path, experiment="few-shot",
            corpus=str(self.build_corpus(tmp_path)),
            few_shot={"shots": [0, 1], "seeds": [0, 1],
                      "support_fraction": 0.5},
        )
        result = invoke("run", cfg)
        assert result.exit_code == 0
        # support twins render to the same text as their eval windows, so
        # exemplar anchors match queries exactly and scores stay perfect
        assert ("shots 0: f1_weighted mean 1.0000 variance 0.000000 "
                "over 2 runs") in result.stdout
        assert ("shots 1: f1_weighted mean 1.0000 variance 0.000000 "
                "over 2 runs") in result.stdout
        out = tmp_path / "out"
        assert {p.name for p in out.iterdir()} == {
            "report_few_shot_s00_seed0.json", "report_few_shot_s00_seed1.json",
            "report_few_shot_s01_seed0.json", "report_few_shot_s01_seed1.json",
            "metrics.csv", "few_shot_aggregates.csv",
        }
        agg = (out / "few_shot_aggregates.csv").read_text().splitlines()
        assert agg == [
            "shots_per_class,runs,f1_weighted_mean,f1_weighted_variance",
            "0,2,1.0,0.0",
            "1,2,1.0,0.0",
        ]

    def test_zero_shot_row_ignores_seed(self, tmp_path):
        cfg = write_run_config(
            tmp_path, experiment="few-shot",
            corpus=str(self.build_corpus(tmp_path)),
            few_shot={"shots": [0], "seeds": [3, 9],
                      "support_fraction": 0.5},
        )
        assert invoke("run", cfg).exit_code == 0
        out = tmp_path / "out"
        a = json.loads((out / "report_few_shot_s00_seed3.json").read_text())
        b = json.loads((out / "report_few_shot_s00_seed9.json").read_text())
        a["metadata"]["seed"] = b["metadata"]["seed"] = None
        assert a == b


class TestRunProviderBackends:
    def test_cache_backend_round_trip(self, tmp_path):
        entries = [(t, emb.test_embed(t, dim=64)) for t in fixture_texts()]
        cache = tmp_path / "fixture.embcache"
        cache_write(cache, entries, model_name="hash-test-embedder")
        cfg = write_run_config(
            tmp_path,
            provider={"backend": "cache", "cache_path": str(cache)},
        )
        result = invoke("run", cfg)
        assert result.exit_code == 0
        assert PERFECT_HEADLINE in result.stdout

    def test_cache_and_test_backends_agree_byte_for_byte(self, tmp_path):
        entries = [(t, emb.test_embed(t, dim=64)) for t in fixture_texts()]
        cache = tmp_path / "fixture.embcache"
        cache_write(cache, entries, model_name="hash-test-embedder")
        cfg_test = write_run_config(tmp_path, name="t.yaml",
                                    output_dir=str(tmp_path / "out_t"))
        cfg_cache = write_run_config(
            tmp_path, name="c.yaml", output_dir=str(tmp_path / "out_c"),
            provider={"backend": "cache", "cache_path": str(cache)},
        )
        assert invoke("run", cfg_test).exit_code == 0
        assert invoke("run", cfg_cache).exit_code == 0
        assert (tmp_path / "out_t" / "predictions.jsonl").read_bytes() == \
            (tmp_path / "out_c" / "predictions.jsonl").read_bytes()

    def test_cache_miss_exits_3(self, tmp_path):
        stale = tmp_path / "stale.embcache"
        cache_write(stale, [("nothing relevant",
                             emb.test_embed("nothing relevant", dim=64))],
                    model_name="hash-test-embedder")
        cfg = write_run_config(
            tmp_path,
            provider={"backend": "cache", "cache_path": str(stale)},
        )
        result = invoke("run", cfg)
        assert result.exit_code == 3
        assert "missing from embedding cache" in result.stderr

    def test_corrupt_cache_exits_3(self, tmp_path):
        broken = tmp_path / "broken.embcache"
        broken.write_bytes(b"not a cache at all")
        cfg = write_run_config(
            tmp_path,
            provider={"backend": "cache", "cache_path": str(broken)},
        )
        result = invoke("run", cfg)
        assert result.exit_code == 3
        assert "byte offset" in result.stderr

    def test_http_backend_via_live_server(self, tmp_path):
        with EmbeddingServer(dim=64) as server:
            cfg = write_run_config(
                tmp_path,
                provider={"backend": "http", "endpoint": server.endpoint,
                          "model_name": "hash-test-embedder", "dim": 64},
            )
            result = invoke("run", cfg)
            assert result.exit_code == 0
            assert PERFECT_HEADLINE in result.stdout
            assert len(server.requests) >= 1

    def test_embed_endpoint_env_overrides_config(self, tmp_path):
        # the configured endpoint is dead; only the env override can work
        with EmbeddingServer(dim=64) as server:
            cfg = write_run_config(
                tmp_path,
                provider={"backend": "http",
                          "endpoint": "http://127.0.0.1:1/embed",
                          "model_name": "hash-test-embedder", "dim": 64},
            )
            result = invoke("run", cfg,
                            env={"EMBED_ENDPOINT": server.endpoint})
            assert result.exit_code == 0
            assert PERFECT_HEADLINE in result.stdout
            assert len(server.requests) >= 1


class TestRunConfigErrors:
    def test_missing_run_config_exits_1(self, tmp_path):
        result = invoke("run", tmp_path / "absent.yaml")
        assert result.exit_code == 1
        assert "run config not found" in result.stderr

    def test_unknown_experiment_exits_1(self, tmp_path):
        cfg = write_run_config(tmp_path, experiment="train")
        result = invoke("run", cfg)
        assert result.exit_code == 1
        assert "experiment must be one of" in result.stderr

    def test_unknown_provider_key_exits_1(self, tmp_path):
        cfg = write_run_config(
            tmp_path, provider={"backend": "test", "path": "x"})
        result = invoke("run", cfg)
        assert result.exit_code == 1
        assert "unknown keys" in result.stderr

    def test_missing_required_key_exits_1(self, tmp_path):
        cfg = write_run_config(tmp_path)
        body = yaml.safe_load(cfg.read_text())
        del body["descriptors"]
        cfg.write_text(yaml.safe_dump(body))
        result = invoke("run", cfg)
        assert result.exit_code == 1
        assert "missing key" in result.stderr

    def test_excluded_label_is_dropped(self, tmp_path):
        cfg = write_run_config(
            tmp_path, labels={"exclude": ["NightToilet"]})
        result = invoke("run", cfg)
        assert result.exit_code == 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["metadata"]["window_count"] == 3
        # the label stays an anchor, it just never appears as truth
        assert report["per_class"]["NightToilet"]["support"] == 0
        assert report["accuracy"] == 1.0

    def test_include_labels_keep_only_listed(self, tmp_path):
        cfg = write_run_config(
            tmp_path, labels={"include": ["CookBreakfast", "DineLunch"]})
        result = invoke("run", cfg)
        assert result.exit_code == 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["metadata"]["window_count"] == 2
        kept = [label for label, row in report["per_class"].items()
                if row["support"] > 0]
        assert sorted(kept) == ["CookBreakfast", "DineLunch"]
