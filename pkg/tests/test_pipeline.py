"""Pipeline orchestration, CLI, caching, and report rendering."""

import json

import numpy as np
import pytest

import synth
from dtcav import cli
from dtcav.pipeline import Pipeline, PipelineConfig, PipelineError, run_pipeline
from dtcav.report import ClusterReportEntry, build_entries, render_report


def _small_config(tmp_path, **overrides):
    manifest = synth.write_planted_manifest(
        tmp_path / "data", n_patients=9, slices_per_patient=2, seed=0
    )
    doc = synth.planted_config(manifest, tmp_path / "out")
    doc["n_concept_cavs"] = 4
    doc["n_random_cavs"] = 20
    doc.update(overrides)
    return doc


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("small")
    doc = _small_config(tmp_path)
    config = PipelineConfig.from_dict(doc)
    out = run_pipeline(config)
    return doc, config, out


class TestPipelineRun:
    def test_empty_manifest_fails_cleanly(self, tmp_path):
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({"version": 1, "records": []}))
        doc = synth.planted_config(manifest, tmp_path / "out")
        with pytest.raises(PipelineError, match=r"\[prepare\]"):
            run_pipeline(PipelineConfig.from_dict(doc))
        # no partial outputs were committed
        assert not (tmp_path / "out" / "prepare" / "fingerprint.json").exists()

    def test_artifacts_exist(self, small_run):
        _, _, out = small_run
        assert (out / "score" / "results.json").is_file()
        assert (out / "cluster" / "clusters.json").is_file()
        assert (out / "metrics" / "metrics.json").is_file()
        assert (out / "report" / "index.html").is_file()

    def test_results_schema(self, small_run):
        _, _, out = small_run
        doc = json.loads((out / "score" / "results.json").read_text())
        assert doc["alpha"] == 0.05
        assert doc["results"], "at least one (concept, class) scored"
        for r in doc["results"]:
            assert r["status"] in ("scored", "insignificant", "degenerate")
            if r["status"] == "degenerate":
                assert r["score"] is None
            else:
                assert 0.0 <= r["score"] <= 1.0
                assert 0.0 <= r["p_value"] <= 1.0

    def test_cluster_sizes_match_patch_count(self, small_run):
        _, _, out = small_run
        clusters = json.loads((out / "cluster" / "clusters.json").read_text())
        index = json.loads((out / "patches" / "index.json").read_text())
        n_dropped = int(
            (np.load(out / "cluster" / "assignments.npy") == -1).sum()
        )
        assert sum(c["size"] for c in clusters) + n_dropped == len(index)

    def test_rerun_is_noop(self, small_run):
        _, config, out = small_run
        stamps = {
            s: (out / s / "fingerprint.json").stat().st_mtime_ns
            for s in ("prepare", "cluster", "score")
        }
        run_pipeline(config)
        for s, stamp in stamps.items():
            assert (out / s / "fingerprint.json").stat().st_mtime_ns == stamp

    def test_metrics_without_predictions(self, small_run):
        _, _, out = small_run
        doc = json.loads((out / "metrics" / "metrics.json").read_text())
        assert doc["available"] is False

    def test_metrics_with_predictions(self, tmp_path, small_run):
        doc, _, _ = small_run
        manifest_dir = tmp_path / "preds"
        manifest_dir.mkdir()
        # predicted mask = ground truth for one record: all Dice 100
        mask = synth.anatomy_mask()
        np.save(manifest_dir / "p.npy", mask)
        preds = {"predictions": {"p000_000_ED": "p.npy"}, "model_tag": "t"}
        (manifest_dir / "predictions.json").write_text(json.dumps(preds))
        cfg = PipelineConfig.from_dict(
            {
                **doc,
                "out_dir": str(tmp_path / "out2"),
                "predictions": str(manifest_dir / "predictions.json"),
            }
        )
        Pipeline(cfg).run(("prepare", "metrics"))
        metrics = json.loads((tmp_path / "out2" / "metrics" / "metrics.json").read_text())
        assert metrics["available"] is True
        assert metrics["global_avg"] == 100.0

    def test_stage_requires_upstream(self, tmp_path):
        doc = _small_config(tmp_path / "fresh")
        with pytest.raises(PipelineError, match="has not been run"):
            Pipeline(PipelineConfig.from_dict(doc)).run(("cluster",))


class TestCli:
    def test_full_run_exit_zero(self, tmp_path):
        doc = _small_config(tmp_path)
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(doc))
        assert cli.main(["all", "--config", str(config_path)]) == 0
        assert (tmp_path / "out" / "report" / "index.html").is_file()

    def test_out_override(self, tmp_path):
        doc = _small_config(tmp_path)
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(doc))
        other = tmp_path / "elsewhere"
        assert cli.main(
            ["--config", str(config_path), "--stage", "prepare", "--out", str(other)]
        ) == 0
        assert (other / "prepare" / "fingerprint.json").is_file()

    def test_missing_config_file(self, tmp_path, capsys):
        assert cli.main(["--config", str(tmp_path / "nope.json")]) == 1
        assert "[config]" in capsys.readouterr().err

    def test_stage_error_reported(self, tmp_path, capsys):
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({"version": 1, "records": []}))
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(synth.planted_config(manifest, tmp_path / "out")))
        assert cli.main(["--config", str(config_path)]) == 1
        assert "[prepare]" in capsys.readouterr().err

    def test_rejects_unknown_stage(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args(["fly", "--config", "x"])


class TestReport:
    def test_empty_entries_renders_index(self, tmp_path):
        index = render_report([], tmp_path / "report")
        text = index.read_text()
        assert "0 clusters" in text

    def test_rejected_cluster_shows_reason(self, tmp_path):
        entry = ClusterReportEntry(
            cluster_id=0,
            size=10,
            share=0.5,
            per_class_counts={"NOR": 10},
            scores={"NOR": {"score": 0.8, "p_value": 0.01, "status": "scored"}},
            selected=False,
            rejection_reason="single_patient",
        )
        index = render_report([entry], tmp_path / "report")
        text = index.read_text()
        assert "not a concept" in text
        assert "single_patient" in text
        assert "0.80" in text

    def test_status_cells(self, tmp_path):
        entry = ClusterReportEntry(
            cluster_id=1,
            size=5,
            share=0.2,
            per_class_counts={},
            scores={
                "MINF": {"score": 0.48, "p_value": 0.01, "status": "scored"},
                "DCM": {"score": None, "p_value": None, "status": "degenerate"},
                "NOR": {"score": 0.51, "p_value": 0.4, "status": "insignificant"},
            },
            selected=True,
            rejection_reason=None,
        )
        text = render_report([entry], tmp_path / "report").read_text()
        assert "0.48" in text
        assert "degenerate" in text
        assert "0.51 (n.s.)" in text

    def test_missing_thumbnail_renders_placeholder(self, tmp_path):
        entry = ClusterReportEntry(
            cluster_id=0,
            size=1,
            share=1.0,
            per_class_counts={},
            scores={},
            selected=True,
            rejection_reason=None,
            patch_ids=["ghost"],
        )
        with pytest.warns(UserWarning, match="missing patch"):
            render_report([entry], tmp_path / "report")
        assert (tmp_path / "report" / "thumbs" / "ghost.png").is_file()
        assert (tmp_path / "report" / "cluster_0.html").is_file()

    def test_build_entries_links_scores_and_flags(self, small_run):
        _, _, out = small_run
        clusters = json.loads((out / "cluster" / "clusters.json").read_text())
        results = json.loads((out / "score" / "results.json").read_text())
        entries = build_entries(clusters, results)
        assert len(entries) == len(clusters)
        assert abs(sum(e.share for e in entries) - 1.0) < 1e-9
