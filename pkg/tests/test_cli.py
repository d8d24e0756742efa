import json

import pytest
from click.testing import CliRunner

from serann.cli import main


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One full pipeline pass over a small synthetic corpus."""
    root = tmp_path_factory.mktemp("pipeline")
    runner = CliRunner()

    def run(*args):
        result = runner.invoke(main, list(args), catch_exceptions=False)
        assert result.exit_code == 0, result.output
        return result

    run("synth-corpus", "--out", str(root / "corpus"), "--speakers", "5",
        "--per-speaker", "4", "--seed", "3")
    manifest = root / "corpus" / "manifest.jsonl"
    run("features", "--manifest", str(manifest), "--out", str(root / "features.jsonl"),
        "--mels-out", str(root / "mels.serann"))
    run("train-vqvae", "--manifest", str(manifest), "--mels", str(root / "mels.serann"),
        "--out", str(root / "vq.serann"), "--desk-scale", "--epochs", "2", "--seed", "1",
        "--history-out", str(root / "vq-history.jsonl"))
    run("encode", "--manifest", str(manifest), "--mels", str(root / "mels.serann"),
        "--checkpoint", str(root / "vq.serann"), "--out", str(root / "codes.jsonl"))
    run("annotate", "--manifest", str(manifest), "--variant", "full", "--shots", "few",
        "--backend", "mock:oracle", "--features", str(root / "features.jsonl"),
        "--codes", str(root / "codes.jsonl"), "--seed", "5",
        "--out", str(root / "annotations.jsonl"))
    run("train-classifier", "--manifest", str(manifest), "--mels", str(root / "mels.serann"),
        "--labels-source", "llm", "--annotations", str(root / "annotations.jsonl"),
        "--folds", "fixed", "--repeats", "2", "--seed", "9", "--desk-scale",
        "--max-epochs", "2", "--out", str(root / "report.json"))
    return root


class TestPipeline:
    def test_features_outputs(self, pipeline_dir):
        lines = (pipeline_dir / "features.jsonl").read_text().strip().splitlines()
        assert len(lines) == 20
        record = json.loads(lines[0])
        assert {"utterance_id", "avg_energy", "avg_pitch_hz", "gender"} <= record.keys()

    def test_codes_outputs(self, pipeline_dir):
        lines = (pipeline_dir / "codes.jsonl").read_text().strip().splitlines()
        assert len(lines) == 20
        for line in lines:
            codes = json.loads(line)["codes"]
            assert len(codes) == 64
            assert all(0 <= c < 256 for c in codes)

    def test_annotations_match_oracle(self, pipeline_dir):
        lines = (pipeline_dir / "annotations.jsonl").read_text().strip().splitlines()
        assert len(lines) == 20
        summary = json.loads((pipeline_dir / "annotations.jsonl.summary.json").read_text())
        assert summary["kind"] == "annotation_summary"
        assert summary["unparseable"] == 0

    def test_report_is_schema_valid(self, pipeline_dir):
        runner = CliRunner()
        result = runner.invoke(
            main, ["report", "--in", str(pipeline_dir / "report.json"), "--validate"]
        )
        assert result.exit_code == 0
        assert "valid" in result.output
        doc = json.loads((pipeline_dir / "report.json").read_text())
        assert doc["kind"] == "classifier_run"
        assert doc["aggregate"]["repeats"] == 2
        assert doc["seeds"] == [9, 10]

    def test_report_summary_prints_uar(self, pipeline_dir):
        runner = CliRunner()
        result = runner.invoke(main, ["report", "--in", str(pipeline_dir / "report.json")])
        assert result.exit_code == 0
        assert "UAR" in result.output

    def test_per_run_artifacts_written(self, pipeline_dir):
        artifacts = pipeline_dir / "report.json.artifacts"
        checkpoints = sorted(p.name for p in artifacts.glob("*.serann"))
        histories = sorted(p.name for p in artifacts.glob("*.history.jsonl"))
        assert checkpoints == ["fixed_seed10.serann", "fixed_seed9.serann"]
        assert histories == ["fixed_seed10.history.jsonl", "fixed_seed9.history.jsonl"]
        first = json.loads((artifacts / "fixed_seed9.history.jsonl").read_text().splitlines()[0])
        assert {"epoch", "train_loss", "val_uar", "lr"} == set(first)

    def test_vqvae_history_lines(self, pipeline_dir):
        lines = (pipeline_dir / "vq-history.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2
        entry = json.loads(lines[0])
        assert {"epoch", "reconstruction", "codebook", "commitment", "total"} <= entry.keys()


class TestIdempotence:
    def test_features_rerun_identical_bytes(self, pipeline_dir, tmp_path):
        runner = CliRunner()
        manifest = pipeline_dir / "corpus" / "manifest.jsonl"
        result = runner.invoke(main, [
            "features", "--manifest", str(manifest),
            "--out", str(tmp_path / "f.jsonl"), "--mels-out", str(tmp_path / "m.serann"),
        ])
        assert result.exit_code == 0
        assert (tmp_path / "f.jsonl").read_bytes() == (pipeline_dir / "features.jsonl").read_bytes()
        assert (tmp_path / "m.serann").read_bytes() == (pipeline_dir / "mels.serann").read_bytes()

    def test_encode_rerun_identical_bytes(self, pipeline_dir, tmp_path):
        runner = CliRunner()
        manifest = pipeline_dir / "corpus" / "manifest.jsonl"
        result = runner.invoke(main, [
            "encode", "--manifest", str(manifest), "--mels", str(pipeline_dir / "mels.serann"),
            "--checkpoint", str(pipeline_dir / "vq.serann"), "--out", str(tmp_path / "codes.jsonl"),
        ])
        assert result.exit_code == 0
        assert (tmp_path / "codes.jsonl").read_bytes() == (pipeline_dir / "codes.jsonl").read_bytes()

    def test_annotate_resume_uses_cache(self, pipeline_dir, tmp_path):
        runner = CliRunner()
        manifest = pipeline_dir / "corpus" / "manifest.jsonl"
        result = runner.invoke(main, [
            "annotate", "--manifest", str(manifest), "--variant", "full", "--shots", "few",
            "--backend", "mock:oracle", "--features", str(pipeline_dir / "features.jsonl"),
            "--codes", str(pipeline_dir / "codes.jsonl"), "--seed", "5",
            "--out", str(tmp_path / "ann.jsonl"),
            "--cache", str(pipeline_dir / "annotations.jsonl.cache.jsonl"),
        ])
        assert result.exit_code == 0
        summary = json.loads((tmp_path / "ann.jsonl.summary.json").read_text())
        assert summary["cache_hits"] == summary["total"]


class TestFailures:
    def test_missing_wav_names_id_and_exits_nonzero(self, pipeline_dir, tmp_path):
        manifest = pipeline_dir / "corpus" / "manifest.jsonl"
        lines = manifest.read_text().strip().splitlines()
        doctored = [json.loads(line) for line in lines[:3]]
        doctored[1]["audio_path"] = "audio/not_there.wav"
        bad_manifest = tmp_path / "bad.jsonl"
        bad_manifest.write_text("\n".join(json.dumps(d) for d in doctored))
        # audio paths resolve relative to the manifest location
        (tmp_path / "audio").mkdir()
        for doc in (doctored[0], doctored[2]):
            src = pipeline_dir / "corpus" / doc["audio_path"]
            dst = tmp_path / doc["audio_path"]
            dst.parent.mkdir(parents=True, exist_ok=True)
            dst.write_bytes(src.read_bytes())
        runner = CliRunner()
        result = runner.invoke(main, [
            "features", "--manifest", str(bad_manifest),
            "--out", str(tmp_path / "f.jsonl"), "--mels-out", str(tmp_path / "m.serann"),
        ])
        assert result.exit_code == 1
        assert doctored[1]["utterance_id"] in result.output

    def test_bad_vqvae_config_rejected(self, pipeline_dir, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"vqvae": {"codebook_size": 0}}))
        runner = CliRunner()
        result = runner.invoke(main, [
            "train-vqvae", "--manifest", str(pipeline_dir / "corpus" / "manifest.jsonl"),
            "--mels", str(pipeline_dir / "mels.serann"), "--out", str(tmp_path / "x.serann"),
            "--desk-scale", "--config", str(config),
        ])
        assert result.exit_code == 1
        assert "config" in result.output

    def test_annotate_requires_features_for_contextual_variants(self, pipeline_dir, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, [
            "annotate", "--manifest", str(pipeline_dir / "corpus" / "manifest.jsonl"),
            "--variant", "text-energy-f0", "--backend", "mock:keyword",
            "--out", str(tmp_path / "a.jsonl"),
        ])
        assert result.exit_code == 1
        assert "--features" in result.output
