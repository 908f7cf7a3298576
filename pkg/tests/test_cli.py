import json

import pytest
from click.testing import CliRunner

from eyas.cli import main
from eyas.synthgen import CorpusManifest


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory, runner):
    out = tmp_path_factory.mktemp("cli_corpus")
    result = runner.invoke(
        main, ["gen", "--count", "6", "--seed", "9", "--noise", "6", "--out", str(out), "--size", "256x256"]
    )
    assert result.exit_code == 0, result.output
    return out


class TestGen:
    def test_manifest_written(self, small_corpus):
        manifest = CorpusManifest.load(small_corpus / "manifest.json")
        assert len(manifest.entries) == 6

    def test_bad_size(self, runner, tmp_path):
        result = runner.invoke(main, ["gen", "--count", "1", "--out", str(tmp_path), "--size", "huge"])
        assert result.exit_code == 2


class TestAnalyze:
    def test_corpus_analysis_outputs(self, small_corpus, tmp_path, runner):
        out = tmp_path / "pred"
        result = runner.invoke(main, ["analyze", "--input", str(small_corpus), "--out", str(out)])
        assert result.exit_code == 0, result.output
        manifest = CorpusManifest.load(small_corpus / "manifest.json")
        for entry in manifest.entries:
            pdir = out / entry.id
            for name in ("rois.json", "findings.json", "report.txt", "report.json", "onh_mask.png"):
                assert (pdir / name).exists(), name
        findings = json.loads((out / manifest.entries[0].id / "findings.json").read_text())
        assert set(findings) == {"onh", "macula", "vessels"}

    def test_deterministic_outputs(self, small_corpus, tmp_path, runner):
        manifest = CorpusManifest.load(small_corpus / "manifest.json")
        image = small_corpus / manifest.entries[0].image
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            result = runner.invoke(
                main,
                ["analyze", "--input", str(image), "--out", str(out),
                 "--laterality", manifest.entries[0].laterality],
            )
            assert result.exit_code == 0, result.output
        dir_a = next(out_a.iterdir())
        dir_b = out_b / dir_a.name
        for f in dir_a.iterdir():
            if f.name == "report.json":
                # provenance timestamps differ; compare everything else
                a = json.loads(f.read_text())
                b = json.loads((dir_b / f.name).read_text())
                a.pop("provenance"), b.pop("provenance")
                assert a == b
            else:
                assert f.read_bytes() == (dir_b / f.name).read_bytes(), f.name

    def test_missing_input_exit_2(self, runner, tmp_path):
        result = runner.invoke(main, ["analyze", "--input", str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
        assert result.exit_code == 2
        assert result.stderr.strip()

    def test_json_errors(self, runner, tmp_path):
        result = runner.invoke(
            main, ["--json-errors", "analyze", "--input", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]
        )
        assert result.exit_code == 2
        err = json.loads(result.stderr.strip().splitlines()[-1])
        assert set(err["error"]) == {"code", "message"}


class TestEvalAndFormats:
    @pytest.fixture(scope="module")
    def predictions(self, small_corpus, tmp_path_factory, runner):
        out = tmp_path_factory.mktemp("cli_pred")
        result = runner.invoke(main, ["analyze", "--input", str(small_corpus), "--out", str(out)])
        assert result.exit_code == 0, result.output
        return out

    def test_eval_report(self, small_corpus, predictions, tmp_path, runner):
        report_path = tmp_path / "report.json"
        result = runner.invoke(
            main, ["eval", "--corpus", str(small_corpus), "--pred", str(predictions), "--out", str(report_path)]
        )
        assert result.exit_code == 0, result.output
        report = json.loads(report_path.read_text())
        assert report["images"] == 6
        assert set(report["segmentation"]) == {"onh", "macula", "vessels"}
        assert "mean_iou" in report["segmentation"]["onh"]
        assert "av_component_accuracy" in report["segmentation"]["vessels"]
        assert set(report["classification"]) == {"shape", "caliber", "reflex"}
        assert "per_class" in report["classification"]["shape"]

    def test_compare_formats_cli(self, small_corpus, tmp_path, runner):
        out_path = tmp_path / "formats.json"
        result = runner.invoke(
            main, ["compare-formats", "--corpus", str(small_corpus), "--out", str(out_path)]
        )
        assert result.exit_code == 0, result.output
        obj = json.loads(out_path.read_text())
        assert len(obj["formats"]) == 4

    def test_eval_without_manifest(self, runner, tmp_path):
        result = runner.invoke(
            main, ["eval", "--corpus", str(tmp_path), "--pred", str(tmp_path), "--out", str(tmp_path / "r.json")]
        )
        assert result.exit_code == 2


class TestBackendOverride:
    def test_remote_backend_via_config(self, small_corpus, tmp_path, runner):
        """--backend resolves config-declared remote backends; others stay builtin."""
        import threading
        import time as _time

        import uvicorn
        from fastapi import FastAPI, Request, Response

        from conftest import free_port
        from eyas.core import io as core_io

        entry = CorpusManifest.load(small_corpus / "manifest.json").entries[0]
        truth_mask = core_io.decode_mask_png((small_corpus / entry.onh_mask).read_bytes())

        app = FastAPI()

        @app.post("/segment")
        async def segment(request: Request):
            return Response(content=core_io.encode_mask_png(truth_mask), media_type="image/png")

        port = free_port()
        server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error"))
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        while not server.started:
            _time.sleep(0.02)
        try:
            cfg_path = tmp_path / "cfg.json"
            cfg_path.write_text(json.dumps({
                "remote_backends": [{
                    "name": "oracle", "version": "1.0.0", "structure": "onh",
                    "kind": "remote", "endpoint": f"http://127.0.0.1:{port}",
                }],
            }))
            out = tmp_path / "pred"
            result = runner.invoke(main, [
                "analyze", "--input", str(small_corpus / entry.image), "--out", str(out),
                "--laterality", entry.laterality, "--config", str(cfg_path),
                "--backend", "oracle@1.0.0",
            ])
            assert result.exit_code == 0, result.output
            findings = json.loads((out / entry.id / "findings.json").read_text())
            assert findings["onh"]["source_backend"] == "oracle@1.0.0"
            assert findings["macula"]["source_backend"] == "builtin@1.0.0"
            served = core_io.decode_mask_png((out / entry.id / "onh_mask.png").read_bytes())
            import numpy as np
            # remote truth mask, clipped to the dilated roi, flows downstream
            assert (served.bits <= truth_mask.bits).all()
            assert served.foreground_count > 0
        finally:
            server.should_exit = True
            thread.join(timeout=5)
