import csv
import io
import json

import pytest

from fairgap.cli import main
from fairgap.corpus import load_jsonl

SYNTH = {"num_classes": 2, "docs_per_class": 60, "gender_skew": [0.2, 0.8], "proxy_strength": 0.5, "seed": 1}


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


@pytest.fixture
def workspace(tmp_path):
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps(SYNTH))
    out = str(tmp_path)
    assert main(["synth", "--config", str(cfg), "--out-dir", out]) == 0
    assert main(["train", "--in", str(tmp_path / "corpus.jsonl"), "--out-dir", out]) == 0
    return tmp_path


class TestSteps:
    def test_synth_manifest(self, workspace):
        manifest = json.loads((workspace / "synth.manifest.json").read_text())
        assert manifest["seeds"] == {"synth": 1}
        assert len(manifest["config_digest"]) == 64
        assert set(manifest["versions"]) >= {"fairgap", "numpy", "scipy", "python"}
        assert len(load_jsonl(workspace / "corpus.jsonl")) == 120

    def test_synth_seed_override(self, workspace, tmp_path):
        out = tmp_path / "other.jsonl"
        main(["synth", "--config", str(workspace / "synth.json"), "--synth-seed", "9", "--out", str(out),
              "--out-dir", str(tmp_path)])
        assert load_jsonl(out) != load_jsonl(workspace / "corpus.jsonl")

    def test_debias(self, workspace):
        out = workspace / "us.jsonl"
        code = main(["debias", "--in", str(workspace / "corpus.jsonl"), "--method", "us-cda",
                     "--out", str(out), "--out-dir", str(workspace)])
        assert code == 0
        assert any(d.is_counterfactual for d in load_jsonl(out))

    def test_audit_outputs(self, workspace, capsys):
        code = main(["audit", "--model", str(workspace / "model.json"), "--data", str(workspace / "corpus.jsonl"),
                     "--positive-class", "c1", "--buckets", "default", "--out-dir", str(workspace)])
        assert code == 0
        report = json.loads((workspace / "report.json").read_text())
        assert report["metadata"]["manifest"] == "audit.manifest.json"
        assert report["buckets"] is not None
        rows = read_csv(workspace / "report.csv")
        # 2 ppr rows + 2 classes x 4 per-class kinds + 6 rms + accuracy + auc
        assert len(rows) == 18
        summary = json.loads(capsys.readouterr().out)
        assert summary["missing"] == 0

    def test_audit_missing_exit_code(self, workspace, tmp_path):
        data = tmp_path / "tiny.jsonl"
        data.write_text(json.dumps({"text": "she", "label": "c1", "gender": "female"}) + "\n"
                        + json.dumps({"text": "he", "label": "c0", "gender": "male"}) + "\n")
        assert main(["audit", "--model", str(workspace / "model.json"), "--data", str(data),
                     "--out-dir", str(tmp_path)]) == 2

    def test_audit_class_mismatch(self, workspace, tmp_path):
        data = tmp_path / "bad.jsonl"
        data.write_text(json.dumps({"text": "x", "label": "other"}) + "\n")
        assert main(["audit", "--model", str(workspace / "model.json"), "--data", str(data),
                     "--out-dir", str(tmp_path)]) == 1

    def test_missing_input_is_error(self, tmp_path, capsys):
        assert main(["train", "--in", str(tmp_path / "nope.jsonl"), "--out-dir", str(tmp_path)]) == 1
        assert "error" in capsys.readouterr().err

    def test_perturb_stdin(self, monkeypatch, capsys):
        lines = [{"text": "He said his name", "gender": "male"}, {"text": "Ms. Lee", "label": 0}, {"text": "nobody"}]
        monkeypatch.setattr("sys.stdin", io.StringIO("".join(json.dumps(x) + "\n" for x in lines)))
        assert main(["perturb", "--target", "flip"]) == 0
        out = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
        assert [o["text"] for o in out] == ["She said her name", "Mr. Lee", "nobody"]
        assert out[1]["gender"] == "male" and out[1]["label"] == 0


class TestSweep:
    def test_grid_matches_audit(self, workspace):
        out = workspace / "sweep.csv"
        code = main(["sweep", "--model", str(workspace / "model.json"), "--data", str(workspace / "corpus.jsonl"),
                     "--w-grid", "0,1", "--positive-class", "c1", "--out", str(out), "--out-dir", str(workspace)])
        assert code == 0
        rows = read_csv(out)
        main(["audit", "--model", str(workspace / "model.json"), "--data", str(workspace / "corpus.jsonl"),
              "--positive-class", "c1", "--out-dir", str(workspace)])
        audit = read_csv(workspace / "report.csv")
        at_one = [{k: v for k, v in r.items() if k != "w"} for r in rows if float(r["w"]) == 1.0]
        assert at_one == audit
        for r in rows:
            if float(r["w"]) == 0.0 and r["metric"].startswith(("cg_", "rms_cg_")):
                assert float(r["value"]) == 0.0

    def test_train_on_the_fly(self, workspace):
        code = main(["sweep", "--train", str(workspace / "corpus.jsonl"), "--data", str(workspace / "corpus.jsonl"),
                     "--w-grid", "1", "--out-dir", str(workspace)])
        assert code == 0 and (workspace / "sweep.csv").exists()


PIPELINE = {
    "dataset": {"synth": SYNTH},
    "split": [0.7, 0.1, 0.2],
    "plans": [{"method": "none"}, {"method": "rw-cda", "cf_weight": "same"}, {"method": "us-cda", "order": "cda-first"}],
    "metrics": {"positive_class": "c1"},
    "seed": 2,
}


class TestPipeline:
    def _run(self, tmp_path, name, config):
        cfg = tmp_path / f"{name}.json"
        cfg.write_text(json.dumps(config))
        out = tmp_path / name
        return main(["pipeline", "--config", str(cfg), "--out-dir", str(out)]), out

    def test_outputs_and_determinism(self, tmp_path):
        code_a, a = self._run(tmp_path, "a", PIPELINE)
        code_b, b = self._run(tmp_path, "b", {**PIPELINE, "workers": 2})
        assert code_a == code_b == 0
        assert sorted(p.name for p in (a / "plans").iterdir()) == ["none", "rw-cda_same", "us-cda_cda-first"]
        assert (a / "comparison.csv").read_text() == (b / "comparison.csv").read_text()
        for slug in ("none", "rw-cda_same"):
            assert (a / "plans" / slug / "report.csv").read_text() == (b / "plans" / slug / "report.csv").read_text()
        manifest = json.loads((a / "pipeline.manifest.json").read_text())
        assert all(v["status"] == "completed" for v in manifest["status"]["plans"].values())

    def test_empty_plans(self, tmp_path):
        code, out = self._run(tmp_path, "empty", {**PIPELINE, "plans": []})
        assert code == 0
        assert sorted(p.name for p in out.iterdir()) == ["pipeline.manifest.json"]

    def test_failed_plan(self, tmp_path):
        # class c1 is all-female, so undersampling cannot balance it
        data = tmp_path / "d.jsonl"
        rows = [{"text": f"she x{i}", "label": "c1", "gender": "female"} for i in range(5)]
        rows += [{"text": f"he y{i}", "label": "c0", "gender": "male"} for i in range(5)]
        rows += [{"text": f"she y{i}", "label": "c0", "gender": "female"} for i in range(5)]
        data.write_text("".join(json.dumps(r) + "\n" for r in rows))
        config = {"dataset": {"train": str(data), "test": str(data)}, "plans": [{"method": "none"}, {"method": "us"}]}
        code, out = self._run(tmp_path, "fail", config)
        assert code == 1
        status = json.loads((out / "pipeline.manifest.json").read_text())["status"]["plans"]
        assert status["none"]["status"] == "completed" and status["us"]["status"] == "failed"
