import json

import numpy as np
import pytest

from seqground.cli import run
from seqground.io import read_array_file

SYNTH = {"num_samples": 6, "clip_count_range": [20, 30], "diagram_count_range": [2, 3], "feature_dim": 8}
TRAIN = {
    "version": 1,
    "model": {"hidden_dim": 16, "num_heads": 2, "num_layers": 2, "num_queries": 3, "normalize_video_length": 32},
    "train": {"epochs": 2, "batch_size": 2, "learning_rate": 1e-3},
}


def write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    gen = write(root / "gen.json", {"version": 1, "synth": SYNTH, "val_samples": 3})
    assert run(["gen-data", "--config", gen, "--out", str(root / "data")]) == 0
    cfg = write(root / "train.json", TRAIN)
    code = run(
        [
            "train", "--manifest", str(root / "data/manifest.json"),
            "--val-manifest", str(root / "data/val_manifest.json"),
            "--config", cfg, "--out", str(root / "run"),
        ]
    )
    assert code == 0
    return root


def test_gen_data_outputs(pipeline):
    data = pipeline / "data"
    manifest = json.loads((data / "manifest.json").read_text())
    assert len(manifest) == 6
    assert len(json.loads((data / "val_manifest.json").read_text())) == 3
    snap = json.loads((data / "resolved_config.json").read_text())
    assert snap["command"] == "gen-data" and snap["config"]["synth"]["num_samples"] == 6


def test_train_outputs(pipeline):
    run_dir = pipeline / "run"
    lines = (run_dir / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2
    assert (run_dir / "checkpoints/best/header.json").exists()
    assert (run_dir / "checkpoints/last/header.json").exists()
    assert json.loads((run_dir / "resolved_config.json").read_text())["config"]["train"]["epochs"] == 2


def test_eval_report(pipeline):
    report = pipeline / "report.json"
    args = ["eval", "--manifest", str(pipeline / "data/val_manifest.json"), "--checkpoint", str(pipeline / "run/checkpoints/best")]
    assert run(args + ["--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert set(doc["r_at_1"]) == {"0.3", "0.5", "0.7"}
    assert 0.0 <= doc["miou"] <= 1.0
    assert {"random", "full_duration"} <= set(doc["baselines"])


def test_eval_missing_checkpoint(pipeline, capsys):
    missing = pipeline / "nope"
    code = run(["eval", "--manifest", str(pipeline / "data/manifest.json"), "--checkpoint", str(missing), "--report", str(pipeline / "r.json")])
    assert code == 1
    assert str(missing) in capsys.readouterr().err


def test_analyze(pipeline):
    out = pipeline / "analysis"
    args = ["analyze", "--manifest", str(pipeline / "data/val_manifest.json"), "--checkpoint", str(pipeline / "run/checkpoints/best")]
    assert run(args + ["--out", str(out)]) == 0
    doc = json.loads((out / "analysis.json").read_text())
    assert "kendall_tau" in doc and "mean_overlap" in doc
    assert (out / "bias_gt.csv").read_text().startswith("start,end")
    assert (out / "bias_pred.csv").exists()


def test_viz_attn(pipeline):
    manifest = json.loads((pipeline / "data/val_manifest.json").read_text())
    sid = manifest[0]["id"]
    out = pipeline / "viz"
    args = ["viz-attn", "--manifest", str(pipeline / "data/val_manifest.json"), "--checkpoint", str(pipeline / "run/checkpoints/best")]
    assert run(args + ["--sample", sid, "--out", str(out)]) == 0
    index = json.loads((out / f"{sid}.attn.json").read_text())
    m = len(manifest[0]["ground_truth"])
    cross, shape = read_array_file(out / index["cross_attention"]["file"])
    self_, _ = read_array_file(out / index["self_attention"]["file"])
    assert tuple(shape) == (2, 2, m * 3, 32)
    assert self_.shape == (2, 2, m * 3, m * 3)
    np.testing.assert_allclose(cross.sum(-1), 1.0, atol=1e-5)
    assert run(args + ["--sample", "missing_id", "--out", str(out)]) == 1


def test_align(pipeline):
    cfg = write(pipeline / "align.json", {"version": 1, "dim": 8, "epochs": 1})
    out = pipeline / "align"
    assert run(["align", "--manifest", str(pipeline / "data/manifest.json"), "--config", cfg, "--out", str(out)]) == 0
    assert (out / "projection/header.json").exists()
    code = run(
        [
            "train", "--manifest", str(pipeline / "data/manifest.json"), "--config", write(pipeline / "t8.json", dict(TRAIN, model=dict(TRAIN["model"], hidden_dim=8))),
            "--projection", str(out / "projection"), "--out", str(pipeline / "run_aligned"),
        ]
    )
    assert code == 0


def test_unknown_flag(capsys):
    assert run(["gen-data", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    cfg = write(tmp_path / "c.json", {"version": 1, "synth": {"num_samples": 1, "typo": 3}})
    assert run(["gen-data", "--config", cfg, "--out", str(tmp_path / "d")]) == 1
    cfg = write(tmp_path / "c2.json", {"synth": {}})
    assert run(["gen-data", "--config", cfg, "--out", str(tmp_path / "d")]) == 1


def test_runtime_error_code(tmp_path):
    # more segments than any query can absorb: each diagram appears twice with K=1
    gen = write(tmp_path / "g.json", {"version": 1, "synth": dict(SYNTH, prob_repeated_step=1.0)})
    assert run(["gen-data", "--config", gen, "--out", str(tmp_path / "d")]) == 0
    cfg = write(tmp_path / "t.json", dict(TRAIN, model=dict(TRAIN["model"], num_queries=1)))
    assert run(["train", "--manifest", str(tmp_path / "d/manifest.json"), "--config", cfg, "--out", str(tmp_path / "r")]) == 2


def test_gen_data_idempotent(tmp_path):
    gen = write(tmp_path / "g.json", {"version": 1, "synth": SYNTH})
    run(["gen-data", "--config", gen, "--out", str(tmp_path / "a")])
    run(["gen-data", "--config", gen, "--out", str(tmp_path / "b")])
    for f in (tmp_path / "a/features").iterdir():
        assert f.read_bytes() == (tmp_path / "b/features" / f.name).read_bytes()
    assert (tmp_path / "a/manifest.json").read_text() == (tmp_path / "b/manifest.json").read_text()
