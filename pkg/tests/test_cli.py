import json
import subprocess
import sys

import numpy as np
import pytest

from csprivacy.cli import RunConfig, main, parse_report, report_table
from csprivacy.data import load_manifest
from csprivacy.packing import load_clip, load_tensor
from csprivacy.sensing import load_matrix

SMALL = {
    "data": {"classes": 10, "clips_per_class": 7, "T": 8, "H": 32, "W": 32, "seed": 2},
    "sensing": {"family": "gaussian", "B": 16, "ratio": 4, "seed": 1},
    "model": {"stem_channels": 4, "table": [[4, 4, 4, 2, 4, 4]] * 4, "seed": 0},
    "schedule": {"lr": 0.001, "batch_size": 8, "max_epochs": 2},
}


@pytest.fixture()
def cfg_path(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(SMALL))
    return p


def run(*argv):
    return main(["--quiet", *map(str, argv)])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.json"
    cfg.write_text(json.dumps(SMALL))
    assert run("--config", cfg, "synth", "--out", root / "data") == 0
    assert run("--config", cfg, "make-matrix", "--out", root / "key") == 0
    assert run("--config", cfg, "encode", "--manifest", root / "data/manifest.json",
               "--matrix", root / "key/matrix.csm", "--out", root / "enc") == 0
    assert run("--config", cfg, "train", "--manifest", root / "enc/manifest.json", "--out", root / "model") == 0
    assert run("--config", cfg, "eval", "--checkpoint", root / "model/checkpoint.ckp",
               "--manifest", root / "enc/manifest.json", "--out", root / "model") == 0
    return root


def test_pipeline_outputs(pipeline):
    man = load_manifest(pipeline / "data/manifest.json")
    assert len(man.records) == 70
    phi = load_matrix(pipeline / "key/matrix.csm")
    assert (phi.rows, phi.cols) == (64, 256)
    enc = load_manifest(pipeline / "enc/manifest.json")
    assert enc.kind == "tensors" and len(enc.records) == 70
    assert enc.sensing["family"] == "gaussian" and enc.sensing["ratio"] == 4
    for rec, crec in zip(man.records, enc.records):
        clip = load_clip(man.resolve(rec))
        mt = load_tensor(enc.resolve(crec))
        assert mt.shape == (8, 2, 2, 192)
        assert clip.frames.size / mt.data.size == 4
        assert crec.label == rec.label and crec.split == rec.split
    hist = json.loads((pipeline / "model/history.json").read_text())["history"]
    assert len(hist) == 2 and all("lr" in h for h in hist)
    ev = json.loads((pipeline / "model/eval.json").read_text())
    assert 0.0 <= ev["accuracy"] <= 1.0
    conf = np.array(ev["confusion"])
    assert conf.sum() == ev["count"] == 10
    assert conf.sum(axis=1).tolist() == [1] * 10


def test_encode_rerun_is_byte_identical(pipeline, tmp_path):
    assert run("encode", "--manifest", pipeline / "data/manifest.json",
               "--matrix", pipeline / "key/matrix.csm", "--out", tmp_path) == 0
    for f in sorted((pipeline / "enc/tensors").iterdir()):
        assert f.read_bytes() == (tmp_path / "tensors" / f.name).read_bytes()
    a = json.loads((pipeline / "enc/manifest.json").read_text())
    b = json.loads((tmp_path / "manifest.json").read_text())
    assert a == b


def test_fine_tune_from_checkpoint(pipeline, tmp_path, cfg_path):
    assert run("--config", cfg_path, "synth", "--classes", 2, "--out", tmp_path / "fall") == 0
    assert run("encode", "--manifest", tmp_path / "fall/manifest.json",
               "--matrix", pipeline / "key/matrix.csm", "--out", tmp_path / "enc") == 0
    assert run("--config", cfg_path, "train", "--manifest", tmp_path / "enc/manifest.json",
               "--init", pipeline / "model/checkpoint.ckp", "--max-epochs", 1, "--out", tmp_path / "ft") == 0
    hist = json.loads((tmp_path / "ft/history.json").read_text())
    assert len(hist["history"]) == 1 and hist["meta"]["classes"] == ["non_fall", "fall"]


def test_privacy_eval_same_key_and_identity(pipeline, tmp_path):
    assert run("privacy-eval", "--manifest", pipeline / "data/manifest.json", "--matrix",
               pipeline / "key/matrix.csm", "--wrong-seed", 1, "--max-clips", 1, "--out", tmp_path / "a") == 0
    rep = json.loads((tmp_path / "a/privacy.json").read_text())
    assert rep["mean_gap"] == 0.0
    assert run("make-matrix", "--family", "identity", "--ratio", 1, "--out", tmp_path / "id") == 0
    assert run("privacy-eval", "--manifest", pipeline / "data/manifest.json", "--matrix",
               tmp_path / "id/matrix.csm", "--wrong-seed", 5, "--max-clips", 1, "--out", tmp_path / "b") == 0
    rep = json.loads((tmp_path / "b/privacy.json").read_text())
    assert rep["mean_psnr_true"] == "inf"


def test_usage_errors_exit_1(tmp_path, cfg_path, capsys):
    assert run("synth", "--T", 4, "--out", tmp_path) == 1
    assert run("synth", "--H", 8, "--out", tmp_path) == 1
    assert run("make-matrix", "--ratio", 3, "--out", tmp_path) == 1
    assert run("make-matrix", "--ratio", 128, "--out", tmp_path) == 1
    assert run("make-matrix", "--family", "smm", "--sub-block", 5, "--out", tmp_path) == 1
    assert run("make-matrix", "--family", "convcs", "--kernel", 17, "--out", tmp_path) == 1
    with pytest.raises(SystemExit) as exc:
        main(["no-such-verb"])
    assert exc.value.code == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sensing": {"colour": 3}}))
    assert run("--config", bad, "make-matrix", "--out", tmp_path) == 1
    assert "error" in capsys.readouterr().err


def test_format_errors_exit_2(pipeline, tmp_path):
    broken = tmp_path / "broken.csm"
    raw = (pipeline / "key/matrix.csm").read_bytes()
    broken.write_bytes(raw[:-1] + bytes([raw[-1] ^ 0xFF]))
    assert run("encode", "--manifest", pipeline / "data/manifest.json", "--matrix", broken,
               "--out", tmp_path / "x") == 2
    assert run("train", "--manifest", pipeline / "data/manifest.json", "--out", tmp_path / "y") == 2
    assert run("eval", "--checkpoint", tmp_path / "none.ckp", "--manifest",
               pipeline / "enc/manifest.json", "--out", tmp_path / "z") == 2
    assert run("report", tmp_path / "missing.json", "--out", tmp_path) == 2


def test_report_layout_and_roundtrip(tmp_path):
    fams = ("gaussian", "bernoulli", "smm", "lsmm", "convcs")
    evals = [{"family": f, "ratio": r, "accuracy": 0.5 + 0.01 * i + 0.001 * r}
             for i, f in enumerate(fams) for r in (4, 16, 32, 64)]
    text = report_table(evals)
    lines = text.strip().split("\n")
    assert lines[0] == "family,r=4,r=16,r=32,r=64"
    assert len(lines) == 6
    parsed = parse_report(text)
    assert len(parsed) == 20
    assert all(parsed[(e["family"], e["ratio"])] == e["accuracy"] for e in evals)
    partial = parse_report(report_table(evals[:3] + [{"family": "smm"}]))
    assert len(partial) == 3
    assert report_table(evals[:3]).split("\n")[2] == "bernoulli,,,,"
    paths = []
    for i, e in enumerate(evals[:2]):
        p = tmp_path / f"e{i}.json"
        p.write_text(json.dumps(e))
        paths.append(p)
    assert run("report", *paths, "--out", tmp_path) == 0
    assert parse_report((tmp_path / "report.csv").read_text()) == {("gaussian", 4): evals[0]["accuracy"],
                                                                   ("gaussian", 16): evals[1]["accuracy"]}


def test_config_roundtrip_and_defaults():
    cfg = RunConfig()
    assert cfg.data.clips_per_class == 100 and cfg.data.classes == 10
    assert RunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "csprivacy", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for verb in ("synth", "make-matrix", "encode", "train", "eval", "privacy-eval", "report"):
        assert verb in out.stdout


def test_train_on_empty_split_exits_1(pipeline, tmp_path):
    # 4 clips per class leave the validation split empty
    assert run("synth", "--classes", 2, "--clips-per-class", 4, "--T", 8, "--H", 32, "--W", 32,
               "--out", tmp_path / "d") == 0
    assert run("encode", "--manifest", tmp_path / "d/manifest.json", "--matrix", pipeline / "key/matrix.csm",
               "--out", tmp_path / "e") == 0
    assert run("train", "--manifest", tmp_path / "e/manifest.json", "--out", tmp_path / "m") == 1
