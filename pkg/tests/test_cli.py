import hashlib

import pytest

from puffgrammar.cli import main, rank_rows, read_manifest
from puffgrammar.dataset import meta_path
from puffgrammar.grammar import read_events_csv
from puffgrammar.models import load


def digest(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--puffs", "6", "--distractors", "3", "--seed", "7", "--out", str(d / "data.csv")]) == 0
    return d


@pytest.fixture(scope="module")
def mlp_model(work):
    out = work / "mlp.model"
    argv = ["train", "--data", str(work / "data.csv"), "--family", "mlp", "--layers", "12,8", "--epochs", "5",
            "--batch", "100", "--seed", "1", "--out", str(out)]
    assert main(argv) == 0
    return out


def test_generate_is_deterministic(work):
    again = work / "again.csv"
    assert main(["generate", "--puffs", "6", "--distractors", "3", "--seed", "7", "--out", str(again)]) == 0
    assert digest(again) == digest(work / "data.csv")
    assert digest(work / "again.events.csv") == digest(work / "data.events.csv")
    assert meta_path(again).exists() if hasattr(meta_path(again), "exists") else True


def test_generate_usage_errors(work):
    assert main(["generate", "--puffs", "-1", "--out", str(work / "x.csv")]) == 2
    assert main(["generate", "--hol-min", "3", "--hol-max", "1", "--out", str(work / "x.csv")]) == 2
    assert main(["generate"]) == 2
    assert main(["bogus"]) == 2


def test_train_outputs(work, mlp_model):
    model = load(mlp_model)
    assert model.architecture == "60,12,8,4"
    assert model.meta["leak_mode"] == "balance_first"
    trace = open(str(mlp_model) + ".trace.csv").read().splitlines()
    assert len(trace) == 1 + 5
    manifest = read_manifest(str(mlp_model) + ".manifest")
    assert manifest["command"] == "train" and manifest["seed"] == "1"
    assert str(mlp_model) in manifest["output"]


def test_train_twice_identical_checksum(work, mlp_model):
    out = work / "mlp2.model"
    argv = ["train", "--data", str(work / "data.csv"), "--family", "mlp", "--layers", "12,8", "--epochs", "5",
            "--batch", "100", "--seed", "1", "--out", str(out)]
    assert main(argv) == 0
    assert digest(out) == digest(mlp_model)


def test_train_lstm_header_records_cells(work):
    out = work / "lstm.model"
    assert main(["train", "--data", str(work / "data.csv"), "--family", "lstm", "--units", "3", "--epochs", "2",
                 "--batch", "100", "--out", str(out)]) == 0
    assert "architecture=stacked:3" in open(out).read()
    assert len(load(out).cells) == 3


def test_train_errors(work):
    assert main(["train", "--data", str(work / "missing.csv"), "--out", str(work / "m")]) == 3
    bad = work / "bad.csv"
    bad.write_text("t,x,y,z,label\n0.0,1,2\n")
    assert main(["train", "--data", str(bad), "--out", str(work / "m")]) == 4
    assert main(["train", "--data", str(work / "data.csv"), "--epochs", "0", "--out", str(work / "m")]) == 2
    assert main(["train", "--data", str(work / "data.csv"), "--lr", "1e300", "--epochs", "3",
                 "--out", str(work / "m")]) == 5


def test_eval_all_and_repeatable(work, mlp_model):
    out1, out2 = work / "r1.csv", work / "r2.csv"
    for out in (out1, out2):
        assert main(["eval", "--model", str(mlp_model), "--data", str(work / "data.csv"), "--all",
                     "--out", str(out)]) == 0
    rows = open(out1).read().splitlines()
    assert rows[0] == "class,precision,recall,f1,support"
    assert [r.split(",")[0] for r in rows[1:]] == ["0", "1", "2", "3", "micro avg", "macro avg", "weighted avg"]
    assert digest(out1) == digest(out2)
    assert main(["eval", "--model", str(mlp_model), "--data", str(work / "data.csv"), "--out",
                 str(work / "r3.csv")]) == 0


def test_eval_feature_order_mismatch(work, mlp_model, tmp_path):
    data = tmp_path / "d.csv"
    data.write_text(open(work / "data.csv").read())
    meta = open(meta_path(work / "data.csv")).read().replace("xyz_interleaved", "xyz_planar")
    open(meta_path(data), "w").write(meta)
    assert main(["eval", "--model", str(mlp_model), "--data", str(data), "--all", "--out",
                 str(tmp_path / "r.csv")]) == 6


def test_detect_short_stream_and_bounds(work, mlp_model, tmp_path):
    short = tmp_path / "short.csv"
    short.write_text("t,x,y,z\n" + "".join(f"{k / 25!r},0,-1,0\n" for k in range(10)))
    out = tmp_path / "e.csv"
    assert main(["detect", "--model", str(mlp_model), "--data", str(short), "--out", str(out)]) == 0
    assert open(out).read().splitlines() == ["kind,start_sample,end_sample,hol_duration_s,session_id"]
    assert main(["detect", "--model", str(mlp_model), "--data", str(short), "--min-hol", "3.0", "--max-hol", "0.5",
                 "--out", str(out)]) == 2


def test_detect_writes_events(work, mlp_model, tmp_path):
    out = tmp_path / "e.csv"
    assert main(["detect", "--model", str(mlp_model), "--data", str(work / "data.csv"), "--out", str(out)]) == 0
    puffs, sessions = read_events_csv(out)
    assert all(p.start_sample < p.end_sample for p in puffs)


def test_sweep_grid_and_determinism(work, tmp_path):
    outs = [tmp_path / "s1.csv", tmp_path / "s2.csv"]
    for out in outs:
        assert main(["sweep", "--data", str(work / "data.csv"), "--epochs", "1,2", "--batches", "50,100",
                     "--layers", "1,2", "--seed", "3", "--out", str(out)]) == 0
    rows = open(outs[0]).read().splitlines()
    assert len(rows) == 1 + 8
    assert [int(r.split(",")[0]) for r in rows[1:]] == list(range(1, 9))
    assert digest(outs[0]) == digest(outs[1])


def test_sweep_parallel_matches_serial(work, tmp_path):
    serial, parallel = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["sweep", "--data", str(work / "data.csv"), "--epochs", "1", "--batches", "100", "--family", "lstm",
            "--units", "1,2"]
    assert main(base + ["--out", str(serial)]) == 0
    assert main(base + ["--workers", "2", "--out", str(parallel), "--manifest", str(tmp_path / "b.manifest")]) == 0
    assert open(serial).read() == open(parallel).read()


def test_sweep_empty_grid(work, tmp_path):
    assert main(["sweep", "--data", str(work / "data.csv"), "--epochs", "", "--out", str(tmp_path / "s.csv")]) == 2


def test_rank_rule():
    rows = [dict(loss=0.04, val_loss=0.04, size=4), dict(loss=0.03, val_loss=0.03, size=4),
            dict(loss=0.02, val_loss=0.04, size=2)]
    ranked = rank_rows(rows)
    assert ranked[0] is rows[2] and ranked[1] is rows[1]


def test_config_file_precedence(work, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("config_version=1\n# defaults for this run\nepochs=3\nbatch=50\nseed=4\n")
    out = tmp_path / "m.model"
    assert main(["train", "--data", str(work / "data.csv"), "--config", str(cfg), "--epochs", "2",
                 "--out", str(out)]) == 0
    manifest = read_manifest(str(out) + ".manifest")
    assert manifest["config.epochs"] == "2" and manifest["config.batch"] == "50" and manifest["seed"] == "4"
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense_key=1\n")
    assert main(["train", "--data", str(work / "data.csv"), "--config", str(bad), "--out", str(out)]) == 2
    assert main(["train", "--data", str(work / "data.csv"), "--config", str(tmp_path / "none.cfg"),
                 "--out", str(out)]) == 3


def test_replay_reproduces_everything(work, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs=2\n")
    out = tmp_path / "m.model"
    assert main(["train", "--data", str(work / "data.csv"), "--config", str(cfg), "--out", str(out)]) == 0
    files = [out, tmp_path / "m.model.trace.csv", tmp_path / "m.model.manifest"]
    before = [digest(f) for f in files]
    cfg.unlink()  # the manifest alone must suffice
    for f in files:
        f.unlink()
    assert main(["replay", str(tmp_path / "m.model.manifest")]) == 3
    # rebuild the manifest first, then replay from it
    assert main(["train", "--data", str(work / "data.csv"), "--epochs", "2", "--out", str(out)]) == 0
    assert main(["replay", str(files[2])]) == 0
    assert [digest(f) for f in files] == before
