import json
import os
import subprocess

import numpy as np
import pytest

import fprobe

CLI = os.environ.get("FPROBE_CLI")
pytestmark = pytest.mark.skipif(not CLI, reason="FPROBE_CLI not set")


def run(*args, check=True):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(proc.stderr)
    return proc


def test_gen_data_counts(tmp_path):
    run("gen-data", "--task", "add", "--max-operand", 1, "--seed", 7, "--out", tmp_path / "a")
    assert len((tmp_path / "a" / "data.jsonl").read_text().splitlines()) == 3
    run("gen-data", "--task", "add", "--max-operand", 260, "--vocab-max", 520, "--out", tmp_path / "b")
    assert len((tmp_path / "b" / "data.jsonl").read_text().splitlines()) == 34191


def test_gen_data_is_deterministic(tmp_path):
    for name in ("a", "b"):
        run("gen-data", "--task", "rpn", "--max-operand", 12, "--seed", 3, "--out", tmp_path / name)
    for f in ("data.jsonl", "data.vocab"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_errors_are_json(tmp_path):
    proc = run("train", "--data", tmp_path / "missing", "--out", tmp_path / "x", check=False)
    assert proc.returncode != 0
    err = json.loads(proc.stderr.strip().splitlines()[-1])
    assert err["error"]["command"] == "train"
    proc = run("gen-data", "--task", "sub", "--out", tmp_path / "y", check=False)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["error"]["kind"] == "usage"


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    run("gen-data", "--task", "add", "--max-operand", 10, "--vocab-max", 20, "--out", root / "data")
    (root / "cfg.toml").write_text("seed = 5\n[model]\nn_layers = 1\nd_model = 16\nn_heads = 2\nd_ff = 32\n"
                                   "[train]\nepochs = 3\nlr_start = 1e-3\n")
    run("train", "--config", root / "cfg.toml", "--data", root / "data", "--embedding", "fourier:2,5",
        "--freeze-embedding", "--epochs", 2, "--quiet", "--out", root / "run")
    return root


def test_flags_override_config(trained):
    rows = (trained / "run" / "metrics.csv").read_text().splitlines()
    assert rows[0] == "epoch,train_loss,val_loss,val_accuracy"
    assert len(rows) == 3
    manifest = json.loads((trained / "run" / "manifest.json").read_text())
    assert manifest["options"]["train"]["epochs"] == 2
    assert manifest["seeds"]["model"] == 5


def test_frozen_rows_match_injection(trained):
    model = fprobe.load_checkpoint(str(trained / "run" / "model.fprb"))
    manifest = json.loads((trained / "run" / "manifest.json").read_text())
    emb = fprobe.synth_fourier_embedding(21, 16, [2.0, 5.0], manifest["options"]["low_freq_weight"],
                                         manifest["seeds"]["embedding"])
    np.testing.assert_array_equal(model.number_embeddings(), emb.astype(np.float32))


def test_seeds_change_metrics(trained):
    out = trained / "other_seed"
    run("train", "--config", trained / "cfg.toml", "--data", trained / "data", "--epochs", 2, "--seed", 6,
        "--quiet", "--out", out)
    assert (out / "metrics.csv").read_bytes() != (trained / "run" / "metrics.csv").read_bytes()


def test_lens_accuracy_is_monotone_in_k(trained):
    run("analyze", "lens-accuracy", "--ckpt", trained / "run" / "model.fprb", "--data", trained / "data",
        "--ks", "0,2,10", "--out", trained / "lens")
    rows = [r.split(",") for r in (trained / "lens" / "lens_accuracy.csv").read_text().splitlines()[1:]]
    assert len(rows) == 2
    for r in rows:
        acc = list(map(float, r[1:]))
        assert acc == sorted(acc)


def test_noop_row_matches_plain_eval(trained):
    run("ablate", "--ckpt", trained / "run" / "model.fprb", "--data", trained / "data", "--out", trained / "abl")
    rows = (trained / "abl" / "ablation.csv").read_text().splitlines()
    assert len(rows) == 8
    none = rows[1].split(",")
    vocab, ds = fprobe.load_dataset(str(trained / "data"))
    model = fprobe.load_checkpoint(str(trained / "run" / "model.fprb"))
    assert float(none[4]) == model.evaluate(ds.subset("val")).accuracy


def test_replay_check(trained):
    proc = run("replay", "--manifest", trained / "run" / "manifest.json", "--out", trained / "again", "--check")
    assert "replay matches manifest" in proc.stdout
