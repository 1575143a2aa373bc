import hashlib

import pytest

from wsground import fileio
from wsground.cli import main

CONFIG = """[world]
images = 60
feature_dim = 16
[train]
epochs = 2
batch_size = 8
hidden = 16
embed_dim = 8
token_dim = 6
learning_rate = 0.001
[loss]
lambda_a = 2
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "c.ini").write_text(CONFIG)
    assert main(["gen", "--config", str(d / "c.ini"), "--out", str(d / "d.bin"), "--seed", "4"]) == 0
    return d


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_gen_is_deterministic(work):
    assert main(["gen", "--config", str(work / "c.ini"), "--out", str(work / "d2.bin"), "--seed", "4"]) == 0
    assert sha(work / "d.bin") == sha(work / "d2.bin")
    assert (work / "d.bin.taxonomy.txt").read_text().startswith("[classes]\nbackground\n")


def test_train_eval_heatmap(work, capsys):
    data, cfg, ckpt = str(work / "d.bin"), str(work / "c.ini"), str(work / "m.ckpt")
    before = sha(work / "d.bin")
    assert main(["train", "--data", data, "--config", cfg, "--out", ckpt, "--variant", "nce+distill"]) == 0
    capsys.readouterr()
    assert main(["eval", "--data", data, "--ckpt", ckpt, "--report", str(work / "r.csv"), "--per-category"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("accuracy=")
    value = float(out.split("=")[1])
    assert 0.0 <= value <= 1.0
    assert (work / "r.csv").read_text().splitlines()[0] == "bucket,correct,total,accuracy"
    assert (work / "m.ckpt.log.csv").read_text().startswith("step,total,loss_is,loss_rp,lambda\n")
    assert main(["heatmap", "--data", data, "--ckpt", ckpt, "--image", "0", "--sentence", "1",
                 "--out", str(work / "hm"), "--grid", "6x9"]) == 0
    pgms = sorted((work / "hm").glob("*.pgm"))
    assert pgms and all(p.read_bytes().startswith(b"P5\n9 6\n255\n") for p in pgms)
    assert all(len(p.read_bytes()) == len(b"P5\n9 6\n255\n") + 54 for p in pgms)
    assert sha(work / "d.bin") == before


def test_eval_unaffected_by_posteriors(work):
    data, cfg, ckpt = work / "d.bin", str(work / "c.ini"), str(work / "m2.ckpt")
    assert main(["train", "--data", str(data), "--config", cfg, "--out", ckpt]) == 0
    bare = work / "bare.bin"
    bare.write_bytes(fileio.drop_section(data.read_bytes(), b"POST"))
    assert main(["eval", "--data", str(data), "--ckpt", ckpt, "--report", str(work / "a.csv")]) == 0
    assert main(["eval", "--data", str(bare), "--ckpt", ckpt, "--report", str(work / "b.csv")]) == 0
    assert (work / "a.csv").read_bytes() == (work / "b.csv").read_bytes()
    assert (work / "a.csv.json").read_bytes() == (work / "b.csv.json").read_bytes()


def test_ablate_writes_four_rows(work):
    assert main(["ablate", "--data", str(work / "d.bin"), "--config", str(work / "c.ini"),
                 "--out", str(work / "ab")]) == 0
    rows = (work / "ab" / "ablation.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["margin", "nce", "distill", "nce_distill"]


def test_distill_without_posteriors_fails_fast(work, capsys):
    bare = work / "bare2.bin"
    bare.write_bytes(fileio.drop_section((work / "d.bin").read_bytes(), b"POST"))
    code = main(["train", "--data", str(bare), "--config", str(work / "c.ini"), "--out", str(work / "x.ckpt"),
                 "--variant", "nce+distill"])
    assert code == 2
    assert not (work / "x.ckpt").exists()
    assert "posteriors" in capsys.readouterr().err


def test_usage_errors_exit_1(capsys):
    assert main(["eval", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["train", "--data", "d", "--config", "c", "--out", "o", "--variant", "softmax"]) == 1


def test_data_errors_exit_2(work, tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[loss]\ntau = -1\n")
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "o.bin")]) == 2
    assert "[loss] tau" in capsys.readouterr().err
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"XXXX")
    assert main(["eval", "--data", str(work / "d.bin"), "--ckpt", str(junk), "--report", str(tmp_path / "r")]) == 2
    assert main(["eval", "--data", str(tmp_path / "missing.bin"), "--ckpt", str(junk),
                 "--report", str(tmp_path / "r")]) == 2


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "learning_rate = 0.0001" in capsys.readouterr().out
