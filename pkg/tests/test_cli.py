import subprocess
import sys

import pytest

from shapeparse.cli import main

TINY_CONFIG = """algorithm = DRAG
epochs = 2
max_depth = 3
batch_size = 8
side = 8
conv = 4
dense = 8
critic_hidden = 8
log_every = 0
"""


@pytest.fixture
def data(tmp_path):
    d = tmp_path / "data"
    assert main(["generate", "--n", "6", "--side", "16", "--seed", "1", "--out", str(d)]) == 0
    return d


def files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_generate_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        main(["generate", "--n", "3", "--side", "16", "--guillotine", "--depth", "5",
              "--out", str(tmp_path / name)])
    assert files(tmp_path / "a") == files(tmp_path / "b")


def test_oracle_writes_trees_and_renders(data, tmp_path, capsys):
    assert main(["oracle", "--data", str(data), "--depth", "4", "--out-trees", str(tmp_path / "t"),
                 "--out-render", str(tmp_path / "r")]) == 0
    assert "oracle mean pixel accuracy" in capsys.readouterr().out
    assert len(list((tmp_path / "t").glob("*.json"))) == 6
    assert len(list((tmp_path / "r").glob("*.png"))) == 6
    assert (tmp_path / "t" / "accuracy.csv").exists()
    tree = tmp_path / "t" / "item_0000.json"
    assert main(["render", "--tree", str(tree), "--image", str(data / "item_0000.png"),
                 "--out", str(tmp_path / "one.png"), "--scale", "2"]) == 0


def test_train_and_eval_are_deterministic(data, tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text(TINY_CONFIG)
    for name in ("a", "b"):
        assert main(["train", "--data", str(data), "--config", str(cfg), "--folds", "2",
                     "--out", str(tmp_path / name)]) == 0
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a == b
    assert {str(p) for p in a} >= {"config.txt", "fold0.ckpt", "fold1.ckpt", "fold0_log.csv",
                                   "report.csv", "report.txt"}
    capsys.readouterr()
    assert main(["eval", "--data", str(data), "--checkpoint", str(tmp_path / "a" / "fold0.ckpt"),
                 "--report", str(tmp_path / "e.csv")]) == 0
    assert "mean pixel accuracy" in capsys.readouterr().out
    assert (tmp_path / "e.csv").read_text().startswith("algorithm,fold,train_acc,test_acc")


def test_train_overrides_and_single_fold(data, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text(TINY_CONFIG)
    assert main(["train", "--data", str(data), "--config", str(cfg), "--algorithm", "BC",
                 "--seed", "3", "--folds", "1", "--out", str(tmp_path / "o")]) == 0
    text = (tmp_path / "o" / "config.txt").read_text()
    assert "algorithm = BC" in text and "seed = 3" in text
    assert "BC" in (tmp_path / "o" / "report.txt").read_text()


def test_exit_codes(data, tmp_path, capsys):
    assert main([]) == 1
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "o"),
                 "--algorithm", "nope"]) == 1
    assert main(["train", "--data", str(data), "--config", str(tmp_path / "missing.txt"),
                 "--out", str(tmp_path / "o")]) == 2
    assert "missing.txt" in capsys.readouterr().err
    bad = tmp_path / "bad.txt"
    bad.write_text("bogus = 1\n")
    assert main(["train", "--data", str(data), "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["oracle", "--data", str(tmp_path / "nowhere")]) == 2
    assert main(["eval", "--data", str(data), "--checkpoint", str(tmp_path / "x.ckpt")]) == 2
    assert main(["train", "--data", str(data), "--folds", "0", "--out", str(tmp_path / "o")]) == 1


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "shapeparse", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "generate" in out.stdout
