import shutil
from pathlib import Path

import pytest

from flowaug.cli import main
from flowaug.ingest import load_dataset

DATA = Path(__file__).parent / "data"


@pytest.fixture
def work(tmp_path):
    for name in ("tiny.ini", "tiny-run.ini"):
        shutil.copy(DATA / name, tmp_path / name)
    return tmp_path


@pytest.fixture
def split_dir(work):
    assert main(["ingest", "--synthetic", str(work / "tiny.ini"), "--seed", "2", "--split", "0.8", "--split-seed", "1", "--output", str(work / "d")]) == 0
    return work / "d"


def test_ingest_prints_stats(work, capsys):
    assert main(["ingest", "--synthetic", str(work / "tiny.ini"), "--seed", "2", "--output", str(work / "all.csv")]) == 0
    out = capsys.readouterr().out
    assert "ssh" in out and "270" in out
    assert len(load_dataset(work / "all.csv")) == 270


def test_ingest_split_files(split_dir):
    train, test = load_dataset(split_dir / "train.csv"), load_dataset(split_dir / "test.csv")
    assert (len(train), len(test)) == (216, 54)


def test_usage_errors_exit_2(work, capsys):
    assert main(["ingest"]) == 2
    assert main(["ingest", "--input", str(work / "missing.csv")]) == 2
    assert main(["ingest", "--synthetic", str(work / "tiny.ini")]) == 2
    assert "error" in capsys.readouterr().err


def test_bad_arguments_use_argparse_code():
    assert main(["frobnicate"]) == 2
    assert main(["--version"]) == 0


def test_augment_both_modes(split_dir, work, capsys):
    plan = work / "plan.ini"
    plan.write_text("[plan]\nseed = 1\nclasses = ssh\ntarget = 60\n")
    train = split_dir / "train.csv"
    assert main(["augment", "--input", str(train), "--plan", str(plan), "--mode", "oversample", "--output", str(work / "o.csv")]) == 0
    assert main(
        ["augment", "--input", str(train), "--plan", str(plan), "--output", str(work / "g.csv"), "--epochs", "3", "--hidden", "8", "--models", str(work / "gen.bin")]
    ) == 0
    assert "ssh: 24 -> 60" in capsys.readouterr().out
    for name in ("o.csv", "g.csv"):
        assert load_dataset(work / name).class_counts().tolist()[1] == 60
    assert (work / "gen.bin").exists()


def test_train_eval_compare(split_dir, work, capsys):
    cfg = str(work / "tiny-run.ini")
    train, test = str(split_dir / "train.csv"), str(split_dir / "test.csv")
    assert main(["train", "--config", cfg, "--input", train, "--input-mode", "fs", "--epochs", "1", "--output", str(work / "m.bin"), "--test", test, "--report", str(work / "a.rep")]) == 0
    assert main(["eval", "--model", str(work / "m.bin"), "--test", test, "--report", str(work / "b.rep"), "--scheme", "again"]) == 0
    out = capsys.readouterr().out
    assert "macro-F1" in out
    assert main(["compare", "--reports", str(work / "a.rep"), str(work / "b.rep"), "--output", str(work / "c.rep")]) == 0
    assert "again" in capsys.readouterr().out
    assert main(["compare", "--reports", str(work / "a.rep")]) == 2
    assert main(["eval", "--model", str(work / "nope.bin"), "--test", test]) == 2


def test_run_subcommand(work, capsys):
    assert main(["run", "--config", str(work / "tiny-run.ini")]) == 0
    reports = sorted(p.name for p in (work / "out" / "reports").iterdir())
    assert "lstm-kde-fs-embedding.rep" in reports and "comparison.txt" in reports
    assert len([r for r in reports if r.endswith(".rep")]) == 7
    assert "outputs in" in capsys.readouterr().out
