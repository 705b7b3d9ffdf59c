import hashlib
import json
import subprocess
import sys

import pytest

from stylemine.cli import main

TINY = {"n_train": 120, "n_dev": 30, "n_test": 30, "embed_dim": 16, "hidden_dim": 32, "merge_budget": 80,
        "dae_steps": 20, "max_steps": 10, "checkpoint_every": 5, "dev_sample": 10}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A tiny synth task with a BPE model, a DAE checkpoint and a trained model."""
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "tiny.json"
    cfg.write_text(json.dumps(TINY), encoding="utf-8")
    data = d / "data"
    common = ["--config", str(cfg)]
    steps = [
        ["synth", "--out-dir", str(data)],
        ["train-bpe", "--corpus-a", str(data / "train.pos.txt"), "--corpus-b", str(data / "train.neg.txt"),
         "--out", str(d / "bpe.json")],
        ["pretrain-dae", "--bpe", str(d / "bpe.json"), "--train-a", str(data / "train.pos.txt"),
         "--train-b", str(data / "train.neg.txt"), "--out", str(d / "dae.ckpt")],
        ["train", "--bpe", str(d / "bpe.json"), "--train-a", str(data / "train.pos.txt"),
         "--train-b", str(data / "train.neg.txt"), "--dev-a", str(data / "dev.pos.txt"),
         "--dev-b", str(data / "dev.neg.txt"), "--init", str(d / "dae.ckpt"), "--out", str(d / "model.ckpt"),
         "--log", str(d / "train.jsonl")],
    ]
    for argv in steps:
        assert main(argv + common) == 0, argv
    return d


def lines(path):
    return path.read_text(encoding="utf-8").splitlines()


def test_synth_outputs(workdir):
    data = workdir / "data"
    for split in ("train", "dev", "test"):
        gold = lines(data / f"{split}.gold.tsv")
        pos = lines(data / f"{split}.pos.txt")
        assert [g.split("\t")[0] for g in gold] == pos
    train = set(lines(data / "train.pos.txt"))
    assert not train & set(lines(data / "test.pos.txt"))
    manifest = json.loads((data / "synth.manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seed"] == 0


def test_manifest_hashes_outputs(workdir):
    m = json.loads((workdir / "model.ckpt.manifest.json").read_text())
    digest = hashlib.sha256((workdir / "model.ckpt").read_bytes()).hexdigest()
    assert m["outputs"]["out"]["sha256"] == digest
    assert m["config"]["max_steps"] == 10 and m["config"]["hidden_dim"] == 32
    assert set(m) >= {"argv", "config", "inputs", "outputs", "seed", "tool_version", "versions",
                      "wall_clock_seconds"}


def test_train_log_is_jsonl(workdir):
    records = [json.loads(x) for x in lines(workdir / "train.jsonl")]
    assert [r["step"] for r in records] == [5, 10]
    assert set(records[0]) == {"step", "dev_ata", "bt_flu", "bt_cp", "bt_ata", "accepted_count", "rejected_count"}


def test_transfer_and_evaluate(workdir, tmp_path):
    data = workdir / "data"
    src = data / "test.pos.txt"
    pred = tmp_path / "pred.txt"
    assert main(["transfer", "--bpe", str(workdir / "bpe.json"), "--model", str(workdir / "model.ckpt"),
                 "--target", "neg", "--in", str(src), "--out", str(pred)]) == 0
    assert len(lines(pred)) == len(lines(src))
    # evaluating the source against itself gives CP = 1 everywhere
    report = tmp_path / "report.json"
    argv = ["evaluate", "--bpe", str(workdir / "bpe.json"), "--src", str(src), "--pred", str(src),
            "--target", "pos", "--embed-model", str(workdir / "dae.ckpt"), "--train-a", str(data / "train.pos.txt"),
            "--train-b", str(data / "train.neg.txt"), "--dev-a", str(data / "dev.pos.txt"),
            "--dev-b", str(data / "dev.neg.txt"), "--out", str(report), "--config", str(workdir / "tiny.json")]
    assert main(argv) == 0
    r = json.loads(report.read_text())
    assert r["cp_mean"] == pytest.approx(1.0) and r["n"] == len(lines(src))
    assert r["agg"] <= min(r["ata"], 100 * r["cp_mean"], 100 * r["flu_rate"]) + 1e-9


def test_mine_pairs_tsv(workdir, tmp_path):
    data = workdir / "data"
    out = tmp_path / "pairs.tsv"
    assert main(["mine-pairs", "--bpe", str(workdir / "bpe.json"), "--model", str(workdir / "model.ckpt"),
                 "--corpus-a", str(data / "train.pos.txt"), "--corpus-b", str(data / "train.neg.txt"),
                 "--out", str(out)]) == 0
    rows = [x.split("\t") for x in lines(out)]
    pos, neg = set(lines(data / "train.pos.txt")), set(lines(data / "train.neg.txt"))
    for sw, se, a, b in rows:
        assert len(sw.split(".")[1]) == 6 and float(se) > 0
        assert a in pos and b in neg
    assert len({b for *_, b in rows}) == len(rows)


def test_preprocess(tmp_path):
    raw = tmp_path / "raw.txt"
    raw.write_text("The Food was GOOD , really good today.\nshort one\nthe food was good , really good today .\n"
                   "you idiot , the service was slow today .\nheld out sentence is right here .\n", encoding="utf-8")
    held = tmp_path / "held.txt"
    held.write_text("held out sentence is right here .\n", encoding="utf-8")
    lex = tmp_path / "lex.txt"
    lex.write_text("idiot\n", encoding="utf-8")
    out = tmp_path / "clean.txt"
    assert main(["preprocess", "--in", str(raw), "--style", "pos", "--lexicon", str(lex), "--held-out", str(held),
                 "--out", str(out)]) == 0
    assert lines(out) == ["the food was good , really good today ."]


def test_stats(tmp_path):
    rows = ["item_id,rater_id,cp,flu,ata"]
    base = ["item_id,rater_id,cp,flu,ata"]
    for i in range(8):
        for r in "abc":
            rows.append(f"{i},{r},{4 + (i % 2)},{5 - (i % 3 == 0)},{4 + (i % 4 == 0)}")
            base.append(f"{i},{r},{2 + (i % 3)},{3},{2}")
    (tmp_path / "r.csv").write_text("\n".join(rows) + "\n")
    (tmp_path / "b.csv").write_text("\n".join(base) + "\n")
    out = tmp_path / "stats.json"
    assert main(["stats", "--ratings", str(tmp_path / "r.csv"), "--baseline", str(tmp_path / "b.csv"),
                 "--out", str(out)]) == 0
    s = json.loads(out.read_text())
    assert s["success_rate"] == 100.0 and s["n_items"] == 8
    assert s["alpha"]["cp"] == pytest.approx(1.0)
    assert s["wilcoxon"]["p_value"] == pytest.approx(2 / 2 ** 8)


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["transfer", "--bpe", "x"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"hidden_dimm": 3}))
    assert main(["synth", "--out-dir", str(tmp_path), "--config", str(bad)]) == 1
    assert "hidden_dimm" in capsys.readouterr().err
    assert main(["train-bpe", "--corpus-a", "a", "--corpus-b", "b", "--out", "o", "--styles", "pos"]) == 1


def test_train_requires_init(workdir, tmp_path):
    data = workdir / "data"
    argv = ["train", "--bpe", str(workdir / "bpe.json"), "--train-a", str(data / "train.pos.txt"),
            "--train-b", str(data / "train.neg.txt"), "--dev-a", str(data / "dev.pos.txt"),
            "--dev-b", str(data / "dev.neg.txt"), "--out", str(tmp_path / "m.ckpt")]
    assert main(argv) == 1
    # at least one training signal is required
    assert main(argv + ["--init", str(workdir / "dae.ckpt"), "--no-spe", "--no-bt"]) == 2


def test_data_errors_exit_2(tmp_path, workdir):
    assert main(["preprocess", "--in", str(tmp_path / "missing.txt"), "--style", "pos",
                 "--out", str(tmp_path / "o.txt")]) == 2
    bad = tmp_path / "bad.txt"
    bad.write_bytes(b"fine line here ok .\n\xff\xfe broken\n")
    assert main(["preprocess", "--in", str(bad), "--style", "pos", "--out", str(tmp_path / "o.txt")]) == 2
    assert main(["transfer", "--bpe", str(workdir / "bpe.json"), "--model", str(bad), "--target", "neg",
                 "--in", str(bad), "--out", str(tmp_path / "p.txt")]) == 2
    assert main(["transfer", "--bpe", str(workdir / "bpe.json"), "--model", str(workdir / "model.ckpt"),
                 "--target", "happy", "--in", str(bad), "--out", str(tmp_path / "p.txt")]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "stylemine", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "mine-pairs" in proc.stdout
