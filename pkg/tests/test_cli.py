import io
import json
import subprocess
import sys

import pytest

from dstrnn import cli
from dstrnn.checkpoint import load_model

TINY = ["--embed-dim", "6", "--hidden-dim", "6", "--epochs", "2", "--dropout-keep", "1.0", "--buckets", "3"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert cli.main(["make-corpus", "--out", str(root), "--dialogues", "12"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt") / "m.ckpt"
    assert cli.main(["train", "--model", "indep", "--data", str(corpus), "--out", str(out), *TINY]) == 0
    return out


def test_train_writes_checkpoint_and_log(trained):
    assert trained.is_file()
    lines = trained.with_name("m.ckpt.log.jsonl").read_text().splitlines()
    assert len(lines) >= 1 and "dev_accuracy" in json.loads(lines[0])


def test_train_is_deterministic(corpus, tmp_path, capsys):
    outs = []
    for i in range(2):
        out = tmp_path / f"e{i}.ckpt"
        assert cli.main(["train", "--model", "encdec", "--seed", "7", "--data", str(corpus),
                         "--out", str(out), *TINY]) == 0
        outs.append(capsys.readouterr().out.splitlines()[-1].split(" at ")[0])
    assert outs[0] == outs[1]


def test_config_file_precedence(corpus, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"hidden_dim": 9, "embed_dim": 4, "epochs": 1}))
    out = tmp_path / "c.ckpt"
    assert cli.main(["train", "--data", str(corpus), "--config", str(cfg), "--hidden-dim", "5",
                     "--dropout-keep", "1.0", "--out", str(out)]) == 0
    m = load_model(out)
    assert (m.config.hidden_dim, m.config.embed_dim) == (5, 4)
    cfg.write_text(json.dumps({"bogus": 1}))
    assert cli.main(["train", "--data", str(corpus), "--config", str(cfg), "--out", str(out)]) == 1


def test_eval_prints_and_writes_report(corpus, trained, tmp_path, capsys):
    rep = tmp_path / "r.json"
    assert cli.main(["eval", "--data", str(corpus), "--ckpt", str(trained), "--split", "dev",
                     "--out", str(rep)]) == 0
    first = json.loads(rep.read_text())
    assert "Joint" in capsys.readouterr().out
    assert set(first["per_slot_accuracy"]) == {"food", "area", "pricerange"}
    assert cli.main(["eval", "--data", str(corpus), "--ckpt", str(trained), "--split", "dev",
                     "--out", str(rep)]) == 0
    assert json.loads(rep.read_text()) == first


def test_resplit_and_bad_ratios(corpus, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["resplit", "--data", str(corpus), "--seed", "2", "--out", str(out)]) == 0
    for name in ("train", "dev", "test"):
        assert (a / f"dstc2_{name}.flist").read_text() == (b / f"dstc2_{name}.flist").read_text()
    assert json.loads((a / "manifest.json").read_text())["counts"] == {"train": 30, "dev": 3, "test": 3}
    assert cli.main(["resplit", "--data", str(corpus), "--ratios", "0.5", "0.5", "0.5",
                     "--out", str(tmp_path / "c")]) == 1


def test_stats_on_two_dialogue_fixture(tmp_path, capsys):
    from dstrnn.synthetic import write_corpus
    write_corpus(tmp_path, 2, seed=0, splits={"train": 2})
    out = tmp_path / "stats.json"
    assert cli.main(["stats", "--data", str(tmp_path), "--out", str(out)]) == 0
    stats = json.loads(out.read_text())
    from dstrnn.synthetic import micro_corpus
    from collections import Counter
    expected = Counter(tuple(t.gold) for d in micro_corpus(2) for t in d.turns)
    got = {tuple(t): c for t, c in stats["triples"]["counts"]}
    assert got == dict(expected)
    counts = [c for _, c in stats["triples"]["counts"]]
    assert counts == sorted(counts)
    assert stats["dialogues"] == {"train": 2}
    assert "history length" in capsys.readouterr().out


def test_track_transcript_matches_repl(trained, tmp_path, capsys):
    lines = ["Hello, how may I help you?", "West part of town.", ":reset", "system: what food",
             "user: indian", ":quit", "ignored after quit"]
    script = tmp_path / "t.txt"
    script.write_text("\n".join(lines) + "\n")
    assert cli.main(["track", "--ckpt", str(trained), "--transcript", str(script)]) == 0
    transcript_out = capsys.readouterr().out
    session = load_model(trained).session()
    buf = io.StringIO()
    prompts = []
    cli.run_tracking(session, iter(lines), buf, prompt=prompts.append)
    assert buf.getvalue() == transcript_out
    rows = transcript_out.splitlines()
    assert rows[0].startswith("system hello")
    assert any(r.startswith("user   west") for r in rows)
    assert "ignored" not in transcript_out
    assert prompts[:3] == ["system", "user", "system"]


def test_reset_returns_to_fresh_state(trained, tmp_path):
    session = load_model(trained).session()
    fresh = cli._fmt_goal(session.current())
    buf = io.StringIO()
    cli.run_tracking(session, ["indian food in the west", ":reset"], buf)
    assert buf.getvalue().splitlines()[-1] == f"reset  {fresh}"


def test_exit_codes(corpus, tmp_path, monkeypatch):
    monkeypatch.delenv(cli.DATA_ENV, raising=False)
    assert cli.main(["stats"]) == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["train"])
    assert e.value.code == 1
    assert cli.main(["stats", "--data", str(tmp_path / "nope")]) == 2
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert cli.main(["track", "--ckpt", str(bad), "--transcript", str(bad)]) == 2
    monkeypatch.setenv(cli.DATA_ENV, str(corpus))
    assert cli.main(["stats"]) == 0


def test_module_entry_point(corpus):
    r = subprocess.run([sys.executable, "-m", "dstrnn", "stats", "--data", str(corpus)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "distinct train triples" in r.stdout
