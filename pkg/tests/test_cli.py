import json

import pytest

from vvv import cli
from vvv import evaluation as ev
from vvv.gmm import MODEL_MAGIC
from vvv.vault import ServerKey

SYNTH = "speakers=4,phrases=8,takes=6"


@pytest.fixture
def run(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("VVV_PASSWORD", "pw-1")

    def go(*argv, password=None):
        if password is not None:
            monkeypatch.setenv("VVV_PASSWORD", password)
        try:
            return cli.main(list(argv))
        finally:
            monkeypatch.setenv("VVV_PASSWORD", "pw-1")

    return go


def test_keygen(run, tmp_path, capsys):
    assert run("keygen", "--seed", "3") == cli.EXIT_OK
    raw = (tmp_path / "server.key").read_bytes()
    assert ServerKey.from_bytes(raw).to_bytes() == raw
    assert ServerKey.from_bytes(raw) == ServerKey.generate(3)
    assert "salt template" in capsys.readouterr().out
    assert run("keygen") == cli.EXIT_USAGE
    assert run("keygen", "--force") == cli.EXIT_OK
    assert (tmp_path / "server.key").read_bytes() != raw


def test_enroll_verify_revoke_cycle(run, tmp_path):
    assert run("keygen", "--seed", "1") == 0
    assert run("enroll", "spk00", "--synth", SYNTH) == cli.EXIT_OK
    rec_file = tmp_path / "vvv-records" / "spk00.vvr"
    record = cli.RecordStore(tmp_path / "vvv-records")["spk00"]
    assert len(record.pairs) == 8
    assert MODEL_MAGIC not in rec_file.read_bytes()

    assert run("verify", "spk00", "--synth", SYNTH) == cli.EXIT_OK
    assert run("verify", "spk00", "--imposter", "--synth", SYNTH) == cli.EXIT_REJECT
    assert run("verify", "spk00", "--synth", SYNTH, password="wrong") == cli.EXIT_INTEGRITY
    assert run("verify", "ghost", "--synth", SYNTH) == cli.EXIT_USAGE
    assert run("enroll", "spk00", "--synth", SYNTH) == cli.EXIT_USAGE

    assert run("revoke", "spk00") == cli.EXIT_OK
    assert run("verify", "spk00", "--synth", SYNTH) == cli.EXIT_REJECT
    assert run("revoke", "ghost") == cli.EXIT_USAGE
    assert run("enroll", "spk00", "--synth", SYNTH) == cli.EXIT_OK
    assert run("verify", "spk00", "--synth", SYNTH) == cli.EXIT_OK


def test_usage_errors(run, tmp_path):
    assert run("enroll", "spk00") == cli.EXIT_USAGE  # no server key yet
    run("keygen")
    assert run("enroll", "spk00", "--corpus", str(tmp_path / "missing")) == cli.EXIT_USAGE
    assert run("enroll", "spk00", "--synth", "speakers=x") == cli.EXIT_USAGE
    assert run("enroll", "nobody", "--synth", SYNTH) == cli.EXIT_USAGE
    assert run("enroll", "../evil", "--synth", SYNTH) == cli.EXIT_USAGE
    assert run("bogus-command") == cli.EXIT_USAGE


def test_parse_synth():
    assert cli.parse_synth("speakers=3,separation=inf")["separation"] == float("inf")
    assert cli.parse_synth("")["takes"] == 8
    with pytest.raises(cli.UsageError):
        cli.parse_synth("colour=blue")


def test_eval_outputs_and_determinism(run, tmp_path):
    assert run("eval", "--synth", SYNTH, "--out", "a") == cli.EXIT_OK
    assert run("eval", "--synth", SYNTH, "--out", "b") == cli.EXIT_OK
    a, b = tmp_path / "a", tmp_path / "b"
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n
    rocs = [n for n in names if n.endswith("_roc.csv")]
    assert len(rocs) == 4 and "security_report.txt" in names and "config.json" in names
    summary = json.loads((a / "config.json").read_text())["summary"]
    for name, s in summary.items():
        outcomes = ev.outcomes_from_csv((a / f"{name}_outcomes.csv").read_text())
        roc = ev.compute_roc(outcomes, higher_is_genuine=name.startswith("vaulted"))
        assert roc.eer == s["eer"]
        assert f"# eer={roc.eer!r}," in (a / f"{name}_roc.csv").read_text()
    assert run("eval", "--synth", SYNTH, "--out", "a") == cli.EXIT_USAGE
    assert not list(tmp_path.glob(".a.tmp-*"))


def test_eval_on_corpus_dir(run, tmp_path):
    c = ev.synth_corpus(2, 8, 6, rng_seed=5, duration=0.2)
    ev.write_mit_layout(c, tmp_path / "corpus")
    assert run("eval", "--corpus", str(tmp_path / "corpus"), "--out", "res") == cli.EXIT_OK
    assert (tmp_path / "res" / "vaulted-all-vs-all_roc.csv").is_file()
