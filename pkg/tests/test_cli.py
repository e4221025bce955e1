import hashlib
import json
import struct

import pytest

from helpers import ORIOLE_ANSWER, dpo_inputs, dpo_responder, write_cycle_workspace, write_oriole_workspace
from kginfused.cli import EXIT_BAD_INPUT, EXIT_NO_DATA, EXIT_OK, main
from kginfused.dpo import DEFAULT_GRID, build_dataset
from kginfused.gateway import mock_gateway


@pytest.fixture(scope="module")
def oriole(tmp_path_factory):
    root = tmp_path_factory.mktemp("oriole")
    return root, write_oriole_workspace(root, modes=("kg_infused", "vanilla_rag", "nor"))


def latest(out):
    return (out / "latest").resolve()


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def test_prep_writes_snapshot_and_stats(oriole, tmp_path, capsys):
    root, ini = oriole
    snap = tmp_path / "kg.spqkg"
    args = ["prep", "--config", str(ini), "--set", f"paths.snapshot={snap}", "--out", str(tmp_path / "runs")]
    assert main(args) == EXIT_OK
    stats = json.loads((tmp_path / "kg.spqkg.stats.json").read_text())
    assert stats["entities_out"] == 8 and stats["triples_out"] == 11 and stats["relations_out"] == 6
    assert json.loads((latest(tmp_path / "runs") / "filter_stats.json").read_text()) == stats
    before = snap.stat().st_mtime_ns
    capsys.readouterr()
    assert main(args) == EXIT_OK
    assert "nothing to do" in capsys.readouterr().out
    assert snap.stat().st_mtime_ns == before
    assert main(args + ["--force"]) == EXIT_OK


def test_prep_malformed_input_exits_2(oriole, tmp_path, capsys):
    root, ini = oriole
    bad = tmp_path / "triples.txt"
    bad.write_text("Q1\tP176\n")
    code = main(["prep", "--config", str(ini), "--set", f"paths.triples={bad}",
                 "--set", f"paths.snapshot={tmp_path / 'x.spqkg'}", "--out", str(tmp_path)])
    assert code == EXIT_BAD_INPUT
    assert "triples.txt:1:" in capsys.readouterr().err


def test_index_manifest_checksums(oriole, tmp_path):
    root, ini = oriole
    assert main(["index", "--config", str(ini), "--out", str(tmp_path)]) == EXIT_OK
    manifest = json.loads((latest(tmp_path) / "manifest.json").read_text())
    assert {m["name"] for m in manifest} == {"entity", "corpus"}
    for m in manifest:
        for key in ("vectors", "ids"):
            assert m[f"{key}_sha256"] == hashlib.sha256(open(m[key], "rb").read()).hexdigest()
    assert {m["name"]: m["count"] for m in manifest} == {"entity": 8, "corpus": 8}


def test_index_corrupt_header_exits_2(oriole, tmp_path, capsys):
    root, ini = oriole
    bad = tmp_path / "bad.vec"
    data = bytearray((root / "corpus.vec").read_bytes())
    data[7:15] = struct.pack("<II", 8, 768)
    bad.write_bytes(bytes(data))
    code = main(["index", "--config", str(ini), "--set", f"paths.corpus_vectors={bad}", "--out", str(tmp_path)])
    assert code == EXIT_BAD_INPUT
    assert "768" in capsys.readouterr().err


def test_run_replay_is_deterministic(oriole, tmp_path):
    root, ini = oriole
    outputs = []
    for i in range(2):
        out = tmp_path / f"r{i}"
        code = main(["run", "--config", str(ini), "--mock", str(root / "transcript.jsonl"), "--rounds", "2",
                     "--mode", "kg_infused", "--out", str(out)])
        assert code == EXIT_OK
        outputs.append((latest(out) / "predictions_r2.jsonl").read_bytes())
    assert outputs[0] == outputs[1]
    assert read_jsonl(latest(tmp_path / "r0") / "predictions_r2.jsonl") == [{"id": "q1", "answer": ORIOLE_ANSWER}]
    usage = json.loads((latest(tmp_path / "r0") / "usage.json").read_text())
    assert usage["calls"] == 7
    cfg = json.loads((latest(tmp_path / "r0") / "config.json").read_text())
    assert cfg["mode"] == "kg_infused" and cfg["activation"]["k_e"] == 3


def test_run_vanilla_rag_has_no_activation(oriole, tmp_path):
    root, ini = oriole
    code = main(["run", "--config", str(ini), "--mock", str(root / "transcript.jsonl"), "--mode", "vanilla_rag",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    (session,) = read_jsonl(latest(tmp_path) / "sessions.jsonl")
    assert [t["stage"] for t in session["trace"]] == ["retrieve", "note", "answer"]
    assert "activation" not in session


def test_run_transcript_miss_is_a_session_failure(oriole, tmp_path):
    root, ini = oriole
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    code = main(["run", "--config", str(ini), "--mock", str(empty), "--out", str(tmp_path)])
    assert code != EXIT_OK  # every session failed: systemic
    (failure,) = read_jsonl(latest(tmp_path) / "failures.jsonl")
    assert failure["stage"] == "activation" and "TranscriptMiss" in failure["error"]


def test_rounds_sweep_emits_one_file_per_depth(tmp_path):
    ini = write_cycle_workspace(tmp_path / "ws", rounds=range(1, 7))
    code = main(["run", "--config", str(ini), "--mock", str(tmp_path / "ws" / "transcript.jsonl"),
                 "--rounds", "1..6", "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    run_dir = latest(tmp_path / "out")
    depths = []
    for n in range(1, 7):
        assert (run_dir / f"predictions_r{n}.jsonl").exists()
        (session,) = read_jsonl(run_dir / f"sessions_r{n}.jsonl")
        depths.append(len(session["activation"]))
    assert depths == [1, 2, 3, 4, 5, 6]


def test_eval_prints_row(oriole, tmp_path, capsys):
    root, ini = oriole
    preds = tmp_path / "pred.jsonl"
    preds.write_text(json.dumps({"id": "q1", "answer": "Martin Marietta"}) + "\n")
    assert main(["eval", str(preds), "--config", str(ini), "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "Acc & F1 & EM & Avg\n100.0 & 100.0 & 100.0 & 100.0" in out
    preds.write_text("")
    assert main(["eval", str(preds), "--config", str(ini), "--out", str(tmp_path)]) == EXIT_OK
    assert "missing predictions: 1" in capsys.readouterr().out


def write_ka(path, inputs):
    path.write_text("".join(json.dumps({"id": x.id, "question": x.question, "passage": x.passage,
                                        "facts": x.facts, "round": x.round}) + "\n" for x in inputs))


def test_dpo_sample_and_resume(tmp_path):
    inputs = dpo_inputs(12, tie_every=5)
    write_ka(tmp_path / "ka.jsonl", inputs)
    rec = mock_gateway(responder=dpo_responder)
    build_dataset(inputs, DEFAULT_GRID, rec, 100)
    rec.backend.save(tmp_path / "t.jsonl")
    base = ["dpo-sample", "--set", f"paths.ka_inputs={tmp_path / 'ka.jsonl'}", "--mock", str(tmp_path / "t.jsonl"),
            "--out", str(tmp_path / "runs")]
    assert main(base + ["--output", str(tmp_path / "a.jsonl")]) == EXIT_OK
    assert len(read_jsonl(tmp_path / "a.jsonl")) == 9
    assert main(base + ["--output", str(tmp_path / "a.jsonl"), "--resume"]) == EXIT_OK
    assert len(read_jsonl(tmp_path / "a.jsonl")) == 9


def test_dpo_sample_no_data(tmp_path, capsys):
    (tmp_path / "ka.jsonl").write_text("")
    (tmp_path / "t.jsonl").write_text("")
    code = main(["dpo-sample", "--set", f"paths.ka_inputs={tmp_path / 'ka.jsonl'}", "--mock",
                 str(tmp_path / "t.jsonl"), "--out", str(tmp_path)])
    assert code == EXIT_NO_DATA
    assert "no data" in capsys.readouterr().out


def test_bad_set_flag(capsys):
    assert main(["eval", "p.jsonl", "--set", "nodot=1"]) == EXIT_BAD_INPUT


def test_missing_path_is_reported(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path)]) == EXIT_BAD_INPUT
    assert "dataset" in capsys.readouterr().err
