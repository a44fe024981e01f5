import json
import math

import pytest

from mcg.checkpoint import load_checkpoint
from mcg.cli import run_command
from mcg.evaluation import evaluate
from mcg.manifest import ManifestError, ManifestRecord, load_manifest, write_manifest

TINY = ["model.dim=16", "model.heads=2", "model.video_depth=1", "model.text_depth=1", "model.fusion_depth=1",
        "model.generator_depth=1", "model.proj_dim=8", "model.memory_dim=8", "train.batch_size=4",
        "data.frames=2", "data.resolution=16"]


def _set_flags():
    return [arg for item in TINY for arg in ("--set", item)]


# -- manifest --------------------------------------------------------------------


def _write(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_empty_manifest(tmp_path):
    assert load_manifest(_write(tmp_path / "m.jsonl", [])) == []


def test_missing_answer_names_the_record(tmp_path):
    path = _write(tmp_path / "m.jsonl", [json.dumps({"id": "q17", "video": "v.mcgv", "question": "what?"})])
    with pytest.raises(ManifestError, match="q17"):
        load_manifest(path)


def test_malformed_json_names_the_line(tmp_path):
    good = json.dumps({"id": "a", "video": "v", "question": "q", "answer": "x"})
    path = _write(tmp_path / "m.jsonl", [good, "", "{not json"])
    with pytest.raises(ManifestError, match="line 3"):
        load_manifest(path)


def test_duplicate_ids(tmp_path):
    row = json.dumps({"id": "a", "video": "v", "question": "q", "answer": "x"})
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(_write(tmp_path / "m.jsonl", [row, row]))


def test_multi_choice_and_relative_paths(tmp_path):
    row = {"id": "mc", "video": "clips/v.mcgv", "question": "q", "choices": ["a", "b"], "answer_index": 1}
    rec = load_manifest(_write(tmp_path / "m.jsonl", [json.dumps(row)]))[0]
    assert rec.multi_choice and rec.gold == "b"
    assert rec.video == str(tmp_path / "clips" / "v.mcgv")
    bad = dict(row, answer_index=2)
    with pytest.raises(ManifestError, match="answer_index"):
        load_manifest(_write(tmp_path / "m.jsonl", [json.dumps(bad)]))


def test_write_then_load(tmp_path):
    recs = [ManifestRecord(id="x", video=str(tmp_path / "v.mcgv"), question="q", answer="red", qtype="color")]
    write_manifest(tmp_path / "m.jsonl", recs, relative_to=tmp_path)
    back = load_manifest(tmp_path / "m.jsonl")
    assert back[0].video == recs[0].video and back[0].answer == "red" and back[0].qtype == "color"


# -- CLI and report ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run_command(["gen-synthetic", "--out", str(root / "data"), "--pairs", "8", "--seed", "1",
                        "--frames", "4", "--resolution", "16"]) == 0
    ckpt = root / "model.mcgc"
    code = run_command(["pretrain", "--preset", "toy", "--manifest", str(root / "data" / "manifest.jsonl"),
                        "--vocab", str(root / "data" / "vocab.txt"), "--steps", "2", "--out", str(ckpt),
                        "--history", str(root / "history.jsonl"), *_set_flags()])
    assert code == 0
    return root, ckpt


def test_pretrain_writes_checkpoint(trained, capsys):
    _, ckpt = trained
    restored = load_checkpoint(ckpt)
    assert restored.step == 2 and restored.cfg.model.dim == 16
    assert run_command(["inspect-checkpoint", "--checkpoint", str(ckpt)]) == 0
    out = capsys.readouterr().out
    assert "param/ivm.embed.proj.weight" in out


def test_pretrain_history(trained):
    root, _ = trained
    rows = [json.loads(line) for line in (root / "history.jsonl").read_text().splitlines()]
    assert [r["step"] for r in rows] == [0, 1]
    assert all(r["total"] == pytest.approx(r["l_mcl"] + r["l_vtm"] + r["l_lm"]) for r in rows)


def test_finetune_from_init(trained, tmp_path):
    root, ckpt = trained
    out = tmp_path / "ft.mcgc"
    code = run_command(["finetune", "--preset", "toy", "--manifest", str(root / "data" / "manifest.jsonl"),
                        "--steps", "1", "--init", str(ckpt), "--out", str(out), *_set_flags()])
    assert code == 0
    assert load_checkpoint(out).cfg.train.stage == "finetune"


def test_evaluate_writes_report(trained, tmp_path, capsys):
    root, ckpt = trained
    out, preds = tmp_path / "report.json", tmp_path / "preds.jsonl"
    code = run_command(["evaluate", "--manifest", str(root / "data" / "manifest.jsonl"), "--checkpoint", str(ckpt),
                        "--out", str(out), "--predictions", str(preds)])
    assert code == 0
    report = json.loads(out.read_text())
    assert set(report) >= {"overall", "per_type", "wups_0_9", "wups_0_0", "counts"}
    assert report["counts"]["total"] == 8
    assert len(preds.read_text().splitlines()) == 8
    assert json.loads(capsys.readouterr().out) == report


def test_report_accounting(trained, tmp_path):
    root, ckpt = trained
    model = load_checkpoint(ckpt, with_optimizer=False).model
    records = load_manifest(root / "data" / "manifest.jsonl")
    records[3].video = str(tmp_path / "gone.mcgv")
    first, second = evaluate(model, records), evaluate(model, records)
    assert first.to_dict() == second.to_dict()
    c = first.counts
    assert (c["total"], c["evaluated"], c["failed"]) == (8, 7, 1)
    assert sum(c["per_type"].values()) == c["evaluated"]
    weighted = math.fsum(first.per_type[t] * c["per_type"][t] for t in first.per_type) / c["evaluated"]
    assert weighted == pytest.approx(first.overall, abs=1e-12)
    assert first.wups_0_0 >= first.wups_0_9 >= 0


def test_answer_prints_text(trained, capsys):
    root, ckpt = trained
    code = run_command(["answer", "--video", str(root / "data" / "media" / "00000.mcgv"),
                        "--question", "what color is the square", "--checkpoint", str(ckpt)])
    assert code == 0
    assert capsys.readouterr().out.strip() != ""


def test_answer_with_choices(trained, capsys):
    root, ckpt = trained
    code = run_command(["answer", "--video", str(root / "data" / "media" / "00000.mcgv"), "--question", "q",
                        "--checkpoint", str(ckpt), "--choices", "red", "blue"])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and sum(line.startswith("*") for line in lines) == 1


def test_answer_without_video_is_usage_error(trained, capsys):
    _, ckpt = trained
    assert run_command(["answer", "--question", "q", "--checkpoint", str(ckpt)]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert run_command(["evaluate", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run_command([]) == 1


def test_missing_checkpoint_is_runtime_error(tmp_path, capsys):
    code = run_command(["answer", "--video", "v", "--question", "q", "--checkpoint", str(tmp_path / "none")])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_pretrain_without_manifest_is_usage_error(tmp_path):
    assert run_command(["pretrain", "--preset", "toy", "--out", str(tmp_path / "x")]) == 1


def test_gen_synthetic_twice_is_identical(tmp_path):
    for name in ("a", "b"):
        assert run_command(["gen-synthetic", "--out", str(tmp_path / name), "--pairs", "64", "--seed", "1"]) == 0
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) == 66
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_unknown_config_key_is_usage_error(tmp_path):
    code = run_command(["pretrain", "--preset", "toy", "--manifest", "m.jsonl", "--out", str(tmp_path / "x"),
                        "--set", "model.nonsense=3"])
    assert code == 1
