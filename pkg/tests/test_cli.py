import json
import subprocess
import sys

import pytest

from insertion_parser.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--count", "60", "--seed", "1", "--out", str(d / "train.jsonl")]) == 0
    assert main(["synth", "--count", "10", "--seed", "2", "--out", str(d / "test.jsonl")]) == 0
    code = main(["train", "--data", str(d / "train.jsonl"), "--ckpt", str(d / "m.ckpt"), "--max-steps", "5",
                 "--batch-size", "8", "--d-model", "16", "--heads", "2", "--enc-layers", "1", "--dec-layers", "1",
                 "--metrics", str(d / "metrics.jsonl"), "--tau", "0.5", "--seed", "3"])
    assert code == 0
    return d


def test_synth_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for path in (a, b):
        code, out, _ = run(capsys, "synth", "--count", "50", "--seed", "7", "--out", path)
        assert code == 0 and json.loads(out)["written"] == 50
    assert a.read_bytes() == b.read_bytes()


def test_synth_language_b(tmp_path, capsys):
    code, _, _ = run(capsys, "synth", "--count", "5", "--seed", "1", "--language", "B",
                     "--out", tmp_path / "b.jsonl", "--alignment-out", tmp_path / "align.json")
    assert code == 0
    assert json.loads((tmp_path / "b.jsonl").read_text().splitlines()[0])["lang"] == "B"
    assert json.loads((tmp_path / "align.json").read_text())


def test_eval_report(trained, capsys):
    code, out, _ = run(capsys, "eval", "--data", trained / "test.jsonl", "--ckpt", trained / "m.ckpt",
                       "--max-steps", "3")
    assert code == 0
    report = json.loads(out)
    for key in ("em", "ic", "avg_steps", "tokens_per_step", "invalid_rate"):
        assert key in report
    records = [json.loads(line) for line in (trained / "metrics.jsonl").read_text().splitlines()]
    assert records[-1]["step"] == 5


def test_parse_command(trained, capsys):
    code, out, _ = run(capsys, "parse", "--ckpt", trained / "m.ckpt", "--mode", "input-src", "--penalty", "0.5",
                       "--max-steps", "2", "some query words")
    assert code == 0
    result = json.loads(out)
    assert result["parse"].count("@") == 3
    assert isinstance(result["steps"], int)


@pytest.mark.parametrize("argv, flag", [
    (["eval", "--data", "x.jsonl"], "--ckpt"),
    (["parse", "--ckpt", "m.ckpt", "--mode", "beam", "q"], "--mode"),
    (["parse", "--ckpt", "m.ckpt", "--penalty", "-1", "q"], "--penalty"),
    (["synth", "--count", "0"], "--count"),
    (["frobnicate"], "frobnicate"),
])
def test_usage_errors_exit_2(capsys, argv, flag):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert flag in err


def test_runtime_error_exit_1(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--data", tmp_path / "missing.jsonl", "--ckpt", tmp_path / "missing.ckpt")
    assert code == 1 and err.startswith("error:")


def test_gradcheck_command(capsys):
    code, out, _ = run(capsys, "gradcheck", "--seed", "2")
    assert code == 0 and json.loads(out)["max_rel_error"] < 1e-4


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "insertion_parser", "synth", "--count", "2", "--seed", "0"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert len(proc.stdout.splitlines()) == 2
