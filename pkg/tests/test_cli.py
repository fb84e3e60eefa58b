import json

import numpy as np
import pytest

from malgrid import cli
from malgrid import model as M


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_convert_1kib(tmp_path, capsys):
    src = tmp_path / "sample.exe"
    src.write_bytes(bytes(range(256)) * 4)
    code, out, _ = run(capsys, "convert", src)
    assert code == 0
    data = (tmp_path / "sample.exe.pgm").read_bytes()
    assert data.startswith(b"P5\n32 32\n255\n") and data.endswith(bytes(range(256)) * 4)


def test_convert_output_flag(tmp_path, capsys):
    src = tmp_path / "a.bin"
    src.write_bytes(b"\x07" * 1500)
    code, _, _ = run(capsys, "convert", src, "-o", tmp_path / "sub" / "a.pgm")
    assert code == 0 and (tmp_path / "sub" / "a.pgm").read_bytes().startswith(b"P5\n32 47\n")


def test_kfold_defaults_match_protocol():
    args = cli.build_parser().parse_args(["kfold", "corpus"])
    assert (args.folds, args.seed, args.lr, args.momentum, args.batch_size, args.epochs) == (5, 1, 0.01, 0.9, 32, 10)
    assert (args.arch, args.input_side, args.stratify) == ("baseline", 32, False)
    assert cli.build_parser().parse_args(["train-final", "c"]).arch == "improved"


@pytest.mark.parametrize("command", ["kfold", "train-final"])
def test_help_lists_every_flag_with_default(command, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([command, "--help"])
    assert exc.value.code == 0
    text = " ".join(capsys.readouterr().out.split())
    for flag, default in [("--lr", "0.01"), ("--momentum", "0.9"), ("--epochs", "10"), ("--batch-size", "32"),
                          ("--seed", "1"), ("--input-side", "32"), ("--out-dir", "")]:
        assert flag in text
        assert f"(default: {default}" in text or not default
    assert text.count("(default:") >= 9


def _zero_model(path, n=25):
    names = [f"fam{i:02d}" for i in range(n)]
    m = M.build_model("baseline", 32, n, 1, class_names=names)
    m.params = [np.zeros_like(p) for p in m.params]
    M.save_model(m, path)
    return names


def test_predict_zero_model_is_uniform(tmp_path, capsys):
    names = _zero_model(tmp_path / "model.bin")
    (tmp_path / "s.exe").write_bytes(b"MZ" + bytes(3000))
    code, out, _ = run(capsys, "predict", tmp_path / "model.bin", tmp_path / "s.exe")
    assert code == 0
    rows = [line.split("\t") for line in out.strip().split("\n")]
    assert [r[0] for r in rows] == names[:3]
    assert all(float(r[1]) == pytest.approx(1 / 25, abs=1e-6) for r in rows)


def test_synth_then_evaluate(tmp_path, capsys):
    code, _, _ = run(capsys, "synth", tmp_path / "corpus", "--families", 3, "--per-family", 4)
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "corpus").iterdir()) == ["family_00", "family_01", "family_02"]
    m = M.build_model("baseline", 32, 3, 1, class_names=["family_00", "family_01", "family_02"])
    M.save_model(m, tmp_path / "m.bin")
    code, out, _ = run(capsys, "evaluate", tmp_path / "m.bin", tmp_path / "corpus")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0].startswith("accuracy\t")
    cm = np.array([[int(v) for v in line.split("\t")[1:]] for line in lines[2:]])
    assert cm.shape == (3, 3) and cm.sum() == 12
    assert float(lines[0].split("\t")[1]) == pytest.approx(np.trace(cm) / 12, abs=1e-6)


@pytest.mark.slow
def test_kfold_and_train_final(tmp_path, capsys):
    run(capsys, "synth", tmp_path / "c", "--families", 3, "--per-family", 12)
    code, out, _ = run(capsys, "kfold", tmp_path / "c", "--epochs", 2, "--folds", 3, "--out-dir", tmp_path / "r")
    assert code == 0 and out.count("> ") == 3 and "Accuracy: mean=" in out
    assert sorted(p.name for p in (tmp_path / "r").iterdir()) == ["boxplot.svg", "curves.svg", "history.csv", "summary.json"]
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert summary["config"]["samples"] == 27  # ceil(0.7 * 12) = 9 per family
    code, out, _ = run(capsys, "train-final", tmp_path / "c", "--epochs", 2, "--out-dir", tmp_path / "f")
    assert code == 0 and out.startswith("> ")
    loaded = M.load_model(tmp_path / "f" / "model.bin")
    assert loaded.arch == "improved" and loaded.num_classes == 3


def _error(err):
    lines = err.strip().split("\n")
    assert len(lines) == 1
    return json.loads(lines[0])


def test_usage_errors(tmp_path, capsys):
    code, _, err = run(capsys, "kfold", tmp_path, "--lr", "-1")
    assert code == 1 and _error(err)["error"] == "usage"
    code, _, err = run(capsys, "frobnicate")
    assert code == 1 and _error(err)["error"] == "usage"
    code, _, err = run(capsys, "kfold", tmp_path, "--epochs", "0")
    assert code == 1


def test_io_error_for_missing_input(tmp_path, capsys):
    code, _, err = run(capsys, "convert", tmp_path / "missing.exe")
    assert code == 3 and _error(err)["error"] == "io"


def test_data_errors(tmp_path, capsys):
    (tmp_path / "empty.exe").write_bytes(b"")
    code, _, err = run(capsys, "convert", tmp_path / "empty.exe")
    assert code == 2 and "empty binary" in _error(err)["message"]
    (tmp_path / "junk.bin").write_bytes(b"not a model")
    (tmp_path / "s.exe").write_bytes(b"x")
    code, _, err = run(capsys, "predict", tmp_path / "junk.bin", tmp_path / "s.exe")
    assert code == 2 and "not a model file" in _error(err)["message"]


def test_failed_run_leaves_no_partial_outputs(tmp_path, capsys):
    corpus = tmp_path / "c"
    (corpus / "fam").mkdir(parents=True)
    (corpus / "fam" / "x.pgm").write_bytes(b"P5\n9 9\n255\n")  # truncated raster
    out_dir = tmp_path / "reports"
    code, _, _ = run(capsys, "kfold", corpus, "--out-dir", out_dir, "--cv-on", "all")
    assert code == 2
    assert not out_dir.exists()
    assert list(tmp_path.iterdir()) == [corpus]


def test_failure_mid_write_removes_staged_files(tmp_path, capsys, monkeypatch):
    run(capsys, "synth", tmp_path / "c", "--families", 2, "--per-family", 5)

    def half_written(results, out_dir, extra=None):
        (out_dir / "history.csv").write_text("fold,epoch\n")
        raise OSError("disk full")

    monkeypatch.setattr(cli, "emit_reports", half_written)
    code, _, err = run(capsys, "kfold", tmp_path / "c", "--epochs", 1, "--out-dir", tmp_path / "r", "--folds", 2)
    assert code == 3 and _error(err) == {"error": "io", "message": "disk full"}
    assert sorted(p.name for p in tmp_path.iterdir()) == ["c"]
