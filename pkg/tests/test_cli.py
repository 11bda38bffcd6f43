import csv
import json
import subprocess
import sys

import pytest

from maskforest.cli import main
from maskforest.protocol import Transcript
from maskforest.protocol.messages import SERVER_P, Envelope, client_id, encode_matrix


def run_args(data, out, *extra):
    return ["run", "--data", str(data), "--clients", "3", "--algo", "if", "--seed", "7",
            "--keysize", "512", "--trees", "20", "--out", str(out), *extra]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, glass_path):
    out = tmp_path_factory.mktemp("run")
    assert main(run_args(glass_path, out)) == 0
    return out


def test_run_writes_outputs(run_dir):
    names = sorted(p.name for p in run_dir.iterdir())
    assert names == ["client_0_clean.csv", "client_1_clean.csv", "client_2_clean.csv",
                     "scores.csv", "transcript.ndjson"]
    scores = read_rows(run_dir / "scores.csv")
    assert scores[0] == ["row", "score"] and len(scores) == 215
    kept = sum(len(read_rows(run_dir / f"client_{i}_clean.csv")) - 1 for i in range(3))
    # contamination 0.1 flags ceil(21.4) = 22 rows
    assert kept == 214 - 22


def test_run_is_byte_identical(run_dir, tmp_path, glass_path):
    assert main(run_args(glass_path, tmp_path)) == 0
    for p in run_dir.iterdir():
        assert (tmp_path / p.name).read_bytes() == p.read_bytes(), p.name


def test_run_stdout_has_no_plaintext(run_dir, tmp_path, glass_path, capsys):
    main(run_args(glass_path, tmp_path))
    out = capsys.readouterr().out
    assert "1.52101" not in out and "13.64" not in out


def test_run_single_client(tmp_path, glass_path, capsys):
    args = run_args(glass_path, tmp_path)
    args[args.index("--clients") + 1] = "1"
    assert main(args) == 1
    assert "m >= 2" in capsys.readouterr().err


def test_run_missing_file(tmp_path):
    assert main(run_args(tmp_path / "nope.csv", tmp_path / "o")) == 1


def test_run_config_merge(tmp_path, glass_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"clients": 1, "threshold": 0.99, "trees": 5}))
    # flags win over the file's clients; the file supplies the threshold policy
    assert main(run_args(glass_path, tmp_path / "o", "--config", str(cfg))) == 0
    kept = sum(len(read_rows(tmp_path / "o" / f"client_{i}_clean.csv")) - 1 for i in range(3))
    assert kept == 214


def test_run_per_client_files(tmp_path):
    files = []
    for i in range(2):
        assert main(["synth", "--inliers", "20", "--outliers", "1", "--dims", "2",
                     "--seed", str(i), "--out", str(tmp_path / f"c{i}.csv")]) == 0
        files.append(str(tmp_path / f"c{i}.csv"))
    assert main(["run", "--data", ",".join(files), "--clients", "2", "--seed", "1",
                 "--keysize", "512", "--out", str(tmp_path / "o")]) == 0
    assert len(read_rows(tmp_path / "o" / "scores.csv")) == 43


def test_bench_outputs(tmp_path, capsys):
    data = tmp_path / "s.csv"
    main(["synth", "--inliers", "40", "--outliers", "3", "--dims", "2", "--seed", "2", "--out", str(data)])
    assert main(["bench", "--data", str(data), "--runs", "2", "--algos", "if,eif",
                 "--modes", "standard,multiparty", "--T", "2,10", "--keysize", "512",
                 "--trees", "10", "--seed", "3", "--out", str(tmp_path / "b")]) == 0
    rows = read_rows(tmp_path / "b" / "results.csv")
    assert ",".join(rows[0]) == "dataset,algo,mode,T,seed,auroc"
    # 2 algos x (2 standard + 2 T x 2 multiparty)
    assert len(rows) - 1 == 12
    summary = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert len(summary) == 6
    assert "mean AUROC" in capsys.readouterr().out


def test_bench_zero_runs(tmp_path, glass_path):
    assert main(["bench", "--data", str(glass_path), "--runs", "0", "--out", str(tmp_path)]) == 1


def test_bench_unreadable(tmp_path):
    assert main(["bench", "--data", str(tmp_path / "missing.csv"), "--runs", "1",
                 "--out", str(tmp_path)]) == 1


def test_synth(tmp_path):
    args = ["synth", "--inliers", "500", "--outliers", "25", "--dims", "2", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    rows = read_rows(tmp_path / "a.csv")[1:]
    assert len(rows) == 525 and sum(r[-1] == "1" for r in rows) == 25
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_synth_errors(tmp_path):
    base = ["synth", "--inliers", "5", "--outliers", "1", "--seed", "1"]
    assert main(base + ["--dims", "0", "--out", str(tmp_path / "x.csv")]) == 1
    assert main(base + ["--dims", "2", "--out", str(tmp_path / "no" / "dir" / "x.csv")]) == 1


def test_audit_honest(run_dir, capsys):
    assert main(["audit", "--transcript", str(run_dir / "transcript.ndjson")]) == 0
    assert capsys.readouterr().out.count("PASS") == 4


def test_audit_tampered(run_dir, tmp_path, capsys):
    t = Transcript.load(run_dir / "transcript.ndjson")
    leak = Envelope(t.entries[-1].seq + 1, client_id(0), SERVER_P, "masked_matrix",
                    encode_matrix([[1.52101, 13.64]]))
    Transcript(list(t.entries) + [leak]).save(tmp_path / "bad.ndjson")
    assert main(["audit", "--transcript", str(tmp_path / "bad.ndjson")]) == 1
    out = capsys.readouterr().out
    assert "FAIL  principal_server_inputs" in out


def test_audit_truncated(run_dir, tmp_path):
    text = (run_dir / "transcript.ndjson").read_text()
    (tmp_path / "cut.ndjson").write_text(text[: len(text) // 2])
    assert main(["audit", "--transcript", str(tmp_path / "cut.ndjson")]) == 2
    assert main(["audit", "--transcript", str(tmp_path / "absent.ndjson")]) == 2


def test_bad_flags_exit_one():
    assert main(["run", "--algo", "svm"]) == 1
    assert main([]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "maskforest", "synth", "--inliers", "3", "--outliers", "0",
                           "--dims", "1", "--seed", "0", "--out", str(tmp_path / "m.csv")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert len(read_rows(tmp_path / "m.csv")) == 4
