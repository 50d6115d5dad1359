import json
import math
import subprocess
import sys

import numpy as np
import pytest

from mkflow.classify import read_matrix_csv, write_labels
from mkflow.cli import main
from mkflow.imaging import GrayImage, save_pgm


def delta_image(path, col, row, width=6, height=6):
    a = np.zeros((height, width))
    a[row, col] = 1.0
    save_pgm(GrayImage.from_array(a), path)
    return str(path)


@pytest.fixture
def deltas(tmp_path):
    return delta_image(tmp_path / "a.pgm", 0, 0), delta_image(tmp_path / "b.pgm", 3, 4)


@pytest.fixture
def toy_dir(tmp_path, rng):
    d = tmp_path / "toy"
    d.mkdir()
    ids = ["p", "q", "r", "s", "t", "u"]
    for name in ids:
        save_pgm(GrayImage.from_array(rng.uniform(size=(4, 5))), d / f"{name}.pgm")
    write_labels(d / "labels.csv", ids, ["x", "y", "x", "y", "x", "y"])
    return d


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_distance_fixtures(capsys, deltas):
    a, b = deltas
    assert run(capsys, "distance", a, a) == (0, "0\n", "")
    code, out, _ = run(capsys, "distance", a, b, "--kappa", "2")
    assert code == 0 and float(out) == pytest.approx(4.0, rel=1e-12)
    code, out, _ = run(capsys, "distance", a, b, "--kappa", "3")
    assert float(out) == pytest.approx(5.0, rel=1e-12)
    code, out, _ = run(capsys, "distance", a, b, "--metric", "l2")
    assert float(out) == pytest.approx(math.sqrt(2))


def test_distance_json(capsys, deltas):
    code, out, _ = run(capsys, "distance", *deltas, "--kappa", "3", "--json")
    payload = json.loads(out)
    assert payload["value"] == pytest.approx(5.0)
    assert payload["plan_entries"] == 1
    assert {"edges_after_prune", "quantization_unit"} <= set(payload)


def test_distance_errors(capsys, tmp_path, deltas):
    code, _, err = run(capsys, "distance", tmp_path / "missing.pgm", deltas[0])
    assert code == 2 and "missing.pgm" in err
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P7\n")
    assert run(capsys, "distance", bad, deltas[0])[0] == 2
    other = delta_image(tmp_path / "c.pgm", 0, 0, width=4)
    assert run(capsys, "distance", other, deltas[0])[0] == 2
    assert run(capsys, "distance", other, deltas[0], "--resize", "4x6")[0] == 0
    assert run(capsys, "distance", *deltas, "--kappa", "-1")[0] == 1
    with pytest.raises(SystemExit) as exc:
        main(["distance", deltas[0]])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["distance", *deltas, "--resize", "big"])
    assert exc.value.code == 1


def test_matrix_and_classify(capsys, toy_dir, tmp_path):
    out1, out4 = tmp_path / "m1.csv", tmp_path / "m4.csv"
    base = ["matrix", "--dir", toy_dir, "--labels", toy_dir / "labels.csv", "--kappa", "1", "--resolution", "1000"]
    assert run(capsys, *base, "--workers", "1", "--out", out1)[0] == 0
    assert run(capsys, *base, "--workers", "4", "--out", out4)[0] == 0
    assert out1.read_bytes() == out4.read_bytes()
    dm = read_matrix_csv(out1)
    assert dm.n == 6 and np.all(np.diag(dm.values) == 0)
    assert dm.metric_tag == "mk:kappa=1:p=1"
    l2 = tmp_path / "l2.csv"
    run(capsys, "matrix", "--dir", toy_dir, "--labels", toy_dir / "labels.csv", "--metric", "l2", "--out", l2)
    assert l2.read_text().startswith("# metric=l2 n=6")

    report = tmp_path / "report.csv"
    args = ["classify", "--matrix", out1, "--labels", toy_dir / "labels.csv", "--repeats", "20",
            "--train-frac", "1/3", "--out", report]
    code, first, _ = run(capsys, *args)
    assert code == 0 and "mean error" in first
    assert run(capsys, *args)[1] == first
    assert report.read_text().splitlines()[0].startswith("metric,repeats,mean_error")


def test_matrix_missing_label_names_file(capsys, toy_dir, tmp_path):
    save_pgm(GrayImage.from_array(np.zeros((4, 5))), toy_dir / "stray.pgm")
    code, _, err = run(capsys, "matrix", "--dir", toy_dir, "--labels", toy_dir / "labels.csv",
                       "--out", tmp_path / "m.csv")
    assert code == 2 and "stray.pgm" in err


def test_classify_dimension_mismatch(capsys, toy_dir, tmp_path):
    m = tmp_path / "m.csv"
    run(capsys, "matrix", "--dir", toy_dir, "--labels", toy_dir / "labels.csv", "--metric", "l2", "--out", m)
    short = tmp_path / "short.csv"
    write_labels(short, ["p", "q"], ["x", "y"])
    assert run(capsys, "classify", "--matrix", m, "--labels", short)[0] == 2


def test_classify_separable_matrix(capsys, tmp_path):
    labels = ["a"] * 6 + ["b"] * 6
    values = np.where(np.equal.outer(labels, labels), 1.0, 9.0)
    np.fill_diagonal(values, 0.0)
    m = tmp_path / "sep.csv"
    with open(m, "w") as fh:
        fh.write("# metric=toy n=12\n")
        for row in values:
            fh.write(",".join(f"{v:g}" for v in row) + "\n")
    lab = tmp_path / "labels.csv"
    write_labels(lab, [f"i{k}" for k in range(12)], labels)
    code, out, _ = run(capsys, "classify", "--matrix", m, "--labels", lab, "--repeats", "30")
    assert code == 0 and "mean error 0.0000" in out


def test_synth_and_sweep(capsys, tmp_path):
    out = tmp_path / "synth"
    code, msg, _ = run(capsys, "synth", "--out", out, "--per-class", "3", "--size", "8x6", "--jitter", "1")
    assert code == 0 and "9 images" in msg
    code, table, _ = run(capsys, "sweep", "--dir", out, "--labels", out / "labels.csv", "--kappas", "1,4",
                         "--repeats", "5", "--resolution", "1000", "--workers", "1",
                         "--out", tmp_path / "sweep.csv")
    assert code == 0
    lines = table.strip().splitlines()
    assert len(lines) == 4 and lines[-1].startswith("l2")
    code, table2, _ = run(capsys, "sweep", "--synth", "--per-class", "3", "--size", "8x6", "--jitter", "1",
                          "--kappas", "1,4", "--repeats", "5", "--resolution", "1000", "--workers", "1")
    assert table2 == table
    assert run(capsys, "sweep", "--kappas", "1")[0] == 1
    assert run(capsys, "synth", "--out", out, "--size", "8x6", "--jitter", "5")[0] == 1


def test_oracle_check_and_bench(capsys):
    code, out, _ = run(capsys, "oracle-check", "--trials", "12", "--seed", "4")
    assert code == 0 and out.strip().endswith("12/12 matched")
    code, out, _ = run(capsys, "bench", "--size", "12x10", "--kappas", "1,4", "--repeat", "1", "--json")
    rows = json.loads(out)
    assert [r["kappa"] for r in rows] == [1.0, 4.0]
    assert rows[0]["edges_after_prune"] < rows[1]["edges_after_prune"]


def test_console_entry_point(tmp_path, deltas):
    proc = subprocess.run([sys.executable, "-m", "mkflow", "distance", *deltas, "--kappa", "2"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert float(proc.stdout) == pytest.approx(4.0)
