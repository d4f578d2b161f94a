import csv
import hashlib
import json

import pytest

from beamsight.cli import EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_OK, main


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--scenario", "v2i-day", "--n", "30", "--seed", "7", "--out", str(out)]) == EXIT_OK
    return out


def test_gen_data_is_deterministic(dataset, tmp_path, capsys):
    assert main(["gen-data", "--scenario", "v2i-day", "--n", "30", "--seed", "7", "--out", str(tmp_path)]) == 0
    assert "seed=7" in capsys.readouterr().out
    for name in ("manifest.json", "labels.csv"):
        assert _sha(tmp_path / name) == _sha(dataset / name)


def test_gen_data_missing_dir_writes_nothing(tmp_path):
    target = tmp_path / "nope"
    assert main(["gen-data", "--n", "5", "--out", str(target)]) == EXIT_DATA
    assert not target.exists()


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"train": {"epochs": 0}}')
    assert main(["latency-report", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    bad.write_text('{"unknown_section": 1}')
    assert main(["latency-report", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    bad.write_text("{not json")
    assert main(["latency-report", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["latency-report", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG


def test_thread_cap_validation(monkeypatch, tmp_path):
    monkeypatch.setenv("BEAMSIGHT_THREADS", "zero")
    assert main(["latency-report", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_latency_report_outputs(tmp_path, capsys):
    assert main(["latency-report", "--out", str(tmp_path), "--seed", "5"]) == EXIT_OK
    assert "3.44375" in capsys.readouterr().out
    rows = list(csv.DictReader(open(tmp_path / "latency.csv")))
    doc = json.loads((tmp_path / "latency.json").read_text())
    assert [r["k"] for r in rows] == [str(r["k"]) for r in doc["rows"]]
    for a, b in zip(rows, doc["rows"]):
        for key in ("T_sp_mm_ms", "total_ms", "latency_reduction_pct", "search_fraction_pct"):
            assert float(a[key]) == b[key]
    assert doc["resolved_config"]["seed"] == 5
    assert (tmp_path / "latency.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    small = tmp_path / "k32"
    assert main(["latency-report", "--K", "32", "--k", "4", "--out", str(small)]) == EXIT_OK
    assert json.loads((small / "latency.json").read_text())["exhaustive_sweep_ms"] == 5.0


def test_latency_report_is_byte_stable(tmp_path):
    for d in ("a", "b"):
        assert main(["latency-report", "--out", str(tmp_path / d)]) == EXIT_OK
    for name in ("latency.csv", "latency.json", "latency.png"):
        assert _sha(tmp_path / "a" / name) == _sha(tmp_path / "b" / name)


def test_train_eval_roundtrip(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    args = ["train", "--data", str(dataset), "--variant", "baseline1", "--epochs", "2", "--seed", "3",
            "--out", str(run)]
    assert main(args) == EXIT_OK
    assert "variant=baseline1" in capsys.readouterr().out
    for name in ("best.ckpt", "last.ckpt", "loss.csv", "loss.png", "eval_val.json", "config.json"):
        assert (run / name).exists(), name
    ev = tmp_path / "ev"
    assert main(["eval", "--data", str(dataset), "--checkpoint", str(run / "best.ckpt"), "--k", "3",
                 "--out", str(ev)]) == EXIT_OK
    rep = json.loads((ev / "eval.json").read_text())
    assert sorted(map(int, rep["topk_accuracy"])) == [1, 3, 5, 9, 11, 15]
    accs = [rep["topk_accuracy"][str(k)] for k in (1, 3, 5, 9, 11, 15)]
    apls = [rep["apl_db"][str(k)] for k in (1, 3, 5, 9, 11, 15)]
    assert all(a <= b for a, b in zip(accs, accs[1:])) and all(a >= b for a, b in zip(apls, apls[1:]))
    assert rep["seed"] == 3 and (ev / "predictions.csv").exists() and (ev / "topk.png").exists()

    again = tmp_path / "run2"
    assert main(args[:-1] + [str(again)]) == EXIT_OK
    assert (run / "loss.csv").read_text() == (again / "loss.csv").read_text()

    assert main(["eval", "--data", str(dataset), "--checkpoint", str(run / "best.ckpt"), "--k", "99",
                 "--out", str(ev)]) == EXIT_CONFIG
    assert main(["eval", "--data", str(dataset), "--checkpoint", str(tmp_path / "missing.ckpt"),
                 "--out", str(ev)]) == EXIT_DATA


def test_train_resume_matches_uninterrupted(dataset, tmp_path):
    base = ["train", "--data", str(dataset), "--variant", "baseline1", "--seed", "1"]
    assert main(base + ["--epochs", "2", "--out", str(tmp_path / "full")]) == EXIT_OK
    assert main(base + ["--epochs", "1", "--out", str(tmp_path / "part")]) == EXIT_OK
    # same out dir, longer budget: continues from epoch 1
    assert main(base + ["--epochs", "2", "--resume", "--out", str(tmp_path / "part")]) == EXIT_OK
    assert (tmp_path / "full" / "loss.csv").read_text() == (tmp_path / "part" / "loss.csv").read_text()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_missing_data_and_divergence(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == EXIT_DATA
    cfg = tmp_path / "hot.json"
    cfg.write_text(json.dumps({"train": {"lr": 1e300}}))
    data = tmp_path / "d"
    data.mkdir()
    assert main(["gen-data", "--n", "10", "--seed", "1", "--out", str(data)]) == EXIT_OK
    code = main(["train", "--data", str(data), "--variant", "baseline1", "--epochs", "3", "--config", str(cfg),
                 "--out", str(tmp_path / "r")])
    assert code == EXIT_DIVERGED


def test_train_proposed_smoke_is_fast(dataset, tmp_path):
    import time
    t = time.perf_counter()
    assert main(["train", "--data", str(dataset), "--epochs", "1", "--out", str(tmp_path)]) == EXIT_OK
    assert time.perf_counter() - t < 60
