import json
import os

import numpy as np
import pytest

from symode.cli import main

GEN_CONFIG = {
    "d_max": 1,
    "dimension_weights": [1.0],
    "max_depth": 2,
    "max_binary_ops": 2,
    "binary_ops": ["add", "mul"],
    "unary_ops": ["pow2"],
    "n_points": 30,
    "t_span": 6.0,
    "mantissa_digits": 2,
    "noise_levels": [0.0],
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli")
    config = path / "gen.json"
    config.write_text(json.dumps(GEN_CONFIG))
    return path


@pytest.fixture(scope="module")
def dataset(workdir):
    out = workdir / "data.jsonl"
    code = main(
        ["gen", "--config", str(workdir / "gen.json"), "--count", "48",
         "--out", str(out), "--seed", "7"]
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(workdir, dataset):
    out = workdir / "model.ckpt"
    code = main(
        ["train", "--data", str(dataset), "--steps", "25", "--preset", "toy",
         "--out", str(out), "--batch-size", "16", "--seed", "1"]
    )
    assert code == 0
    return out


class TestGen:
    def test_gen_succeeds_and_matches_manifest(self, dataset):
        lines = dataset.read_text().strip().splitlines()
        assert len(lines) == 48
        manifest = json.loads((dataset.parent / "data.jsonl.manifest.json").read_text())
        assert manifest["summary"]["accepted"] == 48

    def test_gen_worker_invariance_bytes(self, workdir):
        a, b = workdir / "wa.jsonl", workdir / "wb.jsonl"
        base = ["gen", "--config", str(workdir / "gen.json"), "--count", "16", "--seed", "21"]
        assert main(base + ["--out", str(a), "--workers", "1"]) == 0
        assert main(base + ["--out", str(b), "--workers", "8"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_gen_bad_config_field_fails(self, workdir, capsys):
        bad = workdir / "bad.json"
        bad.write_text(json.dumps({"no_such_field": 1}))
        code = main(["gen", "--config", str(bad), "--count", "1", "--out", str(workdir / "x.jsonl")])
        assert code == 1
        assert "no_such_field" in capsys.readouterr().err


class TestTrain:
    def test_checkpoint_written(self, checkpoint):
        assert checkpoint.exists() and checkpoint.stat().st_size > 0

    def test_train_determinism_bytes(self, workdir, dataset):
        a, b = workdir / "ma.ckpt", workdir / "mb.ckpt"
        base = ["train", "--data", str(dataset), "--steps", "12", "--preset", "toy",
                "--batch-size", "16", "--seed", "5"]
        assert main(base + ["--out", str(a)]) == 0
        assert main(base + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_dataset_fails(self, workdir, capsys):
        code = main(["train", "--data", str(workdir / "nope.jsonl"), "--steps", "1",
                     "--out", str(workdir / "m.ckpt")])
        assert code == 1


class TestEval:
    def test_checkpoint_eval_writes_report(self, workdir, checkpoint):
        out = workdir / "eval_model"
        code = main(["eval", "--checkpoint", str(checkpoint), "--benchmark", "bundled",
                     "--noise-levels", "0,0.01", "--seed", "3", "--out", str(out),
                     "--max-decode-len", "48"])
        assert code == 0
        report = json.loads((out / "model" / "report.json").read_text())
        assert report["noise_levels"] == [0.0, 0.01]
        assert (out / "tables.txt").exists()

    def test_eval_determinism_and_workers(self, workdir, checkpoint):
        outs = []
        for name, workers in (("e1", "1"), ("e2", "8")):
            out = workdir / name
            code = main(["eval", "--checkpoint", str(checkpoint), "--benchmark", "bundled",
                         "--noise-levels", "0,0.01", "--seed", "3", "--out", str(out),
                         "--workers", workers, "--max-decode-len", "48"])
            assert code == 0
            outs.append((out / "model" / "report.json").read_bytes())
        assert outs[0] == outs[1]

    def test_predictions_mode_multi_method_table(self, workdir):
        from symode.benchmark import bundled_benchmark

        bench = bundled_benchmark()
        for name, n in (("oracle", len(bench)), ("partial", 3)):
            path = workdir / f"{name}.json"
            path.write_text(json.dumps({e.id: list(e.equations) for e in bench[:n]}))
        out = workdir / "eval_preds"
        code = main(["eval", "--predictions", str(workdir / "oracle.json"),
                     "--predictions", str(workdir / "partial.json"),
                     "--noise-levels", "0", "--out", str(out)])
        assert code == 0
        tables = (out / "tables.txt").read_text()
        assert "oracle" in tables and "partial" in tables
        oracle_report = json.loads((out / "oracle" / "report.json").read_text())
        assert oracle_report["aggregates"]["p_r2_reconstruction"]["0"] == 1.0

    def test_no_source_fails(self, workdir, capsys):
        code = main(["eval", "--out", str(workdir / "nothing")])
        assert code == 1


class TestInferAndDivfield:
    def test_divfield_csv(self, workdir):
        out = workdir / "field.csv"
        code = main(["divfield", "--system", "2.1*x_0 - 0.5*x_0^2 | x_0*x_1",
                     "--region=-2:2:5,-1:1:4", "--out", str(out)])
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "x_0,x_1,div,valid"
        assert len(lines) == 1 + 20

    def test_divfield_auto_region(self, workdir):
        out = workdir / "auto.csv"
        assert main(["divfield", "--system", "sub x_0 pow3 x_0", "--region", "auto",
                     "--out", str(out)]) == 0
        assert len(out.read_text().strip().splitlines()) == 1 + 20

    def test_divfield_bad_region_fails(self, workdir):
        assert main(["divfield", "--system", "x_0", "--region", "0:1,0:1",
                     "--out", str(workdir / "bad.csv")]) == 1

    def test_infer_graceful_failure_exit_code(self, workdir, checkpoint):
        csv_path = workdir / "series.csv"
        times = np.linspace(0, 5, 40)
        values = 2.0 * np.exp(-0.7 * times)
        csv_path.write_text("t,x\n" + "\n".join(f"{t},{v}" for t, v in zip(times, values)) + "\n")
        out = workdir / "infer.json"
        code = main(["infer", "--checkpoint", str(checkpoint), "--csv", str(csv_path),
                     "--columns", "t,x", "--out", str(out), "--max-decode-len", "48"])
        payload = json.loads(out.read_text())
        if code == 0:
            assert payload["system_infix"]
        else:
            assert payload["failures"]

    def test_infer_missing_csv_fails(self, workdir, checkpoint):
        assert main(["infer", "--checkpoint", str(checkpoint), "--csv",
                     str(workdir / "nope.csv"), "--out", str(workdir / "o.json")]) == 1
