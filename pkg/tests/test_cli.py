import json
import os

import numpy as np
import pytest

from curveblocks.cli import main


def run_cli(*args):
    return main([str(a) for a in args])


def simulate(tmp_path, n=10, d=6, T=8, seed=0):
    out = tmp_path / "sim"
    assert run_cli("simulate", "--out", out, "--n", n, "--d", d, "--T", T, "--seed", seed) == 0
    return out


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestSimulate:
    def test_writes_dataset_and_truth(self, tmp_path):
        out = simulate(tmp_path)
        assert (out / "data.csv").exists()
        assert read(out / "row_truth.csv").startswith(b"row_id,cluster\n")
        assert read(out / "col_truth.csv").startswith(b"col_id,cluster\n")
        data = read(out / "data.csv").decode()
        assert data.startswith("row_id,col_id,t,value\n")
        assert len(data.strip().split("\n")) == 1 + 10 * 6 * 8

    def test_deterministic(self, tmp_path):
        a = simulate(tmp_path / "a", seed=3)
        b = simulate(tmp_path / "b", seed=3)
        assert read(a / "data.csv") == read(b / "data.csv")


class TestScore:
    def test_self_score_prints_one(self, tmp_path, capsys):
        out = simulate(tmp_path)
        rows, cols = out / "row_truth.csv", out / "col_truth.csv"
        capsys.readouterr()  # drop the simulate message
        assert run_cli("score", rows, cols, rows, cols) == 0
        assert capsys.readouterr().out.strip() == "1.0"

    def test_mismatched_ids_exit_3(self, tmp_path, capsys):
        a = simulate(tmp_path / "a", n=10)
        b = simulate(tmp_path / "b", n=12)
        code = run_cli("score", a / "row_truth.csv", a / "col_truth.csv",
                       b / "row_truth.csv", b / "col_truth.csv")
        assert code == 3


FIT_ARGS = [
    "--K", 2, "--L", 2, "--re_config", "TFF", "--mc_samples", 16,
    "--iterations", 6, "--burn_in", 3, "--knots", 2, "--seed", 0,
    "--nlme_max_iter", 10,
]


class TestFit:
    def test_single_block_outputs(self, tmp_path):
        sim = simulate(tmp_path)
        out = tmp_path / "fit"
        code = run_cli(
            "fit", "--data", sim / "data.csv", "--out", out,
            "--K", 1, "--L", 1, "--re_config", "FFF", "--iterations", 5,
            "--burn_in", 2, "--knots", 2, "--threads", 1,
        )
        assert code == 0
        rows = read(out / "row_partition.csv").decode().strip().split("\n")
        assert rows[0] == "row_id,cluster"
        assert all(line.endswith(",1") for line in rows[1:])
        trace = read(out / "loglik_trace.csv").decode().strip().split("\n")
        assert trace[0] == "iteration,loglik" and len(trace) == 6
        means = read(out / "block_means.csv").decode().strip().split("\n")
        assert means[0] == "k,l,t,mean_value"
        report = json.loads(read(out / "report.json"))
        assert report["config"]["K"] == 1
        assert "icl" in report["result"]
        assert (out / "report.txt").exists()

    def test_missing_k_is_config_error(self, tmp_path, capsys):
        sim = simulate(tmp_path)
        code = run_cli("fit", "--data", sim / "data.csv", "--out", tmp_path / "x")
        assert code == 2

    def test_bad_data_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("row_id,col_id,t,value\nr1,c1,abc,1.0\n")
        code = run_cli("fit", "--data", bad, "--out", tmp_path / "x", "--K", 1, "--L", 1)
        assert code == 3

    def test_config_file_and_flag_precedence(self, tmp_path):
        sim = simulate(tmp_path)
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"K": 1, "L": 1, "re_config": "FFF",
                                        "iterations": 5, "burn_in": 2, "knots": 2}))
        out = tmp_path / "fit"
        code = run_cli("fit", "--data", sim / "data.csv", "--out", out,
                       "--config", cfg_file, "--iterations", 4)
        assert code == 0
        report = json.loads(read(out / "report.json"))
        assert report["config"]["iterations"] == 4  # flag wins
        assert report["config"]["K"] == 1  # file fills the rest

    def test_unknown_config_key_rejected(self, tmp_path):
        sim = simulate(tmp_path)
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"K": 1, "L": 1, "clusters": 3}))
        code = run_cli("fit", "--data", sim / "data.csv", "--out", tmp_path / "x",
                       "--config", cfg_file)
        assert code == 2

    def test_byte_identical_reruns_any_threads(self, tmp_path):
        sim = simulate(tmp_path)
        outputs = []
        for name, threads in (("f1", 1), ("f2", 1), ("f3", 2)):
            out = tmp_path / name
            code = run_cli(
                "fit", "--data", sim / "data.csv", "--out", out,
                *FIT_ARGS, "--n_starts", 2, "--threads", threads,
            )
            assert code == 0
            outputs.append(
                {
                    f: read(out / f)
                    for f in (
                        "row_partition.csv", "col_partition.csv",
                        "loglik_trace.csv", "block_means.csv",
                    )
                }
            )
        assert outputs[0] == outputs[1]
        # reports echo the thread count, so compare result payloads instead
        assert outputs[0] == outputs[2]

    def test_preprocess_flag(self, tmp_path):
        sim = simulate(tmp_path)
        out = tmp_path / "fit"
        code = run_cli(
            "fit", "--data", sim / "data.csv", "--out", out,
            "--preprocess", "standardize,aggregate:2",
            "--K", 1, "--L", 1, "--re_config", "FFF",
            "--iterations", 4, "--burn_in", 2, "--knots", 2,
        )
        assert code == 0
        report = json.loads(read(out / "report.json"))
        assert report["preprocess"] == "standardize,aggregate:2"

    def test_fit_then_score_against_truth(self, tmp_path, capsys):
        sim = simulate(tmp_path, n=12, d=6, T=8, seed=1)
        out = tmp_path / "fit"
        code = run_cli(
            "fit", "--data", sim / "data.csv", "--out", out,
            "--K", 4, "--L", 3, "--re_config", "TFT", "--mc_samples", 24,
            "--iterations", 8, "--burn_in", 4, "--knots", 3, "--seed", 0,
            "--threads", 1,
        )
        assert code == 0
        capsys.readouterr()
        code = run_cli(
            "score", out / "row_partition.csv", out / "col_partition.csv",
            sim / "row_truth.csv", sim / "col_truth.csv",
        )
        assert code == 0
        value = float(capsys.readouterr().out.strip())
        assert -1.0 <= value <= 1.0


class TestSelect:
    def test_ranking_written(self, tmp_path):
        sim = simulate(tmp_path, n=8, d=4)
        out = tmp_path / "sel"
        code = run_cli(
            "select", "--data", sim / "data.csv", "--out", out,
            "--K_values", "1,2", "--L_values", "1", "--re_configs", "FFF",
            "--iterations", 5, "--burn_in", 2, "--knots", 2, "--threads", 1,
        )
        assert code == 0
        lines = read(out / "icl_ranking.csv").decode().strip().split("\n")
        assert lines[0] == "rank,K,L,re_config,icl,loglik_c,nu"
        assert len(lines) == 3
        report = json.loads(read(out / "report.json"))
        assert report["grid"]["re_config_mode"] == "fixed"
        assert report["best"]["K"] in (1, 2)
