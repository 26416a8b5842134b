"""Command-line flows and the CSV layer, driven in-process through main()."""

import json
import os

import numpy as np
import pytest

from vecem import FittedEmulator, ShapeError
from vecem.cli import (BENCH_COLUMNS, main, read_index, read_matrix,
                       reshape_space_as_input, write_index, write_matrix)
from vecem.errors import ParseError


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestCsvLayer:
    def test_matrix_round_trip_is_lossless(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.standard_normal((12, 3))
        arr[0, 0] = 1.0 / 3.0
        arr[1, 1] = 1e-17
        arr[2, 2] = -0.0
        arr[3, 0] = 12345678901234.5678
        path = tmp_path / "m.csv"
        write_matrix(path, arr, "y")
        back = read_matrix(path)
        assert np.array_equal(back, arr)
        header = path.read_text().splitlines()[0]
        assert header == "y1,y2,y3"

    def test_index_round_trip(self, tmp_path):
        idx = np.array([0, 3, 17, 4])
        path = tmp_path / "i.csv"
        write_index(path, idx)
        assert np.array_equal(read_index(path), idx)
        assert path.read_text().splitlines()[0] == "index"

    def test_ragged_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x1,x2\n1.0,2.0\n3.0\n")
        with pytest.raises(ParseError) as err:
            read_matrix(path)
        assert err.value.row == 3

    def test_bad_cell_reports_line_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x1,x2\n1.0,2.0\n3.0,oops\n")
        with pytest.raises(ParseError) as err:
            read_matrix(path)
        assert err.value.row == 3
        assert err.value.column == 2

    def test_empty_and_headerless_files(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        with pytest.raises(ParseError):
            read_matrix(empty)
        header_only = tmp_path / "h.csv"
        header_only.write_text("x1,x2\n")
        with pytest.raises(ParseError):
            read_matrix(header_only)

    def test_blank_records_skipped(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text("x1\n1.0\n\n2.0\n")
        assert np.array_equal(read_matrix(path), np.array([[1.0], [2.0]]))

    def test_index_validation(self, tmp_path):
        two_cols = tmp_path / "two.csv"
        two_cols.write_text("a,b\n1,2\n")
        with pytest.raises(ParseError):
            read_index(two_cols)
        negative = tmp_path / "neg.csv"
        negative.write_text("index\n-1\n")
        with pytest.raises(ParseError):
            read_index(negative)
        fractional = tmp_path / "frac.csv"
        fractional.write_text("index\n1.5\n")
        with pytest.raises(ParseError):
            read_index(fractional)


class TestGen:
    def test_files_shapes_and_split(self, tmp_path, capsys):
        out = tmp_path / "data"
        code, stdout, _ = run(capsys, "gen", "--out", str(out), "--n", "25",
                              "--p", "2", "--k", "3", "--ranges", "0.4,0.6",
                              "--seed", "5")
        assert code == 0
        assert "25 runs" in stdout
        X = read_matrix(out / "design.csv")
        Y = read_matrix(out / "output.csv")
        tr = read_index(out / "train_index.csv")
        te = read_index(out / "test_index.csv")
        assert X.shape == (25, 2)
        assert Y.shape == (25, 3)
        assert tr.shape == (13,) and te.shape == (12,)
        assert np.array_equal(np.sort(np.concatenate([tr, te])), np.arange(25))
        assert np.all(np.diff(tr) > 0) and np.all(np.diff(te) > 0)

    def test_seed_reproducibility(self, tmp_path, capsys):
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        for out, seed in [(a, "9"), (b, "9"), (c, "10")]:
            assert run(capsys, "gen", "--out", str(out), "--n", "20", "--p",
                       "1", "--ranges", "0.5", "--seed", seed)[0] == 0
        for name in ("design.csv", "output.csv", "train_index.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert (a / "design.csv").read_bytes() != (c / "design.csv").read_bytes()

    def test_scalar_range_broadcasts(self, tmp_path, capsys):
        out = tmp_path / "d"
        code, _, _ = run(capsys, "gen", "--out", str(out), "--n", "10", "--p",
                         "3", "--ranges", "0.5")
        assert code == 0
        assert read_matrix(out / "design.csv").shape == (10, 3)

    def test_bad_arguments(self, tmp_path, capsys):
        out = str(tmp_path / "x")
        assert run(capsys, "gen", "--out", out, "--n", "1", "--p", "1",
                   "--ranges", "0.5")[0] == 2
        assert run(capsys, "gen", "--out", out, "--n", "10", "--p", "2",
                   "--ranges", "0.5,0.5,0.5")[0] == 2


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One generated data set, fitted model, and prediction inputs."""
    root = tmp_path_factory.mktemp("flow")
    data = root / "data"
    assert main(["gen", "--out", str(data), "--n", "80", "--p", "2", "--k",
                 "2", "--ranges", "0.35,0.35", "--seed", "3"]) == 0
    X = read_matrix(data / "design.csv")
    Y = read_matrix(data / "output.csv")
    tr = read_index(data / "train_index.csv")
    write_matrix(data / "train_design.csv", X[tr], "x")
    write_matrix(data / "train_output.csv", Y[tr], "y")
    model = root / "model.json"
    plan = root / "plan.json"
    assert main(["fit", "--design", str(data / "design.csv"),
                 "--output", str(data / "output.csv"),
                 "--train-index", str(data / "train_index.csv"),
                 "--model", str(model), "--m", "8",
                 "--dump-plan", str(plan)]) == 0
    return {"root": root, "data": data, "model": model, "plan": plan,
            "X": X, "Y": Y, "train": tr}


class TestFit:
    def test_model_file_and_plan(self, workspace):
        obj = json.loads(workspace["model"].read_text())
        assert obj["format"] == "vecem-model"
        assert obj["method"] == "vecchia"
        assert obj["m"] == 8
        assert len(obj["ranges"]) == 2
        assert obj["training"]["design_csv"]
        plan = json.loads(workspace["plan"].read_text())
        assert sorted(plan.keys()) == ["m", "neighbors", "order", "scale"]
        assert len(plan["order"]) == 40

    def test_loaded_model_resolves_csv_references(self, workspace):
        model = FittedEmulator.load(workspace["model"])
        assert model.n == 40
        assert model.k == 2
        tr = workspace["train"]
        raw = workspace["X"][tr]
        back = model.design.bounds[:, 0] + (model.design.points
                                            * model.design.column_spans())
        assert np.allclose(back, raw, atol=1e-12)

    def test_embed_matches_reference_model(self, workspace, capsys):
        data, root = workspace["data"], workspace["root"]
        emb = root / "embedded.json"
        code, _, _ = run(capsys, "fit", "--design", str(data / "design.csv"),
                         "--output", str(data / "output.csv"),
                         "--train-index", str(data / "train_index.csv"),
                         "--model", str(emb), "--m", "8", "--embed")
        assert code == 0
        a = FittedEmulator.load(workspace["model"])
        b = FittedEmulator.load(emb)
        assert np.array_equal(a.spec.ranges, b.spec.ranges)
        assert np.array_equal(a.design.points, b.design.points)
        assert np.array_equal(a.outputs, b.outputs)
        assert "embedded" in json.loads(emb.read_text())["training"]

    def test_summary_line(self, workspace, capsys):
        data = workspace["data"]
        model2 = workspace["root"] / "m2.json"
        code, stdout, _ = run(capsys, "fit",
                              "--design", str(data / "train_design.csv"),
                              "--output", str(data / "train_output.csv"),
                              "--model", str(model2), "--m", "6")
        assert code == 0
        assert "fit: method=vecchia n=40 k=2" in stdout
        assert "seconds=" in stdout

    def test_report_row(self, workspace, capsys):
        data = workspace["data"]
        report = workspace["root"] / "fit_report.csv"
        code, _, _ = run(capsys, "fit",
                         "--design", str(data / "train_design.csv"),
                         "--output", str(data / "train_output.csv"),
                         "--model", str(workspace["root"] / "m3.json"),
                         "--m", "6", "--report", str(report))
        assert code == 0
        lines = report.read_text().strip().splitlines()
        assert lines[0] == ",".join(BENCH_COLUMNS)
        row = dict(zip(BENCH_COLUMNS, lines[1].split(",")))
        assert row["n"] == "40" and row["method"] == "vecchia"
        assert row["predict_seconds"] == "" and row["rmse"] == ""

    def test_usage_errors(self, workspace, capsys):
        data = workspace["data"]
        args = ["fit", "--design", str(data / "design.csv"),
                "--output", str(data / "output.csv"),
                "--model", str(workspace["root"] / "junk.json")]
        assert run(capsys, *args, "--m", "0")[0] == 2
        assert run(capsys, *args, "--method", "magic")[0] == 2

    def test_data_errors(self, workspace, capsys, tmp_path):
        missing = str(tmp_path / "nope.csv")
        code, _, err = run(capsys, "fit", "--design", missing, "--output",
                           missing, "--model", str(tmp_path / "m.json"))
        assert code == 3
        bad = tmp_path / "bad.csv"
        bad.write_text("x1\n1.0\nzzz\n")
        code, _, err = run(capsys, "fit", "--design", str(bad), "--output",
                           str(bad), "--model", str(tmp_path / "m.json"))
        assert code == 3
        assert "zzz" in err


class TestPredict:
    def test_self_prediction_recovers_training_outputs(self, workspace,
                                                       capsys, tmp_path):
        data = workspace["data"]
        out = tmp_path / "pred"
        code, stdout, _ = run(capsys, "predict",
                              "--model", str(workspace["model"]),
                              "--test", str(data / "train_design.csv"),
                              "--truth", str(data / "train_output.csv"),
                              "--out", str(out))
        assert code == 0
        assert "rmse=" in stdout
        val = float(stdout.split("rmse=")[1].split()[0])
        assert val < 1e-6
        mean = read_matrix(out / "pred_mean.csv")
        truth = read_matrix(data / "train_output.csv")
        assert np.max(np.abs(mean - truth)) < 1e-6
        sd = read_matrix(out / "pred_sd.csv")
        assert sd.shape == mean.shape
        assert np.all(sd >= 0.0)

    def test_no_truth_no_metrics(self, workspace, capsys, tmp_path):
        data = workspace["data"]
        code, stdout, _ = run(capsys, "predict",
                              "--model", str(workspace["model"]),
                              "--test", str(data / "train_design.csv"),
                              "--out", str(tmp_path / "p"))
        assert code == 0
        assert "rmse=" not in stdout

    def test_local_mode_with_comparison(self, workspace, capsys, tmp_path):
        data = workspace["data"]
        out = tmp_path / "pl"
        code, stdout, _ = run(capsys, "predict",
                              "--model", str(workspace["model"]),
                              "--test", str(data / "design.csv"),
                              "--out", str(out),
                              "--m-pred", "40", "--compare-full")
        assert code == 0
        assert "speedup=" in stdout
        gap = float(stdout.split("max_mean_gap=")[1].split()[0])
        assert gap < 1e-10

    def test_weights_written(self, workspace, capsys, tmp_path):
        data = workspace["data"]
        out = tmp_path / "pw"
        code, _, _ = run(capsys, "predict",
                         "--model", str(workspace["model"]),
                         "--test", str(data / "train_design.csv"),
                         "--out", str(out), "--weights")
        assert code == 0
        W = read_matrix(out / "weights.csv")
        assert W.shape == (40, 40)
        assert np.max(np.abs(W.sum(axis=1) - 1.0)) < 1e-8

    def test_missing_model(self, capsys, tmp_path):
        code, _, _ = run(capsys, "predict", "--model",
                         str(tmp_path / "none.json"),
                         "--test", str(tmp_path / "x.csv"),
                         "--out", str(tmp_path / "o"))
        assert code == 3


class TestReshape:
    def test_full_mode_layout(self, tmp_path, capsys):
        write_matrix(tmp_path / "d.csv", np.array([[0.0], [1.0]]), "x")
        write_matrix(tmp_path / "y.csv",
                     np.array([[10.0, 20.0, 30.0], [40.0, 50.0, 60.0]]), "y")
        write_matrix(tmp_path / "c.csv", np.array([[0.1], [0.2], [0.3]]), "s")
        out = tmp_path / "r"
        code, stdout, _ = run(capsys, "reshape",
                              "--design", str(tmp_path / "d.csv"),
                              "--output", str(tmp_path / "y.csv"),
                              "--coord", str(tmp_path / "c.csv"),
                              "--out", str(out))
        assert code == 0
        assert "6 rows" in stdout
        Xr = read_matrix(out / "design.csv")
        yr = read_matrix(out / "output.csv")
        want_X = np.array([[0.0, 0.1], [0.0, 0.2], [0.0, 0.3],
                           [1.0, 0.1], [1.0, 0.2], [1.0, 0.3]])
        assert np.array_equal(Xr, want_X)
        assert np.array_equal(yr, np.array([[10.0], [20.0], [30.0],
                                            [40.0], [50.0], [60.0]]))

    def test_sampled_mode(self):
        rng = np.random.default_rng(1)
        X = rng.random((30, 2))
        Y = rng.random((30, 4))
        coord = np.array([1.0, 2.0, 3.0, 4.0])
        Xr, yr = reshape_space_as_input(X, Y, coord, mode="sampled", seed=7)
        Xr2, yr2 = reshape_space_as_input(X, Y, coord, mode="sampled", seed=7)
        assert np.array_equal(Xr, Xr2) and np.array_equal(yr, yr2)
        assert Xr.shape == (30, 3) and yr.shape == (30, 1)
        for i in range(30):
            j = int(np.where(coord == Xr[i, 2])[0][0])
            assert yr[i, 0] == Y[i, j]

    def test_coordinate_count_mismatch(self, tmp_path, capsys):
        write_matrix(tmp_path / "d.csv", np.zeros((2, 1)) + [[0.0], [1.0]], "x")
        write_matrix(tmp_path / "y.csv", np.ones((2, 3)), "y")
        write_matrix(tmp_path / "c.csv", np.array([[0.1], [0.2]]), "s")
        code, _, err = run(capsys, "reshape",
                           "--design", str(tmp_path / "d.csv"),
                           "--output", str(tmp_path / "y.csv"),
                           "--coord", str(tmp_path / "c.csv"),
                           "--out", str(tmp_path / "r"))
        assert code == 3
        assert "coordinate" in err

    def test_mismatched_rows(self):
        with pytest.raises(ShapeError):
            reshape_space_as_input(np.zeros((3, 1)), np.zeros((2, 2)),
                                   np.array([0.0, 1.0]))


class TestBench:
    def test_report_rows(self, tmp_path, capsys):
        report = tmp_path / "report.csv"
        code, stdout, _ = run(capsys, "bench", "--out", str(report),
                              "--sweep-n", "40", "--sweep-m", "3",
                              "--n-fixed", "40", "--m-fixed", "4",
                              "--p", "2", "--ranges", "0.4,0.4",
                              "--methods", "vecchia", "--seed", "1")
        assert code == 0
        lines = report.read_text().strip().splitlines()
        assert lines[0] == ",".join(BENCH_COLUMNS)
        assert len(lines) == 3
        for line in lines[1:]:
            row = dict(zip(BENCH_COLUMNS, line.split(",")))
            assert row["method"] == "vecchia"
            assert float(row["fit_seconds"]) > 0.0
            assert float(row["relative_rmse"]) > 0.0
            assert row["converged"] in ("true", "false")
        # a rerun replaces the report instead of appending
        code, _, _ = run(capsys, "bench", "--out", str(report),
                         "--sweep-n", "40", "--p", "2",
                         "--ranges", "0.4,0.4", "--methods", "vecchia",
                         "--seed", "1")
        assert code == 0
        assert len(report.read_text().strip().splitlines()) == 2

    def test_requires_a_sweep(self, tmp_path, capsys):
        code, _, err = run(capsys, "bench", "--out", str(tmp_path / "r.csv"))
        assert code == 2
        assert "sweep" in err


class TestGradcheck:
    def test_passes_at_default_tolerance(self, capsys):
        code, stdout, _ = run(capsys, "gradcheck", "--instances", "3",
                              "--seed", "2")
        assert code == 0
        assert "max relative gradient error" in stdout
        worst = float(stdout.split("error ")[1].split()[0])
        assert worst < 1e-5

    def test_impossible_tolerance_fails_numerically(self, capsys):
        code, _, err = run(capsys, "gradcheck", "--instances", "1",
                           "--seed", "2", "--tol", "1e-18")
        assert code == 4
        assert "gradient check failed" in err


class TestUsage:
    def test_no_subcommand(self, capsys):
        assert run(capsys)[0] == 2

    def test_unknown_subcommand(self, capsys):
        assert run(capsys, "transmogrify")[0] == 2

    def test_threads_flag_accepted(self, tmp_path, capsys):
        out = tmp_path / "t"
        code, _, _ = run(capsys, "gen", "--out", str(out), "--n", "6",
                         "--p", "1", "--ranges", "0.5", "--threads", "1")
        assert code == 0
