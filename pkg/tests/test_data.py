import numpy as np
import pytest

from curveblocks.data import CellCurve, CurveGrid, load_csv, preprocess, save_csv
from curveblocks.errors import DataError


def small_grid():
    times = np.array([0.0, 0.5, 1.0])
    values = [
        np.array([[1.0, 2.0, 3.0], [4.0, np.nan, 6.0]]),
        np.array([[0.5, 1.5, 2.5], [3.5, 4.5, 5.5]]),
    ]
    return CurveGrid(["r1", "r2"], ["c1", "c2"], [times, times], values)


class TestCellCurve:
    def test_mask_and_counts(self):
        c = CellCurve([0.0, 1.0, 2.0], [1.0, np.nan, 3.0])
        assert c.n_observed == 2
        np.testing.assert_array_equal(c.observed_mask, [True, False, True])

    def test_requires_observation(self):
        with pytest.raises(DataError):
            CellCurve([0.0, 1.0], [np.nan, np.nan])

    def test_requires_increasing_times(self):
        with pytest.raises(DataError):
            CellCurve([0.0, 0.0], [1.0, 2.0])


class TestCurveGrid:
    def test_cell_access(self):
        grid = small_grid()
        cell = grid.cell(0, 1)
        assert cell.n_observed == 2
        np.testing.assert_array_equal(cell.times, [0.0, 0.5, 1.0])

    def test_empty_cell_is_none(self):
        times = np.array([0.0, 1.0])
        values = [
            np.array([[1.0, 2.0], [np.nan, np.nan]]),
            np.array([[1.0, 2.0], [3.0, 4.0]]),
        ]
        grid = CurveGrid(["a", "b"], ["x", "y"], [times, times], values)
        assert grid.cell(0, 1) is None

    def test_column_without_observations_rejected(self):
        times = np.array([0.0, 1.0])
        values = [np.array([[1.0, 2.0], [np.nan, np.nan]])]
        with pytest.raises(DataError):
            CurveGrid(["a"], ["x", "y"], [times], values)

    def test_duplicate_ids_rejected(self):
        times = np.array([0.0, 1.0])
        values = [np.full((1, 2), 1.0), np.full((1, 2), 2.0)]
        with pytest.raises(DataError):
            CurveGrid(["a", "a"], ["x"], [times, times], values)


class TestCsvRoundTrip:
    def test_counting(self, tmp_path):
        path = tmp_path / "grid.csv"
        lines = ["row_id,col_id,t,value"]
        for r in ("r1", "r2"):
            for c in ("c1", "c2"):
                for t in (0.0, 0.5, 1.0):
                    lines.append(f"{r},{c},{t!r},{1.25!r}")
        path.write_text("\n".join(lines) + "\n")
        grid = load_csv(path)
        assert (grid.n, grid.d) == (2, 2)
        assert grid.total_observations() == 12

    def test_na_is_missing(self, tmp_path):
        path = tmp_path / "grid.csv"
        path.write_text(
            "row_id,col_id,t,value\n"
            "r1,c1,0.0,1.0\nr1,c1,0.5,NA\nr1,c1,1.0,3.0\n"
            "r1,c2,0.0,1.0\nr1,c2,0.5,2.0\nr1,c2,1.0,3.0\n"
        )
        grid = load_csv(path)
        assert grid.cell(0, 0).n_observed == 2

    def test_duplicate_triple_rejected_with_line(self, tmp_path):
        path = tmp_path / "grid.csv"
        path.write_text("row_id,col_id,t,value\nr1,c1,0.0,1.0\nr1,c1,0.0,2.0\n")
        with pytest.raises(DataError, match=":3"):
            load_csv(path)

    def test_bad_value_rejected_with_line(self, tmp_path):
        path = tmp_path / "grid.csv"
        path.write_text("row_id,col_id,t,value\nr1,c1,0.0,oops\n")
        with pytest.raises(DataError, match=":2"):
            load_csv(path)

    def test_round_trip_byte_identical(self, tmp_path):
        grid = small_grid()
        first = tmp_path / "a.csv"
        second = tmp_path / "b.csv"
        save_csv(grid, first)
        save_csv(load_csv(first), second)
        assert first.read_bytes() == second.read_bytes()


class TestPreprocess:
    def test_standardize_then_identity(self):
        grid = small_grid()
        once = preprocess(grid, ["standardize"])
        twice = preprocess(once, ["standardize"])
        for a, b in zip(once.values, twice.values):
            np.testing.assert_allclose(
                a[np.isfinite(a)], b[np.isfinite(b)], atol=1e-10
            )

    def test_standardize_moments(self):
        grid = preprocess(small_grid(), ["standardize"])
        pooled = np.concatenate([v[np.isfinite(v)] for v in grid.values])
        assert abs(pooled.mean()) < 1e-12
        assert abs(pooled.std(ddof=1) - 1.0) < 1e-12

    def test_aggregate_weekly(self):
        times = np.arange(28, dtype=float)
        vals = np.arange(28, dtype=float)
        grid = CurveGrid(["r1"], ["c1"], [times], [vals.reshape(1, -1)])
        out = preprocess(grid, ["aggregate:7"])
        assert out.times[0].size == 4
        np.testing.assert_allclose(out.times[0], [3.0, 10.0, 17.0, 24.0])
        np.testing.assert_allclose(out.values[0][0], [3.0, 10.0, 17.0, 24.0])

    def test_aggregate_skips_missing(self):
        times = np.arange(4, dtype=float)
        vals = np.array([[1.0, np.nan, 3.0, 5.0]])
        grid = CurveGrid(["r1"], ["c1"], [times], [vals])
        out = preprocess(grid, ["aggregate:2"])
        np.testing.assert_allclose(out.values[0][0], [1.0, 4.0])

    def test_log_requires_positive(self):
        times = np.array([0.0, 1.0])
        vals = [np.array([[0.0, 2.0]])]
        grid = CurveGrid(["r1"], ["c1"], [times], vals)
        with pytest.raises(DataError, match="r1"):
            preprocess(grid, ["log"])

    def test_log_and_log1p_values(self):
        grid = small_grid()
        out = preprocess(grid, ["log"])
        np.testing.assert_allclose(out.values[0][0], np.log(grid.values[0][0]))
        out1p = preprocess(grid, ["log1p"])
        np.testing.assert_allclose(out1p.values[1][1], np.log1p(grid.values[1][1]))

    def test_steps_apply_in_order(self):
        grid = small_grid()
        both = preprocess(grid, ["log", "standardize"])
        manual = preprocess(preprocess(grid, ["log"]), ["standardize"])
        for a, b in zip(both.values, manual.values):
            np.testing.assert_allclose(a[np.isfinite(a)], b[np.isfinite(b)])

    def test_unknown_step_rejected(self):
        with pytest.raises(DataError):
            preprocess(small_grid(), ["sqrt"])
