"""Curve-grid containers, CSV ingestion and preprocessing.

The observed data are an n x d grid of time series: each row (subject) has
its own time grid, each cell holds the values of one variable for one
subject, and missing entries are NaN. On disk a grid is a long-format CSV
with header ``row_id,col_id,t,value``; absent triples and the literal value
``NA`` both mean missing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError

CSV_HEADER = ["row_id", "col_id", "t", "value"]


@dataclass
class CellCurve:
    """One cell's time series; NaN values mark missing observations."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise DataError("curve times and values must be 1-d arrays of equal length")
        if self.times.size == 0 or not np.isfinite(self.values).any():
            raise DataError("curve must contain at least one observed value")
        if np.any(np.diff(self.times) <= 0):
            raise DataError("curve times must be strictly increasing")

    @property
    def observed_mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def n_observed(self) -> int:
        return int(self.observed_mask.sum())


class CurveGrid:
    """n x d grid of curves sharing a per-row time grid.

    ``values[i]`` has shape ``(d, len(times[i]))`` with NaN at missing
    entries. Every row and every column must carry at least one observation;
    individual cells may be entirely missing.
    """

    def __init__(self, row_ids, col_ids, times, values):
        self.row_ids = [str(r) for r in row_ids]
        self.col_ids = [str(c) for c in col_ids]
        self.times = [np.asarray(t, dtype=float) for t in times]
        self.values = [np.asarray(v, dtype=float) for v in values]
        if len(set(self.row_ids)) != len(self.row_ids) or len(set(self.col_ids)) != len(self.col_ids):
            raise DataError("row and column ids must be unique")
        if len(self.times) != self.n or len(self.values) != self.n:
            raise DataError("times and values must have one entry per row")
        for i, (t, v) in enumerate(zip(self.times, self.values)):
            if v.shape != (self.d, t.size):
                raise DataError(f"row {self.row_ids[i]}: values shape {v.shape} != (d, T_i)")
            if np.any(np.diff(t) <= 0):
                raise DataError(f"row {self.row_ids[i]}: times must be strictly increasing")
            if not np.isfinite(v).any():
                raise DataError(f"row {self.row_ids[i]} has no observations")
        col_counts = self.cell_observation_counts().sum(axis=0)
        if np.any(col_counts == 0):
            j = int(np.argmin(col_counts))
            raise DataError(f"column {self.col_ids[j]} has no observations")

    @property
    def n(self) -> int:
        return len(self.row_ids)

    @property
    def d(self) -> int:
        return len(self.col_ids)

    def cell(self, i: int, j: int) -> CellCurve | None:
        """Curve of cell (i, j), or None when the cell is entirely missing."""
        vals = self.values[i][j]
        if not np.isfinite(vals).any():
            return None
        return CellCurve(self.times[i], vals.copy())

    def cell_observation_counts(self) -> np.ndarray:
        counts = np.zeros((self.n, self.d), dtype=int)
        for i in range(self.n):
            counts[i] = np.isfinite(self.values[i]).sum(axis=1)
        return counts

    def observed_time_range(self) -> tuple[float, float]:
        lo = min(t[0] for t in self.times)
        hi = max(t[-1] for t in self.times)
        return float(lo), float(hi)

    def total_observations(self) -> int:
        return int(self.cell_observation_counts().sum())


def _format_float(x: float) -> str:
    return repr(float(x))


def load_csv(path) -> CurveGrid:
    """Read a long-format ``row_id,col_id,t,value`` CSV into a CurveGrid."""
    records = {}
    row_order: list[str] = []
    col_order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise DataError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for lineno, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
            rid, cid, t_str, v_str = fields
            try:
                t = float(t_str)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric time {t_str!r}") from None
            if not np.isfinite(t):
                raise DataError(f"{path}:{lineno}: non-finite time {t_str!r}")
            if v_str == "NA":
                value = None
            else:
                try:
                    value = float(v_str)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric value {v_str!r}") from None
                if not np.isfinite(value):
                    raise DataError(f"{path}:{lineno}: non-finite value {v_str!r}")
            key = (rid, cid, t)
            if key in records:
                raise DataError(f"{path}:{lineno}: duplicate (row, col, time) triple {key}")
            records[key] = value
            if rid not in row_order:
                row_order.append(rid)
            if cid not in col_order:
                col_order.append(cid)
    if not records:
        raise DataError(f"{path}: no data rows")

    col_index = {c: j for j, c in enumerate(col_order)}
    d = len(col_order)
    by_row: dict[str, list[tuple[str, float, float]]] = {r: [] for r in row_order}
    for (rid, cid, t), v in records.items():
        if v is not None:
            by_row[rid].append((cid, t, v))
    row_times: list[np.ndarray] = []
    row_values: list[np.ndarray] = []
    for rid in row_order:
        obs = by_row[rid]
        if not obs:
            raise DataError(f"{path}: row {rid} has no observed values")
        observed = sorted({t for _, t, _ in obs})
        t_arr = np.asarray(observed, dtype=float)
        vals = np.full((d, t_arr.size), np.nan)
        t_pos = {t: k for k, t in enumerate(observed)}
        for cid, t, v in obs:
            vals[col_index[cid], t_pos[t]] = v
        row_times.append(t_arr)
        row_values.append(vals)
    return CurveGrid(row_order, col_order, row_times, row_values)


def save_csv(grid: CurveGrid, path) -> None:
    """Write a grid in canonical order: rows sorted by (row_id, col_id, t)."""
    lines = []
    for i, rid in enumerate(grid.row_ids):
        for j, cid in enumerate(grid.col_ids):
            vals = grid.values[i][j]
            for t, v in zip(grid.times[i], vals):
                if np.isfinite(v):
                    lines.append((rid, cid, t, v))
    lines.sort(key=lambda rec: (rec[0], rec[1], rec[2]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for rid, cid, t, v in lines:
            fh.write(f"{rid},{cid},{_format_float(t)},{_format_float(v)}\n")


def _parse_steps(steps) -> list[tuple[str, int | None]]:
    parsed = []
    for step in steps:
        step = step.strip()
        if step in ("log", "log1p", "standardize"):
            parsed.append((step, None))
        elif step.startswith("aggregate:"):
            try:
                window = int(step.split(":", 1)[1])
            except ValueError:
                raise DataError(f"bad aggregate window in step {step!r}") from None
            if window < 1:
                raise DataError(f"aggregate window must be >= 1, got {window}")
            parsed.append(("aggregate", window))
        else:
            raise DataError(f"unknown preprocessing step {step!r}")
    return parsed


def preprocess(grid: CurveGrid, steps) -> CurveGrid:
    """Apply preprocessing steps in order; returns a new grid.

    Steps: ``log`` (values must be > 0), ``log1p`` (values > -1),
    ``standardize`` (global mean/sd over all observed values) and
    ``aggregate:W`` (consecutive windows of W time points replaced by their
    available-case mean at the window's mean time).
    """
    times = [t.copy() for t in grid.times]
    values = [v.copy() for v in grid.values]
    for name, window in _parse_steps(steps):
        if name in ("log", "log1p"):
            floor = 0.0 if name == "log" else -1.0
            for i, vals in enumerate(values):
                bad = np.isfinite(vals) & (vals <= floor)
                if bad.any():
                    j = int(np.argwhere(bad)[0][0])
                    raise DataError(
                        f"{name} undefined for cell ({grid.row_ids[i]}, {grid.col_ids[j]}):"
                        f" value <= {floor}"
                    )
            fn = np.log if name == "log" else np.log1p
            values = [np.where(np.isfinite(v), fn(np.where(np.isfinite(v), v, 1.0)), np.nan) for v in values]
        elif name == "standardize":
            pooled = np.concatenate([v[np.isfinite(v)] for v in values])
            mean = pooled.mean()
            sd = pooled.std(ddof=1) if pooled.size > 1 else 0.0
            if sd == 0.0:
                raise DataError("standardize undefined: observed values have zero variance")
            values = [(v - mean) / sd for v in values]
        else:  # aggregate
            new_times, new_values = [], []
            for t, vals in zip(times, values):
                starts = range(0, t.size, window)
                agg_t = np.array([t[s : s + window].mean() for s in starts])
                agg_v = np.full((vals.shape[0], agg_t.size), np.nan)
                for k, s in enumerate(starts):
                    chunk = vals[:, s : s + window]
                    seen = np.isfinite(chunk)
                    counts = seen.sum(axis=1)
                    sums = np.where(seen, chunk, 0.0).sum(axis=1)
                    agg_v[:, k] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
                new_times.append(agg_t)
                new_values.append(agg_v)
            times, values = new_times, new_values
    return CurveGrid(grid.row_ids, grid.col_ids, times, values)
