"""Covariate tables sampled on a time grid, with interpolated lookup."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import LayoutError

INTERPOLATION_MODES = ("constant", "linear", "cubic-spline")


@dataclass(frozen=True)
class CovariateTable:
    """Named covariate columns on a strictly increasing time grid.

    Lookups clamp the query time to the grid range, so values beyond the ends
    are held constant at the end values rather than extrapolated.
    """

    times: np.ndarray
    columns: Mapping[str, np.ndarray]
    interpolation: str = "linear"
    _splines: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 1:
            raise LayoutError("covariate time grid must be a non-empty 1-d array")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise LayoutError("covariate time grid must be strictly increasing")
        if self.interpolation not in INTERPOLATION_MODES:
            raise LayoutError(f"unknown interpolation mode {self.interpolation!r}")
        cols = {}
        for name, vals in self.columns.items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != times.shape:
                raise LayoutError(f"covariate column {name!r} length does not match the time grid")
            cols[name] = vals
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "columns", cols)

    def lookup(self, name: str, t):
        """Value of column ``name`` at time(s) ``t``, clamped to the grid range."""
        if name not in self.columns:
            raise LayoutError(f"unknown covariate {name!r}")
        vals = self.columns[name]
        t = np.clip(np.asarray(t, dtype=float), self.times[0], self.times[-1])
        if self.times.size == 1:
            out = np.full(t.shape, vals[0])
            return float(out) if out.ndim == 0 else out
        if self.interpolation == "constant":
            ix = np.searchsorted(self.times, t, side="right") - 1
            out = vals[np.clip(ix, 0, self.times.size - 1)]
        elif self.interpolation == "linear":
            out = np.interp(t, self.times, vals)
        else:
            out = self._spline(name)(t)
        return float(out) if out.ndim == 0 else out

    def integrate(self, name: str, lo: float, hi: float, n_grid: int = 366) -> float:
        """Integral of column ``name`` over [lo, hi] (trapezoid on a dense grid)."""
        if hi <= lo:
            return 0.0
        grid = np.linspace(lo, hi, n_grid)
        return float(np.trapezoid(self.lookup(name, grid), grid))

    def _spline(self, name: str) -> CubicSpline:
        if name not in self._splines:
            self._splines[name] = CubicSpline(self.times, self.columns[name])
        return self._splines[name]


def load_covariates_csv(path, interpolation: str = "linear",
                        time_col: str = "time") -> dict[str, CovariateTable]:
    """Read ``unit,<time_col>,<covariate...>`` rows into one table per unit."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "unit" not in reader.fieldnames \
                or time_col not in reader.fieldnames:
            raise LayoutError(f"covariate CSV must have 'unit' and {time_col!r} columns")
        value_cols = [c for c in reader.fieldnames if c not in ("unit", time_col)]
        per_unit: dict[str, dict[str, list[float]]] = {}
        for row in reader:
            rec = per_unit.setdefault(row["unit"], {time_col: [], **{c: [] for c in value_cols}})
            rec[time_col].append(float(row[time_col]))
            for c in value_cols:
                rec[c].append(float(row[c]))
    out = {}
    for unit, rec in per_unit.items():
        out[unit] = CovariateTable(
            times=np.asarray(rec[time_col]),
            columns={c: np.asarray(rec[c]) for c in value_cols},
            interpolation=interpolation,
        )
    return out


def save_covariates_csv(tables: Mapping[str, CovariateTable], path,
                        time_col: str = "time") -> None:
    names = None
    for unit, table in tables.items():
        cols = sorted(table.columns)
        if names is None:
            names = cols
        elif cols != names:
            raise LayoutError("all units must share the same covariate columns")
    if names is None:
        raise LayoutError("no covariate tables to save")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", time_col] + names)
        for unit, table in tables.items():
            for i, t in enumerate(table.times):
                writer.writerow([unit, repr(float(t))] +
                                [repr(float(table.columns[c][i])) for c in names])
