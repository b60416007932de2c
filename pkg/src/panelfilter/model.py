"""Panel model and data containers.

A :class:`UnitModel` bundles the simulators and densities of one unit.  All
callbacks are vectorized over particles: states are arrays with a leading
particle axis, and ``params`` is a ``(J, p)`` natural-scale array holding the
(shared, psi_u) sub-vector for each particle.  Callbacks must draw randomness
only from the generator they are handed, so that replaying a stream replays
the computation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .covariates import CovariateTable
from .errors import LayoutError
from .params import ParamLayout, ParamVector
from .rngstream import TAG_SIM, substream, unit_key


@dataclass(frozen=True)
class UnitModel:
    """Dynamics and measurement model of a single panel unit.

    rinit(params, rng) -> states
    rstep(states, n, params, covars, rng) -> states       (one observation interval)
    dmeasure(y, states, n, params, covars) -> log-densities, finite or -inf
    rmeasure(states, n, params, covars, rng) -> simulated observations
    """

    name: str
    rinit: Callable
    rstep: Callable
    dmeasure: Callable
    rmeasure: Callable
    n_obs: int
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if self.n_obs < 1:
            raise LayoutError(f"unit {self.name!r}: n_obs must be >= 1")
        if times.shape != (self.n_obs + 1,):
            raise LayoutError(
                f"unit {self.name!r}: times must hold t_0..t_N, expected length {self.n_obs + 1}"
            )
        if not np.all(np.diff(times) > 0):
            raise LayoutError(f"unit {self.name!r}: observation times must be strictly increasing")
        object.__setattr__(self, "times", times)


@dataclass(frozen=True)
class PanelModel:
    """A collection of dynamically independent units sharing a parameter layout."""

    units: tuple[UnitModel, ...]
    layout: ParamLayout
    covariates: tuple[Optional[CovariateTable], ...] = ()

    def __post_init__(self):
        units = tuple(self.units)
        if len(units) < 1:
            raise LayoutError("a panel needs at least one unit")
        if self.layout.n_units != len(units):
            raise LayoutError(
                f"layout is for {self.layout.n_units} units but the panel has {len(units)}"
            )
        covs = tuple(self.covariates) if self.covariates else (None,) * len(units)
        if len(covs) != len(units):
            raise LayoutError("covariates must be given for all units or none")
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "covariates", covs)

    @property
    def n_units(self) -> int:
        return len(self.units)

    def unit_names(self) -> tuple[str, ...]:
        return tuple(u.name for u in self.units)


@dataclass(frozen=True)
class PanelData:
    """Per-unit observation sequences with their time stamps."""

    units: tuple[str, ...]
    observations: tuple[np.ndarray, ...]
    times: tuple[np.ndarray, ...]

    def __post_init__(self):
        units = tuple(self.units)
        obs = tuple(np.asarray(y, dtype=float) for y in self.observations)
        times = tuple(np.asarray(t, dtype=float) for t in self.times)
        if not (len(units) == len(obs) == len(times)):
            raise LayoutError("units, observations and times must have equal lengths")
        for name, y, t in zip(units, obs, times):
            if y.shape[0] != t.shape[0]:
                raise LayoutError(f"unit {name!r}: observation/time lengths differ")
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "times", times)

    @property
    def n_units(self) -> int:
        return len(self.units)

    def n_obs(self, u: int) -> int:
        return self.observations[u].shape[0]

    def check_against(self, model: PanelModel) -> None:
        if self.n_units != model.n_units:
            raise LayoutError("data and model have different unit counts")
        for u, unit in enumerate(model.units):
            if self.n_obs(u) != unit.n_obs:
                raise LayoutError(
                    f"unit {unit.name!r}: data has {self.n_obs(u)} observations, model expects {unit.n_obs}"
                )

    # -- CSV round trip ------------------------------------------------------

    def to_csv(self, path, obs_names: Optional[Sequence[str]] = None) -> None:
        """Write ``unit,time,<obs...>`` rows (UTF-8, '.' decimal, header row)."""
        if len(set(self.units)) != len(self.units):
            raise LayoutError("CSV export needs unique unit names")
        width = 1 if self.observations[0].ndim == 1 else self.observations[0].shape[1]
        if obs_names is None:
            obs_names = ["y"] if width == 1 else [f"y{i + 1}" for i in range(width)]
        if len(obs_names) != width:
            raise LayoutError(f"expected {width} observation column names")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["unit", "time"] + list(obs_names))
            for name, ys, ts in zip(self.units, self.observations, self.times):
                for t, y in zip(ts, ys):
                    row = [name, repr(float(t))]
                    row += [repr(float(v)) for v in (np.atleast_1d(y))]
                    writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "PanelData":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or reader.fieldnames[:2] != ["unit", "time"]:
                raise LayoutError("panel data CSV must start with 'unit,time' columns")
            obs_cols = reader.fieldnames[2:]
            if not obs_cols:
                raise LayoutError("panel data CSV has no observation columns")
            units: list[str] = []
            per_unit: dict[str, list] = {}
            for row in reader:
                name = row["unit"]
                if name not in per_unit:
                    per_unit[name] = []
                    units.append(name)
                per_unit[name].append(
                    (float(row["time"]), [float(row[c]) for c in obs_cols])
                )
        obs, times = [], []
        for name in units:
            rows = per_unit[name]
            times.append(np.array([r[0] for r in rows]))
            y = np.array([r[1] for r in rows])
            obs.append(y[:, 0] if y.shape[1] == 1 else y)
        return cls(tuple(units), tuple(obs), tuple(times))


def simulate_panel(model: PanelModel, params: ParamVector, seed: int) -> PanelData:
    """Draw one panel dataset from the model; a pure function of (model, params, seed)."""
    if params.scale != "natural":
        raise LayoutError("simulate_panel expects natural-scale parameters")
    observations, times = [], []
    for u, unit in enumerate(model.units):
        ukey = unit_key(unit.name)
        theta = params.unit_params(u)[None, :]
        covars = model.covariates[u]
        states = unit.rinit(theta, substream(seed, TAG_SIM, ukey, 0))
        ys = []
        for n in range(1, unit.n_obs + 1):
            rng = substream(seed, TAG_SIM, ukey, n)
            states = unit.rstep(states, n, theta, covars, rng)
            y = np.asarray(unit.rmeasure(states, n, theta, covars, rng))
            ys.append(y[0])
        y_arr = np.asarray(ys)
        observations.append(y_arr[:, 0] if (y_arr.ndim == 2 and y_arr.shape[1] == 1) else y_arr)
        times.append(unit.times[1:].copy())
    return PanelData(model.unit_names(), tuple(observations), tuple(times))
