"""Iterated filtering for panel models: the unit-looping perturbed filter.

One full iteration visits every unit in turn.  A unit's pass perturbs the
active parameter coordinates, re-initializes that unit's latent particles,
and runs a perturbed bootstrap filter over the unit's data.  At every
resampling step the latent particles and the (shared, psi_u) coordinates
follow the resampling indices; what happens to the other units' parameters
is the algorithmic switch:

* ``marginalize=False``: the full parameter vector is reindexed, so psi_{-u}
  coordinates are resampled by weights that carry no information about them.
* ``marginalize=True``: psi_{-u} coordinates are left untouched, which keeps
  their particle representation at full diversity during unit u's pass.

Perturbations only ever touch the shared block and the active unit's block;
initial-value parameters are perturbed once per pass, before the unit's
first observation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, FilteringError, LayoutError, ModelError
from .model import PanelData, PanelModel
from .params import ESTIMATION, NATURAL, ParamLayout, ParamVector
from .pfilter import _step_weights, panel_loglik, systematic_resample
from .rngstream import (TAG_EVAL, TAG_HYPERCUBE, TAG_MIF, TAG_ORDER, TAG_START,
                        derive_seed, substream, unit_key)


@dataclass(frozen=True)
class CoolingSchedule:
    """Multiplier applied to the perturbation scale at iteration m (1-based).

    ``geometric``: factor**(m-1); the default factor halves the scale over 50
    iterations.  ``polynomial``: m**(-(1+delta)/2), so the perturbation
    variance decays like 1/m**(1+delta), within the o(1/m) regime required
    for the perturbed cloning map to converge.
    """

    kind: str = "geometric"
    factor: float = 0.5 ** (1.0 / 50.0)
    delta: float = 0.5

    def __post_init__(self):
        if self.kind not in ("geometric", "polynomial"):
            raise ConfigError(f"unknown cooling kind {self.kind!r}")
        if self.kind == "geometric" and not 0 < self.factor <= 1:
            raise ConfigError("geometric cooling factor must lie in (0, 1]")
        if self.kind == "polynomial" and self.delta <= 0:
            raise ConfigError("polynomial cooling needs delta > 0")

    def scale(self, m: int) -> float:
        if m < 1:
            raise ConfigError("iteration index is 1-based")
        if self.kind == "geometric":
            return self.factor ** (m - 1)
        return m ** (-(1.0 + self.delta) / 2.0)


class PerturbKernel:
    """Per-coordinate perturbation standard deviations with activity masks.

    At sub-iteration u, shared and psi_u dynamic coordinates are active at
    every step; initial-value coordinates are active only before the first
    observation of their own unit's pass; psi_{-u} coordinates are never
    active.  Redundant simplex slots are never perturbed.
    """

    def __init__(self, layout: ParamLayout, sd: np.ndarray):
        sd = np.asarray(sd, dtype=float)
        if sd.shape != (layout.dim,):
            raise LayoutError("sd must have one entry per flat coordinate")
        if np.any(sd < 0):
            raise ConfigError("perturbation standard deviations must be >= 0")
        self.layout = layout
        self.sd = sd.copy()
        self.sd[~layout.estimable_mask()] = 0.0
        ivp = layout.ivp_mask()
        self._start: list[np.ndarray] = []
        self._steady: list[np.ndarray] = []
        for u in range(layout.n_units):
            cols = layout.unit_indices(u)
            live = cols[self.sd[cols] > 0]
            self._start.append(live)
            self._steady.append(live[~ivp[live]])

    @classmethod
    def from_defaults(cls, layout: ParamLayout, sigma_dyn: float = 0.02,
                      sigma_ivp: float = 0.1,
                      overrides: Optional[Mapping[str, float]] = None) -> "PerturbKernel":
        ivp = layout.ivp_mask()
        sd = np.where(ivp, sigma_ivp, sigma_dyn).astype(float)
        if overrides:
            specs = {s.name for s in layout.shared} | {s.name for s in layout.specific}
            flat = layout.names
            for name, val in overrides.items():
                if name in specs:
                    for i, spec in enumerate(_flat_spec_names(layout)):
                        if spec == name:
                            sd[i] = val
                elif name in flat:
                    sd[flat.index(name)] = val
                else:
                    raise ConfigError(f"sigma override for unknown parameter {name!r}")
        return cls(layout, sd)

    def active_indices(self, u: int, at_start: bool) -> np.ndarray:
        return self._start[u] if at_start else self._steady[u]


def _flat_spec_names(layout: ParamLayout) -> list[str]:
    names = [s.name for s in layout.shared]
    for _ in range(layout.n_units):
        names.extend(s.name for s in layout.specific)
    return names


@dataclass(frozen=True)
class MifConfig:
    """Knobs of one iterated-filtering run."""

    M: int
    J: int
    marginalize: bool = True
    cooling: CoolingSchedule = field(default_factory=CoolingSchedule)
    sigma_dyn: float = 0.02
    sigma_ivp: float = 0.1
    sigma_overrides: Optional[Mapping[str, float]] = None
    eval_schedule: tuple[int, ...] = ()
    eval_J: int = 1000
    eval_reps: int = 3
    shuffle_units: bool = False
    track_diagnostics: bool = False
    track_unique_params: bool = False
    max_failure_fraction: float = 0.5

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.J < 2:
            raise ConfigError("J must be >= 2")
        if self.sigma_dyn < 0 or self.sigma_ivp < 0:
            raise ConfigError("sigma_init values must be >= 0")
        sched = tuple(int(m) for m in self.eval_schedule)
        if any(m < 1 or m > self.M for m in sched):
            raise ConfigError("eval_schedule entries must lie in 1..M")
        object.__setattr__(self, "eval_schedule", sched)


@dataclass
class PassRecord:
    """Diagnostics of one unit pass inside one iteration."""

    m: int
    unit: str
    cond_logliks: np.ndarray
    ess: np.ndarray
    failures: np.ndarray
    unique_ancestors: Optional[np.ndarray] = None
    unique_counts: Optional[np.ndarray] = None   # (N_u + 1, dim), row 0 after h_{u,0}


@dataclass
class FitResult:
    """Parameter swarm trajectory of one iterated-filtering run."""

    layout: ParamLayout
    marginalize: bool
    final_swarm: np.ndarray               # (J, dim), natural scale
    means: np.ndarray                     # (M+1, dim) natural-scale swarm means, row 0 = start
    sds: np.ndarray                       # (M+1, dim) estimation-scale swarm sds
    loglik_trace: list                    # (m, loglik, se) at eval_schedule points
    diagnostics: Optional[list] = None    # PassRecord list
    swarm_snapshots: dict = field(default_factory=dict)  # m -> (J, dim) natural swarm
    n_failures: int = 0

    @property
    def final_mean(self) -> ParamVector:
        return ParamVector(self.layout, self.means[-1], NATURAL)

    @property
    def final_loglik(self):
        return self.loglik_trace[-1][1] if self.loglik_trace else math.nan

    def trace_rows(self) -> list:
        """`iteration,param,mean,sd` rows, plus `panel_loglik` rows when evaluated."""
        rows = []
        names = self.layout.names
        for m in range(self.means.shape[0]):
            for i, name in enumerate(names):
                rows.append({"iteration": m, "param": name,
                             "mean": self.means[m, i], "sd": self.sds[m, i]})
        for m, ll, se in self.loglik_trace:
            rows.append({"iteration": m, "param": "panel_loglik", "mean": ll, "sd": se})
        return rows

    def trace_to_csv(self, path) -> None:
        """Write the iteration trace (parameter stats + loglik evaluations)."""
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "param", "mean", "sd"])
            for row in self.trace_rows():
                writer.writerow([row["iteration"], row["param"],
                                 repr(float(row["mean"])), repr(float(row["sd"]))])


class _ColsConverter:
    """Estimation -> natural conversion restricted to one unit's columns."""

    def __init__(self, layout: ParamLayout, cols: np.ndarray):
        trs = layout.flat_transforms()
        self.log_ix = np.array([i for i, c in enumerate(cols) if trs[c] == "log"], dtype=np.intp)
        self.logit_ix = np.array([i for i, c in enumerate(cols) if trs[c] == "logit"], dtype=np.intp)
        pos = {int(c): i for i, c in enumerate(cols)}
        self.blocks = [(pos[start], length) for start, length in layout.simplex_blocks()
                       if start in pos and (start + length - 1) in pos]

    def natural(self, sub: np.ndarray) -> np.ndarray:
        out = sub.copy()
        if self.log_ix.size:
            out[:, self.log_ix] = np.exp(sub[:, self.log_ix])
        if self.logit_ix.size:
            out[:, self.logit_ix] = 1.0 / (1.0 + np.exp(-sub[:, self.logit_ix]))
        for start, length in self.blocks:
            e = np.exp(sub[:, start:start + length - 1])
            denom = 1.0 + e.sum(axis=1, keepdims=True)
            out[:, start:start + length - 1] = e / denom
            out[:, start + length - 1] = denom[:, 0] ** -1
        return out


def _count_unique(swarm: np.ndarray) -> np.ndarray:
    return np.array([np.unique(swarm[:, i]).size for i in range(swarm.shape[1])],
                    dtype=np.intp)


def perturb_swarm(swarm: np.ndarray, kernel: PerturbKernel, scale: float, u: int,
                  at_start: bool, rng: np.random.Generator) -> np.ndarray:
    """Add Gaussian noise to the active coordinates of an estimation-scale swarm.

    Mutates ``swarm`` in place and returns it.  Inactive coordinates are
    bit-identical afterwards, and no draws are consumed for them; with a zero
    scale nothing is drawn at all.
    """
    active = kernel.active_indices(u, at_start=at_start)
    if active.size and scale > 0:
        swarm[:, active] += (scale * kernel.sd[active]) * \
            rng.standard_normal((swarm.shape[0], active.size))
    return swarm


def run_unit_pass(model: PanelModel, data: PanelData, swarm: np.ndarray, u: int,
                  m: int, kernel: PerturbKernel, scale: float, marginalize: bool,
                  seed: int, track_ancestry: bool = False,
                  track_unique: bool = False,
                  swap_buffer: Optional[np.ndarray] = None):
    """One unit sub-iteration of the iterated filter, mutating ``swarm`` in place.

    ``swarm`` is the (J, dim) estimation-scale parameter swarm.  Returns
    ``(swarm, spare, record)``: full-vector resampling ping-pongs between
    ``swarm`` and ``swap_buffer``, so the caller must continue with the
    returned ``swarm`` and reuse ``spare`` (never aliased to it) as the next
    buffer.
    """
    layout = model.layout
    unit = model.units[u]
    covars = model.covariates[u]
    ys = data.observations[u]
    J = swarm.shape[0]
    ukey = unit_key(unit.name)
    cols = layout.unit_indices(u)
    conv = _ColsConverter(layout, cols)

    n_obs = unit.n_obs
    cond = np.empty(n_obs)
    ess = np.empty(n_obs)
    failures = np.zeros(n_obs, dtype=bool)
    uniq_anc = np.empty(n_obs, dtype=np.intp) if track_ancestry else None
    ancestors = np.arange(J, dtype=np.intp) if track_ancestry else None
    uniq_counts = np.empty((n_obs + 1, layout.dim), dtype=np.intp) if track_unique else None

    rng = substream(seed, TAG_MIF, m, ukey, 0)
    perturb_swarm(swarm, kernel, scale, u, True, rng)
    if track_unique:
        uniq_counts[0] = _count_unique(swarm)
    unit_nat = conv.natural(swarm[:, cols])
    states = unit.rinit(unit_nat, rng)

    for n in range(1, n_obs + 1):
        rng = substream(seed, TAG_MIF, m, ukey, n)
        perturb_swarm(swarm, kernel, scale, u, False, rng)
        unit_nat = conv.natural(swarm[:, cols])
        states = unit.rstep(states, n, unit_nat, covars, rng)
        logw = np.asarray(unit.dmeasure(ys[n - 1], states, n, unit_nat, covars), dtype=float)
        if logw.shape != (J,):
            raise ModelError(f"unit {unit.name!r}: dmeasure must return one value per particle")
        w, cond_n, ess_n, failed = _step_weights(logw, unit.name, n)
        cond[n - 1] = cond_n
        ess[n - 1] = ess_n
        failures[n - 1] = failed
        if not failed:
            k = systematic_resample(w, rng)
            states = np.take(states, k, axis=0)
            if marginalize:
                swarm[:, cols] = swarm[np.ix_(k, cols)]
            else:
                if swap_buffer is None:
                    swarm = swarm[k]
                else:
                    np.take(swarm, k, axis=0, out=swap_buffer)
                    swarm, swap_buffer = swap_buffer, swarm
            if track_ancestry:
                ancestors = ancestors[k]
        if track_ancestry:
            uniq_anc[n - 1] = np.unique(ancestors).size
        if track_unique:
            uniq_counts[n] = _count_unique(swarm)

    record = PassRecord(m=m, unit=unit.name, cond_logliks=cond, ess=ess,
                        failures=failures, unique_ancestors=uniq_anc,
                        unique_counts=uniq_counts)
    return swarm, swap_buffer, record


def _initial_swarm(layout: ParamLayout, start, J: int) -> np.ndarray:
    """(J, dim) estimation-scale swarm from a start vector or explicit swarm."""
    if isinstance(start, ParamVector):
        est = start.values if start.scale == ESTIMATION else layout.to_estimation(start.values)
        return np.tile(est, (J, 1))
    arr = np.asarray(start, dtype=float)
    if arr.ndim != 2 or arr.shape != (J, layout.dim):
        raise LayoutError(f"start swarm must have shape ({J}, {layout.dim})")
    return layout.to_estimation(arr)


def mif_panel(model: PanelModel, data: PanelData, start, config: MifConfig,
              seed: int = 0) -> FitResult:
    """Run the panel iterated filter (marginalized or not) from ``start``.

    ``start`` is a natural-scale :class:`ParamVector` (all particles start
    there; the first perturbation diversifies them) or a ``(J, dim)``
    natural-scale swarm array.
    """
    data.check_against(model)
    layout = model.layout
    kernel = PerturbKernel.from_defaults(layout, config.sigma_dyn, config.sigma_ivp,
                                         config.sigma_overrides)
    swarm = _initial_swarm(layout, start, config.J)
    swap = np.empty_like(swarm) if not config.marginalize else None

    steps_per_iter = sum(unit.n_obs for unit in model.units)
    means = np.empty((config.M + 1, layout.dim))
    sds = np.empty((config.M + 1, layout.dim))
    means[0] = layout.from_estimation(swarm).mean(axis=0)
    sds[0] = swarm.std(axis=0)
    loglik_trace: list = []
    diagnostics: Optional[list] = [] if (config.track_diagnostics or
                                         config.track_unique_params) else None
    snapshots: dict = {}
    total_failures = 0

    for m in range(1, config.M + 1):
        scale = config.cooling.scale(m)
        if config.shuffle_units:
            order = substream(seed, TAG_ORDER, m).permutation(model.n_units)
        else:
            order = range(model.n_units)
        iter_failures = 0
        for u in order:
            swarm, swap, record = run_unit_pass(
                model, data, swarm, u, m, kernel, scale, config.marginalize,
                seed, track_ancestry=config.track_diagnostics,
                track_unique=config.track_unique_params, swap_buffer=swap)
            iter_failures += int(record.failures.sum())
            if diagnostics is not None:
                diagnostics.append(record)
        total_failures += iter_failures
        if iter_failures > config.max_failure_fraction * steps_per_iter:
            raise FilteringError(
                f"iteration {m}: {iter_failures}/{steps_per_iter} filtering steps failed"
            )
        natural = layout.from_estimation(swarm)
        means[m] = natural.mean(axis=0)
        sds[m] = swarm.std(axis=0)
        if m in config.eval_schedule:
            theta = ParamVector(layout, means[m], NATURAL)
            res = panel_loglik(model, data, theta, config.eval_J, config.eval_reps,
                               seed=derive_seed(seed, TAG_EVAL, m))
            loglik_trace.append((m, res.loglik, res.se))
            snapshots[m] = natural

    return FitResult(layout=layout, marginalize=config.marginalize,
                     final_swarm=layout.from_estimation(swarm), means=means, sds=sds,
                     loglik_trace=loglik_trace, diagnostics=diagnostics,
                     swarm_snapshots=snapshots, n_failures=total_failures)


def unique_particle_counts(fit: FitResult) -> dict:
    """Per-(parameter, unit, step) distinct-value counts from a tracked run.

    Returns ``{(m, unit_name): counts}`` where ``counts`` has shape
    ``(N_u + 1, dim)``; row 0 is taken right after off-data perturbation at
    the start of the pass, row n after time step n.
    """
    if fit.diagnostics is None:
        raise ConfigError("unique particle counts need a run with track_unique_params=True")
    out = {}
    for record in fit.diagnostics:
        if record.unique_counts is None:
            raise ConfigError("unique particle counts need a run with track_unique_params=True")
        out[(record.m, record.unit)] = record.unique_counts
    return out


def sample_hypercube_starts(center: ParamVector, count: int, seed: int = 0,
                            lower=None, upper=None) -> list:
    """Uniform natural-scale draws from a per-coordinate box around ``center``.

    Without explicit bounds the box is [center/2, 2*center], which requires a
    strictly positive center.  Coordinates with ``lower == upper`` stay fixed.
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    layout = center.layout
    c = center.values
    if lower is None or upper is None:
        if np.any(c <= 0):
            raise ConfigError(
                "default /2, x2 hypercube bounds need a strictly positive center; "
                "pass explicit lower/upper for other parameters"
            )
    lo = c / 2.0 if lower is None else np.broadcast_to(np.asarray(lower, float), c.shape).copy()
    hi = c * 2.0 if upper is None else np.broadcast_to(np.asarray(upper, float), c.shape).copy()
    if np.any(lo > hi):
        bad = layout.names[int(np.nonzero(lo > hi)[0][0])]
        raise ConfigError(f"lower bound exceeds upper bound for parameter {bad!r}")
    rng = substream(seed, TAG_HYPERCUBE)
    draws = rng.uniform(lo, hi, size=(count, layout.dim))
    draws[:, lo == hi] = lo[lo == hi]
    return [ParamVector(layout, row, NATURAL) for row in draws]


@dataclass
class MultistartResult:
    """Batch of independent iterated-filtering runs from different starts."""

    fits: list                       # FitResult or None per start
    errors: dict                     # start index -> error message
    final_logliks: np.ndarray        # (n_starts,) NaN where unavailable

    def summary(self) -> dict:
        ok = self.final_logliks[np.isfinite(self.final_logliks)]
        if ok.size == 0:
            return {"n_ok": 0, "max": math.nan, "median": math.nan, "p10": math.nan}
        return {
            "n_ok": int(ok.size),
            "max": float(np.max(ok)),
            "median": float(np.median(ok)),
            "p10": float(np.percentile(ok, 10)),
        }


def run_multistart(model: PanelModel, data: PanelData, starts: Sequence,
                   config: MifConfig, seed: int = 0, threads: int = 1,
                   final_eval=None) -> MultistartResult:
    """Independent ``mif_panel`` runs, one per start, with matched derived seeds.

    ``final_eval(fit) -> loglik`` overrides how the summary log-likelihood of
    a run is computed; by default the last entry of the run's evaluation
    trace is used.  Individual run failures are recorded, not fatal.
    """
    if not starts:
        raise ConfigError("at least one start is required")
    n = len(starts)
    fits: list = [None] * n
    errors: dict = {}

    def _one(i: int):
        return mif_panel(model, data, starts[i], config,
                         seed=derive_seed(seed, TAG_START, i))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(_one, i): i for i in range(n)}
            for fut in futures:
                i = futures[fut]
                try:
                    fits[i] = fut.result()
                except Exception as exc:   # noqa: BLE001 - recorded per run
                    errors[i] = f"{type(exc).__name__}: {exc}"
    else:
        for i in range(n):
            try:
                fits[i] = _one(i)
            except Exception as exc:       # noqa: BLE001 - recorded per run
                errors[i] = f"{type(exc).__name__}: {exc}"

    finals = np.full(n, math.nan)
    for i, fit in enumerate(fits):
        if fit is None:
            continue
        finals[i] = final_eval(fit) if final_eval is not None else fit.final_loglik
    return MultistartResult(fits=fits, errors=errors, final_logliks=finals)
