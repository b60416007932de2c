"""Bootstrap particle filter for one unit and the panel likelihood evaluator.

Weights are handled in log space: the conditional log-likelihood of each step
is computed by a max-shifted log-sum-exp, and resampling uses the shifted
weights.  If every particle's measurement density underflows to zero the step
is declared a filtering failure: it contributes ``log(1e-300)`` to the
log-likelihood, the particles are carried forward unresampled, and the
failure is counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import LayoutError, ModelError
from .model import PanelData, PanelModel
from .params import NATURAL, ParamVector
from .rngstream import TAG_PF, TAG_REP, derive_seed, substream, unit_key

# Penalty contributed by a failed step; keeps optimization traces finite.
LOG_FAILURE_FLOOR = math.log(1e-300)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator,
                        n: Optional[int] = None) -> np.ndarray:
    """Systematic (single-uniform, stratified-position) resampling indices.

    Returns ``n`` indices (default ``len(weights)``) with expected counts
    ``n * w_i / sum(w)``; realized counts differ from the expectation by less
    than 1, the defining low-variance property of the scheme.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise LayoutError("weights must be a non-empty 1-d array")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights sum to zero")
    if n is None:
        n = w.size
    cum = np.cumsum(w)
    cum /= cum[-1]
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cum, positions, side="left").astype(np.intp)


@dataclass
class Swarm:
    """Particle state carried through a unit's filtering pass."""

    states: np.ndarray                    # (J, ...) latent particles
    thetas: Optional[np.ndarray] = None   # (J, dim) parameter particles, natural scale
    weights: Optional[np.ndarray] = None  # (J,) shifted weights of the last step
    ancestry: Optional[list] = None       # resampling index arrays per step
    ancestors: Optional[np.ndarray] = None  # surviving original indices

    @property
    def J(self) -> int:
        return self.states.shape[0]


@dataclass
class PfilterResult:
    """Output of one bootstrap filtering pass over a unit's data."""

    unit: str
    loglik: float
    cond_logliks: np.ndarray
    ess: np.ndarray
    failures: np.ndarray
    unique_ancestors: Optional[np.ndarray] = None
    final_swarm: Optional[Swarm] = None

    @property
    def n_failures(self) -> int:
        return int(self.failures.sum())

    def diagnostics_rows(self) -> list:
        """Rows of the per-step diagnostic table (unit, n, cond_loglik, ess, ...)."""
        rows = []
        for n in range(self.cond_logliks.shape[0]):
            rows.append({
                "unit": self.unit,
                "n": n + 1,
                "cond_loglik": self.cond_logliks[n],
                "ess": self.ess[n],
                "unique_ancestors": (self.unique_ancestors[n]
                                     if self.unique_ancestors is not None else ""),
                "failure_flag": int(self.failures[n]),
            })
        return rows


def write_diagnostics_csv(results, path) -> None:
    """Dump per-step diagnostics of one or more filter results to CSV."""
    import csv

    if isinstance(results, PfilterResult):
        results = [results]
    header = ["unit", "n", "cond_loglik", "ess", "unique_ancestors", "failure_flag"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        for res in results:
            for row in res.diagnostics_rows():
                row = dict(row)
                row["cond_loglik"] = repr(float(row["cond_loglik"]))
                row["ess"] = repr(float(row["ess"]))
                writer.writerow(row)


def _step_weights(logw: np.ndarray, unit: str, n: int):
    """(shifted weights or None, conditional log-likelihood, ess, failed)."""
    if np.any(np.isnan(logw)):
        raise ModelError(f"unit {unit!r}: dmeasure returned NaN at step {n}")
    mx = float(np.max(logw))
    if not math.isfinite(mx):
        return None, LOG_FAILURE_FLOOR, 0.0, True
    w = np.exp(logw - mx)
    total = float(w.sum())
    if total <= 0:
        return None, LOG_FAILURE_FLOOR, 0.0, True
    cond = mx + math.log(total / w.size)
    ess = total * total / float((w * w).sum())
    return w, cond, ess, False


def pfilter_unit(model: PanelModel, data: PanelData, u: int,
                 params: Union[ParamVector, np.ndarray], J: Optional[int] = None,
                 seed: int = 0, track_ancestry: bool = False,
                 return_swarm: bool = False) -> PfilterResult:
    """Bootstrap particle filter for unit ``u``.

    ``params`` is either a single natural-scale :class:`ParamVector` (plain
    likelihood evaluation, requires ``J``) or a ``(J, dim)`` natural-scale
    array of per-particle parameter vectors.
    """
    data.check_against(model)
    unit = model.units[u]
    covars = model.covariates[u]
    ys = data.observations[u]
    layout = model.layout
    if isinstance(params, ParamVector):
        if params.scale != NATURAL:
            raise LayoutError("pfilter_unit expects natural-scale parameters")
        if J is None or J < 2:
            raise LayoutError("J must be >= 2")
        thetas = np.broadcast_to(params.values, (J, layout.dim))
    else:
        thetas = np.asarray(params, dtype=float)
        if thetas.ndim != 2 or thetas.shape[1] != layout.dim:
            raise LayoutError("per-particle parameters must have shape (J, dim)")
        if J is not None and J != thetas.shape[0]:
            raise LayoutError("J disagrees with the parameter swarm size")
        J = thetas.shape[0]
        if J < 2:
            raise LayoutError("J must be >= 2")
    unit_thetas = thetas[:, layout.unit_indices(u)]

    ukey = unit_key(unit.name)
    states = unit.rinit(unit_thetas, substream(seed, TAG_PF, ukey, 0))
    n_obs = unit.n_obs
    cond = np.empty(n_obs)
    ess = np.empty(n_obs)
    failures = np.zeros(n_obs, dtype=bool)
    uniq = np.empty(n_obs, dtype=np.intp) if track_ancestry else None
    ancestors = np.arange(J, dtype=np.intp) if track_ancestry else None
    ancestry = [] if track_ancestry else None

    for n in range(1, n_obs + 1):
        rng = substream(seed, TAG_PF, ukey, n)
        states = unit.rstep(states, n, unit_thetas, covars, rng)
        logw = np.asarray(unit.dmeasure(ys[n - 1], states, n, unit_thetas, covars), dtype=float)
        if logw.shape != (J,):
            raise ModelError(f"unit {unit.name!r}: dmeasure must return one value per particle")
        w, cond_n, ess_n, failed = _step_weights(logw, unit.name, n)
        cond[n - 1] = cond_n
        ess[n - 1] = ess_n
        failures[n - 1] = failed
        if not failed:
            k = systematic_resample(w, rng)
            states = np.take(states, k, axis=0)
            if track_ancestry:
                ancestors = ancestors[k]
                ancestry.append(k)
        elif track_ancestry:
            ancestry.append(None)
        if track_ancestry:
            uniq[n - 1] = np.unique(ancestors).size

    result = PfilterResult(
        unit=unit.name,
        loglik=float(cond.sum()),
        cond_logliks=cond,
        ess=ess,
        failures=failures,
        unique_ancestors=uniq,
    )
    if return_swarm:
        result.final_swarm = Swarm(states=states, thetas=np.array(thetas),
                                   ancestry=ancestry, ancestors=ancestors)
    return result


def logmeanexp(values: np.ndarray):
    """log of the mean of exp(values), with a delta-method standard error.

    The standard error is NaN for a single replicate.
    """
    values = np.asarray(values, dtype=float)
    mx = float(np.max(values))
    if not math.isfinite(mx):
        return -math.inf, math.nan
    w = np.exp(values - mx)
    mean_w = float(w.mean())
    est = mx + math.log(mean_w)
    if values.size < 2:
        return est, math.nan
    se = float(w.std(ddof=1) / (math.sqrt(values.size) * mean_w))
    return est, se


@dataclass
class PanelLoglikResult:
    loglik: float
    se: float
    unit_logliks: np.ndarray      # (U,) replicate-combined unit estimates
    replicates: np.ndarray        # (U, n_reps) raw per-replicate estimates
    n_failures: int
    unit_names: tuple = field(default_factory=tuple)


def panel_loglik(model: PanelModel, data: PanelData, params: ParamVector,
                 J: int, n_reps: int = 1, seed: int = 0) -> PanelLoglikResult:
    """Panel log-likelihood estimate: per-unit replicated filters, summed across units.

    Each unit's replicates are combined by log-mean-exp; unit standard errors
    from the delta method are combined in quadrature.
    """
    if n_reps < 1:
        raise LayoutError("n_reps must be >= 1")
    U = model.n_units
    reps = np.empty((U, n_reps))
    failures = 0
    for u in range(U):
        for r in range(n_reps):
            res = pfilter_unit(model, data, u, params, J,
                               seed=derive_seed(seed, TAG_REP, r))
            reps[u, r] = res.loglik
            failures += res.n_failures
    unit_ll = np.empty(U)
    unit_se = np.empty(U)
    for u in range(U):
        unit_ll[u], unit_se[u] = logmeanexp(reps[u])
    total_se = math.nan if n_reps < 2 else float(np.sqrt(np.sum(unit_se ** 2)))
    return PanelLoglikResult(
        loglik=float(unit_ll.sum()),
        se=total_se,
        unit_logliks=unit_ll,
        replicates=reps,
        n_failures=failures,
        unit_names=model.unit_names(),
    )
