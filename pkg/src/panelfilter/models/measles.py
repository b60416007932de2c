"""Stochastic SEIR measles model with Euler-multinomial transitions.

Compartment counts evolve by daily Euler steps of a continuous-time Markov
chain.  Transmission is seasonally forced (school term vs vacation), carries
multiplicative gamma-process noise, and receives imported infections.  Births
enter the susceptible class after a developmental delay, with a configurable
fraction held back and admitted as a yearly cohort pulse on the school
admission day.  Reported weekly cases follow a discretized normal around a
fraction of the true I-to-R transitions.

Time is measured in years; one Euler step is a day (1/365.25 yr).
"""

from __future__ import annotations

import math
from typing import Mapping, Optional

import numpy as np
from scipy.special import ndtr

from ..covariates import CovariateTable
from ..errors import DomainError, LayoutError
from ..model import PanelModel, UnitModel
from ..params import NATURAL, ParamLayout, ParamSpec, ParamVector

DAYS_PER_YEAR = 365.25
DELTA_DAY = 1.0 / DAYS_PER_YEAR

MU_DEATH = 0.02          # per-year exit rate out of S, E and I
TAU_D_YEARS = 4.0        # birth-to-susceptibility delay
ADMISSION_DAY = 251      # school admission day of year (1-based)
P_TERM = 0.7589          # proportion of the year occupied by the school term
LOG_FLOOR = math.log(1e-300)

# School vacation days of year, 1-based inclusive ranges (he10 calendar).
_VACATIONS = ((1, 6), (100, 115), (199, 252), (300, 308), (356, 366))

MEASLES_VARIANTS = ("c-shared", "iota-shared", "7-shared")


def day_of_year(t) -> np.ndarray:
    """1-based day of year for a time in years (epsilon guards grid round-off)."""
    frac = np.asarray(t, dtype=float) % 1.0
    return np.floor(frac * DAYS_PER_YEAR + 1e-9).astype(int) + 1


def in_school_term(t) -> np.ndarray:
    doy = day_of_year(t)
    vacation = np.zeros(np.shape(doy), dtype=bool)
    for lo, hi in _VACATIONS:
        vacation |= (doy >= lo) & (doy <= hi)
    out = ~vacation
    return bool(out) if out.ndim == 0 else out


def is_admission_step(t, dt: float = DELTA_DAY) -> bool:
    """Whether the Euler step starting at ``t`` contains the admission instant."""
    frac = float(t) % 1.0
    target = (ADMISSION_DAY - 1) / DAYS_PER_YEAR
    return frac <= target < frac + dt


def eulermultinom(n: np.ndarray, mu1, mu2, dt: float,
                  rng: np.random.Generator):
    """Competing-hazard departures from a compartment of size ``n`` over ``dt``.

    Returns ``(k1, k2)`` counts of the two exit types; the remaining
    ``n - k1 - k2`` individuals stay.  Exit probabilities are
    ``p_i = (mu_i / (mu_1 + mu_2)) (1 - exp(-(mu_1 + mu_2) dt))``.
    """
    n = np.asarray(n)
    mu1 = np.broadcast_to(np.asarray(mu1, dtype=float), n.shape)
    mu2 = np.broadcast_to(np.asarray(mu2, dtype=float), n.shape)
    if dt <= 0:
        raise DomainError("dt must be positive")
    if np.any(mu1 < 0) or np.any(mu2 < 0):
        raise DomainError("exit rates must be non-negative")
    total = mu1 + mu2
    p_exit = -np.expm1(-total * dt)
    k_exit = rng.binomial(n.astype(np.int64), p_exit)
    with np.errstate(invalid="ignore"):
        frac1 = np.where(total > 0, mu1 / np.where(total > 0, total, 1.0), 0.0)
    k1 = rng.binomial(k_exit, frac1)
    return k1, k_exit - k1


def gamma_noise_increment(dt: float, sigma_se, rng: np.random.Generator,
                          size=None) -> np.ndarray:
    """Gamma-process increment with mean ``dt`` and variance ``sigma_se^2 dt``."""
    sigma_se = np.asarray(sigma_se, dtype=float)
    if dt <= 0:
        raise DomainError("dt must be positive")
    if np.any(sigma_se <= 0):
        raise DomainError("sigma_SE must be positive")
    var = sigma_se * sigma_se
    return rng.gamma(shape=dt / var, scale=var, size=size)


def iota_loglog(pop_1950: float, iota1, iota2):
    """Imported infections from the log-log linear model in city size."""
    return np.exp(np.asarray(iota1, dtype=float)
                  + np.asarray(iota2, dtype=float) * math.log(pop_1950))


def cohort_pulse_amount(covars: CovariateTable, t: float,
                        tau_d: float = TAU_D_YEARS) -> float:
    """Integral of the tau_d-lagged birth rate over the year before ``t``."""
    return covars.integrate("births", t - tau_d - 1.0, t - tau_d)


def measles_rates(t: float, infected, params: Mapping, covars: CovariateTable,
                  dt: float = DELTA_DAY, mu_death: float = MU_DEATH,
                  tau_d: float = TAU_D_YEARS, p_term: float = P_TERM):
    """(mu_BS, mubar_SE, beta) at time ``t``.

    ``params`` maps R0, mu_IR, amplitude, cohort and iota to scalars or
    per-particle arrays.  ``mu_BS`` is a rate: on the admission step it
    includes the cohort pulse spread over ``dt`` so that a Poisson draw with
    mean ``mu_BS * dt`` delivers the whole cohort.
    """
    r0 = np.asarray(params["R0"], dtype=float)
    mu_ir = np.asarray(params["mu_IR"], dtype=float)
    amp = np.asarray(params["amplitude"], dtype=float)
    cohort = np.asarray(params["cohort"], dtype=float)
    iota = np.asarray(params["iota"], dtype=float)
    beta0 = r0 * (-np.expm1(-(mu_ir + mu_death) * dt)) / dt
    if in_school_term(t):
        beta = beta0 * (1.0 + amp * (1.0 - p_term) / p_term)
    else:
        beta = beta0 * (1.0 - amp)
    pop = covars.lookup("pop", t)
    mubar_se = beta * (np.asarray(infected, dtype=float) + iota) / pop
    mu_bs = (1.0 - cohort) * covars.lookup("births", t - tau_d)
    if is_admission_step(t, dt):
        mu_bs = mu_bs + cohort * cohort_pulse_amount(covars, t, tau_d) / dt
    return mu_bs, mubar_se, beta


def measles_dmeasure_counts(y: float, z: np.ndarray, rho: np.ndarray,
                            psi_od: np.ndarray) -> np.ndarray:
    """Discretized-normal log-density of reported cases given true transitions."""
    z = np.asarray(z, dtype=float)
    mean = rho * z
    var = rho * (1.0 - rho) * z + (psi_od * rho * z) ** 2
    sd = np.sqrt(var)
    out = np.full(z.shape, LOG_FLOOR)
    pos = sd > 0
    if np.any(pos):
        upper = ndtr((y + 0.5 - mean[pos]) / sd[pos])
        lower = 0.0 if y <= 0 else ndtr((y - 0.5 - mean[pos]) / sd[pos])
        prob = np.maximum(upper - lower, 1e-300)
        out[pos] = np.log(prob)
    degenerate = ~pos
    if np.any(degenerate):
        # No dispersion: all reporting mass sits at round(mean) (= 0 when Z = 0).
        hit = np.abs(y - mean[degenerate]) <= 0.5
        out[degenerate] = np.where(hit, 0.0, LOG_FLOOR)
    return out


_DYNAMIC_SPECS = {
    "R0": ParamSpec("R0", "log"),
    "mu_EI": ParamSpec("mu_EI", "log"),
    "mu_IR": ParamSpec("mu_IR", "log"),
    "sigma_SE": ParamSpec("sigma_SE", "log"),
    "amplitude": ParamSpec("amplitude", "logit"),
    "cohort": ParamSpec("cohort", "logit"),
    "iota": ParamSpec("iota", "log"),
    "iota1": ParamSpec("iota1", "identity"),
    "iota2": ParamSpec("iota2", "identity"),
    "rho": ParamSpec("rho", "logit"),
    "psi_od": ParamSpec("psi_od", "log"),
}

_INIT_SPECS = (
    ParamSpec("S_0", "simplex:init", ivp=True),
    ParamSpec("E_0", "simplex:init", ivp=True),
    ParamSpec("I_0", "simplex:init", ivp=True),
    ParamSpec("R_0", "simplex:init", ivp=True),
)


def _variant_layout(variant: str, n_units: int) -> ParamLayout:
    d = _DYNAMIC_SPECS
    if variant == "c-shared":
        shared = (d["cohort"],)
        specific = ("R0", "mu_EI", "mu_IR", "sigma_SE", "amplitude", "iota",
                    "rho", "psi_od")
    elif variant == "iota-shared":
        shared = (d["iota1"], d["iota2"])
        specific = ("R0", "mu_EI", "mu_IR", "sigma_SE", "amplitude", "cohort",
                    "rho", "psi_od")
    elif variant == "7-shared":
        shared = (d["R0"], d["mu_EI"], d["mu_IR"], d["sigma_SE"],
                  d["amplitude"], d["cohort"], d["iota1"], d["iota2"])
        specific = ("rho", "psi_od")
    else:
        raise LayoutError(f"unknown measles variant {variant!r}; "
                          f"choose one of {MEASLES_VARIANTS}")
    return ParamLayout(shared=shared,
                       specific=tuple(d[k] for k in specific) + _INIT_SPECS,
                       n_units=n_units)


def _measles_unit(name: str, covars: CovariateTable, n_obs: int, t0: float,
                  cols: Mapping[str, int], pop_1950: float, use_loglog: bool,
                  mu_death: float, tau_d: float, p_term: float) -> UnitModel:
    times = t0 + np.arange(n_obs + 1) * (7.0 / DAYS_PER_YEAR)
    n_days = 7
    dt = DELTA_DAY

    # Time-dependent pieces on the daily grid, fixed at build time.
    day_times = t0 + np.arange(n_obs * n_days) * dt
    term_flags = in_school_term(day_times)
    pop_grid = np.asarray(covars.lookup("pop", day_times), dtype=float)
    births_lag = np.asarray(covars.lookup("births", day_times - tau_d), dtype=float)
    pulse = np.zeros(day_times.shape[0])
    for i, t in enumerate(day_times):
        if is_admission_step(t, dt):
            pulse[i] = cohort_pulse_amount(covars, t, tau_d)

    def _resolve(params):
        r0 = params[:, cols["R0"]]
        mu_ei = params[:, cols["mu_EI"]]
        mu_ir = params[:, cols["mu_IR"]]
        sigma_se = params[:, cols["sigma_SE"]]
        amp = params[:, cols["amplitude"]]
        cohort = params[:, cols["cohort"]]
        if use_loglog:
            iota = iota_loglog(pop_1950, params[:, cols["iota1"]],
                               params[:, cols["iota2"]])
        else:
            iota = params[:, cols["iota"]]
        return r0, mu_ei, mu_ir, sigma_se, amp, cohort, iota

    def rinit(params, rng):
        pop0 = float(covars.lookup("pop", t0))
        fractions = params[:, [cols["S_0"], cols["E_0"], cols["I_0"]]]
        state = np.zeros((params.shape[0], 4), dtype=np.int64)
        state[:, :3] = np.rint(fractions * pop0).astype(np.int64)
        return state

    def rstep(states, n, params, covars_arg, rng):
        r0, mu_ei, mu_ir, sigma_se, amp, cohort, iota = _resolve(params)
        beta0 = r0 * (-np.expm1(-(mu_ir + mu_death) * dt)) / dt
        term_beta = beta0 * (1.0 + amp * (1.0 - p_term) / p_term)
        vac_beta = beta0 * (1.0 - amp)
        var = sigma_se * sigma_se
        gamma_shape = dt / var

        s = states[:, 0].copy()
        e = states[:, 1].copy()
        i = states[:, 2].copy()
        z = np.zeros_like(s)
        base = (n - 1) * n_days
        for k in range(n_days):
            g = base + k
            beta = term_beta if term_flags[g] else vac_beta
            mubar_se = beta * (i + iota) / pop_grid[g]
            dw = rng.gamma(shape=gamma_shape, scale=var)
            birth_mean = (1.0 - cohort) * births_lag[g] * dt
            if pulse[g] > 0:
                birth_mean = birth_mean + cohort * pulse[g]
            a_bs = rng.poisson(birth_mean)
            a_se, a_sd = eulermultinom(s, mubar_se * dw / dt, mu_death, dt, rng)
            a_ei, a_ed = eulermultinom(e, mu_ei, mu_death, dt, rng)
            a_ir, a_id = eulermultinom(i, mu_ir, mu_death, dt, rng)
            s = s + a_bs - a_se - a_sd
            e = e + a_se - a_ei - a_ed
            i = i + a_ei - a_ir - a_id
            z = z + a_ir
        out = np.empty_like(states)
        out[:, 0], out[:, 1], out[:, 2], out[:, 3] = s, e, i, z
        return out

    def dmeasure(y, states, n, params, covars_arg):
        return measles_dmeasure_counts(float(y), states[:, 3],
                                       params[:, cols["rho"]],
                                       params[:, cols["psi_od"]])

    def rmeasure(states, n, params, covars_arg, rng):
        z = states[:, 3].astype(float)
        rho = params[:, cols["rho"]]
        psi_od = params[:, cols["psi_od"]]
        mean = rho * z
        sd = np.sqrt(rho * (1.0 - rho) * z + (psi_od * rho * z) ** 2)
        draw = rng.normal(mean, np.maximum(sd, 1e-12))
        return np.maximum(np.rint(draw), 0.0)

    return UnitModel(name=name, rinit=rinit, rstep=rstep, dmeasure=dmeasure,
                     rmeasure=rmeasure, n_obs=n_obs, times=times)


def measles_panel_model(variant: str, covariates: Mapping[str, CovariateTable],
                        n_obs: int, t0: float,
                        pop_1950: Optional[Mapping[str, float]] = None,
                        mu_death: float = MU_DEATH, tau_d: float = TAU_D_YEARS,
                        p_term: float = P_TERM) -> PanelModel:
    """Measles panel for one of the shared-parameter variants.

    ``covariates`` maps city name to a table with ``births`` and ``pop``
    columns; ``n_obs`` is the number of weekly observations per city.
    """
    names = list(covariates)
    layout = _variant_layout(variant, len(names))
    use_loglog = variant in ("iota-shared", "7-shared")
    sub_names = [s.name for s in layout.shared] + [s.name for s in layout.specific]
    cols = {n: i for i, n in enumerate(sub_names)}
    units = []
    for name in names:
        cov = covariates[name]
        p1950 = (pop_1950[name] if pop_1950 is not None
                 else float(cov.lookup("pop", 1950.0)))
        units.append(_measles_unit(name, cov, n_obs, t0, cols, p1950,
                                   use_loglog, mu_death, tau_d, p_term))
    return PanelModel(units=tuple(units), layout=layout,
                      covariates=tuple(covariates[n] for n in names))


_DEFAULTS = {
    "R0": 25.0, "mu_EI": 52.0, "mu_IR": 52.0, "sigma_SE": 0.08,
    "amplitude": 0.4, "cohort": 0.5, "iota": 4.0, "iota1": -10.0, "iota2": 1.0,
    "rho": 0.5, "psi_od": 0.15,
    "S_0": 0.035, "E_0": 0.0002, "I_0": 0.0002,
}


def measles_default_params(model: PanelModel,
                           overrides: Optional[Mapping[str, float]] = None) -> ParamVector:
    """Natural-scale defaults for simulation studies; init fractions sum to 1."""
    values = dict(_DEFAULTS)
    if overrides:
        values.update(overrides)
    values["R_0"] = 1.0 - values["S_0"] - values["E_0"] - values["I_0"]
    layout = model.layout
    out = np.empty(layout.dim)
    for i, spec in enumerate(layout.shared):
        out[i] = values[spec.name]
    for u in range(layout.n_units):
        blk = layout.unit_block(u)
        for j, spec in enumerate(layout.specific):
            out[blk.start + j] = values[spec.name]
    return ParamVector(layout, out, NATURAL)


def synthetic_measles_covariates(populations: Mapping[str, float], t0: float,
                                 n_years: float, birth_rate: float = 0.018,
                                 pop_growth: float = 0.002) -> dict:
    """Annual-grid covariate tables with near-constant population and births."""
    out = {}
    lo = math.floor(t0 - TAU_D_YEARS - 2.0)
    hi = math.ceil(t0 + n_years + 2.0)
    years = np.arange(lo, hi + 1, dtype=float)
    for name, pop0 in populations.items():
        pop = pop0 * (1.0 + pop_growth) ** (years - t0)
        births = birth_rate * pop
        out[name] = CovariateTable(times=years,
                                   columns={"births": births, "pop": pop},
                                   interpolation="cubic-spline")
    return out
