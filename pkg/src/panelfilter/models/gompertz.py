"""Stochastic Gompertz population model with lognormal measurement error.

Dynamics on the natural scale, with carrying capacity K and growth rate r:

    X_{n+1} = K^(1 - e^{-r}) * X_n^(e^{-r}) * eps,   log eps ~ N(0, sigma^2)
    log Y_n ~ N(log X_n, tau^2)

so log X follows the stationary AR(1) recursion
log X_{n+1} = (1 - e^{-r}) log K + e^{-r} log X_n + eps.  K and X_0 are
treated as known constants; r and sigma^2 are shared across units and tau^2
is unit-specific.
"""

from __future__ import annotations

import math

import numpy as np

from ..model import PanelModel, UnitModel
from ..params import NATURAL, ParamLayout, ParamSpec, ParamVector

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def gompertz_step(x: np.ndarray, r: np.ndarray, K, sigma_sq: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """One transition draw; vectorized over particles in ``x`` (and parameters)."""
    x = np.asarray(x, dtype=float)
    decay = np.exp(-np.asarray(r, dtype=float))
    log_x = (1.0 - decay) * np.log(K) + decay * np.log(x)
    noise = np.sqrt(np.asarray(sigma_sq, dtype=float)) * rng.standard_normal(x.shape)
    return np.exp(log_x + noise)


def gompertz_dmeasure(y: float, x: np.ndarray, tau_sq: np.ndarray) -> np.ndarray:
    """Lognormal density of the observation: log N(log y | log x, tau^2) - log y."""
    if y <= 0:
        return np.full(np.shape(x), -math.inf)
    x = np.asarray(x, dtype=float)
    tau_sq = np.asarray(tau_sq, dtype=float)
    resid = math.log(y) - np.log(x)
    return -_HALF_LOG_2PI - 0.5 * np.log(tau_sq) - 0.5 * resid * resid / tau_sq - math.log(y)


def _unit(name: str, n_obs: int, K: float, x0: float) -> UnitModel:
    # Column order of the (shared, psi_u) sub-vector: r, sigma_sq, tau_sq.
    def rinit(params, rng):
        return np.full(params.shape[0], x0)

    def rstep(states, n, params, covars, rng):
        return gompertz_step(states, params[:, 0], K, params[:, 1], rng)

    def dmeasure(y, states, n, params, covars):
        return gompertz_dmeasure(float(y), states, params[:, 2])

    def rmeasure(states, n, params, covars, rng):
        noise = np.sqrt(params[:, 2]) * rng.standard_normal(states.shape[0])
        return np.exp(np.log(states) + noise)

    return UnitModel(name=name, rinit=rinit, rstep=rstep, dmeasure=dmeasure,
                     rmeasure=rmeasure, n_obs=n_obs,
                     times=np.arange(n_obs + 1, dtype=float))


def gompertz_panel_model(n_units: int = 5, n_obs: int = 50, K: float = 1.0,
                         x0: float = 1.0) -> PanelModel:
    """Gompertz panel; shared (r, sigma^2), unit-specific tau^2, constants K, X_0."""
    layout = ParamLayout(
        shared=(ParamSpec("r", "log"), ParamSpec("sigma_sq", "log")),
        specific=(ParamSpec("tau_sq", "log"),),
        n_units=n_units,
    )
    units = tuple(_unit(f"unit{u + 1}", n_obs, K, x0) for u in range(n_units))
    return PanelModel(units=units, layout=layout)


def gompertz_generating_params(model: PanelModel, r: float = 0.1,
                               sigma_sq: float = 0.01,
                               tau_sq: float = 0.01) -> ParamVector:
    """The benchmark's generating values: r = 0.1, sigma^2 = tau^2 = 0.01."""
    layout = model.layout
    values = np.empty(layout.dim)
    values[0] = r
    values[1] = sigma_sq
    for u in range(layout.n_units):
        values[layout.unit_block(u)] = tau_sq
    return ParamVector(layout, values, NATURAL)
