"""Toy panel: observations iid N(psi_u, 1) with a vacuous latent state.

The latent process is irrelevant for this model, so the state particles are
a single constant column and the step map is the identity.  The model exists
to study how resampling treats parameter particles in isolation.
"""

from __future__ import annotations

import math

import numpy as np

from ..model import PanelModel, UnitModel
from ..params import ParamLayout, ParamSpec

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def toy_dmeasure(y: float, psi: np.ndarray) -> np.ndarray:
    """log N(y | psi, 1) per particle."""
    resid = y - psi
    return -_HALF_LOG_2PI - 0.5 * resid * resid


def _unit(name: str, n_obs: int) -> UnitModel:
    def rinit(params, rng):
        return np.zeros((params.shape[0], 1))

    def rstep(states, n, params, covars, rng):
        return states

    def dmeasure(y, states, n, params, covars):
        return toy_dmeasure(float(y), params[:, 0])

    def rmeasure(states, n, params, covars, rng):
        return params[:, 0] + rng.standard_normal(params.shape[0])

    return UnitModel(name=name, rinit=rinit, rstep=rstep, dmeasure=dmeasure,
                     rmeasure=rmeasure, n_obs=n_obs,
                     times=np.arange(n_obs + 1, dtype=float))


def toy_panel_model(n_units: int = 2, n_obs: int = 100) -> PanelModel:
    """Panel of iid-normal units; one unit-specific mean each, no shared block."""
    layout = ParamLayout(shared=(), specific=(ParamSpec("psi", "identity"),),
                         n_units=n_units)
    units = tuple(_unit(f"unit{u + 1}", n_obs) for u in range(n_units))
    return PanelModel(units=units, layout=layout)
