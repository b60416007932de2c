"""Exact likelihood for scalar linear-Gaussian state-space models.

The log-transformed stochastic Gompertz model is linear-Gaussian, so these
routines provide ground-truth likelihood values and an exact maximizer for
the Gompertz panel benchmark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import CapabilityError, DomainError
from .model import PanelData
from .rngstream import TAG_HYPERCUBE, substream

_LOG_2PI = math.log(2.0 * math.pi)

EXACT_MLE_DIM_CAP = 200


@dataclass(frozen=True)
class LinearGaussianSSM:
    """X_n = a X_{n-1} + b + N(0, q);  Y_n = X_n + N(0, r_obs);  X_0 ~ N(m0, p0)."""

    a: float
    b: float
    q: float
    r_obs: float
    m0: float
    p0: float = 0.0

    def __post_init__(self):
        if self.q < 0 or self.r_obs < 0 or self.p0 < 0:
            raise DomainError("variances q, r_obs and p0 must be non-negative")


def kalman_loglik(ssm: LinearGaussianSSM, ys: Sequence[float],
                  return_details: bool = False):
    """Exact log-likelihood of ``ys`` under ``ssm`` via the predict/update recursion."""
    ys = np.asarray(ys, dtype=float)
    if not np.all(np.isfinite(ys)):
        raise DomainError("observations must be finite")
    m, p = ssm.m0, ssm.p0
    ll = 0.0
    pred_mean = np.empty(ys.shape[0])
    pred_var = np.empty(ys.shape[0])
    filt_var = np.empty(ys.shape[0])
    for n, y in enumerate(ys):
        mp = ssm.a * m + ssm.b
        pp = ssm.a * ssm.a * p + ssm.q
        s = pp + ssm.r_obs
        if s <= 0:
            raise DomainError("predictive variance is not positive")
        ll += -0.5 * (_LOG_2PI + math.log(s) + (y - mp) ** 2 / s)
        gain = pp / s
        m = mp + gain * (y - mp)
        p = pp - gain * pp
        pred_mean[n], pred_var[n], filt_var[n] = mp, s, p
    if return_details:
        return ll, {"pred_mean": pred_mean, "pred_var": pred_var, "filt_var": filt_var}
    return ll


def gompertz_to_lgssm(K: float, r: float, sigma_sq: float, tau_sq: float,
                      x0: float) -> LinearGaussianSSM:
    """State-space form of the log-transformed Gompertz unit.

    log X_{n+1} = (1 - e^{-r}) log K + e^{-r} log X_n + N(0, sigma_sq)
    log Y_n     = log X_n + N(0, tau_sq)

    The returned model is for log-observations; add the Jacobian
    ``-sum(log y)`` to get the likelihood of Y on the natural scale
    (see :func:`gompertz_unit_loglik`).
    """
    if K <= 0 or x0 <= 0:
        raise DomainError("K and X_0 must be positive")
    if r <= 0:
        raise DomainError("growth rate r must be positive")
    if sigma_sq < 0 or tau_sq < 0:
        raise DomainError("variances must be non-negative")
    a = math.exp(-r)
    return LinearGaussianSSM(a=a, b=(1.0 - a) * math.log(K), q=sigma_sq,
                             r_obs=tau_sq, m0=math.log(x0), p0=0.0)


def gompertz_unit_loglik(ys: Sequence[float], K: float, r: float, sigma_sq: float,
                         tau_sq: float, x0: float) -> float:
    """Exact natural-scale log-likelihood of one Gompertz unit's observations."""
    ys = np.asarray(ys, dtype=float)
    if np.any(ys <= 0):
        return -math.inf
    log_ys = np.log(ys)
    ssm = gompertz_to_lgssm(K, r, sigma_sq, tau_sq, x0)
    return kalman_loglik(ssm, log_ys) - float(log_ys.sum())


def gompertz_panel_loglik(data: PanelData, r: float, sigma_sq: float,
                          tau_sqs: Sequence[float], K=1.0, x0=1.0) -> float:
    """Sum of exact unit log-likelihoods for a Gompertz panel.

    Vectorized across units when all units share the same series length;
    falls back to a per-unit loop for ragged panels.
    """
    U = data.n_units
    tau_sqs = np.broadcast_to(np.asarray(tau_sqs, dtype=float), (U,))
    Ks = np.broadcast_to(np.asarray(K, dtype=float), (U,))
    x0s = np.broadcast_to(np.asarray(x0, dtype=float), (U,))
    if r <= 0 or sigma_sq < 0 or np.any(tau_sqs < 0) or np.any(Ks <= 0) or np.any(x0s <= 0):
        return -math.inf
    lengths = {data.n_obs(u) for u in range(U)}
    if len(lengths) > 1:
        return sum(
            gompertz_unit_loglik(data.observations[u], Ks[u], r, sigma_sq, tau_sqs[u], x0s[u])
            for u in range(U)
        )
    ys = np.stack(data.observations)          # (U, N)
    if np.any(ys <= 0):
        return -math.inf
    zs = np.log(ys)
    a = math.exp(-r)
    b = (1.0 - a) * np.log(Ks)
    m = np.log(x0s)
    p = np.zeros(U)
    ll = -float(np.log(ys).sum())             # Jacobian of the log transform
    for n in range(zs.shape[1]):
        mp = a * m + b
        pp = a * a * p + sigma_sq
        s = pp + tau_sqs
        resid = zs[:, n] - mp
        ll += float(np.sum(-0.5 * (_LOG_2PI + np.log(s) + resid * resid / s)))
        gain = pp / s
        m = mp + gain * resid
        p = pp - gain * pp
    return ll


@dataclass(frozen=True)
class ExactMleResult:
    r: float
    sigma_sq: float
    tau_sqs: np.ndarray
    loglik: float
    n_restarts: int


def maximize_exact(data: PanelData, center_r: float, center_sigma_sq: float,
                   center_tau_sqs: Sequence[float], K=1.0, x0=1.0,
                   restarts: int = 20, seed: int = 0,
                   xatol: float = 1e-8) -> ExactMleResult:
    """Exact Gompertz-panel MLE: Nelder-Mead on the log scale of (r, sigma^2, tau^2_u).

    Runs from ``center`` plus ``restarts`` random starts drawn from the
    [center/2, 2*center] hypercube; the best optimum is returned.  The total
    free dimension 2 + U is capped at 200, mirroring the intractability of
    exact maximization for very wide panels.
    """
    U = data.n_units
    dim = 2 + U
    if dim > EXACT_MLE_DIM_CAP:
        raise CapabilityError(
            f"exact maximization supports at most {EXACT_MLE_DIM_CAP} free parameters, got {dim}"
        )
    center = np.concatenate([[center_r, center_sigma_sq],
                             np.broadcast_to(np.asarray(center_tau_sqs, float), (U,))])
    if np.any(center <= 0):
        raise DomainError("all center values must be positive")

    def objective(z: np.ndarray) -> float:
        v = np.exp(z)
        return -gompertz_panel_loglik(data, v[0], v[1], v[2:], K=K, x0=x0)

    z_center = np.log(center)
    rng = substream(seed, TAG_HYPERCUBE)
    starts = [z_center]
    lo, hi = np.log(center / 2.0), np.log(center * 2.0)
    for _ in range(restarts):
        starts.append(rng.uniform(lo, hi))
    best = None
    for z0 in starts:
        res = minimize(objective, z0, method="Nelder-Mead",
                       options={"xatol": xatol, "fatol": 1e-12,
                                "maxiter": 400 * dim, "maxfev": 400 * dim})
        if best is None or res.fun < best.fun:
            best = res
    v = np.exp(best.x)
    return ExactMleResult(r=float(v[0]), sigma_sq=float(v[1]), tau_sqs=v[2:].copy(),
                          loglik=-float(best.fun), n_restarts=restarts)
