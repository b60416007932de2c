"""Exact Gaussian data cloning with and without marginalization.

For a panel whose unit likelihoods are bivariate Gaussians in (shared,
unit-specific) coordinates, iterated Bayes updates can be carried out in
closed form.  This module implements the unmarginalized map (classic data
cloning on the joint belief), the marginalized map that forces coordinate
independence after every unit update, and its perturbed variant where the
belief is convolved with shrinking Gaussian noise before each update.
All coordinates are ordered (phi, psi_1, ..., psi_U).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, LayoutError

FULL_MODE_UNIT_CAP = 64


@dataclass(frozen=True)
class GaussianPanelLikelihood:
    """Per-unit bivariate Gaussian likelihoods in (phi, psi_u) coordinates.

    ``optima`` is (U, 2) with rows (phi*, psi_u*); ``precisions`` is (U, 2, 2),
    each symmetric positive definite.
    """

    optima: np.ndarray
    precisions: np.ndarray

    def __post_init__(self):
        optima = np.asarray(self.optima, dtype=float)
        precisions = np.asarray(self.precisions, dtype=float)
        if optima.ndim != 2 or optima.shape[1] != 2:
            raise LayoutError("optima must have shape (U, 2)")
        if precisions.shape != (optima.shape[0], 2, 2):
            raise LayoutError("precisions must have shape (U, 2, 2)")
        for u, lam in enumerate(precisions):
            if not np.allclose(lam, lam.T, atol=1e-12):
                raise DomainError(f"unit {u + 1}: precision is not symmetric")
            if np.any(np.linalg.eigvalsh(lam) <= 0):
                raise DomainError(f"unit {u + 1}: precision is not positive definite")
        object.__setattr__(self, "optima", optima)
        object.__setattr__(self, "precisions", precisions)

    @property
    def n_units(self) -> int:
        return self.optima.shape[0]


@dataclass(frozen=True)
class DiagonalBelief:
    """Gaussian belief with diagonal precision (independent coordinates)."""

    mean: np.ndarray
    precisions: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        precisions = np.asarray(self.precisions, dtype=float)
        if mean.shape != precisions.shape or mean.ndim != 1:
            raise LayoutError("mean and precisions must be 1-d arrays of equal length")
        if np.any(precisions <= 0):
            raise DomainError("all precisions must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precisions", precisions)

    def max_variance(self) -> float:
        return float(1.0 / self.precisions.min())


@dataclass(frozen=True)
class FullBelief:
    """Gaussian belief with a dense precision matrix."""

    mean: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        precision = np.asarray(self.precision, dtype=float)
        if precision.shape != (mean.shape[0], mean.shape[0]):
            raise LayoutError("precision must be square and match the mean length")
        if not np.allclose(precision, precision.T, atol=1e-10):
            raise DomainError("precision is not symmetric")
        if np.any(np.linalg.eigvalsh(precision) <= 0):
            raise DomainError("precision is not positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", precision)

    def covariance_norm(self) -> float:
        return float(1.0 / np.linalg.eigvalsh(self.precision).min())


def _check_unit(lik: GaussianPanelLikelihood, u: int) -> None:
    if not 1 <= u <= lik.n_units:
        raise LayoutError(f"unit index {u} outside 1..{lik.n_units}")


def embed_precision(lam: np.ndarray, u: int, dim: int) -> np.ndarray:
    """Place a 2x2 block at coordinates (0, u) of a dim x dim zero matrix."""
    out = np.zeros((dim, dim))
    ix = np.array([0, u])
    out[np.ix_(ix, ix)] = lam
    return out


def bayes_update_full(belief: FullBelief, lik: GaussianPanelLikelihood, u: int) -> FullBelief:
    """One conjugate-normal update of the joint belief with unit ``u``'s likelihood."""
    _check_unit(lik, u)
    dim = belief.mean.shape[0]
    emb = embed_precision(lik.precisions[u - 1], u, dim)
    theta_star = np.zeros(dim)
    theta_star[[0, u]] = lik.optima[u - 1]
    new_precision = belief.precision + emb
    rhs = belief.precision @ belief.mean + emb @ theta_star
    new_mean = np.linalg.solve(new_precision, rhs)
    return FullBelief(new_mean, 0.5 * (new_precision + new_precision.T))


def marginalized_update(belief: DiagonalBelief, lik: GaussianPanelLikelihood,
                        u: int) -> DiagonalBelief:
    """Bayes update with unit ``u`` followed by forcing coordinate independence.

    Equivalent to the full update followed by zeroing the off-diagonal
    covariance entries of the (phi, psi_u) block and re-inverting.  The mean
    is that of the unmarginalized posterior; the updated precisions pick up
    the Schur-complement corrections.
    """
    _check_unit(lik, u)
    lam = lik.precisions[u - 1]
    t_phi, t_u = belief.precisions[0], belief.precisions[u]
    a = t_phi + lam[0, 0]
    b = lam[0, 1]
    d = t_u + lam[1, 1]
    # Mean of the unmarginalized 2x2 posterior; marginalization keeps it.
    prior_mean = belief.mean[[0, u]]
    rhs = np.array([t_phi, t_u]) * prior_mean + lam @ lik.optima[u - 1]
    det = a * d - b * b
    new_mean_2 = np.array([d * rhs[0] - b * rhs[1], -b * rhs[0] + a * rhs[1]]) / det
    mean = belief.mean.copy()
    mean[[0, u]] = new_mean_2
    precisions = belief.precisions.copy()
    precisions[0] = a - b * b / d
    precisions[u] = d - b * b / a
    return DiagonalBelief(mean, precisions)


def convolve_gaussian(belief: DiagonalBelief, noise_vars: np.ndarray) -> DiagonalBelief:
    """Convolution with independent zero-mean Gaussian noise: variances add."""
    noise_vars = np.broadcast_to(np.asarray(noise_vars, dtype=float), belief.mean.shape)
    if np.any(noise_vars < 0):
        raise DomainError("noise variances must be non-negative")
    new_prec = belief.precisions.copy()
    pos = noise_vars > 0
    tau_sigma = np.empty_like(new_prec)
    tau_sigma[pos] = 1.0 / noise_vars[pos]
    new_prec[pos] = new_prec[pos] * tau_sigma[pos] / (new_prec[pos] + tau_sigma[pos])
    return DiagonalBelief(belief.mean.copy(), new_prec)


def perturbed_marginalized_update(belief: DiagonalBelief, lik: GaussianPanelLikelihood,
                                  u: int, noise_vars: np.ndarray) -> DiagonalBelief:
    """Noise convolution followed by the marginalized Bayes update for unit ``u``."""
    return marginalized_update(convolve_gaussian(belief, noise_vars), lik, u)


def check_condition_eq7(lik: GaussianPanelLikelihood):
    """Sufficient-convergence condition on each unit's precision.

    Returns (holds, ratio) arrays where ratio is the left-hand side divided by
    the right-hand side; the condition holds strictly when ratio < 1.  The
    condition is sufficient, not necessary, so a violation does not imply
    divergence.
    """
    lams = lik.precisions
    s_phi = float(np.sum(lams[:, 0, 0]))
    lhs = lams[:, 0, 1] ** 2
    rhs = 4.0 * lams[:, 0, 0] * lams[:, 1, 1] ** 2 * s_phi / (lams[:, 1, 1] + s_phi) ** 2
    ratio = lhs / rhs
    return ratio < 1.0, ratio


def mle_normal_equations(lik: GaussianPanelLikelihood) -> np.ndarray:
    """Joint MLE: solve sum_u embed(Lambda_u) (theta - theta_u*) = 0."""
    dim = lik.n_units + 1
    h = np.zeros((dim, dim))
    rhs = np.zeros(dim)
    for u in range(1, lik.n_units + 1):
        emb = embed_precision(lik.precisions[u - 1], u, dim)
        h += emb
        t = np.zeros(dim)
        t[[0, u]] = lik.optima[u - 1]
        rhs += emb @ t
    return np.linalg.solve(h, rhs)


@dataclass
class CloningTrace:
    """Per-full-iteration record of an iterate() run."""

    mode: str
    means: np.ndarray            # (M+1, U+1), row 0 is the initial belief
    cov_norms: np.ndarray        # (M+1,) spectral norm of the covariance
    covariances: Optional[list] = None    # (U+1, U+1) per record when requested
    b_norms: Optional[np.ndarray] = None  # (M, U) update-matrix spectral norms
    final_belief: object = None


def _b_norm(t_phi: float, t_u: float, lam: np.ndarray) -> float:
    gamma = np.diag([t_phi, t_u])
    b = np.linalg.solve(gamma + lam, gamma)
    return float(np.linalg.norm(b, 2))


def iterate(belief0, lik: GaussianPanelLikelihood, M: int, mode: str = "marginalized",
            sigma1_sq: float = 0.0, sigma0_diag: Optional[np.ndarray] = None,
            delta: float = 0.5, record_cov: bool = False,
            record_b_norms: bool = False) -> CloningTrace:
    """Apply the per-unit update for units 1..U, for M full iterations.

    ``mode`` is one of ``marginalized`` (diagonal belief), ``full`` (dense
    joint belief), or ``perturbed`` (marginalized with noise variances
    ``sigma_m^2 * sigma0_diag`` per unit-iteration, ``sigma_m^2 =
    sigma1_sq / m^(1+delta)``).
    """
    if M < 1:
        raise LayoutError("M must be >= 1")
    U = lik.n_units
    if mode not in ("marginalized", "full", "perturbed"):
        raise LayoutError(f"unknown mode {mode!r}")
    if mode == "full":
        if U > FULL_MODE_UNIT_CAP:
            raise LayoutError(f"full mode supports at most {FULL_MODE_UNIT_CAP} units")
        if isinstance(belief0, DiagonalBelief):
            belief = FullBelief(belief0.mean, np.diag(belief0.precisions))
        else:
            belief = belief0
    else:
        if isinstance(belief0, FullBelief):
            raise LayoutError(f"{mode} mode needs a DiagonalBelief")
        belief = belief0
    if mode == "perturbed":
        if delta <= 0:
            raise DomainError("delta must be positive so that sigma_m^2 = o(1/m)")
        sigma0_diag = np.ones(U + 1) if sigma0_diag is None \
            else np.broadcast_to(np.asarray(sigma0_diag, float), (U + 1,))
        if np.any(sigma0_diag <= 0):
            raise DomainError("sigma0 diagonal must be positive")

    means = [belief.mean.copy()]
    norms = [belief.covariance_norm() if mode == "full" else belief.max_variance()]
    covs = [_cov_of(belief)] if record_cov else None
    b_norms = np.empty((M, U)) if (record_b_norms and mode != "full") else None

    for m in range(1, M + 1):
        for u in range(1, U + 1):
            if mode == "full":
                belief = bayes_update_full(belief, lik, u)
            else:
                if mode == "perturbed":
                    sigma_m_sq = sigma1_sq / m ** (1.0 + delta)
                    belief = convolve_gaussian(belief, sigma_m_sq * sigma0_diag)
                if b_norms is not None:
                    b_norms[m - 1, u - 1] = _b_norm(
                        belief.precisions[0], belief.precisions[u], lik.precisions[u - 1])
                belief = marginalized_update(belief, lik, u)
        means.append(belief.mean.copy())
        norms.append(belief.covariance_norm() if mode == "full" else belief.max_variance())
        if covs is not None:
            covs.append(_cov_of(belief))
    return CloningTrace(mode=mode, means=np.asarray(means), cov_norms=np.asarray(norms),
                        covariances=covs, b_norms=b_norms, final_belief=belief)


def _cov_of(belief) -> np.ndarray:
    if isinstance(belief, DiagonalBelief):
        return np.diag(1.0 / belief.precisions)
    return np.linalg.inv(belief.precision)


def lemma1_embeddings(bs: list) -> list:
    """The (d+1)x(d+1) identity perturbations carrying each 2x2 block at (0, k)."""
    d = len(bs)
    mats = []
    for k, b in enumerate(bs, start=1):
        b = np.asarray(b, dtype=float)
        if b.shape != (2, 2):
            raise LayoutError("each block must be 2x2")
        a = np.eye(d + 1)
        a[0, 0] = b[0, 0]
        a[0, k] = b[0, 1]
        a[k, 0] = b[1, 0]
        a[k, k] = b[1, 1]
        mats.append(a)
    return mats


def lemma1_norm_check(bs: list, c: float, tol: float = 1e-12):
    """Whether the product of the embedded update matrices has spectral norm <= c.

    Each 2x2 block must itself satisfy ||B_k||_2 <= c <= 1.  The product is
    taken with the k=1 factor applied first (rightmost).
    """
    if not 0 < c <= 1:
        raise DomainError("c must lie in (0, 1]")
    for k, b in enumerate(bs, start=1):
        if np.linalg.norm(np.asarray(b, dtype=float), 2) > c + tol:
            raise DomainError(f"block {k} violates the norm precondition")
    mats = lemma1_embeddings(bs)
    prod = np.eye(len(bs) + 1)
    for a in mats:
        prod = a @ prod
    norm = float(np.linalg.norm(prod, 2))
    return norm <= c + tol, norm
