"""Experiment presets: seeded end-to-end studies with CSV artifacts.

Every preset writes ``summary.csv``, ``trace.csv``, ``diagnostics.csv`` and a
``manifest.json`` into the output directory.  All artifact content is a pure
function of (config, seed); thread counts only change scheduling, never
bytes.
"""

from __future__ import annotations

import csv
import json
import math
import os
import numpy as np

from . import __version__
from .cloning import (DiagonalBelief, GaussianPanelLikelihood, iterate,
                      mle_normal_equations)
from .config import ExperimentConfig
from .covariates import save_covariates_csv
from .errors import ConfigError
from .kalman import gompertz_panel_loglik, maximize_exact
from .mif import (CoolingSchedule, MifConfig, PerturbKernel, run_multistart,
                  run_unit_pass, sample_hypercube_starts)
from .model import simulate_panel
from .models import (gompertz_generating_params, gompertz_panel_model,
                     measles_default_params, measles_panel_model,
                     synthetic_measles_covariates, toy_panel_model)
from .params import NATURAL, ParamVector
from .pfilter import panel_loglik
from .rngstream import TAG_SWARM, derive_seed, substream

_DATA_SEED = 11
_START_SEED = 12
_RUN_SEED = 13
_EVAL_SEED = 14
_CLONING_SEED = 31


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_manifest(cfg: ExperimentConfig, out_dir) -> None:
    manifest = {
        "preset": cfg.preset,
        "seed": cfg.seed,
        "config_sha256": cfg.config_hash(),
        "package": "panelfilter",
        "version": __version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _mif_config(cfg: ExperimentConfig, marginalize: bool,
                track_diagnostics: bool = False,
                eval_schedule=None) -> MifConfig:
    cooling = CoolingSchedule(kind=cfg["cooling.kind"], factor=cfg["cooling.factor"],
                              delta=cfg["cooling.delta"])
    return MifConfig(
        M=cfg["mif.M"], J=cfg["mif.J"], marginalize=marginalize, cooling=cooling,
        sigma_dyn=cfg["mif.sigma_dyn"], sigma_ivp=cfg["mif.sigma_ivp"],
        eval_schedule=cfg["mif.eval_schedule"] if eval_schedule is None else eval_schedule,
        eval_J=cfg["mif.eval_J"], eval_reps=cfg["mif.eval_reps"],
        track_diagnostics=track_diagnostics,
    )


def _algorithms(cfg: ExperimentConfig) -> list:
    choice = cfg["mif.algorithms"]
    out = []
    if choice in ("both", "mpif"):
        out.append(("mpif", True))
    if choice in ("both", "pif"):
        out.append(("pif", False))
    return out


# ---------------------------------------------------------------- gompertz


def _gompertz_setup(cfg: ExperimentConfig):
    U = cfg["U"] if cfg["U"] is not None else 5
    N = cfg["N"] if cfg["N"] is not None else 50
    model = gompertz_panel_model(U, N)
    truth = gompertz_generating_params(
        model, r=cfg["model.r"], sigma_sq=cfg["model.sigma_sq"], tau_sq=cfg["model.tau_sq"])
    data = simulate_panel(model, truth, derive_seed(cfg.seed, _DATA_SEED))
    return model, truth, data


def run_gompertz_bench(cfg: ExperimentConfig, out_dir, threads: int = 1) -> None:
    model, truth, data = _gompertz_setup(cfg)
    starts = sample_hypercube_starts(truth, cfg["mif.n_starts"],
                                     derive_seed(cfg.seed, _START_SEED))

    def exact_eval(fit):
        mean = fit.means[-1]
        return gompertz_panel_loglik(data, mean[0], mean[1], mean[2:])

    exact_max = math.nan
    if cfg["exact_max.enabled"]:
        mle = maximize_exact(data, truth["r"], truth["sigma_sq"],
                             [truth.values[model.layout.unit_block(u).start]
                              for u in range(model.n_units)],
                             restarts=cfg["exact_max.restarts"],
                             seed=derive_seed(cfg.seed, _EVAL_SEED))
        exact_max = mle.loglik

    summary_rows = []
    trace_rows = []
    diag_rows = []
    for name, marginalize in _algorithms(cfg):
        mif_cfg = _mif_config(cfg, marginalize, track_diagnostics=cfg["mif.diagnostics"])
        batch = run_multistart(model, data, starts, mif_cfg,
                               seed=derive_seed(cfg.seed, _RUN_SEED),
                               threads=threads, final_eval=exact_eval)
        for i, fit in enumerate(batch.fits):
            if fit is None:
                summary_rows.append([name, i, math.nan, exact_max, 0, batch.errors.get(i, "")])
                continue
            summary_rows.append([name, i, batch.final_logliks[i], exact_max,
                                 fit.n_failures, ""])
            for row in fit.trace_rows():
                trace_rows.append([name, i, row["iteration"], row["param"],
                                   row["mean"], row["sd"]])
            if fit.diagnostics:
                for rec in fit.diagnostics:
                    for n in range(rec.cond_logliks.shape[0]):
                        diag_rows.append([
                            name, i, rec.m, rec.unit, n + 1, rec.cond_logliks[n],
                            rec.ess[n],
                            rec.unique_ancestors[n] if rec.unique_ancestors is not None else "",
                            int(rec.failures[n]),
                        ])

    data.to_csv(os.path.join(out_dir, "data.csv"))
    _write_csv(os.path.join(out_dir, "summary.csv"),
               ["algorithm", "start", "final_loglik", "kalman_exact_max", "n_failures", "error"],
               summary_rows)
    _write_csv(os.path.join(out_dir, "trace.csv"),
               ["algorithm", "start", "iteration", "param", "mean", "sd"],
               trace_rows)
    _write_csv(os.path.join(out_dir, "diagnostics.csv"),
               ["algorithm", "start", "m", "unit", "n", "cond_loglik", "ess",
                "unique_ancestors", "failure_flag"],
               diag_rows)


# ---------------------------------------------------------------- depletion


def run_depletion(cfg: ExperimentConfig, out_dir, threads: int = 1) -> None:
    U = cfg["U"] if cfg["U"] is not None else 2
    N = cfg["N"] if cfg["N"] is not None else 100
    psi = cfg["model.psi"]
    if len(psi) != U:
        raise ConfigError([f"model.psi: expected {U} values, got {len(psi)}"])
    model = toy_panel_model(U, N)
    truth = ParamVector(model.layout, np.asarray(psi), NATURAL)
    data = simulate_panel(model, truth, derive_seed(cfg.seed, _DATA_SEED))

    J = cfg["mif.J"]
    rng = substream(cfg.seed, TAG_SWARM)
    swarm0 = cfg["prior.mean"] + cfg["prior.sd"] * rng.standard_normal((J, model.layout.dim))
    kernel = PerturbKernel.from_defaults(model.layout, cfg["mif.sigma_dyn"], cfg["mif.sigma_ivp"])

    names = model.layout.names
    summary_rows, trace_rows, diag_rows = [], [], []
    for name, marginalize in (("mpif", True), ("pif", False)):
        swarm = model.layout.to_estimation(swarm0.copy())
        for it, label in ((0, "before"),):
            mean = model.layout.from_estimation(swarm).mean(axis=0)
            sd = swarm.std(axis=0)
            trace_rows += [[name, it, p, mean[i], sd[i]] for i, p in enumerate(names)]
        swarm, _, rec = run_unit_pass(model, data, swarm, 0, 1, kernel, 1.0,
                                      marginalize, seed=derive_seed(cfg.seed, _RUN_SEED),
                                      track_ancestry=True, track_unique=True)
        mean = model.layout.from_estimation(swarm).mean(axis=0)
        sd = swarm.std(axis=0)
        trace_rows += [[name, 1, p, mean[i], sd[i]] for i, p in enumerate(names)]
        counts = rec.unique_counts
        for i, p in enumerate(names):
            summary_rows.append([name, p, counts[-1, i], counts[:, i].min()])
        for n in range(counts.shape[0]):
            for i, p in enumerate(names):
                diag_rows.append([name, rec.unit, n, p, counts[n, i],
                                  rec.unique_ancestors[n - 1] if n >= 1 else J])

    data.to_csv(os.path.join(out_dir, "data.csv"))
    _write_csv(os.path.join(out_dir, "summary.csv"),
               ["algorithm", "param", "final_unique_count", "min_unique_count"],
               summary_rows)
    _write_csv(os.path.join(out_dir, "trace.csv"),
               ["algorithm", "iteration", "param", "mean", "sd"], trace_rows)
    _write_csv(os.path.join(out_dir, "diagnostics.csv"),
               ["algorithm", "unit", "n", "param", "unique_count", "unique_ancestors"],
               diag_rows)


# ---------------------------------------------------------------- cloning


def _diag1_likelihood(U: int, rho: float, seed: int) -> GaussianPanelLikelihood:
    cov = np.array([[1.0, rho], [rho, 1.0]])
    lam = np.linalg.inv(cov)
    rng = substream(seed, _CLONING_SEED)
    phi_star = float(rng.standard_normal())
    optima = np.column_stack([np.full(U, phi_star), rng.standard_normal(U)])
    return GaussianPanelLikelihood(optima=optima, precisions=np.array([lam] * U))


def run_gaussian_cloning(cfg: ExperimentConfig, out_dir, threads: int = 1) -> None:
    U = cfg["U"] if cfg["U"] is not None else 2
    rho = cfg["cloning.rho"]
    M = cfg["cloning.M"]
    lik = _diag1_likelihood(U, rho, cfg.seed)
    mle = mle_normal_equations(lik)
    belief0 = DiagonalBelief(mean=np.zeros(U + 1), precisions=np.ones(U + 1))

    modes = [("marginalized", {}), ("perturbed", {"sigma1_sq": cfg["cloning.sigma1_sq"],
                                                  "delta": cfg["cloning.delta"]})]
    if U <= 64:
        modes.append(("full", {}))

    summary_rows, trace_rows = [], []
    for mode, kwargs in modes:
        trace = iterate(belief0, lik, M, mode=mode, record_cov=True, **kwargs)
        dist = float(np.linalg.norm(trace.means[-1] - mle))
        summary_rows.append([mode, M, dist, trace.cov_norms[-1]])
        stride = max(1, M // 200)
        final = trace.means.shape[0] - 1
        for m in range(final + 1):
            if m % stride and m != final:
                continue
            var_diag = np.diag(trace.covariances[m])
            for coord in range(U + 1):
                trace_rows.append([m, mode, coord, trace.means[m, coord],
                                   var_diag[coord]])

    # Two-parameter single-unit traces behind the data-cloning comparison figure.
    fig_lik = _diag1_likelihood(1, rho, cfg.seed)
    fig_prior = DiagonalBelief(mean=np.array([2.0, -2.0]), precisions=np.array([0.5, 0.5]))
    diag_rows = []
    for mode in ("full", "marginalized"):
        trace = iterate(fig_prior, fig_lik, 20, mode=mode, record_cov=True)
        for m, cov in enumerate(trace.covariances):
            diag_rows.append([m, mode, trace.means[m, 0], trace.means[m, 1],
                              cov[0, 0], cov[0, 1], cov[1, 1]])

    _write_csv(os.path.join(out_dir, "summary.csv"),
               ["mode", "M", "dist_to_mle", "cov_norm"], summary_rows)
    _write_csv(os.path.join(out_dir, "trace.csv"),
               ["m", "mode", "coord", "mean", "var"], trace_rows)
    _write_csv(os.path.join(out_dir, "diagnostics.csv"),
               ["m", "mode", "center_phi", "center_psi", "cov11", "cov12", "cov22"],
               diag_rows)


# ---------------------------------------------------------------- measles


def _measles_setup(cfg: ExperimentConfig):
    pops = {f"city{i + 1}": p for i, p in enumerate(cfg["measles.populations"])}
    n_weeks = cfg["measles.n_weeks"]
    t0 = cfg["measles.t0"]
    covs = synthetic_measles_covariates(pops, t0, n_weeks * 7.0 / 365.25,
                                        birth_rate=cfg["measles.birth_rate"])
    model = measles_panel_model(cfg["measles.variant"], covs, n_weeks, t0)
    truth = measles_default_params(model)
    data = simulate_panel(model, truth, derive_seed(cfg.seed, _DATA_SEED))
    return model, truth, data, covs


def measles_start_box(truth: ParamVector):
    """Per-coordinate start bounds honoring each parameter's constraint.

    Latent/infectious period rates get a narrower box than the other positive
    parameters: they span the likelihood ridge against R0, and searches at
    smoke-test iteration counts should start on the right side of it.
    """
    layout = truth.layout
    lower = truth.values.copy()
    upper = truth.values.copy()
    trs = layout.flat_transforms()
    for i, name in enumerate(layout.names):
        c = truth.values[i]
        tr = trs[i]
        base = name.split("[")[0]
        if tr == "log":
            if base in ("mu_EI", "mu_IR"):
                lower[i], upper[i] = c / 1.4, c * 1.4
            else:
                lower[i], upper[i] = c / 2.0, c * 2.0
        elif tr == "logit":
            lower[i], upper[i] = max(c / 2.0, 0.05), min(c * 1.6, 0.9)
        elif tr.startswith("simplex:"):
            if base == "R_0":
                lower[i] = upper[i] = c      # remainder slot, rebuilt after sampling
            else:
                lower[i], upper[i] = c / 2.0, min(c * 2.0, 0.25)
        else:
            half = 0.5 if abs(c) > 5 else 0.05
            lower[i], upper[i] = c - half, c + half
    return lower, upper


def _measles_starts(truth: ParamVector, count: int, seed: int) -> list:
    lower, upper = measles_start_box(truth)
    starts = sample_hypercube_starts(truth, count, seed, lower=lower, upper=upper)
    layout = truth.layout
    fixed = []
    for s in starts:
        vals = s.values.copy()
        for start, length in layout.simplex_blocks():
            head = vals[start:start + length - 1]
            vals[start + length - 1] = 1.0 - head.sum()
        fixed.append(ParamVector(layout, vals, NATURAL))
    return fixed


def run_measles_sim(cfg: ExperimentConfig, out_dir, threads: int = 1) -> None:
    model, truth, data, covs = _measles_setup(cfg)
    n_runs = cfg["mif.n_starts"]
    starts = _measles_starts(truth, n_runs, derive_seed(cfg.seed, _START_SEED))
    schedule = cfg["mif.eval_schedule"] or (1, cfg["mif.M"])
    mif_cfg = _mif_config(cfg, marginalize=True, eval_schedule=tuple(schedule))
    batch = run_multistart(model, data, starts, mif_cfg,
                           seed=derive_seed(cfg.seed, _RUN_SEED), threads=threads)

    summary_rows, trace_rows = [], []
    for i, fit in enumerate(batch.fits):
        if fit is None:
            summary_rows.append([i, math.nan, math.nan, math.nan, math.nan, "",
                                 batch.errors.get(i, "")])
            continue
        first_m, first_ll, first_se = fit.loglik_trace[0]
        last_m, last_ll, last_se = fit.loglik_trace[-1]
        summary_rows.append([i, first_ll, last_ll, first_se, last_se,
                             int(last_ll > first_ll), ""])
        for row in fit.trace_rows():
            trace_rows.append([i, row["iteration"], row["param"], row["mean"], row["sd"]])

    data.to_csv(os.path.join(out_dir, "data.csv"))
    save_covariates_csv(covs, os.path.join(out_dir, "covariates.csv"), time_col="year")
    _write_csv(os.path.join(out_dir, "summary.csv"),
               ["run", "loglik_first", "loglik_last", "se_first", "se_last",
                "improved", "error"],
               summary_rows)
    _write_csv(os.path.join(out_dir, "trace.csv"),
               ["run", "iteration", "param", "mean", "sd"], trace_rows)
    _write_csv(os.path.join(out_dir, "diagnostics.csv"),
               ["run", "unit", "n", "cond_loglik", "ess", "failure_flag"], [])


# ---------------------------------------------------------------- dispatch


_PRESET_RUNNERS = {
    "gompertz-bench": run_gompertz_bench,
    "custom": run_gompertz_bench,
    "depletion": run_depletion,
    "gaussian-cloning": run_gaussian_cloning,
    "measles-sim": run_measles_sim,
}


def run_preset(cfg: ExperimentConfig, out_dir, threads: int = 1) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _PRESET_RUNNERS[cfg.preset](cfg, out_dir, threads)
    _write_manifest(cfg, out_dir)


def simulate_only(cfg: ExperimentConfig, out_dir) -> None:
    """Data generation for the config's model; writes data.csv (and covariates)."""
    os.makedirs(out_dir, exist_ok=True)
    if cfg.preset in ("gompertz-bench", "custom"):
        _, _, data = _gompertz_setup(cfg)
    elif cfg.preset == "depletion":
        U = cfg["U"] if cfg["U"] is not None else 2
        N = cfg["N"] if cfg["N"] is not None else 100
        model = toy_panel_model(U, N)
        truth = ParamVector(model.layout, np.asarray(cfg["model.psi"]), NATURAL)
        data = simulate_panel(model, truth, derive_seed(cfg.seed, _DATA_SEED))
    elif cfg.preset == "measles-sim":
        _, _, data, covs = _measles_setup(cfg)
        save_covariates_csv(covs, os.path.join(out_dir, "covariates.csv"), time_col="year")
    else:
        raise ConfigError([f"preset {cfg.preset!r} has no simulation step"])
    data.to_csv(os.path.join(out_dir, "data.csv"))
    _write_manifest(cfg, out_dir)


def loglik_only(cfg: ExperimentConfig, out_dir) -> None:
    """Likelihood evaluation at the config's model parameters; writes summary.csv."""
    os.makedirs(out_dir, exist_ok=True)
    if cfg.preset in ("gompertz-bench", "custom"):
        model, truth, data = _gompertz_setup(cfg)
        res = panel_loglik(model, data, truth, cfg["mif.eval_J"], cfg["mif.eval_reps"],
                           seed=derive_seed(cfg.seed, _EVAL_SEED))
        exact = gompertz_panel_loglik(
            data, truth["r"], truth["sigma_sq"],
            [truth.values[model.layout.unit_block(u).start] for u in range(model.n_units)])
        rows = [[res.loglik, res.se, exact, res.loglik - exact, res.n_failures]]
        header = ["loglik", "se", "kalman_exact", "diff", "n_failures"]
    elif cfg.preset == "measles-sim":
        model, truth, data, _ = _measles_setup(cfg)
        res = panel_loglik(model, data, truth, cfg["mif.eval_J"], cfg["mif.eval_reps"],
                           seed=derive_seed(cfg.seed, _EVAL_SEED))
        rows = [[res.loglik, res.se, math.nan, math.nan, res.n_failures]]
        header = ["loglik", "se", "kalman_exact", "diff", "n_failures"]
    else:
        raise ConfigError([f"preset {cfg.preset!r} has no likelihood evaluation step"])
    _write_csv(os.path.join(out_dir, "summary.csv"), header, rows)
    _write_manifest(cfg, out_dir)
