"""panelfilter: likelihood-based inference for panels of state-space models.

The package provides a bootstrap particle filter with systematic resampling,
a unit-looping iterated filter whose marginalization switch controls whether
off-unit parameters are resampled, exact Kalman oracles for the Gompertz
benchmark, closed-form Gaussian data-cloning recursions, a model zoo, and a
batch experiment CLI.
"""

__version__ = "0.1.0"

from .covariates import CovariateTable, load_covariates_csv, save_covariates_csv
from .errors import (CapabilityError, ConfigError, DomainError, FilteringError,
                     LayoutError, ModelError, PanelFilterError)
from .kalman import (ExactMleResult, LinearGaussianSSM, gompertz_panel_loglik,
                     gompertz_to_lgssm, gompertz_unit_loglik, kalman_loglik,
                     maximize_exact)
from .cloning import (CloningTrace, DiagonalBelief, FullBelief,
                      GaussianPanelLikelihood, bayes_update_full,
                      check_condition_eq7, convolve_gaussian, iterate,
                      lemma1_norm_check, marginalized_update,
                      mle_normal_equations, perturbed_marginalized_update)
from .mif import (CoolingSchedule, FitResult, MifConfig, MultistartResult,
                  PerturbKernel, mif_panel, perturb_swarm, run_multistart, run_unit_pass,
                  sample_hypercube_starts, unique_particle_counts)
from .model import PanelData, PanelModel, UnitModel, simulate_panel
from .params import (ESTIMATION, NATURAL, ParamLayout, ParamSpec, ParamVector,
                     flatten, from_estimation_scale, to_estimation_scale,
                     unflatten)
from .pfilter import (PanelLoglikResult, PfilterResult, Swarm, logmeanexp,
                      panel_loglik, pfilter_unit, systematic_resample,
                      write_diagnostics_csv)

__all__ = [
    "__version__",
    "CovariateTable", "load_covariates_csv", "save_covariates_csv",
    "PanelFilterError", "LayoutError", "DomainError", "ModelError",
    "FilteringError", "ConfigError", "CapabilityError",
    "LinearGaussianSSM", "kalman_loglik", "gompertz_to_lgssm",
    "gompertz_unit_loglik", "gompertz_panel_loglik", "maximize_exact",
    "ExactMleResult",
    "GaussianPanelLikelihood", "DiagonalBelief", "FullBelief", "CloningTrace",
    "bayes_update_full", "marginalized_update", "perturbed_marginalized_update",
    "convolve_gaussian", "check_condition_eq7", "iterate", "lemma1_norm_check",
    "mle_normal_equations",
    "CoolingSchedule", "PerturbKernel", "MifConfig", "FitResult",
    "MultistartResult", "mif_panel", "run_unit_pass", "run_multistart",
    "sample_hypercube_starts", "unique_particle_counts", "perturb_swarm",
    "UnitModel", "PanelModel", "PanelData", "simulate_panel",
    "ParamLayout", "ParamSpec", "ParamVector", "NATURAL", "ESTIMATION",
    "flatten", "unflatten", "to_estimation_scale", "from_estimation_scale",
    "Swarm", "PfilterResult", "PanelLoglikResult", "systematic_resample",
    "pfilter_unit", "panel_loglik", "logmeanexp", "write_diagnostics_csv",
]
