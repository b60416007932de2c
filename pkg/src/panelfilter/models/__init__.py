from .toy import toy_panel_model
from .gompertz import (gompertz_dmeasure, gompertz_generating_params,
                       gompertz_panel_model, gompertz_step)
from .measles import (MEASLES_VARIANTS, eulermultinom, gamma_noise_increment,
                      iota_loglog, measles_default_params, measles_panel_model,
                      measles_rates, synthetic_measles_covariates)

__all__ = [
    "toy_panel_model",
    "gompertz_step", "gompertz_dmeasure", "gompertz_panel_model",
    "gompertz_generating_params",
    "eulermultinom", "gamma_noise_increment", "iota_loglog", "measles_rates",
    "measles_panel_model", "measles_default_params", "synthetic_measles_covariates",
    "MEASLES_VARIANTS",
]
