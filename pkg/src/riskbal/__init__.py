"""Risk-stratified cohort rebalancing for treatment-specific Cox models."""

__version__ = "0.1.0"

from .cohort import ALONE, CHEMO, Cohort, CovariateSchema, impute, load_cohort, write_cohort
from .cox import CoxModel, FitConfig, fit
from .matching import ONE_TO_ONE, RELAXED, balance_cohort, solve_one_to_one, solve_relaxed
from .metrics import auc_at, harrells_c, ici_at
from .stratify import build_scheme, stratify
from .synth import SynthSpec, generate
from .validation import bootstrap_validate, stratified_external_eval, tune_alpha

__all__ = [
    "ALONE", "CHEMO", "Cohort", "CovariateSchema", "impute", "load_cohort", "write_cohort",
    "CoxModel", "FitConfig", "fit", "ONE_TO_ONE", "RELAXED", "balance_cohort",
    "solve_one_to_one", "solve_relaxed", "auc_at", "harrells_c", "ici_at", "build_scheme",
    "stratify", "SynthSpec", "generate", "bootstrap_validate", "stratified_external_eval",
    "tune_alpha",
]
