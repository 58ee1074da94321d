"""Kin-cohort penetrance estimation with a semiparametric mixture hazard model."""

from .data import (CsvSchema, Dataset, IngestReport, MendelianRules, RelativeRecord,
                   assign_carrier_probability, parse_relatives, stratum_mask, write_relatives)
from .em import (EmConfig, FitResult, ModelSpec, Params, e_step, fit, fit_multigene,
                 m_step_baseline, m_step_coeffs, observed_loglik, profiled_hessian,
                 profiled_objective, profiled_score)
from .errors import (IdentifiabilityError, KinriskError, NumericalError, ParseError,
                     SingularHessianError, ValidationError)
from .inference import (BicScan, BootstrapResult, HrTable, bic_scan, contrast_vector, hr_table,
                        multiplier_bootstrap, parse_contrast)
from .risk import (ExternalBaseline, RiskCurve, calibrate_external_baseline, conditional_risk,
                   marginal_risk, read_curves, stratified_marginal, write_curves)
from .simulate import (ReplicationReport, SimScenario, calibrate_censoring, gen_dataset,
                       replicate, true_risk)
from .spline import SplineBasis, eval_basis, place_knots
from .trial import TrialDesign, design_table, sample_size, window_risk

__version__ = "0.1.0"
