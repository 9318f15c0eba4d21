"""High-dimensional MANOVA with a U-type statistic, sample-splitting
variance estimation, multiplier-bootstrap calibration and K-sample tests."""

__version__ = "0.1.0"

from .calibrate import (TestOutcome, clt_pvalue, condclt_check, mixture_oracle_quantile,
                        multiplier_bootstrap)
from .errors import (DominanceError, InfeasibleError, LoadError, ManovaError, NumericError,
                     SingularityError, ValidationError)
from .featurewise import FeaturewiseReport, featurewise_tests, holm
from .ksample import (GroupedSample, Kernel, KsampleCoefficients, kernel_u_nk,
                      ksample_coefficients, ksample_test, two_sample_u, u_nk)
from .model import (ContrastMatrix, ProjectionSet, RegressionData, build_projections,
                    leverage_report, load_csv)
from .sim import (ExperimentConfig, InnovationDesign, density_trace, gen_design_and_coefficients,
                  gen_example1, gen_example3, load_config, run_experiment, variance_study)
from .stat import decompose_null, dichotomy_diagnostics, q_statistic, u_statistic
from .theta import ThetaSystem, solve_theta
from .varest import (VarianceEstimate, oracle_estimator, split_estimator, srivastava_bias,
                     srivastava_estimator)

__all__ = [name for name in dir() if not name.startswith("_")]
