"""Spectral split-step solvers and diagnostics for damped and stochastic NLS."""

from .config import ConfigError, ExperimentConfig, parse_config
from .diagnostics import (StrichartzPair, burkholder_ratio, default_pair, dissipation_ledger_check,
                          duhamel_residual, is_admissible, mass_ledger_check, maximal_function,
                          maximal_function_series, scattering_residual, strichartz_time_norm)
from .ensemble import EnsembleSpec, gamma_sweep, omega_moment, run_ensemble
from .flows import (DampedLinearStepper, DampedNLSStepper, DampingSpec, FlowError, FlowParams,
                    NLSStepper, damped_linear_propagate, damped_nls_step, evolve, nls_step)
from .grid import (ComplexField, FieldFormatError, GridError, SpatialGrid, SpectralMultiplier,
                   free_propagate, gaussian, lp_norm, make_grid, normalized)
from .record import RecordError, TrajectoryRecord, integrate
from .stochastic import (BrownianPath, ItoSNLSStepper, NoiseSpec, SNLSStepper, sample_path,
                         snls_step, stochastic_convolution_increment)

__version__ = "0.1.0"
