"""Classical simulator of a phase-estimation route to thermal rate constants.

Modules
-------
qreg        register, grid encoding and seeded Born sampling
gates       gate kernels and the gate-assembled QFT
propagator  chirp-Fourier-chirp split-operator step
pointer     pointer register, conditional evolution and peak fitting
amplitudes  signed amplitudes from Hadamard interference
rate        flux overlaps, correlation function and rate constant
oracle      dense reference implementation
pipeline    end-to-end sampled rate with bootstrap errors
estimators  scikit-learn style wrappers
cli         the ``fluxq`` command
"""
__version__ = "0.1.0"

from .errors import (ConfigurationError, EmptySpectrumError, FluxqError, GridRangeError,
                     InvariantError, NumericError, ResourceCapError, SignInconsistencyError)
from .qreg import GridSpec, Shot, StateVector, measure_all, new_register
from .propagator import PotentialSpec, SplitStepPlan, propagate, split_step
from .pointer import PointerConfig, SpectrumEstimate, estimate_spectrum
from .amplitudes import SignProtocolRecord, SignedAmplitudeTable, solve_signs
from .rate import DividingSurface, PlateauWarning, RateResult, SpectralInput, rate_constant
from .pipeline import SamplingPlan, run_sampled_rate
from .estimators import (OracleRateEstimator, PhaseEstimationSpectrum, SplitStepPropagator,
                         ThermalRateEstimator)

__all__ = [
    "ConfigurationError", "EmptySpectrumError", "FluxqError", "GridRangeError", "InvariantError",
    "NumericError", "ResourceCapError", "SignInconsistencyError", "GridSpec", "Shot",
    "StateVector", "measure_all", "new_register", "PotentialSpec", "SplitStepPlan", "propagate",
    "split_step", "PointerConfig", "SpectrumEstimate", "estimate_spectrum", "SignProtocolRecord",
    "SignedAmplitudeTable", "solve_signs", "DividingSurface", "PlateauWarning", "RateResult",
    "SpectralInput", "rate_constant", "SamplingPlan", "run_sampled_rate", "OracleRateEstimator",
    "PhaseEstimationSpectrum", "SplitStepPropagator", "ThermalRateEstimator", "__version__",
]
