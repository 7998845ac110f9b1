"""Rate-equation simulation and fitting of stimulated emission from NV- centres."""

from .errors import (
    ConvergenceError,
    DomainError,
    FitError,
    FitQualityError,
    IntegrationError,
    NumericalError,
    NvStimexError,
)
from .model import (
    IntegratorControls,
    ModelParams,
    PopulationState,
    PulseTrain,
    PumpDrive,
    RateConstants,
    Trajectory,
    derivatives,
    emission_signal,
    integrate,
    min_relative_emission,
    photon_energy,
    pulse_rate_at,
    rate_from_intensity,
    relative_emission,
    relax_to_steady,
    simulate_pulse_train,
    steady_state_analytic,
)
from .spectra import (
    Regime,
    SpectrumCurve,
    band_average,
    classify_regime,
    load_spectrum,
    rate_curve_from_spectrum,
    smooth_running_average,
    synthetic_nv_spectrum,
)

__version__ = "0.1.0"
