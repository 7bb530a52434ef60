"""Shaped microwave pulse design and readout simulation for NV-center ensembles.

Unit conventions used throughout the library: times in microseconds and
frequencies, detunings, Rabi amplitudes and pulse coefficients all in
cyclic units (MHz).  Hamiltonian assembly applies the single factor of
2 pi, so a resonant flat drive at Rabi frequency R drives a pi rotation
in 1/(2 R) us.  The photophysics and sensitivity modules state their own
units (ms and SI) where they differ.
"""

__version__ = "0.1.0"

from .hyperfine import (
    ConfigError,
    HyperfineConfig,
    EnsembleMember,
    sample_representative_ensemble,
)
from .pulses import PulseCoefficients, FlatDrive, envelope, max_rabi, flat_pi_pulse
from .propagators import (
    NumericalError,
    Propagator,
    hamiltonian_fourier_components,
    floquet_propagator,
    oracle_propagator,
)
from .fidelity import (
    state_transfer_fidelity,
    multi_level_average_fidelity,
    ensemble_objective,
)
from .optimizer import OptimizerConfig, optimize, init_amplitudes
from .analysis import fidelity_map, simulate_odmr, contrast_slope
from .sensitivity import SensitivityInputs, sensitivity
from .photophysics import (
    RateModelConfig,
    RateModelState,
    PulseTrainSpec,
    beam_intensity,
    rate_evolve,
    apply_ideal_pi,
    reinit_time,
    pulse_train,
    contrast_vs_laser_duration,
)
