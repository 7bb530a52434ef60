"""Shot-noise-limited DC magnetic sensitivity of pulsed ODMR readout.

For a readout window t_R, reinitialization window t_I and fluorescence
recovery constant tau_R, the photon budget per cycle is reduced both by
the duty cycle and by the decaying information content of the readout
window, giving

    eta = sqrt(2 t_R t_I) / (gamma_e C' tau_R (1 - exp(-t_R / tau_R)) sqrt(R_0))

with C' the slope of the ODMR contrast at the steepest point (1/Hz),
R_0 the photon collection rate at full initialization (1/s) and gamma_e
the electron gyromagnetic ratio (Hz/T).  Everything in this module is in
SI units; eta comes out in T/sqrt(Hz).
"""

import math
from dataclasses import dataclass

from .hyperfine import ConfigError

GAMMA_E_HZ_PER_T = 28.024e9


@dataclass(frozen=True)
class SensitivityInputs:
    slope_per_hz: float         # C', contrast change per Hz of detuning
    photon_rate: float          # R_0, photons/s
    readout_time_s: float       # t_R
    init_time_s: float          # t_I
    recovery_time_s: float      # tau_R
    gyromagnetic_hz_per_t: float = GAMMA_E_HZ_PER_T

    def __post_init__(self):
        fields = {
            "slope_per_hz": self.slope_per_hz,
            "photon_rate": self.photon_rate,
            "readout_time_s": self.readout_time_s,
            "init_time_s": self.init_time_s,
            "recovery_time_s": self.recovery_time_s,
            "gyromagnetic_hz_per_t": self.gyromagnetic_hz_per_t,
        }
        for name, value in fields.items():
            if not value > 0:
                raise ConfigError(f"{name} must be positive, got {value!r}")


def information_factor(t_r: float, tau_r: float) -> float:
    """tau_R (1 - exp(-t_R/tau_R)) / t_R: fraction of the readout window
    that carries spin information.  Tends to 1 for t_R << tau_R."""
    return tau_r * (1.0 - math.exp(-t_r / tau_r)) / t_r


def sensitivity(inputs: SensitivityInputs) -> float:
    """Shot-noise sensitivity eta in T/sqrt(Hz)."""
    num = math.sqrt(2.0 * inputs.readout_time_s * inputs.init_time_s)
    den = (
        inputs.gyromagnetic_hz_per_t
        * inputs.slope_per_hz
        * inputs.recovery_time_s
        * (1.0 - math.exp(-inputs.readout_time_s / inputs.recovery_time_s))
        * math.sqrt(inputs.photon_rate)
    )
    return num / den
