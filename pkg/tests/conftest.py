import numpy as np
import pytest

from nvpulse.hyperfine import (
    EnsembleMember,
    HyperfineConfig,
    sample_representative_ensemble,
)
from nvpulse.pulses import PulseCoefficients


@pytest.fixture(scope="session")
def report(request):
    """Writer that bypasses output capture, for per-criterion verdicts."""
    terminal = request.config.pluginmanager.getplugin("terminalreporter")

    def write(line: str):
        if terminal is not None:
            terminal.write_line(line)
        else:
            print(line)

    return write


@pytest.fixture
def k3_config():
    return HyperfineConfig(levels=3, splitting_mhz=2.16)


@pytest.fixture
def k1_config():
    return HyperfineConfig(levels=1, splitting_mhz=None)


@pytest.fixture
def small_ensemble():
    return sample_representative_ensemble(1.0, 0.10, n_detuning=4, n_amplitude=4)


@pytest.fixture
def center_member():
    return EnsembleMember(delta_mhz=0.0, alpha=1.0)


def random_pulse(rng, n_f=5, t_p=1.85, peak_mhz=1.3):
    """Random pulse rescaled to a fixed peak Rabi frequency."""
    from nvpulse.pulses import max_rabi

    a = rng.uniform(-1.0, 1.0, size=(2, n_f))
    pulse = PulseCoefficients(a_x=a[0], a_y=a[1], t_p=t_p)
    scale = peak_mhz / max_rabi(pulse)
    return PulseCoefficients(a_x=a[0] * scale, a_y=a[1] * scale, t_p=t_p)
