"""Control pulse parameterizations and their time-domain envelopes.

A shaped pulse of duration t_p is expanded in a sine basis,

    I(t) = sum_j 2 a_jx sin(j w_f t),   Q(t) = sum_j 2 a_jy sin(j w_f t),

with fundamental w_f = 2 pi / (2 t_p), i.e. period 2 t_p.  Both
quadratures vanish at t = 0, t_p and 2 t_p, so the pulse switches on and
off smoothly.  Amplitudes a_jx, a_jy are cyclic frequencies in MHz, as
is every envelope in this module; the instantaneous Rabi frequency is
sqrt(I^2 + Q^2).  The factor 2 pi appears once, where Hamiltonians are
assembled.

Flat drives (single- or multi-tone rectangular pulses) are described by
their exact rotating-frame envelopes.  A lab-frame tone
cos((w_D + 2 pi f_n) t + phi_n) becomes, in the frame rotating at the
carrier w_D,

    I_n(t) = R cos(2 pi f_n t + phi_n),  Q_n(t) = -R sin(2 pi f_n t + phi_n)

with R the per-tone Rabi frequency.  Multi-tone envelopes are generally
not 2 t_p-periodic, so flat drives are propagated by time stepping
rather than by the Floquet construction.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .hyperfine import ConfigError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class PulseCoefficients:
    """Sine-basis amplitudes (MHz) and pulse duration (us)."""

    a_x: np.ndarray
    a_y: np.ndarray
    t_p: float
    carrier_mhz: float = 2870.0

    def __post_init__(self):
        object.__setattr__(self, "a_x", np.asarray(self.a_x, dtype=float))
        object.__setattr__(self, "a_y", np.asarray(self.a_y, dtype=float))
        if self.a_x.ndim != 1 or self.a_x.shape != self.a_y.shape:
            raise ConfigError("a_x and a_y must be 1-D arrays of equal length")
        if not self.t_p > 0:
            raise ConfigError("t_p must be positive")

    @property
    def n_f(self) -> int:
        return len(self.a_x)

    @property
    def omega_f(self) -> float:
        """Fundamental angular frequency 2 pi / (2 t_p), rad/us."""
        return np.pi / self.t_p

    @property
    def bandwidth_mhz(self) -> float:
        """Highest envelope harmonic N_f * w_f / (2 pi), MHz."""
        return self.n_f / (2.0 * self.t_p)


def envelope(pulse: PulseCoefficients, t):
    """Evaluate (I, Q) in MHz at time(s) t (us)."""
    t = np.asarray(t, dtype=float)
    j = np.arange(1, pulse.n_f + 1)
    basis = 2.0 * np.sin(np.multiply.outer(t, j) * pulse.omega_f)
    return basis @ pulse.a_x, basis @ pulse.a_y


def _envelope_mag_sq(pulse: PulseCoefficients, t):
    i_env, q_env = envelope(pulse, t)
    return i_env**2 + q_env**2


def max_rabi(pulse: PulseCoefficients) -> float:
    """Maximum instantaneous Rabi frequency over the pulse, MHz.

    The envelope is band-limited to harmonic N_f, so a dense scan
    followed by a bounded 1-D refinement pins the peak to machine
    precision.
    """
    if not np.any(pulse.a_x) and not np.any(pulse.a_y):
        return 0.0
    n_scan = 64 * pulse.n_f + 1
    ts = np.linspace(0.0, pulse.t_p, n_scan)
    mags = _envelope_mag_sq(pulse, ts)
    k = int(np.argmax(mags))
    lo = ts[max(k - 1, 0)]
    hi = ts[min(k + 1, n_scan - 1)]
    res = minimize_scalar(
        lambda t: -_envelope_mag_sq(pulse, t),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-13 * pulse.t_p},
    )
    best = max(mags[k], -res.fun)
    return float(np.sqrt(best))


@dataclass(frozen=True)
class FlatDrive:
    """Rectangular multi-tone drive.

    rabi_mhz: per-tone Rabi frequency.
    duration_us: pulse length.
    offsets_mhz: tone offsets from the carrier (0 for a plain pulse,
        (-split, 0, +split) for a hyperfine three-tone drive).
    phases_rad: per-tone phases, same length as offsets_mhz.
    """

    rabi_mhz: float
    duration_us: float
    offsets_mhz: tuple = (0.0,)
    phases_rad: tuple | None = None
    carrier_mhz: float = 2870.0

    def __post_init__(self):
        if self.phases_rad is None:
            object.__setattr__(self, "phases_rad", (0.0,) * len(self.offsets_mhz))
        if len(self.phases_rad) != len(self.offsets_mhz):
            raise ConfigError("phases_rad and offsets_mhz must have equal length")
        if not self.duration_us > 0:
            raise ConfigError("duration_us must be positive")

    @property
    def t_p(self) -> float:
        return self.duration_us


def flat_envelope(drive: FlatDrive, t):
    """Rotating-frame (I, Q) in MHz at time(s) t (us)."""
    t = np.asarray(t, dtype=float)
    r = drive.rabi_mhz
    phase = TWO_PI * np.multiply.outer(t, np.asarray(drive.offsets_mhz)) + np.asarray(
        drive.phases_rad
    )
    return r * np.cos(phase).sum(axis=-1), -r * np.sin(phase).sum(axis=-1)


def flat_pi_pulse(rabi_mhz: float, offsets_mhz=(0.0,), phases_rad=None,
                  carrier_mhz: float = 2870.0) -> FlatDrive:
    """Flat drive of duration 1/(2 R), a pi pulse on each resonant tone."""
    if not rabi_mhz > 0:
        raise ConfigError("rabi_mhz must be positive")
    return FlatDrive(
        rabi_mhz=rabi_mhz,
        duration_us=1.0 / (2.0 * rabi_mhz),
        offsets_mhz=tuple(offsets_mhz),
        phases_rad=None if phases_rad is None else tuple(phases_rad),
        carrier_mhz=carrier_mhz,
    )


def drive_envelope(drive, t):
    """Envelope of either drive type at time(s) t."""
    if isinstance(drive, PulseCoefficients):
        return envelope(drive, t)
    if isinstance(drive, FlatDrive):
        return flat_envelope(drive, t)
    raise TypeError(f"unsupported drive type {type(drive).__name__}")


def sample_waveform(pulse: PulseCoefficients, sample_rate_msps: float):
    """Sample the normalized envelope for hardware export.

    Returns (t_us, i_norm, q_norm, scale_mhz) where the normalized
    columns lie in [-1, 1] and scale_mhz * max(|i_norm|, |q_norm|)
    reconstructs the peak Rabi frequency in MHz.  The sample count is
    rounded so the samples span exactly [0, t_p].

    The rate must comfortably oversample the envelope bandwidth
    N_f/(2 t_p); below 16x the waveform is rejected.
    """
    bw = pulse.bandwidth_mhz
    if sample_rate_msps < 16.0 * bw:
        raise ConfigError(
            f"sample rate {sample_rate_msps:g} MS/s is below 16x the envelope "
            f"bandwidth {bw:g} MHz"
        )
    n_intervals = max(1, round(pulse.t_p * sample_rate_msps))
    t = np.linspace(0.0, pulse.t_p, n_intervals + 1)
    i_env, q_env = envelope(pulse, t)
    peak = max_rabi(pulse)
    if peak == 0.0:
        return t, np.zeros_like(t), np.zeros_like(t), 0.0
    return t, i_env / peak, q_env / peak, peak
