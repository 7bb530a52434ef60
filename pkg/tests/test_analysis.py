import numpy as np
import pytest

from conftest import random_pulse
from nvpulse.analysis import contrast_slope, fidelity_map, simulate_odmr
from nvpulse.hyperfine import (
    ConfigError,
    HyperfineConfig,
    sample_representative_ensemble,
)
from nvpulse.pulses import FlatDrive, flat_pi_pulse


def rabi_formula(r, d, t=None):
    # flat pulse of Rabi frequency r at detuning d; duration defaults to
    # the resonant pi time 1/(2r)
    omega = np.hypot(r, d)
    t = 1.0 / (2 * r) if t is None else t
    return (r**2 / omega**2) * np.sin(np.pi * omega * t) ** 2


def test_single_mode_map_matches_rabi_formula(k1_config):
    drive = flat_pi_pulse(1.4)
    deltas = np.linspace(-2.5, 2.5, 11)
    fmap = fidelity_map(drive, deltas, np.array([1.0]), k1_config, mode="single")
    expect = rabi_formula(1.4, deltas)
    assert np.allclose(fmap[:, 0], expect, atol=1e-8)


def test_map_alpha_scales_rabi(k1_config):
    drive = flat_pi_pulse(1.4)
    fmap = fidelity_map(drive, np.array([0.9]), np.array([0.8, 1.2]), k1_config,
                        mode="single")
    # alpha scales the drive amplitude while the duration stays 1/(2 R)
    t_pi = 1.0 / (2 * 1.4)
    assert np.isclose(fmap[0, 0], rabi_formula(1.4 * 0.8, 0.9, t_pi), atol=1e-8)
    assert np.isclose(fmap[0, 1], rabi_formula(1.4 * 1.2, 0.9, t_pi), atol=1e-8)


def test_k_average_map_is_mean_of_shifted_singles(k3_config):
    drive = flat_pi_pulse(1.4)
    deltas = np.linspace(-1.0, 1.0, 5)
    alphas = np.array([0.95, 1.05])
    kmap = fidelity_map(drive, deltas, alphas, k3_config, mode="k_average")
    singles = [
        fidelity_map(drive, deltas + off, alphas, k3_config, mode="single")
        for off in (-2.16, 0.0, 2.16)
    ]
    assert np.allclose(kmap, np.mean(singles, axis=0), atol=1e-10)


def test_map_shaped_pulse_matches_multi_level(k3_config, center_member):
    from nvpulse.fidelity import multi_level_average_fidelity

    rng = np.random.default_rng(6)
    pulse = random_pulse(rng, n_f=4, peak_mhz=1.2)
    fmap = fidelity_map(pulse, np.array([0.0]), np.array([1.0]), k3_config)
    direct = multi_level_average_fidelity(pulse, center_member, k3_config)
    assert np.isclose(fmap[0, 0], direct, atol=1e-8)


def test_map_rejects_unknown_mode(k1_config):
    with pytest.raises(ConfigError, match="mode"):
        fidelity_map(flat_pi_pulse(1.0), np.array([0.0]), np.array([1.0]),
                     k1_config, mode="typo")


# ---------------------------------------------------------------- slope


def test_slope_linear_curve():
    f = np.linspace(-3, 3, 61)
    slope = contrast_slope(f, 0.37 * f)
    assert np.allclose(slope, 0.37, atol=1e-12)


def test_slope_flat_curve():
    f = np.linspace(-3, 3, 61)
    assert np.allclose(contrast_slope(f, np.full_like(f, 0.8)), 0.0, atol=1e-14)


def test_slope_gaussian_dip_closed_form():
    # dip of depth d and FWHM w: max |slope| = d sqrt(8 ln2 / e) / w
    d, w = 0.31, 1.7
    f = np.linspace(-6, 6, 4001)
    curve = d * np.exp(-4 * np.log(2) * (f / w) ** 2)
    measured = np.max(np.abs(contrast_slope(f, curve)))
    analytic = d * np.sqrt(8 * np.log(2) / np.e) / w
    assert abs(measured - analytic) / analytic < 0.05


def test_slope_needs_two_points():
    with pytest.raises(ConfigError):
        contrast_slope(np.array([1.0]), np.array([0.5]))


# ----------------------------------------------------------------- odmr


@pytest.fixture(scope="module")
def odmr_three_tone():
    config = HyperfineConfig(levels=3, splitting_mhz=2.16)
    ens = sample_representative_ensemble(1.0, 0.1, n_detuning=5, n_amplitude=3)
    drive = flat_pi_pulse(1.4, offsets_mhz=(-2.16, 0.0, 2.16))
    return simulate_odmr(drive, ens, config, span_mhz=4.0, step_mhz=0.05)


def test_odmr_symmetry(odmr_three_tone):
    res = odmr_three_tone
    # symmetric ensemble + symmetric drive: contrast even, slope odd
    assert np.allclose(res.contrast, res.contrast[::-1], atol=1e-6)
    assert np.allclose(res.slope_per_mhz, -res.slope_per_mhz[::-1], atol=1e-4)


def test_odmr_peak_on_resonance(odmr_three_tone):
    res = odmr_three_tone
    k = np.argmax(res.contrast)
    assert abs(res.offsets_mhz[k]) <= 0.1


def test_odmr_axis_strictly_increasing(odmr_three_tone):
    assert np.all(np.diff(odmr_three_tone.offsets_mhz) > 0)


def test_odmr_spline_matches_direct_evaluation(k1_config):
    # spot-check the splined sweep against direct ensemble evaluation
    from nvpulse.fidelity import ensemble_objective
    from nvpulse.hyperfine import EnsembleMember, RepresentativeEnsemble

    drive = flat_pi_pulse(1.2)
    ens = sample_representative_ensemble(0.6, 0.0, n_detuning=3, n_amplitude=1)
    res = simulate_odmr(drive, ens, k1_config, span_mhz=2.0, step_mhz=0.05)
    for offset in (-1.0, 0.0, 0.75):
        shifted = RepresentativeEnsemble(
            members=tuple(
                EnsembleMember(m.delta_mhz + offset, m.alpha, m.weight)
                for m in ens.members
            ),
            detuning_half_range_mhz=ens.detuning_half_range_mhz,
            amplitude_half_range=ens.amplitude_half_range,
        )
        direct = ensemble_objective(drive, shifted, k1_config)
        k = np.argmin(np.abs(res.offsets_mhz - offset))
        assert np.isclose(res.contrast[k], direct, atol=1e-6)


def test_odmr_validation(k1_config):
    ens = sample_representative_ensemble(0.5, 0.0, n_detuning=2, n_amplitude=1)
    with pytest.raises(ConfigError):
        simulate_odmr(flat_pi_pulse(1.0), ens, k1_config, span_mhz=0.0)
    with pytest.raises(ConfigError):
        simulate_odmr(flat_pi_pulse(1.0), ens, k1_config, step_mhz=-0.1)
