"""Acceptance gate: ten numbered end-to-end checks.

Each test prints one ``[criterion N] PASS/FAIL`` line through the
terminal reporter before asserting, so a full run always shows the
complete scoreboard.  The optimizer presets are executed once per
session and shared across criteria; expect the full module to take
roughly an hour on one core.
"""

import math
import os
import time
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
import yaml

import nvpulse
from nvpulse import cli
from nvpulse.fidelity import ensemble_objective, multi_level_average_fidelity
from nvpulse.hyperfine import (
    EnsembleMember,
    HyperfineConfig,
    sample_representative_ensemble,
)
from nvpulse.optimizer import (
    OPTIMIZER_TRUNCATION_PAD,
    objective_and_gradient,
    optimize,
    total_objective,
)
from nvpulse.photophysics import (
    PulseTrainSpec,
    RateModelConfig,
    _SegmentPropagator,
    aggregate_recovery_time,
    calibrate_pump_rate,
    contrast_vs_laser_duration,
    default_radial_grid,
    pulse_train,
    rate_matrix,
    reinit_time,
)
from nvpulse.propagators import (
    converged_truncation,
    floquet_propagator,
    hamiltonian_fourier_components,
    oracle_propagator,
)
from nvpulse.pulses import PulseCoefficients, flat_pi_pulse, max_rabi
from nvpulse.reports import read_table
from nvpulse.sensitivity import SensitivityInputs, sensitivity

from conftest import random_pulse

PRESET_DIR = os.path.join(os.path.dirname(nvpulse.__file__), "presets")
OPTIMIZE_PRESETS = (
    "optimize_hyperfine_pi.yaml",
    "optimize_single_line_pi.yaml",
    "optimize_high_power_pi.yaml",
)


def load_preset(name: str) -> dict:
    with open(os.path.join(PRESET_DIR, name)) as fh:
        return yaml.safe_load(fh)


def verdict(report, n: int, ok: bool, detail: str) -> None:
    report(f"[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {n} failed: {detail}"


@pytest.fixture(scope="session")
def preset_runs():
    """Run an optimizer preset once and cache (result, wall time, setup)."""
    cache = {}

    def run(name: str):
        if name not in cache:
            hyper, ensemble, n_f, t_p, opt = cli.parse_optimize_config(
                load_preset(name)
            )
            t0 = time.perf_counter()
            result = optimize(hyper, ensemble, opt, n_f=n_f, t_p=t_p,
                              carrier_mhz=hyper.carrier_mhz)
            cache[name] = SimpleNamespace(
                result=result,
                wall_s=time.perf_counter() - t0,
                hyper=hyper,
                ensemble=ensemble,
                opt=opt,
            )
        return cache[name]

    return run


def test_1_floquet_oracle_equivalence(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(10):
        levels = 1 + i % 3
        config = HyperfineConfig(
            levels=levels, splitting_mhz=2.16 if levels > 1 else None
        )
        member = EnsembleMember(
            delta_mhz=float(rng.uniform(-2.0, 2.0)),
            alpha=float(rng.uniform(0.8, 1.2)),
        )
        pulse = random_pulse(rng, n_f=int(rng.integers(3, 9)), t_p=1.85,
                             peak_mhz=1.4)
        u_f = floquet_propagator(pulse, member, config).matrix
        u_o = oracle_propagator(pulse, member, config).matrix
        worst = max(worst, float(np.linalg.norm(u_f - u_o)))
    wall = time.perf_counter() - t0
    ok = worst < 1e-6 and wall < 60.0
    verdict(report, 1, ok,
            f"max |U_floquet - U_oracle| = {worst:.3e} (< 1e-6), "
            f"wall {wall:.1f}s (< 60s), 10 pulses K in {{1,2,3}}")


def test_2_gradient_matches_finite_differences(report):
    rng = np.random.default_rng(2)
    k3 = HyperfineConfig(levels=3, splitting_mhz=2.16)
    ens = sample_representative_ensemble(1.0, 0.10, n_detuning=12,
                                         n_amplitude=12)
    h = 1e-5
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(5):
        pulse = random_pulse(rng, n_f=6, t_p=1.85, peak_mhz=1.3)
        # differentiate the objective at the ascent's own working cutoff
        m = pulse.n_f + OPTIMIZER_TRUNCATION_PAD
        _, gx, gy = objective_and_gradient(pulse, ens, k3, p=1.0,
                                           truncation=m)
        analytic = np.concatenate([gx, gy])
        fd = np.empty(2 * pulse.n_f)
        for idx in range(2 * pulse.n_f):
            ex = np.zeros(pulse.n_f)
            ey = np.zeros(pulse.n_f)
            (ex if idx < pulse.n_f else ey)[idx % pulse.n_f] = 1.0
            up = total_objective(
                PulseCoefficients(pulse.a_x + h * ex, pulse.a_y + h * ey,
                                  pulse.t_p),
                ens, k3, p=1.0, truncation=m)
            dn = total_objective(
                PulseCoefficients(pulse.a_x - h * ex, pulse.a_y - h * ey,
                                  pulse.t_p),
                ens, k3, p=1.0, truncation=m)
            fd[idx] = (up - dn) / (2.0 * h)
        rel = float(np.linalg.norm(fd - analytic) / np.linalg.norm(analytic))
        worst = max(worst, rel)
    wall = time.perf_counter() - t0
    ok = worst < 1e-5 and wall < 300.0
    verdict(report, 2, ok,
            f"max FD relative error = {worst:.3e} (< 1e-5) over 5 pulses, "
            f"K=3 12x12, wall {wall:.1f}s (< 300s)")


def test_3_flat_pulse_rabi_formula(report):
    k1 = HyperfineConfig(levels=1)
    worst = 0.0
    count = 0
    for rabi in (0.7, 1.0, 1.4, 2.2, 3.0):
        for delta in (0.0, 0.8, 2.16, 3.5):
            drive = flat_pi_pulse(rabi)
            member = EnsembleMember(delta_mhz=delta, alpha=1.0)
            simulated = multi_level_average_fidelity(drive, member, k1)
            r_sq = rabi * rabi
            g_sq = r_sq + delta * delta
            formula = (r_sq / g_sq) * math.sin(
                math.pi * math.sqrt(g_sq) / (2.0 * rabi)) ** 2
            worst = max(worst, abs(simulated - formula))
            count += 1
    satellite = multi_level_average_fidelity(
        flat_pi_pulse(1.4), EnsembleMember(delta_mhz=2.16, alpha=1.0), k1)
    ok = worst < 1e-8 and count == 20 and abs(satellite - 0.019) < 1e-3
    verdict(report, 3, ok,
            f"max |simulated - formula| = {worst:.3e} (< 1e-8) over "
            f"{count} (R, delta) points; R=1.4, delta=2.16 -> "
            f"{satellite:.6f} (~0.019)")


def test_4_shaped_pulse_beats_flat_baseline(report, preset_runs):
    aware = preset_runs("optimize_hyperfine_pi.yaml")
    blind = preset_runs("optimize_single_line_pi.yaml")
    k3 = aware.hyper
    center = EnsembleMember(delta_mhz=0.0, alpha=1.0)
    t0 = time.perf_counter()
    flat = multi_level_average_fidelity(flat_pi_pulse(1.4), center, k3)
    f_aware = multi_level_average_fidelity(aware.result.pulse, center, k3)
    f_blind = multi_level_average_fidelity(blind.result.pulse, center, k3)
    wall = aware.wall_s + blind.wall_s + (time.perf_counter() - t0)
    ok = (f_aware >= 2.0 * flat
          and f_aware > f_blind
          and abs(flat - 0.346) < 5e-3
          and wall < 1800.0)
    verdict(report, 4, ok,
            f"center K-average: optimized {f_aware:.4f} >= 2x flat pi "
            f"{flat:.4f}; hyperfine-aware {f_aware:.4f} > blind "
            f"{f_blind:.4f}; wall {wall:.0f}s (< 1800s)")


def test_5_objective_grid_convergence(report, preset_runs):
    details = []
    ok = True
    for name in ("optimize_hyperfine_pi.yaml", "optimize_high_power_pi.yaml"):
        run = preset_runs(name)
        e12 = sample_representative_ensemble(1.0, 0.10, n_detuning=12,
                                             n_amplitude=12)
        e16 = sample_representative_ensemble(1.0, 0.10, n_detuning=16,
                                             n_amplitude=16)
        f12 = ensemble_objective(run.result.pulse, e12, run.hyper)
        f16 = ensemble_objective(run.result.pulse, e16, run.hyper)
        diff = abs(f12 - f16)
        ok = ok and diff < 0.01
        details.append(
            f"R_lim={run.opt.r_lim_mhz:g}: |{f12:.4f} - {f16:.4f}| = "
            f"{diff:.2e}")
    verdict(report, 5, ok,
            "12x12 vs 16x16 grids (< 0.01): " + "; ".join(details))


def test_6_rabi_ceiling_and_monotone_line_search(report, preset_runs):
    details = []
    ok = True
    for name in OPTIMIZE_PRESETS:
        run = preset_runs(name)
        peak = max_rabi(run.result.pulse)
        cap = 1.02 * run.opt.r_lim_mhz
        ls_gains = [row.gain for row in run.result.trace
                    if row.step > run.opt.fixed_beta_steps]
        min_gain = min(ls_gains) if ls_gains else 0.0
        ok = ok and peak <= cap + 1e-12 and min_gain >= -1e-12
        details.append(
            f"{name.split('.')[0]}: peak {peak:.4f} <= {cap:.4f} MHz, "
            f"min line-search gain {min_gain:.2e}")
    verdict(report, 6, ok, "; ".join(details))


def test_7_readout_calibration_and_shapes(report):
    t0 = time.perf_counter()
    config = RateModelConfig()

    calibrated = calibrate_pump_rate(config, target_recovery_s=1.4e-3)
    recovery = aggregate_recovery_time(
        replace(config, pump_per_intensity_hz=calibrated))
    shipped = aggregate_recovery_time(config)
    recovery_ok = (abs(recovery - 1.4e-3) < 0.1 * 1.4e-3
                   and abs(shipped - 1.4e-3) < 0.1 * 1.4e-3)

    def plateau(laser_on_s):
        spec = PulseTrainSpec(laser_on_s=laser_on_s, gap_s=1e-5, cycles=20,
                              window_s=(0.3e-3, 2.7e-3))
        return pulse_train(spec, config).plateau_rate_hz

    ratio = plateau(3.0e-3) / plateau(20.0e-3)
    plateau_ok = 0.85 <= ratio <= 0.95

    durations = (0.5e-3, 1e-3, 2e-3, 3e-3, 5e-3, 10e-3, 20e-3, 30e-3)
    contrast = contrast_vs_laser_duration(durations, config, cycles=12)
    saturating = (contrast[-1] - contrast[-2]) < 0.05 * contrast[-1]
    contrast_ok = bool(np.all(np.diff(contrast) >= -1e-12) and saturating)

    radii, _ = default_radial_grid(50)
    reinit = np.array([reinit_time(r, config) for r in radii])
    reinit_ok = bool(np.all(np.diff(reinit) > 0))

    wall = time.perf_counter() - t0
    ok = (recovery_ok and plateau_ok and contrast_ok and reinit_ok
          and wall < 600.0)
    verdict(report, 7, ok,
            f"calibrated recovery {recovery * 1e3:.3f} ms (1.4 +- 10%), "
            f"3ms/20ms plateau {ratio:.3f} (0.90 +- 0.05), contrast vs "
            f"duration monotone+saturating {contrast_ok}, reinit strictly "
            f"increasing over {len(radii)} radii {reinit_ok}, wall "
            f"{wall:.0f}s (< 600s)")


def test_8_sensitivity_formula_and_scale(report):
    inputs = SensitivityInputs(
        slope_per_hz=3.0e-9,
        photon_rate=3.0e13,
        readout_time_s=3.0e-3,
        init_time_s=3.0e-3,
        recovery_time_s=1.4e-3,
    )
    eta = sensitivity(inputs)
    hand = math.sqrt(2.0 * 3.0e-3 * 3.0e-3) / (
        28.024e9
        * 3.0e-9
        * 1.4e-3
        * (1.0 - math.exp(-3.0e-3 / 1.4e-3))
        * math.sqrt(3.0e13)
    )
    rel = abs(eta - hand) / hand
    factor = eta / 10.0e-9
    ok = rel < 1e-12 and (1.0 / 3.0) <= factor <= 3.0
    verdict(report, 8, ok,
            f"library vs hand formula rel err {rel:.2e} (< 1e-12); eta = "
            f"{eta * 1e9:.3f} nT/sqrt(Hz), {factor:.2f}x of 10 (within 3x)")


def test_9_optimize_rerun_bitwise_identical(report, tmp_path_factory):
    preset = os.path.join(PRESET_DIR, "optimize_hyperfine_pi.yaml")
    overrides = []
    for kv in ("ensemble.n_detuning=6", "ensemble.n_amplitude=6",
               "optimizer.steps=8", "optimizer.fixed_beta_steps=4"):
        overrides += ["--set", kv]
    outs = [str(tmp_path_factory.mktemp(f"rerun{i}")) for i in (1, 2)]
    for out in outs:
        rc = cli.main(["optimize", "--config", preset, "--out", out]
                      + overrides)
        assert rc == 0
    same = {}
    for artifact in ("coefficients.csv", "trace.csv"):
        with open(os.path.join(outs[0], artifact), "rb") as fa, \
                open(os.path.join(outs[1], artifact), "rb") as fb:
            same[artifact] = fa.read() == fb.read()
    ok = all(same.values())
    verdict(report, 9, ok,
            "rerun byte-identical: " + ", ".join(
                f"{k}={v}" for k, v in same.items()))


def test_10_randomized_property_suites(report):
    rng = np.random.default_rng(10)

    unitarity_worst = 0.0
    for _ in range(100):
        levels = int(rng.integers(1, 4))
        config = HyperfineConfig(
            levels=levels, splitting_mhz=2.16 if levels > 1 else None
        )
        member = EnsembleMember(delta_mhz=float(rng.uniform(-2.0, 2.0)),
                                alpha=float(rng.uniform(0.8, 1.2)))
        pulse = random_pulse(rng, n_f=int(rng.integers(2, 7)),
                             t_p=float(rng.uniform(0.8, 2.5)),
                             peak_mhz=float(rng.uniform(0.5, 3.0)))
        u = floquet_propagator(pulse, member, config).matrix
        gap = np.linalg.norm(u.conj().T @ u - np.eye(len(u)))
        unitarity_worst = max(unitarity_worst, float(gap))
    unitarity_ok = unitarity_worst < 1e-8

    hermiticity_worst = 0.0
    for _ in range(100):
        levels = int(rng.integers(1, 4))
        config = HyperfineConfig(
            levels=levels, splitting_mhz=2.16 if levels > 1 else None
        )
        member = EnsembleMember(delta_mhz=float(rng.uniform(-2.0, 2.0)),
                                alpha=float(rng.uniform(0.8, 1.2)))
        pulse = random_pulse(rng, n_f=int(rng.integers(2, 7)))
        comps = hamiltonian_fourier_components(pulse, member, config)
        n_f = pulse.n_f
        for n in range(n_f + 1):
            gap = np.max(np.abs(comps[n_f + n] - comps[n_f - n].conj().T))
            hermiticity_worst = max(hermiticity_worst, float(gap))
        # instantaneous Hamiltonian at a random time is Hermitian too
        t = float(rng.uniform(0.0, pulse.t_p))
        phases = np.exp(1j * np.arange(-n_f, n_f + 1) * pulse.omega_f * t)
        h_t = np.tensordot(phases, comps, axes=(0, 0))
        gap = np.max(np.abs(h_t - h_t.conj().T))
        hermiticity_worst = max(hermiticity_worst, float(gap))
    hermiticity_ok = hermiticity_worst < 1e-12

    conservation_worst = 0.0
    colsum_rel_worst = 0.0
    min_population = 1.0
    for _ in range(100):
        config = RateModelConfig(
            radiative_hz=float(10 ** rng.uniform(7.0, 8.0)),
            isc_ms0_hz=float(10 ** rng.uniform(6.0, 7.5)),
            isc_ms1_hz=float(10 ** rng.uniform(7.0, 8.2)),
            singlet_decay_hz=float(10 ** rng.uniform(6.0, 7.0)),
            singlet_to_ms0=float(rng.uniform(0.3, 0.8)),
            t1_s=float(10 ** rng.uniform(-3.0, -2.0)),
            pump_per_intensity_hz=float(10 ** rng.uniform(2.0, 5.0)),
        )
        pump = config.pump_per_intensity_hz * float(rng.uniform(0.0, 6.0))
        matrix = rate_matrix(config, pump)
        # column sums vanish relative to the fastest rate in the matrix
        colsum_rel = float(np.max(np.abs(matrix.sum(axis=0)))
                           / np.max(np.abs(matrix)))
        colsum_rel_worst = max(colsum_rel_worst, colsum_rel)
        start = rng.uniform(0.0, 1.0, size=5)
        start /= start.sum()
        duration = float(10 ** rng.uniform(-7.0, -2.0))
        final = _SegmentPropagator(matrix).propagate(start, duration)
        conservation_worst = max(conservation_worst,
                                 float(abs(final.sum() - 1.0)))
        min_population = min(min_population, float(final.min()))
    conservation_ok = (conservation_worst < 1e-9
                       and colsum_rel_worst < 1e-12
                       and min_population > -1e-12)

    ok = unitarity_ok and hermiticity_ok and conservation_ok
    verdict(report, 10, ok,
            f"unitarity worst {unitarity_worst:.2e} (< 1e-8), hermiticity "
            f"worst {hermiticity_worst:.2e} (< 1e-12), |sum(n) - 1| worst "
            f"{conservation_worst:.2e} (< 1e-9), generator column sums "
            f"{colsum_rel_worst:.2e} relative (< 1e-12), 100 instances each")
