"""Fidelity maps, ODMR contrast curves and their slopes.

A fidelity map evaluates the |0> -> |-1> transfer over a grid of
(detuning, amplitude scale) operating points, either per single
transition or K-averaged over the hyperfine lines.  An ODMR curve sweeps
the drive carrier across the ensemble: the contrast at frequency offset
s is the ensemble-weighted K-averaged fidelity with every member
detuning shifted by s.

Both reduce to one scalar function per amplitude scale, the
single-transition fidelity versus total detuning.  The sweep evaluates
that function once on a dense grid at the sweep resolution and reads
member- and hyperfine-shifted values off a cubic spline, which keeps the
cost independent of ensemble size.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .hyperfine import ConfigError, EnsembleMember, HyperfineConfig, RepresentativeEnsemble
from .propagators import FloquetWorkspace, batched_flat_unitaries, converged_truncation
from .pulses import FlatDrive, PulseCoefficients

DEFAULT_FLAT_STEPS = 4096


def _single_transition_fidelities(drive, deltas_mhz, alphas, truncation=None,
                                  flat_steps=DEFAULT_FLAT_STEPS):
    """Two-level |0> -> |-1> fidelity for flattened (delta, alpha) pairs."""
    deltas_mhz = np.asarray(deltas_mhz, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    if isinstance(drive, PulseCoefficients):
        if truncation is None:
            probe = EnsembleMember(
                delta_mhz=float(np.max(np.abs(deltas_mhz))),
                alpha=float(np.max(alphas)),
            )
            truncation = converged_truncation(
                drive, probe, HyperfineConfig(levels=1, splitting_mhz=None)
            )
        ws = FloquetWorkspace(
            t_p=drive.t_p,
            omega_f=drive.omega_f,
            n_f=drive.n_f,
            deltas_mhz=deltas_mhz,
            alphas=alphas,
            truncation=truncation,
        )
        amps = ws.amplitudes(drive.a_x, drive.a_y)
        return np.abs(amps) ** 2
    if isinstance(drive, FlatDrive):
        u = batched_flat_unitaries(drive, deltas_mhz, alphas, n_steps=flat_steps)
        return np.abs(u[:, 1, 0]) ** 2
    raise TypeError(f"unsupported drive type {type(drive).__name__}")


def fidelity_map(
    drive,
    deltas_mhz,
    alphas,
    config: HyperfineConfig,
    mode: str = "k_average",
    truncation: int | None = None,
) -> np.ndarray:
    """Fidelity over the (detuning, amplitude) grid.

    mode="single" evaluates the bare two-level transition at each
    detuning; mode="k_average" averages the K hyperfine blocks, whose
    lines sit at delta + w_k * splitting.  Returns shape
    (len(deltas_mhz), len(alphas)).
    """
    deltas_mhz = np.asarray(deltas_mhz, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    if mode == "single":
        offsets = np.array([0.0])
    elif mode == "k_average":
        offsets = config.transition_offsets_mhz()
    else:
        raise ConfigError(f"unknown map mode {mode!r}")

    grid_d, grid_a = np.meshgrid(deltas_mhz, alphas, indexing="ij")
    pair_d = (grid_d[..., None] + offsets).ravel()
    pair_a = np.broadcast_to(grid_a[..., None], grid_d.shape + (len(offsets),)).ravel()
    fids = _single_transition_fidelities(drive, pair_d, pair_a, truncation)
    fids = fids.reshape(len(deltas_mhz), len(alphas), len(offsets))
    return fids.mean(axis=2)


def contrast_slope(offsets_mhz, contrast) -> np.ndarray:
    """d(contrast)/d(offset) by central differences, per MHz."""
    offsets_mhz = np.asarray(offsets_mhz, dtype=float)
    contrast = np.asarray(contrast, dtype=float)
    if len(offsets_mhz) < 2:
        raise ConfigError("need at least two sweep points for a slope")
    return np.gradient(contrast, offsets_mhz)


@dataclass(frozen=True, eq=False)
class OdmrResult:
    offsets_mhz: np.ndarray
    contrast: np.ndarray
    slope_per_mhz: np.ndarray

    @property
    def max_slope_per_mhz(self) -> float:
        return float(np.max(np.abs(self.slope_per_mhz)))


def simulate_odmr(
    drive,
    ensemble: RepresentativeEnsemble,
    config: HyperfineConfig,
    span_mhz: float = 6.0,
    step_mhz: float = 0.01,
    truncation: int | None = None,
    flat_steps: int = DEFAULT_FLAT_STEPS,
) -> OdmrResult:
    """Ensemble ODMR contrast versus carrier offset, with its slope.

    The sweep offset adds to every member detuning; contrast is the
    weighted K-averaged fidelity.  Evaluations are done on a dense
    detuning grid per distinct amplitude scale and splined onto the
    shifted points.
    """
    if step_mhz <= 0 or span_mhz <= 0:
        raise ConfigError("span_mhz and step_mhz must be positive")
    offsets = np.arange(-span_mhz, span_mhz + 0.5 * step_mhz, step_mhz)

    trans = config.transition_offsets_mhz()
    base = ensemble.deltas[:, None] + trans[None, :]  # (n_members, K)
    lo = offsets[0] + base.min()
    hi = offsets[-1] + base.max()
    dense = np.arange(lo - 2 * step_mhz, hi + 2.5 * step_mhz, step_mhz)

    alphas = ensemble.alphas
    weights = ensemble.member_weights
    contrast = np.zeros_like(offsets)
    for alpha in np.unique(alphas):
        sel = alphas == alpha
        fids = _single_transition_fidelities(
            drive,
            dense,
            np.full(len(dense), alpha),
            truncation,
            flat_steps=flat_steps,
        )
        spline = CubicSpline(dense, fids)
        # every (member, line) lookup for this alpha, summed with weights
        for delta, w in zip(ensemble.deltas[sel], weights[sel]):
            for off in trans:
                contrast += (w / config.levels) * spline(offsets + delta + off)
    slope = contrast_slope(offsets, contrast)
    return OdmrResult(offsets_mhz=offsets, contrast=contrast, slope_per_mhz=slope)
