"""Hyperfine transition manifolds and inhomogeneous ensembles.

The |0> <-> |-1> electron spin transition splits into K hyperfine lines
(K = 3 for 14N, K = 2 for 15N, K = 1 when hyperfine structure is
ignored).  Each line is treated as an independent two-level system; the
joint space is the direct sum of the K blocks, so all operators here are
2K x 2K block-diagonal matrices.  Transition k is offset from the
central line by w_k * splitting, with w = (-1, 0, 1) for K = 3 and
w = (-1/2, 1/2) for K = 2.

An inhomogeneous ensemble is a weighted list of (detuning, amplitude
scale) members.  The representative ensemble is a uniform detuning grid
with Gaussian weights whose FWHM equals the detuning half-range, crossed
with a flat grid of drive-amplitude scale factors.
"""

from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration input."""


@dataclass(frozen=True)
class HyperfineConfig:
    """Level structure of the driven transition.

    levels: number of hyperfine lines K (1, 2 or 3).
    splitting_mhz: adjacent-line splitting; required for levels > 1.
    carrier_mhz: nominal drive carrier, carried as metadata into exported
        artifacts (all dynamics happen in the rotating frame).
    """

    levels: int = 3
    splitting_mhz: float | None = 2.16
    carrier_mhz: float = 2870.0

    def __post_init__(self):
        if self.levels not in (1, 2, 3):
            raise ConfigError(f"levels must be 1, 2 or 3, got {self.levels}")
        if self.levels > 1:
            if self.splitting_mhz is None:
                raise ConfigError(
                    f"splitting_mhz is required for levels={self.levels}"
                )
            if self.splitting_mhz < 0:
                raise ConfigError("splitting_mhz must be non-negative")

    @property
    def weights(self) -> np.ndarray:
        """Hyperfine offset factors w_k, ascending."""
        if self.levels == 1:
            return np.array([0.0])
        if self.levels == 2:
            return np.array([-0.5, 0.5])
        return np.array([-1.0, 0.0, 1.0])

    def transition_offsets_mhz(self) -> np.ndarray:
        """Offsets of the K lines from the central one, in MHz."""
        split = 0.0 if self.splitting_mhz is None else self.splitting_mhz
        return self.weights * split


@dataclass(frozen=True, eq=False)
class SpinMatrixSet:
    """Block-diagonal Pauli matrices, one 2x2 block per transition.

    Arrays have shape (K, 2K, 2K); sx[k] acts as sigma_x on block k and
    as zero elsewhere.
    """

    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray


_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def build_spin_matrices(config: HyperfineConfig) -> SpinMatrixSet:
    k = config.levels
    out = {}
    for axis, pauli in _PAULI.items():
        mats = np.zeros((k, 2 * k, 2 * k), dtype=complex)
        for i in range(k):
            mats[i, 2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = pauli
        out[axis] = mats
    return SpinMatrixSet(sx=out["x"], sy=out["y"], sz=out["z"])


@dataclass(frozen=True)
class EnsembleMember:
    """One ensemble member: central-line detuning (MHz), drive amplitude
    scale (dimensionless, multiplies the control envelope), statistical
    weight."""

    delta_mhz: float
    alpha: float
    weight: float = 1.0


@dataclass(frozen=True, eq=False)
class RepresentativeEnsemble:
    members: tuple
    detuning_half_range_mhz: float
    amplitude_half_range: float

    def __len__(self):
        return len(self.members)

    @property
    def deltas(self) -> np.ndarray:
        return np.array([m.delta_mhz for m in self.members])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([m.alpha for m in self.members])

    @property
    def member_weights(self) -> np.ndarray:
        return np.array([m.weight for m in self.members])


def sample_representative_ensemble(
    detuning_half_range_mhz: float,
    amplitude_half_range: float,
    n_detuning: int = 12,
    n_amplitude: int = 12,
) -> RepresentativeEnsemble:
    """Grid of (detuning, amplitude) members with normalized weights.

    Detunings are uniform over [-dh, +dh] and carry Gaussian weights with
    FWHM equal to dh, so the edge weight is 2^-4 of the center weight.
    Amplitude scales are uniform over [1-ah, 1+ah] with flat weights.
    Weights are normalized to sum to 1 over all members.
    """
    if detuning_half_range_mhz < 0:
        raise ConfigError("detuning_half_range_mhz must be non-negative")
    if not 0 <= amplitude_half_range < 1:
        raise ConfigError(
            "amplitude_half_range must lie in [0, 1) so amplitude scales "
            "stay positive"
        )
    if n_detuning < 1 or n_amplitude < 1:
        raise ConfigError("ensemble grid sizes must be at least 1")

    deltas = (
        np.linspace(-detuning_half_range_mhz, detuning_half_range_mhz, n_detuning)
        if n_detuning > 1
        else np.array([0.0])
    )
    alphas = (
        np.linspace(1.0 - amplitude_half_range, 1.0 + amplitude_half_range, n_amplitude)
        if n_amplitude > 1
        else np.array([1.0])
    )
    if detuning_half_range_mhz > 0:
        gauss = np.exp(-4.0 * np.log(2.0) * (deltas / detuning_half_range_mhz) ** 2)
    else:
        gauss = np.ones_like(deltas)
    gauss = gauss / (gauss.sum() * len(alphas))

    members = tuple(
        EnsembleMember(delta_mhz=float(d), alpha=float(a), weight=float(w))
        for d, w in zip(deltas, gauss)
        for a in alphas
    )
    return RepresentativeEnsemble(
        members=members,
        detuning_half_range_mhz=detuning_half_range_mhz,
        amplitude_half_range=amplitude_half_range,
    )
