"""State-transfer fidelities and their ensemble averages.

The figure of merit for a single two-level transition is
|<psi_f| U(t_p) |psi_i>|^2.  For K hyperfine lines the per-member value
is the unweighted mean of the K block fidelities for |0> -> |-1|, and
the ensemble objective is the weight-averaged member value.
"""

import numpy as np

from .hyperfine import ConfigError, EnsembleMember, HyperfineConfig, RepresentativeEnsemble
from .propagators import (
    FloquetWorkspace,
    Propagator,
    batched_flat_unitaries,
    converged_truncation,
    floquet_propagator,
    oracle_propagator,
    transition_detunings,
)
from .pulses import FlatDrive, PulseCoefficients

STATE_NORM_TOL = 1e-9


def state_transfer_fidelity(u, psi_i, psi_f) -> float:
    """|<psi_f| U |psi_i>|^2 for normalized states."""
    if isinstance(u, Propagator):
        u = u.matrix
    psi_i = np.asarray(psi_i, dtype=complex)
    psi_f = np.asarray(psi_f, dtype=complex)
    for name, psi in (("psi_i", psi_i), ("psi_f", psi_f)):
        norm = np.linalg.norm(psi)
        if abs(norm - 1.0) > STATE_NORM_TOL:
            raise ConfigError(f"{name} is not normalized: |psi| = {norm!r}")
    amp = np.vdot(psi_f, u @ psi_i)
    return float(np.abs(amp) ** 2)


def _propagator_for(drive, member, config, truncation=None):
    if isinstance(drive, PulseCoefficients):
        return floquet_propagator(drive, member, config, truncation=truncation)
    return oracle_propagator(drive, member, config)


def multi_level_average_fidelity(
    drive,
    member: EnsembleMember,
    config: HyperfineConfig,
    truncation: int | None = None,
) -> float:
    """Mean |0> -> |-1> fidelity over the K hyperfine blocks.

    Shaped pulses go through the Floquet propagator, flat drives through
    the time-stepping one.  All lines carry equal nuclear weight.
    """
    prop = _propagator_for(drive, member, config, truncation)
    fids = [
        np.abs(prop.matrix[2 * k + 1, 2 * k]) ** 2 for k in range(config.levels)
    ]
    return float(np.mean(fids))


def _flat_pair_grid(ensemble, config):
    """Flatten (member, transition) pairs: detunings, alphas, weights."""
    offs = config.transition_offsets_mhz()
    deltas = []
    alphas = []
    weights = []
    for m in ensemble.members:
        for off in offs:
            deltas.append(m.delta_mhz + off)
            alphas.append(m.alpha)
            weights.append(m.weight / config.levels)
    return np.array(deltas), np.array(alphas), np.array(weights)


def make_workspace(
    pulse: PulseCoefficients,
    ensemble: RepresentativeEnsemble,
    config: HyperfineConfig,
    truncation: int | None = None,
) -> tuple[FloquetWorkspace, np.ndarray]:
    """Batched Floquet workspace over the ensemble plus pair weights.

    With ``truncation=None`` the cutoff is picked by running the
    adaptive convergence check on the most demanding member (largest
    |detuning| and alpha).
    """
    deltas, alphas, weights = _flat_pair_grid(ensemble, config)
    if truncation is None:
        probe = EnsembleMember(
            delta_mhz=float(np.max(np.abs(ensemble.deltas))),
            alpha=float(np.max(ensemble.alphas)),
        )
        truncation = converged_truncation(pulse, probe, config)
    ws = FloquetWorkspace(
        t_p=pulse.t_p,
        omega_f=pulse.omega_f,
        n_f=pulse.n_f,
        deltas_mhz=deltas,
        alphas=alphas,
        truncation=truncation,
    )
    return ws, weights


def ensemble_objective(
    drive,
    ensemble: RepresentativeEnsemble,
    config: HyperfineConfig,
    truncation: int | None = None,
    flat_steps: int = 4096,
) -> float:
    """Weighted K-averaged state-transfer fidelity over the ensemble."""
    deltas, alphas, weights = _flat_pair_grid(ensemble, config)
    if isinstance(drive, PulseCoefficients):
        ws, weights = make_workspace(drive, ensemble, config, truncation)
        amps = ws.amplitudes(drive.a_x, drive.a_y)
        return float(weights @ (np.abs(amps) ** 2))
    u = batched_flat_unitaries(drive, deltas, alphas, n_steps=flat_steps)
    return float(weights @ (np.abs(u[:, 1, 0]) ** 2))
