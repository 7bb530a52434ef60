"""Rotating-frame propagators for hyperfine two-level manifolds.

The rotating-wave Hamiltonian for transition k of a member with central
detuning delta (MHz) and amplitude scale alpha is

    H_k(t) = pi d_k sigma_z + pi alpha I(t) sigma_x + pi alpha Q(t) sigma_y

in rad/us, with d_k = delta + w_k * splitting.  Detunings and envelopes
are cyclic frequencies (MHz); this module is the single place where the
2 pi conversion to angular units happens.  The joint 2K x 2K Hamiltonian
is block-diagonal, so every propagator factorizes into K independent
2x2 blocks.

Two independent propagation routes are provided and kept separate on
purpose:

* ``floquet_propagator`` expands the 2 t_p-periodic Hamiltonian of a
  sine-basis pulse in harmonics H_n and diagonalizes the truncated
  quasi-energy matrix F[(m,n)] = H_{m-n} + m w_f delta_{mn} I.  The
  physical propagator is recovered from the central block column,
  U(t_p) = sum_m (-1)^m [exp(-i F t_p)]_{m,0}.
* ``oracle_propagator`` time-steps the Schroedinger equation with
  midpoint-sampled piecewise-constant steps (second-order accurate),
  each step an exact 2x2 exponential.  It accepts arbitrary envelopes,
  including multi-tone flat drives that are not 2 t_p-periodic.

``FloquetWorkspace`` batches the Floquet route over a whole ensemble at
fixed truncation and also returns the exact derivative of each transfer
amplitude with respect to the pulse amplitudes, computed from the
eigendecomposition via the divided-difference form of the derivative of
the matrix exponential.
"""

from dataclasses import dataclass

import numpy as np

from .hyperfine import ConfigError, EnsembleMember, HyperfineConfig
from .pulses import TWO_PI, FlatDrive, PulseCoefficients, drive_envelope

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

DEFAULT_TRUNCATION_PAD = 10
DEFAULT_FLOQUET_TOL = 1e-9
# must sit above DEFAULT_FLOQUET_TOL: the truncated Floquet sum is only
# unitary to within its own convergence residual
UNITARITY_TOL = 1e-8
MAX_TRUNCATION = 2048


class NumericalError(RuntimeError):
    """Propagation or optimization failed to meet its accuracy contract."""


@dataclass(frozen=True, eq=False)
class Propagator:
    """Unitary evolution over one pulse, 2K x 2K block-diagonal."""

    matrix: np.ndarray
    t_p: float

    def __post_init__(self):
        u = np.asarray(self.matrix)
        err = np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0]))
        if err > UNITARITY_TOL:
            raise NumericalError(f"propagator not unitary: |U+U - 1| = {err:.3e}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def block(self, k: int) -> np.ndarray:
        return self.matrix[2 * k : 2 * k + 2, 2 * k : 2 * k + 2]


def transition_detunings(member: EnsembleMember, config: HyperfineConfig) -> np.ndarray:
    """Detuning of each hyperfine line for this member, MHz."""
    return member.delta_mhz + config.transition_offsets_mhz()


def hamiltonian_fourier_components(
    pulse: PulseCoefficients, member: EnsembleMember, config: HyperfineConfig
) -> np.ndarray:
    """Harmonics H_n of the rotating-frame Hamiltonian, rad/us.

    Returns an array of shape (2 N_f + 1, 2K, 2K) indexed by n + N_f.
    H_0 carries the detunings; H_{+j} = (pi/i) alpha (a_jx sigma_x +
    a_jy sigma_y) on each block and H_{-j} = H_{+j}^dagger.
    """
    k = config.levels
    n_f = pulse.n_f
    comps = np.zeros((2 * n_f + 1, 2 * k, 2 * k), dtype=complex)
    d_ang = TWO_PI * transition_detunings(member, config)
    for i in range(k):
        sl = slice(2 * i, 2 * i + 2)
        comps[n_f, sl, sl] = 0.5 * d_ang[i] * SIGMA_Z
        for j in range(1, n_f + 1):
            c = -0.5j * TWO_PI * member.alpha * (
                pulse.a_x[j - 1] * SIGMA_X + pulse.a_y[j - 1] * SIGMA_Y
            )
            comps[n_f + j, sl, sl] = c
            comps[n_f - j, sl, sl] = c.conj().T
    return comps


def _block_floquet_matrix(a_x, a_y, alpha, d_ang, omega_f, truncation):
    """Quasi-energy matrix of one 2x2 transition block.

    Harmonic index m runs over [-M, M]; block (m, n) holds H_{m-n} plus
    m w_f on the diagonal.  Shape (2(2M+1), 2(2M+1)).
    """
    n_h = 2 * truncation + 1
    f = np.zeros((2 * n_h, 2 * n_h), dtype=complex)
    m_vals = np.arange(-truncation, truncation + 1)
    diag = omega_f * np.repeat(m_vals, 2) + 0.5 * d_ang * np.tile([1.0, -1.0], n_h)
    f[np.arange(2 * n_h), np.arange(2 * n_h)] = diag
    for j in range(1, len(a_x) + 1):
        c = -0.5j * TWO_PI * alpha * (a_x[j - 1] * SIGMA_X + a_y[j - 1] * SIGMA_Y)
        for i in range(j, n_h):
            r, s = 2 * i, 2 * (i - j)
            f[r : r + 2, s : s + 2] = c
            f[s : s + 2, r : r + 2] = c.conj().T
    return f


def _block_unitary(a_x, a_y, alpha, d_ang, omega_f, t_p, truncation):
    """U(t_p) for one transition block from the truncated Floquet matrix."""
    f = _block_floquet_matrix(a_x, a_y, alpha, d_ang, omega_f, truncation)
    w, v = np.linalg.eigh(f)
    expf = (v * np.exp(-1j * w * t_p)) @ v.conj().T
    n_h = 2 * truncation + 1
    center = 2 * truncation  # first row of the m = 0 block
    signs = (-1.0) ** np.abs(np.arange(n_h) - truncation)
    blocks = expf[:, center : center + 2].reshape(n_h, 2, 2)
    return np.tensordot(signs, blocks, axes=1)


def floquet_propagator(
    pulse: PulseCoefficients,
    member: EnsembleMember,
    config: HyperfineConfig,
    truncation: int | None = None,
    tolerance: float = DEFAULT_FLOQUET_TOL,
) -> Propagator:
    """Propagator over [0, t_p] from the truncated Floquet construction.

    With ``truncation=None`` the harmonic cutoff starts at N_f + 10 and
    doubles until the result changes by less than ``tolerance`` when the
    cutoff is raised by 2.  An explicit cutoff is checked the same way
    and raises NumericalError if not converged.
    """
    adaptive = truncation is None
    m_cut = pulse.n_f + DEFAULT_TRUNCATION_PAD if adaptive else int(truncation)
    if m_cut < pulse.n_f:
        raise ConfigError("truncation must be at least N_f")
    d_ang = TWO_PI * transition_detunings(member, config)

    def full_unitary(m):
        k = config.levels
        u = np.zeros((2 * k, 2 * k), dtype=complex)
        for i in range(k):
            u[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = _block_unitary(
                pulse.a_x, pulse.a_y, member.alpha, d_ang[i], pulse.omega_f, pulse.t_p, m
            )
        return u

    while True:
        u_lo = full_unitary(m_cut)
        u_hi = full_unitary(m_cut + 2)
        change = np.linalg.norm(u_hi - u_lo)
        if change < tolerance:
            return Propagator(matrix=u_hi, t_p=pulse.t_p)
        if not adaptive or 2 * m_cut > MAX_TRUNCATION:
            raise NumericalError(
                f"Floquet truncation M={m_cut} not converged: |dU| = {change:.3e}"
            )
        m_cut *= 2


def converged_truncation(
    pulse: PulseCoefficients,
    member: EnsembleMember,
    config: HyperfineConfig,
    tolerance: float = DEFAULT_FLOQUET_TOL,
) -> int:
    """Smallest cutoff from the doubling schedule that passes the
    convergence check for this pulse and member."""
    m_cut = pulse.n_f + DEFAULT_TRUNCATION_PAD
    d_ang = TWO_PI * transition_detunings(member, config)
    while True:
        change = 0.0
        for d in d_ang:
            u_lo = _block_unitary(
                pulse.a_x, pulse.a_y, member.alpha, d, pulse.omega_f, pulse.t_p, m_cut
            )
            u_hi = _block_unitary(
                pulse.a_x, pulse.a_y, member.alpha, d, pulse.omega_f, pulse.t_p, m_cut + 2
            )
            change = max(change, float(np.linalg.norm(u_hi - u_lo)))
        if change < tolerance:
            return m_cut
        if 2 * m_cut > MAX_TRUNCATION:
            raise NumericalError(f"no converged truncation below {MAX_TRUNCATION}")
        m_cut *= 2


class FloquetWorkspace:
    """Batched Floquet evaluation over (member, transition) pairs.

    All pairs share one eigh call per evaluation; the truncation is
    fixed at construction (callers pick it with ``converged_truncation``
    on a demanding probe).  Gradients of the |0> -> |-1> transfer
    amplitudes with respect to (a_x, a_y) are exact for the truncated
    problem: with F = V L V+ and A = <chi_f| exp(-i F t) |chi_i>,

        dA/dtheta = sum_rs (dF/dtheta)_rs G_rs,
        G = conj(V) (D o (conj(u) v^T)) V^T,

    where u = V+ chi_f, v = V+ chi_i and D is the divided-difference
    kernel D_pq = -i t exp(-i (l_p + l_q) t / 2) sinc((l_p - l_q) t / 2),
    written in its cancellation-free sinc form.
    """

    def __init__(self, t_p, omega_f, n_f, deltas_mhz, alphas, truncation,
                 chunk: int = 512):
        self.t_p = float(t_p)
        self.omega_f = float(omega_f)
        self.n_f = int(n_f)
        self.d_ang = TWO_PI * np.asarray(deltas_mhz, dtype=float)
        self.alphas = np.asarray(alphas, dtype=float)
        self.m_cut = int(truncation)
        self.chunk = int(chunk)
        if self.m_cut < self.n_f:
            raise ConfigError("truncation must be at least N_f")

        n_h = 2 * self.m_cut + 1
        self.n_h = n_h
        self.dim = 2 * n_h
        m_vals = np.arange(-self.m_cut, self.m_cut + 1)
        self._diag_m = self.omega_f * np.repeat(m_vals, 2)
        self._diag_z = 0.5 * np.tile([1.0, -1.0], n_h)
        self._signs = (-1.0) ** np.abs(m_vals)
        # chi_i: |0> in the m = 0 block; chi_f rows: |-1> in every block
        self._i_row = 2 * self.m_cut
        self._f_rows = 2 * np.arange(n_h) + 1

    def _drive_matrix(self, a_x, a_y):
        f = np.zeros((self.dim, self.dim), dtype=complex)
        for j in range(1, self.n_f + 1):
            c = -0.5j * TWO_PI * (a_x[j - 1] * SIGMA_X + a_y[j - 1] * SIGMA_Y)
            for i in range(j, self.n_h):
                r, s = 2 * i, 2 * (i - j)
                f[r : r + 2, s : s + 2] = c
                f[s : s + 2, r : r + 2] = c.conj().T
        return f

    def _eig_chunk(self, a_x, a_y, sl):
        drive = self._drive_matrix(a_x, a_y)
        alphas = self.alphas[sl]
        f = alphas[:, None, None] * drive[None, :, :]
        idx = np.arange(self.dim)
        f[:, idx, idx] += self._diag_m[None, :] + self.d_ang[sl, None] * self._diag_z[None, :]
        return np.linalg.eigh(f)

    def amplitudes(self, a_x, a_y) -> np.ndarray:
        """Transfer amplitudes <-1| U(t_p) |0> for every pair."""
        n_b = len(self.alphas)
        out = np.empty(n_b, dtype=complex)
        for start in range(0, n_b, self.chunk):
            sl = slice(start, min(start + self.chunk, n_b))
            w, v = self._eig_chunk(a_x, a_y, sl)
            phase = np.exp(-1j * w * self.t_p)
            vq = v.conj()[:, self._i_row, :]  # V+ chi_i
            u = np.einsum("m,bmp->bp", self._signs, v.conj()[:, self._f_rows, :])
            out[sl] = np.einsum("bp,bp,bp->b", u.conj(), phase, vq)
        return out

    def amplitudes_and_gradient(self, a_x, a_y):
        """Amplitudes plus dA/da_x, dA/da_y of shape (n_pairs, N_f)."""
        n_b = len(self.alphas)
        amps = np.empty(n_b, dtype=complex)
        grad_x = np.empty((n_b, self.n_f), dtype=complex)
        grad_y = np.empty((n_b, self.n_f), dtype=complex)
        for start in range(0, n_b, self.chunk):
            sl = slice(start, min(start + self.chunk, n_b))
            w, v = self._eig_chunk(a_x, a_y, sl)
            phase = np.exp(-1j * w * self.t_p)
            vq = v.conj()[:, self._i_row, :]
            u = np.einsum("m,bmp->bp", self._signs, v.conj()[:, self._f_rows, :])
            amps[sl] = np.einsum("bp,bp,bp->b", u.conj(), phase, vq)

            lp = w[:, :, None]
            lq = w[:, None, :]
            kernel = (-1j * self.t_p) * np.exp(-0.5j * (lp + lq) * self.t_p) * np.sinc(
                (lp - lq) * self.t_p / TWO_PI
            )
            z = u.conj()[:, :, None] * vq[:, None, :] * kernel
            g = np.matmul(v.conj(), np.matmul(z, v.transpose(0, 2, 1)))
            g4 = g.reshape(g.shape[0], self.n_h, 2, self.n_h, 2)
            scale = TWO_PI * self.alphas[sl]  # dF/da carries the MHz -> rad/us factor
            for j in range(1, self.n_f + 1):
                rows = np.arange(j, self.n_h)
                upper = g4[:, rows, :, rows - j, :].sum(axis=0)
                lower = g4[:, rows - j, :, rows, :].sum(axis=0)
                b = upper - lower
                grad_x[sl, j - 1] = (scale / 2j) * (b[:, 0, 1] + b[:, 1, 0])
                grad_y[sl, j - 1] = (scale / 2.0) * (b[:, 1, 0] - b[:, 0, 1])
        return amps, grad_x, grad_y


def _ordered_product(steps: np.ndarray) -> np.ndarray:
    """Time-ordered product steps[-1] @ ... @ steps[0] by pairwise
    reduction (keeps the order, vectorizes the matmuls)."""
    while steps.shape[0] > 1:
        n = steps.shape[0]
        half = n // 2
        paired = np.matmul(steps[1 : 2 * half : 2], steps[0 : 2 * half : 2])
        if n % 2:
            steps = np.concatenate([paired, steps[-1:]], axis=0)
        else:
            steps = paired
    return steps[0]


def _stepped_block_unitary(h_x, h_y, h_z, dt):
    """Product of exact 2x2 exponentials for per-step Hamiltonian
    components h = (h_x, h_y, h_z) (rad/us), each step exp(-i h.sigma dt)."""
    mag = np.sqrt(h_x**2 + h_y**2 + h_z**2)
    theta = mag * dt
    sinc_term = dt * np.sinc(theta / np.pi)  # sin(theta)/mag, safe at mag = 0
    cos_t = np.cos(theta)
    steps = np.empty(h_x.shape + (2, 2), dtype=complex)
    steps[..., 0, 0] = cos_t - 1j * sinc_term * h_z
    steps[..., 1, 1] = cos_t + 1j * sinc_term * h_z
    steps[..., 0, 1] = -sinc_term * (h_y + 1j * h_x)
    steps[..., 1, 0] = sinc_term * (h_y - 1j * h_x)
    return _ordered_product(steps)


def oracle_propagator(
    drive,
    member: EnsembleMember,
    config: HyperfineConfig,
    dt: float | None = None,
) -> Propagator:
    """Propagator by midpoint-sampled piecewise-constant time stepping.

    Second-order accurate in dt; each step is an exact 2x2 exponential,
    so constant envelopes are propagated exactly for any dt.  Accepts
    shaped pulses and flat multi-tone drives alike and serves as the
    independent cross-check of the Floquet route.
    """
    t_p = drive.t_p
    if dt is None:
        scales = [1.0 / t_p]
        if isinstance(drive, PulseCoefficients):
            scales.append(drive.bandwidth_mhz)
        else:
            scales.extend(abs(f) for f in drive.offsets_mhz)
            scales.append(drive.rabi_mhz * len(drive.offsets_mhz))
        scales.extend(abs(d) for d in transition_detunings(member, config))
        # second-order stepping: ~2000 steps per fastest cycle keeps the
        # default well inside the 1e-6 cross-check budget
        dt = min(t_p / 20000.0, 1.0 / (2000.0 * max(scales)))
    if not 0 < dt <= t_p:
        raise ConfigError("dt must lie in (0, t_p]")

    n_steps = int(np.ceil(t_p / dt))
    edges = np.linspace(0.0, t_p, n_steps + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    step = t_p / n_steps

    i_env, q_env = drive_envelope(drive, mids)
    h_x = 0.5 * TWO_PI * member.alpha * i_env
    h_y = 0.5 * TWO_PI * member.alpha * q_env

    k = config.levels
    u = np.zeros((2 * k, 2 * k), dtype=complex)
    d_ang = TWO_PI * transition_detunings(member, config)
    for i in range(k):
        h_z = np.full_like(h_x, 0.5 * d_ang[i])
        u[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = _stepped_block_unitary(
            h_x, h_y, h_z, step
        )
    return Propagator(matrix=u, t_p=t_p)


def batched_flat_unitaries(drive: FlatDrive, deltas_mhz, alphas, n_steps: int = 2048):
    """2x2 unitaries of a flat drive for many (detuning, alpha) pairs.

    Midpoint-stepped like ``oracle_propagator`` but with the running
    product carried across a batch, which keeps memory flat for large
    detuning grids.  Returns shape (n_pairs, 2, 2).
    """
    deltas = np.asarray(deltas_mhz, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    t_p = drive.t_p
    edges = np.linspace(0.0, t_p, n_steps + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    step = t_p / n_steps
    i_env, q_env = drive_envelope(drive, mids)

    h_z = 0.5 * TWO_PI * deltas  # constant per pair
    u = np.tile(np.eye(2, dtype=complex), (len(deltas), 1, 1))
    block = np.empty_like(u)
    for n in range(n_steps):
        h_x = 0.5 * TWO_PI * alphas * i_env[n]
        h_y = 0.5 * TWO_PI * alphas * q_env[n]
        mag = np.sqrt(h_x**2 + h_y**2 + h_z**2)
        theta = mag * step
        sinc_term = step * np.sinc(theta / np.pi)
        cos_t = np.cos(theta)
        block[:, 0, 0] = cos_t - 1j * sinc_term * h_z
        block[:, 1, 1] = cos_t + 1j * sinc_term * h_z
        block[:, 0, 1] = -sinc_term * (h_y + 1j * h_x)
        block[:, 1, 0] = sinc_term * (h_y - 1j * h_x)
        u = np.matmul(block, u)
    return u
