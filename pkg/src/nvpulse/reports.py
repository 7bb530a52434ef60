"""Artifact writing: delimited tables, headers, and figures.

Every table is plain comma-delimited text with `#`-prefixed header
lines carrying the tool version, a sha256 hash of the resolved config,
the seed, and any run-specific metadata.  Floats are written with
repr-exact precision so identical runs produce bitwise-identical files;
nothing time- or host-dependent ever goes into an artifact (wall times
are printed to stdout only).

Writes are atomic: the table is written to a temporary file in the
destination directory and moved into place with os.replace, so a
crashed run never leaves a truncated artifact behind.
"""

import hashlib
import json
import os
import tempfile

import numpy as np

from . import __version__
from .hyperfine import ConfigError
from .pulses import PulseCoefficients


def config_hash(resolved_config: dict) -> str:
    """sha256 over the canonical JSON form of the resolved config."""
    canon = json.dumps(resolved_config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def artifact_header(command: str, cfg_hash: str, seed: int, extra: dict | None = None):
    lines = [
        f"# tool: nvpulse {__version__}",
        f"# command: {command}",
        f"# config_sha256: {cfg_hash}",
        f"# seed: {seed}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"# {key}: {value}")
    return lines


def _format_cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_table(path: str, columns: dict, header_lines) -> None:
    """Atomically write named columns as comma-delimited text."""
    names = list(columns)
    arrays = [np.atleast_1d(columns[n]) for n in names]
    n_rows = len(arrays[0])
    if any(len(a) != n_rows for a in arrays):
        raise ConfigError("all columns must have equal length")
    out_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(out_dir, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            for line in header_lines:
                fh.write(line + "\n")
            fh.write("# columns: " + ",".join(names) + "\n")
            for i in range(n_rows):
                fh.write(",".join(_format_cell(a[i]) for a in arrays) + "\n")
        os.chmod(tmp, 0o644)  # mkstemp defaults to owner-only
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_table(path: str):
    """Read a table written by write_table: (metadata, columns)."""
    meta = {}
    names = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    meta[key.strip()] = value.strip()
                continue
            rows.append(line.split(","))
    if "columns" not in meta:
        raise ConfigError(f"{path}: missing '# columns:' header")
    names = [c.strip() for c in meta["columns"].split(",")]
    if any(len(r) != len(names) for r in rows):
        raise ConfigError(f"{path}: ragged rows")
    data = {}
    for j, name in enumerate(names):
        col = [r[j] for r in rows]
        try:
            data[name] = np.array([float(x) for x in col])
        except ValueError:
            data[name] = np.array(col)
    return meta, data


def write_coefficients(path: str, pulse: PulseCoefficients, header_lines,
                       extras: dict | None = None) -> None:
    """Pulse coefficient table: one row per sine harmonic."""
    extra = [
        f"# t_p_us: {pulse.t_p!r}",
        f"# carrier_mhz: {pulse.carrier_mhz!r}",
    ]
    for key, value in (extras or {}).items():
        extra.append(f"# {key}: {_format_cell(value)}")
    write_table(
        path,
        {
            "j": np.arange(1, pulse.n_f + 1),
            "a_x_mhz": pulse.a_x,
            "a_y_mhz": pulse.a_y,
        },
        list(header_lines) + extra,
    )


def read_coefficients(path: str) -> PulseCoefficients:
    """Reload a pulse written by write_coefficients, losslessly."""
    meta, data = read_table(path)
    for key in ("t_p_us", "carrier_mhz"):
        if key not in meta:
            raise ConfigError(f"{path}: missing '# {key}:' header")
    return PulseCoefficients(
        a_x=data["a_x_mhz"],
        a_y=data["a_y_mhz"],
        t_p=float(meta["t_p_us"]),
        carrier_mhz=float(meta["carrier_mhz"]),
    )


def _use_agg():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def _atomic_savefig(fig, path: str) -> None:
    # fixed metadata keeps reruns byte-identical (no creation date)
    out_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(out_dir, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=150, format="png", metadata={"Software": "nvpulse"})
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_envelope_figure(path: str, pulse: PulseCoefficients) -> None:
    from .pulses import envelope

    plt = _use_agg()
    t = np.linspace(0.0, pulse.t_p, 512)
    i_env, q_env = envelope(pulse, t)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(t, i_env, label="I")
    ax.plot(t, q_env, label="Q")
    ax.plot(t, np.hypot(i_env, q_env), "k--", lw=0.8, label="|envelope|")
    ax.set_xlabel("time (us)")
    ax.set_ylabel("Rabi frequency (MHz)")
    ax.legend(frameon=False)
    fig.tight_layout()
    _atomic_savefig(fig, path)
    plt.close(fig)


def save_trace_figure(path: str, trace) -> None:
    plt = _use_agg()
    steps = [r.step for r in trace]
    fig, axes = plt.subplots(2, 1, figsize=(6, 4.6), sharex=True)
    axes[0].plot(steps, [r.f_st for r in trace], label="F_st")
    axes[0].plot(steps, [r.f_tot for r in trace], label="F_tot")
    axes[0].set_ylabel("objective")
    axes[0].legend(frameon=False)
    axes[1].plot(steps, [r.max_rabi_mhz for r in trace], label="max Rabi")
    axes[1].plot(steps, [r.p for r in trace], label="p")
    axes[1].set_xlabel("step")
    axes[1].legend(frameon=False)
    fig.tight_layout()
    _atomic_savefig(fig, path)
    plt.close(fig)


def save_map_figure(path: str, deltas_mhz, alphas, fmap) -> None:
    plt = _use_agg()
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    mesh = ax.pcolormesh(deltas_mhz, alphas, np.asarray(fmap).T, vmin=0.0, vmax=1.0,
                         shading="nearest")
    fig.colorbar(mesh, ax=ax, label="fidelity")
    ax.set_xlabel("detuning (MHz)")
    ax.set_ylabel("relative amplitude")
    fig.tight_layout()
    _atomic_savefig(fig, path)
    plt.close(fig)


def save_odmr_figure(path: str, offsets_mhz, contrast, slope) -> None:
    plt = _use_agg()
    fig, axes = plt.subplots(2, 1, figsize=(6, 4.6), sharex=True)
    axes[0].plot(offsets_mhz, contrast)
    axes[0].set_ylabel("contrast")
    axes[1].plot(offsets_mhz, slope)
    axes[1].set_ylabel("slope (1/MHz)")
    axes[1].set_xlabel("drive offset (MHz)")
    fig.tight_layout()
    _atomic_savefig(fig, path)
    plt.close(fig)


def save_waveform_figure(path: str, t_us, i_norm, q_norm) -> None:
    plt = _use_agg()
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.step(t_us, i_norm, where="mid", label="I")
    ax.step(t_us, q_norm, where="mid", label="Q")
    ax.set_xlabel("time (us)")
    ax.set_ylabel("normalized amplitude")
    ax.set_ylim(-1.05, 1.05)
    ax.legend(frameon=False)
    fig.tight_layout()
    _atomic_savefig(fig, path)
    plt.close(fig)


def save_photophysics_figure(path: str, radii, reinit_times_s, cycles, contrast,
                             durations_s, duration_contrast) -> None:
    plt = _use_agg()
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2))
    axes[0].semilogy(radii, np.asarray(reinit_times_s) * 1e3, ".-")
    axes[0].set_xlabel("r / r_0")
    axes[0].set_ylabel("reinit time (ms)")
    axes[1].plot(cycles, contrast, ".-")
    axes[1].set_xlabel("cycle")
    axes[1].set_ylabel("contrast")
    axes[2].plot(np.asarray(durations_s) * 1e3, duration_contrast, ".-")
    axes[2].set_xlabel("laser pulse (ms)")
    axes[2].set_ylabel("settled contrast")
    fig.tight_layout()
    _atomic_savefig(fig, path)
    plt.close(fig)
