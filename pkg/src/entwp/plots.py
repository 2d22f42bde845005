"""Static figure rendering (PNG, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE = dict(dpi=110, metadata={"Software": None})


def _finish(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_packets(path, R_ang, snapshots, title=""):
    """Densities and phase difference at a few times.

    ``snapshots`` is a list of ``(t_fs, rho1, rho2, dphi)``.
    """
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for t, r1, r2, dphi in snapshots:
        line, = ax1.plot(R_ang, r1, label=f"{t:g} fs")
        ax1.plot(R_ang, r2, ls="--", color=line.get_color())
        ax2.plot(R_ang, dphi, color=line.get_color())
    ax1.set_ylabel("density (1/bohr)")
    ax1.legend(fontsize=8)
    ax2.set_ylabel("phase difference (rad)")
    ax2.set_xlabel("R (Å)")
    fig.suptitle(title)
    return _finish(fig, path)


def plot_hockey(path, x, phase, weight, xlabel="1/E (1/eV)", fit=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x, phase, ".-", ms=3)
    if fit is not None:
        slope, icpt, xr = fit
        xx = np.linspace(*xr, 50)
        ax.plot(xx, slope * xx + icpt, "k:", lw=1)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("phase difference (rad)")
    ax2 = ax.twinx()
    ax2.fill_between(x, 0, weight, color="0.85", zorder=0)
    ax2.set_yticks([])
    ax.set_zorder(ax2.get_zorder() + 1)
    ax.patch.set_visible(False)
    return _finish(fig, path)


def plot_map(path, x, y, Z, xlabel, ylabel, zlabel, cmap="viridis", symmetric=False):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    kw = {}
    if symmetric:
        v = np.nanmax(np.abs(Z)) or 1.0
        kw = dict(vmin=-v, vmax=v)
        cmap = "RdBu_r"
    m = ax.pcolormesh(x, y, Z, shading="nearest", cmap=cmap, **kw)
    fig.colorbar(m, ax=ax, label=zlabel)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return _finish(fig, path)


def plot_spectrum(path, tau, y, freq, amp, period):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6))
    ax1.plot(tau, y, ".-", ms=3)
    ax1.set_xlabel("delay (fs)")
    ax1.set_ylabel("yield")
    ok = freq > 0
    ax2.plot(1.0 / freq[ok], amp[ok])
    ax2.set_xlim(10, 80)
    if np.isfinite(period):
        ax2.axvline(period, color="k", ls=":")
        ax2.set_title(f"dominant period {period:.2f} fs")
    ax2.set_xlabel("period (fs)")
    ax2.set_ylabel("amplitude")
    return _finish(fig, path)


def plot_phase_fit(path, E, c1, phase, significant):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax1.plot(E, c1, "-")
    ax1.set_ylabel("c1")
    s = np.asarray(significant, dtype=bool)
    ax2.plot(E[s], phase[s], ".", ms=4)
    ax2.set_ylabel("fitted phase (rad)")
    ax2.set_xlabel("KER (eV)")
    return _finish(fig, path)


def plot_ensemble(path, r2, departure, r2_min, dep_min):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(r2, departure, s=10)
    ax.axvline(r2_min, color="k", ls=":")
    ax.axhline(dep_min, color="k", ls=":")
    ax.set_xlabel("leading-edge R²")
    ax.set_ylabel("trailing departure (rad)")
    return _finish(fig, path)
