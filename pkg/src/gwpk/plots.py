"""Batch-only figure output (SVG plots, PNG masks) with reproducible bytes."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "gwpk"
_SVG_META = {"Date": None}
_PNG_META = {"Software": None}
_TINY = 1e-300


def _save_svg(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def stft_heatmap(table, path, title: str = "") -> Path:
    """``log10 |V_g f|`` over the lattice box."""
    lat = table.lattice
    amp = np.log10(np.abs(table.values) + _TINY)
    floor = amp.max() - 16.0
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(np.maximum(amp, floor).T, origin="lower", aspect="auto",
                   extent=[lat.xs[0], lat.xs[-1], lat.xis[0], lat.xis[-1]], cmap="viridis")
    fig.colorbar(im, ax=ax, label="log10 |V_g f|")
    ax.set_xlabel("x")
    ax.set_ylabel("xi")
    ax.set_title(title)
    return _save_svg(fig, path)


def decay_scatter(dist, log_amp, fit, path, title: str = "", max_points: int = 20000) -> Path:
    """``log|entry|`` against distance with the fitted line ``C - eps r``."""
    dist = np.asarray(dist)
    log_amp = np.asarray(log_amp)
    if dist.size > max_points:
        stride = -(-dist.size // max_points)
        dist, log_amp = dist[::stride], log_amp[::stride]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(dist, log_amp, s=1, alpha=0.3, rasterized=False)
    r = np.linspace(0.0, float(dist.max()) if dist.size else 1.0, 50)
    ax.plot(r, fit.log_amplitude - fit.rate * r, color="C3",
            label=f"eps = {fit.rate:.3g}, rms = {fit.fit_residual:.3g}")
    ax.set_xlabel("distance to flow image")
    ax.set_ylabel("log |entry|")
    ax.legend(loc="upper right")
    ax.set_title(title)
    return _save_svg(fig, path)


def mask_pair(before, after, path, title: str = "") -> Path:
    """Region masks before and after the flow side by side."""
    lat = before.lattice
    ext = [lat.xs[0], lat.xs[-1], lat.xis[0], lat.xis[-1]]
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    for ax, m, label in zip(axes, (before, after), ("t_start", "t_end")):
        ax.imshow(m.mask.T.astype(float), origin="lower", aspect="auto", extent=ext, cmap="gray_r", vmin=0, vmax=1)
        ax.set_title(f"regular region at {label}")
        ax.set_xlabel("x")
        ax.set_ylabel("xi")
    fig.suptitle(title)
    return _save_svg(fig, path)


def mask_png(mask, path) -> Path:
    """Mask as an 8-bit grayscale image (xi upward)."""
    path = Path(path)
    img = np.flipud(mask.mask.T.astype(np.uint8) * 255)
    plt.imsave(path, img, cmap="gray", vmin=0, vmax=255, format="png", metadata=_PNG_META)
    return path


def trajectories(t_grid, traj, path, title: str = "") -> Path:
    """Phase-plane orbits of the flow seeds (``traj`` has shape ``(steps+1, seeds, 2)``)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for i in range(traj.shape[1]):
        ax.plot(traj[:, i, 0], traj[:, i, 1], lw=1)
        ax.plot(traj[0, i, 0], traj[0, i, 1], "k.", ms=3)
    ax.set_xlabel("x")
    ax.set_ylabel("xi")
    ax.set_title(title)
    return _save_svg(fig, path)


def ratio_curves(times, ratios: dict, path, title: str = "") -> Path:
    """Max-over-N energy ratio against time for each A."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for A, r in ratios.items():
        ax.plot(times, np.max(r, axis=1), label=f"A = {A:g}")
    ax.axhline(1.0, color="k", lw=0.8, ls="--")
    ax.set_xlabel("t")
    ax.set_ylabel("max_N ratio")
    ax.legend()
    ax.set_title(title)
    return _save_svg(fig, path)
