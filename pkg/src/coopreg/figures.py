"""False-color overlays and field figures."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

WHITE = (1.0, 1.0, 1.0)
GREEN = (0.0, 1.0, 0.0)
MAGENTA = (1.0, 0.0, 1.0)


def render_falsecolor(target, registered, threshold: float = 0.5) -> np.ndarray:
    """RGB overlap image: white both, green registered only, magenta target only."""
    t = np.asarray(target)
    r = np.asarray(registered)
    if t.shape != r.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {r.shape}")
    ft, fr = t > threshold, r > threshold
    rgb = np.zeros(t.shape + (3,))
    rgb[ft & fr] = WHITE
    rgb[fr & ~ft] = GREEN
    rgb[ft & ~fr] = MAGENTA
    return rgb


def draw_field(ax, image, field, step: int = 4, title: str | None = None):
    """Source image with the displacement field as arrows (row, col offsets)."""
    phi = np.asarray(field)
    ax.imshow(image, cmap="gray", vmin=0, vmax=1)
    rows, cols = np.mgrid[0:phi.shape[0]:step, 0:phi.shape[1]:step]
    d = phi[::step, ::step]
    ax.quiver(cols, rows, d[..., 1], d[..., 0], color="tab:orange", angles="xy",
              scale_units="xy", scale=1.0, width=0.004)
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize=8)


def pair_figure(path, source, target, registered, field, title=""):
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    draw_field(axes[0], source, field, title="source + field")
    axes[1].imshow(target, cmap="gray", vmin=0, vmax=1)
    axes[1].set_title("target", fontsize=8)
    axes[1].set_axis_off()
    axes[2].imshow(render_falsecolor(target, registered))
    axes[2].set_title("overlap (white ok, green reg., magenta tgt.)", fontsize=8)
    axes[2].set_axis_off()
    fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def sweep_figure(path, params, latents, sources, fields, n_strip: int = 10, label="param"):
    """Strip of evenly spaced sources with their fields, plus latent vs parameter."""
    idx = np.linspace(0, len(params) - 1, min(n_strip, len(params))).round().astype(int)
    fig = plt.figure(figsize=(2.0 * len(idx) / 2 + 4, 4.5))
    ncol = (len(idx) + 1) // 2
    grid = fig.add_gridspec(2, ncol + 2)
    for k, i in enumerate(idx):
        ax = fig.add_subplot(grid[k // ncol, k % ncol])
        draw_field(ax, sources[i], fields[i], step=6, title=f"{latents[i]:.3g}")
    ax = fig.add_subplot(grid[:, ncol:])
    ax.plot(params, latents, ".-")
    ax.set_xlabel(label)
    ax.set_ylabel("latent value")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
