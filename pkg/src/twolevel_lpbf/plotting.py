"""Report figures; rendered with the non-interactive Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402


def plot_dwell(path, layers, T_degC, measured=None, title="Dwell temperature"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(layers, T_degC, "o-", label="simulated", ms=4)
    if measured is not None:
        ax.plot(measured[0], measured[1], "s--", label="measured", ms=4)
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_xlabel("agglomerated layer")
    ax.set_ylabel("dwell temperature [°C]")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_convergence(path, h, errors):
    h, errors = np.asarray(h), np.asarray(errors)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(h, errors, "o-", label="L2 error")
    ref = errors[0] * (h / h[0]) ** 2
    ax.loglog(h, ref, "k:", label="slope 2")
    ax.set_xlabel("h [m]")
    ax.set_ylabel("error [K]")
    ax.grid(alpha=0.3, which="both")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
