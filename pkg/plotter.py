# plotter.py
from __future__ import annotations

from typing import Optional

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from gbd import GmmFit


def plot_edge_weight_fit(
    weights: np.ndarray,
    fit: Optional[GmmFit],
    threshold: float,
    out_path: str,
    title: str = "MST edge weights",
) -> str:
    w = np.asarray(weights, dtype=float)

    plt.figure()
    plt.hist(w, bins=40, density=True, alpha=0.5)
    if fit is not None:
        xs = np.linspace(w.min(), w.max(), 400)
        dens = fit.component_pdf(xs)
        plt.plot(xs, dens[:, 0], linewidth=1, label=f"mu1={fit.means[0]:.3f} sd1={fit.stddevs[0]:.3f}")
        plt.plot(xs, dens[:, 1], linewidth=1, label=f"mu2={fit.means[1]:.3f} sd2={fit.stddevs[1]:.3f}")
    plt.axvline(threshold, linestyle="--", linewidth=1, label=f"cut {threshold:.3f}")

    plt.title(title)
    plt.xlabel("Edge weight")
    plt.ylabel("Density")
    plt.legend()
    plt.tight_layout()
    plt.savefig(out_path, dpi=150, metadata={"Software": None})
    plt.close()
    return out_path
