"""Log-log convergence figures rendered to image files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def convergence_figure(reports, path, title=""):
    """Plot E1 and Einf against N for each ConvergenceReport in ``reports``.

    Dashed guide lines of slope -1 and -2 are anchored at the first point
    of the first series.
    """
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    markers = {"E1": "o", "Einf": "s"}
    for cr in reports:
        N = np.array([r.N for r in cr.reports], dtype=float)
        for norm in ("E1", "Einf"):
            E = np.array([getattr(r, norm) for r in cr.reports])
            ok = E > 0
            slope = cr.slope_E1 if norm == "E1" else cr.slope_Einf
            ax.loglog(N[ok], E[ok], marker=markers[norm], lw=1.2,
                      label=f"{cr.indicator} {norm} (order {slope:.2f})")
    if reports and reports[0].reports:
        N = np.array([r.N for r in reports[0].reports], dtype=float)
        E0 = max(reports[0].reports[0].Einf, 1e-300)
        for p in (1, 2):
            ax.loglog(N, E0 * (N / N[0]) ** (-p), "k--", lw=0.7, alpha=0.6)
            ax.annotate(f"O({p})", (N[-1], E0 * (N[-1] / N[0]) ** (-p)), fontsize=8)
    ax.set_xlabel("N")
    ax.set_ylabel("error")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
