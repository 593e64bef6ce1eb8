"""Static SVG figures of unfolding results, coverage curves and MCEM traces.

Output is deterministic: the SVG id salt is fixed and no date is embedded.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_unfolding", "plot_coverage", "plot_trace"]

_RC = {"svg.hashsalt": "unfold", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_unfolding(path, grid, f_hat, f_bc=None, band=None, truth=None, smeared=None, xlabel="s", title=None):
    """Point estimates with an optional band, truth and smeared-histogram points.

    ``smeared`` is a ``(bin_centers, density)`` pair.
    """
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        if band is not None:
            ax.fill_between(grid, band.lower, band.upper, color="0.8", lw=0, label=f"{100 * (1 - 2 * band.alpha):.0f}% {band.method} band")
        if truth is not None:
            ax.plot(grid, truth, "k-", lw=1.2, label="true intensity")
        ax.plot(grid, f_hat, "b--", lw=1.2, label="unfolded")
        if f_bc is not None:
            ax.plot(grid, f_bc, "r-.", lw=1.0, label="bias-corrected")
        if smeared is not None:
            ax.plot(*smeared, "k.", ms=3, label="smeared data / bin width")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("intensity")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        _save(fig, path)


def plot_coverage(path, reports, nominal=None, title=None):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for rep in reports:
            ax.plot(rep.grid, rep.coverage, lw=1.0, label=f"{rep.label} (avg {100 * rep.average_coverage:.1f}%)")
        nominal = nominal if nominal is not None else reports[0].nominal
        if nominal is not None and np.isfinite(nominal):
            ax.axhline(nominal, color="k", lw=0.8, ls=":")
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("s")
        ax.set_ylabel("empirical coverage")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, fontsize=7, loc="lower left")
        fig.tight_layout()
        _save(fig, path)


def plot_trace(path, deltas):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.semilogy(np.arange(len(deltas)), deltas, "o-", ms=3)
        ax.set_xlabel("MCEM iteration")
        ax.set_ylabel("delta")
        fig.tight_layout()
        _save(fig, path)
