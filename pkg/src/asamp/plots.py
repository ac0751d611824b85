"""Figure rendering for benchmark reports.

Figures are written next to the CSVs; the CSVs remain the canonical
machine-readable output.
"""

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_STYLES = {
    "asamp-l1": dict(color="tab:red", marker="o"),
    "asamp-bg": dict(color="tab:orange", marker="s"),
    "asamp-hmc": dict(color="tab:red", marker="o"),
    "vamp": dict(color="tab:blue", marker="^"),
    "vamp-bg": dict(color="tab:blue", marker="^"),
    "vamp-hmc": dict(color="tab:cyan", marker="v"),
    "admm": dict(color="tab:green", marker="x"),
    "ista": dict(color="tab:purple", marker="+"),
    "diag-vamp": dict(color="tab:brown", marker="d"),
    "mps": dict(color="tab:gray", marker="*"),
}


def _style(solver):
    s = dict(_STYLES.get(solver, {}))
    s.setdefault("markersize", 4)
    s.setdefault("linewidth", 1.2)
    return s


def plot_residual(report, path, width=5, upto=None):
    """Median relative KKT residual versus iteration, one point per
    window (the window minimum), log scale."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for solver in report.solver_names():
        its, vals = report.figure_points(solver, "kkt", width=width, upto=upto)
        ax.semilogy(its, vals, label=solver, **_style(solver))
    ax.set_xlabel("iteration")
    ax.set_ylabel("median relative KKT residual")
    ax.set_title(report.config.name)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_nmse(report, path, width=1, upto=None):
    """Median NMSE (dB) versus iteration."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for solver in report.solver_names():
        its, vals = report.figure_points(solver, "nmse", width=width, upto=upto)
        ax.plot(its, vals, label=solver, **_style(solver))
    ax.set_xlabel("iteration")
    ax.set_ylabel("median NMSE (dB)")
    ax.set_title(report.config.name)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_report(report, out_dir, stem=None, width=5):
    """Render the figures appropriate for the experiment kind; returns the
    list of files written."""
    os.makedirs(out_dir, exist_ok=True)
    stem = stem or report.config.name
    written = []
    if report.config.kind == "lasso":
        written.append(plot_residual(
            report, os.path.join(out_dir, f"{stem}_residual.png"), width=width))
    written.append(plot_nmse(
        report, os.path.join(out_dir, f"{stem}_nmse.png"),
        width=1 if report.config.kind == "channel" else width))
    return written


def plot_rho_landscape(extremes1, extremes2, v_opt, path, grid=80):
    """Log-log heatmap of the product of factor radii for the quadratic
    splitting, with the computed minimizer marked."""
    import numpy as np

    from .theory import rho_product

    v_grid = np.logspace(-3, 3, grid)
    Z = np.empty((grid, grid))
    for i, v1 in enumerate(v_grid):
        for j, v2 in enumerate(v_grid):
            Z[i, j] = rho_product(extremes1, extremes2, v1, v2)
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    pc = ax.pcolormesh(v_grid, v_grid, Z.T, shading="auto", cmap="viridis")
    ax.plot([v_opt[0]], [v_opt[1]], "r*", markersize=12)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("v1")
    ax.set_ylabel("v2")
    ax.set_title("factor-radius product")
    fig.colorbar(pc, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
