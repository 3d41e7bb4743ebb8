"""Figure rendering for the report path.

Every CSV sidecar the reporters emit gets a matching PNG rendered next to
it, so a run directory is browsable without loading the data elsewhere.
The Agg backend keeps this headless-safe.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "plot_discount_traces",
    "plot_divergence",
    "plot_deficit_terms",
    "plot_growth",
    "plot_entropy_landscape",
    "plot_canonical_residual",
    "plot_recovery_errors",
]


def _save(fig, outdir, name):
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, name)
    fig.savefig(path, dpi=140, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_discount_traces(solutions, outdir, name="discount_trace.png"):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 3.6))
    for sol in solutions:
        deltas = [t[0] for t in sol.discount_trace]
        cs = [t[1] for t in sol.discount_trace]
        sups = [t[2] for t in sol.discount_trace]
        bounds = [t[3] for t in sol.discount_trace]
        label = f"eps={sol.epsilon:g}, tau={sol.tau:g}"
        ax1.semilogx(deltas, cs, "o-", ms=3, label=label)
        ax1.axhline(sol.c, color="gray", lw=0.5, ls=":")
        ax2.loglog(deltas, sups, "o-", ms=3, label=label)
        ax2.loglog(deltas, bounds, "--", lw=0.8, color="gray")
    ax1.set_xlabel("discount")
    ax1.set_ylabel("discount * w(anchor)")
    ax1.legend(fontsize=7)
    ax2.set_xlabel("discount")
    ax2.set_ylabel("sup |w| (dashed: sup|l|/discount)")
    fig.suptitle("vanishing-discount convergence")
    return _save(fig, outdir, name)


def plot_divergence(solutions, outdir, name="divergence.png"):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 3.6))
    for sol in solutions:
        r = sol.divergence_radii
        res = np.abs(sol.divergence_residuals)
        ax1.semilogy(r, np.maximum(res, 1e-300), "o-", ms=3,
                     label=f"eps={sol.epsilon:g}")
        ax2.plot(r, sol.dirichlet_energies, "o-", ms=3)
    ax1.set_xlabel("ball radius")
    ax1.set_ylabel("|total divergence|")
    ax1.legend(fontsize=7)
    ax2.set_xlabel("ball radius")
    ax2.set_ylabel("weighted Dirichlet energy")
    fig.suptitle("boundary flux decay and energy saturation")
    return _save(fig, outdir, name)


def plot_deficit_terms(report, outdir, name="deficit_terms.png"):
    terms = report.terms()
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    names = list(terms)
    ax.bar(range(len(names)), [terms[k] for k in names])
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=7)
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_title(f"deficit terms (tau={report.tau:g})")
    return _save(fig, outdir, name)


def plot_growth(check, outdir, name="growth.png"):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 3.6))
    r = np.asarray(check.radii)
    ax1.loglog(r, check.volumes, "o", label="measured")
    ax1.loglog(r, check.coeff_volume * r**check.exponent_volume, "-",
               label=f"fit: {check.coeff_volume:.3g} r^{check.exponent_volume:.3g}")
    ax1.set_xlabel("radius")
    ax1.set_ylabel("volume of ball slice")
    ax1.legend(fontsize=7)
    ax2.plot(r, check.max_h, "o-")
    ax2.set_xlabel("radius")
    ax2.set_ylabel("max |H|")
    fig.suptitle("polynomial growth diagnostic")
    return _save(fig, outdir, name)


def plot_entropy_landscape(report, outdir, name="entropy_landscape.png"):
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    members = sorted({m for m, _, _ in report.landscape})
    for m in members:
        pts = sorted((a, v) for mm, a, v in report.landscape if mm == m)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", ms=3, lw=0.7,
                label=m, alpha=0.7)
    ax.axhline(-np.log(report.lambda_value), color="r", lw=0.8, ls="--",
               label="-log(lambda)")
    ax.set_xlabel("amplitude")
    ax.set_ylabel("weighted deficit functional")
    ax.set_title(f"lambda={report.lambda_value:.6g}, mu_hat={report.mu_hat:.4g}")
    if len(members) <= 8:
        ax.legend(fontsize=6)
    return _save(fig, outdir, name)


def plot_canonical_residual(model, residual_field, outdir, name="canonical_residual.png"):
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    vals = residual_field.values
    if residual_field.grid.ndim == 1:
        ax.plot(residual_field.grid.axes[0].nodes(), vals, lw=0.9)
        ax.set_xlabel("chart coordinate")
        ax.set_ylabel("residual")
    else:
        im = ax.imshow(np.abs(vals.T), origin="lower", aspect="auto",
                       extent=(residual_field.grid.axes[0].lo, residual_field.grid.axes[0].hi,
                               residual_field.grid.axes[1].lo, residual_field.grid.axes[1].hi))
        fig.colorbar(im, ax=ax, label="|residual|")
        ax.set_xlabel("chart axis 0")
        ax.set_ylabel("chart axis 1")
    ax.set_title(f"canonical-pair residual on {model.name}")
    return _save(fig, outdir, name)


def plot_recovery_errors(certificates, outdir, name="transport_probes.png"):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 3.6))
    for label, cert in certificates:
        errs = [p.recovery_error for p in cert.probes]
        xi_norms = [float(np.linalg.norm(p.xi)) for p in cert.probes]
        ax1.plot(xi_norms, errs, "o", ms=3, alpha=0.6, label=label)
        in_u = [s for s in cert.jacobian.samples if s.in_u]
        ax2.plot([s.bound for s in in_u], [s.det for s in in_u], ".", ms=2,
                 alpha=0.5, label=label)
    ax1.set_xlabel("|target|")
    ax1.set_ylabel("recovery error")
    ax1.legend(fontsize=7)
    lims = ax2.get_xlim()
    grid = np.linspace(*lims, 16)
    ax2.plot(grid, grid, "k--", lw=0.7, label="det = bound")
    ax2.set_xlabel("bound")
    ax2.set_ylabel("det")
    ax2.legend(fontsize=7)
    fig.suptitle("transport certificates")
    return _save(fig, outdir, name)
