"""Command-line interface: experiment orchestration and report emission.

Subcommands: ``verify-shrinker``, ``lsi-deficit``, ``solve-abp``,
``certify-transport``, ``entropy``, ``full-pipeline``.  Each run writes a
JSON record, CSV sidecars and rendered figures into the output directory;
the exit code is 0 when every verdict passes, 1 when a verdict fails,
2 for configuration errors and 3 for compute errors.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import figures
from .abp import assemble, canonical_pair_residual, vanishing_discount
from .config import load_config
from .deficits import consistency_check, deficit
from .entropy import entropy_with_tail, harmonic_family, mu_estimate
from .errors import ConfigError, NotNormalized, ShrinkLsiError
from .geometry import frame_invariant_residuals, sample_params
from .measure import export_field_csv, growth_diagnostic, integrate
from .reporting import RunRecord, write_csv, write_record
from .transport import canonical_equality_witness, certify

SUBCOMMANDS = (
    "verify-shrinker",
    "lsi-deficit",
    "solve-abp",
    "certify-transport",
    "entropy",
    "full-pipeline",
)


def _stage_verify(cfg, model, grid, record, rng):
    tol = cfg.tolerances
    params = sample_params(model, 1000, rng)
    frames = frame_invariant_residuals(model, params)
    frame_worst = max(v for k, v in frames.items() if k != "shrinker_residual")
    residual = canonical_pair_residual(model, grid, tau=cfg.tau)
    res_max = float(np.max(np.abs(residual.values)))
    record.reports["frame_invariants"] = frames
    record.reports["canonical_residual_max"] = res_max
    frame_tol = tol["frame_invariants"]
    if model.chart_kind != "analytic_builtin":
        step = getattr(model.chart, "step", None)
        h = float(np.max(step)) if step is not None else 1e-4
        frame_tol = max(frame_tol, 10.0 * h**2)
    record.add_verdict("frame_invariants_max", frame_worst, "<=", frame_tol)
    if model.shrinker:
        record.add_verdict("shrinker_residual_max", frames["shrinker_residual"],
                           "<=", tol["shrinker_residual"])
    record.add_verdict("canonical_residual_max", res_max, "<=", tol["canonical_residual"])
    return residual


def _stage_deficit(cfg, model, grid, fld, record, opts):
    rep = deficit(model, fld, tau=cfg.tau)
    record.reports["deficit"] = rep
    tol = cfg.tolerances
    record.add_verdict("jensen_correction", rep.jensen_correction, "<=", tol["jensen"])
    if model.shrinker:
        record.add_verdict("deficit_sharp_nonneg", rep.deficit_sharp,
                           ">=", -tol["deficit_floor"])
        record.add_verdict("deficit_general_nonneg", rep.deficit_general,
                           ">=", -tol["deficit_floor"])
    if opts.emit_terms:
        for k, v in rep.terms().items():
            print(f"  {k:>18s} = {v:+.12e}")
    if not opts.no_figures:
        figures.plot_deficit_terms(rep, opts.out)
    write_csv(opts.out, "deficit_terms.csv", ["term", "value"],
              list(rep.terms().items()))
    return rep


def _divergence_verdicts(cfg, sol, record, label):
    tol = cfg.tolerances
    res = [abs(v) for v in sol.divergence_residuals]
    radii = sol.divergence_radii
    beyond = [i for i, r in enumerate(radii) if r >= max(4.0, 2.0)]
    monotone = all(res[i] >= res[j] - 1e-14 for i, j in zip(beyond, beyond[1:]))
    record.add_verdict(f"{label}_divergence_monotone", float(monotone), ">=", 1.0)
    at20 = [v for r, v in zip(radii, res) if r >= 20.0]
    if at20:
        record.add_verdict(f"{label}_divergence_at_20", at20[0], "<=", tol["divergence"])
    energies = sol.dirichlet_energies
    nondec = all(b >= a - 1e-14 for a, b in zip(energies, energies[1:]))
    record.add_verdict(f"{label}_energy_nondecreasing", float(nondec), ">=", 1.0)
    pairs = {r: e for r, e in zip(radii, energies)}
    doublings = [(r, 2.0 * r) for r in radii if 2.0 * r in pairs]
    if doublings and pairs[doublings[-1][1]] > 0:
        r1, r2 = doublings[-1]  # last recorded doubling of the radius
        rel = (pairs[r2] - pairs[r1]) / pairs[r2]
        record.add_verdict(f"{label}_energy_saturation", rel, "<=", tol["divergence"])


def _solve_one(cfg, model, grid, fld, epsilon, bc):
    deltas = tuple(2.0 ** (-k) for k in range(int(cfg.discount["max_halvings"]) + 1))
    pert, op, ell = assemble(model, fld, epsilon, tau=cfg.tau, bc=bc)
    sol = vanishing_discount(
        op, ell, pert,
        deltas=deltas,
        tol_c=cfg.discount["tol_c"],
        tol_w=cfg.discount["tol_w"],
    )
    return pert, op, ell, sol


def _stage_solve(cfg, model, grid, fld, record, opts):
    tol = cfg.tolerances
    solved = []
    for eps in cfg.epsilons:
        pert, op, ell, sol = _solve_one(cfg, model, grid, fld, eps, cfg.boundary_condition)
        label = f"eps{eps:g}"
        rep = deficit(model, pert.field, tau=cfg.tau)
        resid = consistency_check(rep, sol)
        record.reports[f"solve_{label}"] = {
            "epsilon": eps,
            "tau": cfg.tau,
            "bc": sol.bc,
            "c": sol.c,
            "alpha": sol.alpha,
            "alpha_base": sol.alpha_base,
            "sup_ell": sol.sup_ell,
            "outside_value": ell.outside_value,
            "upwind_fraction": sol.upwind_fraction,
            "converged_at": sol.converged_at,
            "steps": len(sol.discount_trace),
            "growth": sol.growth,
            "consistency_residual": resid,
            "peclet_violations": op.peclet_violations,
        }
        record.add_verdict(f"{label}_alpha_floor", sol.alpha, ">=",
                           sol.alpha_base - tol["alpha_floor"])
        record.add_verdict(f"{label}_discount_bound_violations",
                           float(sol.discount_bound_violations()), "<=", 0.0)
        record.add_verdict(f"{label}_growth_certificates",
                           float(len(sol.growth)), ">=", 3.0)
        record.add_verdict(f"{label}_consistency", resid, "<=", tol["consistency"])
        _divergence_verdicts(cfg, sol, record, label)
        write_csv(opts.out, f"discount_trace_{label}.csv",
                  ["delta", "delta_w_anchor", "sup_w", "sup_ell_over_delta"],
                  sol.discount_trace)
        write_csv(opts.out, f"divergence_{label}.csv",
                  ["radius", "flux_residual", "dirichlet_energy"],
                  list(zip(sol.divergence_radii, sol.divergence_residuals,
                           sol.dirichlet_energies)))
        solved.append((pert, op, ell, sol))

        if cfg.check_dirichlet_sensitivity and cfg.boundary_condition == "neumann":
            pert_d, op_d, ell_d, sol_d = _solve_one(cfg, model, grid, fld, eps, "dirichlet")
            record.reports[f"solve_{label}_dirichlet"] = {
                "c": sol_d.c,
                "alpha": sol_d.alpha,
                "bc_sensitivity": abs(sol_d.alpha - sol.alpha),
            }
            record.add_verdict(f"{label}_dirichlet_alpha_floor", sol_d.alpha, ">=",
                               sol_d.alpha_base - tol["alpha_floor"])
            _divergence_verdicts(cfg, sol_d, record, f"{label}_dirichlet")
    if not opts.no_figures:
        figures.plot_discount_traces([s[3] for s in solved], opts.out)
        figures.plot_divergence([s[3] for s in solved], opts.out)
    return solved


def _stage_transport(cfg, model, record, solved, rng, opts):
    if cfg.tau != 1.0:
        # the Jacobian bound and the mass chain are the unit-scale objects
        record.reports["transport"] = "skipped: transport certificates are defined at tau = 1"
        return []
    tol = cfg.tolerances
    probes_cfg = cfg.probes
    certs = []
    for pert, op, ell, sol in solved:
        label = f"eps{sol.epsilon:g}"
        cert = certify(
            model, sol, pert, rng,
            jacobian_samples=int(probes_cfg["jacobian_samples"]),
            probe_targets=int(probes_cfg["surjectivity_targets"]),
            xi_bound=probes_cfg["xi_bound"],
            y_bound=probes_cfg["y_bound"],
        )
        record.reports[f"transport_{label}"] = cert.summary()
        record.add_verdict(f"{label}_jacobian_violations",
                           float(cert.jacobian.violations), "<=", 0.0)
        record.add_verdict(f"{label}_jacobian_in_u_count",
                           float(cert.jacobian.in_u_count), ">=",
                           float(probes_cfg["jacobian_samples"]))
        record.add_verdict(f"{label}_minimizers_interior",
                           float(cert.all_minimizers_interior), ">=", 1.0)
        h_max = max(sol.u.grid.spacings)
        record.add_verdict(f"{label}_recovery_error", cert.max_recovery_error,
                           "<=", tol["recovery_factor"] * h_max)
        record.add_verdict(f"{label}_mass_ratio", cert.mass_ratio,
                           ">=", 1.0 - tol["mass_ratio"])
        if opts.plot_data:
            write_csv(opts.out, f"jacobian_samples_{label}.csv",
                      ["node", "y", "in_u", "det", "bound", "ok"],
                      [(repr(s.node), repr(s.y), int(s.in_u), s.det,
                        s.bound if math.isfinite(s.bound) else "", int(s.ok))
                       for s in cert.jacobian.samples])
        certs.append((label, cert))
    grid = solved[0][3].u.grid
    det, bound = canonical_equality_witness(model, grid)
    record.reports["equality_witness"] = {"det": det, "bound": bound,
                                          "gap": abs(det - bound)}
    record.add_verdict("equality_witness_tight", abs(det - bound), "<=", 1e-10)
    if not opts.no_figures and certs:
        figures.plot_recovery_errors(certs, opts.out)
    return certs


def _stage_entropy(cfg, model, grid, record, opts):
    tol = cfg.tolerances
    lam, tail = entropy_with_tail(model, grid)
    fam = harmonic_family(model, grid, count=int(cfg.entropy_family["count"]),
                          amplitude=cfg.entropy_family["amplitude"])
    rep = mu_estimate(model, grid, family=fam)
    record.reports["entropy"] = rep
    record.reports["entropy_tail_estimate"] = tail
    if model.shrinker:
        record.add_verdict("lambda_floor", lam, ">=", 1.0 - tol["lambda_floor"])
    record.add_verdict("mu_gap", rep.gap, ">=", -tol["gap_floor"])
    record.add_verdict("family_normalization", rep.normalization_dev, "<=", 1e-10)
    write_csv(opts.out, "entropy_landscape.csv", ["member", "amplitude", "value"],
              rep.landscape)
    if not opts.no_figures:
        figures.plot_entropy_landscape(rep, opts.out)
    return rep


def _stage_growth(cfg, model, grid, record, opts):
    radii = [r for r in cfg.growth_radii if r <= grid.truncation_radius]
    check = growth_diagnostic(model, radii, grid)
    record.reports["growth"] = check
    record.add_verdict("growth_volumes_monotone", float(check.volumes_monotone), ">=", 1.0)
    write_csv(opts.out, "growth.csv", ["radius", "volume", "max_h"],
              list(zip(check.radii, check.volumes, check.max_h)))
    if not opts.no_figures:
        figures.plot_growth(check, opts.out)
    return check


def run(command, cfg, opts):
    """Execute one subcommand; returns the finished RunRecord."""
    os.makedirs(opts.out, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    record = RunRecord.begin(command, cfg)
    model = cfg.build_model()
    grid = cfg.build_grid(model)
    record.reports["model"] = model.name
    record.reports["grid_shape"] = list(grid.shape)

    def density():
        fld = cfg.build_density(model, grid, auto_normalize=opts.auto_normalize)
        record.reports["density_mass"] = integrate(model, fld)
        return fld

    def verify_and_plot():
        residual = _stage_verify(cfg, model, grid, record, rng)
        if opts.plot_data:
            export_field_csv(residual, f"{opts.out}/canonical_residual.csv")
        if not opts.no_figures:
            figures.plot_canonical_residual(model, residual, opts.out)

    if command == "verify-shrinker":
        verify_and_plot()
    elif command == "lsi-deficit":
        _stage_deficit(cfg, model, grid, density(), record, opts)
    elif command == "solve-abp":
        _stage_solve(cfg, model, grid, density(), record, opts)
    elif command == "certify-transport":
        solved = _stage_solve(cfg, model, grid, density(), record, opts)
        _stage_transport(cfg, model, record, solved, rng, opts)
    elif command == "entropy":
        _stage_entropy(cfg, model, grid, record, opts)
    elif command == "full-pipeline":
        verify_and_plot()
        _stage_deficit(cfg, model, grid, density(), record, opts)
        solved = _stage_solve(cfg, model, grid, density(), record, opts)
        _stage_transport(cfg, model, record, solved, rng, opts)
        _stage_entropy(cfg, model, grid, record, opts)
        _stage_growth(cfg, model, grid, record, opts)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown subcommand {command!r}")
    return record.finish()


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shrinklsi",
        description="Weighted log-Sobolev functionals, ergodic solves and "
                    "transport certificates on discretized self-shrinkers.",
    )
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", default=None,
                        help="JSON config path (defaults apply when omitted)")
    parser.add_argument("--out", default="shrinklsi-out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--emit-terms", action="store_true",
                        help="print each deficit integral term")
    parser.add_argument("--auto-normalize", action="store_true",
                        help="rescale the configured density to unit mass")
    parser.add_argument("--plot-data", action="store_true",
                        help="emit extra CSVs shaped for external plotting")
    parser.add_argument("--no-figures", action="store_true",
                        help="skip PNG rendering")
    return parser


def main(argv=None):
    opts = build_parser().parse_args(argv)
    try:
        cfg = load_config(opts.config if opts.config else {})
        if opts.seed is not None:
            raw = dict(cfg.raw)
            raw["seed"] = opts.seed
            cfg = load_config(raw)
        record = run(opts.command, cfg, opts)
    except (ConfigError, NotNormalized) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ShrinkLsiError as exc:
        print(f"compute error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    path = write_record(record, opts.out)
    for v in record.verdicts:
        status = "PASS" if v.passed else "FAIL"
        print(f"[{status}] {v.name}: value={v.value:.6g} {v.op} {v.threshold:.6g}")
    print(f"record: {path}")
    print(f"result: {'PASS' if record.passed else 'FAIL'}")
    return 0 if record.passed else 1


if __name__ == "__main__":
    sys.exit(main())
