"""Command-line front end: run experiments from JSON configs and write reports.

Exit codes: 0 when every asserted invariant held, 2 when the experiment is
invalid (bad config, computational box too small, hypotheses not met on the
data), 1 on solver/verifier errors or failed invariants.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import sigma as sc
from .config import ExperimentConfig, load_config
from .errors import BoxTooSmallError, ConfigError, KHessianError
from .estimates import (aux_Phi_and_pogorelov, direction_set, ek_hypothesis_check,
                        gradient_bound_check, liouville_decay_experiment)
from .expression import default_variables, parse_expression
from .grid import Cylinder, Paraboloid, SpaceTimeDomain, build_grid
from .solver import (ProblemSpec, admissibility, exact_values, field_from_expression,
                     manufactured_problem, solve)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_INVALID = 0, 1, 2
PLATEAU_TOL = 0.10  # allowed relative change of a sup under h -> h/2


class ExperimentInvalid(Exception):
    """The experiment cannot be carried out as configured (exit code 2)."""


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _domain(cfg: ExperimentConfig) -> SpaceTimeDomain:
    d = cfg.domain
    shape = Cylinder(d.radius, d.t_start) if d.shape == "cylinder" else Paraboloid(d.r)
    return SpaceTimeDomain(shape, cfg.n)


def _rel_changes(values):
    return [abs(b - a) / abs(a) if a != 0 else (0.0 if b == 0 else math.inf)
            for a, b in zip(values, values[1:])]


def write_solution_csvs(field, out: Path):
    """One ``solution_<level>.csv`` per level; closure nodes only, repr floats."""
    grid = field.grid
    lat = grid.lattice_shape
    names = [f"x{i + 1}" for i in range(grid.n)]
    for m in range(grid.levels):
        ut = field.ut(m) if m >= 1 else None
        margin = field.cone_margin(m) if m >= 1 and field.k else None
        with open(out / f"solution_{m}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "t", "node", *names, "u", "ut", "cone_margin"])
            for flat in np.flatnonzero(grid.closure[m].ravel()):
                idx = np.unravel_index(flat, lat)
                interior = bool(grid.interior[(m,) + idx])
                row = [m, repr(float(grid.times[m])), int(flat)]
                row += [repr(float(c)) for c in grid.coords[idx]]
                row.append(repr(float(field.u[(m,) + idx])))
                row.append(repr(float(ut[idx])) if interior else "")
                row.append(repr(float(margin[idx])) if interior and margin is not None else "")
                w.writerow(row)


def write_convergence_csv(rows, out: Path):
    with open(out / "convergence.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h", "error", "order"])
        for h, err, order in rows:
            w.writerow([repr(float(h)), repr(float(err)), "" if order is None else repr(float(order))])


def _solve_problem(cfg, domain, grid):
    if cfg.exact is not None:
        if cfg.psi is None:
            return manufactured_problem(cfg.exact, domain, cfg.k, cfg.m1, grid)
        return ProblemSpec(cfg.k, cfg.psi, cfg.exact, cfg.m1)
    return ProblemSpec(cfg.k, cfg.psi, cfg.g, cfg.m1)


# --------------------------------------------------------------------------
# experiments; each returns (metrics, invariants)


def run_solve(cfg: ExperimentConfig, out: Path):
    domain = _domain(cfg)
    grids, conv, field = [], [], None
    exact = None
    if cfg.exact is not None:
        exact = parse_expression(cfg.exact, default_variables(cfg.n))
    for h, tau in cfg.grid.levels():
        grid = build_grid(domain, h, tau)
        spec = _solve_problem(cfg, domain, grid)
        field = solve(spec, domain, grid)
        adm = admissibility(field, spec)
        row = {"h": h, "tau": tau, "interior_nodes": int(grid.interior.sum()),
               "newton_max_iterations": max((i.iterations for i in field.newton), default=0),
               "min_cone_margin": adm.min_cone_margin, "max_ut": adm.max_ut,
               "max_residual": adm.max_residual, "admissible": adm.ok}
        if exact is not None:
            err = float(np.max(np.abs(field.u - exact_values(exact, grid))[grid.closure]))
            row["error"] = err
            order = None
            if conv and conv[-1][1] > 0 and err > 0:
                order = math.log(conv[-1][1] / err) / math.log(conv[-1][0] / h)
            conv.append((h, err, order))
        grids.append(row)
    write_solution_csvs(field, out)
    if conv:
        write_convergence_csv(conv, out)
    metrics = {"grids": grids}
    if conv:
        metrics["orders"] = [c[2] for c in conv[1:]]
    return metrics, {"admissible": all(g["admissible"] for g in grids)}


def run_gradient(cfg: ExperimentConfig, out: Path):
    family = [ProblemSpec(cfg.k, cfg.psi, g, cfg.m1) for g in cfg.family]
    check = gradient_bound_check(family, cfg.domain.r, cfg.grid.levels(), cfg.n, cfg.seed,
                                 labels=list(cfg.family))
    reports = [{"label": r.label, "h": r.h, "tau": r.tau, "grad_at_origin": r.grad_at_origin,
                "sup_u": r.sup_u, "ratio": r.ratio, "aux_max": r.aux_max,
                "case_split_ok": r.case_split_ok} for r in check.reports]
    metrics = {"instances": reports, "max_ratio_by_grid": check.max_ratio_by_grid,
               "bound": check.bound, "max_ratio_change": check.max_ratio_change}
    inv = {"case_split": all(r.case_split_ok for r in check.reports),
           "ratio_plateau": check.max_ratio_change <= PLATEAU_TOL}
    return metrics, inv


def run_pogorelov(cfg: ExperimentConfig, out: Path):
    domain = _domain(cfg)
    dirs = direction_set(cfg.n, cfg.seed)
    grids = []
    for h, tau in cfg.grid.levels():
        grid = build_grid(domain, h, tau)
        spec = ProblemSpec(cfg.k, cfg.psi, repr(float(cfg.u0)), cfg.m1)
        field = solve(spec, domain, grid)
        adm = admissibility(field, spec)
        rep = aux_Phi_and_pogorelov(field, cfg.u0, dirs)
        grids.append({"h": h, "tau": tau, "sup_phi": rep.sup_phi, "sup_pog": rep.sup_pog,
                      "M_cap": rep.M_cap, "admissible": adm.ok,
                      "max_residual": adm.max_residual})
    sup = [g["sup_pog"] for g in grids]
    changes = _rel_changes(sup)
    inv = {"admissible": all(g["admissible"] for g in grids),
           "pogorelov_plateau": max(changes, default=0.0) <= PLATEAU_TOL}
    return {"grids": grids, "sup_pog_changes": changes}, inv


def run_liouville(cfg: ExperimentConfig, out: Path):
    domain = _domain(cfg)
    h, tau = cfg.grid.levels()[-1]
    grid = build_grid(domain, h, tau)
    inv = {}
    if cfg.exact is not None and cfg.psi is None:
        field = field_from_expression(cfg.exact, grid, cfg.k)
        ut = np.concatenate([field.ut(m)[grid.interior[m]] for m in range(1, grid.levels)])
        inv["ut_constant"] = bool(np.ptp(ut) <= 1e-10)
    else:
        spec = _solve_problem(cfg, domain, grid)
        field = solve(spec, domain, grid)
        inv["admissible"] = admissibility(field, spec).ok
    try:
        rep = liouville_decay_experiment(field, cfg.R, cfg.alpha, cfg.A1, cfg.A2, cfg.m1,
                                         cfg.m2, cfg.h_target)
    except BoxTooSmallError as exc:
        raise ExperimentInvalid(f"box too small: {exc}") from None
    entries = [{"R": e.R, "q_in_sublevel": e.q_in_sublevel, "semi_d2u": e.semi_d2u,
                "semi_d2v": e.semi_d2v, "identity_error": e.identity_error,
                "semi_ut": e.semi_ut, "semi_vt": e.semi_vt,
                "ut_identity_error": e.ut_identity_error, "nodes": e.nodes,
                "omega_radii": None if e.omega is None else
                [e.omega.inner_radius, e.omega.outer_radius],
                "omega_t_floor": None if e.omega is None else e.omega.t_floor,
                "omega_nested": None if e.omega is None else e.omega.nested,
                "note": e.note} for e in rep.entries]
    metrics = {"h": h, "tau": tau, "alpha": cfg.alpha, "entries": entries,
               "non_increasing": rep.non_increasing}
    if not rep.valid:
        bad = [e.R for e in rep.entries if not e.valid]
        raise ExperimentInvalid(f"Q is not inside the sublevel set {{v < -1/3}} for R = {bad}")
    inv["scaling_identity"] = all(
        e.identity_error <= 1e-10 * (1 + e.semi_d2u) for e in rep.entries)
    inv["non_increasing"] = rep.non_increasing
    return metrics, inv


def run_selftest(cfg: ExperimentConfig, out: Path):
    rng = np.random.default_rng(cfg.seed)
    # sigma_l by the recursion against principal-minor sums of diag(lam)
    lam = rng.uniform(-2.0, 2.0, size=(1000, 5))
    rec = sc.elementary_all(lam)
    D = np.zeros((1000, 5, 5))
    D[:, range(5), range(5)] = lam
    minors = sc.s_k_all(D, 5)
    sig_err = float(np.max(np.abs(rec - minors) / (1.0 + np.abs(minors))))
    # derivative tensor against central differences, and Euler's identity
    grad_err = euler = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 5))
        A = rng.normal(size=(n, n))
        H = (A + A.T) / 2
        for k in range(1, n + 1):
            G = sc.s_k_grad(H, k)
            F = np.zeros((n, n))
            for i in range(n):
                for j in range(n):
                    E = np.zeros((n, n))
                    E[i, j] = 1e-5
                    F[i, j] = (sc.s_k(H + E, k) - sc.s_k(H - E, k)) / 2e-5
            scale = max(1.0, float(np.max(np.abs(G))))
            grad_err = max(grad_err, float(np.max(np.abs(G - F))) / scale)
            euler = max(euler, sc.euler_identity_residual(H, k) / (1 + abs(sc.s_k(H, k))))
    ek = ek_hypothesis_check(cfg.n, cfg.k, cfg.m1, cfg.m2, cfg.C0, cfg.samples, cfg.seed)
    metrics = {"sigma_max_rel_error": sig_err, "grad_max_rel_error": grad_err,
               "euler_max_residual": euler,
               "ek": {"samples": ek.samples, "lambda1_q": ek.lambda1_q, "lambda2_q": ek.lambda2_q,
                      "lambda1_n": ek.lambda1_n, "lambda2_n": ek.lambda2_n,
                      "ek1_violations": len(ek.ek1_violations),
                      "ek2_violations": len(ek.ek2_violations),
                      "concavity_violations": len(ek.concavity_violations)}}
    inv = {"sigma_oracle": sig_err <= 1e-12, "grad_fd": grad_err <= 1e-6,
           "euler_identity": euler <= 1e-10, "ek_hypotheses": ek.violations == 0}
    return metrics, inv


RUNNERS = {"solve": run_solve, "verify-gradient": run_gradient,
           "verify-pogorelov": run_pogorelov, "verify-liouville": run_liouville,
           "selftest": run_selftest}


def run(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> int:
    """Run one experiment; writes artifacts and ``report.json`` into the output directory."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"experiment": cfg.experiment, "seed": cfg.seed, "parameters": cfg.parameters()}
    start = time.time()
    try:
        metrics, inv = RUNNERS[cfg.experiment](cfg, out)
        report.update(metrics=metrics, invariants=inv)
        passed = all(inv.values())
        report["status"] = "passed" if passed else "failed"
        code = EXIT_OK if passed else EXIT_ERROR
    except ExperimentInvalid as exc:
        report.update(status="invalid", diagnostics=str(exc))
        code = EXIT_INVALID
    except KHessianError as exc:
        report.update(status="error", error=type(exc).__name__, diagnostics=str(exc))
        if getattr(exc, "diagnostics", None):
            report["solver_diagnostics"] = exc.diagnostics
        code = EXIT_ERROR
    if cfg.timestamps:
        report["started"] = start
        report["elapsed_seconds"] = time.time() - start
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(_clean(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code


def _u64(text):
    try:
        v = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="khessian", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=list(RUNNERS))
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--seed", type=_u64, help="overrides the config seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
    except OSError as exc:
        print(f"khessian: cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ConfigError as exc:
        for msg in exc.messages:
            print(f"khessian: config error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    if cfg.experiment != args.command:
        print(f"khessian: config is for {cfg.experiment!r}, not {args.command!r}",
              file=sys.stderr)
        return EXIT_INVALID
    code = run(cfg, args.out)
    status = {EXIT_OK: "passed", EXIT_ERROR: "failed", EXIT_INVALID: "invalid"}[code]
    print(f"{cfg.experiment}: {status} (report in {Path(args.out or cfg.output_dir) / 'report.json'})")
    return code


if __name__ == "__main__":
    sys.exit(main())
