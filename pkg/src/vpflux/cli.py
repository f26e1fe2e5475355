"""Command-line driver: ``vpflux run | converge | validate``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import mms
from .linsolve import ConvergenceError, SingularSystemError, SolveConfig
from .operator import cell_indicators
from .transport import NonSteadyError

log = logging.getLogger("vpflux")

EXIT_OK, EXIT_AUDIT, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3

CSV_COLUMNS = ["case", "indicator", "N", "h", "E1", "Einf", "order_E1", "order_Einf",
               "eta", "solver_iters", "wall_ms"]

AUDIT_TOL = 1e-10
ORACLE_RATIO = (3.5, 4.5)

DEFAULTS = {
    "case": None, "n": None, "family": None, "grids": None, "indicator": None,
    "eta": 1e-8, "ncells": 2.0, "solver": "auto", "rel_tol": 1e-12, "out": None,
    "emit_fields": False, "jobs": 1, "mean_shift": "auto", "timing": False,
    "corrupt_beta": 0.0,
}


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    case: str
    grids: list = field(default_factory=list)
    indicators: list = field(default_factory=lambda: ["smoothed"])
    eta: float = 1e-8
    n_cells: float = 2.0
    solver: SolveConfig = field(default_factory=SolveConfig)
    out: Path = Path("vp_out")
    emit_fields: bool = False
    jobs: int = 1
    mean_shift: str = "auto"
    timing: bool = False

    def __post_init__(self):
        if self.case not in mms.CASES:
            raise UsageError(f"unknown case {self.case!r}; known: {', '.join(mms.CASES)}")
        if not self.eta > 0:
            raise UsageError("--eta must be positive")


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.12g}"


def reports_csv(conv_reports, timing=False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for cr in conv_reports:
        for r, o1, oi in zip(cr.reports, cr.orders_E1, cr.orders_Einf):
            w.writerow([r.case, r.indicator, r.N, _fmt(r.h), _fmt(r.E1), _fmt(r.Einf),
                        _fmt(o1), _fmt(oi), _fmt(r.eta), r.solver_iters,
                        _fmt(r.wall_ms) if timing else ""])
    return buf.getvalue()


def reports_json(conv_reports) -> str:
    data = []
    for cr in conv_reports:
        d = asdict(cr)
        d["reports"] = [asdict(r) for r in cr.reports]
        data.append(d)
    return json.dumps(data, indent=2, default=float)


def loglog_dat(cr) -> str:
    lines = [f"# {cr.case} {cr.indicator}: N E1 Einf  (slopes {cr.slope_E1:.4f} "
             f"{cr.slope_Einf:.4f})"]
    lines += [f"{r.N} {_fmt(r.E1)} {_fmt(r.Einf)}" for r in cr.reports]
    return "\n".join(lines) + "\n"


def _task(args):
    """Run one (case, N, indicator) job; top level so worker processes can pickle it."""
    name, N, ind, eta, n_cells, solver, mean_shift, emit = args
    res = mms.run_case(name, N, ind, eta=eta, n_cells=n_cells, solve_config=solver,
                       mean_shift=mean_shift)
    fields = None
    if emit:
        grid = res.case.grid
        x = grid.cell_centers()
        chi_n, chi_d = cell_indicators(res.case.base)
        chi = np.sum(chi_n + chi_d, axis=0) if chi_n or chi_d else np.zeros(grid.size)
        with np.errstate(all="ignore"):
            qe = res.case.exact(x)
        fields = (x, np.asarray(res.q), qe, chi)
    return res.report, fields


def _write_fields(path: Path, fields):
    x, q, qe, chi = fields
    cols = ["x", "y", "z"][: x.shape[1]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols + ["q", "q_exact", "chi"])
        for k in range(len(q)):
            w.writerow([_fmt(float(v)) for v in x[k]] + [_fmt(float(q[k])),
                                                         _fmt(float(qe[k])),
                                                         _fmt(float(chi[k]))])


def _sweep(cfg: RunConfig):
    jobs = [(cfg.case, N, ind, cfg.eta, cfg.n_cells, cfg.solver, cfg.mean_shift,
             cfg.emit_fields) for ind in cfg.indicators for N in cfg.grids]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            results = list(ex.map(_task, jobs))
    else:
        results = [_task(j) for j in jobs]
    out = {}
    for job, res in zip(jobs, results):
        out[(job[2], job[1])] = res
    return out


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def cmd_run(cfg: RunConfig) -> int:
    results = _sweep(cfg)
    conv = []
    for ind in cfg.indicators:
        reps = [results[(ind, N)][0] for N in cfg.grids]
        conv.append(mms.ConvergenceReport(cfg.case, ind, reps, [None] * len(reps),
                                          [None] * len(reps), float("nan"), float("nan")))
    stem = cfg.out / f"{cfg.case}_run"
    text = reports_csv(conv, cfg.timing)
    _write(stem.with_suffix(".csv"), text)
    _write(stem.with_suffix(".json"), reports_json(conv))
    if cfg.emit_fields:
        for (ind, N), (_, fields) in sorted(results.items()):
            path = cfg.out / f"{cfg.case}_{ind}_N{N}_fields.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            _write_fields(path, fields)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_converge(cfg: RunConfig) -> int:
    if len(cfg.grids) < 2:
        raise UsageError("a convergence sweep needs at least two grids")
    from .plotting import convergence_figure

    results = _sweep(cfg)
    conv = []
    for ind in cfg.indicators:
        reps = [results[(ind, N)][0] for N in sorted(cfg.grids)]
        conv.append(mms.observed_order(reps, cfg.case, ind))
    stem = cfg.out / f"{cfg.case}_convergence"
    text = reports_csv(conv, cfg.timing)
    _write(stem.with_suffix(".csv"), text)
    _write(stem.with_suffix(".json"), reports_json(conv))
    for cr in conv:
        _write(cfg.out / f"{cfg.case}_{cr.indicator}.dat", loglog_dat(cr))
    convergence_figure(conv, stem.with_suffix(".png"), cfg.case)
    if cfg.emit_fields:
        for (ind, N), (_, fields) in sorted(results.items()):
            _write_fields(cfg.out / f"{cfg.case}_{ind}_N{N}_fields.csv", fields)
    sys.stdout.write(text)
    for cr in conv:
        print(f"# {cr.case} {cr.indicator}: order E1 {cr.slope_E1:.3f}, "
              f"Einf {cr.slope_Einf:.3f}")
    return EXIT_OK


def validate_case(name: str, N: int | None = None, corrupt_beta: float = 0.0):
    """Rows ``(case, check, value, passed)`` for the BC audit and truncation oracle."""
    d = mms.get_case(name)
    N = N or (128 if d.dim == 1 else 64)
    case = d.build(N, "smoothed")
    rows = []
    for region, err in mms.bc_audit(case, 64, corrupt_beta).items():
        rows.append((name, f"bc-audit[{region}]", err, bool(err <= AUDIT_TOL)))
    coarse = mms.truncation_oracle(case)
    fine = mms.truncation_oracle(d.build(2 * N, "smoothed"), mms.oracle_margin(case))
    ratio = coarse / fine if fine > 0 else float("inf")
    ok = coarse == 0 or ORACLE_RATIO[0] <= ratio <= ORACLE_RATIO[1]
    rows.append((name, f"truncation-ratio[{N}/{2 * N}]", ratio, bool(ok)))
    return rows


def cmd_validate(case: str | None, n: int | None = None, corrupt_beta: float = 0.0) -> int:
    names = [case] if case else list(mms.CASES)
    for nm in names:
        if nm not in mms.CASES:
            raise UsageError(f"unknown case {nm!r}; known: {', '.join(mms.CASES)}")
    rows = []
    for nm in names:
        rows += validate_case(nm, n, corrupt_beta)
    width = max(len(r[1]) for r in rows)
    print(f"{'case':<24} {'check':<{width}} {'value':>12}  result")
    for nm, check, value, ok in rows:
        print(f"{nm:<24} {check:<{width}} {value:12.4e}  {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if all(r[3] for r in rows) else EXIT_AUDIT


def _load_config(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return {k.replace("-", "_"): v for k, v in data.items()}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vpflux", description=(
        "Volume-penalized Poisson and transport solvers with Neumann interface "
        "conditions, plus manufactured-solution convergence studies."))
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML file with option defaults; flags win")
        sp.add_argument("--case", default=None)
        sp.add_argument("--n", type=int, default=None, help="single grid size")
        sp.add_argument("--family", choices=sorted(mms.FAMILIES), default=None)
        sp.add_argument("--grids", default=None, help="comma separated grid sizes")
        sp.add_argument("--indicator", "--indicators", dest="indicator", default=None,
                        choices=["sharp", "smoothed", "both"])
        sp.add_argument("--eta", type=float, default=None)
        sp.add_argument("--ncells", type=float, default=None)
        sp.add_argument("--solver", choices=["auto", "direct", "iterative"], default=None)
        sp.add_argument("--rel-tol", dest="rel_tol", type=float, default=None)
        sp.add_argument("--out", default=None,
                        help="output directory (default $VP_OUT_DIR or ./vp_out)")
        sp.add_argument("--emit-fields", dest="emit_fields", action="store_true",
                        default=None)
        sp.add_argument("--jobs", type=int, default=None)
        sp.add_argument("--mean-shift", dest="mean_shift", default=None,
                        choices=["auto", "on", "off"])
        sp.add_argument("--timing", action="store_true", default=None,
                        help="fill the wall_ms CSV column (makes output non-reproducible)")

    common(sub.add_parser("run", help="solve one case on one or more grids"))
    common(sub.add_parser("converge", help="grid refinement study"))
    v = sub.add_parser("validate", help="BC audit and truncation oracle")
    v.add_argument("--config")
    v.add_argument("--case", default=None)
    v.add_argument("--n", type=int, default=None)
    v.add_argument("--corrupt-beta", dest="corrupt_beta", type=float, default=None,
                   help="add this multiple of the normal to beta (audit self-check)")
    return p


def _merge(args) -> dict:
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        opts.update(_load_config(args.config))
    for k, v in vars(args).items():
        if v is not None and k in DEFAULTS:
            opts[k] = v
    return opts


def _run_config(opts, command) -> RunConfig:
    name = opts["case"]
    if name is None:
        raise UsageError("--case is required")
    if name not in mms.CASES:
        raise UsageError(f"unknown case {name!r}; known: {', '.join(mms.CASES)}")
    d = mms.CASES[name]
    if opts["grids"]:
        g = opts["grids"]
        grids = [int(s) for s in g.split(",")] if isinstance(g, str) else list(map(int, g))
    elif opts["n"]:
        grids = [int(opts["n"])]
    elif opts["family"]:
        grids = list(mms.FAMILIES[opts["family"]])
    elif command == "run":
        grids = [256 if d.dim == 1 else 64]
    else:
        grids = list(mms.FAMILIES[d.families[0]])
    ind = opts["indicator"] or d.default_indicators[0]
    indicators = ["smoothed", "sharp"] if ind == "both" else [ind]
    out = Path(opts["out"] or os.environ.get("VP_OUT_DIR") or "vp_out")
    return RunConfig(name, grids, indicators, float(opts["eta"]), float(opts["ncells"]),
                     SolveConfig(opts["solver"], float(opts["rel_tol"])), out,
                     bool(opts["emit_fields"]), int(opts["jobs"]), opts["mean_shift"],
                     bool(opts["timing"]))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = _merge(args)
        if args.command == "validate":
            return cmd_validate(opts["case"], opts["n"], float(opts["corrupt_beta"]))
        cfg = _run_config(opts, args.command)
        return cmd_run(cfg) if args.command == "run" else cmd_converge(cfg)
    except UsageError as exc:
        print(f"vpflux: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"vpflux: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, SingularSystemError, NonSteadyError, FloatingPointError) as exc:
        print(f"vpflux: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
