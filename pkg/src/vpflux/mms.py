"""Manufactured-solution cases, fluid-only error norms and observed orders."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import geometry as geo
from .geometry import IndicatorSpec, ShapeParams, SignedDistance
from .grid import Grid, make_grid
from .linsolve import SolveConfig, solve
from .operator import (ExternalDirichlet, InvalidProblemError, NeumannRegion,
                       PenalizedProblem, Periodic, assemble, fix_nullspace)
from .transport import TransportProblem, run_to_steady, steady_system

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
CENTER = (np.pi, np.pi)

FAMILIES = {
    "aligned": [32, 64, 128, 256, 512, 1024],
    "non-aligned": [25, 75, 225, 675, 2025],
    "2d-default": [32, 64, 128, 256],
    "2d-extended": [32, 64, 128, 256, 512],
}

MEAN_SHIFT_POLICIES = ("none", "zero_fluid_mean", "subtract_fluid_mean")


@dataclass
class Case:
    """A fully built manufactured-solution problem on one grid."""
    name: str
    problem: PenalizedProblem | TransportProblem
    exact: Callable
    exact_grad: Callable
    mean_shift_policy: str = "none"
    params: dict = field(default_factory=dict)

    @property
    def base(self) -> PenalizedProblem:
        p = self.problem
        return p.base if isinstance(p, TransportProblem) else p

    @property
    def grid(self) -> Grid:
        return self.base.grid

    @property
    def sdfs(self) -> list[SignedDistance]:
        b = self.base
        return [r.sdf for r in b.neumann_regions + b.dirichlet_regions]

    @property
    def is_transport(self) -> bool:
        return isinstance(self.problem, TransportProblem)


@dataclass
class CaseDefinition:
    name: str
    builder: Callable
    dim: int
    families: tuple
    default_indicators: tuple = ("smoothed", "sharp")
    description: str = ""

    def build(self, N, indicator, **params) -> Case:
        return self.builder(N, indicator, **params)


@dataclass
class ErrorReport:
    case: str
    N: int
    h: float
    E1: float
    Einf: float
    E1_raw: float
    Einf_raw: float
    fluid_cells: int
    indicator: str = ""
    eta: float = float("nan")
    mean_shift: str = "none"
    solver_iters: int = 0
    solver_residual: float = float("nan")
    wall_ms: float = 0.0


@dataclass
class ConvergenceReport:
    case: str
    indicator: str
    reports: list
    orders_E1: list
    orders_Einf: list
    slope_E1: float
    slope_Einf: float


def _indicator_spec(indicator, n_cells=2.0) -> IndicatorSpec:
    if isinstance(indicator, IndicatorSpec):
        return indicator
    return IndicatorSpec(indicator, n_cells)


def _r(p, c=CENTER):
    return np.hypot(p[:, 0] - c[0], p[:, 1] - c[1])


def _sinsin_exact(p):
    return np.sin(p[:, 0]) * np.sin(p[:, 1])


def _sinsin_grad(p):
    x, y = p[:, 0], p[:, 1]
    return np.column_stack([np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)])


# -- 1D cases ---------------------------------------------------------------

def case_1d_same_flux(N, indicator="smoothed", eta=1e-8, alpha=1.0, m=1.0,
                      n_cells=2.0) -> Case:
    if N < 8:
        raise ValueError("1D cases need N >= 8")
    spec = _indicator_spec(indicator, n_cells)
    grid = make_grid(1, 0.0, TWO_PI, N)
    sdf = geo.sdf_interval(0.0, np.pi, period=TWO_PI)
    region = NeumannRegion(sdf, spec, lambda p: np.full((len(p), 1), alpha), "fluid-ends")
    problem = PenalizedProblem(
        grid, 1.0, eta, lambda p: m * m * np.cos(m * p[:, 0]), [region], [], Periodic())
    return Case(
        "1d-same-flux", problem,
        lambda p: np.cos(m * p[:, 0]) + alpha * p[:, 0] - np.pi * alpha / 2,
        lambda p: (-m * np.sin(m * p[:, 0]) + alpha)[:, None],
        "zero_fluid_mean", {"alpha": alpha, "m": m})


def case_1d_diff_flux(N, indicator="smoothed", eta=1e-8, alpha=1.0, m=1.0,
                      n_cells=2.0) -> Case:
    if N < 8:
        raise ValueError("1D cases need N >= 8")
    spec = _indicator_spec(indicator, n_cells)
    grid = make_grid(1, 0.0, TWO_PI, N)
    sdf = geo.sdf_interval(0.0, np.pi, period=TWO_PI)
    grad = lambda p: (m * np.cos(m * p[:, 0]) + alpha)[:, None]  # noqa: E731
    region = NeumannRegion(sdf, spec, grad, "fluid-ends")
    problem = PenalizedProblem(
        grid, 1.0, eta, lambda p: m * m * np.sin(m * p[:, 0]), [region], [], Periodic())
    return Case(
        "1d-diff-flux", problem,
        lambda p: (np.sin(m * p[:, 0]) + alpha * p[:, 0] - 2.0 / (m * np.pi)
                   - np.pi * alpha / 2),
        grad, "zero_fluid_mean", {"alpha": alpha, "m": m})


# -- 2D circular annulus ----------------------------------------------------

ANNULUS_R_IN = np.pi / 4
ANNULUS_R_OUT = 3 * np.pi / 4


def annulus_exact(p, alpha=1.0):
    r = _r(p)
    const = 3 / 32 * alpha * np.pi * (9 * np.log(0.75 * np.pi) - np.log(np.pi / 4) - 4)
    with np.errstate(divide="ignore"):
        return np.cos(4 * r) + 0.75 * alpha * np.pi * np.log(r) - const


def annulus_flux_profile(r, alpha=1.0):
    """Radial magnitude g(r) of the flux forcing field."""
    r = np.asarray(r, dtype=float)
    g = alpha * (4 * r / (3 * np.pi)) ** 2 * (4 * (1 - r / np.pi)) ** 3
    return np.where((r >= 0) & (r <= np.pi), g, 0.0)


def _radial(p, mag):
    r = _r(p)
    d = p - np.asarray(CENTER)
    with np.errstate(invalid="ignore", divide="ignore"):
        e = np.where(r[:, None] > 0, d / r[:, None], 0.0)
    return mag[:, None] * e


def case_2d_annulus(N, indicator="smoothed", eta=1e-8, alpha=1.0, n_cells=2.0) -> Case:
    if N < 32:
        raise ValueError("2D cases need N >= 32")
    spec = _indicator_spec(indicator, n_cells)
    grid = make_grid(2, (0.0, 0.0), (TWO_PI, TWO_PI), N)
    beta = lambda p: _radial(p, annulus_flux_profile(_r(p), alpha))  # noqa: E731

    def f(p):
        r = _r(p)
        # 4 sin(4r)/r written through sinc to stay finite at r = 0
        return 16 * np.cos(4 * r) + 16 * np.sinc(4 * r / np.pi)

    def grad(p):
        r = _r(p)
        with np.errstate(divide="ignore"):
            return _radial(p, -4 * np.sin(4 * r) + 0.75 * alpha * np.pi / r)

    regions = [
        NeumannRegion(geo.sdf_circle(CENTER, ANNULUS_R_IN, True), spec, beta, "inner"),
        NeumannRegion(geo.sdf_circle(CENTER, ANNULUS_R_OUT, False), spec, beta, "outer"),
    ]
    problem = PenalizedProblem(grid, 1.0, eta, f, regions, [],
                               ExternalDirichlet(lambda p: np.zeros(len(p))))
    return Case("2d-annulus", problem, lambda p: annulus_exact(p, alpha), grad,
                "subtract_fluid_mean", {"alpha": alpha})


# -- complex shapes -----------------------------------------------------------

HEXAGRAM_ANNULUS_R = 2.9
HEXAGRAM_ANNULUS_CIRCLE = 1.0

MULTI_SHAPES = [
    ShapeParams("hexagram", (1.6, 4.7), {"circumradius": 1.0}),
    ShapeParams("horseshoe", (4.7, 4.7), {"r_in": 0.5, "r_out": 0.9}),
    ShapeParams("xcross", (1.6, 1.6), {"half_length": 1.0, "half_width": 0.25}),
    ShapeParams("circle", (4.7, 1.6), {"radius": 0.6}),
]

COMPLEX_SHAPES = ("hexagram", "horseshoe", "xcross", "hexagram_circle_annulus",
                  "multi_shape")


def _sinsin_problem(grid, eta, regions, external):
    return PenalizedProblem(grid, 1.0, eta, lambda p: 2.0 * _sinsin_exact(p), regions,
                            [], external)


def case_complex_shape(shape, N, indicator="smoothed", eta=1e-8, n_cells=2.0,
                       sizes=None) -> Case:
    if shape not in COMPLEX_SHAPES:
        raise ValueError(f"unknown complex shape {shape!r}")
    if N < 32:
        raise ValueError("2D cases need N >= 32")
    spec = _indicator_spec(indicator, n_cells)
    grid = make_grid(2, (0.0, 0.0), (TWO_PI, TWO_PI), N)
    exact_bc = ExternalDirichlet(_sinsin_exact)
    policy = "none"
    if shape in ("hexagram", "horseshoe", "xcross"):
        sdf = geo.make_shape(ShapeParams(shape, CENTER, sizes or {}))
        regions = [NeumannRegion(sdf, spec, _sinsin_grad, shape)]
        external = exact_bc
    elif shape == "hexagram_circle_annulus":
        sizes = sizes or {}
        R = sizes.get("circumradius", HEXAGRAM_ANNULUS_R)
        rc = sizes.get("radius", HEXAGRAM_ANNULUS_CIRCLE)
        if R / np.sqrt(3) <= rc:
            raise ValueError("hexagram inner vertices must clear the circle")
        hexagram = geo.make_shape(ShapeParams("hexagram", CENTER, {"circumradius": R}))
        regions = [
            NeumannRegion(geo.sdf_complement(hexagram), spec, _sinsin_grad, "outside-hexagram"),
            NeumannRegion(geo.sdf_circle(CENTER, rc, True), spec, _sinsin_grad, "circle"),
        ]
        external = ExternalDirichlet(lambda p: np.zeros(len(p)))
        policy = "subtract_fluid_mean"
    else:
        regions = [NeumannRegion(geo.make_shape(s), spec, _sinsin_grad, s.shape)
                   for s in MULTI_SHAPES]
        external = exact_bc
    problem = _sinsin_problem(grid, eta, regions, external)
    return Case(shape.replace("_", "-"), problem, _sinsin_exact, _sinsin_grad, policy)


# -- transport ----------------------------------------------------------------

TRANSPORT_RADIUS = 1.5


def transport_velocity(p):
    x, y = p[:, 0], p[:, 1]
    return np.column_stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])


def transport_forcing(p, kappa=1.0):
    """Steady unpenalized forcing u . grad q - kappa lap q for q = sin x sin y."""
    return (np.sum(transport_velocity(p) * _sinsin_grad(p), axis=1)
            + 2.0 * kappa * _sinsin_exact(p))


def case_transport(N, indicator="smoothed", eta=1e-8, n_cells=2.0, dt=2e-3,
                   steady_tol=1e-6, max_steps=200_000) -> Case:
    if N < 32:
        raise ValueError("2D cases need N >= 32")
    spec = _indicator_spec(indicator, n_cells)
    grid = make_grid(2, (0.0, 0.0), (TWO_PI, TWO_PI), N)
    region = NeumannRegion(geo.sdf_circle(CENTER, TRANSPORT_RADIUS, True), spec,
                           _sinsin_grad, "cylinder")
    base = PenalizedProblem(grid, 1.0, eta, transport_forcing, [region], [],
                            ExternalDirichlet(_sinsin_exact))
    tp = TransportProblem(base, transport_velocity, dt=dt, steady_tol=steady_tol,
                          max_steps=max_steps)
    return Case("transport", tp, _sinsin_exact, _sinsin_grad, "none")


def _complex(shape):
    return lambda N, indicator="smoothed", **kw: case_complex_shape(shape, N, indicator, **kw)


CASES = {
    "1d-same-flux": CaseDefinition(
        "1d-same-flux", case_1d_same_flux, 1, ("aligned", "non-aligned"),
        description="periodic 1D, equal Neumann flux at both interfaces"),
    "1d-diff-flux": CaseDefinition(
        "1d-diff-flux", case_1d_diff_flux, 1, ("aligned", "non-aligned"),
        description="periodic 1D, different Neumann flux at the two interfaces"),
    "2d-annulus": CaseDefinition(
        "2d-annulus", case_2d_annulus, 2, ("2d-default",),
        description="circular annulus with inner/outer radial fluxes"),
    "hexagram": CaseDefinition("hexagram", _complex("hexagram"), 2, ("2d-default",)),
    "horseshoe": CaseDefinition("horseshoe", _complex("horseshoe"), 2, ("2d-default",)),
    "xcross": CaseDefinition("xcross", _complex("xcross"), 2, ("2d-default",)),
    "hexagram-circle-annulus": CaseDefinition(
        "hexagram-circle-annulus", _complex("hexagram_circle_annulus"), 2,
        ("2d-default",)),
    "multi-shape": CaseDefinition("multi-shape", _complex("multi_shape"), 2,
                                  ("2d-default",)),
    "transport": CaseDefinition(
        "transport", case_transport, 2, ("2d-default",), ("smoothed",),
        description="penalized advection-diffusion with prescribed velocity"),
}


def get_case(name: str) -> CaseDefinition:
    try:
        return CASES[name]
    except KeyError:
        raise ValueError(f"unknown case {name!r}; known: {', '.join(CASES)}") from None


# -- error measurement ------------------------------------------------------------

def fluid_mask(grid: Grid, sdfs) -> np.ndarray:
    x = grid.cell_centers()
    mask = np.ones(grid.size, dtype=bool)
    for s in sdfs:
        mask &= s(x) > 0
    return mask


def error_norms(q_numeric, exact, grid: Grid, sdfs, mean_shift_policy="none",
                case="", indicator="") -> ErrorReport:
    """Fluid-only E1 (volume averaged) and Einf errors.

    ``zero_fluid_mean`` shifts the numerical solution to zero mean over the
    fluid cells; ``subtract_fluid_mean`` matches its fluid mean to that of
    the sampled exact solution.
    """
    if mean_shift_policy not in MEAN_SHIFT_POLICIES:
        raise ValueError(f"unknown mean shift policy {mean_shift_policy!r}")
    q = np.asarray(q_numeric, dtype=float).ravel()
    mask = fluid_mask(grid, sdfs)
    if not mask.any():
        raise InvalidProblemError("no fluid cells")
    qe = np.asarray(exact(grid.cell_centers()[mask]), dtype=float)
    qf = q[mask]
    raw = np.abs(qf - qe)
    if mean_shift_policy == "zero_fluid_mean":
        qf = qf - qf.mean()
    elif mean_shift_policy == "subtract_fluid_mean":
        qf = qf - qf.mean() + qe.mean()
    err = np.abs(qf - qe)
    # cells are uniform, so the volume-weighted mean is a plain mean
    return ErrorReport(case, grid.n[0], grid.h[0], float(err.mean()), float(err.max()),
                       float(raw.mean()), float(raw.max()), int(mask.sum()), indicator,
                       mean_shift=mean_shift_policy)


def observed_order(reports, case="", indicator="") -> ConvergenceReport:
    """Pairwise orders log(E_k/E_k+1)/log(N_k+1/N_k) and least-squares slopes."""
    reports = list(reports)
    if len(reports) < 2:
        raise ValueError("need at least two reports")
    Ns = np.array([r.N for r in reports], dtype=float)
    if np.any(np.diff(Ns) <= 0):
        raise ValueError("grid sizes must be strictly increasing")

    def pairwise(E):
        out = [None]
        for k in range(1, len(E)):
            if E[k - 1] > 0 and E[k] > 0:
                out.append(math.log(E[k - 1] / E[k]) / math.log(Ns[k] / Ns[k - 1]))
            else:
                out.append(None)
        return out

    def slope(E):
        E = np.asarray(E)
        keep = E > 0
        if not keep.all():
            warnings.warn("zero errors excluded from the order fit", stacklevel=3)
        if keep.sum() < 2:
            return float("nan")
        return float(-np.polyfit(np.log(Ns[keep]), np.log(E[keep]), 1)[0])

    E1 = [r.E1 for r in reports]
    Einf = [r.Einf for r in reports]
    return ConvergenceReport(case or reports[0].case, indicator or reports[0].indicator,
                             reports, pairwise(E1), pairwise(Einf), slope(E1), slope(Einf))


# -- oracles and audits -----------------------------------------------------------

def oracle_margin(case: Case) -> float:
    """Default interface clearance ``2 n_cells h + h`` for the truncation oracle."""
    base = case.base
    h = min(base.grid.h)
    n_cells = max([r.indicator.n_cells for r in base.neumann_regions
                   + base.dirichlet_regions] or [0.0])
    return 2 * n_cells * h + h


def truncation_oracle(case: Case, margin: float | None = None) -> float:
    """Max |A q_exact - f| of the unpenalized operator away from interfaces.

    Cells closer than ``margin`` (default :func:`oracle_margin`) to any
    interface, and cells next to a non-periodic external boundary, are
    skipped.  Passing the coarse grid's margin when comparing two
    resolutions keeps the sampled region fixed.
    """
    base = case.base
    grid = base.grid
    if margin is None:
        margin = oracle_margin(case)
    x = grid.cell_centers()
    keep = np.ones(grid.size, dtype=bool)
    for s in case.sdfs:
        keep &= s(x) >= margin
    if not base.periodic:
        for k in range(grid.dim):
            lo, hi = grid.origin[k], grid.origin[k] + grid.extent[k]
            keep &= (x[:, k] > lo + grid.h[k]) & (x[:, k] < hi - grid.h[k])
    if not keep.any():
        raise InvalidProblemError("no cells qualify for the truncation oracle")
    plain = base.without_regions()
    if case.is_transport:
        tp = case.problem
        system = steady_system(TransportProblem(plain, tp.velocity, tp.dt))
    else:
        system = assemble(plain)
    r = system.matrix @ case.exact(x) - system.rhs
    return float(np.max(np.abs(r[keep])))


def interface_points(sdf: SignedDistance, grid: Grid, count=64, seed=0) -> np.ndarray:
    """Points on ``sdf = 0`` found by bisection along random rays / the axis."""
    rng = np.random.default_rng(seed)
    if grid.dim == 1:
        xs = grid.axis_faces(0)
        phi = sdf(xs[:, None])
        roots = []
        for a, b, fa, fb in zip(xs[:-1], xs[1:], phi[:-1], phi[1:]):
            if fa == 0:
                roots.append(a)
            elif fa * fb < 0:
                roots.append(_bisect(lambda t: sdf(np.array([[t]]))[0], a, b))
        return np.array(roots)[:, None]
    pts = []
    lo = np.array(grid.origin)
    hi = lo + np.array(grid.extent)
    tries = 0
    while len(pts) < count and tries < 200 * count:
        tries += 1
        a = lo + rng.random(2) * (hi - lo)
        b = lo + rng.random(2) * (hi - lo)
        fa, fb = sdf(a[None])[0], sdf(b[None])[0]
        if fa * fb >= 0:
            continue
        t = _bisect(lambda s: sdf((a + s * (b - a))[None])[0], 0.0, 1.0)
        pts.append(a + t * (b - a))
    return np.array(pts)


def _bisect(func, a, b, iters=200):
    fa = func(a)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        fm = func(mid)
        if fm == 0 or b - a < 1e-15:
            return mid
        if (fm < 0) == (fa < 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def bc_audit(case: Case, count=64, beta_perturbation: float = 0.0):
    """Max |n . beta - n . grad q_exact| over sampled interface points, per region.

    ``beta_perturbation`` adds that multiple of the normal to beta (used to
    check that the audit catches a bad flux field).
    """
    out = {}
    for reg in case.base.neumann_regions:
        pts = interface_points(reg.sdf, case.grid, count)
        n = np.atleast_2d(geo.outward_normal(reg.sdf, pts, 1e-6))
        beta = np.asarray(reg.beta(pts), dtype=float).reshape(n.shape)
        beta = beta + beta_perturbation * n
        grad = np.asarray(case.exact_grad(pts), dtype=float).reshape(n.shape)
        diff = np.abs(np.sum(n * beta, axis=1) - np.sum(n * grad, axis=1))
        out[reg.name] = float(diff.max()) if len(diff) else float("nan")
    return out


# -- runners -------------------------------------------------------------------------

@dataclass
class RunResult:
    case: Case
    report: ErrorReport
    q: np.ndarray
    stats: object = None


def solve_case(case: Case, solve_config: SolveConfig | None = None,
               nullspace_row: int = 0):
    """Discrete solution of a case: direct/iterative solve or steady time stepping."""
    if case.is_transport:
        state, _ = run_to_steady(case.problem)
        return state.q.values, state
    system = assemble(case.problem)
    if system.periodic:
        system = fix_nullspace(system, case.grid, "replace_first_row", nullspace_row)
    return solve(system, solve_config)


def resolve_mean_shift(case: Case, flag: str | None) -> str:
    """Map ``auto``/``on``/``off`` (or an explicit policy name) to a policy."""
    if flag in (None, "auto"):
        return case.mean_shift_policy
    if flag == "off":
        return "none"
    if flag == "on":
        return (case.mean_shift_policy if case.mean_shift_policy != "none"
                else "subtract_fluid_mean")
    return flag


def run_case(name: str, N: int, indicator="smoothed", eta=1e-8, n_cells=2.0,
             solve_config: SolveConfig | None = None, mean_shift: str | None = None,
             **params) -> RunResult:
    definition = get_case(name)
    case = definition.build(N, _indicator_spec(indicator, n_cells), eta=eta, **params)
    t0 = time.perf_counter()
    q, stats = solve_case(case, solve_config)
    wall = (time.perf_counter() - t0) * 1e3
    policy = resolve_mean_shift(case, mean_shift)
    rep = error_norms(q, case.exact, case.grid, case.sdfs, policy, name,
                      _indicator_spec(indicator, n_cells).kind)
    rep.eta = eta
    rep.wall_ms = wall
    if case.is_transport:
        rep.solver_iters = stats.step
        rep.solver_residual = stats.last_change_rate
    else:
        rep.solver_iters = stats.iterations
        rep.solver_residual = stats.residual
    return RunResult(case, rep, q, stats)


def convergence_study(name: str, grids, indicator="smoothed", **kwargs):
    runs = [run_case(name, N, indicator, **kwargs) for N in sorted(grids)]
    return observed_order([r.report for r in runs], name,
                          _indicator_spec(indicator, kwargs.get("n_cells", 2.0)).kind), runs
