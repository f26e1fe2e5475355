"""Assembly of the volume-penalized Poisson operator.

The discrete problem is

    -div[ a grad q ] + sum_i chi_i^d / eta * q
        = (1 - sum_j chi_j^n) f + sum_j f_b,j + sum_i chi_i^d q_i^d / eta

with face coefficient ``a = kappa (1 - sum_j chi_j^n) + eta sum_j chi_j^n`` and
flux forcing ``f_b,j = div(chi_j beta_j) - chi_j div(beta_j)``.  All face
quantities are sampled directly at face centers from the analytic level sets
and coefficient functions; both divergences use the same conservative face
difference so they cancel wherever chi is constant.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .geometry import IndicatorSpec, SignedDistance, indicator
from .grid import Grid


class InvalidProblemError(ValueError):
    pass


@dataclass
class NeumannRegion:
    sdf: SignedDistance
    indicator: IndicatorSpec
    beta: Callable  # points (m, dim) -> (m, dim)
    name: str = "neumann"


@dataclass
class DirichletRegion:
    sdf: SignedDistance
    indicator: IndicatorSpec
    q_target: Callable  # points (m, dim) -> (m,)
    name: str = "dirichlet"


@dataclass(frozen=True)
class Periodic:
    pass


@dataclass(frozen=True)
class ExternalDirichlet:
    g: Callable  # points (m, dim) -> (m,)


ExternalBC = Union[Periodic, ExternalDirichlet]


def _zero(points):
    return np.zeros(len(points))


@dataclass
class PenalizedProblem:
    grid: Grid
    kappa: Union[float, Callable] = 1.0
    eta: float = 1e-8
    f: Callable = _zero
    neumann_regions: list = field(default_factory=list)
    dirichlet_regions: list = field(default_factory=list)
    external_bc: ExternalBC = field(default_factory=Periodic)

    @property
    def periodic(self) -> bool:
        return isinstance(self.external_bc, Periodic)

    def without_regions(self) -> "PenalizedProblem":
        return replace(self, neumann_regions=[], dirichlet_regions=[])


@dataclass
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    periodic: bool = False
    nullspace_repaired: bool = False
    repaired_row: int | None = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def _eval(func_or_value, points):
    if callable(func_or_value):
        return np.asarray(func_or_value(points), dtype=float)
    return np.full(len(points), float(func_or_value))


def _region_chi(region, points, h):
    return indicator(region.sdf(points), region.indicator, h)


def _h_iso(grid: Grid) -> float:
    # indicator bands are measured in cells of the finest spacing
    return min(grid.h)


def _wrap_faces(values: np.ndarray, grid: Grid, axis: int, periodic: bool):
    """Make the last face of a periodic axis reuse the first face's value."""
    if not periodic:
        return values
    arr = values.reshape(grid.face_shape(axis)).copy()
    ax = grid.dim - 1 - axis
    first = np.take(arr, [0], axis=ax)
    idx = [slice(None)] * grid.dim
    idx[ax] = -1
    arr[tuple(idx)] = np.squeeze(first, axis=ax)
    return arr.ravel()


def face_coefficients(problem: PenalizedProblem) -> list[np.ndarray]:
    grid = problem.grid
    h = _h_iso(grid)
    out = []
    for axis in range(grid.dim):
        x = grid.face_centers(axis)
        chi = np.zeros(len(x))
        for reg in problem.neumann_regions:
            chi += _region_chi(reg, x, h)
        a = _eval(problem.kappa, x) * (1.0 - chi) + problem.eta * chi
        out.append(_wrap_faces(a, grid, axis, problem.periodic))
    return out


def cell_indicators(problem: PenalizedProblem):
    """Cell-center indicator sums for the Neumann and Dirichlet regions."""
    grid = problem.grid
    x = grid.cell_centers()
    h = _h_iso(grid)
    chi_n = [_region_chi(r, x, h) for r in problem.neumann_regions]
    chi_d = [_region_chi(r, x, h) for r in problem.dirichlet_regions]
    return chi_n, chi_d


def _face_divergence(grid: Grid, w_faces: list[np.ndarray]) -> np.ndarray:
    """Conservative divergence (w_{f+} - w_{f-}) / h summed over axes."""
    div = np.zeros(grid.shape)
    for axis in range(grid.dim):
        w = w_faces[axis].reshape(grid.face_shape(axis))
        ax = grid.dim - 1 - axis
        n = grid.n[axis]
        hi = np.take(w, np.arange(1, n + 1), axis=ax)
        lo = np.take(w, np.arange(0, n), axis=ax)
        div += (hi - lo) / grid.h[axis]
    return div.ravel()


def flux_forcing(problem: PenalizedProblem, cell=None) -> np.ndarray | float:
    """Sum over Neumann regions of ``D(chi beta) - chi_c D(beta)``.

    Returns the value for every cell, or for one cell when ``cell`` (a
    linear index) is given.
    """
    grid = problem.grid
    h = _h_iso(grid)
    xc = grid.cell_centers()
    fb = np.zeros(grid.size)
    for reg in problem.neumann_regions:
        wb, wcb = [], []
        for axis in range(grid.dim):
            xf = grid.face_centers(axis)
            beta = np.asarray(reg.beta(xf), dtype=float).reshape(len(xf), grid.dim)[:, axis]
            chi = _region_chi(reg, xf, h)
            wb.append(_wrap_faces(beta, grid, axis, problem.periodic))
            wcb.append(_wrap_faces(chi * beta, grid, axis, problem.periodic))
        chi_c = _region_chi(reg, xc, h)
        fb += _face_divergence(grid, wcb) - chi_c * _face_divergence(grid, wb)
    if cell is None:
        return fb
    if not 0 <= cell < grid.size:
        raise ValueError(f"cell {cell} out of range")
    return float(fb[cell])


def diffusion_matrix(grid: Grid, coeff: list[np.ndarray], bc: ExternalBC):
    """Matrix of ``-div(a grad q)`` and the boundary contribution to the RHS.

    Dirichlet data enter through the ghost value ``2 g - q_interior``.
    """
    rows, cols, vals = [], [], []
    bvec = np.zeros(grid.size)
    idx = np.arange(grid.size).reshape(grid.shape)
    periodic = isinstance(bc, Periodic)
    for axis in range(grid.dim):
        ax = grid.dim - 1 - axis
        n = grid.n[axis]
        h2 = grid.h[axis] ** 2
        a = coeff[axis].reshape(grid.face_shape(axis))
        # interior faces 1..n-1 join cells i-1 and i
        left = np.take(idx, np.arange(0, n - 1), axis=ax).ravel()
        right = np.take(idx, np.arange(1, n), axis=ax).ravel()
        af = np.take(a, np.arange(1, n), axis=ax).ravel() / h2
        if periodic:
            left = np.concatenate([left, np.take(idx, [n - 1], axis=ax).ravel()])
            right = np.concatenate([right, np.take(idx, [0], axis=ax).ravel()])
            af = np.concatenate([af, np.take(a, [0], axis=ax).ravel() / h2])
        rows += [left, right, left, right]
        cols += [left, right, right, left]
        vals += [af, af, -af, -af]
        if not periodic:
            xf = grid.face_centers(axis).reshape(grid.face_shape(axis) + (grid.dim,))
            for face, cell in ((0, 0), (n, n - 1)):
                c = np.take(idx, [cell], axis=ax).ravel()
                ab = np.take(a, [face], axis=ax).ravel() / h2
                xb = np.take(xf, [face], axis=ax).reshape(-1, grid.dim)
                rows.append(c)
                cols.append(c)
                vals.append(2.0 * ab)
                np.add.at(bvec, c, 2.0 * ab * bc.g(xb))
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size)).tocsr()
    A.sum_duplicates()
    return A, bvec


def check_disjoint(problem: PenalizedProblem, chi_n=None, chi_d=None):
    if chi_n is None:
        chi_n, chi_d = cell_indicators(problem)
    masks = [c > 0.5 for c in chi_n + chi_d]
    if len(masks) > 1 and np.any(np.sum(masks, axis=0) > 1):
        raise InvalidProblemError("penalized regions overlap")


def assemble(problem: PenalizedProblem) -> LinearSystem:
    if not problem.eta > 0:
        raise ValueError(f"penalization parameter must be positive, got {problem.eta}")
    grid = problem.grid
    xc = grid.cell_centers()
    chi_n, chi_d = cell_indicators(problem)
    check_disjoint(problem, chi_n, chi_d)

    A, bvec = diffusion_matrix(grid, face_coefficients(problem), problem.external_bc)
    chi_sum = np.sum(chi_n, axis=0) if chi_n else np.zeros(grid.size)
    rhs = (1.0 - chi_sum) * _eval(problem.f, xc) + flux_forcing(problem) + bvec
    if chi_d:
        penalty = np.zeros(grid.size)
        for reg, chi in zip(problem.dirichlet_regions, chi_d):
            penalty += chi / problem.eta
            rhs += chi * _eval(reg.q_target, xc) / problem.eta
        A = (A + sp.diags(penalty)).tocsr()
    return LinearSystem(A, rhs, periodic=problem.periodic)


def fix_nullspace(system: LinearSystem, grid: Grid, mode: str = "replace_first_row",
                  row: int = 0) -> LinearSystem:
    """Replace one equation with the discrete zero-mean condition sum q h^d = 0."""
    if mode == "none":
        return system
    if mode != "replace_first_row":
        raise ValueError(f"unknown nullspace mode {mode!r}")
    if not system.periodic:
        warnings.warn("nullspace repair applied to a non-periodic system", stacklevel=2)
    A = system.matrix.tolil()
    A[row, :] = np.full(grid.size, grid.cell_volume)
    rhs = system.rhs.copy()
    rhs[row] = 0.0
    return replace(system, matrix=A.tocsr(), rhs=rhs, nullspace_repaired=True,
                   repaired_row=row)


def apply_operator(system: LinearSystem, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).ravel()
    if q.size != system.size:
        raise ValueError(f"{q.size} values for a system of size {system.size}")
    return system.matrix @ q - system.rhs
