"""Penalized advection-diffusion with a prescribed velocity field.

    dq/dt + (1 - chi)(u . grad q) = div[a grad q] + (1 - chi) f + f_b

Convection is explicit (Adams-Bashforth 2, forward Euler on the first
step), the penalized diffusion is Crank-Nicolson.  The diffusion operator,
sources and boundary data are exactly those of :func:`operator.assemble`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .grid import CellField
from .linsolve import Factorization
from .operator import (ExternalDirichlet, LinearSystem, PenalizedProblem,
                       assemble, cell_indicators)

log = logging.getLogger(__name__)


class NonSteadyError(RuntimeError):
    def __init__(self, state):
        super().__init__(
            f"no steady state after {state.step} steps "
            f"(change rate {state.last_change_rate:.3e})")
        self.state = state


@dataclass
class TransportProblem:
    base: PenalizedProblem
    velocity: Callable  # points (m, dim) -> (m, dim)
    dt: float = 2e-3
    steady_tol: float = 1e-8
    max_steps: int = 200_000
    steady_cells: str = "fluid"  # fluid | all
    _ops: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.steady_cells not in ("fluid", "all"):
            raise ValueError(f"unknown steady_cells {self.steady_cells!r}")

    @property
    def grid(self):
        return self.base.grid

    def cfl(self) -> float:
        """Convective CFL number max_cells(sum_k |u_k|) dt / h."""
        u = np.asarray(self.velocity(self.grid.cell_centers()))
        return float(np.max(np.abs(u).sum(axis=1)) * self.dt / min(self.grid.h))

    def operators(self) -> dict:
        if self._ops is None:
            self._ops = _build_operators(self)
        return self._ops


@dataclass
class TransportState:
    q: CellField
    step: int = 0
    time: float = 0.0
    last_change_rate: float = np.inf
    conv_prev: np.ndarray | None = field(default=None, repr=False)


def convection_matrix(problem: TransportProblem):
    """``(C, c0)`` with ``(1 - chi)(u . grad q) = C q + c0`` at cell centers.

    Second-order central differences; periodic wrap or the Dirichlet ghost
    value ``2 g - q`` at the external boundary.
    """
    grid = problem.grid
    xc = grid.cell_centers()
    chi_n, _ = cell_indicators(problem.base)
    weight = 1.0 - (np.sum(chi_n, axis=0) if chi_n else 0.0)
    u = np.asarray(problem.velocity(xc), dtype=float).reshape(grid.size, grid.dim)
    idx = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [], [], []
    c0 = np.zeros(grid.size)
    bc = problem.base.external_bc
    for axis in range(grid.dim):
        ax = grid.dim - 1 - axis
        n = grid.n[axis]
        coef = (weight * u[:, axis] / (2.0 * grid.h[axis])).reshape(grid.shape)
        plus = np.roll(idx, -1, axis=ax)
        minus = np.roll(idx, 1, axis=ax)
        rows += [idx.ravel(), idx.ravel()]
        cols += [plus.ravel(), minus.ravel()]
        vals += [coef.ravel(), -coef.ravel()]
        if isinstance(bc, ExternalDirichlet):
            # undo the wrap and use ghost values at both ends
            xf = grid.face_centers(axis).reshape(grid.face_shape(axis) + (grid.dim,))
            for cell, face, wrapped, sign in ((n - 1, n, 0, 1.0), (0, 0, n - 1, -1.0)):
                c = np.take(idx, [cell], axis=ax).ravel()
                w = np.take(idx, [wrapped], axis=ax).ravel()
                k = np.take(coef, [cell], axis=ax).ravel()
                xb = np.take(xf, [face], axis=ax).reshape(-1, grid.dim)
                rows += [c, c]
                cols += [w, c]
                vals += [-sign * k, -sign * k]
                c0[c] += sign * k * 2.0 * bc.g(xb)
    C = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.size, grid.size)).tocsr()
    C.sum_duplicates()
    C.eliminate_zeros()
    return C, c0


def _build_operators(problem: TransportProblem) -> dict:
    system = assemble(problem.base)
    if problem.base.periodic:
        raise ValueError("transport requires external Dirichlet data")
    C, c0 = convection_matrix(problem)
    dt = problem.dt
    eye = sp.identity(problem.grid.size, format="csr")
    chi_n, _ = cell_indicators(problem.base)
    chi = np.sum(chi_n, axis=0) if chi_n else np.zeros(problem.grid.size)
    return {
        "A": system.matrix, "b": system.rhs, "C": C, "c0": c0,
        "explicit": (eye / dt - 0.5 * system.matrix).tocsr(),
        "implicit": Factorization(eye / dt + 0.5 * system.matrix),
        # by default fluid cells only: solid and solid-side band values relax
        # on time scales up to h^2/eta
        "active": chi < 0.5 if problem.steady_cells == "fluid"
        else np.ones(problem.grid.size, dtype=bool),
    }


def convective_term(state: TransportState, problem: TransportProblem) -> np.ndarray:
    ops = problem.operators()
    return ops["C"] @ state.q.values + ops["c0"]


def advance(state: TransportState, problem: TransportProblem) -> TransportState:
    ops = problem.operators()
    q = state.q.values
    conv = ops["C"] @ q + ops["c0"]
    if state.conv_prev is None:
        explicit = conv
    else:
        explicit = 1.5 * conv - 0.5 * state.conv_prev
    rhs = ops["explicit"] @ q + ops["b"] - explicit
    q_new = ops["implicit"].solve(rhs)
    active = ops["active"]
    change = q_new - q
    rate = float(np.max(np.abs(change[active] if active.any() else change)) / problem.dt)
    return TransportState(CellField(problem.grid, q_new), state.step + 1,
                          state.time + problem.dt, rate, conv)


def steady_system(problem: TransportProblem) -> LinearSystem:
    """Direct steady operator: penalized diffusion plus convection."""
    ops = problem.operators()
    return LinearSystem((ops["A"] + ops["C"]).tocsr(), ops["b"] - ops["c0"])


def run_to_steady(problem: TransportProblem, q0=None, raise_on_max=True):
    """Step until ``max|q^{n+1} - q^n| / dt <= steady_tol``.

    Returns ``(state, steady_flag)``.  Raises :class:`NonSteadyError` when
    ``max_steps`` is exhausted, unless ``raise_on_max`` is false.
    """
    grid = problem.grid
    q0 = np.zeros(grid.size) if q0 is None else np.asarray(q0, dtype=float)
    state = TransportState(CellField(grid, q0))
    while state.step < problem.max_steps:
        state = advance(state, problem)
        if not np.isfinite(state.last_change_rate):
            raise FloatingPointError("transport solution blew up")
        if state.last_change_rate <= problem.steady_tol:
            log.debug("steady after %d steps", state.step)
            return state, True
    if raise_on_max:
        raise NonSteadyError(state)
    return state, False
