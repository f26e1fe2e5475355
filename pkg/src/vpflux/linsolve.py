"""Sparse solves for the assembled penalized systems."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operator import LinearSystem

log = logging.getLogger(__name__)

# Systems with a huge near-null mode (a Neumann fluid region tied to the
# boundary only through eta-diffusive solid) carry solution values so large
# that ||Aq - b|| cannot reach rel_tol * ||b|| in double precision.  Such a
# solve is accepted when its componentwise backward error is at round-off.
BACKWARD_ERROR_TOL = 1e-13


class SingularSystemError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual, q=None):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual
        self.q = q


@dataclass
class SolveConfig:
    method: str = "auto"  # direct | iterative | auto
    rel_tol: float = 1e-12
    max_iters: int | None = None
    restart: int = 50
    direct_max_cells: int = 256 * 256

    def __post_init__(self):
        if self.method not in ("auto", "direct", "iterative"):
            raise ValueError(f"unknown solve method {self.method!r}")
        if not 0 < self.rel_tol <= 1e-6:
            raise ValueError("rel_tol must lie in (0, 1e-6]")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class SolveStats:
    method: str
    iterations: int
    residual: float
    backward_error: float
    wall_time: float
    at_roundoff_floor: bool = False
    history: list = field(default_factory=list, repr=False)


def residual_norm(system: LinearSystem, q) -> float:
    """Relative 2-norm residual ||A q - b|| / ||b||."""
    r = system.matrix @ np.asarray(q, dtype=float) - system.rhs
    bn = np.linalg.norm(system.rhs)
    return float(np.linalg.norm(r) / (bn if bn > 0 else 1.0))


def backward_error(system: LinearSystem, q) -> float:
    """Componentwise (Oettli-Prager) backward error of ``q``."""
    A, b = system.matrix, system.rhs
    r = np.abs(A @ q - b)
    scale = abs(A) @ np.abs(q) + np.abs(b)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(scale > 0, r / scale, np.where(r > 0, np.inf, 0.0))
    return float(ratio.max())


def _is_symmetric(A) -> bool:
    d = abs(A - A.T)
    return d.nnz == 0 or d.max() <= 1e-13 * abs(A).max()


def _direct(system, cfg):
    A = system.matrix.tocsc()
    lu = spla.splu(A)
    q = lu.solve(system.rhs)
    # a couple of refinement sweeps recover digits lost to pivoting
    for _ in range(3):
        if residual_norm(system, q) <= cfg.rel_tol:
            break
        q = q - lu.solve(system.matrix @ q - system.rhs)
    return q, 1


STRENGTH_THETA = 0.1


def _deflation_space(A, theta=STRENGTH_THETA):
    """Indicator vectors of the strongly connected components of ``A``.

    Penalized solids couple to the fluid only through eta-weak links, so
    each component carries a near-null mode (eigenvalue ~ eta) that plain
    AMG-CG cannot resolve.  Deflating them restores fast convergence.
    """
    import pyamg
    from scipy.sparse import csgraph

    S = pyamg.strength.symmetric_strength_of_connection(A, theta)
    ncomp, labels = csgraph.connected_components(S, directed=False)
    n = A.shape[0]
    return sp.csr_matrix((np.ones(n), (np.arange(n), labels)), shape=(n, ncomp))


def _deflated_amg(A, theta=STRENGTH_THETA):
    """Balancing preconditioner ``(I - QA) M (I - AQ) + Q`` around SA-AMG."""
    import pyamg

    Z = _deflation_space(A, theta)
    coarse = spla.splu((Z.T @ A @ Z).tocsc())

    def Q(r):
        return Z @ coarse.solve(Z.T @ r)

    ml = pyamg.smoothed_aggregation_solver(
        A, symmetry="symmetric", strength=("symmetric", {"theta": theta}))
    M = ml.aspreconditioner(cycle="V")

    def apply(r):
        z = M @ (r - A @ Q(r))
        return z - Q(A @ z) + Q(r)

    return spla.LinearOperator(A.shape, apply, dtype=float), Q


def _iterative(system, cfg):
    A, b = system.matrix.tocsr(), system.rhs
    maxiter = cfg.max_iters or 10 * system.size
    history = []
    count = [0]

    if not system.nullspace_repaired and _is_symmetric(A):
        P, Q = _deflated_amg(A)

        def cg_cb(xk):
            count[0] += 1
            history.append(residual_norm(system, xk))

        q, _ = spla.cg(A, b, x0=Q(b), rtol=cfg.rel_tol, atol=0.0, M=P,
                       maxiter=min(maxiter, 2000), callback=cg_cb)

        def correct(r):
            d, _ = spla.cg(A, r, x0=Q(r), rtol=cfg.rel_tol, atol=0.0, M=P,
                           maxiter=min(maxiter, 2000))
            return d
        label = "cg+deflated-amg"
    else:
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-6, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)

        def gm_cb(res):
            count[0] += 1
            history.append(float(res))

        def run(rhs, cb=None):
            restart = min(cfg.restart, maxiter)
            x, _ = spla.gmres(A, rhs, M=M, rtol=cfg.rel_tol, atol=0.0, restart=restart,
                              maxiter=max(1, maxiter // restart), callback=cb,
                              callback_type="pr_norm")
            return x

        q = run(b, gm_cb)
        correct = run
        label = "gmres+ilu"

    # the Krylov recursions track an updated residual that can drift from the
    # true one; a few correction sweeps against b - Aq fix that
    best, best_err = q, backward_error(system, q)
    for _ in range(3):
        if residual_norm(system, best) <= cfg.rel_tol or best_err <= BACKWARD_ERROR_TOL / 10:
            break
        q = best + correct(b - A @ best)
        err = backward_error(system, q)
        if err >= best_err:
            break
        best, best_err = q, err
    return best, count[0], label, history


def solve(system: LinearSystem, config: SolveConfig | None = None):
    """Solve ``A q = b``; returns ``(q, SolveStats)``.

    Periodic systems must have had their constant null space removed with
    :func:`vpflux.operator.fix_nullspace` first.
    """
    cfg = config or SolveConfig()
    if system.periodic and not system.nullspace_repaired:
        raise SingularSystemError(
            "periodic system is singular; repair the null space first")
    method = cfg.method
    if method == "auto":
        method = "direct" if system.size <= cfg.direct_max_cells else "iterative"
    t0 = time.perf_counter()
    history = []
    if method == "direct":
        q, iters = _direct(system, cfg)
        label = "direct"
    else:
        q, iters, label, history = _iterative(system, cfg)
    elapsed = time.perf_counter() - t0
    res = residual_norm(system, q)
    berr = backward_error(system, q)
    floor = res > cfg.rel_tol and berr <= BACKWARD_ERROR_TOL
    if not np.all(np.isfinite(q)):
        raise ConvergenceError("solution is not finite", res)
    if res > cfg.rel_tol and not floor:
        raise ConvergenceError(f"{label} solve did not reach rel_tol={cfg.rel_tol:g}",
                               res, q)
    if floor:
        log.debug("residual %.2e at round-off floor (backward error %.1e)", res, berr)
    return q, SolveStats(label, iters, res, berr, elapsed, floor, history)


class Factorization:
    """Reusable sparse LU of a fixed matrix, for repeated implicit stages."""

    def __init__(self, matrix):
        self.matrix = sp.csc_matrix(matrix)
        self._lu = spla.splu(self.matrix)

    def solve(self, b) -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=float))
