"""Uniform cell-centered Cartesian grids in one and two dimensions.

Scalar unknowns live at cell centers, coefficients at faces.  Cells are
linearised row-major with x varying fastest, i.e. ``k = i + nx * j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid:
    dim: int
    origin: tuple[float, ...]
    extent: tuple[float, ...]
    n: tuple[int, ...]
    h: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "h", tuple(e / k for e, k in zip(self.extent, self.n)))

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def shape(self) -> tuple[int, ...]:
        """Array shape for cell data, ``(ny, nx)`` in 2D."""
        return tuple(reversed(self.n))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def axis_cells(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.n[axis]) + 0.5) * self.h[axis]

    def axis_faces(self, axis: int) -> np.ndarray:
        return self.origin[axis] + np.arange(self.n[axis] + 1) * self.h[axis]

    def cell_centers(self) -> np.ndarray:
        """All cell centers, shape ``(size, dim)``, row-major order."""
        if self.dim == 1:
            return self.axis_cells(0)[:, None]
        X, Y = np.meshgrid(self.axis_cells(0), self.axis_cells(1))
        return np.column_stack([X.ravel(), Y.ravel()])

    def face_centers(self, axis: int) -> np.ndarray:
        """Centers of the faces normal to ``axis``.

        Returned with shape ``(count, dim)``; faces are ordered like the
        arrays of :class:`FaceField`, x fastest.
        """
        if self.dim == 1:
            return self.axis_faces(0)[:, None]
        if axis == 0:
            X, Y = np.meshgrid(self.axis_faces(0), self.axis_cells(1))
        else:
            X, Y = np.meshgrid(self.axis_cells(0), self.axis_faces(1))
        return np.column_stack([X.ravel(), Y.ravel()])

    def face_shape(self, axis: int) -> tuple[int, ...]:
        n = list(self.n)
        n[axis] += 1
        return tuple(reversed(n))

    def cell_center(self, index) -> np.ndarray:
        idx = _as_index(index, self.dim)
        for k, i in enumerate(idx):
            if not 0 <= i < self.n[k]:
                raise ValueError(f"cell index {index} out of range for n={self.n}")
        return np.array([self.origin[k] + (idx[k] + 0.5) * self.h[k]
                         for k in range(self.dim)])

    def face_center(self, axis: int, index) -> np.ndarray:
        """Center of a face normal to ``axis``.

        ``index[axis]`` runs over ``0..n[axis]``; the transverse entries are
        ordinary cell indices.
        """
        if not 0 <= axis < self.dim:
            raise ValueError(f"axis {axis} invalid for a {self.dim}D grid")
        idx = _as_index(index, self.dim)
        x = []
        for k, i in enumerate(idx):
            top = self.n[k] + 1 if k == axis else self.n[k]
            if not 0 <= i < top:
                raise ValueError(f"face index {index} out of range on axis {axis}")
            offset = 0.0 if k == axis else 0.5
            x.append(self.origin[k] + (i + offset) * self.h[k])
        return np.array(x)

    def linear_index(self, index) -> int:
        idx = _as_index(index, self.dim)
        return idx[0] if self.dim == 1 else idx[0] + self.n[0] * idx[1]


def _as_index(index, dim):
    idx = (index,) if np.isscalar(index) else tuple(index)
    if len(idx) != dim:
        raise ValueError(f"expected {dim} indices, got {index!r}")
    return tuple(int(i) for i in idx)


def _per_axis(value, dim, name):
    vals = (value,) if np.isscalar(value) else tuple(value)
    if len(vals) == 1 and dim > 1:
        vals = vals * dim
    if len(vals) != dim:
        raise ValueError(f"{name} needs {dim} entries, got {value!r}")
    return vals


def make_grid(dim, origin, extent, n) -> Grid:
    if dim not in (1, 2):
        raise ValueError("only 1D and 2D grids are supported")
    origin = tuple(float(v) for v in _per_axis(origin, dim, "origin"))
    extent = tuple(float(v) for v in _per_axis(extent, dim, "extent"))
    n = _per_axis(n, dim, "n")
    if any(int(k) != k for k in n):
        raise ValueError(f"cell counts must be integers, got {n!r}")
    n = tuple(int(k) for k in n)
    if any(e <= 0 for e in extent):
        raise ValueError(f"extent must be positive, got {extent}")
    if any(k < 2 for k in n):
        raise ValueError(f"need at least 2 cells per axis, got {n}")
    return Grid(dim, origin, extent, n)


@dataclass
class CellField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.size:
            raise ValueError(
                f"{self.values.size} values for a grid of {self.grid.size} cells")

    @classmethod
    def sample(cls, grid: Grid, func) -> "CellField":
        return cls(grid, func(grid.cell_centers()))

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


@dataclass
class FaceField:
    grid: Grid
    values: list[np.ndarray]

    def __post_init__(self):
        if len(self.values) != self.grid.dim:
            raise ValueError("one face array per axis is required")
        vals = []
        for axis, v in enumerate(self.values):
            v = np.asarray(v, dtype=float).ravel()
            expected = int(np.prod(self.grid.face_shape(axis)))
            if v.size != expected:
                raise ValueError(
                    f"axis {axis}: {v.size} face values, expected {expected}")
            vals.append(v)
        self.values = vals

    @classmethod
    def sample(cls, grid: Grid, func) -> "FaceField":
        """Sample a scalar function at every face center.

        ``func`` may return a per-axis list (for vector fields, the
        component normal to the face is taken).
        """
        out = []
        for axis in range(grid.dim):
            v = np.asarray(func(grid.face_centers(axis)), dtype=float)
            if v.ndim == 2:
                v = v[:, axis]
            out.append(v)
        return cls(grid, out)

    def axis_array(self, axis: int) -> np.ndarray:
        return self.values[axis].reshape(self.grid.face_shape(axis))
