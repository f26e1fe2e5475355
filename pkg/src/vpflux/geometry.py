"""Signed distance fields for embedded interfaces and the indicator functions
built from them.

Convention: ``phi < 0`` in the (fictitious) solid, ``phi > 0`` in the fluid.
Every field takes an array of points of shape ``(m, dim)`` and returns ``m``
values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class DegenerateNormalError(ValueError):
    pass


class SignedDistance:
    """Callable wrapper around a vectorised signed distance function.

    ``gradient`` is optional; when present it is used for normals instead of
    finite differences.
    """

    def __init__(self, func: Callable, dim: int, gradient: Callable | None = None,
                 name: str = "sdf"):
        self.func = func
        self.dim = dim
        self.gradient = gradient
        self.name = name

    def __call__(self, x) -> np.ndarray:
        pts = _points(x, self.dim)
        return np.asarray(self.func(pts), dtype=float)

    def __repr__(self):
        return f"SignedDistance({self.name})"


def _points(x, dim):
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(-1, 1) if dim == 1 else pts.reshape(1, -1)
    if pts.shape[1] != dim:
        raise ValueError(f"expected points with {dim} coordinates, got {pts.shape}")
    return pts


def sdf_interval(a: float, b: float, period: float | None = None) -> SignedDistance:
    """Fluid interval ``(a, b)``; everything outside is solid.

    With ``period`` the interval is repeated with that period, so the
    distance is measured to the nearest periodic image of either end.
    """
    if not a < b:
        raise ValueError(f"interval needs a < b, got ({a}, {b})")
    if period is not None and not b - a < period:
        raise ValueError("periodic interval must be shorter than the period")
    shifts = (0.0,) if period is None else (-period, 0.0, period)

    def func(p):
        x = p[:, 0]
        return np.max([np.minimum(x - a - s, b + s - x) for s in shifts], axis=0)

    def grad(p):
        x = p[:, 0]
        vals = np.array([np.minimum(x - a - s, b + s - x) for s in shifts])
        s = np.asarray(shifts)[np.argmax(vals, axis=0)]
        return np.where(x - a - s < b + s - x, 1.0, -1.0)[:, None]

    return SignedDistance(func, 1, grad, name=f"interval({a:g},{b:g})")


def sdf_circle(center, r: float, solid_inside: bool = True) -> SignedDistance:
    if r <= 0:
        raise ValueError("circle radius must be positive")
    c = np.asarray(center, dtype=float)
    sign = 1.0 if solid_inside else -1.0

    def func(p):
        return sign * (np.linalg.norm(p - c, axis=1) - r)

    def grad(p):
        d = p - c
        rho = np.linalg.norm(d, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return sign * d / rho

    side = "in" if solid_inside else "out"
    return SignedDistance(func, 2, grad, name=f"circle(r={r:g},solid {side})")


def _segment_distance(p, a, b):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def sdf_polygon(vertices) -> SignedDistance:
    """Exact signed distance to a simple polygon, negative inside."""
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise ValueError("polygon needs at least 3 two-dimensional vertices")
    w = np.roll(v, -1, axis=0)
    if np.any(np.linalg.norm(w - v, axis=1) == 0):
        raise ValueError("polygon has repeated consecutive vertices")

    def func(p):
        d = np.full(len(p), np.inf)
        inside = np.zeros(len(p), dtype=bool)
        x, y = p[:, 0], p[:, 1]
        for a, b in zip(v, w):
            d = np.minimum(d, _segment_distance(p, a, b))
            # even-odd crossing test on a half-open edge
            crosses = (a[1] > y) != (b[1] > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            inside ^= crosses & (x < xc)
        return np.where(inside, -d, d)

    return SignedDistance(func, 2, name=f"polygon({len(v)})")


def _rotate(points, angle):
    c, s = np.cos(angle), np.sin(angle)
    return points @ np.array([[c, s], [-s, c]])


def hexagram_vertices(center, R: float) -> np.ndarray:
    """Boundary of two overlapping equilateral triangles of circumradius R.

    Returned as the equivalent twelve-gon so the distance stays exact
    inside as well as outside.
    """
    ang = np.pi / 2 + np.arange(12) * np.pi / 6
    rad = np.where(np.arange(12) % 2 == 0, R, R / np.sqrt(3.0))
    return np.asarray(center) + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])


def xcross_vertices(center, half_length: float, half_width: float) -> np.ndarray:
    """Two crossed bars of half-length L and half-width w rotated by 45 degrees."""
    L, w = half_length, half_width
    plus = np.array([
        (w, w), (L, w), (L, -w), (w, -w), (w, -L), (-w, -L),
        (-w, -w), (-L, -w), (-L, w), (-w, w), (-w, L), (w, L)])
    return np.asarray(center) + _rotate(plus, np.pi / 4)


def sdf_horseshoe(center, r_in: float, r_out: float, half_opening: float,
                  opening_dir: float = np.pi / 2) -> SignedDistance:
    """Annular band with a wedge cut out around ``opening_dir``.

    The ends are flat radial caps.  Distance is exact: the minimum over the
    two arcs and two caps, signed by membership.
    """
    c = np.asarray(center, dtype=float)
    # angular half-width of the retained arc, measured from the closed side
    keep = np.pi - half_opening
    back = opening_dir + np.pi
    ends = [back - keep, back + keep]
    caps = [(c + r_in * np.array([np.cos(t), np.sin(t)]),
             c + r_out * np.array([np.cos(t), np.sin(t)])) for t in ends]

    def func(p):
        d = p - c
        rho = np.linalg.norm(d, axis=1)
        theta = np.arctan2(d[:, 1], d[:, 0])
        off = np.abs(np.angle(np.exp(1j * (theta - back))))
        in_arc = off <= keep
        dist = np.full(len(p), np.inf)
        for r in (r_in, r_out):
            on_arc = np.abs(rho - r)
            arc_end = np.min([
                np.linalg.norm(p - (c + r * np.array([np.cos(t), np.sin(t)])), axis=1)
                for t in ends], axis=0)
            dist = np.minimum(dist, np.where(in_arc, on_arc, arc_end))
        for a, b in caps:
            dist = np.minimum(dist, _segment_distance(p, a, b))
        inside = in_arc & (rho >= r_in) & (rho <= r_out)
        return np.where(inside, -dist, dist)

    return SignedDistance(func, 2, name="horseshoe")


def sdf_union(fields) -> SignedDistance:
    fields = list(fields)
    if not fields:
        raise ValueError("union of an empty list")
    dim = fields[0].dim
    return SignedDistance(lambda p: np.min([f(p) for f in fields], axis=0), dim,
                          name="union(" + ",".join(f.name for f in fields) + ")")


def sdf_complement(f: SignedDistance) -> SignedDistance:
    grad = None if f.gradient is None else (lambda p: -f.gradient(p))
    return SignedDistance(lambda p: -f(p), f.dim, grad, name=f"not({f.name})")


@dataclass(frozen=True)
class ShapeParams:
    shape: str
    center: tuple = (np.pi, np.pi)
    sizes: dict = field(default_factory=dict)


SHAPE_DEFAULTS = {
    "interval": {"a": 0.0, "b": np.pi},
    "circle": {"radius": 1.0},
    "polygon": {},
    "hexagram": {"circumradius": 1.5},
    "xcross": {"half_length": 1.5, "half_width": 0.4},
    "horseshoe": {"r_in": 0.8, "r_out": 1.4, "half_opening": np.pi / 6,
                  "opening_dir": np.pi / 2},
}


def make_shape(params: ShapeParams) -> SignedDistance:
    """Build a solid-inside signed distance field from a catalog entry."""
    if params.shape not in SHAPE_DEFAULTS:
        raise ValueError(f"unknown shape {params.shape!r}")
    s = {**SHAPE_DEFAULTS[params.shape], **params.sizes}
    for k in ("radius", "circumradius", "half_length", "half_width", "r_in", "r_out"):
        if k in s and not s[k] > 0:
            raise ValueError(f"{params.shape}: parameter {k} must be positive")
    c = params.center
    if params.shape == "interval":
        return sdf_interval(s["a"], s["b"])
    if params.shape == "circle":
        return sdf_circle(c, s["radius"], solid_inside=True)
    if params.shape == "polygon":
        return sdf_polygon(s["vertices"])
    if params.shape == "hexagram":
        f = sdf_polygon(hexagram_vertices(c, s["circumradius"]))
    elif params.shape == "xcross":
        if s["half_width"] >= s["half_length"]:
            raise ValueError("x-cross needs half_width < half_length")
        f = sdf_polygon(xcross_vertices(c, s["half_length"], s["half_width"]))
    else:
        if not s["r_in"] < s["r_out"] or not 0 < s["half_opening"] < np.pi:
            raise ValueError("horseshoe needs r_in < r_out and 0 < opening < pi")
        f = sdf_horseshoe(c, s["r_in"], s["r_out"], s["half_opening"],
                          s["opening_dir"])
    f.name = params.shape
    return f


SHARP_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class IndicatorSpec:
    kind: str = "smoothed"
    n_cells: float = 2.0

    def __post_init__(self):
        if self.kind not in ("smoothed", "sharp"):
            raise ValueError(f"indicator kind must be smoothed or sharp, not {self.kind!r}")
        if self.kind == "smoothed" and not self.n_cells > 0:
            raise ValueError("smoothed indicator needs n_cells > 0")


def indicator(phi, spec: IndicatorSpec, h: float = 1.0) -> np.ndarray:
    """Solid indicator chi(phi): 1 in the solid, 0 in the fluid."""
    phi = np.asarray(phi, dtype=float)
    if spec.kind == "sharp":
        # interfaces placed exactly on a sample point must read as phi = 0
        phi = np.where(np.abs(phi) <= SHARP_ZERO_TOL * h, 0.0, phi)
        return np.where(phi < 0, 1.0, np.where(phi == 0, 0.5, 0.0))
    if h <= 0:
        raise ValueError("smoothed indicator needs h > 0")
    eps = spec.n_cells * h
    band = 1.0 - 0.5 * (1.0 + phi / eps + np.sin(np.pi * phi / eps) / np.pi)
    return np.where(phi < -eps, 1.0, np.where(phi > eps, 0.0, band))


def outward_normal(f: SignedDistance, x, h: float = 1e-6) -> np.ndarray:
    """Unit normal pointing out of the fluid and into the solid, ``-grad phi``.

    Uses the analytic gradient when the field carries one, otherwise central
    differences with step ``h/2``.
    """
    pts = _points(x, f.dim)
    if f.gradient is not None:
        g = np.asarray(f.gradient(pts), dtype=float).reshape(len(pts), f.dim)
    else:
        g = np.empty_like(pts)
        for k in range(f.dim):
            e = np.zeros(f.dim)
            e[k] = 0.5 * h
            g[:, k] = (f(pts + e) - f(pts - e)) / h
    norm = np.linalg.norm(g, axis=1)
    if np.any(~np.isfinite(norm)) or np.any(norm < 1e-10):
        raise DegenerateNormalError("vanishing level-set gradient")
    n = -g / norm[:, None]
    return n[0] if np.asarray(x).ndim <= 1 and len(n) == 1 else n
