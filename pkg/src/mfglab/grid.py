"""Space-time tensor grids with Neumann-consistent finite differences.

The domain is a rectangle (1D interval or 2D box) crossed with a time
interval.  All fields are sampled on the closed tensor grid, time last.
Spatial derivatives use second-order central stencils with mirror ghost
nodes, which builds the zero-Neumann boundary condition into every
operator: the discrete normal derivative of any field vanishes at the
boundary, and for fields whose true normal derivative is zero the ghost
extension is second-order exact.  Time derivatives are central inside and
one-sided second order at the endpoints, so Sobolev norms of parabolic
type are computable on closed slabs.

Quadrature is the tensor-product trapezoid rule; it is exact for fields
affine in each coordinate and matches the O(h^2) order of the stencils.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "NormKind",
    "Region",
    "build_grid",
    "diff_ops",
    "integrate",
    "integrate_space",
    "norm",
    "restrict_time",
    "snap_time",
    "spatial_grad",
    "spatial_norm",
]


class NormKind(Enum):
    """Discrete Sobolev norms used by the stability estimates.

    H10_Q is function plus spatial gradient over a space-time slab; H1_Q
    adds the time derivative; H21_Q adds the time derivative and all
    second spatial derivatives; H2_Q is the full space-time H^2 norm.
    Mixed derivatives are counted once per ordered index pair, matching
    the double-sum convention of the rectangular-domain identity check.
    """

    L2_Q = "L2_Q"
    H10_Q = "H10_Q"
    H1_Q = "H1_Q"
    H21_Q = "H21_Q"
    H2_Q = "H2_Q"
    L2_OMEGA = "L2_Omega_at_t"
    H1_OMEGA = "H1_Omega_at_t"


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid over a rectangle times a time interval.

    ``extents`` holds the per-axis spatial interval [a_i, b_i];
    ``shape_space`` the per-axis node counts.  Time runs from ``t_start``
    to ``t_end`` over ``n_t`` nodes (``t_start > 0`` only for restricted
    slabs; weight functions always receive absolute times).
    """

    extents: tuple[tuple[float, float], ...]
    shape_space: tuple[int, ...]
    t_end: float
    n_t: int
    t_start: float = 0.0

    def __post_init__(self):
        if len(self.extents) not in (1, 2):
            raise ValueError("only 1D and 2D rectangular domains are supported")
        if len(self.extents) != len(self.shape_space):
            raise ValueError("extents and node counts must have equal length")
        for (a, b), n in zip(self.extents, self.shape_space):
            if n < 3:
                raise ValueError(f"need at least 3 nodes per axis, got {n}")
            if not b > a:
                raise ValueError(f"degenerate extent [{a}, {b}]")
        if self.n_t < 3:
            raise ValueError(f"need at least 3 time nodes, got {self.n_t}")
        if not self.t_end > self.t_start:
            raise ValueError("time horizon must be positive")

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def T(self) -> float:
        """Length of the time interval covered by this grid."""
        return self.t_end - self.t_start

    @cached_property
    def h(self) -> tuple[float, ...]:
        return tuple((b - a) / (n - 1) for (a, b), n in zip(self.extents, self.shape_space))

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / (self.n_t - 1)

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(
            np.linspace(a, b, n) for (a, b), n in zip(self.extents, self.shape_space)
        )

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_t)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.shape_space + (self.n_t,)

    @property
    def n_space(self) -> int:
        return int(np.prod(self.shape_space))

    @cached_property
    def space_weights(self) -> tuple[np.ndarray, ...]:
        return tuple(_trap_weights(n, h) for n, h in zip(self.shape_space, self.h))

    @cached_property
    def time_weights(self) -> np.ndarray:
        return _trap_weights(self.n_t, self.dt)

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays (x, [y,] t) of full shape."""
        return tuple(np.meshgrid(*self.axes, self.times, indexing="ij"))

    def volume(self) -> float:
        return float(np.prod([b - a for a, b in self.extents]))


def build_grid(extents, nodes, T, n_t) -> Grid:
    """Grid over prod [a_i,b_i] x (0,T) with the given node counts."""
    ext = tuple((float(a), float(b)) for a, b in extents)
    return Grid(ext, tuple(int(n) for n in nodes), float(T), int(n_t))


@dataclass(frozen=True)
class Field:
    """Scalar function sampled on a grid, shape (*shape_space, n_t)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"value shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite entries")

    @staticmethod
    def zeros(grid: Grid) -> "Field":
        return Field(grid, np.zeros(grid.shape))

    @staticmethod
    def from_function(grid: Grid, fn) -> "Field":
        """Sample ``fn(x, [y,] t)`` on the grid nodes."""
        return Field(grid, np.asarray(fn(*grid.meshgrid()), dtype=float))

    def at_time_index(self, it: int) -> np.ndarray:
        return self.values[..., it]


@dataclass(frozen=True)
class Region:
    """Integration region: the full cylinder, a time slab, or a t-slice."""

    kind: str
    t_lo: float | None = None
    t_hi: float | None = None
    t: float | None = None

    @staticmethod
    def cylinder() -> "Region":
        return Region("cylinder")

    @staticmethod
    def slab(t_lo: float, t_hi: float) -> "Region":
        if not t_hi >= t_lo:
            raise ValueError("slab needs t_lo <= t_hi")
        return Region("slab", t_lo=float(t_lo), t_hi=float(t_hi))

    @staticmethod
    def at_time(t: float) -> "Region":
        return Region("slice", t=float(t))


def _trap_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = h / 2.0
    return w


def _axis_slice(ndim: int, axis: int, s: slice) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def _mirror_pad(values: np.ndarray, axis: int) -> np.ndarray:
    pad = [(0, 0)] * values.ndim
    pad[axis] = (1, 1)
    return np.pad(values, pad, mode="reflect")


def _dx(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    p = _mirror_pad(values, axis)
    lo = p[_axis_slice(p.ndim, axis, slice(None, -2))]
    hi = p[_axis_slice(p.ndim, axis, slice(2, None))]
    return (hi - lo) / (2.0 * h)


def _dxx(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    p = _mirror_pad(values, axis)
    lo = p[_axis_slice(p.ndim, axis, slice(None, -2))]
    mid = p[_axis_slice(p.ndim, axis, slice(1, -1))]
    hi = p[_axis_slice(p.ndim, axis, slice(2, None))]
    return (hi - 2.0 * mid + lo) / (h * h)


def _dt(values: np.ndarray, dt: float) -> np.ndarray:
    # endpoint stencils written in difference form so constants cancel exactly
    out = np.empty_like(values)
    out[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2.0 * dt)
    out[..., 0] = (
        3.0 * (values[..., 1] - values[..., 0]) + (values[..., 1] - values[..., 2])
    ) / (2.0 * dt)
    out[..., -1] = (
        3.0 * (values[..., -1] - values[..., -2]) + (values[..., -3] - values[..., -2])
    ) / (2.0 * dt)
    return out


def _dtt(values: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(values)
    out[..., 1:-1] = (values[..., 2:] - 2.0 * values[..., 1:-1] + values[..., :-2]) / (dt * dt)
    if values.shape[-1] >= 4:
        out[..., 0] = (
            2.0 * (values[..., 0] - values[..., 1])
            - 3.0 * (values[..., 1] - values[..., 2])
            + (values[..., 2] - values[..., 3])
        ) / (dt * dt)
        out[..., -1] = (
            2.0 * (values[..., -1] - values[..., -2])
            - 3.0 * (values[..., -2] - values[..., -3])
            + (values[..., -3] - values[..., -4])
        ) / (dt * dt)
    else:
        out[..., 0] = out[..., 1]
        out[..., -1] = out[..., 1]
    return out


class FieldDerivatives:
    """Lazy derivative bundle for one field.

    Spatial ops act on the spatial axes with mirror ghosts; time ops act on
    the last axis.  Mixed second derivatives commute exactly because the
    constituent stencils act on different axes.
    """

    def __init__(self, field: Field):
        self.field = field
        self._v = field.values
        self._g = field.grid

    @cached_property
    def t(self) -> np.ndarray:
        return _dt(self._v, self._g.dt)

    @cached_property
    def tt(self) -> np.ndarray:
        return _dtt(self._v, self._g.dt)

    @cached_property
    def grad(self) -> tuple[np.ndarray, ...]:
        return tuple(_dx(self._v, self._g.h[a], a) for a in range(self._g.dim))

    @cached_property
    def grad_t(self) -> tuple[np.ndarray, ...]:
        return tuple(_dt(gi, self._g.dt) for gi in self.grad)

    @cached_property
    def _second(self) -> dict[tuple[int, int], np.ndarray]:
        out: dict[tuple[int, int], np.ndarray] = {}
        for i in range(self._g.dim):
            out[(i, i)] = _dxx(self._v, self._g.h[i], i)
        for i in range(self._g.dim):
            for j in range(i + 1, self._g.dim):
                out[(i, j)] = _dx(self.grad[i], self._g.h[j], j)
        return out

    def second(self, i: int, j: int) -> np.ndarray:
        if i > j:
            i, j = j, i
        return self._second[(i, j)]

    @cached_property
    def lap(self) -> np.ndarray:
        out = self.second(0, 0).copy()
        for i in range(1, self._g.dim):
            out += self.second(i, i)
        return out


def diff_ops(field: Field) -> FieldDerivatives:
    """Derivative bundle {u_t, grad, laplacian, second derivatives, ...}."""
    return FieldDerivatives(field)


def snap_time(grid: Grid, t: float) -> tuple[int, float]:
    """Snap ``t`` to the nearest time node; returns (index, snapped value)."""
    tol = 1e-9 * max(1.0, abs(grid.t_end))
    if t < grid.t_start - tol or t > grid.t_end + tol:
        raise ValueError(f"time {t} outside [{grid.t_start}, {grid.t_end}]")
    idx = int(round((t - grid.t_start) / grid.dt))
    idx = min(max(idx, 0), grid.n_t - 1)
    return idx, float(grid.times[idx])


def _time_window(grid: Grid, region: Region) -> tuple[int, int]:
    i_lo, _ = snap_time(grid, region.t_lo)
    i_hi, _ = snap_time(grid, region.t_hi)
    if i_hi < i_lo:
        raise ValueError("empty time slab")
    return i_lo, i_hi


def integrate_space(values: np.ndarray, grid: Grid) -> float:
    """Trapezoid integral of a spatial array over the rectangle."""
    out = np.asarray(values, dtype=float)
    for w in grid.space_weights:
        out = np.tensordot(out, w, axes=([0], [0]))
    return float(out)


def integrate(field: Field, region: Region | None = None) -> float:
    """Tensor-product trapezoid quadrature of the field over the region."""
    grid = field.grid
    region = region or Region.cylinder()
    if region.kind == "slice":
        idx, _ = snap_time(grid, region.t)
        return integrate_space(field.values[..., idx], grid)
    if region.kind == "cylinder":
        vals = field.values
        tw = grid.time_weights
    elif region.kind == "slab":
        i_lo, i_hi = _time_window(grid, region)
        if i_hi == i_lo:
            return 0.0
        vals = field.values[..., i_lo : i_hi + 1]
        tw = _trap_weights(i_hi - i_lo + 1, grid.dt)
    else:
        raise ValueError(f"unknown region kind {region.kind!r}")
    out = np.tensordot(vals, tw, axes=([-1], [0]))
    return integrate_space(out, grid)


def _sq_integral(values: np.ndarray, grid: Grid, region: Region) -> float:
    return integrate(Field(grid, values * values), region)


def norm(field: Field, kind: NormKind, region: Region | None = None) -> float:
    """Sobolev-type norm of the field over the region.

    Derivatives are evaluated on the field's full grid before restriction,
    so interior stencils remain centered near slab edges.
    """
    grid = field.grid
    if kind in (NormKind.L2_OMEGA, NormKind.H1_OMEGA):
        if region is None or region.kind != "slice":
            raise ValueError(f"{kind} requires a fixed-time region")
        idx, _ = snap_time(grid, region.t)
        sl = field.values[..., idx]
        total = integrate_space(sl * sl, grid)
        if kind == NormKind.H1_OMEGA:
            for a in range(grid.dim):
                g = _dx(sl, grid.h[a], a)
                total += integrate_space(g * g, grid)
        return float(np.sqrt(total))

    region = region or Region.cylinder()
    if region.kind == "slice":
        raise ValueError(f"{kind} requires a space-time region")
    d = diff_ops(field)
    total = _sq_integral(field.values, grid, region)
    if kind == NormKind.L2_Q:
        return float(np.sqrt(total))
    for g in d.grad:
        total += _sq_integral(g, grid, region)
    if kind == NormKind.H10_Q:
        return float(np.sqrt(total))
    total += _sq_integral(d.t, grid, region)
    if kind == NormKind.H1_Q:
        return float(np.sqrt(total))
    for i in range(grid.dim):
        for j in range(grid.dim):
            total += _sq_integral(d.second(i, j), grid, region)
    if kind == NormKind.H21_Q:
        return float(np.sqrt(total))
    if kind == NormKind.H2_Q:
        for g in d.grad_t:
            total += 2.0 * _sq_integral(g, grid, region)
        total += _sq_integral(d.tt, grid, region)
        return float(np.sqrt(total))
    raise ValueError(f"unknown norm kind {kind}")


def restrict_time(field: Field, t_lo: float, t_hi: float) -> Field:
    """Restrict to the slab Omega x (t_lo, t_hi), snapped to time nodes.

    The returned field's grid records the snapped window through its
    ``t_start`` and ``t_end``, so weight functions keep absolute times.
    """
    grid = field.grid
    i_lo, s_lo = snap_time(grid, t_lo)
    i_hi, s_hi = snap_time(grid, t_hi)
    if i_hi - i_lo + 1 < 2:
        raise ValueError(f"empty time slab after snapping: [{s_lo}, {s_hi}]")
    sub = Grid(grid.extents, grid.shape_space, s_hi, i_hi - i_lo + 1, t_start=s_lo)
    return Field(sub, field.values[..., i_lo : i_hi + 1].copy())


def spatial_grad(values: np.ndarray, grid: Grid) -> tuple[np.ndarray, ...]:
    """Mirror-ghost central gradient of a spatial array."""
    return tuple(_dx(np.asarray(values, dtype=float), grid.h[a], a) for a in range(grid.dim))


def spatial_norm(values: np.ndarray, grid: Grid, kind: str = "L2") -> float:
    """L2 or H1 norm of a spatial array over the rectangle."""
    v = np.asarray(values, dtype=float)
    total = integrate_space(v * v, grid)
    if kind == "H1":
        for g in spatial_grad(v, grid):
            total += integrate_space(g * g, grid)
    elif kind != "L2":
        raise ValueError(f"unknown spatial norm kind {kind!r}")
    return float(np.sqrt(total))
