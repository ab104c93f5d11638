"""Residuals of the coupled value/density system and manufactured problems.

The system couples a backward parabolic equation for the value function u

    u_t + beta*lap(u) - r(x)*|grad u|^2/2 + F(int M(x,y) m(y,t) dy, m) = G1

with a forward Fokker-Planck equation for the density m

    m_t - beta*lap(m) - div(r(x) m grad u) = G2,

both with zero Neumann boundary conditions.  This module evaluates the two
residuals pointwise with the second-order operators of :mod:`mfglab.grid`,
the divergence in conservative flux form (zero boundary flux), and builds
manufactured problems: closed-form (u*, m*) from the cosine Neumann family
whose source terms G1, G2 are defined symbolically so the pair solves the
system exactly up to the interaction quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import sympy as sp

from mfglab.grid import Field, Grid, diff_ops, spatial_grad

__all__ = [
    "InteractionSpec",
    "MfgProblem",
    "AdmissibleSetCheck",
    "ManufacturedCase",
    "interaction_value",
    "residual_u",
    "residual_m",
    "conservative_divergence",
    "admissibility_check",
    "manufactured_problem",
    "manufactured_preset",
    "problem_from_config",
    "MANUFACTURED_PRESETS",
]


def _sech_sq(z):
    # overflow-immune: sech(z) = 2 e^{-|z|} / (1 + e^{-2|z|})
    e = np.exp(-np.abs(z))
    return (2.0 * e / (1.0 + e * e)) ** 2


@dataclass(frozen=True)
class InteractionSpec:
    """Interaction term F applied to the kernel average of the density.

    ``family`` selects F(y, z): "tanh" gives gamma1*tanh(y) + gamma2*tanh(z)
    (globally bounded derivatives), "linear" gives gamma1*y + gamma2*z,
    "zero" disables F.  The kernel is gamma-free: "gaussian" means
    amplitude * exp(-|x-y|^2 / sigma^2), "zero" disables the average.
    """

    family: str = "zero"
    gamma1: float = 0.0
    gamma2: float = 0.0
    kernel: str = "zero"
    amplitude: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.family not in ("tanh", "linear", "zero"):
            raise ValueError(f"unknown interaction family {self.family!r}")
        if self.kernel not in ("gaussian", "zero"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.sigma <= 0:
            raise ValueError("kernel width must be positive")

    @property
    def derivative_bound(self) -> float:
        """Certified bound on sup|F_y|, sup|F_z| (exact for both families)."""
        if self.family == "zero":
            return 0.0
        return max(abs(self.gamma1), abs(self.gamma2))

    @property
    def sup_kernel(self) -> float:
        return 0.0 if self.kernel == "zero" else abs(self.amplitude)

    def f(self, y, z):
        if self.family == "tanh":
            return self.gamma1 * np.tanh(y) + self.gamma2 * np.tanh(z)
        if self.family == "linear":
            return self.gamma1 * np.asarray(y) + self.gamma2 * np.asarray(z)
        return np.zeros(np.broadcast(y, z).shape)

    def f_y(self, y, z):
        if self.family == "tanh":
            return self.gamma1 * _sech_sq(y)
        if self.family == "linear":
            return np.full(np.shape(y), self.gamma1)
        return np.zeros(np.shape(y))

    def f_z(self, y, z):
        if self.family == "tanh":
            return self.gamma2 * _sech_sq(z)
        if self.family == "linear":
            return np.full(np.shape(z), self.gamma2)
        return np.zeros(np.shape(z))

    def mean_value_slopes(self, y1, z1, y2, z2):
        """Exact slopes (f1, f2) with F(y1,z1)-F(y2,z2) = f1*(y1-y2)+f2*(z1-z2).

        For the separable families the slopes are difference quotients of
        the one-variable pieces, so |f1|, |f2| never exceed the certified
        derivative bound.
        """

        def slope(g, gprime, a, b):
            a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
            diff = a - b
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (g(a) - g(b)) / diff
            return np.where(diff == 0.0, gprime(a), s)

        if self.family == "tanh":
            f1 = self.gamma1 * slope(np.tanh, _sech_sq, y1, y2)
            f2 = self.gamma2 * slope(np.tanh, _sech_sq, z1, z2)
        elif self.family == "linear":
            f1 = np.full(np.broadcast(y1, y2).shape, self.gamma1)
            f2 = np.full(np.broadcast(z1, z2).shape, self.gamma2)
        else:
            f1 = np.zeros(np.broadcast(y1, y2).shape)
            f2 = np.zeros(np.broadcast(z1, z2).shape)
        return f1, f2

    def kernel_axis_matrices(self, grid: Grid) -> list[np.ndarray] | None:
        """Per-axis quadrature matrices of the separable Gaussian kernel."""
        if self.kernel == "zero":
            return None
        mats = []
        for ax, (a, b) in zip(grid.axes, grid.extents):
            w = np.full(ax.size, (b - a) / (ax.size - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
            K = np.exp(-((ax[:, None] - ax[None, :]) ** 2) / self.sigma**2)
            mats.append(K * w[None, :])
        return mats

    def kernel_average(self, m_values: np.ndarray, grid: Grid) -> np.ndarray:
        """Quadrature of M(x, .) times the density over the rectangle."""
        mats = self.kernel_axis_matrices(grid)
        if mats is None:
            return np.zeros_like(m_values)
        if grid.dim == 1:
            return self.amplitude * np.tensordot(mats[0], m_values, axes=([1], [0]))
        out = np.tensordot(mats[0], m_values, axes=([1], [0]))
        out = np.tensordot(mats[1], out, axes=([1], [1])).swapaxes(0, 1)
        return self.amplitude * out


def interaction_value(m: Field, spec: InteractionSpec) -> Field:
    """F evaluated at (kernel average of m, m), nodewise."""
    I = spec.kernel_average(m.values, m.grid)
    return Field(m.grid, np.asarray(spec.f(I, m.values), dtype=float))


@dataclass(frozen=True)
class MfgProblem:
    """Coefficients, sources, and a-priori bounds of one problem instance."""

    grid: Grid
    beta: float
    r: np.ndarray  # sampled on spatial nodes
    interaction: InteractionSpec
    G1: Field
    G2: Field
    D1: float
    D2: float
    D3: float
    D4: float

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if np.asarray(self.r).shape != self.grid.shape_space:
            raise ValueError("r must be sampled on the spatial nodes")
        for name in ("D1", "D2", "D3", "D4"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.interaction.derivative_bound > self.D1 + 1e-12:
            raise ValueError("interaction derivative bound exceeds D1")
        r_c1 = self.r_c1_norm()
        if r_c1 > self.D2 + 1e-12 or self.interaction.sup_kernel > self.D2 + 1e-12:
            raise ValueError("C1 bound on r or kernel bound exceeds D2")

    def r_c1_norm(self) -> float:
        """Discrete C1 norm of r: max of |r| and |grad r| over the nodes."""
        vals = [float(np.max(np.abs(self.r)))]
        for g in spatial_grad(self.r, self.grid):
            vals.append(float(np.max(np.abs(g))))
        return max(vals)

    @property
    def D(self) -> float:
        return max(self.D1, self.D2, self.D3, self.D4)


def residual_u(u: Field, m: Field, prob: MfgProblem) -> Field:
    """Pointwise residual of the value-function equation."""
    if u.grid != m.grid:
        raise ValueError("u and m must share a grid")
    d = diff_ops(u)
    grad_sq = sum(g * g for g in d.grad)
    F = interaction_value(m, prob.interaction).values
    res = (
        d.t
        + prob.beta * d.lap
        - prob.r[..., None] * grad_sq / 2.0
        + F
        - prob.G1.values
    )
    return Field(u.grid, res)


def conservative_divergence(
    r: np.ndarray, m_values: np.ndarray, u_values: np.ndarray, grid: Grid
) -> np.ndarray:
    """div(r m grad u) with face-averaged fluxes and zero boundary flux.

    Finite-volume form on the dual cells (trapezoid-weight widths), which
    makes the weighted spatial sum of the divergence vanish exactly, hence
    discrete mass conservation of the forward sweep.
    """
    out = np.zeros_like(m_values)
    for ax in range(grid.dim):
        h = grid.h[ax]
        sl_lo = [slice(None)] * m_values.ndim
        sl_hi = [slice(None)] * m_values.ndim
        sl_lo[ax] = slice(None, -1)
        sl_hi[ax] = slice(1, None)
        sl_lo, sl_hi = tuple(sl_lo), tuple(sl_hi)
        du = (u_values[sl_hi] - u_values[sl_lo]) / h
        rf = 0.5 * (r[sl_lo[: grid.dim]] + r[sl_hi[: grid.dim]])
        mf = 0.5 * (m_values[sl_hi] + m_values[sl_lo])
        flux = rf[..., None] * mf * du
        pad = [(0, 0)] * m_values.ndim
        pad[ax] = (1, 1)
        flux = np.pad(flux, pad)
        widths = grid.space_weights[ax]
        shape = [1] * m_values.ndim
        shape[ax] = -1
        out += np.diff(flux, axis=ax) / widths.reshape(shape)
    return out


def residual_m(u: Field, m: Field, prob: MfgProblem) -> Field:
    """Pointwise residual of the density equation (conservative flux form)."""
    if u.grid != m.grid:
        raise ValueError("u and m must share a grid")
    d = diff_ops(m)
    div = conservative_divergence(prob.r, m.values, u.values, m.grid)
    res = d.t - prob.beta * d.lap - div - prob.G2.values
    return Field(m.grid, res)


@dataclass(frozen=True)
class AdmissibleSetCheck:
    """Sup-norm measurements of a (u, m) pair against the a-priori boxes."""

    sup_u: float
    sup_grad_u: float
    sup_lap_u: float
    sup_m: float
    sup_grad_m: float
    D3: float
    D4: float

    @property
    def in_K3(self) -> bool:
        return max(self.sup_u, self.sup_grad_u, self.sup_lap_u) <= self.D3

    @property
    def in_K4(self) -> bool:
        return max(self.sup_m, self.sup_grad_m) <= self.D4


def admissibility_check(u: Field, m: Field, prob: MfgProblem) -> AdmissibleSetCheck:
    du, dm = diff_ops(u), diff_ops(m)
    return AdmissibleSetCheck(
        sup_u=float(np.max(np.abs(u.values))),
        sup_grad_u=float(np.max(np.sqrt(sum(g * g for g in du.grad)))),
        sup_lap_u=float(np.max(np.abs(du.lap))),
        sup_m=float(np.max(np.abs(m.values))),
        sup_grad_m=float(np.max(np.sqrt(sum(g * g for g in dm.grad)))),
        D3=prob.D3,
        D4=prob.D4,
    )


# ---------------------------------------------------------------------------
# manufactured problems

_X, _Y, _T = sp.symbols("x y t", real=True)

NEUMANN_TOL = 1e-10


@dataclass(frozen=True)
class ManufacturedCase:
    """A problem with known exact solution and its sampled traces."""

    problem: MfgProblem
    u_exact: Field
    m_exact: Field
    u_expr: sp.Expr
    m_expr: sp.Expr
    r_expr: sp.Expr

    @property
    def grid(self) -> Grid:
        return self.problem.grid

    @property
    def u_T(self) -> np.ndarray:
        return self.u_exact.values[..., -1].copy()

    @property
    def m_T(self) -> np.ndarray:
        return self.m_exact.values[..., -1].copy()

    @property
    def u_0(self) -> np.ndarray:
        return self.u_exact.values[..., 0].copy()

    @property
    def m_0(self) -> np.ndarray:
        return self.m_exact.values[..., 0].copy()

    def on_grid(self, grid: Grid) -> "ManufacturedCase":
        """Re-sample the same closed-form case on another grid."""
        return manufactured_problem(
            self.u_expr,
            self.m_expr,
            self.problem.beta,
            self.r_expr,
            self.problem.interaction,
            grid,
            bounds={
                "D1": self.problem.D1,
                "D2": self.problem.D2,
                "D3": self.problem.D3,
                "D4": self.problem.D4,
            },
        )


def _space_symbols(dim: int):
    return (_X,) if dim == 1 else (_X, _Y)


def _lambdify_on(grid: Grid, expr: sp.Expr, with_time: bool) -> np.ndarray:
    syms = _space_symbols(grid.dim)
    if with_time:
        fn = sp.lambdify((*syms, _T), expr, "numpy")
        coords = grid.meshgrid()
        out = fn(*coords)
        return np.broadcast_to(np.asarray(out, dtype=float), grid.shape).copy()
    fn = sp.lambdify(syms, expr, "numpy")
    mesh = np.meshgrid(*grid.axes, indexing="ij")
    out = fn(*mesh)
    return np.broadcast_to(np.asarray(out, dtype=float), grid.shape_space).copy()


def _check_neumann(expr: sp.Expr, grid: Grid, name: str) -> None:
    syms = _space_symbols(grid.dim)
    for ax, s in enumerate(syms):
        dexpr = sp.diff(expr, s)
        fn = sp.lambdify((*syms, _T), dexpr, "numpy")
        for endpoint in grid.extents[ax]:
            coords = []
            others = [grid.axes[a] for a in range(grid.dim) if a != ax]
            mesh = np.meshgrid(*others, grid.times, indexing="ij") if others else [grid.times]
            it = iter(mesh)
            for a in range(grid.dim):
                coords.append(np.full_like(mesh[0], endpoint) if a == ax else next(it))
            coords.append(mesh[-1])
            worst = float(np.max(np.abs(np.asarray(fn(*coords), dtype=float))))
            if worst > NEUMANN_TOL:
                raise ValueError(
                    f"{name} violates the zero normal derivative at axis {ax} "
                    f"boundary {endpoint}: |d{name}/dn| = {worst:.3e}"
                )


def _fine_kernel_average_from_expr(
    m_expr: sp.Expr, spec: InteractionSpec, grid: Grid, fine_factor: int
) -> np.ndarray:
    """Kernel average of the closed-form density by fine quadrature."""
    if spec.kernel == "zero":
        return np.zeros(grid.shape)
    syms = _space_symbols(grid.dim)
    m_fn = sp.lambdify((*syms, _T), m_expr, "numpy")
    fine_axes = [
        np.linspace(a, b, fine_factor * (n - 1) + 1)
        for (a, b), n in zip(grid.extents, grid.shape_space)
    ]
    mats = []
    for ax, fax, (a, b) in zip(grid.axes, fine_axes, grid.extents):
        w = np.full(fax.size, (b - a) / (fax.size - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        K = np.exp(-((ax[:, None] - fax[None, :]) ** 2) / spec.sigma**2)
        mats.append(K * w[None, :])
    if grid.dim == 1:
        mvals = np.asarray(
            m_fn(fine_axes[0][:, None], grid.times[None, :]), dtype=float
        )
        mvals = np.broadcast_to(mvals, (fine_axes[0].size, grid.n_t))
        return spec.amplitude * mats[0] @ mvals
    YF, XF = np.meshgrid(fine_axes[1], fine_axes[0])
    out = np.empty(grid.shape)
    for it, t in enumerate(grid.times):
        mv = np.asarray(m_fn(XF, YF, t), dtype=float)
        mv = np.broadcast_to(mv, (fine_axes[0].size, fine_axes[1].size))
        out[..., it] = mats[0] @ mv @ mats[1].T
    return spec.amplitude * out


def manufactured_problem(
    u_expr,
    m_expr,
    beta: float,
    r_expr,
    spec: InteractionSpec,
    grid: Grid,
    *,
    bounds: dict | None = None,
    fine_factor: int = 16,
) -> ManufacturedCase:
    """Problem whose sources make (u*, m*) an exact solution.

    ``u_expr``/``m_expr``/``r_expr`` are sympy expressions in x[, y], t
    (r in space only); both solution expressions must satisfy the zero
    normal derivative exactly at the boundary.  G1 and G2 are the exact
    left-hand sides; the interaction integral is evaluated by quadrature
    refined ``fine_factor`` times relative to the working grid.
    """
    u_expr = sp.sympify(u_expr)
    m_expr = sp.sympify(m_expr)
    r_expr = sp.sympify(r_expr)
    syms = _space_symbols(grid.dim)
    _check_neumann(u_expr, grid, "u*")
    _check_neumann(m_expr, grid, "m*")

    lap_u = sum(sp.diff(u_expr, s, 2) for s in syms)
    lap_m = sum(sp.diff(m_expr, s, 2) for s in syms)
    grad_sq = sum(sp.diff(u_expr, s) ** 2 for s in syms)
    div_term = sum(sp.diff(r_expr * m_expr * sp.diff(u_expr, s), s) for s in syms)

    g1_smooth = sp.diff(u_expr, _T) + beta * lap_u - r_expr * grad_sq / 2
    g2_full = sp.diff(m_expr, _T) - beta * lap_m - div_term

    u_vals = _lambdify_on(grid, u_expr, with_time=True)
    m_vals = _lambdify_on(grid, m_expr, with_time=True)
    r_vals = _lambdify_on(grid, r_expr, with_time=False)
    g1_vals = _lambdify_on(grid, g1_smooth, with_time=True)
    g2_vals = _lambdify_on(grid, g2_full, with_time=True)

    I_fine = _fine_kernel_average_from_expr(m_expr, spec, grid, fine_factor)
    g1_vals = g1_vals + np.asarray(spec.f(I_fine, m_vals), dtype=float)

    u_exact = Field(grid, u_vals)
    m_exact = Field(grid, m_vals)
    bounds = dict(bounds or {})
    if "D3" not in bounds or "D4" not in bounds:
        du, dm = diff_ops(u_exact), diff_ops(m_exact)
        sup3 = max(
            np.max(np.abs(u_vals)),
            np.max(np.abs(du.lap)),
            np.max(np.sqrt(sum(g * g for g in du.grad))),
        )
        sup4 = max(np.max(np.abs(m_vals)), np.max(np.sqrt(sum(g * g for g in dm.grad))))
        bounds.setdefault("D3", float(2.0 * sup3 + 1.0))
        bounds.setdefault("D4", float(2.0 * sup4 + 1.0))
    bounds.setdefault("D1", max(spec.derivative_bound, 1.0))
    r_c1 = max(
        float(np.max(np.abs(r_vals))),
        max(
            (float(np.max(np.abs(g))) for g in spatial_grad(r_vals, grid)),
            default=0.0,
        ),
    )
    bounds.setdefault("D2", max(r_c1, spec.sup_kernel, 1.0))

    prob = MfgProblem(
        grid=grid,
        beta=float(beta),
        r=r_vals,
        interaction=spec,
        G1=Field(grid, g1_vals),
        G2=Field(grid, g2_vals),
        D1=bounds["D1"],
        D2=bounds["D2"],
        D3=bounds["D3"],
        D4=bounds["D4"],
    )
    return ManufacturedCase(
        problem=prob,
        u_exact=u_exact,
        m_exact=m_exact,
        u_expr=u_expr,
        m_expr=m_expr,
        r_expr=r_expr,
    )


def _hat(grid: Grid, axis: int) -> sp.Expr:
    a, b = grid.extents[axis]
    s = _space_symbols(grid.dim)[axis]
    return sp.pi * (s - a) / (b - a)


def _cos_profile(grid: Grid) -> sp.Expr:
    out = sp.cos(_hat(grid, 0))
    if grid.dim == 2:
        out = out * sp.cos(_hat(grid, 1))
    return out


MANUFACTURED_PRESETS = ("linear_heat", "decay_cosine", "drift_mix")


def manufactured_preset(name: str, grid: Grid) -> tuple[sp.Expr, sp.Expr]:
    """Closed-form (u*, m*) pairs from the cosine Neumann family."""
    cosx = _cos_profile(grid)
    if name == "linear_heat":
        return sp.exp(-_T) * cosx, sp.Integer(1)
    if name == "decay_cosine":
        return sp.exp(-_T) * cosx, 1 + sp.exp(-_T) * cosx / 2
    if name == "drift_mix":
        cos2 = sp.cos(2 * _hat(grid, 0))
        if grid.dim == 2:
            cos2 = cos2 * sp.cos(2 * _hat(grid, 1))
        return (
            sp.exp(-_T) * cosx + sp.exp(-2 * _T) * cos2 / 4,
            1 + sp.exp(-_T) * cosx / 2 + _T * (1 - _T) * cos2 / 8,
        )
    raise ValueError(f"unknown manufactured preset {name!r}")


def _r_expr_from_config(cfg: dict, grid: Grid) -> sp.Expr:
    kind = cfg.get("kind", "constant")
    if kind == "constant":
        return sp.Float(cfg.get("value", 0.0))
    if kind == "cosine":
        mode = int(cfg.get("mode", 1))
        expr = sp.Float(cfg.get("offset", 0.0)) + sp.Float(cfg.get("amplitude", 0.0)) * sp.cos(
            mode * _hat(grid, 0)
        )
        if grid.dim == 2:
            expr = sp.Float(cfg.get("offset", 0.0)) + sp.Float(
                cfg.get("amplitude", 0.0)
            ) * sp.cos(mode * _hat(grid, 0)) * sp.cos(mode * _hat(grid, 1))
        return expr
    raise ValueError(f"unknown r kind {kind!r}")


def _interaction_from_config(cfg: dict) -> InteractionSpec:
    fcfg = cfg.get("f", {"family": "zero"})
    kcfg = cfg.get("kernel", {"kind": "zero"})
    return InteractionSpec(
        family=fcfg.get("family", "zero"),
        gamma1=float(fcfg.get("gamma1", 0.0)),
        gamma2=float(fcfg.get("gamma2", 0.0)),
        kernel="gaussian" if kcfg.get("kind") == "gaussian" else "zero",
        amplitude=float(kcfg.get("amplitude", 0.0)),
        sigma=float(kcfg.get("sigma", 1.0)),
    )


def problem_from_config(cfg: dict, grid: Grid) -> ManufacturedCase:
    """Build a manufactured case from a problem configuration block."""
    beta = float(cfg.get("beta", 0.1))
    r_expr = _r_expr_from_config(cfg.get("r", {"kind": "constant", "value": 0.0}), grid)
    spec = _interaction_from_config(cfg.get("interaction", {}))
    u_expr, m_expr = manufactured_preset(cfg.get("manufactured", "decay_cosine"), grid)
    bounds = cfg.get("bounds")
    return manufactured_problem(u_expr, m_expr, beta, r_expr, spec, grid, bounds=bounds)
