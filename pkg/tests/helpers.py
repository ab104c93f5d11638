"""Shared builders for the test suite."""

import numpy as np
import sympy as sp

from mfglab.grid import Field, NormKind, build_grid, norm
from mfglab.mfg import InteractionSpec, manufactured_preset, manufactured_problem


def nonlinear_spec():
    return InteractionSpec(
        family="tanh", gamma1=0.3, gamma2=0.3, kernel="gaussian", amplitude=0.5, sigma=0.3
    )


def nonlinear_case(grid, beta=0.2, r=0.5):
    u_e, m_e = manufactured_preset("decay_cosine", grid)
    return manufactured_problem(u_e, m_e, beta, sp.Float(r), nonlinear_spec(), grid)


def linear_case(grid, beta=0.1):
    u_e, m_e = manufactured_preset("linear_heat", grid)
    return manufactured_problem(u_e, m_e, beta, sp.Integer(0), InteractionSpec(), grid)


def gentle_case(grid, beta=0.04, r=0.2):
    """Weakly coupled base used for reconstruction experiments."""
    spec = InteractionSpec(
        family="tanh", gamma1=0.15, gamma2=0.15, kernel="gaussian", amplitude=0.25, sigma=0.4
    )
    u_e, m_e = manufactured_preset("decay_cosine", grid)
    return manufactured_problem(u_e, m_e, beta, sp.Float(r), spec, grid)


def solution_error(u, m, case):
    gu = norm(Field(case.grid, u.values - case.u_exact.values), NormKind.L2_Q)
    gm = norm(Field(case.grid, m.values - case.m_exact.values), NormKind.L2_Q)
    return gu + gm


def loglog_slope(errors, steps):
    return float(np.polyfit(np.log(np.asarray(steps)), np.log(np.asarray(errors)), 1)[0])
