"""Numerical laboratory for second-order mean field games systems.

Subpackages cover the discretization (:mod:`mfglab.grid`), the coupled
system residuals and manufactured problems (:mod:`mfglab.mfg`), the
conventional forward solver (:mod:`mfglab.forward`), weighted integral
inequalities (:mod:`mfglab.carleman`), Holder stability experiments
(:mod:`mfglab.stability`), regularized reconstruction from two terminal
or two initial conditions (:mod:`mfglab.reconstruct`), and a batch CLI
(:mod:`mfglab.cli`).
"""

from mfglab.grid import (
    Field,
    Grid,
    NormKind,
    Region,
    build_grid,
    diff_ops,
    integrate,
    norm,
    restrict_time,
)

__version__ = "0.1.0"

__all__ = [
    "Field",
    "Grid",
    "NormKind",
    "Region",
    "build_grid",
    "diff_ops",
    "integrate",
    "norm",
    "restrict_time",
    "__version__",
]
