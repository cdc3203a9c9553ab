"""Numerical toolkit for Orlicz-growth functionals of constant-coefficient differential operators.

Modules
-------
nfunc
    N-functions, shifts, conjugates, doubling constants.
opsym
    Operator symbols, ellipticity, constant rank, Fourier multipliers.
fieldlab
    Grids, fields, finite differences, spectral tools, rearrangements.
ineq
    Korn, Poincare, Hardy-type and rearrangement inequality checks.
qcx
    Integrands and quantitative quasiconvexity scans.
varmin
    Discrete minimization and regularity diagnostics.
"""

from . import errors, fieldlab, ineq, nfunc, opsym, qcx, varmin
from .errors import AqcError

__version__ = "0.1.0"

__all__ = ["errors", "fieldlab", "ineq", "nfunc", "opsym", "qcx", "varmin", "AqcError", "__version__"]
