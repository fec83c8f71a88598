"""Numerical toolkit for principal eigenpairs of ``eps^2 a D^2 + eps b D + c``
with oscillating coefficients, their effective Hamiltonians and the selected
viscosity solution of the limiting ergodic problem."""

__version__ = "0.1.0"
