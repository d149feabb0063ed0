"""Discrete almost complex geometry on periodic 4-grids.

Modules: ``fiber`` (pointwise exterior algebra), ``grid`` (forms, d and its
adjoint), ``hodge`` (Laplacians, harmonic forms, decomposition),
``jfield`` (J fields, h_J^+-, modified complexes), ``cone`` (closed
J-positive forms by conic feasibility) and ``cli``.
"""
__version__ = "0.1.0"
