"""Numerical laboratory for p-harmonic approximation of infinity-harmonic
functions and weak inverse mean curvature flow certificates."""

from .grid import Grid2D, ScalarField, TestFunction, VectorField
from .imcf import ImcfCertificate, Tolerances, certify
from .plaplace import DirichletProblem, SolveParams, solve, sweep

__all__ = ["Grid2D", "ScalarField", "VectorField", "TestFunction", "DirichletProblem", "SolveParams", "solve",
           "sweep", "ImcfCertificate", "Tolerances", "certify"]
__version__ = "0.1.0"
