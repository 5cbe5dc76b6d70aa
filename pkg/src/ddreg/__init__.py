"""Numerical toolkit for fourth-order equations in double divergence form
arising from Hessian functionals F(D2u) = f((D2u)^T D2u)."""

__version__ = "0.1.0"

from .coefficients import a_tensor, b_tensor, btilde_tensor, da_tensor, structure_residual
from .ellipticity import HessianSampler, certify_region, legendre_constant, rank_one_constant
from .fields import Grid, ScalarField
from .functionals import CATALOG, HAMSTAT, TRACE_QUADRATIC, get_functional

__all__ = [
    "CATALOG", "HAMSTAT", "TRACE_QUADRATIC", "Grid", "HessianSampler", "ScalarField",
    "a_tensor", "b_tensor", "btilde_tensor", "certify_region", "da_tensor", "get_functional",
    "legendre_constant", "rank_one_constant", "structure_residual",
]
