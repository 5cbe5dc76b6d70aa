"""Clamped constant-coefficient double-divergence problems on a ball, their
decay experiments, and the frozen-coefficient split g = v + w."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import btilde_tensor
from .ellipticity import legendre_constant
from .fields import (BallRegion, DecayProfile, MatField, ScalarField, UsageError, campanato,
                     decay_fit, diff_quotient, hessian, hessian_array, l2_norm_sq, shift)
from .functionals import MatrixFunctional
from .stencils import assemble, dilate
from .symtensor import major_sym, tensor_norm

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Linear solve failed; ``best`` holds the best iterate when available."""

    def __init__(self, message, best=None, diagnostic=None):
        super().__init__(message)
        self.best = best
        self.diagnostic = diagnostic


@dataclass
class CCProblem:
    c0: np.ndarray
    region: BallRegion
    boundary_data: ScalarField

    def __post_init__(self):
        lam = legendre_constant(self.c0)
        if not lam > 0:
            raise UsageError(f"coefficients are not Legendre elliptic (constant {lam:.3g})")
        grid = self.boundary_data.grid
        idx = np.argwhere(self.region.mask(grid))
        if idx.size == 0:
            raise UsageError("region contains no grid nodes")
        if idx.min() < 2 or idx.max() > grid.m - 3:
            raise UsageError("region must keep a 2h margin from the grid boundary")

    @property
    def grid(self):
        return self.boundary_data.grid

    def masks(self):
        """Unknown nodes, clamped band (two layers) and evaluation nodes."""
        inner = self.region.mask(self.grid)
        band = dilate(inner, 2) & ~inner
        evaluation = dilate(inner, 1)
        return inner, band, evaluation


@dataclass
class CCSolution:
    w: ScalarField
    residual_norm: float
    solver_iterations: int
    method: str = "cg"
    unknowns: int = 0


def _pcg(a, b, x0, tol, maxiter):
    """Jacobi-preconditioned conjugate gradients with best-iterate tracking."""
    dinv = 1.0 / a.diagonal()
    bnorm = np.linalg.norm(b)
    x = x0.copy()
    r = b - a @ x
    best, best_res = x.copy(), np.linalg.norm(r) / bnorm
    if best_res <= tol:
        return x, best_res, 0
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        ap = a @ p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        res = np.linalg.norm(r) / bnorm
        if res < best_res:
            best, best_res = x.copy(), res
        if res <= tol:
            # guard against drift of the recursive residual
            true_res = np.linalg.norm(b - a @ x) / bnorm
            if true_res <= tol:
                return x, true_res, it
            r = b - a @ x
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not reach relative residual {tol:g} in {maxiter} iterations "
                      f"(best {best_res:.3e})", best=best, diagnostic={"best_residual": best_res})


def solve_cc(problem: CCProblem, tol: float = 1e-10, method: str = "auto") -> CCSolution:
    """Solve ``sum D_kl(c0^{ij,kl} D_ij w) = 0`` in the ball with w = g on the band.

    ``method`` is ``"cg"``, ``"direct"`` or ``"auto"`` (CG when c0 has major
    symmetry, sparse LU otherwise).
    """
    c0 = np.asarray(problem.c0, dtype=float)
    grid = problem.grid
    inner, band, evaluation = problem.masks()
    g = problem.boundary_data.values
    if not np.all(np.isfinite(g[inner | band])):
        raise UsageError("boundary data is undefined on the region or its band")
    a_uu = assemble(c0, grid, evaluation, inner, inner)
    a_ub = assemble(c0, grid, evaluation, inner, band)
    rhs = -(a_ub @ g[band])
    x0 = g[inner].copy()
    symmetric = np.allclose(c0, major_sym(c0), rtol=0, atol=1e-12 * max(1.0, np.abs(c0).max()))
    if method == "auto":
        method = "cg" if symmetric else "direct"
    if method == "cg" and not symmetric:
        raise UsageError("CG needs coefficients with major symmetry; use method='direct'")
    nunk = int(inner.sum())
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        x, res, its = np.zeros(nunk), 0.0, 0
    elif method == "cg":
        cap = int(np.ceil(50 * np.sqrt(nunk)))
        x, res, its = _pcg(a_uu, rhs, x0, tol, cap)
    elif method == "direct":
        try:
            x = spla.spsolve(sp.csc_matrix(a_uu), rhs)
        except RuntimeError as exc:
            raise SolverError(f"sparse LU failed: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise SolverError("sparse LU produced non-finite values (singular system?)")
        res = float(np.linalg.norm(rhs - a_uu @ x) / bnorm)
        its = 1
        if res > tol:
            raise SolverError(f"direct solve residual {res:.3e} exceeds {tol:g}", best=x,
                              diagnostic={"residual": res})
    else:
        raise UsageError(f"unknown method {method!r}")
    w = np.full(grid.shape, np.nan)
    w[band] = g[band]
    w[inner] = x
    return CCSolution(ScalarField(grid, w), float(res), int(its), method, nunk)


def weak_form_residual(c0, solution: CCSolution, region: BallRegion, bumps) -> float:
    """Largest normalized discrete pairing ``sum_E c0(D w, D eta) h^n`` over bump fields."""
    grid = solution.w.grid
    inner = region.mask(grid)
    evaluation = dilate(inner, 1)
    hw = hessian_array(np.nan_to_num(solution.w.values), grid.n, grid.h)[evaluation]
    sigma = np.einsum("xij,ijkl->xkl", hw, np.asarray(c0))
    worst = 0.0
    hn = grid.h ** grid.n
    for eta in bumps:
        if np.any(eta.values[~inner] != 0):
            raise UsageError("test bump must vanish outside the region")
        he = hessian_array(eta.values, grid.n, grid.h, fill=0.0)[evaluation]
        num = abs(np.sum(sigma * he)) * hn
        den = np.sqrt(np.sum(he ** 2) * hn)
        worst = max(worst, num / den)
    return worst


def energy_cc(c0, w_values: np.ndarray, region: BallRegion, grid) -> float:
    """Discrete energy ``sum_E c0(D w, D w) h^n``."""
    evaluation = dilate(region.mask(grid), 1)
    hw = hessian_array(w_values, grid.n, grid.h)[evaluation]
    return float(np.einsum("xij,ijkl,xkl->", hw, np.asarray(c0), hw) * grid.h ** grid.n)


def decay_experiment(c0, boundary_data: ScalarField, radii, region_radius: float = 0.8,
                     tol: float = 1e-10, method: str = "auto"):
    """Solve once on the centered ball and measure both decay functionals.

    Returns ``(energy_profile, oscillation_profile, solution)``; exponents are
    fitted when enough positive values exist (otherwise left as ``None``).
    """
    grid = boundary_data.grid
    radii = sorted(float(r) for r in radii)
    if radii[-1] > region_radius - grid.h:
        raise UsageError("decay radii must stay inside the solve region")
    region = BallRegion((0.0,) * grid.n, region_radius)
    sol = solve_cc(CCProblem(c0, region, boundary_data), tol=tol, method=method)
    d2w = hessian(sol.w)
    energy = DecayProfile(radii, [l2_norm_sq(d2w, BallRegion(region.center, r)) for r in radii])
    osc = DecayProfile(radii, [campanato(d2w, BallRegion(region.center, r)) for r in radii])
    for prof in (energy, osc):
        try:
            decay_fit(prof)
        except UsageError:
            log.info("decay fit skipped: fewer than four positive values")
    return energy, osc, sol


@dataclass
class FreezeSplit:
    v: ScalarField
    w: ScalarField
    zeta: float
    bound_ratio: float
    lam: float
    energy_v: float
    energy_g: float
    within_bound: bool = field(init=False)

    def __post_init__(self):
        self.within_bound = bool(self.bound_ratio <= 1.0)


def _center_index(grid, ball: BallRegion):
    idx = np.rint((np.asarray(ball.center, dtype=float) + 1.0) / grid.h).astype(int)
    if np.max(np.abs(idx * grid.h - 1.0 - np.asarray(ball.center))) > 1e-9:
        raise UsageError("ball center must be a grid node")
    return tuple(idx)


def freeze_split(u: ScalarField, f: MatrixFunctional, p: int, ball: BallRegion,
                 quad_points: int = 8, tol: float = 1e-10) -> FreezeSplit:
    """Split g = u^{h_p} into a frozen-coefficient solution w plus a correction v.

    The coefficients are the secant tensors ``b~(D2u(x), D2u(x + h e_p))``
    frozen at the ball center.  ``bound_ratio`` compares
    ``Lambda^2 |D2 v|^2`` against ``zeta^2 |D2 g|^2`` on the ball, where
    zeta is the largest deviation of the coefficients from their central
    value.
    """
    grid = u.grid
    n = grid.n
    g = diff_quotient(u, p)
    hu = hessian(u).values
    e = [0] * n
    e[p] = 1
    hu_next = shift(hu, e)
    inner = ball.mask(grid)
    if not (np.all(np.isfinite(hu[inner])) and np.all(np.isfinite(hu_next[inner]))):
        raise UsageError("ball reaches nodes where D2u is undefined")
    coeffs = btilde_tensor(f, hu[inner], hu_next[inner], quad_points)
    ci = _center_index(grid, ball)
    c_center = btilde_tensor(f, hu[ci], hu_next[ci], quad_points)
    lam = legendre_constant(c_center)
    if not lam > 0:
        raise UsageError(f"frozen coefficients not elliptic at D2u = {hu[ci].tolist()}")
    zeta = float(np.max(tensor_norm(coeffs - c_center)))
    sol = solve_cc(CCProblem(c_center, ball, g), tol=tol, method="auto")
    w = sol.w.values
    v = np.where(np.isfinite(w), g.values - np.nan_to_num(w), np.nan)
    d2v = MatField(grid, hessian_array(v, n, grid.h))
    d2g = hessian(g)
    ev = float(np.sum(d2v.values[inner] ** 2) * grid.h ** n)
    eg = float(np.sum(d2g.values[inner] ** 2) * grid.h ** n)
    scale = max(eg, 1e-300)
    if ev <= 1e-20 * max(scale, 1.0):
        ratio = 0.0
    elif zeta == 0.0 or eg == 0.0:
        ratio = float("inf")
    else:
        ratio = lam ** 2 * ev / (zeta ** 2 * eg)
    return FreezeSplit(ScalarField(grid, v), sol.w, zeta, float(ratio), float(lam), ev, eg)
