"""Minimization of the discrete energy sum F(D2u) h^n with clamped boundary
data, plus the weak residual of the double-divergence equation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.stats import qmc

from .coefficients import a_tensor, b_tensor
from .ellipticity import legendre_constant
from .fields import Grid, ScalarField, UsageError, hessian_array, quartic_bump_values, second_diff
from .functionals import DomainError, MatrixFunctional, d2F, eval_F, grad_F, gram
from .stencils import assemble
from .symtensor import identity_pairing, major_sym

log = logging.getLogger(__name__)


class LineSearchError(RuntimeError):
    def __init__(self, message, trace=None, u=None):
        super().__init__(message)
        self.trace = trace
        self.u = u


def square_masks(grid: Grid):
    """Unknowns (two layers in from the edge), band, and Hessian evaluation nodes."""
    idx = np.indices(grid.shape)
    m = grid.m
    inner = np.all((idx >= 2) & (idx <= m - 3), axis=0)
    evaluation = np.all((idx >= 1) & (idx <= m - 2), axis=0)
    return inner, ~inner, evaluation


@dataclass
class VarProblem:
    f: MatrixFunctional
    grid: Grid
    boundary_data: ScalarField
    init: ScalarField | None = None
    certified_radius: float | None = None

    def __post_init__(self):
        inner, band, _ = square_masks(self.grid)
        if not np.all(np.isfinite(self.boundary_data.values[band])):
            raise UsageError("boundary data must be defined on the clamped band")
        if self.init is None:
            # smooth data doubles as the starting guess; otherwise zero inside
            data = self.boundary_data.values
            start = np.where(np.isfinite(data), data, 0.0)
            self.init = ScalarField(self.grid, np.where(band, data, start))
        if not np.allclose(self.init.values[band], self.boundary_data.values[band], rtol=0, atol=1e-14):
            raise UsageError("initial field does not match the boundary data on the band")
        energy(self, self.init)  # guard check at every node
        if not np.all(np.isfinite(self.init.values)):
            raise UsageError("initial field has undefined nodes")

    @property
    def masks(self):
        return square_masks(self.grid)


@dataclass
class SolveTrace:
    energy: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    hessian_max: list = field(default_factory=list)
    step: list = field(default_factory=list)
    decrease: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    weak_residual: float | None = None
    gradient_check: float | None = None
    converged: bool = False
    settings: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return max(len(self.energy) - 1, 0)

    def to_dict(self) -> dict:
        return {"energy": self.energy, "grad_norm": self.grad_norm, "hessian_max": self.hessian_max,
                "step": self.step, "decrease": self.decrease, "warnings": self.warnings, "weak_residual": self.weak_residual,
                "gradient_check": self.gradient_check, "converged": self.converged, "iterations": self.iterations, "settings": self.settings}


def _hess_eval(problem: VarProblem, u: ScalarField) -> np.ndarray:
    _, _, evaluation = problem.masks
    g = problem.grid
    return hessian_array(u.values, g.n, g.h)[evaluation]


def _node_error(problem, u, exc):
    _, _, evaluation = problem.masks
    hess = hessian_array(u.values, problem.grid.n, problem.grid.h)
    finite = np.all(np.isfinite(hess), axis=(-2, -1))
    ok = np.asarray(problem.f.guard(gram(np.nan_to_num(hess)))) & finite
    bad = np.argwhere(evaluation & ~ok)
    if not bad.size:
        return DomainError(f"{problem.f.name}: {exc}")
    where = tuple(int(i) for i in bad[0])
    x = [round(float(c), 12) for c in problem.grid.points()[where]]
    return DomainError(f"{problem.f.name}: guard fails at node {where} (x = {x})")


def node_energy(problem: VarProblem, u: ScalarField) -> np.ndarray:
    """``F(D2u(x)) h^n`` at each evaluation node."""
    g = problem.grid
    try:
        vals = eval_F(problem.f, _hess_eval(problem, u))
    except (DomainError, np.linalg.LinAlgError) as exc:
        raise _node_error(problem, u, exc) from None
    return np.asarray(vals) * g.h ** g.n


def energy(problem: VarProblem, u: ScalarField) -> float:
    """``sum_E F(D2u(x)) h^n`` over nodes where the Hessian stencil fits."""
    return float(np.sum(node_energy(problem, u)))


def flux_divergence(sigma: np.ndarray, grid: Grid) -> np.ndarray:
    """``sum_ij D_ij sigma_ij`` with zero extension (adjoint of the Hessian)."""
    out = np.zeros(grid.shape)
    for i in range(grid.n):
        for j in range(i, grid.n):
            w = 1.0 if i == j else 2.0
            out += w * second_diff(sigma[..., i, j], grid.n, grid.h, i, j, fill=0.0)
    return out


def grad_energy(problem: VarProblem, u: ScalarField) -> ScalarField:
    """Exact gradient of :func:`energy` in the node values; zero on the band."""
    g = problem.grid
    inner, _, evaluation = problem.masks
    sigma = np.zeros(g.shape + (g.n, g.n))
    try:
        sigma[evaluation] = grad_F(problem.f, _hess_eval(problem, u))
    except (DomainError, np.linalg.LinAlgError) as exc:
        raise _node_error(problem, u, exc) from None
    out = flux_divergence(sigma, g) * g.h ** g.n
    out[~inner] = 0.0
    return ScalarField(g, out)


def gradient_check(problem: VarProblem, u: ScalarField, nodes: int = 5,
                   rel_step: float = 1e-5) -> float:
    """Largest relative gap between grad_energy and central differences of energy.

    A node value enters D2u with weight 1/h^2, so the step is ``rel_step h^2``
    times the field scale; only the energy of the nodes whose Hessian stencil
    touches the perturbed node is differenced, which keeps round-off small.
    The gap is measured against the gradient sup-norm so that nodes with a
    vanishing gradient do not blow up, after discounting the round-off level
    of the difference quotient.
    """
    g = problem.grid
    inner, _, evaluation = problem.masks
    flat = np.flatnonzero(inner.ravel())
    picks = flat[np.linspace(0, flat.size - 1, nodes + 2).astype(int)[1:-1]]
    grad = grad_energy(problem, u).values
    scale = max(float(np.max(np.abs(grad))), 1e-300)
    step = rel_step * g.h ** 2 * max(1.0, float(np.max(np.abs(u.values))))
    worst = 0.0
    for k in picks:
        node = np.unravel_index(k, g.shape)
        window = tuple(slice(i - 2, i + 3) for i in node)
        near = np.zeros(g.shape, bool)
        near[tuple(slice(i - 1, i + 2) for i in node)] = True
        near &= evaluation
        local, size = [], 0.0
        for sign in (1.0, -1.0):
            vals = u.values.copy()
            vals[node] += sign * step
            hess = hessian_array(vals[window], g.n, g.h)[near[window]]
            fvals = eval_F(problem.f, hess) * g.h ** g.n
            local.append(np.sum(fvals))
            size += np.sum(np.abs(fvals))
        fd = (local[0] - local[1]) / (2 * step)
        noise = 4 * np.finfo(float).eps * size / (2 * step)
        gap = max(abs(fd - grad[node]) - noise, 0.0)
        worst = max(worst, gap / max(abs(grad[node]), scale))
    return float(worst)


def _reference_coefficients(f: MatrixFunctional, n: int) -> np.ndarray:
    try:
        c = major_sym(b_tensor(f, np.zeros((n, n))))
        if legendre_constant(c) > 0:
            return c
    except (DomainError, np.linalg.LinAlgError):
        pass
    return identity_pairing(n)


def preconditioner(problem: VarProblem):
    """Factorized Hessian of the energy linearized at D2u = 0 (on the unknowns)."""
    g = problem.grid
    inner, _, evaluation = problem.masks
    c = _reference_coefficients(problem.f, g.n)
    mat = assemble(c, g, evaluation, inner, inner) * g.h ** g.n
    return mat, spla.splu(sp.csc_matrix(mat))


def _op_norm_max(hess: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(hess)))) if hess.size else 0.0


def minimize(problem: VarProblem, tol: float = 1e-10, max_iter: int = 500, method: str = "gd",
             precondition: bool = True, memory: int = 8, c1: float = 1e-4,
             backtrack: float = 0.5, min_step: float = 1e-12):
    """Descend the discrete energy from ``problem.init``.

    ``method="gd"`` is gradient descent with Barzilai-Borwein initial steps;
    ``"lbfgs"`` uses limited-memory quasi-Newton directions.  Both
    backtrack until the Armijo condition holds.  With ``precondition`` the
    steps are measured in the metric of the energy Hessian at D2u = 0.

    Returns ``(u, trace)``; stops when the gradient sup-norm is <= ``tol``.
    """
    if method not in ("gd", "lbfgs"):
        raise UsageError(f"unknown method {method!r}")
    grid = problem.grid
    inner, _, _ = problem.masks
    trace = SolveTrace(settings={"tol": tol, "max_iter": max_iter, "method": method,
                                 "precondition": precondition, "c1": c1, "backtrack": backtrack,
                                 "memory": memory})
    base = problem.init.values.copy()

    def field_of(x):
        vals = base.copy()
        vals[inner] = x
        return ScalarField(grid, vals)

    def evaluate(x):
        u = field_of(x)
        return node_energy(problem, u), grad_energy(problem, u).values[inner], u

    def change(e_old, e_new, u_old, u_new):
        delta = math.fsum(e_new - e_old)
        if abs(delta) > 64 * np.finfo(float).eps * math.fsum(np.abs(e_old)):
            return delta
        # below the rounding of F itself: second-order expansion of F at each node
        # (its cubic remainder is negligible for increments this small)
        h_old = _hess_eval(problem, u_old)
        dh = _hess_eval(problem, ScalarField(grid, u_new.values - u_old.values))
        first = np.einsum("xij,xij->x", grad_F(problem.f, h_old), dh)
        return math.fsum((first + 0.5 * d2F(problem.f, h_old, dh)) * grid.h ** grid.n)

    if precondition:
        pmat, lu = preconditioner(problem)
        apply_inv = lu.solve
        metric = lambda s: float(s @ (pmat @ s))  # noqa: E731
    else:
        apply_inv = lambda r: r  # noqa: E731
        metric = lambda s: float(s @ s)  # noqa: E731

    x = base[inner].copy()
    e, gvec, u = evaluate(x)
    trace.gradient_check = gradient_check(problem, u)
    if trace.gradient_check > 1e-6:
        log.warning("gradient spot check off by %.2e", trace.gradient_check)
        trace.warnings.append({"iteration": 0, "gradient_check": trace.gradient_check})
    hist_s, hist_y = [], []
    alpha0 = 1.0
    x_prev = g_prev = None
    for it in range(max_iter + 1):
        hmax = _op_norm_max(_hess_eval(problem, u))
        gnorm = float(np.max(np.abs(gvec))) if gvec.size else 0.0
        trace.energy.append(math.fsum(e))
        trace.grad_norm.append(gnorm)
        trace.hessian_max.append(hmax)
        if problem.certified_radius is not None and hmax > problem.certified_radius:
            trace.warnings.append({"iteration": it, "radius": hmax})
        if gnorm <= tol:
            trace.converged = True
            break
        if it == max_iter:
            break
        if x_prev is not None:
            s, y = x - x_prev, gvec - g_prev
            sy = float(s @ y)
            if method == "gd" and sy > 0:
                alpha0 = metric(s) / sy
            if method == "lbfgs" and sy > 1e-300:
                hist_s.append(s)
                hist_y.append(y)
                if len(hist_s) > memory:
                    hist_s.pop(0)
                    hist_y.pop(0)
        if method == "gd":
            d = -apply_inv(gvec)
            alpha = alpha0
        else:
            d = -_two_loop(gvec, hist_s, hist_y, apply_inv)
            alpha = 1.0
        slope = float(gvec @ d)
        if slope >= 0:
            d = -apply_inv(gvec)
            slope = float(gvec @ d)
        accepted = False
        while alpha >= min_step:
            try:
                e_new, g_new, u_new = evaluate(x + alpha * d)
            except (DomainError, np.linalg.LinAlgError):
                alpha *= backtrack
                continue
            # node-wise differences resolve decreases far below the rounding of the total
            delta = change(e, e_new, u, u_new)
            if delta <= c1 * alpha * slope:
                accepted = True
                break
            alpha *= backtrack
        if not accepted:
            raise LineSearchError(f"no sufficient decrease at iteration {it} (grad {gnorm:.3e})",
                                  trace=trace, u=u)
        trace.step.append(alpha)
        trace.decrease.append(-delta)
        x_prev, g_prev = x, gvec
        x, e, gvec, u = x + alpha * d, e_new, g_new, u_new
    trace.weak_residual = weak_residual(problem, u)
    return u, trace


def _two_loop(g, hist_s, hist_y, apply_inv):
    q = g.copy()
    coeffs = []
    for s, y in zip(reversed(hist_s), reversed(hist_y)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        coeffs.append((rho, a))
        q -= a * y
    r = apply_inv(q)
    if hist_s:
        s, y = hist_s[-1], hist_y[-1]
        hy = apply_inv(y)
        r *= float(s @ y) / float(y @ hy)
    for (s, y), (rho, a) in zip(zip(hist_s, hist_y), reversed(coeffs)):
        b = rho * float(y @ r)
        r += (a - b) * s
    return r


def bump_family(grid: Grid, count: int, inner: np.ndarray | None = None):
    """Deterministic quartic bumps at Halton centers with dyadic widths.

    Each bump's support stays inside the unknown nodes.  Yields
    ``(values, exact_hessian)`` pairs.
    """
    if inner is None:
        inner, _, _ = square_masks(grid)
    halton = qmc.Halton(d=grid.n, scramble=False)
    pts = halton.random(count + 1)[1:]
    widths = (0.5, 0.25, 0.125)
    out = []
    for k, p in enumerate(pts):
        s = max(widths[k % len(widths)], 4 * grid.h)
        lo = -1.0 + 3 * grid.h + s
        if lo >= 0:
            raise UsageError("grid too coarse for the requested test bumps")
        center = lo - 2 * lo * p
        vals, hess = quartic_bump_values(grid, center, s)
        if np.any(vals[~inner] != 0):
            continue
        out.append((vals, hess))
    return out


def weak_residual(problem: VarProblem, u: ScalarField, test_count: int = 20,
                  pairing: str = "discrete") -> float:
    """Largest normalized pairing ``|sum_E a(D2u) : (D2u, D2eta) h^n| / |D2eta|_L2``.

    ``pairing="discrete"`` differentiates the bumps with the same stencils as
    the solver, so it vanishes at discrete critical points.
    ``pairing="continuum"`` uses the bumps' exact Hessians and measures how
    well the continuous weak equation holds.
    """
    if pairing not in ("discrete", "continuum"):
        raise UsageError(f"unknown pairing {pairing!r}")
    g = problem.grid
    inner, _, evaluation = problem.masks
    hu = _hess_eval(problem, u)
    a = a_tensor(problem.f, hu)
    flux = np.einsum("xijkl,xij->xkl", a, hu)
    hn = g.h ** g.n
    worst = 0.0
    for vals, exact in bump_family(g, test_count, inner):
        if pairing == "discrete":
            he = hessian_array(vals, g.n, g.h, fill=0.0)[evaluation]
        else:
            he = exact[evaluation]
        num = abs(float(np.sum(flux * he))) * hn
        den = float(np.sqrt(np.sum(he ** 2) * hn))
        worst = max(worst, num / den)
    return worst
