import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from conftest import hamstat_minimizer, seeded_smooth, smooth_data
from ddreg.coefficients import a_tensor
from ddreg.fields import Grid, ScalarField, UsageError, hessian_array
from ddreg.functionals import HAMSTAT, DomainError, get_functional, grad_F
from ddreg.stencils import assemble
from ddreg.symtensor import identity_pairing
from ddreg.var_solver import (LineSearchError, VarProblem, bump_family, energy,
                              flux_divergence, grad_energy, gradient_check, minimize,
                              square_masks, weak_residual)

TRACE = get_functional("trace_quadratic")
A = np.array([[0.8, -0.3], [-0.3, 0.5]])


def quad_field(grid, a=A, lin=(0.2, -0.1), const=0.4):
    x = grid.points()
    vals = 0.5 * np.einsum("...i,ij,...j->...", x, a, x) + x @ np.asarray(lin) + const
    return ScalarField(grid, vals)


def interior_area(grid):
    _, _, evaluation = square_masks(grid)
    return evaluation.sum() * grid.h ** grid.n


def test_energy_hamstat_zero():
    grid = Grid(2, 33)
    zero = ScalarField(grid, np.zeros(grid.shape))
    problem = VarProblem(HAMSTAT, grid, zero)
    assert energy(problem, zero) == pytest.approx(interior_area(grid), rel=1e-14)


def test_energy_trace_quadratic_constant_integrand():
    grid = Grid(2, 33)
    u = quad_field(grid)
    problem = VarProblem(TRACE, grid, u)
    assert abs(energy(problem, u) - interior_area(grid) * np.sum(A ** 2)) <= 1e-10


@pytest.mark.parametrize("name", ["trace_quadratic", "hamstat"])
def test_energy_ignores_constants(name):
    grid = Grid(2, 33)
    u = ScalarField.from_function(grid, smooth_data)
    problem = VarProblem(get_functional(name), grid, u)
    shifted = ScalarField(grid, u.values + 3.25)
    assert energy(problem, shifted) == pytest.approx(energy(problem, u), rel=1e-12)


def test_grad_zero_for_quadratic():
    grid = Grid(2, 33)
    u = quad_field(grid)
    problem = VarProblem(TRACE, grid, u)
    assert np.max(np.abs(grad_energy(problem, u).values)) <= 1e-10


def test_grad_zero_hamstat_at_zero():
    grid = Grid(2, 33)
    zero = ScalarField(grid, np.zeros(grid.shape))
    assert np.max(np.abs(grad_energy(VarProblem(HAMSTAT, grid, zero), zero).values)) == 0.0


@pytest.mark.parametrize("name", ["trace_quadratic", "hamstat"])
def test_grad_matches_finite_differences(name, rng):
    grid = Grid(2, 33)
    u = ScalarField.from_function(grid, smooth_data)
    problem = VarProblem(get_functional(name), grid, u)
    grad = grad_energy(problem, u).values
    inner, band, _ = square_masks(grid)
    assert np.all(grad[band] == 0.0)
    nodes = np.argwhere(inner)
    scale = np.max(np.abs(grad))
    step = 1e-4 * grid.h ** 2
    for k in rng.choice(len(nodes), 20, replace=False):
        node = tuple(nodes[k])
        plus, minus = u.values.copy(), u.values.copy()
        plus[node] += step
        minus[node] -= step
        fd = (energy(problem, ScalarField(grid, plus))
              - energy(problem, ScalarField(grid, minus))) / (2 * step)
        assert abs(fd - grad[node]) <= 1e-6 * scale + 1e-12


def test_gradient_check_detects_wrong_gradient(monkeypatch):
    import ddreg.var_solver as vs
    grid = Grid(2, 33)
    problem = VarProblem(HAMSTAT, grid, ScalarField.from_function(grid, smooth_data))
    assert gradient_check(problem, problem.init) <= 1e-6
    exact = vs.grad_energy
    monkeypatch.setattr(vs, "grad_energy",
                        lambda p, u: ScalarField(u.grid, exact(p, u).values * (1 + 1e-4)))
    assert vs.gradient_check(problem, problem.init) > 1e-6


def test_flux_divergence_is_adjoint_of_hessian(rng):
    grid = Grid(2, 17)
    inner, _, evaluation = square_masks(grid)
    phi = np.where(inner, rng.standard_normal(grid.shape), 0.0)
    sigma = rng.standard_normal(grid.shape + (2, 2))
    sigma = 0.5 * (sigma + np.swapaxes(sigma, -1, -2))
    sigma[~evaluation] = 0.0
    lhs = np.sum(hessian_array(phi, 2, grid.h, fill=0.0) * sigma)
    rhs = np.sum(phi * flux_divergence(sigma, grid))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_trace_quadratic_matches_linear_solve():
    grid = Grid(2, 33)
    data = seeded_smooth(grid)
    problem = VarProblem(TRACE, grid, data)
    u, trace = minimize(problem, tol=1e-12)
    assert trace.converged
    # independent oracle: the discrete biharmonic system on the unknowns
    inner, band, evaluation = square_masks(grid)
    c = 2.0 * identity_pairing(2)
    a_uu = assemble(c, grid, evaluation, inner, inner)
    a_ub = assemble(c, grid, evaluation, inner, band)
    x = spla.spsolve(sp.csc_matrix(a_uu), -(a_ub @ data.values[band]))
    assert np.max(np.abs(u.values[inner] - x)) <= 1e-6


def test_trace_quadratic_quadratic_data():
    grid = Grid(2, 33)
    q = quad_field(grid)
    start = np.where(square_masks(grid)[0], 0.0, q.values)
    u, trace = minimize(VarProblem(TRACE, grid, q, init=ScalarField(grid, start)), tol=1e-11)
    assert trace.converged
    assert np.max(np.abs(u.values - q.values)) <= 1e-6


def test_hamstat_zero_data_is_critical():
    grid = Grid(2, 33)
    zero = ScalarField(grid, np.zeros(grid.shape))
    u, trace = minimize(VarProblem(HAMSTAT, grid, zero))
    assert trace.iterations == 0 and trace.converged
    assert np.max(np.abs(u.values)) == 0.0
    assert trace.weak_residual == 0.0


@pytest.mark.parametrize("method", ["gd", "lbfgs"])
def test_hamstat_saddle_data_converges(method):
    grid = Grid(2, 65)
    data = ScalarField.from_function(grid, lambda x1, x2: 0.1 * (x1 ** 2 - x2 ** 2))
    start = np.where(square_masks(grid)[0], 0.0, data.values)
    problem = VarProblem(HAMSTAT, grid, data, init=ScalarField(grid, start))
    u, trace = minimize(problem, tol=1e-10, method=method)
    assert trace.converged
    assert trace.grad_norm[-1] <= 1e-10
    assert np.all(np.asarray(trace.decrease) > 0)
    assert np.all(np.diff(trace.energy) <= 0)
    # the quadratic itself is critical, so the minimizer recovers it
    assert np.max(np.abs(u.values - data.values)) <= 1e-6


def test_hamstat_nonpolynomial_energy_decreases():
    _, u, trace = hamstat_minimizer(65)
    assert trace.converged
    # totals stop resolving the last decreases; the node-wise decreases do not
    assert np.all(np.asarray(trace.decrease) > 0)
    assert np.all(np.diff(trace.energy) <= 0)
    assert trace.gradient_check <= 1e-6
    assert not trace.warnings


def test_unpreconditioned_descent_makes_progress():
    grid = Grid(2, 17)
    problem = VarProblem(HAMSTAT, grid, ScalarField.from_function(grid, smooth_data))
    _, trace = minimize(problem, max_iter=30, precondition=False)
    assert trace.energy[-1] < trace.energy[0]
    assert np.all(np.diff(trace.energy) <= 0)


def test_weak_residual_trace_quadratic():
    grid = Grid(2, 33)
    problem = VarProblem(TRACE, grid, seeded_smooth(grid))
    u, _ = minimize(problem, tol=1e-11)
    assert weak_residual(problem, u) <= 1e-8


def test_weak_residual_hamstat_zero():
    grid = Grid(2, 33)
    zero = ScalarField(grid, np.zeros(grid.shape))
    assert weak_residual(VarProblem(HAMSTAT, grid, zero), zero) == 0.0


def test_weak_residual_at_minimizer_and_refinement():
    coarse = hamstat_minimizer(65)
    fine = hamstat_minimizer(129)
    for problem, u, trace in (coarse, fine):
        assert weak_residual(problem, u) <= 10 * 1e-10
    r1 = weak_residual(coarse[0], coarse[1], pairing="continuum")
    r2 = weak_residual(fine[0], fine[1], pairing="continuum")
    assert r1 / r2 >= 2.0


def test_weak_residual_bounded_by_gradient():
    # pairing a bump with the flux is the gradient tested on that bump, so the
    # residual is at most the gradient sup-norm times the basis normalization
    problem, u, _ = hamstat_minimizer(65)
    grid = problem.grid
    inner, _, evaluation = square_masks(grid)
    g = grad_energy(problem, u).values
    flux = grad_F(HAMSTAT, hessian_array(u.values, 2, grid.h)[evaluation])
    hn = grid.h ** grid.n
    ratios = []
    for vals, _ in bump_family(grid, 20, inner):
        he = hessian_array(vals, 2, grid.h, fill=0.0)[evaluation]
        roundoff = 1e-13 * np.sum(np.abs(flux * he)) * hn
        assert abs(np.sum(flux * he) * hn - np.sum(g * vals)) <= roundoff
        ratios.append(np.sum(np.abs(vals)) / np.sqrt(np.sum(he ** 2) * hn))
    assert weak_residual(problem, u) <= np.max(np.abs(g)) * max(ratios) * (1 + 1e-9)


def test_structure_identity_on_fields():
    grid = Grid(2, 33)
    u = ScalarField.from_function(grid, smooth_data)
    _, _, evaluation = square_masks(grid)
    hu = hessian_array(u.values, 2, grid.h)[evaluation]
    via_grad = grad_F(HAMSTAT, hu)
    via_a = np.einsum("xijkl,xij->xkl", a_tensor(HAMSTAT, hu), hu)
    for vals, _ in bump_family(grid, 10):
        he = hessian_array(vals, 2, grid.h, fill=0.0)[evaluation]
        assert abs(np.sum((via_grad - via_a) * he)) * grid.h ** 2 <= 1e-9


def test_bump_family_deterministic_and_supported():
    grid = Grid(2, 33)
    inner, _, _ = square_masks(grid)
    first = bump_family(grid, 12)
    second = bump_family(grid, 12)
    assert len(first) == 12
    for (a, _), (b, _) in zip(first, second):
        assert np.array_equal(a, b)
        assert np.all(a[~inner] == 0.0)


def test_line_search_failure_carries_trace():
    grid = Grid(2, 17)
    problem = VarProblem(HAMSTAT, grid, ScalarField.from_function(grid, smooth_data))
    with pytest.raises(LineSearchError) as info:
        minimize(problem, min_step=10.0)
    assert info.value.trace is not None and len(info.value.trace.energy) == 1
    assert info.value.u is not None


def test_certified_radius_warning():
    grid = Grid(2, 33)
    problem = VarProblem(HAMSTAT, grid, ScalarField.from_function(grid, smooth_data),
                         certified_radius=1e-3)
    _, trace = minimize(problem)
    assert trace.warnings and trace.warnings[0]["radius"] > 1e-3


def test_undefined_init_names_node():
    grid = Grid(2, 33)
    data = ScalarField.from_function(grid, smooth_data)
    bad = data.values.copy()
    bad[14, 14] = np.nan
    with pytest.raises(DomainError, match=r"node \(1[345], 1[345]\)"):
        VarProblem(HAMSTAT, grid, data, init=ScalarField(grid, bad))


def test_init_must_match_band():
    grid = Grid(2, 17)
    data = ScalarField.from_function(grid, smooth_data)
    with pytest.raises(UsageError, match="band"):
        VarProblem(HAMSTAT, grid, data, init=ScalarField(grid, data.values + 1.0))


def test_unknown_method():
    grid = Grid(2, 17)
    problem = VarProblem(HAMSTAT, grid, ScalarField(grid, np.zeros(grid.shape)))
    with pytest.raises(UsageError):
        minimize(problem, method="newton")
    with pytest.raises(UsageError):
        weak_residual(problem, problem.init, pairing="strong")
