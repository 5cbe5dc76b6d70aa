import numpy as np
import pytest

from conftest import random_sym
from ddreg.coefficients import (a_tensor, b_tensor, btilde_tensor, da_tensor, fd_da_tensor,
                                structure_residual)
from ddreg.functionals import CATALOG, HAMSTAT, TRACE_QUADRATIC, eval_F, grad_F
from ddreg.symtensor import apply_quadratic, contract_right, frobenius, tensor_norm


def test_trace_quadratic_a_entries():
    a = a_tensor(TRACE_QUADRATIC, np.zeros((2, 2)))
    assert a[0, 0, 0, 0] == 2.0
    assert a[0, 0, 1, 1] == 0.0


def test_hamstat_a_at_zero_is_frobenius(rng):
    a = a_tensor(HAMSTAT, np.zeros((3, 3)))
    for _ in range(10):
        xi = random_sym(rng, 3)
        assert apply_quadratic(a, xi) == pytest.approx(np.sum(xi ** 2), rel=1e-14)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_structure_identity(rng, name):
    f = CATALOG[name]
    ms = random_sym(rng, 2, 0.5, size=100)
    assert np.max(structure_residual(f, ms)) <= 1e-10
    assert structure_residual(f, np.zeros((2, 2))) == 0.0


def test_structure_is_grad(rng):
    m = random_sym(rng, 3, 0.5)
    np.testing.assert_allclose(contract_right(a_tensor(HAMSTAT, m), m), grad_F(HAMSTAT, m), atol=1e-12)


def test_da_vanishes_for_trace_quadratic(rng):
    assert np.all(da_tensor(TRACE_QUADRATIC, random_sym(rng, 2)) == 0)


def test_da_matches_fd(rng):
    for n in (2, 3):
        for _ in range(5):
            m = random_sym(rng, n, 0.5)
            da = da_tensor(HAMSTAT, m)
            fd = fd_da_tensor(HAMSTAT, m, 1e-5)
            assert np.linalg.norm(da - fd) <= 1e-6 * max(np.linalg.norm(fd), 1.0)


def test_da_minor_symmetries(rng):
    da = da_tensor(HAMSTAT, random_sym(rng, 2, 0.5))
    for ax in ((0, 1), (2, 3), (4, 5)):
        np.testing.assert_array_equal(da, np.swapaxes(da, *ax))


def test_b_equals_a_where_expected(rng):
    m = random_sym(rng, 2)
    np.testing.assert_array_equal(b_tensor(TRACE_QUADRATIC, m), a_tensor(TRACE_QUADRATIC, m))
    z = np.zeros((2, 2))
    np.testing.assert_allclose(b_tensor(HAMSTAT, z), a_tensor(HAMSTAT, z), atol=0)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_b_is_second_derivative_of_F(rng, name):
    f = CATALOG[name]
    s = 1e-4
    for _ in range(50):
        m, xi = random_sym(rng, 2, 0.4), random_sym(rng, 2)
        fd = (eval_F(f, m + s * xi) - 2 * eval_F(f, m) + eval_F(f, m - s * xi)) / s ** 2
        assert apply_quadratic(b_tensor(f, m), xi) == pytest.approx(fd, rel=1e-6)


def test_btilde_degenerate_segment(rng):
    m = random_sym(rng, 2, 0.4)
    np.testing.assert_allclose(btilde_tensor(HAMSTAT, m, m), b_tensor(HAMSTAT, m), atol=1e-12)
    m1 = random_sym(rng, 2)
    np.testing.assert_array_equal(btilde_tensor(TRACE_QUADRATIC, m, m1), a_tensor(TRACE_QUADRATIC, m))


def test_btilde_secant_identity(rng):
    m0, m1 = random_sym(rng, 2, 0.4), random_sym(rng, 2, 0.4)
    lhs = contract_right(btilde_tensor(HAMSTAT, m0, m1), m1 - m0)
    np.testing.assert_allclose(lhs, grad_F(HAMSTAT, m1) - grad_F(HAMSTAT, m0), atol=1e-12)


def test_btilde_converges_linearly(rng):
    m0 = random_sym(rng, 2, 0.4)
    e = random_sym(rng, 2)
    e /= frobenius(e)
    hs = np.array([1e-2, 5e-3, 2.5e-3])
    errs = np.array([tensor_norm(btilde_tensor(HAMSTAT, m0, m0 + h * e) - b_tensor(HAMSTAT, m0)) for h in hs])
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 0.9
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.05)


def test_batched_matches_single(rng):
    ms = random_sym(rng, 3, 0.4, size=4)
    batch = b_tensor(HAMSTAT, ms)
    for k in range(4):
        np.testing.assert_allclose(batch[k], b_tensor(HAMSTAT, ms[k]), atol=1e-14)
