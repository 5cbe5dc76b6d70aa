"""Coefficient tensors a, da/dM, b and the secant tensor b~ built from a
catalog functional F(M) = f(M^T M).

``a[i,j,k,l] = G[i,l] d[j,k] + G[k,j] d[i,l]`` with ``G = df/dw`` at
``w = M^T M``; then ``grad_F(M) = sum_pq a[p,q,i,j] M[p,q]`` and
``b[i,j,k,l] = a[i,j,k,l] + sum_pq (da[p,q,k,l] / dM[i,j]) M[p,q]`` is the
Hessian of F viewed as a bilinear form.
"""
from __future__ import annotations

import numpy as np

from .functionals import MatrixFunctional, gram, grad_F
from .symtensor import contract_left, frobenius, symmat, tensor4


def tensor6(t) -> np.ndarray:
    """Symmetrize a (..., n^6) array in (p,q), (k,l) and (i,j)."""
    t = np.asarray(t, dtype=float)
    t = 0.5 * (t + np.swapaxes(t, -6, -5))
    t = 0.5 * (t + np.swapaxes(t, -4, -3))
    return 0.5 * (t + np.swapaxes(t, -2, -1))


def _g_and_h(f: MatrixFunctional, m: np.ndarray):
    w = gram(m)
    f.check(w)
    return symmat(f.grad(w)), tensor4(f.hess(w))


def _lemma_tensor(g: np.ndarray) -> np.ndarray:
    n = g.shape[-1]
    d = np.eye(n)
    raw = np.einsum("...il,jk->...ijkl", g, d) + np.einsum("...kj,il->...ijkl", g, d)
    return tensor4(raw)


def a_tensor(f: MatrixFunctional, m) -> np.ndarray:
    """Coefficient tensor a(M) of the double-divergence equation."""
    m = np.asarray(m, dtype=float)
    g, _ = _g_and_h(f, m)
    return _lemma_tensor(g)


def structure_residual(f: MatrixFunctional, m) -> np.ndarray | float:
    """Frobenius norm of ``grad_F(M) - sum_pq a[p,q,:,:] M[p,q]``."""
    m = np.asarray(m, dtype=float)
    return frobenius(grad_F(f, m) - contract_left(a_tensor(f, m), m))


def da_tensor(f: MatrixFunctional, m) -> np.ndarray:
    """``da[p,q,k,l,i,j] = d a[p,q,k,l] / d M[i,j]`` (analytic chain rule).

    Contracting the last pair with a symmetric direction gives the
    directional derivative of :func:`a_tensor`.
    """
    m = np.asarray(m, dtype=float)
    _, h = _g_and_h(f, m)
    n = m.shape[-1]
    d = np.eye(n)
    # dG[a,b,i,j] = dG_ab / dM_ij with dw_cd/dM_ij = d_cj M_id + M_ic d_dj
    dg = 2.0 * np.einsum("...abcj,...ic->...abij", h, m)
    dg = 0.5 * (dg + np.swapaxes(dg, -1, -2))
    raw = (np.einsum("...plij,qk->...pqklij", dg, d)
           + np.einsum("...kqij,pl->...pqklij", dg, d))
    return tensor6(raw)


def b_tensor(f: MatrixFunctional, m) -> np.ndarray:
    """Linearization tensor b(M) = a(M) + (da/dM) : M."""
    m = np.asarray(m, dtype=float)
    return tensor4(a_tensor(f, m) + np.einsum("...pqklij,...pq->...ijkl", da_tensor(f, m), m))


def btilde_tensor(f: MatrixFunctional, m0, m1, quad_points: int = 8) -> np.ndarray:
    """Secant coefficient tensor between Hessian values ``m0`` and ``m1``.

    ``a(m1) + [int_0^1 da(t m1 + (1-t) m0) dt] : m0``, with the t-integral
    done by Gauss-Legendre quadrature.  Contracted on the left with
    ``m1 - m0`` it reproduces ``grad_F(m1) - grad_F(m0)`` up to quadrature
    error.
    """
    m0 = np.asarray(m0, dtype=float)
    m1 = np.asarray(m1, dtype=float)
    x, wts = np.polynomial.legendre.leggauss(quad_points)
    ts = 0.5 * (x + 1.0)
    wts = 0.5 * wts
    mean_da = None
    for t, wt in zip(ts, wts):
        da = da_tensor(f, t * m1 + (1.0 - t) * m0)
        mean_da = wt * da if mean_da is None else mean_da + wt * da
    return tensor4(a_tensor(f, m1) + np.einsum("...pqklij,...pq->...ijkl", mean_da, m0))


def fd_da_tensor(f: MatrixFunctional, m, step: float = 1e-5) -> np.ndarray:
    """Central differences of :func:`a_tensor`; test oracle only."""
    m = np.asarray(m, dtype=float)
    n = m.shape[-1]
    out = np.zeros((n,) * 6)
    for i in range(n):
        for j in range(i, n):
            e = np.zeros((n, n))
            e[i, j] += 0.5
            e[j, i] += 0.5
            col = (a_tensor(f, m + step * e) - a_tensor(f, m - step * e)) / (2 * step)
            out[..., i, j] = col
            out[..., j, i] = col
    return out
