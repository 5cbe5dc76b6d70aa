"""Sparse forms of the Hessian stencils and assembly of the discrete
double-divergence operator ``sum D_kl (c^{ij,kl} D_ij w)``."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp

from .fields import Grid
from .symtensor import sym_index_pairs


@lru_cache(maxsize=8)
def hessian_operators(grid: Grid) -> dict:
    """Sparse D_ij (zero extension) on the raveled grid, keyed by (i, j), i <= j."""
    m, h, n = grid.m, grid.h, grid.n
    second = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(m, m)) / h ** 2
    first = sp.diags([-1.0, 1.0], [-1, 1], shape=(m, m)) / (2 * h)
    eye = sp.identity(m)
    ops = {}
    for i, j in sym_index_pairs(n):
        factors = [eye] * n
        if i == j:
            factors[i] = second
        else:
            factors[i] = first
            factors[j] = first
        op = factors[0]
        for fac in factors[1:]:
            op = sp.kron(op, fac)
        ops[(i, j)] = sp.csr_matrix(op)
    return ops


def weighted_coefficients(c: np.ndarray) -> np.ndarray:
    """Coefficient matrix over symmetric index pairs, off-diagonal pairs doubled."""
    n = c.shape[-1]
    pairs = sym_index_pairs(n)
    mult = np.array([1.0 if i == j else 2.0 for i, j in pairs])
    cw = np.array([[c[i, j, k, l] for (k, l) in pairs] for (i, j) in pairs])
    return cw * mult[:, None] * mult[None, :]


def dilate(mask: np.ndarray, width: int) -> np.ndarray:
    """Grow a node mask by ``width`` nodes in the max-norm."""
    return ndi.binary_dilation(mask, structure=np.ones((3,) * mask.ndim), iterations=width)


def assemble(c: np.ndarray, grid: Grid, eval_mask: np.ndarray, rows: np.ndarray,
             cols: np.ndarray) -> sp.csr_matrix:
    """Matrix of the bilinear form ``sum_{x in E} c(D w(x), D eta(x))``.

    Rows index the test nodes, columns the solution nodes.  The form is
    evaluated only at nodes where ``eval_mask`` is set.
    """
    ops = hessian_operators(grid)
    pairs = sym_index_pairs(grid.n)
    e_idx = np.flatnonzero(eval_mask.ravel())
    r_idx = np.flatnonzero(rows.ravel())
    c_idx = np.flatnonzero(cols.ravel())
    base = {p: ops[p][e_idx] for p in pairs}
    left = {p: base[p][:, r_idx].T.tocsr() for p in pairs}
    right = {p: base[p][:, c_idx].tocsr() for p in pairs}
    cw = weighted_coefficients(c)
    out = None
    for a, pa in enumerate(pairs):
        for b, pb in enumerate(pairs):
            if cw[a, b] == 0.0:
                continue
            term = cw[a, b] * (left[pb] @ right[pa])
            out = term if out is None else out + term
    if out is None:
        return sp.csr_matrix((len(r_idx), len(c_idx)))
    return out.tocsr()
