"""Small-dimension symmetric matrix and fourth-order tensor algebra.

Matrices are plain ``ndarray`` objects of shape ``(..., n, n)`` and
fourth-order tensors have shape ``(..., n, n, n, n)``.  Leading axes are
batch axes, so every routine here works node-wise on whole fields.
"""
from __future__ import annotations

import itertools

import numpy as np

SQRT2 = np.sqrt(2.0)


class DimensionError(ValueError):
    """Raised when operands have incompatible dimensions."""


def symmat(a) -> np.ndarray:
    """Return the symmetric part of ``a`` as a float array."""
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"expected (..., n, n) array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def tensor4(t) -> np.ndarray:
    """Build a Tensor4 with minor symmetries in (i,j) and (k,l).

    Major symmetry is deliberately not imposed.
    """
    t = np.asarray(t, dtype=float)
    n = t.shape[-1]
    if t.ndim < 4 or t.shape[-4:] != (n, n, n, n):
        raise DimensionError(f"expected (..., n, n, n, n) array, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor has non-finite entries")
    t = 0.5 * (t + np.swapaxes(t, -4, -3))
    return 0.5 * (t + np.swapaxes(t, -2, -1))


def major_sym(t: np.ndarray) -> np.ndarray:
    """Average ``t[ijkl]`` with ``t[klij]``."""
    return 0.5 * (t + np.moveaxis(t, (-4, -3), (-2, -1)))


def identity_pairing(n: int) -> np.ndarray:
    """Tensor whose quadratic form is the squared Frobenius norm."""
    d = np.eye(n)
    return tensor4(np.einsum("ik,jl->ijkl", d, d))


def _check(t: np.ndarray, xi: np.ndarray) -> None:
    if t.shape[-1] != xi.shape[-1]:
        raise DimensionError(
            f"tensor dimension {t.shape[-1]} does not match matrix dimension {xi.shape[-1]}")


def apply_quadratic(t, xi) -> np.ndarray | float:
    """Sum of ``t[i,j,k,l] * xi[i,j] * xi[k,l]``."""
    t = np.asarray(t, dtype=float)
    xi = np.asarray(xi, dtype=float)
    _check(t, xi)
    out = np.einsum("...ijkl,...ij,...kl->...", t, xi, xi)
    return float(out) if np.ndim(out) == 0 else out


def contract_right(t, xi) -> np.ndarray:
    """(k,l)-matrix ``sum_ij t[i,j,k,l] xi[i,j]``, symmetrized."""
    t = np.asarray(t, dtype=float)
    xi = np.asarray(xi, dtype=float)
    _check(t, xi)
    m = np.einsum("...ijkl,...ij->...kl", t, xi)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def contract_left(t, xi) -> np.ndarray:
    """Flux matrix ``sum_pq t[p,q,i,j] xi[p,q]``.

    This is the same contraction as :func:`contract_right` (the first index
    pair is summed); the alias reads better where ``xi`` is a Hessian.
    """
    return contract_right(t, xi)


def pair(t, xi, eta) -> np.ndarray | float:
    """Bilinear pairing ``t[i,j,k,l] xi[i,j] eta[k,l]``."""
    t = np.asarray(t, dtype=float)
    out = np.einsum("...ijkl,...ij,...kl->...", t, xi, eta)
    return float(out) if np.ndim(out) == 0 else out


def sym_index_pairs(n: int) -> list[tuple[int, int]]:
    """Ordered (i <= j) index pairs used by the vectorization."""
    return [(i, i) for i in range(n)] + list(itertools.combinations(range(n), 2))


def sym_basis(n: int) -> np.ndarray:
    """Frobenius-orthonormal basis of symmetric matrices, shape (N, n, n)."""
    pairs = sym_index_pairs(n)
    basis = np.zeros((len(pairs), n, n))
    for a, (i, j) in enumerate(pairs):
        if i == j:
            basis[a, i, i] = 1.0
        else:
            basis[a, i, j] = basis[a, j, i] = 1.0 / SQRT2
    return basis


def vec(xi) -> np.ndarray:
    """Isometric vectorization: off-diagonal entries are weighted by sqrt(2)."""
    xi = np.asarray(xi, dtype=float)
    n = xi.shape[-1]
    return np.einsum("aij,...ij->...a", sym_basis(n), xi)


def unvec(v, n: int) -> np.ndarray:
    """Inverse of :func:`vec`."""
    return np.einsum("aij,...a->...ij", sym_basis(n), np.asarray(v, dtype=float))


def t4_to_quadform(t) -> np.ndarray:
    """Matrix Q with ``vec(xi) @ Q @ vec(xi) == apply_quadratic(major_sym(t), xi)``."""
    t = major_sym(np.asarray(t, dtype=float))
    basis = sym_basis(t.shape[-1])
    return np.einsum("aij,...ijkl,bkl->...ab", basis, t, basis)


def frobenius(xi) -> np.ndarray | float:
    out = np.sqrt(np.sum(np.asarray(xi, dtype=float) ** 2, axis=(-2, -1)))
    return float(out) if np.ndim(out) == 0 else out


def tensor_norm(t) -> np.ndarray | float:
    """Euclidean norm over all four indices."""
    out = np.sqrt(np.sum(np.asarray(t, dtype=float) ** 2, axis=(-4, -3, -2, -1)))
    return float(out) if np.ndim(out) == 0 else out


def det(a: np.ndarray) -> np.ndarray:
    """Determinant by cofactor expansion, n <= 3, batched."""
    n = a.shape[-1]
    if n == 1:
        return a[..., 0, 0].copy()
    if n == 2:
        return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    if n == 3:
        return (a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
                - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
                + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]))
    raise DimensionError(f"cofactor formulas cover n <= 3, got n={n}")


def adjugate(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    out = np.empty_like(a)
    if n == 1:
        out[..., 0, 0] = 1.0
    elif n == 2:
        out[..., 0, 0] = a[..., 1, 1]
        out[..., 1, 1] = a[..., 0, 0]
        out[..., 0, 1] = -a[..., 0, 1]
        out[..., 1, 0] = -a[..., 1, 0]
    elif n == 3:
        for i in range(3):
            for j in range(3):
                r = [k for k in range(3) if k != j]
                c = [k for k in range(3) if k != i]
                minor = (a[..., r[0], c[0]] * a[..., r[1], c[1]]
                         - a[..., r[0], c[1]] * a[..., r[1], c[0]])
                out[..., i, j] = (-1) ** (i + j) * minor
    else:
        raise DimensionError(f"cofactor formulas cover n <= 3, got n={n}")
    return out


def inv(a: np.ndarray) -> np.ndarray:
    """Inverse via the adjugate; raises on (near) singular input."""
    d = det(a)
    if np.any(np.abs(d) < 1e-300):
        raise np.linalg.LinAlgError("singular matrix")
    return adjugate(a) / d[..., None, None]
