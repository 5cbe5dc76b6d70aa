"""Hessian functionals of the form F(M) = f(M^T M).

Each catalog entry supplies ``f`` together with its exact first and second
derivatives in ``w``.  Derivatives are taken with all n*n entries of ``w``
independent and returned symmetric; ``hess[i,j,k,l] = d2f / dw_ij dw_kl``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .symtensor import det, inv, sym_basis, symmat, tensor4


class DomainError(ValueError):
    """Raised when a Hessian value lies outside a functional's domain."""


@dataclass(frozen=True)
class MatrixFunctional:
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    guard: Callable[[np.ndarray], np.ndarray] = lambda w: np.ones(w.shape[:-2], dtype=bool)

    def check(self, w: np.ndarray) -> None:
        w = np.asarray(w, dtype=float)
        finite = np.all(np.isfinite(w), axis=(-2, -1))
        ok = np.asarray(self.guard(np.where(finite[..., None, None], w, 0.0))) & finite
        if not np.all(ok):
            bad = np.argwhere(~ok)
            where = tuple(int(i) for i in bad[0]) if bad.size else ()
            raise DomainError(f"{self.name}: guard fails at index {where}")


def gram(m) -> np.ndarray:
    """w = M^T M for (batched) matrices."""
    m = np.asarray(m, dtype=float)
    return np.einsum("...ai,...aj->...ij", m, m)


# -- catalog -----------------------------------------------------------------

def _trace_value(w):
    return np.trace(w, axis1=-2, axis2=-1)


def _trace_grad(w):
    return np.broadcast_to(np.eye(w.shape[-1]), w.shape).copy()


def _trace_hess(w):
    n = w.shape[-1]
    return np.zeros(w.shape[:-2] + (n, n, n, n))


def _hs_value(w):
    eye = np.eye(w.shape[-1])
    return np.sqrt(det(eye + w))


def _hs_grad(w):
    eye = np.eye(w.shape[-1])
    a = eye + w
    return 0.5 * np.sqrt(det(a))[..., None, None] * inv(a)


def _hs_hess(w):
    # d(1/2 f A^-1) = 1/4 f tr(A^-1 dw) A^-1 - 1/2 f A^-1 dw A^-1
    eye = np.eye(w.shape[-1])
    a = eye + w
    ai = inv(a)
    f = np.sqrt(det(a))[..., None, None, None, None]
    first = 0.25 * np.einsum("...ij,...kl->...ijkl", ai, ai)
    second = 0.25 * (np.einsum("...ik,...lj->...ijkl", ai, ai)
                     + np.einsum("...il,...kj->...ijkl", ai, ai))
    return f * (first - second)


def _hs_guard(w):
    return det(np.eye(w.shape[-1]) + w) > 0


TRACE_QUADRATIC = MatrixFunctional("trace_quadratic", _trace_value, _trace_grad, _trace_hess)
HAMSTAT = MatrixFunctional("hamstat", _hs_value, _hs_grad, _hs_hess, _hs_guard)

CATALOG: dict[str, MatrixFunctional] = {
    TRACE_QUADRATIC.name: TRACE_QUADRATIC,
    HAMSTAT.name: HAMSTAT,
}


def get_functional(name: str) -> MatrixFunctional:
    try:
        return CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown functional {name!r}; known: {sorted(CATALOG)}") from None


def user_functional(name, value, grad, hess, guard=None) -> MatrixFunctional:
    """Wrap user callbacks as a catalog entry (not registered globally)."""
    if guard is None:
        return MatrixFunctional(name, value, grad, hess)
    return MatrixFunctional(name, value, grad, hess, guard)


# -- F(M) and its derivatives ------------------------------------------------

def _w(f: MatrixFunctional, m) -> tuple[np.ndarray, np.ndarray]:
    m = np.asarray(m, dtype=float)
    w = gram(m)
    f.check(w)
    return m, w


def eval_F(f: MatrixFunctional, m) -> np.ndarray | float:
    """F(M) = f(M^T M)."""
    _, w = _w(f, m)
    out = np.asarray(f.value(w), dtype=float)
    return float(out) if out.ndim == 0 else out


def grad_F(f: MatrixFunctional, m) -> np.ndarray:
    """dF/dM_ij by the chain rule through w = M^T M.

    With G = df/dw this is G M + M G (symmetric when M is).
    """
    m, w = _w(f, m)
    g = symmat(f.grad(w))
    return g @ m + m @ g


def d2F(f: MatrixFunctional, m, xi, eta=None) -> np.ndarray | float:
    """Second derivative d^2F(M)[xi, eta] computed analytically."""
    m, w = _w(f, m)
    xi = np.asarray(xi, dtype=float)
    eta = xi if eta is None else np.asarray(eta, dtype=float)
    g = symmat(f.grad(w))
    h = f.hess(w)
    dw_xi = xi.swapaxes(-1, -2) @ m + m.swapaxes(-1, -2) @ xi
    dw_eta = eta.swapaxes(-1, -2) @ m + m.swapaxes(-1, -2) @ eta
    d2w = xi.swapaxes(-1, -2) @ eta + eta.swapaxes(-1, -2) @ xi
    out = (np.einsum("...ijkl,...ij,...kl->...", h, dw_xi, dw_eta)
           + np.einsum("...ij,...ij->...", g, d2w))
    return float(out) if np.ndim(out) == 0 else out


def _sym_directions(n: int) -> list[tuple[int, int, np.ndarray]]:
    """Directions E with <G, E>_F = G_ij for symmetric G."""
    dirs = []
    for i in range(n):
        for j in range(i, n):
            e = np.zeros((n, n))
            e[i, j] += 0.5
            e[j, i] += 0.5
            dirs.append((i, j, e))
    return dirs


def fd_grad_F(f: MatrixFunctional, m, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of :func:`eval_F` over symmetric directions."""
    m = np.asarray(m, dtype=float)
    n = m.shape[-1]
    out = np.zeros_like(m)
    for i, j, e in _sym_directions(n):
        d = (eval_F(f, m + step * e) - eval_F(f, m - step * e)) / (2 * step)
        out[i, j] = out[j, i] = d
    return out


def check_derivatives(f: MatrixFunctional, samples, step: float = 1e-4) -> dict:
    """Compare analytic derivatives of ``f`` against central differences.

    ``grad`` is checked against differences of ``value`` and ``hess``
    against differences of ``grad``, both in the ``w`` variable, at each
    sample Hessian ``M`` (so ``w = M^T M``).  Every sample must satisfy the
    guard on the whole stencil ``w +- 2*step*E``.

    Returns a dict with the worst relative errors.
    """
    worst_grad = 0.0
    worst_hess = 0.0
    for m in samples:
        m = np.asarray(m, dtype=float)
        w = gram(m)
        n = w.shape[-1]
        basis = sym_basis(n)
        for e in basis:
            for s in (-2 * step, 2 * step):
                if not np.all(f.guard(w + s * e)):
                    raise DomainError(f"{f.name}: guard margin violated near sample {m.tolist()}")
        g = symmat(f.grad(w))
        h = np.asarray(f.hess(w), dtype=float)
        fd_g = np.zeros((n, n))
        fd_h = np.zeros((n, n, n, n))
        for i, j, e in _sym_directions(n):
            fd_g[i, j] = fd_g[j, i] = (f.value(w + step * e) - f.value(w - step * e)) / (2 * step)
            col = (symmat(f.grad(w + step * e)) - symmat(f.grad(w - step * e))) / (2 * step)
            fd_h[:, :, i, j] = fd_h[:, :, j, i] = col
        h_sym = tensor4(h)
        eg = np.max(np.abs(g - fd_g)) / (1.0 + np.max(np.abs(g)))
        eh = np.max(np.abs(h_sym - fd_h)) / (1.0 + np.max(np.abs(h_sym)))
        worst_grad = max(worst_grad, float(eg))
        worst_hess = max(worst_hess, float(eh))
    return {"grad": worst_grad, "hess": worst_hess, "max": max(worst_grad, worst_hess)}
