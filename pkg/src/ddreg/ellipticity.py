"""Sampled certification of the ellipticity hypotheses over a region of
Hessian space.

An equation is *regular* on a region when the coefficient tensor ``a`` is
Legendre-elliptic there and either ``b`` or ``-b`` is as well.  Everything
here is sampled evidence, not a proof of positivity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import a_tensor, b_tensor
from .functionals import DomainError, MatrixFunctional
from .symtensor import major_sym, symmat, t4_to_quadform, unvec

MODES = ("frobenius_ball", "operator_ball", "explicit_list")


@dataclass(frozen=True)
class HessianSampler:
    """Deterministic generator of Hessian values in a declared region."""

    mode: str
    n: int = 2
    radius: float = 1.0
    count: int = 100
    seed: int = 0
    matrices: tuple = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.mode != "explicit_list" and (self.radius < 0 or self.count < 1):
            raise ValueError("sampler needs radius >= 0 and count >= 1")

    def samples(self, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.mode == "explicit_list":
            return np.array([symmat(m) for m in self.matrices], dtype=float).reshape(-1, self.n, self.n)
        rng = np.random.default_rng(self.seed) if rng is None else rng
        dof = self.n * (self.n + 1) // 2
        if self.mode == "frobenius_ball":
            return unvec(_uniform_ball(rng, self.count, dof, self.radius), self.n)
        # operator ball: rejection from the enclosing Frobenius ball
        out = []
        outer = self.radius * np.sqrt(self.n)
        while len(out) < self.count:
            cand = unvec(_uniform_ball(rng, 4 * self.count, dof, outer), self.n)
            ok = np.abs(np.linalg.eigvalsh(cand)).max(axis=-1) <= self.radius
            out.extend(cand[ok])
        return np.array(out[: self.count])

    def describe(self) -> dict:
        d = {"mode": self.mode, "n": self.n}
        if self.mode == "explicit_list":
            d["count"] = len(self.matrices)
        else:
            d.update(radius=self.radius, count=self.count, seed=self.seed,
                     norm="operator" if self.mode == "operator_ball" else "frobenius")
        return d


def _uniform_ball(rng, count, dim, radius):
    g = rng.standard_normal((count, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / dim)
    return g * r[:, None]


def legendre_constant(t) -> np.ndarray | float:
    """Smallest value of the quadratic form over unit-Frobenius symmetric xi."""
    out = np.linalg.eigvalsh(t4_to_quadform(t))[..., 0]
    return float(out) if np.ndim(out) == 0 else out


def _rank_one_batch(ts: np.ndarray, restarts: int, iters: int, rng) -> np.ndarray:
    """Projected gradient descent of the rank-one Rayleigh quotient, batched."""
    ts = major_sym(ts)
    nb, n = ts.shape[0], ts.shape[-1]
    starts = [(np.eye(n)[i], np.eye(n)[j]) for i in range(n) for j in range(i, n)]
    for _ in range(restarts):
        starts.append((rng.standard_normal(n), rng.standard_normal(n)))
    p = np.array([[s[0] for s in starts]] * nb)
    q = np.array([[s[1] for s in starts]] * nb)
    tt = np.repeat(ts[:, None], len(starts), axis=1)

    def quotient(p, q):
        s = 0.5 * (p[..., :, None] * q[..., None, :] + q[..., :, None] * p[..., None, :])
        y = np.einsum("...ijkl,...kl->...ij", tt, s)
        num = np.einsum("...ij,...ij->...", y, s)
        den = np.einsum("...ij,...ij->...", s, s)
        return num / den, y, den

    p /= np.linalg.norm(p, axis=-1, keepdims=True)
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    r, y, den = quotient(p, q)
    step = np.full(r.shape, 0.5)
    for _ in range(iters):
        pq = np.einsum("...i,...i->...", p, q)
        gp = (2 * np.einsum("...ij,...j->...i", y, q) - r[..., None] * (p + pq[..., None] * q)) / den[..., None]
        gq = (2 * np.einsum("...ij,...j->...i", y, p) - r[..., None] * (q + pq[..., None] * p)) / den[..., None]
        gp -= np.einsum("...i,...i->...", gp, p)[..., None] * p
        gq -= np.einsum("...i,...i->...", gq, q)[..., None] * q
        np_ = p - step[..., None] * gp
        nq_ = q - step[..., None] * gq
        np_ /= np.linalg.norm(np_, axis=-1, keepdims=True)
        nq_ /= np.linalg.norm(nq_, axis=-1, keepdims=True)
        nr, ny, nden = quotient(np_, nq_)
        better = nr <= r
        p = np.where(better[..., None], np_, p)
        q = np.where(better[..., None], nq_, q)
        r = np.where(better, nr, r)
        y = np.where(better[..., None, None], ny, y)
        den = np.where(better, nden, den)
        step = np.where(better, step * 1.5, step * 0.5)
    return r.min(axis=1)


def rank_one_constant(t, restarts: int = 8, iters: int = 200, seed: int = 0) -> np.ndarray | float:
    """Smallest rank-one Rayleigh quotient found by multi-start descent.

    The result is an upper bound on the true rank-one constant, and never
    below :func:`legendre_constant`.
    """
    t = np.asarray(t, dtype=float)
    single = t.ndim == 4
    batch = t.reshape((-1,) + t.shape[-4:])
    out = _rank_one_batch(batch, restarts, iters, np.random.default_rng(seed))
    return float(out[0]) if single else out.reshape(t.shape[:-4])


@dataclass
class EllipticityReport:
    functional: str
    sampler: dict
    threshold: float
    sample_count: int
    lambda_legendre: float
    lambda_rank_one: float
    lambda_b_plus: float
    lambda_b_minus: float
    worst_sample: list
    verdict: str
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "functional": self.functional,
            "sampler": self.sampler,
            "threshold": self.threshold,
            "sample_count": self.sample_count,
            "lambda_legendre": self.lambda_legendre,
            "lambda_rank_one": self.lambda_rank_one,
            "lambda_rank_one_is_upper_bound": True,
            "lambda_b_plus": self.lambda_b_plus,
            "lambda_b_minus": self.lambda_b_minus,
            "worst_sample": self.worst_sample,
            "verdict": self.verdict,
            "failures": self.failures,
        }


def certify_region(f: MatrixFunctional, sampler: HessianSampler, threshold: float = 0.0,
                   restarts: int = 4) -> EllipticityReport:
    """Evaluate the regularity hypotheses at every sample and aggregate."""
    samples = sampler.samples()
    leg, bp, bm, kept, failures = [], [], [], [], []
    for m in samples:
        try:
            a = a_tensor(f, m)
            b = b_tensor(f, m)
        except (DomainError, np.linalg.LinAlgError) as exc:
            failures.append({"sample": m.tolist(), "error": str(exc)})
            continue
        kept.append((m, a))
        leg.append(legendre_constant(a))
        bp.append(legendre_constant(b))
        bm.append(legendre_constant(-b))
    if failures or not kept:
        worst = failures[0]["sample"] if failures else []
        return EllipticityReport(f.name, sampler.describe(), threshold, len(samples),
                                 float("nan"), float("nan"), float("nan"), float("nan"),
                                 worst, "fails", failures)
    leg, bp, bm = np.array(leg), np.array(bp), np.array(bm)
    plus_score = np.minimum(leg, bp)
    minus_score = np.minimum(leg, bm)
    if plus_score.min() > threshold:
        verdict, score = "regular_plus", plus_score
    elif minus_score.min() > threshold:
        verdict, score = "regular_minus", minus_score
    else:
        verdict = "fails"
        score = plus_score if plus_score.min() >= minus_score.min() else minus_score
    worst_idx = int(np.argmin(score))
    a_all = np.array([a for _, a in kept])
    r1 = rank_one_constant(a_all, restarts=restarts, seed=sampler.seed)
    return EllipticityReport(
        functional=f.name,
        sampler=sampler.describe(),
        threshold=threshold,
        sample_count=len(samples),
        lambda_legendre=float(leg.min()),
        lambda_rank_one=float(np.min(r1)),
        lambda_b_plus=float(bp.min()),
        lambda_b_minus=float(bm.min()),
        worst_sample=kept[worst_idx][0].tolist(),
        verdict=verdict,
    )


@dataclass(frozen=True)
class Frontier:
    t_star: float | None
    message: str


def convexity_frontier(f: MatrixFunctional, direction, tol: float = 1e-6,
                       t_max: float = 10.0, scan_step: float = 0.05) -> Frontier:
    """Largest t with b(t * direction/|direction|) Legendre-nonnegative.

    A coarse scan brackets the first sign change, then bisection refines it
    to ``tol``.
    """
    d = symmat(direction)
    norm = np.linalg.norm(d)
    if norm == 0:
        raise ValueError("direction must be nonzero")
    d = d / norm

    def ok(t):
        try:
            return legendre_constant(b_tensor(f, t * d)) >= 0.0
        except (DomainError, np.linalg.LinAlgError):
            return False

    if not ok(0.0):
        raise DomainError(f"{f.name}: b is not nonnegative at the origin")
    grid = np.arange(scan_step, t_max + 0.5 * scan_step, scan_step)
    lo = 0.0
    for t in grid:
        if not ok(t):
            hi = t
            break
        lo = t
    else:
        return Frontier(None, f"no frontier found <= {t_max:g}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return Frontier(float(lo), "bisection")
