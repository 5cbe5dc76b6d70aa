"""Regularity measurements on solved fields.

* :func:`bootstrap_report` differentiates a solution by difference quotients
  and measures Campanato decay and Hoelder seminorms of the results, with a
  refinement table across coarsened grids.
* :func:`lemma_check` tests the Campanato iteration lemma on sampled
  functions, using the constant from its constructive proof.
* :func:`higher_order_probe` evaluates the weak residual of the equation
  satisfied by iterated quotients ``v = D^a u``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage as ndi

from .coefficients import b_tensor
from .fields import (BallRegion, DecayProfile, Grid, ScalarField, UsageError, campanato, decay_fit,
                     diff_quotient, diff_quotient_array, dyadic_radii, hessian, hessian_array,
                     holder_seminorm, l2_norm_sq, third_derivatives)
from .functionals import MatrixFunctional
from .var_solver import bump_family


@dataclass
class DiagnosticsConfig:
    radii: list = field(default_factory=dyadic_radii)
    tol_energy: float = 0.3
    tol_oscillation: float = 0.5
    holder_radius: float = 0.25
    holder_tolerance: float = 0.2  # relative change allowed between refinement levels
    pair_budget: int = 500_000
    zero_tol: float = 1e-6
    refine_levels: int = 1
    test_count: int = 20
    multi_index: tuple = (0, 1)
    probe_levels: int = 2

    def __post_init__(self):
        self.radii = sorted(float(r) for r in self.radii)
        if self.refine_levels < 0 or self.probe_levels < 1:
            raise UsageError("refinement level counts must be nonnegative (probe: >= 1)")


# ---------------------------------------------------------------- bootstrap

@dataclass
class AxisProfiles:
    axis: int
    energy: DecayProfile
    oscillation: DecayProfile
    holder_d2g: float
    vacuous: bool

    def to_dict(self) -> dict:
        return {"axis": self.axis, "energy": self.energy.to_dict(),
                "oscillation": self.oscillation.to_dict(), "holder_d2g": self.holder_d2g,
                "vacuous": self.vacuous}


@dataclass
class BootstrapReport:
    n: int
    h: float
    alpha: float
    axes: list
    predicted_energy: float
    predicted_oscillation: float
    holder_d3u: float
    refinement: list
    flags: dict
    settings: dict

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    @property
    def oscillation_exponent(self) -> float | None:
        """Smallest fitted oscillation exponent over the axes (None if none was fitted)."""
        vals = [a.oscillation.fitted_exponent for a in self.axes
                if a.oscillation.fitted_exponent is not None]
        return min(vals) if vals else None

    @property
    def energy_exponent(self) -> float | None:
        vals = [a.energy.fitted_exponent for a in self.axes if a.energy.fitted_exponent is not None]
        return min(vals) if vals else None

    def to_dict(self) -> dict:
        return {"n": self.n, "h": self.h, "alpha": self.alpha,
                "axes": [a.to_dict() for a in self.axes],
                "predicted_energy_exponent": self.predicted_energy,
                "predicted_oscillation_exponent": self.predicted_oscillation,
                "holder_d3u": self.holder_d3u, "refinement": self.refinement,
                "flags": self.flags, "passed": self.passed, "settings": self.settings}


def _fit_or_none(profile: DecayProfile) -> None:
    try:
        decay_fit(profile)
    except UsageError:
        profile.fitted_exponent = None


def _axis_profiles(u: ScalarField, p: int, alpha: float, cfg: DiagnosticsConfig) -> AxisProfiles:
    grid = u.grid
    center = (0.0,) * grid.n
    d2g = hessian(diff_quotient(u, p))
    energy = DecayProfile(cfg.radii, [l2_norm_sq(d2g, BallRegion(center, r)) for r in cfg.radii])
    osc = DecayProfile(cfg.radii, [campanato(d2g, BallRegion(center, r)) for r in cfg.radii])
    vacuous = math.sqrt(max(energy.values)) <= cfg.zero_tol
    for prof in (energy, osc):
        if math.sqrt(max(prof.values)) > cfg.zero_tol:
            _fit_or_none(prof)
    return AxisProfiles(p, energy, osc, _holder_d2g(u, p, alpha, cfg), bool(vacuous))


def _holder_d2g(u: ScalarField, p: int, alpha: float, cfg: DiagnosticsConfig) -> float:
    d2g = hessian(diff_quotient(u, p))
    region = BallRegion((0.0,) * u.grid.n, cfg.holder_radius)
    return holder_seminorm(d2g.values, u.grid, alpha, region, cfg.pair_budget)


def _holder_d3u(u: ScalarField, alpha: float, cfg: DiagnosticsConfig) -> float:
    region = BallRegion((0.0,) * u.grid.n, cfg.holder_radius)
    return holder_seminorm(third_derivatives(u), u.grid, alpha, region, cfg.pair_budget)


def _relative_change(a: float, b: float, zero_tol: float) -> float:
    if max(a, b) <= zero_tol:
        return 0.0
    return abs(a - b) / max(a, b)


def _coarse_levels(u: ScalarField, levels: int) -> list:
    out = [u]
    for _ in range(levels):
        try:
            coarse = out[-1].grid.coarsen()
        except UsageError:
            break
        out.append(out[-1].restrict(coarse))
    return out


def bootstrap_report(u: ScalarField, f: MatrixFunctional, alpha: float,
                     config: DiagnosticsConfig | None = None) -> BootstrapReport:
    """Measure decay and Hoelder regularity of ``g = u^{h_m}`` for every axis m.

    The energy ``sum_{B_rho} |D2g|^2`` should decay at least like ``rho^n``
    and its Campanato functional like ``rho^(n + 2 alpha)``.  Hoelder
    seminorms of ``D2g`` and ``D3u`` on ``B_{holder_radius}`` are recorded
    at the given grid and at ``refine_levels`` successively coarsened copies
    of ``u``; the Hoelder flag requires consecutive levels of the ``D3u``
    seminorm to agree within ``holder_tolerance``.  A field whose profiles
    vanish passes vacuously.
    """
    cfg = config or DiagnosticsConfig()
    if not 0 < alpha <= 1:
        raise UsageError("alpha must lie in (0, 1]")
    grid = u.grid
    n = grid.n
    # the Hessian range is only checked, the report itself is functional-agnostic
    hu = hessian(u).values
    f.check(hu[np.all(np.isfinite(hu), axis=(-2, -1))])
    axes = [_axis_profiles(u, p, alpha, cfg) for p in range(n)]
    holder = _holder_d3u(u, alpha, cfg)

    refinement = [{"h": grid.h, "holder_d3u": holder,
                   "holder_d2g": max(a.holder_d2g for a in axes)}]
    for coarse in _coarse_levels(u, cfg.refine_levels)[1:]:
        refinement.append({"h": coarse.grid.h, "holder_d3u": _holder_d3u(coarse, alpha, cfg),
                           "holder_d2g": max(_holder_d2g(coarse, p, alpha, cfg) for p in range(n))})
    changes = [_relative_change(a["holder_d3u"], b["holder_d3u"], cfg.zero_tol)
               for a, b in zip(refinement, refinement[1:])]
    for row, ch in zip(refinement[1:], changes):
        row["relative_change_d3u"] = ch

    pred_e = float(n)
    pred_o = float(n + 2 * alpha)

    def meets(prof: DecayProfile, target: float) -> bool:
        if math.sqrt(max(prof.values)) <= cfg.zero_tol:
            return True  # a vanishing profile decays at any rate
        return prof.fitted_exponent is not None and prof.fitted_exponent >= target

    flags = {
        "energy_exponent": all(meets(a.energy, pred_e - cfg.tol_energy) for a in axes),
        "oscillation_exponent": all(meets(a.oscillation, pred_o - cfg.tol_oscillation)
                                    for a in axes),
        "holder_stable": all(c <= cfg.holder_tolerance for c in changes),
    }
    settings = asdict(cfg)
    settings["multi_index"] = list(cfg.multi_index)
    return BootstrapReport(n, grid.h, float(alpha), axes, pred_e, pred_o, holder, refinement,
                           flags, settings)


# ----------------------------------------------------------- iteration lemma

@dataclass
class IterationLemmaCase:
    radii: np.ndarray
    phi: np.ndarray
    A: float
    B: float
    alpha: float
    beta: float
    gamma: float
    epsilon: float

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        if self.radii.ndim != 1 or self.radii.shape != self.phi.shape or self.radii.size < 2:
            raise UsageError("radii and phi must be matching 1-d samples (at least two)")
        if np.any(self.radii <= 0) or np.any(np.diff(self.radii) <= 0):
            raise UsageError("radii must be positive and strictly increasing")
        if np.any(self.phi < 0) or np.any(np.diff(self.phi) < 0):
            raise UsageError("phi must be nonnegative and nondecreasing")
        if min(self.A, self.B, self.beta, self.epsilon) < 0:
            raise UsageError("A, B, beta and epsilon must be nonnegative")
        if not self.beta < self.alpha:
            raise UsageError("need beta < alpha")
        if not self.beta < self.gamma < self.alpha:
            raise UsageError("need gamma in (beta, alpha)")


@dataclass
class LemmaResult:
    hypothesis_holds: bool
    conclusion_holds: bool
    witness: tuple | None
    epsilon0: float
    epsilon_small: bool
    tau: float
    c_bound: float
    c_min: float
    hypothesis_witness: tuple | None = None

    @property
    def counterexample(self) -> bool:
        return self.hypothesis_holds and self.epsilon_small and not self.conclusion_holds

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counterexample"] = self.counterexample
        return d


def _geometric_ratio(radii: np.ndarray) -> float | None:
    q = radii[:-1] / radii[1:]
    if np.allclose(q, q[0], rtol=1e-9, atol=0):
        return float(q[0])
    return None


def lemma_constants(A: float, alpha: float, beta: float, gamma: float, ratio: float | None = None):
    """Constructive ``(tau, eps0, c)`` for the iteration lemma.

    ``tau`` satisfies ``2 A tau^alpha <= tau^gamma`` and ``tau <= 1/2``, so
    that for ``eps <= tau^alpha`` one step gives
    ``phi(tau r) <= tau^gamma phi(r) + B r^beta``.  Iterating,
    ``phi(rho) <= c [(rho/r)^gamma phi(r) + B r^beta]`` with
    ``c = max(tau^-gamma, 1 / (1 - tau^(gamma - beta)))``.  When samples are
    geometric with ratio ``q``, tau is lowered to a power of ``q`` so every
    step of the iteration lands on a sample.
    """
    tau = 0.5 if A <= 0 else min((2 * A) ** (-1.0 / (alpha - gamma)), 0.5)
    if ratio is not None and 0 < ratio < 1:
        tau = ratio ** math.ceil(math.log(tau) / math.log(ratio) - 1e-12)
    eps0 = tau ** alpha
    c = max(tau ** (-gamma), 1.0 / (1.0 - tau ** (gamma - beta)))
    return tau, eps0, c


def lemma_check(case: IterationLemmaCase, rtol: float = 1e-12) -> LemmaResult:
    """Scan all sampled pairs ``rho <= r`` for the hypothesis and conclusion.

    ``c_min`` is the smallest constant making the conclusion hold on the
    samples; the conclusion is declared to hold when ``c_min`` does not
    exceed the constructive constant.
    """
    r = case.radii
    phi = case.phi
    i, j = np.triu_indices(r.size)  # rho = r[i] <= r[j]
    rho, rr = r[i], r[j]
    lhs = phi[i]
    hyp_rhs = case.A * ((rho / rr) ** case.alpha + case.epsilon) * phi[j] + case.B * rr ** case.beta
    slack = rtol * np.maximum(np.abs(hyp_rhs), np.max(phi))
    bad = lhs > hyp_rhs + slack
    hyp_witness = None
    if np.any(bad):
        k = int(np.argmax(lhs - hyp_rhs))
        hyp_witness = (float(rho[k]), float(rr[k]))

    tau, eps0, c = lemma_constants(case.A, case.alpha, case.beta, case.gamma,
                                   _geometric_ratio(r))
    base = (rho / rr) ** case.gamma * phi[j] + case.B * rr ** case.beta
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(base > 0, lhs / base, np.where(lhs > 0, np.inf, 0.0))
    c_min = float(np.max(ratios))
    viol = lhs > c * base + rtol * np.maximum(c * base, np.max(phi))
    witness = None
    if np.any(viol):
        k = int(np.argmax(ratios))
        witness = (float(rho[k]), float(rr[k]))
    return LemmaResult(bool(not np.any(bad)), bool(not np.any(viol)), witness, float(eps0),
                       bool(case.epsilon < eps0), float(tau), float(c), c_min, hyp_witness)


def synthetic_cases(count: int, rng: np.random.Generator, satisfy: float = 0.9) -> list:
    """Seeded power-law-plus-noise cases with ``epsilon < eps0``.

    A fraction ``satisfy`` receive the smallest ``B`` that makes the
    hypothesis hold on the samples (slightly enlarged), so the lemma's
    implication is actually exercised; the rest keep a random ``B``.
    """
    cases = []
    for _ in range(count):
        alpha = rng.uniform(0.5, 4.0)
        beta = rng.uniform(0.0, 0.8 * alpha)
        gamma = rng.uniform(beta + 0.1 * (alpha - beta), alpha - 0.1 * (alpha - beta))
        A = rng.uniform(0.5, 5.0)
        R = rng.uniform(0.5, 2.0)
        q = rng.uniform(0.5, 0.9)
        k = int(rng.integers(10, 40))
        radii = R * q ** np.arange(k - 1, -1, -1)
        p = rng.uniform(beta, alpha + 1.0)
        phi = rng.uniform(0.1, 10.0) * radii ** p
        phi = phi + rng.uniform(0, 0.2) * np.cumsum(rng.exponential(1.0, k)) / k * phi[-1]
        _, eps0, _ = lemma_constants(A, alpha, beta, gamma, q)
        eps = rng.uniform(0.0, 0.999) * eps0
        if rng.uniform() < satisfy:
            i, j = np.triu_indices(k)
            need = (phi[i] - A * ((radii[i] / radii[j]) ** alpha + eps) * phi[j]) / radii[j] ** beta
            B = max(float(np.max(need)), 0.0) * (1 + rng.uniform(0, 0.1)) + 1e-12
        else:
            B = rng.uniform(0.0, 1.0)
        cases.append(IterationLemmaCase(radii, phi, A, B, alpha, beta, gamma, eps))
    return cases


def lemma_suite(count: int, rng: np.random.Generator) -> tuple[dict, list]:
    """Run :func:`lemma_check` over synthetic cases; returns ``(summary, results)``."""
    results = [lemma_check(c) for c in synthetic_cases(count, rng)]
    cex = [k for k, r in enumerate(results) if r.counterexample]
    summary = {"cases": count,
               "hypothesis_true": sum(r.hypothesis_holds for r in results),
               "epsilon_small": sum(r.epsilon_small for r in results),
               "counterexamples": len(cex), "counterexample_indices": cex,
               "max_c_ratio": max((r.c_min / r.c_bound for r in results if r.hypothesis_holds),
                                  default=0.0)}
    return summary, results


# -------------------------------------------------------- higher-order probe

@dataclass
class ProbeReport:
    order: int
    multi_index: list
    levels: list  # dicts with h, residual, bumps, noise
    trend: list  # residual ratios coarse / fine (None when the fine residual is 0)
    monotone: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _quotients(a: np.ndarray, grid: Grid, axes) -> np.ndarray:
    for p in axes:
        a = diff_quotient_array(a, grid.n, p, grid.h)
    return a


def probe_residual(u: ScalarField, f: MatrixFunctional, multi_index, test_count: int = 20):
    """Weak residual of ``sum [b(D2u) : D2v + F] : D2eta`` for ``v = D^a u``.

    With ``a = (a1, a')``, ``F = D^{a'}(b(D2u) : D2 u^{h_a1}) - b(D2u) : D2v``
    so the pairing is the ``a'`` quotient of the once-differentiated
    equation.  Bumps are differentiated with the grid stencils and kept
    only where every term is defined.  Returns ``(residual, bumps_used)``.
    """
    grid = u.grid
    n, h = grid.n, grid.h
    hu = hessian_array(u.values, n, h)
    ok = np.all(np.isfinite(hu), axis=(-2, -1))
    b = np.full(grid.shape + (n,) * 4, np.nan)
    b[ok] = b_tensor(f, hu[ok])
    first, rest = multi_index[0], tuple(multi_index[1:])
    v = _quotients(u.values, grid, multi_index)
    d2v = hessian_array(v, n, h)
    d2u1 = hessian_array(_quotients(u.values, grid, (first,)), n, h)
    b_d2v = np.einsum("...ijkl,...ij->...kl", b, d2v)
    flux1 = np.einsum("...ijkl,...ij->...kl", b, d2u1)
    forcing = _quotients(flux1, grid, rest) - b_d2v
    total = b_d2v + forcing
    valid = np.all(np.isfinite(total), axis=(-2, -1))
    support = ndi.binary_erosion(valid, structure=np.ones((3,) * n), iterations=1)
    hn = h ** n
    worst, used = 0.0, 0
    for vals, _ in bump_family(grid, test_count, support):
        he = hessian_array(vals, n, h, fill=0.0)
        live = np.any(he != 0, axis=(-2, -1))
        if not np.all(valid[live]):
            continue
        num = abs(float(np.sum(total[live] * he[live]))) * hn
        den = math.sqrt(float(np.sum(he ** 2)) * hn)
        worst = max(worst, num / den)
        used += 1
    if used == 0:
        raise UsageError("no test bump fits inside the region where the probe is defined")
    return worst, used


def higher_order_probe(u: ScalarField, f: MatrixFunctional, order: int,
                       config: DiagnosticsConfig | None = None) -> ProbeReport:
    """Residual of the equation for ``N - 2`` difference quotients of ``u``.

    Evaluated on ``u`` and on ``probe_levels - 1`` coarsened copies.  Raises
    when roundoff in the N-fold quotients (``eps |u| / h^N``) would exceed
    the discretization scale ``h^2 |u|``.
    """
    cfg = config or DiagnosticsConfig()
    if order not in (3, 4):
        raise UsageError("order must be 3 or 4")
    idx = tuple(int(p) for p in cfg.multi_index)
    idx = (idx * order)[:order - 2]
    if any(not 0 <= p < u.grid.n for p in idx):
        raise UsageError(f"multi-index {idx} out of range for n={u.grid.n}")
    scale = float(np.nanmax(np.abs(u.values))) or 1.0
    eps = np.finfo(float).eps
    levels = []
    for field_ in _coarse_levels(u, cfg.probe_levels - 1):
        h = field_.grid.h
        noise = eps * scale * 2 ** order / h ** order
        if noise > h ** 2 * scale:
            raise UsageError(f"roundoff in {order}-fold quotients ({noise:.2e}) exceeds the "
                             f"discretization scale at h={h:g}; use a coarser grid")
        res, used = probe_residual(field_, f, idx, cfg.test_count)
        levels.append({"h": h, "residual": res, "bumps": used, "noise": float(noise)})
    trend = [levels[k + 1]["residual"] / levels[k]["residual"] if levels[k]["residual"] > 0
             else None for k in range(len(levels) - 1)]
    monotone = all(levels[k]["residual"] <= levels[k + 1]["residual"] for k in range(len(levels) - 1))
    return ProbeReport(order, list(idx), levels, trend, bool(monotone))
