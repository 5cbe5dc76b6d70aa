"""Uniform-grid fields on [-1, 1]^n and the measurement toolkit used to
track regularity: difference quotients, discrete Hessians and third
derivatives, ball averages, Campanato functionals, Hoelder seminorms and
log-log decay fits.

Undefined nodes (outside the domain of a shrinking stencil) carry NaN.
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class UsageError(ValueError):
    """Raised when an operation is called outside its preconditions."""


@dataclass(frozen=True)
class Grid:
    n: int
    m: int

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise UsageError(f"grid dimension must be 1, 2 or 3, got {self.n}")
        if self.m < 9:
            raise UsageError(f"need at least 9 nodes per axis, got {self.m}")

    @classmethod
    def from_spacing(cls, n: int, h: float) -> "Grid":
        m = 2.0 / h + 1.0
        if abs(m - round(m)) > 1e-9:
            raise UsageError(f"spacing {h} does not divide [-1, 1]")
        return cls(n, int(round(m)))

    @property
    def h(self) -> float:
        return 2.0 / (self.m - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.m,) * self.n

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.m)

    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.n), indexing="ij"))

    def points(self) -> np.ndarray:
        """Node coordinates with shape ``grid.shape + (n,)``."""
        return np.stack(self.coords(), axis=-1)

    def coarsen(self) -> "Grid":
        if (self.m - 1) % 2:
            raise UsageError("coarsening needs an even number of cells")
        return Grid(self.n, (self.m - 1) // 2 + 1)


@dataclass(frozen=True)
class BallRegion:
    center: tuple
    radius: float

    def mask(self, grid: Grid) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        d2 = sum((x - ci) ** 2 for x, ci in zip(grid.coords(), c))
        return d2 <= self.radius ** 2 * (1 + 1e-12) + 1e-24


def centered_ball(grid: Grid, radius: float) -> BallRegion:
    return BallRegion((0.0,) * grid.n, radius)


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise UsageError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")
        if np.any(np.isinf(self.values)):
            raise ValueError("field has infinite values")

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, np.asarray(fn(*grid.coords()), dtype=float) * np.ones(grid.shape))

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.values)

    def restrict(self, grid: Grid) -> "ScalarField":
        """Subsample onto a coarsened grid."""
        step = (self.grid.m - 1) // (grid.m - 1)
        sl = (slice(None, None, step),) * self.grid.n
        return ScalarField(grid, self.values[sl].copy())


@dataclass(frozen=True)
class MatField:
    grid: Grid
    values: np.ndarray  # grid.shape + (n, n)

    @property
    def defined(self) -> np.ndarray:
        return np.all(np.isfinite(self.values), axis=(-2, -1))


def shift(a: np.ndarray, offset, fill=np.nan) -> np.ndarray:
    """``out[x] = a[x + offset]`` over the leading ``len(offset)`` axes."""
    out = np.full_like(a, fill, dtype=float)
    src, dst = [], []
    for o, size in zip(offset, a.shape):
        o = int(o)
        if abs(o) >= size:
            return out
        if o >= 0:
            src.append(slice(o, size))
            dst.append(slice(0, size - o))
        else:
            src.append(slice(0, size + o))
            dst.append(slice(-o, size))
    out[tuple(dst)] = a[tuple(src)]
    return out


def _unit(n: int, p: int, s: int = 1) -> tuple[int, ...]:
    e = [0] * n
    e[p] = s
    return tuple(e)


def diff_quotient_array(a: np.ndarray, n: int, p: int, h: float, h_steps: int = 1) -> np.ndarray:
    return (shift(a, _unit(n, p, h_steps)) - a) / (h_steps * h)


def diff_quotient(u: ScalarField, p: int, h_steps: int = 1) -> ScalarField:
    """Difference quotient ``(u(x + s h e_p) - u(x)) / (s h)``.

    Negative ``h_steps`` gives the backward quotient.  Nodes whose shifted
    partner leaves the grid become undefined.
    """
    if h_steps == 0:
        raise UsageError("h_steps must be nonzero")
    n = u.grid.n
    if not 0 <= p < n:
        raise UsageError(f"axis {p} out of range for n={n}")
    out = diff_quotient_array(u.values, n, p, u.grid.h, h_steps)
    if not np.any(np.isfinite(out)):
        raise UsageError("difference quotient has an empty domain")
    return ScalarField(u.grid, out)


def second_diff(a: np.ndarray, n: int, h: float, i: int, j: int, fill=np.nan) -> np.ndarray:
    """One Hessian stencil: (1, -2, 1)/h^2 for i == j, the 4-point cross /(4h^2) otherwise.

    Both stencils are symmetric, so with ``fill=0`` this is also the adjoint
    operator on zero-extended fields.
    """
    if i == j:
        return (shift(a, _unit(n, i), fill) - 2 * a + shift(a, _unit(n, i, -1), fill)) / h ** 2
    out = 0.0
    for si in (1, -1):
        for sj in (1, -1):
            off = [0] * n
            off[i] += si
            off[j] += sj
            out = out + si * sj * shift(a, off, fill)
    return out / (4 * h ** 2)


def hessian_array(a: np.ndarray, n: int, h: float, fill=np.nan) -> np.ndarray:
    """Central second differences over the first ``n`` axes of ``a``."""
    out = np.empty(a.shape + (n, n))
    for i in range(n):
        for j in range(i, n):
            v = second_diff(a, n, h, i, j, fill)
            out[..., i, j] = v
            out[..., j, i] = v
    return out


def hessian(u: ScalarField) -> MatField:
    """Discrete Hessian; exact on polynomials of degree <= 3."""
    return MatField(u.grid, hessian_array(u.values, u.grid.n, u.grid.h))


def central_diff_array(a: np.ndarray, n: int, p: int, h: float) -> np.ndarray:
    return (shift(a, _unit(n, p)) - shift(a, _unit(n, p, -1))) / (2 * h)


def third_derivatives(u: ScalarField) -> np.ndarray:
    """``D3[..., i, j, k]``: central difference in x_k of the Hessian entry (i, j),
    averaged over the six index orders so the result is exactly symmetric."""
    n, h = u.grid.n, u.grid.h
    hess = hessian_array(u.values, n, h)
    raw = np.stack([central_diff_array(hess, n, k, h) for k in range(n)], axis=-1)
    lead = tuple(range(raw.ndim - 3))
    perms = itertools.permutations(range(3))
    return sum(np.transpose(raw, lead + tuple(len(lead) + q for q in p)) for p in perms) / 6.0


def diff_quotient_matfield(F: MatField, p: int, h_steps: int = 1) -> MatField:
    return MatField(F.grid, diff_quotient_array(F.values, F.grid.n, p, F.grid.h, h_steps))


def _ball_values(values: np.ndarray, grid: Grid, ball: BallRegion) -> np.ndarray:
    mask = ball.mask(grid)
    count = int(mask.sum())
    if count < 5:
        raise UsageError(f"ball of radius {ball.radius} holds {count} nodes (< 5)")
    vals = values[mask]
    if not np.all(np.isfinite(vals)):
        raise UsageError("ball reaches nodes where the field is undefined")
    return vals


def ball_mean(F: MatField, ball: BallRegion) -> np.ndarray:
    """Node-inclusion average of a matrix field over a ball."""
    return _ball_values(F.values, F.grid, ball).mean(axis=0)


def campanato(F: MatField, ball: BallRegion) -> float:
    """``sum |F - mean_ball(F)|^2 h^n`` over nodes in the ball."""
    vals = _ball_values(F.values, F.grid, ball)
    dev = vals - vals.mean(axis=0)
    return float(np.sum(dev ** 2) * F.grid.h ** F.grid.n)


def l2_norm_sq(F: MatField | ScalarField, ball: BallRegion) -> float:
    vals = _ball_values(F.values, F.grid, ball)
    return float(np.sum(vals ** 2) * F.grid.h ** F.grid.n)


def _pair_indices(count: int, budget: int) -> tuple[np.ndarray, np.ndarray]:
    total = count * (count - 1) // 2
    if total <= budget:
        i, j = np.triu_indices(count, k=1)
        return i, j
    # additive recurrence on the unit square with plastic-number increments
    g = 1.32471795724474602596
    k = np.arange(1, budget + 1)
    s = np.mod(0.5 + k[:, None] * np.array([1 / g, 1 / g ** 2]), 1.0)
    i = np.minimum((s[:, 0] * count).astype(int), count - 1)
    j = np.minimum((s[:, 1] * count).astype(int), count - 1)
    keep = i != j
    return i[keep], j[keep]


def holder_seminorm(values: np.ndarray, grid: Grid, alpha: float, region: BallRegion,
                    pair_budget: int = 20000) -> float:
    """Largest ``|F(x) - F(y)| / |x - y|^alpha`` over node pairs in ``region``.

    ``values`` has shape ``grid.shape + trailing``; trailing components are
    compared in the Euclidean norm.  Pairs closer than ``2h`` are skipped.
    """
    if not 0 < alpha <= 1:
        raise UsageError("alpha must lie in (0, 1]")
    mask = region.mask(grid)
    vals = values[mask].reshape(int(mask.sum()), -1)
    if not np.all(np.isfinite(vals)):
        raise UsageError("region reaches nodes where the field is undefined")
    pts = grid.points()[mask]
    i, j = _pair_indices(len(pts), pair_budget)
    best = 0.0
    for lo in range(0, len(i), 200000):
        a, b = i[lo:lo + 200000], j[lo:lo + 200000]
        dist = np.linalg.norm(pts[a] - pts[b], axis=1)
        ok = dist >= 2 * grid.h * (1 - 1e-12)
        if not np.any(ok):
            continue
        diff = np.linalg.norm(vals[a[ok]] - vals[b[ok]], axis=1)
        best = max(best, float(np.max(diff / dist[ok] ** alpha)))
    return best


@dataclass
class DecayProfile:
    radii: list
    values: list
    fitted_exponent: float | None = None
    fit_residual: float | None = None
    dropped: int = 0

    def to_dict(self) -> dict:
        return {"radii": list(map(float, self.radii)), "values": list(map(float, self.values)),
                "fitted_exponent": self.fitted_exponent, "fit_residual": self.fit_residual,
                "dropped_zeros": self.dropped}


def decay_fit(profile: DecayProfile, min_points: int = 4) -> tuple[float, float]:
    """Least-squares slope of log(value) against log(radius) and its RMS residual.

    Zero values are dropped (recorded in ``profile.dropped``).
    """
    r = np.asarray(profile.radii, dtype=float)
    v = np.asarray(profile.values, dtype=float)
    if np.any(np.diff(r) <= 0):
        raise UsageError("radii must be strictly increasing")
    if np.any(v < 0):
        raise UsageError("profile values must be nonnegative")
    keep = v > 0
    profile.dropped = int((~keep).sum())
    if keep.sum() < min_points:
        raise UsageError(f"need at least {min_points} positive values, have {int(keep.sum())}")
    x, y = np.log(r[keep]), np.log(v[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    profile.fitted_exponent = float(slope)
    profile.fit_residual = resid
    return float(slope), resid


def dyadic_radii(R: float = 0.4, levels: int = 4) -> list[float]:
    """Radii ``R 2^-k`` for k = levels-1, ..., 0 (increasing)."""
    return [R * 2.0 ** (-k) for k in range(levels - 1, -1, -1)]


def quartic_bump(grid: Grid, center, width: float) -> ScalarField:
    """``(1 - |x - c|^2 / s^2)^4`` inside the ball of radius ``s``, zero outside."""
    return ScalarField(grid, quartic_bump_values(grid, center, width)[0])


def quartic_bump_values(grid: Grid, center, width: float):
    """Bump values and its exact Hessian at the nodes."""
    x = grid.points() - np.asarray(center, dtype=float)
    s2 = width ** 2
    t = 1.0 - np.sum(x ** 2, axis=-1) / s2
    inside = t > 0
    t = np.where(inside, t, 0.0)
    val = t ** 4
    # D2 (t^4) = 4 t^3 D2 t + 12 t^2 Dt Dt^T with Dt = -2x/s2, D2 t = -2 I/s2
    n = grid.n
    dt = -2.0 * x / s2
    hess = (4 * t ** 3)[..., None, None] * (-2.0 / s2) * np.eye(n) \
        + (12 * t ** 2)[..., None, None] * dt[..., :, None] * dt[..., None, :]
    return val, hess


# -- serialization ------------------------------------------------------------

_HEADER = struct.Struct("<iid")


def save_field(path, field: ScalarField) -> None:
    """Binary layout: int32 n, int32 m, float64 h, then float64 node values
    in row-major order (NaN marks undefined nodes)."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(field.grid.n, field.grid.m, field.grid.h))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def load_field(path) -> ScalarField:
    data = Path(path).read_bytes()
    n, m, h = _HEADER.unpack_from(data)
    grid = Grid(n, m)
    if abs(grid.h - h) > 1e-15:
        raise ValueError(f"header spacing {h} inconsistent with m={m}")
    vals = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if vals.size != m ** n:
        raise ValueError(f"expected {m ** n} values, found {vals.size}")
    return ScalarField(grid, vals.reshape(grid.shape).copy())


def field_to_csv(path, field: ScalarField) -> None:
    n = field.grid.n
    pts = field.grid.points().reshape(-1, n)
    vals = field.values.reshape(-1)
    with open(path, "w") as fh:
        fh.write(",".join([f"x{i + 1}" for i in range(n)] + ["value"]) + "\n")
        for p, v in zip(pts, vals):
            fh.write(",".join(repr(float(c)) for c in p) + "," + repr(float(v)) + "\n")
