import numpy as np
import pytest

from ddreg.fields import (BallRegion, DecayProfile, Grid, MatField, ScalarField, UsageError,
                          ball_mean, campanato, decay_fit, diff_quotient, diff_quotient_matfield,
                          dyadic_radii, field_to_csv, hessian, holder_seminorm, l2_norm_sq,
                          load_field, quartic_bump_values, save_field, third_derivatives)

E = np.array([[1.0, 0.0], [0.0, 0.0]])


def field(grid, fn):
    return ScalarField.from_function(grid, fn)


def test_grid_basics():
    g = Grid(2, 129)
    assert g.h == pytest.approx(1 / 64)
    assert Grid.from_spacing(2, 1 / 32).m == 65
    assert g.coarsen().m == 65
    with pytest.raises(UsageError):
        Grid(2, 5)
    with pytest.raises(UsageError):
        Grid(4, 9)


def test_diff_quotient_exact_cases():
    g = Grid(2, 33)
    assert np.nanmax(np.abs(diff_quotient(field(g, lambda x, y: 3.0 + 0 * x), 0).values)) == 0
    dq = diff_quotient(field(g, lambda x, y: x ** 2), 0)
    x = g.coords()[0]
    ok = np.isfinite(dq.values)
    np.testing.assert_allclose(dq.values[ok], (2 * x + g.h)[ok], atol=1e-12)
    assert not ok[-1].any() and ok[:-1].all()


def test_diff_quotient_taylor_bound():
    g = Grid(2, 65)
    dq = diff_quotient(field(g, lambda x, y: np.sin(x)), 0)
    x = g.coords()[0]
    err = np.nanmax(np.abs(dq.values - np.cos(x)))
    assert err <= 0.5 * g.h * 1.0


def test_diff_quotient_empty_domain():
    g = Grid(1, 9)
    with pytest.raises(UsageError):
        diff_quotient(ScalarField(g, np.zeros(9)), 0, h_steps=9)


def test_hessian_exactness():
    g = Grid(2, 33)
    a = np.array([[0.7, -0.3], [-0.3, 1.1]])
    u = field(g, lambda x, y: 0.5 * (a[0, 0] * x * x + 2 * a[0, 1] * x * y + a[1, 1] * y * y))
    hv = hessian(u).values
    ok = hessian(u).defined
    np.testing.assert_allclose(hv[ok], np.broadcast_to(a, hv[ok].shape), atol=1e-12)
    assert not ok[0].any()
    cubic = hessian(field(g, lambda x, y: x ** 3))
    x = g.coords()[0]
    np.testing.assert_allclose(cubic.values[..., 0, 0][ok], 6 * x[ok], atol=1e-10)


def test_hessian_second_order():
    errs = []
    for m in (33, 65):
        g = Grid(2, m)
        x, y = g.coords()
        hv = hessian(field(g, lambda x, y: np.sin(x) * np.sin(y))).values
        exact = np.stack([np.stack([-np.sin(x) * np.sin(y), np.cos(x) * np.cos(y)], -1),
                          np.stack([np.cos(x) * np.cos(y), -np.sin(x) * np.sin(y)], -1)], -2)
        errs.append(np.nanmax(np.abs(hv - exact)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_third_derivatives():
    g = Grid(2, 33)
    ok = np.all(np.isfinite(third_derivatives(field(g, lambda x, y: x * y))), axis=(-3, -2, -1))
    assert np.all(third_derivatives(field(g, lambda x, y: x * y + x * x))[ok] == 0)
    d3 = third_derivatives(field(g, lambda x, y: x ** 3))
    np.testing.assert_allclose(d3[ok][:, 0, 0, 0], 6.0, atol=1e-8)
    d3 = third_derivatives(field(g, lambda x, y: np.sin(x + 2 * y) * np.exp(x)))
    np.testing.assert_allclose(d3[ok][:, 0, 1, 0], d3[ok][:, 0, 0, 1], atol=1e-10)
    np.testing.assert_allclose(d3[ok][:, 1, 0, 1], d3[ok][:, 0, 1, 1], atol=1e-10)


def test_ball_mean_and_campanato():
    g = Grid(2, 129)
    x, y = g.coords()
    ball = BallRegion((0.0, 0.0), 0.5)
    const = MatField(g, np.broadcast_to(E, g.shape + (2, 2)).copy())
    np.testing.assert_allclose(ball_mean(const, ball), E, atol=1e-15)
    assert campanato(const, ball) == pytest.approx(0.0, abs=1e-28)
    odd = MatField(g, x[..., None, None] * E)
    np.testing.assert_allclose(ball_mean(odd, ball), 0.0, atol=1e-12)
    assert campanato(odd, ball) == pytest.approx(np.pi * 0.5 ** 4 / 4, rel=0.03)
    quad = MatField(g, (x ** 2 + y ** 2)[..., None, None] * E)
    assert ball_mean(quad, ball)[0, 0] == pytest.approx(2 * 0.25 / 4, rel=0.02)
    assert campanato(quad, ball) <= l2_norm_sq(quad, ball)
    shifted = MatField(g, quad.values + np.array([[0.3, 1.0], [1.0, -2.0]]))
    assert campanato(shifted, ball) == pytest.approx(campanato(quad, ball), abs=1e-12)


def test_ball_too_small():
    g = Grid(2, 33)
    with pytest.raises(UsageError):
        ball_mean(MatField(g, np.zeros(g.shape + (2, 2))), BallRegion((0.0, 0.0), 0.01))


def test_holder_seminorm():
    g = Grid(2, 65)
    x = g.coords()[0]
    ball = BallRegion((0.0, 0.0), 0.5)
    assert holder_seminorm(np.ones(g.shape), g, 0.5, ball) == 0.0
    assert holder_seminorm(x, g, 1.0, ball) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(UsageError):
        holder_seminorm(x, g, 0.0, ball)


def test_holder_detects_non_lipschitz():
    small = BallRegion((0.0, 0.0), 0.2)
    vals = {}
    for m in (65, 129):
        g = Grid(2, m)
        f = np.sqrt(np.abs(g.coords()[0]))
        vals[m] = (holder_seminorm(f, g, 0.5, small, 200_000), holder_seminorm(f, g, 1.0, small, 200_000))
    assert vals[129][0] <= 1.5 and vals[65][0] <= 1.5
    assert vals[129][1] >= 1.3 * vals[65][1]


def test_decay_fit():
    r = np.array([0.4 * 2.0 ** -k for k in range(5, -1, -1)])
    exp, res = decay_fit(DecayProfile(r, r ** 4))
    assert exp == pytest.approx(4.0, abs=1e-9) and res <= 1e-12
    assert decay_fit(DecayProfile(r, 3 * r ** 2))[0] == pytest.approx(2.0, abs=1e-9)
    exp, res = decay_fit(DecayProfile(r, r ** 2 * (1 + 0.1 * np.sin(np.log(r)))))
    assert abs(exp - 2.0) <= 0.15 and res > 0
    p = DecayProfile(r, np.r_[0.0, r[1:] ** 2])
    decay_fit(p)
    assert p.dropped == 1
    with pytest.raises(UsageError):
        decay_fit(DecayProfile(r[:3], r[:3]))


def test_dyadic_radii():
    assert dyadic_radii() == [0.05, 0.1, 0.2, 0.4]


def test_quotient_hessian_commute(rng):
    g = Grid(2, 33)
    u = ScalarField(g, rng.standard_normal(g.shape))
    for p in (0, 1):
        lhs = hessian(diff_quotient(u, p)).values
        rhs = diff_quotient_matfield(hessian(u), p).values
        ok = np.isfinite(lhs) & np.isfinite(rhs)
        np.testing.assert_allclose(lhs[ok], rhs[ok], atol=1e-12 * np.abs(rhs[ok]).max())


def test_quotient_summation_by_parts(rng):
    g = Grid(2, 33)
    inner = np.zeros(g.shape, bool)
    inner[3:-3, 3:-3] = True
    f = ScalarField(g, np.where(inner, rng.standard_normal(g.shape), 0.0))
    h = ScalarField(g, np.where(inner, rng.standard_normal(g.shape), 0.0))
    for p in (0, 1):
        lhs = np.nansum(diff_quotient(f, p).values * h.values)
        rhs = -np.nansum(f.values * diff_quotient(h, p, h_steps=-1).values)
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_bump_exact_hessian():
    g = Grid(2, 129)
    vals, hess = quartic_bump_values(g, (0.1, -0.2), 0.3)
    assert vals.max() <= 1.0 and vals[np.linalg.norm(g.points() - [0.1, -0.2], axis=-1) > 0.3 + 1e-12].max() == 0
    num = hessian(ScalarField(g, vals)).values
    ok = np.all(np.isfinite(num), axis=(-2, -1))
    assert np.abs(num[ok] - hess[ok]).max() <= 1e-2 * np.abs(hess).max()


def test_field_io_round_trip(tmp_path):
    g = Grid(2, 17)
    u = field(g, lambda x, y: np.sin(x) + y ** 2)
    u.values[0, 0] = np.nan
    save_field(tmp_path / "u.bin", u)
    back = load_field(tmp_path / "u.bin")
    assert back.grid == g
    np.testing.assert_array_equal(back.values, u.values)
    field_to_csv(tmp_path / "u.csv", u)
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,value" and len(lines) == 17 * 17 + 1
