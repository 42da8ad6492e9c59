import io

import numpy as np
import pytest

from roughlab.controlled import (
    ControlledPath,
    PiecewiseControlledPath,
    SimpleIntegrand,
    markovian_controlled,
    polynomial_controlled,
    polynomial_table,
    remainder_profile,
    signature_integrand,
    sin_table,
    write_components_csv,
)
from roughlab.gauss import FractionalBM, Grid, simulate_bm, simulate_fbm, variance_fn
from roughlab.integrate import rough_integral
from roughlab.roughpath import geometric_lift, hermite_lift, lift_from_renorm


@pytest.fixture
def bm_lift():
    g = Grid(1.0, 64)
    return lift_from_renorm(simulate_bm(g, 0), [-g.points / 2], 0.45)


def test_polynomial_components(bm_lift):
    x = bm_lift.x
    cp = polynomial_controlled([0.0, 1.0], bm_lift)
    np.testing.assert_array_equal(cp.Y[0], x)
    np.testing.assert_array_equal(cp.Y[1], np.ones_like(x))
    g = Grid(1.0, 64)
    rp3 = lift_from_renorm(bm_lift.x, [-g.points / 2, 0 * g.points], 0.3, g)
    cp = polynomial_controlled([0, 0, 1], rp3)
    np.testing.assert_allclose(cp.Y[0], x**2)
    np.testing.assert_allclose(cp.Y[1], 2 * x)
    np.testing.assert_allclose(cp.Y[2], 2.0)


def test_constant_integrand_gives_increment(bm_lift):
    cp = polynomial_controlled([1.0], bm_lift)
    np.testing.assert_array_equal(cp.Y[1], 0.0)
    for mesh in (1, 4, 16):
        r = rough_integral(cp, bm_lift, 8, 56, [mesh])
        assert r.value == pytest.approx(bm_lift.x[56] - bm_lift.x[8], abs=1e-14)


def test_polynomial_linearity(bm_lift):
    P, Q = [1.0, -2.0, 0.5], [0.0, 3.0, 0.0, 1.0]
    a = polynomial_controlled(P, bm_lift, 4)
    b = polynomial_controlled(Q, bm_lift, 4)
    both = polynomial_controlled([p + q for p, q in zip(P + [0.0], Q)], bm_lift, 4)
    combo = a + 2.0 * b
    twice = polynomial_controlled([p + 2 * q for p, q in zip(P + [0.0], Q)], bm_lift, 4)
    for i in range(4):
        np.testing.assert_allclose((a + b).Y[i], both.Y[i], atol=1e-12)
        np.testing.assert_allclose(combo.Y[i], twice.Y[i], atol=1e-12)


def test_markovian_examples(bm_lift):
    g = bm_lift.grid
    geo = geometric_lift(bm_lift.x, 0.3, g)
    cp = markovian_controlled(polynomial_table([0, 1]), geo)
    np.testing.assert_array_equal(cp.Y[0], 1.0)
    np.testing.assert_array_equal(cp.Y[1], 0.0)
    s = markovian_controlled(sin_table(), bm_lift)
    np.testing.assert_allclose(s.Y[0], np.cos(bm_lift.x))
    np.testing.assert_allclose(s.Y[1], -np.sin(bm_lift.x))
    assert np.all(np.isfinite(remainder_profile(s)))


def test_markovian_square_is_ito_integrand(bm_lift):
    cp = markovian_controlled(polynomial_table([0, 0, 1]), bm_lift)
    np.testing.assert_allclose(cp.Y[0], 2 * bm_lift.x)
    np.testing.assert_allclose(cp.Y[1], 2.0)


def test_missing_derivative_is_reported():
    from roughlab.controlled import FunctionTable

    F = FunctionTable([lambda t, x: x], name="short")
    with pytest.raises(ValueError, match="order 1"):
        F.derivative(1)


def test_signature_constant(bm_lift):
    cp = signature_integrand(bm_lift, 0, 0)
    np.testing.assert_array_equal(cp.Y[0], 1.0)
    np.testing.assert_array_equal(cp.Y[1], 0.0)


@pytest.mark.parametrize("s", [0, 16, 40])
def test_signature_level_one_integrates_to_level_two(s):
    g = Grid(1.0, 64)
    X = FractionalBM(0.4).sample(g, 1, 0, 5)
    rp = hermite_lift(X, variance_fn(("fbm", 0.4), g), 0.39, g)
    cp = signature_integrand(rp, 1, s)
    for mesh in (1, 4, 8):
        r = rough_integral(cp, rp, s, 64, [mesh])
        np.testing.assert_allclose(r.value, rp.level(2, s, 64), atol=1e-13)


def test_signature_level_two_on_linear_path():
    g = Grid(1.0, 128)
    rp = geometric_lift(g.points, 0.3, g)
    r = rough_integral(signature_integrand(rp, 2, 0), rp)
    assert r.value == pytest.approx(1 / 6, abs=1e-14)


def test_signature_integrand_is_adapted():
    g = Grid(1.0, 64)
    p = simulate_bm(g, 3).x
    q = p.copy()
    q[41:] += 1.0
    a = signature_integrand(geometric_lift(p, 0.3, g), 2, 10)
    b = signature_integrand(geometric_lift(q, 0.3, g), 2, 10)
    for i in range(1, 4):
        np.testing.assert_array_equal(a.component(i)[:41], b.component(i)[:41])
    assert np.all(a.component(1)[:10] == 0.0)


def test_signature_integrand_validation(bm_lift):
    with pytest.raises(ValueError):
        signature_integrand(bm_lift, -1, 0)
    with pytest.raises(ValueError):
        signature_integrand(bm_lift, 0, 5)
    with pytest.raises(ValueError):
        signature_integrand(bm_lift, 1, 65)


def test_piecewise_rejects_jumps(bm_lift):
    one = polynomial_controlled([1.0], bm_lift)
    zero = polynomial_controlled([0.0], bm_lift)
    with pytest.raises(ValueError, match="jump"):
        PiecewiseControlledPath([0, 10, 64], [zero, one])
    with pytest.raises(ValueError):
        PiecewiseControlledPath([0, 64], [zero, one])


def test_simple_integrand_validation():
    with pytest.raises(ValueError):
        SimpleIntegrand(1.0, 5, 2)
    with pytest.raises(ValueError):
        SimpleIntegrand(np.nan, 1, 2)


def test_controlled_path_shape_check(bm_lift):
    with pytest.raises(ValueError):
        ControlledPath(bm_lift, [np.zeros(10)])


def test_remainder_of_constant_is_zero(bm_lift):
    assert remainder_profile(polynomial_controlled([1.0], bm_lift)) == [0.0]


def test_remainder_stable_for_true_derivative():
    consts = []
    fine = simulate_fbm(Grid(1.0, 2**12), 0.4, 5).x
    for N in (2**8, 2**10, 2**12):
        g = Grid(1.0, N)
        rp = hermite_lift(fine[:: 2**12 // N], variance_fn(("fbm", 0.4), g), 0.39, g)
        consts.append(remainder_profile(polynomial_controlled([0, 0, 1], rp), max_lag=64)[0])
    assert max(consts) < 3 * min(consts)


def test_remainder_diverges_for_wrong_derivative():
    consts = []
    fine = simulate_fbm(Grid(1.0, 2**12), 0.4, 5).x
    for N in (2**8, 2**10, 2**12):
        g = Grid(1.0, N)
        rp = hermite_lift(fine[:: 2**12 // N], variance_fn(("fbm", 0.4), g), 0.39, g)
        bad = ControlledPath(rp, [rp.x, np.zeros_like(rp.x)])
        consts.append(remainder_profile(bad, max_lag=64)[0])
    assert consts[0] < consts[1] < consts[2]
    assert consts[2] > 2 * consts[0]


def test_components_csv(bm_lift):
    buf = io.StringIO()
    write_components_csv(polynomial_controlled([0, 1], bm_lift), bm_lift.grid, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,Y1,Y2"
    assert len(lines) == 66
    assert lines[-1].endswith(",1")
