import io
import math
import warnings

import numpy as np
import pytest

from roughlab.controlled import ControlledPath, polynomial_controlled
from roughlab.gauss import FractionalBM, Grid, simulate_bm, variance_fn
from roughlab.integrate import integral_path
from roughlab.market import (
    RoughMarket,
    Strategy,
    arbitrage_demo,
    clock_time_change,
    exp_fbm_market,
    gain_process,
    p_portfolio,
    p_weights,
    portfolio_value,
    power_mean,
    renorm_clock,
    self_financing_residual,
    write_arbitrage_csv,
    write_market_csv,
)
from roughlab.roughpath import RoughPathL2, extract_renorm, hermite_lift, lift_from_renorm


def _hold(market, units):
    d1 = market.d + 1
    N = market.grid.N
    Y1 = np.broadcast_to(np.asarray(units, dtype=float), market.S.shape[:-2] + (N + 1, d1))
    Y2 = np.zeros(market.S.shape[:-2] + (N + 1, d1, d1))
    return ControlledPath(market.lift, [Y1, Y2])


def test_power_mean_examples():
    assert power_mean(3.0, [1.0, 1.0, 1.0]) == pytest.approx(1.0)
    assert power_mean(1.0, [1.0, 3.0]) == pytest.approx(2.0)
    assert power_mean(2.0, [1.0, 3.0]) == pytest.approx(2.2360679, abs=1e-7)
    with pytest.raises(ValueError):
        power_mean(0.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        power_mean(1.0, [1.0, -2.0])


def test_power_mean_monotone():
    rng = np.random.default_rng(0)
    S = rng.lognormal(0, 1, size=(10_000, 3))
    p = rng.uniform(-3, 3, 10_000)
    q = p + rng.uniform(0.01, 3, 10_000)
    p[np.abs(p) < 1e-3] = 1e-3
    Mp = np.array([power_mean(a, s) for a, s in zip(p, S)])
    Mq = np.array([power_mean(b, s) for b, s in zip(q, S)])
    assert np.all(Mp < Mq)
    const = np.full(3, 1.7)
    assert power_mean(-2.0, const) == pytest.approx(power_mean(2.5, const), rel=1e-14)


def test_p_weights_value_and_hessian():
    rng = np.random.default_rng(1)
    S = rng.lognormal(0, 0.5, size=4)
    for p in (-1.0, 0.5, 2.0):
        F, H = p_weights(p, S)
        assert np.dot(F, S) == pytest.approx(power_mean(p, S), rel=1e-12)
        eps = 1e-6
        num = np.stack([(p_weights(p, S + eps * e)[0] - p_weights(p, S - eps * e)[0]) / (2 * eps)
                        for e in np.eye(4)], axis=-1)
        np.testing.assert_allclose(H, num, rtol=1e-6, atol=1e-8)


def test_p_weights_examples():
    F, _ = p_weights(2.0, np.full(3, 5.0))
    np.testing.assert_allclose(F, 1 / 3)
    F, _ = p_weights(1.0, np.array([1.0, 3.0]))
    np.testing.assert_allclose(F, [0.5, 0.5])
    assert np.dot(F, [1.0, 3.0]) == pytest.approx(2.0)


def test_market_validation():
    g = Grid(1.0, 4)
    lift = RoughPathL2(np.zeros((5, 2)), np.zeros((4, 2, 2)), "young", g)
    with pytest.raises(ValueError):
        RoughMarket(np.full((5, 2), 2.0), lift)
    A = np.zeros((4, 2, 2))
    A[:, 0, 1] = 1.0
    with pytest.raises(ValueError):
        RoughMarket(np.ones((5, 2)), RoughPathL2(np.zeros((5, 2)), A, "young", g))


def test_hold_one_unit_gain():
    m = exp_fbm_market(3, 2, N=64, R=4)
    G, res = gain_process(Strategy(_hold(m, [0.0, 1.0, 0.0])), m)
    np.testing.assert_allclose(G, m.S[..., 1] - m.S[..., :1, 1], atol=1e-14)
    np.testing.assert_allclose(res.value, G[..., -1], atol=1e-14)


def test_exit_freezes_gain():
    m = exp_fbm_market(2, 2, N=64, R=4)
    strat = Strategy(_hold(m, [0.0, 1.0, 1.0]), exit=32)
    G, res = gain_process(strat, m)
    assert np.all(G[..., 32:] == G[..., 32:33])
    np.testing.assert_allclose(res.value, G[..., 32])
    assert np.all(self_financing_residual(strat, m) <= 1e-13)
    with pytest.raises(ValueError):
        Strategy(_hold(m, [0, 1, 0]), exit=99).exit_index(m)


def test_riskless_asset_is_neutral():
    risky = exp_fbm_market(4, 2, N=64, R=4)
    lift_risky = RoughPathL2(risky.S[..., 1:], risky.lift.A[..., 1:, 1:], "young", risky.grid)
    F, H = p_weights(2.0, risky.S)
    bare = ControlledPath(lift_risky, [F[..., 1:], H[..., 1:, 1:]])
    full = ControlledPath(risky.lift, [F + np.array([5.0, 0, 0]), H])
    np.testing.assert_allclose(integral_path(full), integral_path(bare), atol=1e-13)


def test_buy_and_hold_self_finances():
    m = exp_fbm_market(3, 2, N=64, R=4)
    assert np.all(self_financing_residual(Strategy(_hold(m, [0.3, -1.0, 2.0])), m) <= 1e-13)


def test_p_portfolio_value_is_power_mean():
    m = exp_fbm_market(3, 2, N=64, R=1)
    strat = p_portfolio(2.0, m)
    np.testing.assert_allclose(portfolio_value(strat, m), power_mean(2.0, m.S), rtol=1e-13)


def test_p_portfolio_self_financing_under_refinement():
    res = []
    for N in (64, 256, 1024):
        m = exp_fbm_market(5, 2, N=N, R=1)
        res.append(float(np.max(self_financing_residual(p_portfolio(2.0, m), m))))
    assert res[0] > res[1] > res[2]
    assert res[2] < 1e-4


def test_ito_lift_breaks_chain_rule():
    m = exp_fbm_market(5, 2, H=0.5, N=128, R=16, scheme="ito")
    with pytest.warns(UserWarning, match="not geometric"):
        strat = p_portfolio(2.0, m)
    assert np.min(self_financing_residual(strat, m)) > 1e-3


def test_bachelier_polynomial_gain_is_unbiased():
    g = Grid(1.0, 64)
    X = FractionalBM(0.4).sample(g, 0, 0, 10**5)
    rp = hermite_lift(X, variance_fn(("fbm", 0.4), g), 0.39, g)
    market = RoughMarket.from_risky(X, rp)
    G, _ = gain_process(Strategy(polynomial_controlled([0.0, 1.0], rp)), market)
    v = G[:, -1]
    assert abs(v.mean()) <= 4 * v.std(ddof=1) / math.sqrt(v.size)


def test_arbitrage_identical_assets_is_degenerate():
    # with a unit numeraire, identical coordinates means every price is 1
    g = Grid(1.0, 64)
    lift = RoughPathL2(np.zeros((65, 3)), np.zeros((64, 3, 3)), "young", g)
    m = RoughMarket(np.ones((65, 3)), lift)
    rep = arbitrage_demo(1.0, 2.0, m)
    assert rep.degenerate.all()
    np.testing.assert_array_equal(rep.value_gain, 0.0)
    np.testing.assert_allclose(rep.integral_gain, 0.0, atol=1e-15)
    assert rep.claim_holds


def test_arbitrage_on_young_market():
    m = exp_fbm_market(20, 2, N=2048, R=1)
    rep = arbitrage_demo(1.0, 2.0, m, tol=1e-3)
    assert np.all(rep.min_gain >= 0)
    assert np.all(rep.terminal_gain > 0)
    assert rep.self_financing
    assert rep.claim_holds
    np.testing.assert_allclose(rep.integral_gain, rep.value_gain, atol=1e-3)
    with pytest.raises(ValueError):
        arbitrage_demo(2.0, 1.0, m)


def test_arbitrage_refused_on_ito_market():
    m = exp_fbm_market(20, 2, H=0.5, N=128, R=64, scheme="ito")
    rep = arbitrage_demo(1.0, 2.0, m)
    assert not rep.self_financing
    assert not rep.claim_holds


def test_renorm_clock_examples():
    g = Grid(1.0, 64)
    tau = renorm_clock(2 * g.points, 1.0)
    assert abs(g.points[tau] - 0.5) <= g.h
    flat = np.where(g.points < 0.5, 0.0, g.points - 0.5)
    assert renorm_clock(flat, 0.0) == 33
    batched = renorm_clock(np.stack([2 * g.points, g.points]), 0.4)
    assert list(batched) == [13, 26]
    with pytest.raises(ValueError):
        renorm_clock(-g.points, 0.1)
    with pytest.raises(ValueError):
        renorm_clock(g.points, 2.0)


def test_clock_time_change_gives_identity_renorm():
    g = Grid(1.0, 4096)
    G2 = g.points**2
    rp = lift_from_renorm(simulate_bm(g, 0), [G2], 0.45)
    levels, idx, rounding = clock_time_change(rp, G2, 0.5, 256)
    Gt = extract_renorm(levels, alpha=0.45).G[0]
    assert np.max(np.abs(Gt - levels.grid.points)) <= np.max(np.diff(G2))
    assert rounding <= np.max(np.diff(G2))
    assert idx[0] == 0


def test_csv_writers():
    m = exp_fbm_market(2, 2, N=16, R=2)
    buf = io.StringIO()
    write_market_csv(m[0], np.zeros(17), np.zeros(17), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,S0,S1,S2,V,G"
    assert len(lines) == 18
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = arbitrage_demo(1.0, 2.0, m)
    buf = io.StringIO()
    write_arbitrage_csv(rep, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "path,min_gain,terminal_gain,sf_residual_q,sf_residual_p,degenerate"
    assert len(lines) == 3
