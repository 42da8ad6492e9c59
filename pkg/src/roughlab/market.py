"""Rough market models: gain processes, self-financing checks, power-mean
portfolios and their pathwise arbitrage, and renormalisation clocks."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .controlled import ControlledPath
from .gauss import BrownianMotion, FractionalBM, Grid
from .integrate import IntegralResult, integral_path, rough_integral
from .roughpath import FunctionLevels, RoughPath1D, RoughPathL2, geometric_check_l2, level2_from_fine

GEOMETRIC_TOL = 1e-10


@dataclass
class RoughMarket:
    """Prices ``S`` of shape ``(..., N+1, d+1)`` with ``S^0 = 1`` and their lift.

    For ``d > 1`` or a general market the lift is a :class:`RoughPathL2` on all
    ``d+1`` coordinates whose riskless entries vanish.  A two-asset Bachelier
    market may carry a :class:`RoughPath1D` for the risky coordinate.
    """

    S: np.ndarray
    lift: RoughPathL2 | RoughPath1D
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=float)
        if not np.all(np.isfinite(self.S)):
            raise ValueError("prices must be finite")
        if np.any(self.S[..., 0] != 1.0):
            raise ValueError("coordinate 0 is the riskless asset and must equal 1")
        if isinstance(self.lift, RoughPathL2):
            if self.lift.dim != self.S.shape[-1]:
                raise ValueError("lift dimension differs from the number of assets")
            if np.any(self.lift.A[..., 0, :]) or np.any(self.lift.A[..., :, 0]):
                raise ValueError("levels touching the riskless coordinate must vanish")
        elif self.S.shape[-1] != 2:
            raise ValueError("a one-dimensional lift describes exactly one risky asset")

    @property
    def grid(self) -> Grid:
        return self.lift.grid

    @property
    def d(self) -> int:
        return self.S.shape[-1] - 1

    @classmethod
    def from_risky(cls, risky, lift: RoughPathL2 | RoughPath1D, info: dict | None = None) -> "RoughMarket":
        """Prepend the riskless asset to risky prices and zero-extend the lift."""
        risky = np.asarray(risky, dtype=float)
        if isinstance(lift, RoughPath1D):
            S = np.stack([np.ones_like(risky), risky], axis=-1)
            return cls(S, lift, dict(info or {}))
        S = np.concatenate([np.ones(risky.shape[:-1] + (1,)), risky], axis=-1)
        return cls(S, lift.zero_extend(1), dict(info or {}))

    def __getitem__(self, item) -> "RoughMarket":
        return RoughMarket(self.S[item], self.lift[item], self.info)


def exp_fbm_market(M: int, d: int, H: float = 0.7, sigma: float = 0.5, N: int = 128, R: int = 64,
                   T: float = 1.0, seed: int = 0, scheme: str = "young", start: int = 0) -> RoughMarket:
    """``S^e = exp(sigma B^{H,e})`` with independent fBm coordinates (BM for ``H = 1/2``).

    The level-2 lift of the prices on ``N`` steps comes from sums over a grid
    ``R`` times finer (``young`` is the trapezoid rule, ``ito`` left points);
    ``R = 1`` gives the lift of the piecewise-linear interpolant.  Paths
    ``start .. start+M`` of the counter-based stream are used.
    """
    noise = FractionalBM(H) if H != 0.5 else BrownianMotion()
    fine = Grid(T, N * R)
    B = np.stack([noise.sample(fine, seed, start, M, stream=e) for e in range(d)], axis=-1)
    lift = level2_from_fine(np.exp(sigma * B), Grid(T, N), scheme, fine, min_refinement=1)
    return RoughMarket.from_risky(lift.x, lift, {"H": H, "sigma": sigma, "R": R, "scheme": scheme})


@dataclass
class Strategy:
    """Holdings controlled by the market lift and an exit grid index.

    After ``exit`` the position is liquidated into the riskless asset: the
    gain is frozen and no further trading happens.
    """

    portfolio: ControlledPath
    exit: int | None = None

    def exit_index(self, market: RoughMarket) -> int:
        N = market.grid.N
        if self.exit is None:
            return N
        if not 0 <= self.exit <= N:
            raise ValueError(f"exit index {self.exit} off the grid")
        return int(self.exit)


def _freeze(path: np.ndarray, j: int) -> np.ndarray:
    out = np.array(path, dtype=float)
    out[..., j:] = out[..., j : j + 1]
    return out


def gain_process(strategy: Strategy, market: RoughMarket, mesh_levels: Sequence[int] = (1,)):
    """``G_t = int_0^{tau ^ t} Y dS`` on the grid, plus refinement data at ``tau``."""
    cp = strategy.portfolio
    if cp.base is not market.lift:
        raise ValueError("portfolio is not controlled by the market lift")
    j = strategy.exit_index(market)
    G = _freeze(integral_path(cp, market.lift), j)
    res = rough_integral(cp, market.lift, 0, j, [m for m in mesh_levels if j % m == 0] or [1])
    return G, res


def portfolio_value(strategy: Strategy, market: RoughMarket) -> np.ndarray:
    """``V_t = sum_n Y^(1),n_t S^n_t``, frozen after the exit."""
    if not isinstance(market.lift, RoughPathL2):
        raise ValueError("a one-dimensional market needs the value path supplied")
    Y1 = strategy.portfolio.Y[0]
    V = np.sum(Y1 * market.S, axis=-1)
    return _freeze(V, strategy.exit_index(market))


def self_financing_residual(strategy: Strategy, market: RoughMarket, value=None) -> np.ndarray:
    """``sup_t |V_t - V_0 - G_t|`` per path."""
    V = portfolio_value(strategy, market) if value is None else _freeze(value, strategy.exit_index(market))
    G, _ = gain_process(strategy, market)
    return np.max(np.abs(V - V[..., :1] - G), axis=-1)


def power_mean(p: float, prices, axis: int = -1) -> np.ndarray:
    """``((1/n) sum S_e^p)^(1/p)``."""
    if p == 0:
        raise ValueError("p = 0 (geometric mean limit) is not supported")
    S = np.asarray(prices, dtype=float)
    if np.any(S <= 0):
        raise ValueError("power means need strictly positive prices")
    return np.mean(S**p, axis=axis) ** (1.0 / p)


def p_weights(p: float, S) -> tuple[np.ndarray, np.ndarray]:
    """Gradient ``F(S) = M S^{p-1} / sum S^p`` of the p-mean and its Hessian."""
    S = np.asarray(S, dtype=float)
    M = power_mean(p, S)[..., None]
    Q = np.sum(S**p, axis=-1)[..., None]
    s = S ** (p - 1)
    F = M * s / Q
    H = (1 - p) * (M / Q**2)[..., None] * s[..., :, None] * s[..., None, :]
    H = H + (p - 1) * (M / Q)[..., None] * np.einsum("...i,ij->...ij", S ** (p - 2), np.eye(S.shape[-1]))
    return F, H


def p_portfolio(p: float, market: RoughMarket, exit: int | None = None) -> Strategy:
    """Hold ``F(S_t)`` units of every asset; the Gubinelli part is ``DF(S_t)``.

    The value of this portfolio is the p-mean itself.  Warns when the market
    lift is not geometric, where the self-financing property fails.
    """
    if not isinstance(market.lift, RoughPathL2):
        raise ValueError("p-portfolios need a level-2 lift of all prices")
    F, H = p_weights(p, market.S)
    gap = geometric_check_l2(market.lift)
    if gap > GEOMETRIC_TOL * max(1.0, float(np.max(np.abs(market.S)))):
        warnings.warn(f"market lift is not geometric (gap {gap:.3g}); the portfolio need not self-finance",
                      stacklevel=2)
    return Strategy(ControlledPath(market.lift, [F, H], {"p": p}), exit)


@dataclass
class ArbitrageReport:
    p: float
    q: float
    value_gain: np.ndarray
    integral_gain: np.ndarray
    min_gain: np.ndarray
    terminal_gain: np.ndarray
    sf_residual_q: np.ndarray
    sf_residual_p: np.ndarray
    degenerate: np.ndarray
    geometric_gap: float
    tol: float

    @property
    def self_financing(self) -> bool:
        return bool(np.all(self.sf_residual_q <= self.tol) and np.all(self.sf_residual_p <= self.tol))

    @property
    def claim_holds(self) -> bool:
        """Pathwise arbitrage: self-financing legs, gains never negative, positive at the end."""
        live = ~self.degenerate
        return (self.self_financing and bool(np.all(self.min_gain >= 0))
                and bool(np.all(self.terminal_gain[live] > 0)))


def arbitrage_demo(p: float, q: float, market: RoughMarket, tol: float = 1e-4) -> ArbitrageReport:
    """Long the q-portfolio, short the p-portfolio, starting from equal prices.

    ``value_gain`` is ``M^q_t - M^p_t`` (net of the initial value) and
    ``integral_gain`` the compensated-sum gain of the combined position.
    """
    if not p < q:
        raise ValueError("need p < q")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        long, short = p_portfolio(q, market), p_portfolio(p, market)
    Mq, Mp = power_mean(q, market.S), power_mean(p, market.S)
    value_gain = (Mq - Mp) - (Mq - Mp)[..., :1]
    Gq, _ = gain_process(long, market)
    Gp, _ = gain_process(short, market)
    spread = np.max(market.S, axis=-1) - np.min(market.S, axis=-1)
    degenerate = np.all(spread <= 1e-14 * np.max(market.S, axis=-1), axis=-1)
    return ArbitrageReport(p, q, value_gain, Gq - Gp, np.min(value_gain, axis=-1), value_gain[..., -1],
                           self_financing_residual(long, market), self_financing_residual(short, market),
                           degenerate, geometric_check_l2(market.lift), tol)


def renorm_clock(G2, level: float) -> np.ndarray | int:
    """First grid index with ``G2 > level`` (per path for batched ``G2``)."""
    G2 = np.asarray(G2, dtype=float)
    if np.any(np.diff(G2, axis=-1) < 0):
        raise ValueError("the clock needs a non-decreasing renormalisation")
    above = G2 > level
    if not np.all(np.any(above, axis=-1)):
        raise ValueError(f"level {level} is never exceeded")
    idx = np.argmax(above, axis=-1)
    return int(idx) if idx.ndim == 0 else idx


def clock_time_change(rp: RoughPath1D, G2, T_new: float, N_new: int) -> tuple[FunctionLevels, np.ndarray, float]:
    """Rough path seen through the clock of ``G2``: ``X~_{s,t} = X_{tau_s, tau_t}``.

    Returns the levels, the source indices ``tau`` and the largest overshoot
    ``G2(tau_t) - t`` caused by rounding the clock to the grid.
    """
    G2 = np.asarray(G2, dtype=float)
    new = Grid(T_new, N_new)
    idx = np.array([0] + [renorm_clock(G2, t) for t in new.points[1:]])
    rounding = float(np.max(np.abs(G2[idx] - new.points)))

    def level(i, s, t):
        return rp.level(i, idx[s], idx[t])

    return FunctionLevels(rp.k, new, level, rp.alpha), idx, rounding



def write_market_csv(market: RoughMarket, V, G, fh) -> None:
    """``t,S0..Sd,V,G`` for a single path."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t"] + [f"S{e}" for e in range(market.d + 1)] + ["V", "G"])
    for j, t in enumerate(market.grid.points):
        w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in market.S[j]] + [f"{V[j]:.17g}", f"{G[j]:.17g}"])


def write_arbitrage_csv(rep: ArbitrageReport, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path", "min_gain", "terminal_gain", "sf_residual_q", "sf_residual_p", "degenerate"])
    for i in range(rep.min_gain.size):
        w.writerow([i, f"{rep.min_gain.flat[i]:.17g}", f"{rep.terminal_gain.flat[i]:.17g}",
                    f"{rep.sf_residual_q.flat[i]:.17g}", f"{rep.sf_residual_p.flat[i]:.17g}",
                    int(rep.degenerate.flat[i])])
