"""Rough paths: 1-D Bell-polynomial lifts and multi-dimensional level-2 lifts.

A one-dimensional rough path of regularity ``alpha`` is a sampled path ``X``
together with renormalisation terms ``G^2, ..., G^k`` (``k = floor(1/alpha)``);
level ``i`` on ``[s, t]`` is ``P^{(k)}_i(X_{s,t}, G^2_{s,t}, ..., G^k_{s,t})``.
Levels are evaluated on demand from grid indices, so nothing of size ``N^2``
is ever stored.

All path arrays carry the time axis last (``(..., N+1)``) for 1-D objects and
second to last (``(..., N+1, d)``) for multi-dimensional ones; leading axes are
independent Monte-Carlo paths.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .bell import bell_eval, bell_sequence
from .gauss import Grid, SampledPath, VarianceFunction


class ChenViolation(ValueError):
    """Level data do not satisfy Chen's relation within tolerance."""

    def __init__(self, residual: float, triple: tuple[int, int, int], level: int):
        self.residual = residual
        self.triple = triple
        self.level = level
        super().__init__(f"Chen residual {residual:.3e} at level {level}, triple (s,u,t)={triple}")


def level_count(alpha: float) -> int:
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return int(math.floor(1.0 / alpha + 1e-12))


def _path_array(X) -> tuple[np.ndarray, Grid | None]:
    if isinstance(X, SampledPath):
        return X.x, X.grid
    return np.asarray(X, dtype=float), None


@dataclass
class RenormTerms:
    """Renormalisation terms ``G^2 .. G^k``; ``G[0]`` is ``G^2``.

    Each entry is an array over the grid (time axis last), shared by all
    paths when one-dimensional (``deterministic``) or per path otherwise.
    """

    k: int
    G: list

    def __post_init__(self):
        if len(self.G) != self.k - 1:
            raise ValueError(f"level {self.k} needs {self.k - 1} renormalisation terms, got {len(self.G)}")
        self.G = [np.asarray(g, dtype=float) for g in self.G]
        for i, g in enumerate(self.G, start=2):
            if not np.all(np.isfinite(g)):
                raise ValueError(f"G^{i} has non-finite entries")
            if np.any(np.abs(g[..., 0]) > 1e-12):
                raise ValueError(f"G^{i} must vanish at time 0")

    @property
    def deterministic(self) -> bool:
        return all(g.ndim == 1 for g in self.G)

    def total_variation(self) -> list[float]:
        return [float(np.max(np.sum(np.abs(np.diff(g, axis=-1)), axis=-1))) for g in self.G]

    @classmethod
    def zeros(cls, k: int, n_points: int) -> "RenormTerms":
        return cls(k, [np.zeros(n_points) for _ in range(k - 1)])


class RoughPath1D:
    """One-dimensional rough path generated by Bell polynomials."""

    def __init__(self, X, renorm: RenormTerms, alpha: float, grid: Grid | None = None):
        x, g = _path_array(X)
        self.x = x
        self.grid = grid or g or Grid(1.0, x.shape[-1] - 1)
        if x.shape[-1] != self.grid.N + 1:
            raise ValueError("path length does not match grid")
        self.alpha = float(alpha)
        self.k = level_count(alpha)
        if renorm.k != self.k:
            raise ValueError(f"renormalisation has {renorm.k - 1} terms, expected {self.k - 1} for alpha={alpha}")
        for gi in renorm.G:
            if gi.shape[-1] != self.grid.N + 1:
                raise ValueError("renormalisation grid mismatch")
        self.renorm = renorm

    @property
    def G(self) -> list:
        return self.renorm.G

    @property
    def is_geometric(self) -> bool:
        return all(not np.any(g) for g in self.G)

    def increments(self, s, t) -> list:
        """``[X_{s,t}, G^2_{s,t}, ..., G^k_{s,t}]``."""
        return [self.x[..., t] - self.x[..., s]] + [g[..., t] - g[..., s] for g in self.G]

    def level(self, i: int, s, t):
        """Level ``i`` on ``[t_s, t_t]``; levels above ``k`` are the Bell extension."""
        if i == 0:
            return np.ones_like(self.x[..., t] - self.x[..., s])
        if i <= self.k:
            return bell_eval(self.k, i, self.increments(s, t))
        a = self.increments(s, t) + [0.0] * (i - self.k)
        return bell_eval(i, i, a)

    def levels(self, s, t, n_max: int | None = None) -> list:
        """Levels ``0 .. n_max`` (default ``k``) at once."""
        return bell_sequence(self.increments(s, t), self.k if n_max is None else n_max)

    def step_levels(self, n_max: int | None = None) -> list:
        """Levels ``0 .. n_max`` on every grid step ``[t_i, t_{i+1}]``, cached."""
        n_max = self.k if n_max is None else n_max
        cached = getattr(self, "_steps", None)
        if cached is None or len(cached) <= n_max:
            i = np.arange(self.grid.N)
            cached = self.levels(i, i + 1, n_max)
            self._steps = cached
        return cached[: n_max + 1]

    def with_path(self, x) -> "RoughPath1D":
        return RoughPath1D(x, self.renorm, self.alpha, self.grid)

    def __getitem__(self, item) -> "RoughPath1D":
        """Select Monte-Carlo paths (leading axes)."""
        G = [g if g.ndim == 1 else g[item] for g in self.G]
        return RoughPath1D(self.x[item], RenormTerms(self.k, G), self.alpha, self.grid)


class FunctionLevels:
    """Level data given by a callable ``level(i, s, t)``; used for imported or
    perturbed level tables that need not satisfy Chen's relation."""

    def __init__(self, k: int, grid: Grid, level: Callable, alpha: float | None = None):
        self.k = k
        self.grid = grid
        self._level = level
        self.alpha = alpha

    def level(self, i: int, s, t):
        return self._level(i, s, t)


def lift_from_renorm(X, G, alpha: float, grid: Grid | None = None) -> RoughPath1D:
    """Rough path with levels ``P^{(k)}_i(X_{s,t}, G^2_{s,t}, ..., G^k_{s,t})``."""
    if not isinstance(G, RenormTerms):
        G = list(G)
        k = level_count(alpha)
        if len(G) != k - 1:
            raise ValueError(f"alpha={alpha} needs {k - 1} renormalisation terms, got {len(G)}")
        G = RenormTerms(k, G)
    return RoughPath1D(X, G, alpha, grid)


def geometric_lift(X, alpha: float, grid: Grid | None = None) -> RoughPath1D:
    x, g = _path_array(X)
    k = level_count(alpha)
    return RoughPath1D(x, RenormTerms.zeros(k, x.shape[-1]), alpha, grid or g)


def hermite_lift(X, V: VarianceFunction, alpha: float, grid: Grid | None = None) -> RoughPath1D:
    """Hermite lift: ``G^2 = -Var/2`` and no higher renormalisation."""
    x, g = _path_array(X)
    grid = grid or g or V.grid
    if V.grid.N != grid.N or not math.isclose(V.grid.T, grid.T) or V.samples.shape[-1] != x.shape[-1]:
        raise ValueError(f"variance sampled on {V.grid}, path on {grid}")
    k = level_count(alpha)
    G = [V.renorm] + [np.zeros(grid.N + 1) for _ in range(k - 2)]
    return RoughPath1D(x, RenormTerms(k, G), alpha, grid)


def ito_lift(X, alpha: float = 0.45, grid: Grid | None = None) -> RoughPath1D:
    """Lift renormalised by minus half the realised quadratic variation.

    On the simulation grid its compensated sums reduce to left-point (Ito)
    Riemann sums.
    """
    x, g = _path_array(X)
    k = level_count(alpha)
    if k < 2:
        raise ValueError("an Ito lift needs k >= 2")
    qv = np.zeros_like(x)
    qv[..., 1:] = np.cumsum(np.diff(x, axis=-1) ** 2, axis=-1)
    G = [-0.5 * qv] + [np.zeros(x.shape[-1]) for _ in range(k - 2)]
    return RoughPath1D(x, RenormTerms(k, G), alpha, grid or g)


def _series_inverse(a: list) -> list:
    b = [np.ones_like(a[0])]
    for n in range(1, len(a)):
        acc = -a[n] * b[0]
        for j in range(1, n):
            acc = acc - a[n - j] * b[j]
        b.append(acc)
    return b


def tabulated_levels(values: np.ndarray, grid: Grid, alpha: float | None = None) -> FunctionLevels:
    """Rough path from its levels on ``[0, t]``: ``values[i, ..., t]`` is level ``i``.

    General intervals use ``X_{s,t} = X_{0,s}^{-1} X_{0,t}`` in the truncated
    power series algebra, so Chen's relation holds by construction.
    """
    values = np.asarray(values, dtype=float)
    k = values.shape[0] - 1

    def level(i, s, t):
        a = [values[j][..., s] for j in range(k + 1)]
        b = _series_inverse(a)
        return sum(b[j] * values[i - j][..., t] for j in range(i + 1))

    return FunctionLevels(k, grid, level, alpha)


def _random_triples(n_points: int, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.sort(rng.integers(0, n_points, size=(count, 3)), axis=1)


def chen_residual(rp, sample_triples: int = 10_000, seed: int = 0) -> float:
    """Max over random grid triples ``s <= u <= t`` and all levels of the Chen defect."""
    tri = _random_triples(rp.grid.N + 1, sample_triples, seed)
    s, u, t = tri[:, 0], tri[:, 1], tri[:, 2]
    if isinstance(rp, RoughPathL2):
        Xsu, Xut, Xst = rp.increment(s, u), rp.increment(u, t), rp.increment(s, t)
        r1 = np.abs(Xst - Xsu - Xut)
        r2 = np.abs(rp.level2(s, t) - rp.level2(s, u) - rp.level2(u, t) - Xsu[..., :, None] * Xut[..., None, :])
        return float(max(r1.max(), r2.max()))
    worst = 0.0
    su = [rp.level(j, s, u) for j in range(rp.k + 1)]
    ut = [rp.level(j, u, t) for j in range(rp.k + 1)]
    for i in range(1, rp.k + 1):
        comp = sum(su[j] * ut[i - j] for j in range(i + 1))
        worst = max(worst, float(np.max(np.abs(rp.level(i, s, t) - comp))))
    return worst


def _worst_chen(rp, tol: float, sample_triples: int, seed: int):
    tri = _random_triples(rp.grid.N + 1, sample_triples, seed)
    s, u, t = tri[:, 0], tri[:, 1], tri[:, 2]
    su = [rp.level(j, s, u) for j in range(rp.k + 1)]
    ut = [rp.level(j, u, t) for j in range(rp.k + 1)]
    for i in range(1, rp.k + 1):
        st = rp.level(i, s, t)
        comp = sum(su[j] * ut[i - j] for j in range(i + 1))
        rel = np.abs(st - comp) / np.maximum(1.0, np.abs(st))
        rel = rel.reshape(-1, len(s)).max(axis=0) if rel.ndim > 1 else rel
        j = int(np.argmax(rel))
        if rel[j] > tol:
            raise ChenViolation(float(rel[j]), (int(s[j]), int(u[j]), int(t[j])), i)


def extract_renorm(levels, alpha: float | None = None, chen_tol: float = 1e-8,
                   sample_triples: int = 2000, seed: int = 0) -> RenormTerms:
    """Recover the renormalisation terms encoded in a 1-D rough path.

    Ascending-level recursion: ``F^j(t) = Y^j_{0,t} - P_j(Y_{0,t}, F^2_{0,t}, ...,
    F^{j-1}_{0,t}, 0)``.  Chen's relation is checked on random triples first.
    """
    k = levels.k if alpha is None else level_count(alpha)
    _worst_chen(levels, chen_tol, sample_triples, seed)
    t = np.arange(levels.grid.N + 1)
    zero = np.zeros_like(t)
    a = [levels.level(1, zero, t)]
    F = []
    for j in range(2, k + 1):
        f = levels.level(j, zero, t) - bell_eval(j, j, a + [0.0])
        f = np.array(f, dtype=float)
        f[..., 0] = 0.0
        F.append(f)
        a.append(f)
    return RenormTerms(k, F)


def holder_constant(values: Callable, grid: Grid, gamma: float, max_lag: int | None = None) -> float:
    """``sup |v(s,t)| / (t-s)^gamma`` over grid pairs ``s < t``.

    ``values(s_idx, t_idx)`` must accept index arrays.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    N = grid.N
    best = 0.0
    for lag in range(1, (max_lag or N) + 1):
        s = np.arange(N + 1 - lag)
        v = np.abs(values(s, s + lag))
        best = max(best, float(np.max(v)) / (lag * grid.h) ** gamma)
    return best


def level_fn(rp, i: int) -> Callable:
    return lambda s, t: rp.level(i, s, t)


class RoughPathL2:
    """Level-2 rough path in ``R^d`` built from per-interval increments.

    ``A[..., i, :, :]`` is the second level on ``[t_i, t_{i+1}]``; any other
    interval is composed with Chen's relation through the running sums
    ``C_t = X^2_{0,t}``.
    """

    def __init__(self, X, A, scheme: str, grid: Grid | None = None):
        if isinstance(X, SampledPath):
            grid = grid or X.grid
            X = X.values
        x = np.asarray(X, dtype=float)
        A = np.asarray(A, dtype=float)
        if x.ndim < 2:
            raise ValueError("multi-dimensional path needs shape (..., N+1, d)")
        self.grid = grid or Grid(1.0, x.shape[-2] - 1)
        if x.shape[-2] != self.grid.N + 1 or A.shape[-3:] != (self.grid.N, x.shape[-1], x.shape[-1]):
            raise ValueError(f"shapes {x.shape} and {A.shape} do not match grid {self.grid}")
        self.x = x
        self.A = A
        self.scheme = scheme
        self.k = 2
        dx = np.diff(x, axis=-2)
        x0 = x[..., :-1, :] - x[..., :1, :]
        step = A + x0[..., :, None] * dx[..., None, :]
        C = np.zeros(x.shape[:-2] + (self.grid.N + 1,) + A.shape[-2:])
        np.cumsum(step, axis=-3, out=C[..., 1:, :, :])
        self.C = C

    @property
    def dim(self) -> int:
        return self.x.shape[-1]

    def increment(self, s, t):
        return self.x[..., t, :] - self.x[..., s, :]

    def level2(self, s, t):
        x0 = self.x[..., 0:1, :] if np.ndim(s) else self.x[..., 0, :]
        x0s = self.x[..., s, :] - x0
        xst = self.increment(s, t)
        return self.C[..., t, :, :] - self.C[..., s, :, :] - x0s[..., :, None] * xst[..., None, :]

    def level(self, i: int, s, t):
        if i == 0:
            return np.ones(np.shape(self.increment(s, t))[:-1])
        if i == 1:
            return self.increment(s, t)
        if i == 2:
            return self.level2(s, t)
        raise ValueError("level-2 rough path has no level above 2")

    def as_1d(self, alpha: float = 0.45) -> FunctionLevels:
        """View a one-dimensional level-2 path through the scalar level accessor."""
        if self.dim != 1:
            raise ValueError("only a one-dimensional path has a scalar view")

        def lev(i, s, t):
            v = self.level(i, s, t)
            return v if i == 0 else v[..., 0] if i == 1 else v[..., 0, 0]

        return FunctionLevels(2, self.grid, lev, alpha)

    @classmethod
    def from_1d(cls, rp: RoughPath1D, scheme: str = "hermite") -> "RoughPathL2":
        if rp.k < 2:
            raise ValueError("need a rough path with a second level")
        i = np.arange(rp.grid.N)
        A = rp.level(2, i, i + 1)
        return cls(rp.x[..., None], A[..., None, None], scheme, rp.grid)

    def zero_extend(self, n_front: int = 1) -> "RoughPathL2":
        """Prepend constant coordinates (e.g. a riskless asset); their levels vanish."""
        pad = [(0, 0)] * (self.x.ndim - 1) + [(n_front, 0)]
        x = np.pad(self.x, pad)
        apad = [(0, 0)] * (self.A.ndim - 2) + [(n_front, 0), (n_front, 0)]
        return RoughPathL2(x, np.pad(self.A, apad), self.scheme, self.grid)

    def __getitem__(self, item) -> "RoughPathL2":
        return RoughPathL2(self.x[item], self.A[item], self.scheme, self.grid)


def level2_from_fine(X_fine, coarse: Grid, scheme: str, fine_grid: Grid | None = None,
                     min_refinement: int = 16) -> RoughPathL2:
    """Level-2 lift on ``coarse`` from Riemann sums over a finer sampling.

    ``scheme="ito"`` uses left points; ``"stratonovich"`` and ``"young"`` use the
    trapezoid rule, i.e. the exact iterated integrals of the linear interpolant.
    """
    if isinstance(X_fine, SampledPath):
        fine_grid = fine_grid or X_fine.grid
        X_fine = X_fine.values
    x = np.asarray(X_fine, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n_fine = x.shape[-2] - 1
    if n_fine % coarse.N:
        raise ValueError(f"{n_fine} fine steps do not refine {coarse.N} coarse steps by an integer factor")
    R = n_fine // coarse.N
    if R < min_refinement:
        raise ValueError(f"refinement factor {R} below the minimum {min_refinement}")
    if scheme not in ("ito", "stratonovich", "young"):
        raise ValueError(f"unknown scheme {scheme!r}")
    d = x.shape[-1]
    dx = np.diff(x, axis=-2).reshape(x.shape[:-2] + (coarse.N, R, d))
    inner = np.cumsum(dx, axis=-2) - dx
    if scheme != "ito":
        inner = inner + 0.5 * dx
    A = np.einsum("...nrd,...nre->...nde", inner, dx)
    return RoughPathL2(x[..., ::R, :], A, scheme, coarse)


def geometric_check_l2(rp: RoughPathL2, s=None, t=None) -> float:
    """Max of ``|X2_ij + X2_ji - X_i X_j|`` over the given pairs.

    Defaults to every grid interval and every interval ``[0, t]``.
    """
    if s is None:
        n = np.arange(rp.grid.N)
        s = np.concatenate([n, np.zeros(rp.grid.N, dtype=int)])
        t = np.concatenate([n + 1, n + 1])
    X2 = rp.level2(s, t)
    x = rp.increment(s, t)
    sym = X2 + np.swapaxes(X2, -1, -2) - x[..., :, None] * x[..., None, :]
    return float(np.max(np.abs(sym)))


def write_levels_csv(rp, pairs: Sequence[tuple[int, int]], fh, levels: Sequence[int] | None = None) -> None:
    """Write ``i,s,t,value`` rows for a single (unbatched) 1-D rough path."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["i", "s", "t", "value"])
    pts = rp.grid.points
    for i in levels or range(1, rp.k + 1):
        for s, t in pairs:
            w.writerow([i, f"{pts[s]:.17g}", f"{pts[t]:.17g}", f"{float(rp.level(i, s, t)):.17g}"])


def write_renorm_csv(renorm: RenormTerms, grid: Grid, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t"] + [f"G{i}" for i in range(2, renorm.k + 1)])
    for j, t in enumerate(grid.points):
        w.writerow([f"{t:.17g}"] + [f"{float(g[..., j]):.17g}" for g in renorm.G])
