"""Integrands: controlled paths built from polynomials, smooth functions,
signature components and simple (buy at ``s``, sell at ``u``) positions."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .roughpath import RoughPath1D, RoughPathL2


class ControlledPath:
    """``Y = (Y^(1), ..., Y^(k))`` sampled on the grid of ``base``.

    Over a 1-D rough path each component has shape ``(..., N+1)``.  Over a
    level-2 path in ``R^d`` the components are ``Y^(1)`` of shape
    ``(..., N+1, d)`` and ``Y^(2)`` of shape ``(..., N+1, d, d)``.
    """

    def __init__(self, base, Y: Sequence, info: dict | None = None):
        self.base = base
        self.Y = [np.asarray(y, dtype=float) for y in Y]
        self.info = dict(info or {})
        n = base.grid.N + 1
        for i, y in enumerate(self.Y, start=1):
            axis = -1 if isinstance(base, RoughPath1D) else -(i + 1)
            if y.ndim and y.shape[axis] not in (1, n):
                raise ValueError(f"component {i} has {y.shape[axis]} samples, grid has {n}")

    @property
    def k(self) -> int:
        return len(self.Y)

    def __add__(self, other: "ControlledPath") -> "ControlledPath":
        if other.base is not self.base:
            raise ValueError("controlled paths over different rough paths")
        return ControlledPath(self.base, [a + b for a, b in zip(self.Y, other.Y)])

    def __mul__(self, c: float) -> "ControlledPath":
        return ControlledPath(self.base, [c * y for y in self.Y])

    __rmul__ = __mul__

    def component(self, i: int) -> np.ndarray:
        return self.Y[i - 1]


@dataclass
class PiecewiseControlledPath:
    """Controlled on each ``[breakpoints[j], breakpoints[j+1]]`` (grid indices).

    The holdings ``Y^(1)`` must be continuous across breakpoints.
    """

    breakpoints: Sequence[int]
    segments: Sequence[ControlledPath]
    continuity_tol: float = 1e-12

    def __post_init__(self):
        b = list(self.breakpoints)
        if len(b) != len(self.segments) + 1 or any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError("breakpoints must be increasing with one more entry than segments")
        base = self.segments[0].base
        if b[0] != 0 or b[-1] != base.grid.N:
            raise ValueError("breakpoints must span the whole grid")
        for j, (left, right) in enumerate(zip(self.segments, self.segments[1:]), start=1):
            jump = np.max(np.abs(_at(left.Y[0], b[j], base) - _at(right.Y[0], b[j], base)))
            if jump > self.continuity_tol:
                raise ValueError(f"jump of size {jump:.3g} at breakpoint {b[j]}; use SimpleIntegrand for jumps")
        self.continuous = True

    @property
    def base(self):
        return self.segments[0].base

    @property
    def k(self) -> int:
        return self.segments[0].k

    def component(self, i: int) -> np.ndarray:
        """Component ``i`` stitched from the segment active at each grid time."""
        base = self.base
        n = base.grid.N + 1
        parts = [np.broadcast_to(seg.Y[i - 1], _full_shape(seg.Y[i - 1], base, i)) for seg in self.segments]
        out = np.zeros(np.broadcast_shapes(*(p.shape for p in parts)))
        seg_of = np.searchsorted(np.asarray(self.breakpoints[1:]), np.arange(n), side="right")
        seg_of = np.minimum(seg_of, len(self.segments) - 1)
        for j, p in enumerate(parts):
            idx = np.nonzero(seg_of == j)[0]
            _set(out, idx, _take(np.broadcast_to(p, out.shape), idx, base, i), base, i)
        return out


def _time_axis(base, i: int) -> int:
    return -1 if isinstance(base, RoughPath1D) else -(i + 1)


def _full_shape(y, base, i):
    shape = list(y.shape)
    ax = _time_axis(base, i)
    if not shape:
        return (base.grid.N + 1,)
    shape[ax] = base.grid.N + 1
    return tuple(shape)


def _take(y, idx, base, i):
    return np.take(y, idx, axis=_time_axis(base, i))


def _at(y, j, base, i: int = 1):
    y = np.asarray(y)
    if y.ndim == 0:
        return y
    ax = _time_axis(base, i)
    return np.take(y, 0 if y.shape[ax] == 1 else j, axis=ax)


def _set(out, idx, vals, base, i):
    ax = _time_axis(base, i) % out.ndim
    sl = [slice(None)] * out.ndim
    sl[ax] = idx
    out[tuple(sl)] = vals


@dataclass
class SimpleIntegrand:
    """Hold ``xi`` (known at ``s``) units of the noise on ``[s, u]``."""

    xi: np.ndarray
    s: int
    u: int

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        if self.s > self.u:
            raise ValueError("need s <= u")
        if not np.all(np.isfinite(self.xi)):
            raise ValueError("xi must be finite")


@dataclass
class FunctionTable:
    """``dx[j](t, x)`` is the ``j``-th space derivative of ``F``; ``dt`` the time derivative."""

    dx: Sequence[Callable]
    dt: Callable | None = None
    name: str = "F"

    def derivative(self, j: int) -> Callable:
        if j >= len(self.dx) or self.dx[j] is None:
            raise ValueError(f"{self.name}: derivative of order {j} missing from the table")
        return self.dx[j]


def polynomial_table(coeffs: Sequence[float], order: int = 6, name: str | None = None) -> FunctionTable:
    """Derivative table of ``sum c_j x^j`` (ascending coefficients)."""
    c = np.asarray(coeffs, dtype=float)
    dx = []
    for j in range(order + 1):
        cj = npoly.polyder(c, j) if j else c
        dx.append(lambda t, x, cj=cj: npoly.polyval(x, cj) + 0.0 * np.asarray(t))
    return FunctionTable(dx, lambda t, x: 0.0 * x, name or f"poly{tuple(c)}")


def sin_table() -> FunctionTable:
    f = [np.sin, np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x)]
    dx = [lambda t, x, j=j: f[j % 4](x) for j in range(8)]
    return FunctionTable(dx, lambda t, x: 0.0 * x, "sin")


def polynomial_controlled(P: Sequence[float], rp: RoughPath1D, levels: int | None = None) -> ControlledPath:
    """``Y^(i) = D^(i-1) P(X)`` for ``i = 1 .. levels`` (default ``k``).

    Components beyond ``k`` pair with the Bell extension of the rough path;
    they vanish from the limit but sharpen the finite-mesh sums.
    """
    c = np.asarray(P, dtype=float)
    Y = [npoly.polyval(rp.x, npoly.polyder(c, i) if i else c) for i in range(levels or rp.k)]
    return ControlledPath(rp, Y, {"renorm_deterministic": rp.renorm.deterministic})


def markovian_controlled(F: FunctionTable, rp: RoughPath1D) -> ControlledPath:
    """``Y^(i) = D_x^(i) F(t, X_t)`` for ``i = 1 .. k`` (the Ito-formula integrand)."""
    t = rp.grid.points
    Y = [np.broadcast_to(F.derivative(i)(t, rp.x), rp.x.shape) * 1.0 for i in range(1, rp.k + 1)]
    return ControlledPath(rp, Y, {"renorm_deterministic": rp.renorm.deterministic})


def signature_integrand(rp: RoughPath1D, n: int, s, levels: int | None = None) -> PiecewiseControlledPath | ControlledPath:
    """Zero before ``s``; after ``s`` the components ``(X^n_{s,.}, X^{n-1}_{s,.}, ..., 1, 0, ...)``.

    ``s`` is a grid time; its integral over ``[s, t]`` is level ``n+1`` on
    ``[s, t]``, exactly at every mesh once ``levels >= n+1`` (Chen).
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    si = rp.grid.index(s) if isinstance(s, float) else int(s)
    if not 0 <= si <= rp.grid.N:
        raise ValueError(f"start index {si} off the grid")
    if n == 0 and si > 0:
        raise ValueError("n=0 after s>0 jumps at s; that is a SimpleIntegrand")
    t = np.arange(rp.grid.N + 1)
    k = levels or rp.k
    after = []
    for i in range(1, k + 1):
        j = n + 1 - i
        if j < 0:
            after.append(np.zeros(rp.x.shape))
            continue
        y = np.broadcast_to(rp.level(j, np.full_like(t, si), t), rp.x.shape).copy()
        y[..., :si] = 0.0
        after.append(y)
    seg = ControlledPath(rp, after, {"signature": (n, si)})
    if si == 0:
        return seg
    zero = ControlledPath(rp, [np.zeros(rp.x.shape) for _ in range(k)])
    return PiecewiseControlledPath([0, si, rp.grid.N], [zero, seg])


def remainder_profile(cp: ControlledPath, alpha: float | None = None, max_lag: int | None = None) -> list[float]:
    """Empirical constants of the controlled-path remainder, one per level ``i < k``.

    ``sup |Y^(i)_{s,t} - sum_{j>i} Y^(j)_s X^{j-i}_{s,t}| / |t-s|^{(k+1-i) alpha}``.
    """
    base = cp.base
    alpha = alpha if alpha is not None else getattr(base, "alpha", None)
    if alpha is None:
        raise ValueError("alpha needed for a level-2 base")
    k, N, h = cp.k, base.grid.N, base.grid.h
    Y = [np.broadcast_to(y, _full_shape(y, base, i)) for i, y in enumerate(cp.Y, start=1)]
    out = [0.0] * (k - 1)
    for lag in range(1, (max_lag or N) + 1):
        s = np.arange(N + 1 - lag)
        t = s + lag
        if isinstance(base, RoughPath1D):
            lev = base.levels(s, t, k)
            for i in range(1, k):
                r = Y[i - 1][..., t] - Y[i - 1][..., s]
                for j in range(i + 1, k + 1):
                    r = r - Y[j - 1][..., s] * lev[j - i]
                c = float(np.max(np.abs(r))) / (lag * h) ** ((k + 1 - i) * alpha)
                out[i - 1] = max(out[i - 1], c)
        else:
            dX = base.increment(s, t)
            r = Y[0][..., t, :] - Y[0][..., s, :] - np.einsum("...la,...lab->...lb", dX, Y[1][..., s, :, :])
            c = float(np.max(np.abs(r))) / (lag * h) ** (2 * alpha)
            out[0] = max(out[0], c)
    return out


def write_components_csv(cp, grid, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    comps = [cp.component(i) for i in range(1, cp.k + 1)]
    w.writerow(["t"] + [f"Y{i}" for i in range(1, cp.k + 1)])
    for j, t in enumerate(grid.points):
        w.writerow([f"{t:.17g}"] + [f"{float(np.broadcast_to(c, (grid.N + 1,))[j]):.17g}" for c in comps])
