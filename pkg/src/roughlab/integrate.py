"""Rough integrals as compensated Riemann sums, Young integrals, and the
rough Ito formula as a numerical residual."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .controlled import (ControlledPath, FunctionTable, PiecewiseControlledPath, SimpleIntegrand,
                         markovian_controlled)
from .roughpath import RoughPath1D, RoughPathL2

TOL_REL = 1e-6


@dataclass
class IntegralResult:
    """Value at the finest mesh plus the refinement history.

    ``refinement_levels`` holds ``(mesh, value)`` with ``mesh`` in time units,
    coarsest first; ``value`` may be an array over Monte-Carlo paths.
    """

    value: np.ndarray | float
    refinement_levels: list = field(default_factory=list)
    rate_estimate: float | None = None
    converged: bool | None = None

    def diffs(self) -> list:
        vals = [v for _, v in self.refinement_levels]
        return [np.abs(b - a) for a, b in zip(vals, vals[1:])]


def _local_terms(Y: Sequence[np.ndarray], rp, u: np.ndarray, v: np.ndarray, steps: bool = False) -> np.ndarray:
    if isinstance(rp, RoughPath1D):
        n = max(len(Y), rp.k)
        lev = rp.step_levels(n) if steps else rp.levels(u, v, n)
        out = 0.0
        for i, y in enumerate(Y, start=1):
            yu = y[..., u] if np.ndim(y) else y
            out = out + yu * lev[i]
        return out
    dX = rp.increment(u, v)
    out = np.sum(Y[0][..., u, :] * dX, axis=-1)
    if len(Y) > 1:
        out = out + np.sum(Y[1][..., u, :, :] * rp.level2(u, v), axis=(-2, -1))
    return out


def _segment_sum(Y, rp, a: int, b: int, mesh: int) -> np.ndarray:
    if b <= a:
        return 0.0
    if (b - a) % mesh:
        raise ValueError(f"mesh of {mesh} steps does not divide [{a}, {b}]")
    u = np.arange(a, b, mesh)
    return np.sum(_local_terms(Y, rp, u, u + mesh), axis=-1)


def _check_base(cp, rp):
    if rp is not None and cp.base is not rp:
        raise ValueError("integrand is controlled by a different rough path")
    return cp.base


def _integral_at(cp, rp, s: int, t: int, mesh: int):
    if isinstance(cp, SimpleIntegrand):
        a, b = max(s, cp.s), min(t, cp.u)
        x = rp.x if isinstance(rp, RoughPath1D) else rp.x[..., 0]
        return cp.xi * (x[..., b] - x[..., a]) if b > a else 0.0 * cp.xi
    if isinstance(cp, PiecewiseControlledPath):
        b = list(cp.breakpoints)
        total = 0.0
        for j, seg in enumerate(cp.segments):
            lo, hi = max(s, b[j]), min(t, b[j + 1])
            if hi > lo:
                total = total + _segment_sum(seg.Y, rp, lo, hi, mesh)
        return total
    return _segment_sum(cp.Y, rp, s, t, mesh)


def _fit_rate(meshes: Sequence[float], diffs: Sequence[float]) -> float | None:
    h = np.asarray(meshes[: len(diffs)], dtype=float)
    d = np.asarray(diffs, dtype=float)
    ok = d > 0
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(h[ok]), np.log(d[ok]), 1)[0])


def rough_integral(cp, rp=None, s: int = 0, t: int | None = None, mesh_levels: Sequence[int] = (1,),
                   tol_rel: float = TOL_REL) -> IntegralResult:
    """``int_s^t Y dX`` by left-point compensated sums ``sum_i Y^(i)_u X^i_{u,v}``.

    ``s``, ``t`` are grid indices and ``mesh_levels`` partition step counts,
    evaluated coarsest first; the value is the finest.  Piecewise integrands
    are summed segment by segment.
    """
    base = rp if isinstance(cp, SimpleIntegrand) else _check_base(cp, rp)
    if base is None:
        raise ValueError("a simple integrand needs the rough path")
    t = base.grid.N if t is None else t
    meshes = sorted(set(int(m) for m in mesh_levels), reverse=True)
    levels = []
    for m in meshes:
        levels.append((m * base.grid.h, _integral_at(cp, base, s, t, m)))
    res = IntegralResult(levels[-1][1], levels)
    d = res.diffs()
    if d:
        res.rate_estimate = _fit_rate([h for h, _ in levels], [float(np.mean(x)) for x in d])
        res.converged = bool(np.all(d[-1] < tol_rel * np.maximum(1.0, np.abs(res.value))))
    return res


def integral_path(cp, rp=None) -> np.ndarray:
    """Running integral ``t -> int_0^t Y dX`` on every grid point (grid mesh)."""
    if isinstance(cp, SimpleIntegrand):
        base = rp
        x = base.x if isinstance(base, RoughPath1D) else base.x[..., 0]
        n = np.arange(base.grid.N + 1)
        clipped = np.clip(n, cp.s, cp.u)
        return np.asarray(cp.xi)[..., None] * (x[..., clipped] - x[..., cp.s : cp.s + 1])
    base = _check_base(cp, rp)
    N = base.grid.N
    u = np.arange(N)
    if isinstance(cp, PiecewiseControlledPath):
        Y = [cp.component(i) for i in range(1, cp.k + 1)]
    else:
        Y = [np.broadcast_to(y, y.shape) for y in cp.Y]
    local = _local_terms(Y, base, u, u + 1, steps=True)
    out = np.zeros(local.shape[:-1] + (N + 1,))
    np.cumsum(local, axis=-1, out=out[..., 1:])
    return out


def young_integral(f, g, s: int = 0, t: int | None = None, mesh_levels: Sequence[int] = (1,),
                   rule: str = "left") -> IntegralResult:
    """Riemann-Stieltjes ``int_s^t f dg`` with refinement diagnostics.

    ``rule="left"`` tags each interval at its left point (the convention of
    the Ito correction terms); ``"trapezoid"`` averages both end points.
    """
    if rule not in ("left", "trapezoid"):
        raise ValueError(f"unknown rule {rule!r}")
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    t = g.shape[-1] - 1 if t is None else t
    levels = []
    for m in sorted(set(int(x) for x in mesh_levels), reverse=True):
        if (t - s) % m:
            raise ValueError(f"mesh of {m} steps does not divide [{s}, {t}]")
        u = np.arange(s, t, m)
        if not f.ndim:
            fu = f
        elif rule == "left":
            fu = f[..., u]
        else:
            fu = 0.5 * (f[..., u] + f[..., u + m])
        levels.append((m, np.sum(fu * (g[..., u + m] - g[..., u]), axis=-1)))
    res = IntegralResult(levels[-1][1], levels)
    d = res.diffs()
    if d:
        res.rate_estimate = _fit_rate([m for m, _ in levels], [float(np.mean(x)) for x in d])
    return res


def young_path(f, g) -> np.ndarray:
    """Running left-point integral ``t -> int_0^t f dg`` on the grid."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    dg = np.diff(g, axis=-1)
    local = (f[..., :-1] if f.ndim else f) * dg
    out = np.zeros(np.broadcast_shapes(local.shape[:-1] + (local.shape[-1] + 1,), g.shape))
    np.cumsum(local, axis=-1, out=out[..., 1:])
    return out


def ito_residual(F: FunctionTable, rp: RoughPath1D) -> np.ndarray:
    """Residual of the rough Ito formula along the grid.

    ``F(t,X_t) - F(0,X_0) - [int D_u F du + int (D_x F, ..., D_x^k F) dX
    - sum_{i>=2} int D_x^i F dG^i]``.
    """
    t = rp.grid.points
    x = rp.x
    lhs = F.derivative(0)(t, x) - F.derivative(0)(t[0], x[..., :1])
    time_part = 0.0
    if F.dt is not None:
        time_part = young_path(np.broadcast_to(F.dt(t, x), x.shape), t)
    rough = integral_path(markovian_controlled(F, rp))
    corr = 0.0
    for i, g in enumerate(rp.G, start=2):
        corr = corr + young_path(np.broadcast_to(F.derivative(i)(t, x), x.shape), g)
    return lhs - (time_part + rough - corr)


def integral_as_controlled(cp, rp=None) -> ControlledPath:
    """``(int_0^. Y dX, Y^(1), ..., Y^(k-1))`` as a path controlled by the same rough path."""
    base = _check_base(cp, rp)
    Z = integral_path(cp)
    if isinstance(cp, PiecewiseControlledPath):
        comps = [cp.component(i) for i in range(1, cp.k)]
    else:
        comps = [np.broadcast_to(y, base.x.shape) * 1.0 for y in cp.Y[:-1]]
    return ControlledPath(base, [Z] + comps)


def write_refinement_csv(res: IntegralResult, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["mesh", "value", "diff"])
    prev = None
    for mesh, v in res.refinement_levels:
        v = float(np.mean(v))
        w.writerow([f"{mesh:.17g}", f"{v:.17g}", "" if prev is None else f"{abs(v - prev):.17g}"])
        prev = v
