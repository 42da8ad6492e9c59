"""Level-2 rough differential equations and the controlled-path/rough-path
consistency layer (lifting, consistency, associativity, renormalisation)."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .integrate import young_path
from .roughpath import RoughPath1D, RoughPathL2


@dataclass
class RdeSolution:
    """``Y`` has shape ``(..., N+1, e)`` and ``Yprime = f(Y)`` shape ``(..., N+1, e, d)``.

    ``truncated_at`` is the first grid index with a non-finite state, if any;
    the arrays then stop just before it.
    """

    Y: np.ndarray
    Yprime: np.ndarray
    driver: RoughPathL2
    scheme: str = "davie"
    truncated_at: int | None = None


def scalar_field(f: Callable, df: Callable):
    """Wrap scalar ``f(y)``, ``f'(y)`` as a vector field for a 1-D driver and state."""
    return (lambda y: f(y[..., 0])[..., None, None],
            lambda y: df(y[..., 0])[..., None, None, None])


def solve_rde_davie(f: Callable, Df: Callable, y0, driver: RoughPathL2) -> RdeSolution:
    """Solve ``dY = f(Y) dX`` with ``Y_v = Y_u + f(Y_u) X_{u,v} + Df f(Y_u) X^2_{u,v}``.

    ``f(y)`` maps ``(..., e)`` to ``(..., e, d)``; ``Df(y)`` gives
    ``d f_ij / d y_l`` with shape ``(..., e, d, e)``.
    """
    N = driver.grid.N
    batch = driver.x.shape[:-2]
    y = np.broadcast_to(np.asarray(y0, dtype=float), batch + np.shape(np.atleast_1d(y0))[-1:]).copy()
    e = y.shape[-1]
    Y = np.empty(batch + (N + 1, e))
    Y[..., 0, :] = y
    idx = np.arange(N)
    dX = driver.increment(idx, idx + 1)
    X2 = driver.level2(idx, idx + 1)
    stop = None
    for i in range(N):
        fy = f(y)
        second = np.einsum("...ijl,...lk->...ijk", Df(y), fy)
        y = y + np.einsum("...ij,...j->...i", fy, dX[..., i, :]) + np.einsum("...ijk,...kj->...i", second, X2[..., i, :, :])
        if not np.all(np.isfinite(y)):
            stop = i + 1
            break
        Y[..., i + 1, :] = y
    if stop is not None:
        Y = Y[..., :stop, :]
    Yp = f(Y)
    return RdeSolution(Y, Yp, driver, "davie", stop)


def _scalar_levels(rp, u, v):
    if isinstance(rp, RoughPath1D):
        return rp.level(1, u, v), rp.level(2, u, v)
    if rp.dim != 1:
        raise ValueError("scalar consistency checks need a one-dimensional driver")
    return rp.increment(u, v)[..., 0], rp.level2(u, v)[..., 0, 0]


def lift_controlled_l2(Y, Yprime, rp) -> RoughPathL2:
    """Canonical lift ``Y^2_{s,t} = lim sum Y_{s,u} (x) Y_{u,v} + Y'_u (x) Y'_u X^2_{u,v}``.

    ``Y`` is ``(..., N+1)`` for a scalar path over a 1-D driver, or
    ``(..., N+1, e)`` with ``Yprime`` of shape ``(..., N+1, e, d)``.
    Per-interval increments are the germ; Chen composition supplies the rest.
    """
    Y = np.asarray(Y, dtype=float)
    Yp = np.asarray(Yprime, dtype=float)
    N = rp.grid.N
    idx = np.arange(N)
    if isinstance(rp, RoughPath1D) or Y.ndim == Yp.ndim and Y.shape[-1] == N + 1:
        _, X2 = _scalar_levels(rp, idx, idx + 1)
        A = (Yp[..., :-1] ** 2 * X2)[..., None, None]
        return RoughPathL2(Y[..., None], A, getattr(rp, "scheme", "hermite"), rp.grid)
    X2 = rp.level2(idx, idx + 1)
    yp = Yp[..., :-1, :, :]
    A = np.einsum("...nej,...nfk,...njk->...nef", yp, yp, X2)
    return RoughPathL2(Y, A, rp.scheme, rp.grid)


def renorm_of_integral(K, G_X) -> np.ndarray:
    """``G_Z(t) = int_0^t K_u^2 dG_X(u)`` (left-point Young integral)."""
    K = np.asarray(K, dtype=float)
    return young_path(K * K, G_X)


def _coarse(mesh: int, N: int):
    if N % mesh:
        raise ValueError(f"mesh {mesh} does not divide {N}")
    u = np.arange(0, N, mesh)
    return u, u + mesh


def consistency_residual(Z, Zprime, Y, Yprime, rp, meshes: Sequence[int] = (1,)) -> float:
    """``|int (Z, Z') dY - int (Z, Z'Y') d(Y, Y')|`` over ``[0, T]``, max over meshes.

    The left side integrates against the lift of ``(Y, Y')``; the right side
    integrates controlled path against controlled path over ``rp``.
    """
    Z, Zp, Y, Yp = (np.asarray(a, dtype=float) for a in (Z, Zprime, Y, Yprime))
    lifted = lift_controlled_l2(Y, Yp, rp)
    worst = 0.0
    for m in meshes:
        u, v = _coarse(m, rp.grid.N)
        _, X2 = _scalar_levels(rp, u, v)
        Yuv = Y[..., v] - Y[..., u]
        lhs = np.sum(Z[..., u] * Yuv + Zp[..., u] * lifted.level2(u, v)[..., 0, 0], axis=-1)
        rhs = np.sum(Z[..., u] * Yuv + Zp[..., u] * Yp[..., u] * Yp[..., u] * X2, axis=-1)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def integral_of_controlled(K, Kprime, rp) -> np.ndarray:
    """Running ``int_0^t (K, K') dX`` at grid mesh for a scalar controlled path."""
    N = rp.grid.N
    idx = np.arange(N)
    X1, X2 = _scalar_levels(rp, idx, idx + 1)
    local = K[..., :-1] * X1 + Kprime[..., :-1] * X2
    out = np.zeros(local.shape[:-1] + (N + 1,))
    np.cumsum(local, axis=-1, out=out[..., 1:])
    return out


def associativity_residual(Y, Yprime, K, Kprime, rp, meshes: Sequence[int] = (1,)) -> float:
    """``|int (Y, Y') d(Z, Z') - int (YK, Y'K + YK') dX|`` with ``Z = int K dX``."""
    Y, Yp, K, Kp = (np.asarray(a, dtype=float) for a in (Y, Yprime, K, Kprime))
    Z = integral_of_controlled(K, Kp, rp)
    worst = 0.0
    for m in meshes:
        u, v = _coarse(m, rp.grid.N)
        X1, X2 = _scalar_levels(rp, u, v)
        lhs = np.sum(Y[..., u] * (Z[..., v] - Z[..., u]) + Yp[..., u] * K[..., u] * X2, axis=-1)
        rhs = np.sum(Y[..., u] * K[..., u] * X1 + (Yp[..., u] * K[..., u] + Y[..., u] * Kp[..., u]) * X2, axis=-1)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def write_solution_csv(sol: RdeSolution, fh) -> None:
    """``t,Y,Yprime`` for a single scalar solution path."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "Y", "Yprime"])
    pts = sol.driver.grid.points
    for j in range(sol.Y.shape[-2]):
        w.writerow([f"{pts[j]:.17g}", f"{sol.Y[j, 0]:.17g}", f"{sol.Yprime[j, 0, 0]:.17g}"])
