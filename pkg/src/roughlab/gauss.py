"""Gaussian driving noises: grids, sampled paths, simulators, variance curves.

Randomness is counter based.  Path ``i`` of stream ``s`` under ``seed`` always
draws from the block ``i // PATH_BLOCK`` generator keyed by ``(seed, s, block)``,
so a Monte-Carlo run gives the same numbers however it is split over workers.
"""
from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

PATH_BLOCK = 256
JITTER = 1e-12
MAX_CHOLESKY_POINTS = 2**14


class FBMCovarianceError(RuntimeError):
    """Covariance matrix not positive definite even after jitter."""


@dataclass(frozen=True)
class Grid:
    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0 or self.N < 1:
            raise ValueError(f"invalid grid T={self.T}, N={self.N}")

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.N + 1) * (self.T / self.N)

    def index(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid point."""
        x = t / self.h
        i = int(round(x))
        if abs(x - i) > 1e-9 or not 0 <= i <= self.N:
            raise ValueError(f"time {t} is not a point of {self}")
        return i

    def refine(self, factor: int) -> "Grid":
        return Grid(self.T, self.N * factor)


@dataclass
class SampledPath:
    """A ``d``-dimensional path on a uniform grid; ``values`` has shape ``(N+1, d)``."""

    grid: Grid
    values: np.ndarray
    centred: bool = True
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.N + 1:
            raise ValueError(f"{v.shape[0]} samples for a grid of {self.grid.N + 1} points")
        if not np.all(np.isfinite(v)):
            raise ValueError("path has non-finite entries")
        if self.centred and np.any(v[0] != 0):
            raise ValueError("centred path must start at 0")
        self.values = v

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def x(self) -> np.ndarray:
        """Values of a one-dimensional path as a flat array."""
        if self.dim != 1:
            raise ValueError("path is not one-dimensional")
        return self.values[:, 0]


def block_generator(seed: int, stream: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, block])))


def standard_normals(seed: int, start: int, count: int, dim: int, stream: int = 0) -> np.ndarray:
    """Rows ``start .. start+count`` of the per-path standard normal table."""
    out = np.empty((count, dim))
    i = start
    while i < start + count:
        block, offset = divmod(i, PATH_BLOCK)
        take = min(PATH_BLOCK - offset, start + count - i)
        z = block_generator(seed, stream, block).standard_normal((PATH_BLOCK, dim))
        out[i - start : i - start + take] = z[offset : offset + take]
        i += take
    return out


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + JITTER * np.eye(len(cov)))
    except np.linalg.LinAlgError:
        w = np.linalg.eigvalsh(cov)
        raise FBMCovarianceError(
            f"covariance of size {len(cov)} not positive definite after jitter {JITTER:g}; "
            f"smallest eigenvalue {w[0]:.3e}, largest {w[-1]:.3e}"
        ) from None


def fbm_covariance(s, t, H: float):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return 0.5 * (s ** (2 * H) + t ** (2 * H) - np.abs(t - s) ** (2 * H))


_factor_lock = threading.Lock()


@lru_cache(maxsize=8)
def _fbm_factor_cached(T: float, N: int, H: float) -> np.ndarray:
    t = Grid(T, N).points[1:]
    return _cholesky(fbm_covariance(t[:, None], t[None, :], H))


def fbm_factor(grid: Grid, H: float) -> np.ndarray:
    """Lower Cholesky factor of the fBm covariance on ``t_1 .. t_N`` (cached)."""
    if not 0 < H < 1:
        raise ValueError(f"Hurst index must lie in (0, 1), got {H}")
    if grid.N > MAX_CHOLESKY_POINTS:
        raise ValueError(f"N={grid.N} exceeds the dense Cholesky bound {MAX_CHOLESKY_POINTS}")
    with _factor_lock:
        return _fbm_factor_cached(float(grid.T), int(grid.N), float(H))


class GaussianNoise:
    """Centred Gaussian process with ``X_0 = 0``; subclasses supply sampling."""

    kind = "gaussian"
    clock_eligible = True

    def variance(self, t):
        raise NotImplementedError

    def covariance(self, s, t):
        raise NotImplementedError

    def sample(self, grid: Grid, seed: int, start: int, count: int, stream: int = 0) -> np.ndarray:
        """Paths ``start .. start+count`` as an array of shape ``(count, N+1)``."""
        raise NotImplementedError

    def sample_at(self, times, seed: int, start: int, count: int, stream: int = 0) -> np.ndarray:
        """Joint samples at arbitrary positive ``times`` via a Cholesky factor."""
        times = np.asarray(times, dtype=float)
        L = _cholesky(self.covariance(times[:, None], times[None, :]))
        return standard_normals(seed, start, count, len(times), stream) @ L.T

    def path(self, grid: Grid, seed: int, index: int = 0, stream: int = 0) -> SampledPath:
        return SampledPath(grid, self.sample(grid, seed, index, 1, stream)[0])

    def variance_fn(self, grid: Grid) -> "VarianceFunction":
        return variance_fn(self, grid)

    def label(self) -> str:
        return self.kind


class BrownianMotion(GaussianNoise):
    kind = "bm"

    def variance(self, t):
        return np.asarray(t, dtype=float) * 1.0

    def covariance(self, s, t):
        return np.minimum(s, t) * 1.0

    def sample(self, grid, seed, start, count, stream=0):
        z = standard_normals(seed, start, count, grid.N, stream) * np.sqrt(grid.h)
        out = np.zeros((count, grid.N + 1))
        np.cumsum(z, axis=1, out=out[:, 1:])
        return out


class FractionalBM(GaussianNoise):
    kind = "fbm"

    def __init__(self, H: float):
        if not 0 < H < 1:
            raise ValueError(f"Hurst index must lie in (0, 1), got {H}")
        self.H = float(H)

    def variance(self, t):
        return np.asarray(t, dtype=float) ** (2 * self.H)

    def covariance(self, s, t):
        return fbm_covariance(s, t, self.H)

    def sample(self, grid, seed, start, count, stream=0):
        L = fbm_factor(grid, self.H)
        out = np.zeros((count, grid.N + 1))
        out[:, 1:] = standard_normals(seed, start, count, grid.N, stream) @ L.T
        return out

    def label(self):
        return f"fbm(H={self.H:g})"


class OrnsteinUhlenbeck(GaussianNoise):
    """``dX = -theta X dt + sigma dW`` started at 0, sampled exactly."""

    kind = "ou"

    def __init__(self, theta: float = 1.0, sigma: float = 1.0):
        if theta <= 0 or sigma <= 0:
            raise ValueError("theta and sigma must be positive")
        self.theta = float(theta)
        self.sigma = float(sigma)

    def variance(self, t):
        t = np.asarray(t, dtype=float)
        return self.sigma**2 * (1 - np.exp(-2 * self.theta * t)) / (2 * self.theta)

    def covariance(self, s, t):
        th = self.theta
        return self.sigma**2 / (2 * th) * (np.exp(-th * np.abs(t - s)) - np.exp(-th * (t + s)))

    def sample(self, grid, seed, start, count, stream=0):
        a = np.exp(-self.theta * grid.h)
        sd = np.sqrt(self.sigma**2 * (1 - a * a) / (2 * self.theta))
        z = standard_normals(seed, start, count, grid.N, stream) * sd
        out = np.zeros((count, grid.N + 1))
        for i in range(grid.N):
            out[:, i + 1] = a * out[:, i] + z[:, i]
        return out

    def label(self):
        return f"ou(theta={self.theta:g},sigma={self.sigma:g})"


class TimeChangedNoise(GaussianNoise):
    """``X~_t = X_{clock(t)}``, sampled on a finer source grid and resampled."""

    kind = "time_changed"

    def __init__(self, base: GaussianNoise, clock: Callable, source_T: float, oversample: int = 4):
        self.base = base
        self.clock = clock
        self.source_T = float(source_T)
        self.oversample = int(oversample)
        self.clock_eligible = base.clock_eligible

    def _source(self, grid):
        return Grid(self.source_T, grid.N * self.oversample)

    def _indices(self, grid):
        src = self._source(grid)
        return _clock_indices(self.clock, grid, src)[0], src

    def variance(self, t):
        return self.base.variance(self.clock(np.asarray(t, dtype=float)))

    def covariance(self, s, t):
        return self.base.covariance(self.clock(np.asarray(s, dtype=float)), self.clock(np.asarray(t, dtype=float)))

    def grid_variance(self, grid):
        idx, src = self._indices(grid)
        return self.base.variance(src.points[idx])

    def sample(self, grid, seed, start, count, stream=0):
        idx, src = self._indices(grid)
        return self.base.sample(src, seed, start, count, stream)[:, idx]

    def label(self):
        return f"time_changed({self.base.label()})"


@dataclass
class VarianceFunction:
    """``t -> E[X_t^2]`` sampled on a grid."""

    kind: str
    grid: Grid
    samples: np.ndarray
    monotone: bool

    @property
    def renorm(self) -> np.ndarray:
        """The Hermite renormalisation ``G^2(t) = -Var(t) / 2``."""
        return -0.5 * self.samples


def variance_fn(kind, grid: Grid) -> VarianceFunction:
    """Sample a variance curve.

    ``kind`` is a :class:`GaussianNoise`, one of ``"bm"``, ``("fbm", H)``,
    ``("ou", theta, sigma)``, or a tabulated array of length ``N+1``.
    """
    if isinstance(kind, str) and kind == "bm":
        kind = BrownianMotion()
    elif isinstance(kind, tuple) and kind and kind[0] == "fbm":
        kind = FractionalBM(kind[1])
    elif isinstance(kind, tuple) and kind and kind[0] == "ou":
        kind = OrnsteinUhlenbeck(*kind[1:])
    if isinstance(kind, TimeChangedNoise):
        samples, name = kind.grid_variance(grid), kind.label()
    elif isinstance(kind, GaussianNoise):
        samples, name = kind.variance(grid.points), kind.label()
    else:
        samples = np.asarray(kind, dtype=float)
        name = "tabulated"
        if samples.shape != (grid.N + 1,):
            raise ValueError(f"tabulated variance needs {grid.N + 1} samples, got {samples.shape}")
        if np.any(samples < 0):
            raise ValueError("tabulated variance has negative entries")
        if samples[0] != 0:
            raise ValueError("variance at time 0 must be 0")
    samples = np.array(samples, dtype=float)
    return VarianceFunction(name, grid, samples, bool(np.all(np.diff(samples) >= 0)))


def simulate_bm(grid: Grid, seed: int, index: int = 0) -> SampledPath:
    return BrownianMotion().path(grid, seed, index)


def simulate_fbm(grid: Grid, H: float, seed: int, index: int = 0) -> SampledPath:
    return FractionalBM(H).path(grid, seed, index)


def simulate_ou(grid: Grid, theta: float, sigma: float, seed: int, index: int = 0) -> SampledPath:
    return OrnsteinUhlenbeck(theta, sigma).path(grid, seed, index)


def _clock_indices(clock, new_grid: Grid, src: Grid):
    if callable(clock):
        c = np.asarray(clock(new_grid.points), dtype=float)
    else:
        c = np.asarray(clock, dtype=float)
    if c.shape != (new_grid.N + 1,):
        raise ValueError("clock must give one time per point of the new grid")
    if np.any(np.diff(c) < 0):
        raise ValueError("clock must be non-decreasing")
    if abs(c[0]) > 1e-12:
        raise ValueError("clock must start at 0")
    if c[-1] > src.T * (1 + 1e-12):
        raise ValueError(f"clock reaches {c[-1]}, beyond the source horizon {src.T}")
    idx = np.clip(np.rint(c / src.h).astype(int), 0, src.N)
    return idx, float(np.max(np.abs(src.points[idx] - c)))


def deterministic_time_change(path: SampledPath, clock, T_new: float, N_new: int | None = None) -> SampledPath:
    """Resample ``X~_t = X_{clock(t)}`` by nearest grid point.

    ``clock`` is a callable on times or an array over the new grid.  The
    largest rounding of the clock onto the source grid is stored in
    ``info["rounding_error"]``.
    """
    new = Grid(T_new, N_new if N_new is not None else path.grid.N)
    idx, err = _clock_indices(clock, new, path.grid)
    return SampledPath(new, path.values[idx], centred=path.centred, info={"rounding_error": err, "source_index": idx})


def write_path_csv(path: SampledPath, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t"] + [f"x{j + 1}" for j in range(path.dim)])
    for t, row in zip(path.grid.points, path.values):
        w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def read_path_csv(fh, centred: bool = True) -> SampledPath:
    rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    if header[0] != "t" or len(header) < 2:
        raise ValueError(f"unexpected header {header}")
    t = body[:, 0]
    grid = Grid(float(t[-1]), len(t) - 1)
    if not np.allclose(t, grid.points, rtol=0, atol=1e-12 * max(1.0, grid.T)):
        raise ValueError("times are not a uniform grid starting at 0")
    return SampledPath(grid, body[:, 1:], centred=centred)
