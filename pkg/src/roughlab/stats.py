"""Monte-Carlo verdicts: unbiasedness of rough integrals, balancing sums,
moment bounds, and a non-Gaussian pair with Gaussian marginals (Sarmanov)."""
from __future__ import annotations

import csv
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import hermite_e
from scipy import stats as sstats

from .bell import hermite_eval
from .controlled import SimpleIntegrand, polynomial_controlled, signature_integrand
from .gauss import (PATH_BLOCK, BrownianMotion, FractionalBM, GaussianNoise, Grid, OrnsteinUhlenbeck,
                    TimeChangedNoise, block_generator)
from .integrate import integral_path
from .roughpath import RoughPath1D, geometric_lift, hermite_lift, ito_lift, lift_from_renorm

Z_THRESHOLD = 4.0
MAX_ERROR_FRACTION = 1e-3
MIN_PATHS = 1000
LIFTS = ("hermite", "geometric", "ito", "custom")


class MCError(RuntimeError):
    """Too many Monte-Carlo paths produced non-finite values."""


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    n_samples: int
    errors: int = 0

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.mean - 1.96 * self.std_error, self.mean + 1.96 * self.std_error)

    def z(self, target: float = 0.0) -> float:
        d = abs(self.mean - target)
        if self.std_error == 0:
            return 0.0 if d == 0 else math.inf
        return d / self.std_error

    def accepts(self, target: float = 0.0, threshold: float = Z_THRESHOLD) -> bool:
        return abs(self.mean - target) <= threshold * self.std_error

    @classmethod
    def from_samples(cls, values, max_error_fraction: float = MAX_ERROR_FRACTION) -> "MCEstimate":
        v = np.asarray(values, dtype=float).ravel()
        ok = np.isfinite(v)
        errors = int(v.size - ok.sum())
        if errors > max_error_fraction * v.size:
            raise MCError(f"{errors} of {v.size} paths gave non-finite values")
        v = v[ok]
        n = v.size
        mean = float(np.mean(v))
        se = float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        return cls(mean, se, n, errors)


# ---------------------------------------------------------------- specs

_ALIASES = {"one": (1.0,), "x": (0.0, 1.0), "x2": (0.0, 0.0, 1.0), "x3": (0.0, 0.0, 0.0, 1.0),
            "he3": (0.0, -3.0, 0.0, 1.0)}


@dataclass(frozen=True)
class IntegrandSpec:
    """One admissible integrand.

    Text forms: ``x``, ``x2``, ``x3``, ``he3``, ``one``, ``poly:c0;c1;...``
    (ascending coefficients), ``sig:n@s`` and ``simple:s-u`` (times).
    """

    kind: str
    coeffs: tuple = ()
    n: int = 0
    s: float = 0.0
    u: float = 0.0
    name: str = ""

    @property
    def family(self) -> str:
        return {"poly": "Pol", "sig": "pSig", "simple": "simple"}[self.kind]

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "poly":
            return "poly:" + ";".join(f"{c:g}" for c in self.coeffs)
        if self.kind == "sig":
            return f"sig:{self.n}@{self.s:g}"
        return f"simple:{self.s:g}-{self.u:g}"

    @classmethod
    def parse(cls, text: str) -> "IntegrandSpec":
        t = text.strip()
        if t in _ALIASES:
            return cls("poly", _ALIASES[t], name=t)
        kind, _, rest = t.partition(":")
        try:
            if kind == "poly" and rest:
                return cls("poly", tuple(float(c) for c in rest.split(";")))
            if kind == "sig":
                n, s = rest.split("@")
                return cls("sig", n=int(n), s=float(s))
            if kind == "simple":
                s, u = rest.split("-")
                if float(s) > float(u):
                    raise ValueError
                return cls("simple", s=float(s), u=float(u))
        except ValueError:
            pass
        raise ValueError(f"cannot parse integrand {text!r}")


@dataclass(frozen=True)
class StoppingSpec:
    """``T``, a fixed time ``t=0.5``, or a clock level ``clock=0.5``.

    The clock stops at the first grid time where the variance curve
    ``-2 G^2`` of the Hermite lift exceeds the level.
    """

    kind: str
    value: float = 0.0

    @property
    def label(self) -> str:
        return "T" if self.kind == "T" else f"{self.kind}={self.value:g}"

    @classmethod
    def parse(cls, text: str) -> "StoppingSpec":
        t = text.strip()
        if t == "T":
            return cls("T")
        kind, _, v = t.partition("=")
        if kind in ("t", "clock"):
            try:
                return cls(kind, float(v))
            except ValueError:
                pass
        raise ValueError(f"cannot parse stopping {text!r}")

    def index(self, grid: Grid, variance: np.ndarray) -> int:
        if self.kind == "T":
            return grid.N
        if self.kind == "t":
            if not 0 <= self.value <= grid.T:
                raise ValueError(f"stopping time {self.value} outside [0, {grid.T}]")
            return grid.index(self.value)
        from .market import renorm_clock
        return renorm_clock(variance, self.value)


DEFAULT_INTEGRANDS = ("x", "x2", "x3", "he3", "sig:1@1", "sig:2@1", "simple:1-2")


@dataclass
class ExperimentSpec:
    noise: GaussianNoise
    lift: str = "hermite"
    integrands: Sequence = DEFAULT_INTEGRANDS
    stoppings: Sequence = ("T",)
    M: int = 10**5
    seed: int = 0
    grid: Grid = field(default_factory=lambda: Grid(2.0, 1024))
    alpha: float | None = None
    renorm: Sequence | None = None

    def __post_init__(self):
        if self.lift not in LIFTS:
            raise ValueError(f"unknown lift {self.lift!r}; choose from {LIFTS}")
        if self.lift == "custom" and self.renorm is None:
            raise ValueError("a custom lift needs renorm terms")
        if self.M < MIN_PATHS:
            raise ValueError(f"M={self.M} below the minimum of {MIN_PATHS} paths")
        self.integrands = [i if isinstance(i, IntegrandSpec) else IntegrandSpec.parse(i) for i in self.integrands]
        self.stoppings = [s if isinstance(s, StoppingSpec) else StoppingSpec.parse(s) for s in self.stoppings]
        for itg in self.integrands:
            for t in (itg.s, itg.u):
                self.grid.index(t)
        for st in self.stoppings:
            st.index(self.grid, self.variance)
        if self.alpha is None:
            self.alpha = default_alpha(self.noise)

    @property
    def variance(self) -> np.ndarray:
        if isinstance(self.noise, TimeChangedNoise):
            return self.noise.grid_variance(self.grid)
        return self.noise.variance(self.grid.points)

    @property
    def stream(self) -> int:
        return zlib.crc32(self.noise.label().encode())


def default_alpha(noise: GaussianNoise) -> float:
    """Hoelder exponent just below the noise regularity, capped below 1/2."""
    base = noise.base if isinstance(noise, TimeChangedNoise) else noise
    H = base.H if isinstance(base, FractionalBM) else 0.5
    return min(H, 0.5) - 0.01


def uncorrelated_increments(noise: GaussianNoise) -> bool:
    base = noise.base if isinstance(noise, TimeChangedNoise) else noise
    return isinstance(base, BrownianMotion) or isinstance(base, FractionalBM) and base.H == 0.5


def expected_all_pass(noise: GaussianNoise, lift: str, family: str) -> bool | None:
    """Whether every default cell of ``family`` should be unbiased.

    Hermite and Ito lifts are unbiased on polynomials; signature and simple
    integrands additionally need uncorrelated increments; the geometric
    lift fails polynomials and signatures.  ``None`` for custom lifts.
    """
    if lift == "custom":
        return None
    bm = uncorrelated_increments(noise)
    if lift == "geometric":
        return family == "simple" and bm
    return family == "Pol" or bm


# ---------------------------------------------------------------- engine

def build_lift(spec: ExperimentSpec, X: np.ndarray) -> RoughPath1D:
    g = spec.grid
    if spec.lift == "hermite":
        return hermite_lift(X, spec.noise.variance_fn(g), spec.alpha, g)
    if spec.lift == "geometric":
        return geometric_lift(X, spec.alpha, g)
    if spec.lift == "ito":
        return ito_lift(X, spec.alpha, g)
    return lift_from_renorm(X, list(spec.renorm), spec.alpha, g)


def _integrand(itg: IntegrandSpec, rp: RoughPath1D, exact_levels: bool):
    g = rp.grid
    if itg.kind == "poly":
        levels = max(rp.k, len(itg.coeffs)) if exact_levels else None
        return polynomial_controlled(itg.coeffs, rp, levels)
    if itg.kind == "sig":
        return signature_integrand(rp, itg.n, g.index(itg.s), max(rp.k, itg.n + 1))
    s, u = g.index(itg.s), g.index(itg.u)
    return SimpleIntegrand(rp.x[..., s], s, u)


def _block_values(spec: ExperimentSpec, block: int) -> np.ndarray:
    """Integral values for one block, shape ``(n_integrands, n_stoppings, paths)``."""
    start = block * PATH_BLOCK
    count = min(PATH_BLOCK, spec.M - start)
    X = spec.noise.sample(spec.grid, spec.seed, start, count, spec.stream)
    rp = build_lift(spec, X)
    stops = [st.index(spec.grid, spec.variance) for st in spec.stoppings]
    # Hermite sums through level deg P + 1 telescope exactly in expectation
    exact = spec.lift == "hermite"
    rp.step_levels(max([rp.k] + [len(i.coeffs) for i in spec.integrands] + [i.n + 1 for i in spec.integrands]))
    out = np.empty((len(spec.integrands), len(stops), count))
    with np.errstate(all="ignore"):
        for a, itg in enumerate(spec.integrands):
            path = integral_path(_integrand(itg, rp, exact), rp)
            for b, j in enumerate(stops):
                out[a, b] = path[..., j]
    return out


def run_blocks(fn: Callable[[int], np.ndarray], n_blocks: int, workers: int = 1) -> list:
    """Evaluate ``fn`` on every block index; results come back in block order."""
    if workers <= 1:
        return [fn(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(n_blocks)))


def mc_values(spec: ExperimentSpec, workers: int = 1) -> np.ndarray:
    n_blocks = -(-spec.M // PATH_BLOCK)
    parts = run_blocks(lambda b: _block_values(spec, b), n_blocks, workers)
    return np.concatenate(parts, axis=-1)


def mc_integral_mean(spec: ExperimentSpec, integrand: int = 0, stopping: int = 0, workers: int = 1) -> MCEstimate:
    """MC mean of ``int_0^tau Y dX`` for one (integrand, stopping) cell."""
    sub = ExperimentSpec(spec.noise, spec.lift, [spec.integrands[integrand]], [spec.stoppings[stopping]],
                         spec.M, spec.seed, spec.grid, spec.alpha, spec.renorm)
    return MCEstimate.from_samples(mc_values(sub, workers)[0, 0])


@dataclass(frozen=True)
class ReportRow:
    noise: str
    lift: str
    integrand: str
    family: str
    stopping: str
    estimate: MCEstimate

    @property
    def passed(self) -> bool:
        return self.estimate.accepts()


def unbiasedness_report(spec: ExperimentSpec, workers: int = 1) -> list[ReportRow]:
    """Every (integrand, stopping) cell with its verdict at 4 standard errors."""
    vals = mc_values(spec, workers)
    rows = []
    for a, itg in enumerate(spec.integrands):
        for b, st in enumerate(spec.stoppings):
            rows.append(ReportRow(spec.noise.label(), spec.lift, itg.label, itg.family, st.label,
                                  MCEstimate.from_samples(vals[a, b])))
    return rows


def family_verdicts(rows: Sequence[ReportRow]) -> dict:
    """``(noise, lift, family) -> all cells pass``."""
    out: dict = {}
    for r in rows:
        key = (r.noise, r.lift, r.family)
        out[key] = out.get(key, True) and r.passed
    return out


REPORT_COLUMNS = ["noise", "lift", "integrand", "stopping", "mean", "se", "n", "pass"]


def write_report_csv(rows: Sequence[ReportRow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        e = r.estimate
        w.writerow([r.noise, r.lift, r.integrand, r.stopping, f"{e.mean:.17g}", f"{e.std_error:.17g}",
                    e.n_samples, int(r.passed)])


# ---------------------------------------------------------------- balancing

def balancing_sum(a, b, n: int, ga: float, gb: float) -> np.ndarray:
    """``sum_i H_i(a, ga) H_{n-i}(b, gb)`` per sample."""
    return sum(hermite_eval(i, a, ga) * hermite_eval(n - i, b, gb) for i in range(n + 1))


def balancing_residual(process, n: int, s: float, u: float, t: float, M: int, seed: int = 0) -> MCEstimate:
    """MC estimate of the Chen-Hermite balancing sum over ``[s, u]``, ``[u, t]``.

    ``process`` is a :class:`GaussianNoise`, or an ``(M, 2)`` array of
    increment pairs (for instance Sarmanov samples over unit intervals).
    """
    if n < 2:
        raise ValueError("balancing starts at n = 2")
    if not 0 <= s <= u <= t:
        raise ValueError("need 0 <= s <= u <= t")
    if isinstance(process, GaussianNoise):
        times = [x for x in (s, u, t) if x > 0]
        vals = process.sample_at(times, seed, 0, M, stream=1000 + n)
        full = np.zeros((M, 3))
        full[:, 3 - len(times):] = vals
        a, b = full[:, 1] - full[:, 0], full[:, 2] - full[:, 1]
    else:
        pairs = np.asarray(process, dtype=float)
        a, b = pairs[:M, 0], pairs[:M, 1]
    return MCEstimate.from_samples(balancing_sum(a, b, n, -0.5 * (u - s), -0.5 * (t - u)))


def moment_bound(n: int, C: float) -> float:
    return (3 + (-1) ** (n + 1)) / 2 * math.factorial(n) * C**n


@dataclass(frozen=True)
class MomentRow:
    n: int
    estimate: MCEstimate
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - self.estimate.mean


def moment_bound_check(noise: GaussianNoise, n_max: int, C: float = 4.0, grid: Grid | None = None,
                       M: int = 10**4, seed: int = 0) -> list[MomentRow]:
    """``sup_t E|X_t|^n`` (grid max of the MC moment) against the growth bound."""
    if n_max > 8:
        raise ValueError("n_max above 8 leaves the MC moments too noisy")
    grid = grid or Grid(1.0, 64)
    X = noise.sample(grid, seed, 0, M, stream=77)
    rows = []
    for n in range(1, n_max + 1):
        m = np.abs(X) ** n
        j = int(np.argmax(np.mean(m, axis=0)))
        rows.append(MomentRow(n, MCEstimate.from_samples(m[:, j]), moment_bound(n, C)))
    return rows


# ---------------------------------------------------------------- Sarmanov

def _sin2(x):
    return np.sin(2 * x)


@dataclass(frozen=True)
class SarmanovPair:
    eps: float
    h: Callable = np.sin
    g: Callable = _sin2
    h_sup: float = 1.0
    g_sup: float = 1.0

    def __post_init__(self):
        if not 2 * abs(self.eps) * self.h_sup * self.g_sup < 1:
            raise ValueError(f"density not positive: 2|eps| sup|h| sup|g| = "
                             f"{2 * abs(self.eps) * self.h_sup * self.g_sup:.3g} >= 1")

    def tilt(self, x, y):
        return self.h(x) * self.g(y) - self.h(y) * self.g(x)

    def density(self, x, y):
        phi = np.exp(-0.5 * (x * x + y * y)) / (2 * np.pi)
        return phi * (1 + self.eps * self.tilt(x, y))

    def asymmetry_mean(self, nodes: int = 80) -> float:
        """``E[h(X)g(Y) - h(Y)g(X)]`` by Gauss-Hermite quadrature of the density."""
        z, w = hermite_e.hermegauss(nodes)
        w = w / w.sum()
        x, y = np.meshgrid(z, z, indexing="ij")
        W = np.outer(w, w)
        t = self.tilt(x, y)
        return float(np.sum(W * t * (1 + self.eps * t)))


def sarmanov_sample(eps: float, M: int, seed: int = 0, pair: SarmanovPair | None = None,
                    batch: int = 4096) -> np.ndarray:
    """``M`` pairs from ``phi(x)phi(y)[1 + eps(h(x)g(y) - h(y)g(x))]`` by rejection.

    Proposals are standard normal pairs with envelope ``1 + 2|eps| sup|h| sup|g|``.
    """
    pair = pair or SarmanovPair(eps)
    bound = 1 + 2 * abs(pair.eps) * pair.h_sup * pair.g_sup
    out, have, chunk, tried = [], 0, 0, 0
    while have < M:
        rng = block_generator(seed, 4242, chunk)
        xy = rng.standard_normal((batch, 2))
        acc = rng.random(batch) * bound <= 1 + pair.eps * pair.tilt(xy[:, 0], xy[:, 1])
        out.append(xy[acc])
        have += int(acc.sum())
        tried += batch
        chunk += 1
        if tried >= 10 * batch and have / tried < 0.1:
            raise MCError(f"acceptance rate {have / tried:.3f} below 10%")
    return np.concatenate(out)[:M]


@dataclass
class SarmanovDiagnostics:
    ks_pvalues: dict
    balancing: dict
    asymmetry: MCEstimate
    asymmetry_oracle: float

    def normality_ok(self, level: float = 1e-3) -> bool:
        return all(p > level for p in self.ks_pvalues.values())


def sarmanov_diagnostics(eps: float = 0.3, M: int = 10**5, seed: int = 0, n_max: int = 5) -> SarmanovDiagnostics:
    pair = SarmanovPair(eps)
    xy = sarmanov_sample(eps, M, seed, pair)
    x, y = xy[:, 0], xy[:, 1]
    ks = {"X": sstats.kstest(x, "norm").pvalue,
          "Y": sstats.kstest(y, "norm").pvalue,
          "X+Y": sstats.kstest(x + y, "norm", args=(0, math.sqrt(2))).pvalue}
    bal = {n: balancing_residual(xy, n, 0.0, 1.0, 2.0, M) for n in range(2, n_max + 1)}
    asym = MCEstimate.from_samples(pair.tilt(x, y))
    return SarmanovDiagnostics({k: float(v) for k, v in ks.items()}, bal, asym, pair.asymmetry_mean())


def noise_from_name(name: str, **kw) -> GaussianNoise:
    """``bm``, ``fbm`` (needs ``H``), ``ou`` (``theta``, ``sigma``)."""
    if name == "bm":
        return BrownianMotion()
    if name == "fbm":
        return FractionalBM(kw["H"])
    if name == "ou":
        return OrnsteinUhlenbeck(kw.get("theta", 1.0), kw.get("sigma", 1.0))
    raise ValueError(f"unknown noise {name!r}")


