"""Config-driven experiment runner.

Config files are plain ``key = value`` lines; ``#`` starts a comment.  The
``experiment`` key selects a schema and every other key must belong to it.
Exit codes: 0 pass, 2 rejected check, 1 compute error, 64 bad config.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

EXIT_OK, EXIT_ERROR, EXIT_REJECT, EXIT_CONFIG = 0, 1, 2, 64

CATALOG = [
    ("lift", "Prop 3.1 Bell-polynomial lift, Chen check and renormalisation round trip"),
    ("integrate", "Prop 2.1 rough integral by compensated sums under refinement"),
    ("ito", "Thm 4.1 residual of the rough Ito formula"),
    ("mc-unbiased", "Thm 5.1 / Thm 5.2 unbiasedness table of rough integrals"),
    ("balance", "Def 5.2 Chen-Hermite balancing sums"),
    ("sarmanov", "§5.2.1 Gaussian marginals without joint Gaussianity"),
    ("rde", "Def 2.4 level-2 RDE by the Davie scheme against closed forms"),
    ("arbitrage", "§7 power-mean pathwise arbitrage"),
    ("clock", "§5.4 renormalisation clock time change"),
]


class ConfigError(ValueError):
    """Schema violation; ``line`` points into the config file."""

    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


def _choice(*opts):
    def parse(v: str) -> str:
        if v not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}")
        return v
    return parse


def _list(item: Callable):
    def parse(v: str) -> list:
        return [item(x.strip()) for x in v.split(",") if x.strip()]
    return parse


def _pos_int(v: str) -> int:
    n = int(v)
    if n < 1:
        raise ValueError("must be a positive integer")
    return n


def _pos_float(v: str) -> float:
    x = float(v)
    if not x > 0:
        raise ValueError("must be positive")
    return x




_NOISE = {"noise": (_choice("bm", "fbm", "ou", "tcbm"), "bm"), "H": (float, 0.4), "theta": (_pos_float, 1.0),
          "sigma": (_pos_float, 1.0), "clock_power": (_pos_float, 2.0)}
_GRID = {"T": (_pos_float, 1.0), "N": (_pos_int, 1024)}
COMMON = {"experiment": (str, None), "seed": (int, 0), "out": (str, None)}

SCHEMA = {
    "lift": {**_NOISE, **_GRID, "lift": (_choice("hermite", "geometric", "ito"), "hermite"),
             "alpha": (float, None), "paths": (_pos_int, 4), "triples": (_pos_int, 10_000),
             "tol": (_pos_float, 1e-10)},
    "integrate": {**_NOISE, **_GRID, "lift": (_choice("hermite", "geometric", "ito"), "hermite"),
                  "alpha": (float, None), "integrand": (_list(float), [0.0, 0.0, 1.0]),
                  "meshes": (_list(_pos_int), [256, 128, 64, 32, 16, 8, 4, 2, 1]), "paths": (_pos_int, 20)},
    "ito": {**_NOISE, **_GRID, "lift": (_choice("hermite", "ito"), "ito"), "alpha": (float, None),
            "function": (_choice("x2", "x3", "sin"), "x3"), "paths": (_pos_int, 20), "tol": (_pos_float, 1e-3)},
    "mc-unbiased": {**_NOISE, **_GRID, "lift": (_choice("hermite", "geometric", "ito"), "hermite"),
                    "alpha": (float, None), "integrands": (_list(str), ["x", "x2", "x3", "he3"]),
                    "stoppings": (_list(str), ["T"]), "M": (_pos_int, 10**5)},
    "balance": {**_NOISE, "n": (_list(_pos_int), [2, 3, 4, 5]), "s": (float, 0.0), "u": (float, 1.0),
                "t": (float, 2.0), "M": (_pos_int, 10**5)},
    "sarmanov": {"eps": (float, 0.3), "M": (_pos_int, 10**5), "n_max": (_pos_int, 5)},
    "rde": {**_GRID, "lift": (_choice("hermite", "geometric"), "hermite"), "a": (float, 1.0), "y0": (float, 1.0),
            "paths": (_pos_int, 1000), "coarsen": (_list(_pos_int), [16, 4, 1]), "min_order": (float, 0.8)},
    "arbitrage": {"p": (float, 1.0), "q": (float, 2.0), "d": (_pos_int, 2), "H": (float, 0.7),
                  "sigma": (_pos_float, 0.5), "N": (_pos_int, 8192), "R": (_pos_int, 1), "T": (_pos_float, 1.0),
                  "M": (_pos_int, 1000), "scheme": (_choice("young", "ito"), "young"), "tol": (_pos_float, 1e-4),
                  "block": (_pos_int, 100)},
    "clock": {"T": (_pos_float, 1.0), "N": (_pos_int, 4096), "power": (_pos_float, 2.0),
              "T_new": (_pos_float, 0.5), "N_new": (_pos_int, 256)},
}


@dataclass
class RunConfig:
    experiment: str
    params: dict
    seed: int = 0
    out: str | None = None
    text: str = ""


def parse_config(text: str) -> RunConfig:
    raw: dict = {}
    lines: dict = {}
    for no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {line.strip()!r}", no)
        if key in raw:
            raise ConfigError(f"duplicate key {key!r}", no)
        raw[key], lines[key] = value, no
    if "experiment" not in raw:
        raise ConfigError("missing key 'experiment'")
    exp = raw["experiment"]
    if exp not in SCHEMA:
        raise ConfigError(f"unknown experiment {exp!r}", lines["experiment"])
    schema = {**SCHEMA[exp], **COMMON}
    params = {k: default for k, (_, default) in SCHEMA[exp].items()}
    seed, out = 0, None
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for experiment {exp!r}", lines[key])
        if key == "experiment":
            continue
        try:
            parsed = schema[key][0](value)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad value {value!r} for {key!r}: {e}", lines[key]) from None
        if key == "seed":
            if not 0 <= parsed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer", lines[key])
            seed = parsed
        elif key == "out":
            out = parsed
        else:
            params[key] = parsed
    return RunConfig(exp, params, seed, out, text)


# ---------------------------------------------------------------- experiments

@dataclass
class Outcome:
    status: int
    summary: str
    csv: dict = field(default_factory=dict)     # name -> callable(fh)
    figures: list = field(default_factory=list)  # callables(out_dir) -> path


def _noise(p: dict):
    from .gauss import BrownianMotion, FractionalBM, OrnsteinUhlenbeck, TimeChangedNoise
    if p["noise"] == "bm":
        return BrownianMotion()
    if p["noise"] == "fbm":
        return FractionalBM(p["H"])
    if p["noise"] == "ou":
        return OrnsteinUhlenbeck(p["theta"], p["sigma"])
    T, a = p.get("T", 1.0), p["clock_power"]
    return TimeChangedNoise(BrownianMotion(), lambda t: T * (np.asarray(t) / T) ** a, T)


def _lift(p: dict, noise, X, grid):
    from .roughpath import geometric_lift, hermite_lift, ito_lift
    from .stats import default_alpha
    alpha = p.get("alpha") or default_alpha(noise)
    if p["lift"] == "hermite":
        return hermite_lift(X, noise.variance_fn(grid), alpha, grid)
    if p["lift"] == "geometric":
        return geometric_lift(X, alpha, grid)
    return ito_lift(X, alpha, grid)


def _rows_writer(header, rows):
    import csv

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{x:.17g}" if isinstance(x, float) else x for x in r])
    return write


def run_lift(p, seed, workers):
    from . import plotting
    from .gauss import Grid
    from .roughpath import chen_residual, extract_renorm, write_levels_csv, write_renorm_csv
    grid = Grid(p["T"], p["N"])
    noise = _noise(p)
    rp = _lift(p, noise, noise.sample(grid, seed, 0, p["paths"]), grid)
    chen = chen_residual(rp, p["triples"], seed)
    back = extract_renorm(rp, chen_tol=1e-8)
    err = max([0.0] + [float(np.max(np.abs(a - b))) for a, b in zip(back.G, rp.G)])
    ok = chen <= p["tol"] and err <= p["tol"]
    N = grid.N
    pairs = [(0, N), (0, N // 2), (N // 2, N), (N // 4, 3 * N // 4)]
    one = rp[0]
    pts = grid.points
    return Outcome(EXIT_OK if ok else EXIT_REJECT, f"chen_residual={chen:.3g} roundtrip_error={err:.3g}",
                   {"levels.csv": lambda fh: write_levels_csv(one, pairs, fh),
                    "renorm.csv": lambda fh: write_renorm_csv(one.renorm, grid, fh),
                    "checks.csv": _rows_writer(["check", "value", "tol", "pass"],
                                               [("chen_residual", chen, p["tol"], int(chen <= p["tol"])),
                                                ("roundtrip_error", err, p["tol"], int(err <= p["tol"]))])},
                   [lambda d: plotting.lines(d / "levels.png", pts,
                                             {f"level {i} on [0,t]": one.level(i, np.zeros(N + 1, int), np.arange(N + 1))
                                              for i in range(1, one.k + 1)}, "Levels along the path")])


def run_integrate(p, seed, workers):
    from . import plotting
    from .controlled import polynomial_controlled
    from .gauss import Grid
    from .integrate import rough_integral, write_refinement_csv
    grid = Grid(p["T"], p["N"])
    noise = _noise(p)
    rp = _lift(p, noise, noise.sample(grid, seed, 0, p["paths"]), grid)
    meshes = [m for m in p["meshes"] if grid.N % m == 0]
    res = rough_integral(polynomial_controlled(p["integrand"], rp), rp, mesh_levels=meshes)
    h = [m for m, _ in res.refinement_levels]
    d = [float(np.mean(x)) for x in res.diffs()]
    return Outcome(EXIT_OK, f"rate_estimate={res.rate_estimate}",
                   {"refinement.csv": lambda fh: write_refinement_csv(res, fh)},
                   [lambda dd: plotting.loglog(dd / "refinement.png", h[: len(d)], {"mean |I(h) - I(h/2)|": d},
                                               "Refinement differences", "mesh h", "difference")])


def run_ito(p, seed, workers):
    from . import plotting
    from .controlled import polynomial_table, sin_table
    from .gauss import Grid
    from .integrate import ito_residual
    grid = Grid(p["T"], p["N"])
    noise = _noise(p)
    rp = _lift(p, noise, noise.sample(grid, seed, 0, p["paths"]), grid)
    F = {"x2": polynomial_table([0, 0, 1]), "x3": polynomial_table([0, 0, 0, 1]), "sin": sin_table()}[p["function"]]
    r = ito_residual(F, rp)
    sup = np.max(np.abs(r), axis=-1)
    ok = bool(np.all(sup <= p["tol"]))
    pts = grid.points
    return Outcome(EXIT_OK if ok else EXIT_REJECT, f"max_sup_residual={float(sup.max()):.3g} tol={p['tol']:g}",
                   {"ito.csv": _rows_writer(["path", "sup_residual", "pass"],
                                            [(i, float(v), int(v <= p["tol"])) for i, v in enumerate(sup)]),
                    "residual_path.csv": _rows_writer(["t", "residual"], list(zip(map(float, pts), map(float, r[0]))))},
                   [lambda d: plotting.lines(d / "ito_residual.png", pts, {"path 0": r[0]},
                                             "Rough Ito formula residual", ylabel="residual")])


def run_mc(p, seed, workers):
    from . import plotting
    from .gauss import Grid
    from .stats import Z_THRESHOLD, ExperimentSpec, unbiasedness_report, write_report_csv
    spec = ExperimentSpec(_noise(p), p["lift"], p["integrands"], p["stoppings"], p["M"], seed,
                          Grid(p["T"], p["N"]), p["alpha"])
    rows = unbiasedness_report(spec, workers)
    ok = all(r.passed for r in rows)
    labels = [f"{r.integrand} | {r.stopping}" for r in rows]
    z = [r.estimate.z() for r in rows]
    return Outcome(EXIT_OK if ok else EXIT_REJECT, f"{sum(r.passed for r in rows)}/{len(rows)} cells unbiased",
                   {"report.csv": lambda fh: write_report_csv(rows, fh)},
                   [lambda d: plotting.z_scores(d / "report.png", labels, z, Z_THRESHOLD,
                                                f"{spec.noise.label()} / {spec.lift}")])


def run_balance(p, seed, workers):
    from . import plotting
    from .stats import Z_THRESHOLD, balancing_residual
    noise = _noise(p)
    est = [(n, balancing_residual(noise, n, p["s"], p["u"], p["t"], p["M"], seed)) for n in p["n"]]
    ok = all(e.accepts() for _, e in est)
    rows = [(n, e.mean, e.std_error, e.n_samples, int(e.accepts())) for n, e in est]
    return Outcome(EXIT_OK if ok else EXIT_REJECT, " ".join(f"n={n}:z={e.z():.2f}" for n, e in est),
                   {"balance.csv": _rows_writer(["n", "mean", "se", "n_samples", "pass"], rows)},
                   [lambda d: plotting.z_scores(d / "balance.png", [f"n={n}" for n, _ in est],
                                                [e.z() for _, e in est], Z_THRESHOLD, noise.label())])


def run_sarmanov(p, seed, workers):
    from . import plotting
    from .stats import sarmanov_diagnostics, sarmanov_sample
    dg = sarmanov_diagnostics(p["eps"], p["M"], seed, p["n_max"])
    rows = [(f"ks_{k}", v, "", int(v > 1e-3)) for k, v in dg.ks_pvalues.items()]
    rows += [(f"balancing_n{n}", e.mean, e.std_error, int(e.accepts())) for n, e in dg.balancing.items()]
    a = dg.asymmetry
    rows += [("asymmetry", a.mean, a.std_error, int(not a.accepts())), ("asymmetry_oracle", dg.asymmetry_oracle, "", "")]
    ok = dg.normality_ok() and all(e.accepts() for e in dg.balancing.values())
    xy = sarmanov_sample(p["eps"], min(p["M"], 20000), seed)
    return Outcome(EXIT_OK if ok else EXIT_REJECT, f"asymmetry z={a.z():.1f}",
                   {"sarmanov.csv": _rows_writer(["check", "value", "se", "pass"], rows)},
                   [lambda d: plotting.scatter(d / "sarmanov.png", xy[:, 0], xy[:, 1], f"eps={p['eps']:g}")])


def run_rde(p, seed, workers):
    from . import plotting
    from .gauss import BrownianMotion, Grid
    from .rde import scalar_field, solve_rde_davie, write_solution_csv
    from .roughpath import RoughPathL2, geometric_lift, hermite_lift
    a, y0 = p["a"], p["y0"]
    fine = Grid(p["T"], p["N"])
    X = BrownianMotion().sample(fine, seed, 0, p["paths"])
    f, Df = scalar_field(lambda y: a * y, lambda y: a * np.ones_like(y))
    shift = -0.5 * a * a * p["T"] if p["lift"] == "hermite" else 0.0
    exact = y0 * np.exp(a * X[:, -1] + shift)
    rows, sols = [], {}
    for c in sorted(set(p["coarsen"]), reverse=True):
        if fine.N % c:
            raise ValueError(f"coarsening {c} does not divide N={fine.N}")
        g = Grid(p["T"], fine.N // c)
        Xc = X[:, ::c]
        rp = (hermite_lift(Xc, BrownianMotion().variance_fn(g), 0.45, g) if p["lift"] == "hermite"
              else geometric_lift(Xc, 0.45, g))
        sol = solve_rde_davie(f, Df, y0, RoughPathL2.from_1d(rp, p["lift"]))
        if sol.truncated_at is not None:
            raise FloatingPointError(f"solution blew up at step {sol.truncated_at}")
        rows.append((g.N, float(np.mean(np.abs(sol.Y[:, -1, 0] - exact)))))
        sols[g.N] = sol
    Ns = np.array([r[0] for r in rows], dtype=float)
    errs = np.array([r[1] for r in rows])
    order = float(-np.polyfit(np.log(Ns), np.log(errs), 1)[0]) if len(rows) > 1 else float("nan")
    ok = not order < p["min_order"]
    best = sols[max(sols)]
    one = type(best)(best.Y[0], best.Yprime[0], best.driver[0], best.scheme, best.truncated_at)
    return Outcome(EXIT_OK if ok else EXIT_REJECT, f"strong_order={order:.3f}",
                   {"strong_error.csv": _rows_writer(["N", "mean_abs_error"], rows),
                    "solution.csv": lambda fh: write_solution_csv(one, fh)},
                   [lambda d: plotting.loglog(d / "strong_error.png", Ns, {"E|Y_T - exact|": errs},
                                              f"Davie scheme, fitted order {order:.2f}", "N", "error")])


def run_arbitrage(p, seed, workers):
    from . import plotting
    from .market import arbitrage_demo, exp_fbm_market, gain_process, p_portfolio, write_market_csv
    reps, first = [], None
    for start in range(0, p["M"], p["block"]):
        m = exp_fbm_market(min(p["block"], p["M"] - start), p["d"], p["H"], p["sigma"], p["N"], p["R"],
                           p["T"], seed, p["scheme"], start)
        reps.append(arbitrage_demo(p["p"], p["q"], m, p["tol"]))
        first = first or m[0:1]
    cat = {k: np.concatenate([getattr(r, k) for r in reps]) for k in
           ("min_gain", "terminal_gain", "sf_residual_q", "sf_residual_p", "degenerate")}
    rep = type(reps[0])(p["p"], p["q"], None, None, tol=p["tol"], geometric_gap=max(r.geometric_gap for r in reps),
                        **cat)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        long = p_portfolio(p["q"], first)
    G, _ = gain_process(long, first)
    V = np.sum(long.portfolio.Y[0] * first.S, axis=-1)
    pts = first.grid.points
    from .market import write_arbitrage_csv
    gain0 = reps[0].value_gain[0]
    return Outcome(EXIT_OK if rep.claim_holds else EXIT_REJECT,
                   f"claim_holds={rep.claim_holds} max_sf_residual="
                   f"{float(max(rep.sf_residual_q.max(), rep.sf_residual_p.max())):.3g}",
                   {"arbitrage.csv": lambda fh: write_arbitrage_csv(rep, fh),
                    "prices.csv": lambda fh: write_market_csv(first[0], V[0], G[0], fh)},
                   [lambda d: plotting.lines(d / "arbitrage.png", pts, {"M^q - M^p (path 0)": gain0},
                                             f"Long q={p['q']:g}, short p={p['p']:g}", ylabel="gain")])


def run_clock(p, seed, workers):
    from . import plotting
    from .gauss import BrownianMotion, Grid
    from .market import clock_time_change
    from .roughpath import extract_renorm, lift_from_renorm
    grid = Grid(p["T"], p["N"])
    G2 = grid.points ** p["power"]
    X = BrownianMotion().sample(grid, seed, 0, 1)[0]
    rp = lift_from_renorm(X, [G2], 0.45, grid)
    levels, idx, rounding = clock_time_change(rp, G2, p["T_new"], p["N_new"])
    Gt = extract_renorm(levels, alpha=0.45).G[0]
    new = levels.grid
    err = float(np.max(np.abs(Gt - new.points)))
    tol = float(np.max(np.diff(G2)))
    rows = [(float(t), float(g), float(t), float(abs(g - t))) for t, g in zip(new.points, Gt)]
    return Outcome(EXIT_OK if err <= tol else EXIT_REJECT, f"max_error={err:.3g} one_step={tol:.3g}",
                   {"clock.csv": _rows_writer(["t", "G2_time_changed", "identity", "error"], rows)},
                   [lambda d: plotting.lines(d / "clock.png", new.points, {"time-changed G2": Gt, "identity": new.points},
                                             "Renormalisation clock")])


RUNNERS = {"lift": run_lift, "integrate": run_integrate, "ito": run_ito, "mc-unbiased": run_mc,
           "balance": run_balance, "sarmanov": run_sarmanov, "rde": run_rde, "arbitrage": run_arbitrage,
           "clock": run_clock}


# ---------------------------------------------------------------- driver

def list_experiments() -> str:
    return "\n".join(f"{name}: {desc}" for name, desc in CATALOG)


def _versions() -> dict:
    import matplotlib
    import scipy
    from . import __version__
    return {"roughlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__}


def execute(cfg: RunConfig, out: Path, workers: int = 1, figures: bool = True) -> int:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        res = RUNNERS[cfg.experiment](cfg.params, cfg.seed, workers)
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    artifacts = []
    for name, write in res.csv.items():
        with open(out / name, "w", newline="") as fh:
            write(fh)
        artifacts.append(name)
    if figures:
        for fig in res.figures:
            artifacts.append(fig(out).name)
    manifest = {"experiment": cfg.experiment, "config_sha256": hashlib.sha256(cfg.text.encode()).hexdigest(),
                "seed": cfg.seed, "workers": workers, "params": cfg.params, "versions": _versions(),
                "wall_time_s": round(time.perf_counter() - t0, 3), "status": res.status,
                "summary": res.summary, "artifacts": artifacts}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    print(f"{cfg.experiment}: {res.summary} -> {out} (exit {res.status})")
    return res.status


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="roughlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("--config", required=True, metavar="PATH")
    r.add_argument("--seed", type=int, metavar="U64", help="overrides the config seed")
    r.add_argument("--workers", type=int, default=os.cpu_count() or 1, metavar="N")
    r.add_argument("--out", metavar="DIR", help="output directory (default $ROUGHLAB_OUT or ./roughlab_out)")
    r.add_argument("--no-figures", action="store_true", help="write CSV artifacts only")
    sub.add_parser("list", help="list the available experiments")
    args = ap.parse_args(argv)
    if args.cmd == "list":
        print(list_experiments())
        return EXIT_OK
    try:
        text = Path(args.config).read_text()
    except OSError as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text)
    except ConfigError as e:
        print(f"{args.config}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return EXIT_CONFIG
        cfg.seed = args.seed
    if args.workers < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.out or os.environ.get("ROUGHLAB_OUT") or "roughlab_out")
    return execute(cfg, out, args.workers, not args.no_figures)


if __name__ == "__main__":
    sys.exit(main())
