import io
import math

import numpy as np
import pytest
from scipy import integrate as sint

from roughlab.gauss import BrownianMotion, FractionalBM, Grid, OrnsteinUhlenbeck, TimeChangedNoise
from roughlab.stats import (
    DEFAULT_INTEGRANDS,
    REPORT_COLUMNS,
    ExperimentSpec,
    IntegrandSpec,
    MCError,
    MCEstimate,
    SarmanovPair,
    StoppingSpec,
    balancing_residual,
    default_alpha,
    expected_all_pass,
    family_verdicts,
    mc_integral_mean,
    mc_values,
    moment_bound,
    moment_bound_check,
    noise_from_name,
    run_blocks,
    sarmanov_diagnostics,
    sarmanov_sample,
    unbiasedness_report,
    write_report_csv,
)

SMALL = Grid(1.0, 64)


def test_estimate_from_samples():
    e = MCEstimate.from_samples([1.0, 2.0, 3.0, 4.0])
    assert e.mean == 2.5
    assert e.std_error == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert e.ci95[0] < 2.5 < e.ci95[1]
    assert e.accepts(2.5)
    assert not e.accepts(2.5 + 5 * e.std_error)
    assert e.z(2.5) == 0.0


def test_estimate_tolerates_rare_non_finite_values():
    v = np.ones(10_000)
    v[3] = np.nan
    e = MCEstimate.from_samples(v)
    assert e.errors == 1 and e.n_samples == 9999
    v[:20] = np.inf
    with pytest.raises(MCError):
        MCEstimate.from_samples(v)


def test_zero_error_estimate():
    e = MCEstimate(0.0, 0.0, 10)
    assert e.z() == 0.0
    assert MCEstimate(1.0, 0.0, 10).z() == math.inf


@pytest.mark.parametrize(
    "text,kind,family",
    [("x", "poly", "Pol"), ("he3", "poly", "Pol"), ("poly:1;0;2", "poly", "Pol"),
     ("sig:2@0.5", "sig", "pSig"), ("simple:0.25-1", "simple", "simple")],
)
def test_integrand_parse(text, kind, family):
    spec = IntegrandSpec.parse(text)
    assert spec.kind == kind and spec.family == family
    assert IntegrandSpec.parse(spec.label).label == spec.label


@pytest.mark.parametrize("text", ["", "x4", "sig:1", "simple:2-1", "poly:", "sig:a@1"])
def test_integrand_parse_rejects(text):
    with pytest.raises(ValueError):
        IntegrandSpec.parse(text)


def test_stopping_parse():
    assert StoppingSpec.parse("T").index(SMALL, SMALL.points) == 64
    assert StoppingSpec.parse("t=0.5").index(SMALL, SMALL.points) == 32
    assert StoppingSpec.parse("clock=0.5").index(SMALL, SMALL.points) == 33
    with pytest.raises(ValueError):
        StoppingSpec.parse("tau=1")
    with pytest.raises(ValueError):
        StoppingSpec.parse("t=3").index(SMALL, SMALL.points)


def test_experiment_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(BrownianMotion(), M=999)
    with pytest.raises(ValueError):
        ExperimentSpec(BrownianMotion(), lift="rough")
    with pytest.raises(ValueError):
        ExperimentSpec(BrownianMotion(), lift="custom")
    with pytest.raises(ValueError):
        ExperimentSpec(BrownianMotion(), integrands=["sig:1@0.3"], grid=Grid(1.0, 4))


def test_default_alpha():
    assert default_alpha(BrownianMotion()) == pytest.approx(0.49)
    assert default_alpha(FractionalBM(0.4)) == pytest.approx(0.39)
    assert default_alpha(FractionalBM(0.7)) == pytest.approx(0.49)


def test_expected_verdict_table():
    bm, fbm, ou = BrownianMotion(), FractionalBM(0.4), OrnsteinUhlenbeck()
    tc = TimeChangedNoise(bm, lambda t: t**2, 1.0)
    assert all(expected_all_pass(n, "hermite", "Pol") for n in (bm, fbm, ou, tc))
    assert expected_all_pass(bm, "hermite", "pSig") and expected_all_pass(tc, "ito", "simple")
    assert not expected_all_pass(fbm, "hermite", "pSig")
    assert not expected_all_pass(ou, "hermite", "simple")
    assert not expected_all_pass(bm, "geometric", "Pol")
    assert expected_all_pass(bm, "geometric", "simple")
    assert expected_all_pass(bm, "custom", "Pol") is None


def test_seed_reproducibility_and_worker_independence():
    spec = ExperimentSpec(FractionalBM(0.4), integrands=["x2", "sig:1@0.5"], M=1300, seed=5, grid=SMALL)
    a = mc_values(spec, workers=1)
    b = mc_values(spec, workers=1)
    c = mc_values(spec, workers=3)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)
    assert mc_integral_mean(spec, 1) == mc_integral_mean(spec, 1, workers=2)
    other = ExperimentSpec(FractionalBM(0.4), integrands=["x2"], M=1300, seed=6, grid=SMALL)
    assert not np.array_equal(mc_values(other)[0], a[0])


def test_run_blocks_preserves_order():
    assert run_blocks(lambda b: b * b, 7, workers=3) == [0, 1, 4, 9, 16, 25, 36]


def test_standard_error_scales_with_paths():
    ratios = []
    for seed in range(3):
        small = mc_integral_mean(ExperimentSpec(BrownianMotion(), integrands=["x2"], M=2000, seed=seed, grid=SMALL))
        big = mc_integral_mean(ExperimentSpec(BrownianMotion(), integrands=["x2"], M=8000, seed=seed, grid=SMALL))
        ratios.append(small.std_error / big.std_error)
    assert np.mean(ratios) == pytest.approx(2.0, rel=0.1)


def test_hermite_bm_square_is_unbiased():
    e = mc_integral_mean(ExperimentSpec(BrownianMotion(), integrands=["x2"], M=10**5, grid=SMALL))
    assert e.accepts()


def test_geometric_bm_identity_has_half_time_mean():
    e = mc_integral_mean(ExperimentSpec(BrownianMotion(), lift="geometric", integrands=["x"], M=10**5, grid=SMALL))
    assert e.accepts(0.5)
    assert not e.accepts(0.0)


def test_fbm_signature_integral_bias():
    H, s, T = 0.7, 0.5, 1.0
    e = mc_integral_mean(ExperimentSpec(FractionalBM(H), integrands=["sig:1@0.5"], M=10**5, grid=SMALL))
    oracle = 0.5 * ((T - s) ** (2 * H) - T ** (2 * H) + s ** (2 * H))
    assert e.accepts(oracle)
    assert not e.accepts(0.0)


def test_small_report_for_ito_bm():
    spec = ExperimentSpec(BrownianMotion(), lift="ito", M=2048, seed=1, grid=Grid(2.0, 64))
    rows = unbiasedness_report(spec)
    assert [r.integrand for r in rows] == list(DEFAULT_INTEGRANDS)
    assert all(r.passed for r in rows)
    verdicts = family_verdicts(rows)
    assert set(k[2] for k in verdicts) == {"Pol", "pSig", "simple"}
    buf = io.StringIO()
    write_report_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == REPORT_COLUMNS
    assert len(lines) == 1 + len(rows)


def test_clock_stopping_runs():
    spec = ExperimentSpec(FractionalBM(0.4), integrands=["x"], stoppings=["clock=0.5", "t=1"], M=1024,
                          grid=Grid(2.0, 64))
    vals = mc_values(spec)
    assert vals.shape == (1, 2, 1024)


def test_bm_balancing_passes():
    for n in range(2, 6):
        assert balancing_residual(BrownianMotion(), n, 0.0, 1.0, 2.0, 10**5).accepts()
        assert balancing_residual(BrownianMotion(), n, 0.3, 0.5, 1.7, 10**5).accepts()


def test_fbm_balancing_fails_at_level_two():
    e = balancing_residual(FractionalBM(0.7), 2, 0.0, 1.0, 2.0, 10**5)
    assert e.accepts(0.5 * (2**1.4 - 2))
    assert not e.accepts()


def test_balancing_validation():
    with pytest.raises(ValueError):
        balancing_residual(BrownianMotion(), 1, 0, 1, 2, 1000)
    with pytest.raises(ValueError):
        balancing_residual(BrownianMotion(), 2, 0, 3, 2, 1000)


def test_moment_bound_formula():
    assert moment_bound(2, 4.0) == 2 * 16
    assert moment_bound(3, 4.0) == 2 * 6 * 64
    assert moment_bound(4, 1.0) == 24


def test_moment_bound_check_on_bm():
    rows = moment_bound_check(BrownianMotion(), 4, C=4.0, M=10**5)
    assert rows[1].estimate.accepts(1.0)
    assert rows[3].estimate.accepts(3.0)
    assert all(r.margin > 0 for r in rows)
    with pytest.raises(ValueError):
        moment_bound_check(BrownianMotion(), 9)


def test_sarmanov_positivity():
    with pytest.raises(ValueError, match="not positive"):
        SarmanovPair(0.6)


def test_sarmanov_asymmetry_oracle_matches_direct_quadrature():
    pair = SarmanovPair(0.3)

    def integrand(y, x):
        return pair.tilt(x, y) * pair.density(x, y)

    direct, _ = sint.dblquad(integrand, -9, 9, -9, 9)
    assert pair.asymmetry_mean() == pytest.approx(direct, abs=1e-8)


def test_independent_pairs_at_zero_eps():
    d = sarmanov_diagnostics(0.0, M=20_000, seed=1)
    assert d.normality_ok()
    assert d.asymmetry.accepts(0.0)
    assert d.asymmetry_oracle == pytest.approx(0.0, abs=1e-14)


def test_sarmanov_diagnostics():
    d = sarmanov_diagnostics(0.3, M=10**5, seed=0)
    assert d.normality_ok(1e-3)
    assert all(e.accepts() for e in d.balancing.values())
    assert sorted(d.balancing) == [2, 3, 4, 5]
    assert not d.asymmetry.accepts(0.0)
    assert d.asymmetry.accepts(d.asymmetry_oracle)


def test_sarmanov_sample_reproducible():
    a = sarmanov_sample(0.3, 5000, seed=4)
    np.testing.assert_array_equal(a, sarmanov_sample(0.3, 5000, seed=4))
    assert a.shape == (5000, 2)


def test_noise_from_name():
    assert noise_from_name("bm").kind == "bm"
    assert noise_from_name("fbm", H=0.3).H == 0.3
    assert noise_from_name("ou", theta=2.0).theta == 2.0
    with pytest.raises(ValueError):
        noise_from_name("levy")
