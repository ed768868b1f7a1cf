import numpy as np
import pytest
from hypothesis import given, strategies as st

from divland import channel as ch
from divland.characterize import (PairedLog, bisquare_fit, bisquare_fit_linear,
                                  bisquare_fit_quadratic, characterize_log,
                                  estimate_lag, excitation_profile, fit_noise_model,
                                  lag_per_anchor, median_filter, read_paired_log,
                                  residual_stats, simulate_paired_log,
                                  write_paired_log)
from divland.errors import ConvergenceError, EstimationError

SIZE = ch.make_noise_model("size")


def _log(truth, est, dt=0.05):
    return PairedLog(np.arange(len(truth)) * dt, truth, est)


def _smooth(n=600, seed=0):
    return excitation_profile(n * 0.05, 0.05, np.random.default_rng(seed))


def test_exact_shift_recovered():
    f = _smooth()
    assert estimate_lag(_log(f, ch.delay_series(f, 2))) == 2
    assert estimate_lag(_log(f, f)) == 0


def test_noisy_lag_with_prefilter():
    hits = 0
    for seed in range(20):
        log = simulate_paired_log(SIZE, 2, np.random.default_rng(seed))
        hits += estimate_lag(log, prefilter=5) == 2
    assert hits >= 19


def test_flat_truth_is_unobservable():
    f = np.zeros(200)
    with pytest.raises(EstimationError):
        estimate_lag(_log(f, f))
    assert np.isnan(lag_per_anchor(f, f)).all()


def test_lag_inputs_validated():
    f = _smooth(30)
    with pytest.raises(ValueError):
        lag_per_anchor(f, f, window=40)
    with pytest.raises(ValueError):
        lag_per_anchor(f, f[:-1], window=8)


def test_median_filter_examples():
    x = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    out, delay = median_filter(x, 1)
    assert delay == 0 and np.array_equal(out, x)
    out, delay = median_filter([0, 0, 100, 0, 0], 3)
    assert delay == 0 and np.all(out == 0)
    out, delay = median_filter([0, 0, 100, 0, 0], 3, causal=True)
    assert delay == 1 and np.all(out == 0)
    out, _ = median_filter(np.full(12, 2.5), 5)
    assert np.all(out == 2.5)
    with pytest.raises(ValueError):
        median_filter(x, 4)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.sampled_from([1, 3, 5, 7]))
def test_median_filter_idempotent_on_monotone(xs, n):
    x = np.sort(np.array(xs))
    once, _ = median_filter(x, n)
    twice, _ = median_filter(once, n)
    assert np.array_equal(once, twice)


def test_causal_median_is_delayed_centred_median():
    x = np.random.default_rng(0).normal(size=100)
    cen, _ = median_filter(x, 5)
    cau, delay = median_filter(x, 5, causal=True)
    assert delay == 2
    assert np.array_equal(cau[4:], cen[2:-2])


def test_bisquare_exact_line():
    D = np.linspace(-1, 1, 50)
    assert bisquare_fit_linear(D, 0.8 * D + 0.1) == pytest.approx((0.8, 0.1), abs=1e-9)


def test_bisquare_gross_outliers():
    rng = np.random.default_rng(0)
    D = rng.uniform(-1, 1, 200)
    y = 0.8 * D + 0.1 + rng.normal(0, 0.02, 200)
    bad = rng.choice(200, 40, replace=False)
    y[bad] += 5.0
    a, b = bisquare_fit_linear(D, y)
    clean = np.setdiff1d(np.arange(200), bad)
    oa, ob = np.polyfit(D[clean], y[clean], 1)
    assert abs(a - oa) < 0.02 and abs(b - ob) < 0.02
    assert abs(a - 0.8) < 0.02 and abs(b - 0.1) < 0.02


def test_bisquare_beats_ols_on_contaminated_data():
    for seed in range(25):
        rng = np.random.default_rng(seed)
        n = 150
        D = rng.uniform(-1, 1, n)
        y = 0.84 * D - 0.006 + rng.normal(0, 0.05, n)
        k = int(rng.uniform(0.1, 0.3) * n)
        idx = rng.choice(n, k, replace=False)
        y[idx] += rng.uniform(1, 4, k)
        rob = np.array(bisquare_fit_linear(D, y))
        ols = np.polyfit(D, y, 1)
        truth = np.array([0.84, -0.006])
        assert np.max(np.abs(rob - truth)) <= np.max(np.abs(ols - truth))


def test_bisquare_quadratic_exact_and_constant():
    D = np.linspace(-1, 1, 41)
    assert bisquare_fit_quadratic(D, 0.2 * D ** 2 + 0.05) == pytest.approx((0.2, 0.0, 0.05), abs=1e-9)
    assert bisquare_fit_quadratic(D, np.full_like(D, 0.07)) == pytest.approx((0.0, 0.0, 0.07), abs=1e-9)


def test_bisquare_input_errors():
    with pytest.raises(ValueError):
        bisquare_fit_linear(np.arange(5.0), np.arange(5.0))
    with pytest.raises(EstimationError):
        bisquare_fit_linear(np.ones(20), np.arange(20.0))


def test_bisquare_non_convergence_carries_last_iterate():
    rng = np.random.default_rng(0)
    D = rng.uniform(-1, 1, 300)
    y = 0.8 * D + rng.standard_t(1, 300)
    X = np.column_stack([D, np.ones_like(D)])
    with pytest.raises(ConvergenceError) as info:
        bisquare_fit(X, y, max_iter=1, accept_tol=0.0)
    assert info.value.last is not None and len(info.value.last) == 2
    assert info.value.iterations == 1


def _uniform_refit(seed=4):
    rng = np.random.default_rng(seed)
    D = rng.uniform(-1, 1, 10_000)
    return fit_noise_model(D, ch.corrupt_many(SIZE, D, rng))


def test_round_trip_size_model():
    m = _uniform_refit()
    assert abs(m.a - 0.8393) <= 0.05
    assert abs(m.b + 0.0060) <= 0.02
    assert abs(m.c - 0.1841) <= 0.08


@pytest.mark.xfail(strict=True, reason="a global-scale bisquare fit flattens the "
                   "heteroscedastic spread curve (about 17 % RMS low at the edges)")
def test_spread_curve_closure():
    m = _uniform_refit()
    grid = np.linspace(-1, 1, 101)
    rel = (m.spread(grid) - SIZE.spread(grid)) / SIZE.spread(grid)
    assert np.sqrt(np.mean(rel ** 2)) < 0.10


def test_residual_stats_zero_residuals():
    D = np.linspace(-1, 1, 30)
    s = residual_stats(D, SIZE.bias(D), SIZE)
    assert (s.mean, s.std) == pytest.approx((0.0, 0.0), abs=1e-15)


def test_residual_std_on_flight_like_log():
    rng = np.random.default_rng(0)
    D = excitation_profile(500.0, 0.05, rng)
    m = fit_noise_model(D, ch.corrupt_many(SIZE, D, rng))
    assert m.resid_std == pytest.approx(0.0937, rel=0.10)


@pytest.mark.parametrize("kind,lag,reported", [("field-fit", 2, 0.6059), ("size", 1, 0.1526)])
def test_delay_corrected_rmse_vicinity(kind, lag, reported):
    # excitation spanning the model domain (+-1.5)
    log = simulate_paired_log(ch.make_noise_model(kind), lag, np.random.default_rng(1),
                              duration=300.0, amplitude=1.5)
    found, model, stats = characterize_log(log)
    assert found == lag
    assert 0.5 * reported <= stats.rmse_corrected <= 1.5 * reported
    assert stats.rmse_raw >= stats.rmse_corrected


def test_paired_log_roundtrip(tmp_path):
    log = simulate_paired_log(SIZE, 1, np.random.default_rng(0), duration=5.0)
    path = tmp_path / "log.csv"
    write_paired_log(log, path)
    back = read_paired_log(path)
    assert np.array_equal(back.truth, log.truth)
    assert np.array_equal(back.estimate, log.estimate)
    assert back.dt == pytest.approx(0.05)


def test_paired_log_validation(tmp_path):
    with pytest.raises(ValueError):
        PairedLog([0, 0.05, 0.2], [0, 0, 0], [0, 0, 0])
    with pytest.raises(ValueError):
        PairedLog([0, 0.05], [0, 0], [0])
    path = tmp_path / "bad.csv"
    path.write_text("time,D,Dhat\n0,0,0\n")
    with pytest.raises(ValueError):
        read_paired_log(path)


@pytest.mark.parametrize("lag", range(11))
def test_lag_recovery_at_adequate_snr(lag):
    # white noise at one third of the signal variance, lags across [0, M]
    hits = 0
    for seed in range(40):
        rng = np.random.default_rng(seed)
        f = excitation_profile(60.0, 0.05, rng)
        sd = np.sqrt(np.var(f) / 3.0)
        est = ch.delay_series(f + rng.normal(0, sd, len(f)), lag)
        hits += estimate_lag(_log(f, est), prefilter=5) == lag
    assert hits >= 0.95 * 40
