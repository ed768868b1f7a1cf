"""Offline characterisation of a divergence estimator against ground truth.

Works on paired logs (uniformly sampled truth and estimate streams):
estimating the lag of the estimate, causal median prefiltering, robust
bisquare fits of the bias line and of the spread curve, and residual
statistics.  ``fit_noise_model`` chains these into a
:class:`~divland.channel.NoiseModel`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import channel as ch
from .errors import ConvergenceError, EstimationError

BISQUARE_TUNING = 4.685
MAD_TO_SIGMA = 0.6744897501960817
DEFAULT_WINDOW = 40
DEFAULT_MAX_SHIFT = 10
PAIRED_COLUMNS = ("t", "truth", "estimate")


@dataclass(frozen=True)
class PairedLog:
    t: np.ndarray
    truth: np.ndarray
    estimate: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        truth = np.asarray(self.truth, dtype=float)
        est = np.asarray(self.estimate, dtype=float)
        if not (t.ndim == truth.ndim == est.ndim == 1):
            raise ValueError("paired log columns must be one-dimensional")
        if not len(t) == len(truth) == len(est):
            raise ValueError("paired log columns must have equal lengths")
        if len(t) > 2 and np.ptp(np.diff(t)) > 1e-9:
            raise ValueError("paired log must be uniformly sampled")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "truth", truth)
        object.__setattr__(self, "estimate", est)

    def __len__(self):
        return len(self.t)

    @property
    def dt(self) -> float:
        if len(self.t) < 2:
            raise ValueError("need two samples for a sample interval")
        return float(self.t[1] - self.t[0])


def read_paired_log(path) -> PairedLog:
    """Read a ``t,truth,estimate`` CSV with header."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if tuple(header) != PAIRED_COLUMNS:
            raise ValueError(f"expected header {','.join(PAIRED_COLUMNS)}, got {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(-1, 3)
    return PairedLog(data[:, 0], data[:, 1], data[:, 2])


def write_paired_log(log: PairedLog, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIRED_COLUMNS)
        for row in zip(log.t, log.truth, log.estimate):
            w.writerow([repr(float(v)) for v in row])


def median_filter(series, n_win: int, causal: bool = False):
    """Moving median of odd width ``n_win``, edges padded with the end samples.

    The centred filter has no delay.  With ``causal`` each output uses only
    the last ``n_win`` samples, which delays smooth signals by
    ``(n_win - 1) / 2`` samples.  Returns ``(filtered, delay)``.
    """
    if n_win < 1 or n_win % 2 == 0:
        raise ValueError("n_win must be a positive odd integer")
    x = np.asarray(series, dtype=float)
    half = (n_win - 1) // 2
    delay = half if causal else 0
    if n_win == 1 or len(x) == 0:
        return x.copy(), delay
    if causal:
        padded = np.concatenate([np.full(n_win - 1, x[0]), x])
    else:
        padded = np.concatenate([np.full(half, x[0]), x, np.full(half, x[-1])])
    return np.median(sliding_window_view(padded, n_win), axis=1), delay


def lag_per_anchor(truth, estimate, window: int = DEFAULT_WINDOW,
                   max_shift: int = DEFAULT_MAX_SHIFT) -> np.ndarray:
    """Best shift of the estimate for each anchor; NaN where truth is flat.

    For anchor ``i`` the truth window ``truth[i:i+W]`` is compared with the
    estimate windows ``estimate[i+m:i+m+W]``, ``m = 0..M``, by sum of
    squared differences.
    """
    f = np.asarray(truth, dtype=float)
    g = np.asarray(estimate, dtype=float)
    if window < 8:
        raise ValueError("window must be at least 8 samples")
    if max_shift < 1:
        raise ValueError("max_shift must be at least 1")
    if len(f) != len(g):
        raise ValueError("truth and estimate must have equal lengths")
    n_anchor = len(f) - window - max_shift + 1
    if n_anchor < 1:
        raise ValueError(f"need at least {window + max_shift} samples, got {len(f)}")
    fw = sliding_window_view(f, window)[:n_anchor]
    gw = sliding_window_view(g, window)
    sse = np.empty((n_anchor, max_shift + 1))
    for m in range(max_shift + 1):
        sse[:, m] = np.sum((fw - gw[m:m + n_anchor]) ** 2, axis=1)
    best = np.argmin(sse, axis=1).astype(float)
    scale = np.maximum(np.abs(fw).max(axis=1), 1.0)
    best[np.ptp(fw, axis=1) <= 1e-12 * scale] = np.nan
    return best


def estimate_lag(log: PairedLog, window: int = DEFAULT_WINDOW,
                 max_shift: int = DEFAULT_MAX_SHIFT,
                 prefilter: int | None = None) -> int:
    """Lag of the estimate behind the truth, in samples.

    With ``prefilter`` the estimate is first passed through a causal median
    of that width, as an onboard filter would be, and the filter delay is
    subtracted from the result.
    """
    est = log.estimate
    delay = 0
    if prefilter is not None:
        est, delay = median_filter(est, prefilter, causal=True)
    # search far enough that lags up to max_shift survive the filter delay
    best = lag_per_anchor(log.truth, est, window, max_shift + delay)
    if np.all(np.isnan(best)):
        raise EstimationError("every truth window is flat; lag is unobservable")
    return int(round(float(np.nanmean(best)))) - delay


def _bisquare_weights(u):
    w = (1.0 - u * u) ** 2
    w[np.abs(u) >= 1.0] = 0.0
    return w


def bisquare_fit(X, y, tuning: float = BISQUARE_TUNING, tol: float = 1e-10,
                 max_iter: int = 50, accept_tol: float = 1e-4) -> np.ndarray:
    """Tukey bisquare regression by iteratively reweighted least squares.

    Residuals are leverage-adjusted and scaled by the MAD estimate of sigma;
    the iteration starts from ordinary least squares and stops when no
    coefficient moves by more than ``tol``.  At ``max_iter`` the last
    iterate is accepted if its final step was below ``accept_tol`` relative
    to the coefficient size (slow linear convergence on skewed data, far
    below the sampling error of the coefficients).

    Raises
    ------
    ConvergenceError
        When the iterate is still moving after ``max_iter`` iterations, with
        the last iterate attached.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("design and response sizes differ")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise EstimationError("design matrix is rank deficient")

    Q, _ = np.linalg.qr(X)
    h = np.minimum(np.sum(Q * Q, axis=1), 1.0 - 1e-12)
    adj = 1.0 / np.sqrt(1.0 - h)
    floor = 1e-12 * max(1.0, float(np.max(np.abs(y))))

    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    for it in range(1, max_iter + 1):
        r = (y - X @ beta) * adj
        s = np.median(np.abs(r)) / MAD_TO_SIGMA
        if s <= floor:
            # at least half the points are fitted exactly; keep only those
            w = (np.abs(r) <= floor).astype(float)
        else:
            w = _bisquare_weights(r / (tuning * s))
        sw = np.sqrt(w)
        if np.linalg.matrix_rank(X * sw[:, None]) < X.shape[1]:
            raise ConvergenceError("weighted design became rank deficient",
                                   last=beta, iterations=it)
        new = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
        change = np.max(np.abs(new - beta))
        beta = new
        if change < tol:
            return beta
    if change < accept_tol * max(1.0, float(np.max(np.abs(beta)))):
        return beta
    raise ConvergenceError(f"bisquare fit did not converge in {max_iter} iterations",
                           last=beta, iterations=max_iter)


def _check_fit_input(D, y):
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(D) != len(y):
        raise ValueError("inputs must have equal lengths")
    if len(D) < 10:
        raise ValueError("need at least 10 points")
    if np.ptp(D) == 0:
        raise EstimationError("all divergences are equal")
    return D, y


def bisquare_fit_linear(D, D_hat, **kw) -> tuple[float, float]:
    """Robust bias line ``D_hat = a D + b``; returns ``(a, b)``."""
    D, y = _check_fit_input(D, D_hat)
    a, b = bisquare_fit(np.column_stack([D, np.ones_like(D)]), y, **kw)
    return float(a), float(b)


def bisquare_fit_quadratic(D, abs_err, **kw) -> tuple[float, float, float]:
    """Robust spread curve ``|err| = c D^2 + d D + e``; returns ``(c, d, e)``."""
    D, y = _check_fit_input(D, abs_err)
    X = np.column_stack([D * D, D, np.ones_like(D)])
    if np.linalg.matrix_rank(X) < 3:
        raise EstimationError("need at least three distinct divergences")
    c, d, e = bisquare_fit(X, y, **kw)
    return float(c), float(d), float(e)


@dataclass(frozen=True)
class ResidualStats:
    mean: float
    std: float
    rmse_raw: float
    rmse_corrected: float


def residual_stats(D, D_hat, model: ch.NoiseModel, lag: int = 0) -> ResidualStats:
    """Residual moments around the bias line and RMSE against the truth.

    ``rmse_raw`` compares samples as logged; ``rmse_corrected`` first
    shifts the estimate back by ``lag`` samples.  Residuals ``D_hat - f1(D)``
    are taken on the lag-corrected pairs.
    """
    D = np.asarray(D, dtype=float)
    y = np.asarray(D_hat, dtype=float)
    if len(D) != len(y):
        raise ValueError("inputs must have equal lengths")
    if lag < 0 or lag >= len(D):
        raise ValueError("lag out of range")
    rmse_raw = math.sqrt(float(np.mean((y - D) ** 2)))
    Dc, yc = (D[:len(D) - lag], y[lag:]) if lag else (D, y)
    rmse_cor = math.sqrt(float(np.mean((yc - Dc) ** 2)))
    res = yc - model.bias(Dc)
    return ResidualStats(float(np.mean(res)), float(np.std(res)), rmse_raw, rmse_cor)


def fit_noise_model(D, D_hat, lag: int = 0, **kw) -> ch.NoiseModel:
    """Bias line, spread curve and residual moments from aligned data."""
    D = np.asarray(D, dtype=float)
    y = np.asarray(D_hat, dtype=float)
    if lag:
        D, y = D[:len(D) - lag], y[lag:]
    a, b = bisquare_fit_linear(D, y, **kw)
    res = y - (a * D + b)
    c, d, e = bisquare_fit_quadratic(D, np.abs(res), **kw)
    return ch.NoiseModel(a=a, b=b, c=c, d=d, e=e,
                         resid_mean=float(np.mean(res)),
                         resid_std=float(np.std(res)))


def characterize_log(log: PairedLog, window: int = DEFAULT_WINDOW,
                     max_shift: int = DEFAULT_MAX_SHIFT,
                     prefilter: int | None = 5):
    """Lag, fitted noise model and residual statistics of a paired log."""
    lag = max(0, estimate_lag(log, window, max_shift, prefilter))
    model = fit_noise_model(log.truth, log.estimate, lag=lag)
    stats = residual_stats(log.truth, log.estimate, model, lag=lag)
    return lag, model, stats


def excitation_profile(duration: float, dt: float, rng, amplitude: float = 1.0,
                       n_tones: int = 5, band=(0.1, 1.0)) -> np.ndarray:
    """Flight-like divergence excitation: random-phase tones in ``band`` Hz.

    Scaled so the peak magnitude equals ``amplitude``.
    """
    if not (duration > 0 and dt > 0):
        raise ValueError("duration and dt must be positive")
    t = np.arange(int(round(duration / dt))) * dt
    freqs = rng.uniform(band[0], band[1], n_tones)
    phases = rng.uniform(0, 2 * np.pi, n_tones)
    weights = rng.uniform(0.5, 1.0, n_tones)
    x = np.sum(weights[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None]),
               axis=0)
    peak = np.max(np.abs(x))
    return amplitude * x / peak if peak > 0 else x


def simulate_paired_log(model: ch.NoiseModel, lag: int, rng, duration: float = 60.0,
                        dt: float = 0.05, amplitude: float = 1.0,
                        truth=None) -> PairedLog:
    """Paired log of an excitation (or given ``truth``) seen through the channel."""
    if truth is None:
        truth = excitation_profile(duration, dt, rng, amplitude)
    truth = np.asarray(truth, dtype=float)
    est = ch.delay_series(ch.corrupt_many(model, truth, rng), lag)
    return PairedLog(np.arange(len(truth)) * dt, truth, est)
