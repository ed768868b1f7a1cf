"""Self-induced oscillation detection from a lagged-window covariance.

The detector keeps a ring buffer of divergence estimates and compares the
latest ``n_window`` samples with the ``n_window`` samples ending ``shift``
samples earlier.  When the shift is half the oscillation period the two
windows are in anti-phase and their covariance is strongly negative.

``dominant_period`` is a DFT helper used to pick the shift offline or from a
slow sliding window; it is not the runtime detection mechanism.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

DEFAULT_THRESHOLD = -3e-3
DEFAULT_SHIFT = 10
MIN_WINDOW = 20
FALSE_PEAK_LEVEL = 0.01


def window_for_shift(shift: int, min_window: int = MIN_WINDOW) -> int:
    """Smallest whole number of periods (``2 * shift``) spanning ``min_window``."""
    period = 2 * shift
    return period * max(1, math.ceil(min_window / period))


def lagged_covariance(x, shift: int, n_window: int) -> float:
    """Covariance of the last ``n_window`` samples with those ``shift`` earlier.

    Uses the 1/N normalisation.  ``x`` must hold at least
    ``n_window + shift`` samples.
    """
    x = np.asarray(x, dtype=float)
    need = n_window + shift
    if len(x) < need:
        raise ValueError(f"need {need} samples, got {len(x)}")
    cur = x[len(x) - n_window:]
    old = x[len(x) - need:len(x) - shift]
    return float(np.mean((cur - cur.mean()) * (old - old.mean())))


def dominant_period(series, dt, min_samples: int = 64,
                    peak_ratio: float | None = None):
    """Period (s) of the strongest non-DC DFT bin, or ``None`` if no peak.

    The spectrum counts as flat when its largest bin is below ``peak_ratio``
    times the median bin.  By default the ratio is the level a white-noise
    periodogram exceeds with 1 % probability across all bins.
    """
    x = np.asarray(series, dtype=float)
    if len(x) < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {len(x)}")
    x = x - x.mean()
    power = np.abs(np.fft.rfft(x))[1:] ** 2
    if len(x) % 2 == 0:
        power = power[:-1]  # Nyquist bin is real-valued, different statistics
    if len(power) == 0 or not np.any(power > 0):
        return None
    if peak_ratio is None:
        peak_ratio = white_noise_peak_ratio(len(power))
    k = int(np.argmax(power))
    if power[k] < peak_ratio * np.median(power):
        return None
    return len(x) * dt / (k + 1)


def white_noise_peak_ratio(n_bins: int, level: float = FALSE_PEAK_LEVEL) -> float:
    # periodogram bins of white noise are exponential; median = ln 2 * mean
    return math.log(n_bins / level) / math.log(2.0)


@dataclass
class DetectorConfig:
    threshold: float = DEFAULT_THRESHOLD
    shift: int = DEFAULT_SHIFT
    n_window: int | None = None
    refractory: float = 1.5
    auto_shift: bool = True
    period_window: float = 3.0
    shift_update_every: int = 5
    min_window: int = MIN_WINDOW
    noise_factor: float = 5.0

    def __post_init__(self):
        if not self.threshold < 0:
            raise ValueError("threshold must be negative")
        if not self.noise_factor > 0:
            raise ValueError("noise_factor must be positive")
        if self.shift < 1:
            raise ValueError("shift must be at least one sample")


class CovarianceDetector:
    """Online lagged-covariance detector with refractory period.

    With ``auto_shift`` the shift is re-estimated every few samples from the
    dominant period of the last ``period_window`` seconds, falling back to the
    configured default when the spectrum has no clear peak.  The window is
    then the smallest whole number of periods covering ``min_window``.

    After :meth:`calibrate` the threshold follows the window length as
    ``-noise_factor * noise_var / sqrt(n_window)``, the null scatter of the
    lagged covariance of white noise with variance ``noise_var``.
    """

    def __init__(self, dt: float, config: DetectorConfig | None = None):
        self.dt = dt
        self.config = config or DetectorConfig()
        self._n_hist = max(int(round(self.config.period_window / dt)), 64)
        self.noise_var = None
        self.reset()

    def reset(self):
        cfg = self.config
        self.shift = cfg.shift
        self.n_window = cfg.n_window or window_for_shift(cfg.shift, cfg.min_window)
        self._buf = deque(maxlen=self._n_hist + 2 * self.n_window + 4 * cfg.shift)
        self._since_update = 0
        self._refractory_until = -math.inf
        self.last_cov = None

    def set_shift(self, shift: int):
        shift = max(1, int(shift))
        self.shift = shift
        if self.config.n_window is None:
            self.n_window = window_for_shift(shift, self.config.min_window)
        need = self._n_hist + self.n_window + shift
        if self._buf.maxlen < need:
            self._buf = deque(self._buf, maxlen=need)

    def calibrate(self, noise_var: float | None):
        """Scale the threshold to white noise of variance ``noise_var``.

        ``None`` restores the fixed configured threshold.
        """
        if noise_var is not None and not noise_var > 0:
            raise ValueError("noise variance must be positive")
        self.noise_var = noise_var

    @property
    def threshold(self) -> float:
        if self.noise_var is None:
            return self.config.threshold
        return -self.config.noise_factor * self.noise_var / math.sqrt(self.n_window)

    @property
    def primed(self) -> bool:
        return len(self._buf) >= self.n_window + self.shift

    def push(self, sample: float):
        self._buf.append(float(sample))
        if self.config.auto_shift:
            self._since_update += 1
            if (self._since_update >= self.config.shift_update_every
                    and len(self._buf) >= self._n_hist):
                self._since_update = 0
                self._update_shift()

    def _update_shift(self):
        hist = list(self._buf)[-self._n_hist:]
        period = dominant_period(hist, self.dt)
        if period is None:
            self.set_shift(self.config.shift)
        else:
            self.set_shift(round(period / (2 * self.dt)))

    def cov_lagged(self):
        """Current lagged covariance, or ``None`` before the buffer is primed."""
        if not self.primed:
            return None
        need = self.n_window + self.shift
        tail = list(self._buf)[-need:]
        self.last_cov = lagged_covariance(tail, self.shift, self.n_window)
        return self.last_cov

    def is_oscillating(self, t: float) -> bool:
        """Verdict at time ``t``; a firing starts the refractory period."""
        cov = self.cov_lagged()
        if cov is None or t < self._refractory_until:
            return False
        if cov < self.threshold:
            self._refractory_until = t + self.config.refractory
            return True
        return False

    def update(self, sample: float, t: float) -> tuple[float | None, bool]:
        """Push one sample and return ``(covariance, verdict)``."""
        self.push(sample)
        verdict = self.is_oscillating(t)
        return self.last_cov if self.primed else None, verdict


def detect_series(series, dt, shift: int, n_window: int | None = None,
                  threshold: float = DEFAULT_THRESHOLD, refractory: float = 0.0):
    """Run a fixed-shift detector over a whole series.

    Returns ``(cov, verdict)`` arrays; ``cov`` is NaN until primed.
    """
    cfg = DetectorConfig(threshold=threshold, shift=shift, n_window=n_window,
                         refractory=refractory, auto_shift=False)
    det = CovarianceDetector(dt, cfg)
    x = np.asarray(series, dtype=float)
    cov = np.full(len(x), np.nan)
    fired = np.zeros(len(x), dtype=bool)
    for i, s in enumerate(x):
        c, v = det.update(s, i * dt)
        if c is not None:
            cov[i] = c
        fired[i] = v
    return cov, fired


@dataclass(frozen=True)
class Segment:
    start: int          # first sample index
    stop: int           # one past the last sample
    freq: float         # Hz
    amplitude: float


COMPOSITE_TONES = ((2.0, 0.1), (1.0, 0.3), (5.0, 0.2))


def composite_signal(rng, dt: float = 0.05, tones=COMPOSITE_TONES,
                     segment_s: float = 5.0, gap_s: float = 5.0,
                     noise_std: float = 0.02):
    """Noise with sinusoidal bursts separated by noise-only gaps.

    Each burst is a whole number of seconds long with a random phase.
    Returns ``(signal, segments)``.
    """
    n_seg = int(round(segment_s / dt))
    n_gap = int(round(gap_s / dt))
    n = n_gap + len(tones) * (n_seg + n_gap)
    x = rng.normal(0.0, noise_std, n)
    segments = []
    start = n_gap
    for freq, amp in tones:
        t = np.arange(n_seg) * dt
        x[start:start + n_seg] += amp * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
        segments.append(Segment(start, start + n_seg, freq, amp))
        start += n_seg + n_gap
    return x, segments


@dataclass(frozen=True)
class SegmentVerdict:
    segment: Segment
    period: float | None
    shift: int
    n_window: int
    fired_inside: bool
    gap_false_alarms: int


def evaluate_segments(x, segments, dt, threshold: float = DEFAULT_THRESHOLD,
                      min_window: int = MIN_WINDOW) -> list[SegmentVerdict]:
    """Offline workflow: DFT period per burst, then a matched-shift detector.

    For each burst the shift is half the DFT period of that burst; the
    detector runs over the whole series and must fire inside the burst (or
    while its window still overlaps it).  Firings in noise-only stretches,
    excluding the ``n_window + shift`` samples after any burst, count as
    false alarms.
    """
    x = np.asarray(x, dtype=float)
    out = []
    for seg in segments:
        period = dominant_period(x[seg.start:seg.stop], dt, min_samples=16)
        shift = DEFAULT_SHIFT if period is None else max(1, round(period / (2 * dt)))
        n_window = window_for_shift(shift, min_window)
        _, fired = detect_series(x, dt, shift, n_window, threshold)
        tail = n_window + shift
        inside = bool(np.any(fired[seg.start:seg.stop + tail]))
        quiet = np.ones(len(x), dtype=bool)
        for other in segments:
            quiet[other.start:min(len(x), other.stop + tail)] = False
        out.append(SegmentVerdict(seg, period, shift, n_window, inside,
                                  int(np.sum(fired & quiet))))
    return out
