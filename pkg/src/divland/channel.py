"""Imperfect divergence sensor: fitted bias/spread noise model plus sample delay.

An estimate is generated as ``f1(D) + s * xi`` with ``f1(D) = a D + b`` the
bias line and ``f2(D) = c D^2 + d D + e`` the fitted mean *absolute* error.
With ``xi`` standard normal, scaling by ``f2 * sqrt(pi / 2)`` makes the mean
absolute deviation from ``f1`` equal ``f2``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError

SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
DOMAIN = (-1.5, 1.5)
_TDIST_DOF = 3

# fitted on flight logs; residual parameters are (mean, std) of a Gaussian fit
_TABLE = {
    "field-fit": dict(a=0.8519, b=-0.0655, c=0.5766, d=0.1918, e=0.0412,
                      resid_mean=0.0173, resid_std=0.1292),
    "size": dict(a=0.8393, b=-0.0060, c=0.1841, d=-0.0043, e=0.0455,
                 resid_mean=6.1979e-4, resid_std=0.0937),
}

# sample lags measured for each estimator at dt = 0.05 s
DEFAULT_LAG = {"field-fit": 2, "size": 1}


@dataclass(frozen=True)
class NoiseModel:
    a: float
    b: float
    c: float
    d: float
    e: float
    resid_mean: float = 0.0
    resid_std: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ConfigError(f"noise coefficient {f.name} must be finite")
        if not self.resid_std > 0:
            raise ConfigError("resid_std must be positive")
        if self.min_spread() < 0:
            raise ConfigError(
                f"spread curve negative on {DOMAIN}: min {self.min_spread():.4g}")

    def bias(self, D):
        return self.a * D + self.b

    def spread(self, D):
        """Mean absolute error around the bias line at divergence ``D``."""
        return self.c * D * D + self.d * D + self.e

    def min_spread(self) -> float:
        lo, hi = DOMAIN
        cands = [lo, hi]
        if self.c != 0:
            vertex = -self.d / (2 * self.c)
            if lo < vertex < hi:
                cands.append(vertex)
        return min(self.spread(D) for D in cands)

    def as_dict(self) -> dict:
        return asdict(self)


def make_noise_model(kind: str) -> NoiseModel:
    """Table coefficients for ``kind`` in {'field-fit', 'size'}."""
    try:
        return NoiseModel(**_TABLE[kind])
    except KeyError:
        raise ConfigError(f"unknown estimator kind {kind!r}") from None


def load_noise_model(path, kind: str = "size") -> NoiseModel:
    """Read ``key=value`` lines over the table defaults for ``kind``.

    Blank lines and ``#`` comments are ignored.
    """
    values = dict(_TABLE[kind]) if kind in _TABLE else {}
    names = {f.name for f in fields(NoiseModel)}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in names:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = float(val)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad number {val!r}") from None
    missing = names - values.keys()
    if missing:
        raise ConfigError(f"missing coefficients: {sorted(missing)}")
    return NoiseModel(**values)


def corrupt(model: NoiseModel, D_true: float, rng, noise: bool = True,
            heavy_tail: bool = False) -> float:
    """One noisy estimate of ``D_true``."""
    if not math.isfinite(D_true):
        raise ValueError("D_true must be finite")
    est = model.bias(D_true)
    if not noise:
        return est
    scale = max(model.spread(D_true), 0.0) * SQRT_HALF_PI
    if heavy_tail:
        # unit-variance Student-t
        xi = rng.standard_t(_TDIST_DOF) / math.sqrt(_TDIST_DOF / (_TDIST_DOF - 2))
    else:
        xi = rng.standard_normal()
    return est + scale * xi


def corrupt_many(model: NoiseModel, D_true, rng, noise: bool = True) -> np.ndarray:
    """Vectorised :func:`corrupt` with Gaussian draws."""
    D = np.asarray(D_true, dtype=float)
    est = model.bias(D)
    if not noise:
        return est
    scale = np.maximum(model.spread(D), 0.0) * SQRT_HALF_PI
    return est + scale * rng.standard_normal(D.shape)


class DelayLine:
    """Integer sample delay.

    Until ``lag`` samples have been pushed the oldest available sample is
    returned.
    """

    def __init__(self, lag: int):
        if lag < 0 or int(lag) != lag:
            raise ConfigError("lag must be a non-negative integer")
        self.lag = int(lag)
        self._buf = deque(maxlen=self.lag + 1)

    def __call__(self, sample):
        self._buf.append(sample)
        return self._buf[0]

    push = __call__

    def reset(self):
        self._buf.clear()


def delayed(channel: DelayLine, sample):
    return channel(sample)


def delay_series(series, lag: int) -> np.ndarray:
    """Apply :class:`DelayLine` semantics to a whole series."""
    x = np.asarray(series, dtype=float)
    if lag == 0 or len(x) == 0:
        return x.copy()
    out = np.empty_like(x)
    out[lag:] = x[:-lag] if lag < len(x) else x[:0]
    out[:lag] = x[0]
    return out


class SensorChannel:
    """Noise model followed by a delay line, fed one true divergence per tick."""

    def __init__(self, model: NoiseModel, lag: int, rng, noise: bool = True,
                 heavy_tail: bool = False):
        self.model = model
        self.delay = DelayLine(lag)
        self.rng = rng
        self.noise = noise
        self.heavy_tail = heavy_tail

    def __call__(self, D_true: float) -> float:
        est = corrupt(self.model, D_true, self.rng, noise=self.noise,
                      heavy_tail=self.heavy_tail)
        return self.delay(est)
