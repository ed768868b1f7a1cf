"""Synthetic downward camera and the two divergence estimators.

Feature tracks are pairs of image points (pixels) of the same ground feature
in two consecutive frames.  Both estimators return divergence in 1/s with the
plant's sign convention: negative while the camera approaches the ground.

``size_divergence`` measures the relative growth of image distances between
feature pairs.  On exact tracks it equals ``(1 - Z_prev / Z_cur) / dt``.

``flow_field_divergence`` fits an affine (optionally quadratic) model to the
flow field inside a RANSAC loop.  The flow is regressed on the *current*
feature positions, so for constant velocity over a frame the estimate equals
``V_Z / Z_prev`` exactly.  The trace of the affine flow gradient counts the
expansion rate twice (once per image axis), hence the one-half factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import EstimationError


@dataclass(frozen=True)
class CameraModel:
    f: float = 300.0
    fov_half_width: float = 0.6
    dt: float = 0.05

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError("focal length must be positive")
        if not self.dt > 0:
            raise ValueError("frame interval must be positive")
        if not self.fov_half_width > 0:
            raise ValueError("field of view must be positive")


class FeatureTrack(NamedTuple):
    x_prev: float
    y_prev: float
    x_cur: float
    y_cur: float


@dataclass(frozen=True)
class FlowFieldFit:
    p_u: np.ndarray
    p_v: np.ndarray
    inlier_count: int
    inliers: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class FitOptions:
    """Knobs of the RANSAC flow-field fit."""

    iterations: int = 50
    sample_size: int = 3
    inlier_threshold: float = 0.5
    min_inlier_fraction: float = 0.5
    second_order: bool = False
    focal: float | None = None


def as_track_array(tracks) -> np.ndarray:
    """Coerce a sequence of :class:`FeatureTrack` (or an (N, 4) array)."""
    arr = np.asarray(tracks, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 4)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError("tracks must have shape (N, 4)")
    if not np.all(np.isfinite(arr)):
        raise ValueError("track coordinates must be finite")
    return arr


def make_tracks(prev_pts, cur_pts) -> np.ndarray:
    prev_pts = np.asarray(prev_pts, dtype=float).reshape(-1, 2)
    cur_pts = np.asarray(cur_pts, dtype=float).reshape(-1, 2)
    if prev_pts.shape != cur_pts.shape:
        raise ValueError("point sets must match")
    return np.hstack([prev_pts, cur_pts])


def visible(ground_points, Z, cam: CameraModel) -> np.ndarray:
    """Boolean mask of ground points inside the square field of view."""
    pts = np.asarray(ground_points, dtype=float).reshape(-1, 2)
    half = cam.fov_half_width * Z
    return np.all(np.abs(pts) <= half, axis=1)


def project_features(ground_points, Z, cam: CameraModel) -> np.ndarray:
    """Pinhole projection ``f * X / Z`` of ground points; off-view points dropped."""
    if not Z > 0:
        raise ValueError(f"camera height must be positive, got {Z}")
    pts = np.asarray(ground_points, dtype=float).reshape(-1, 2)
    return cam.f * pts[visible(pts, Z, cam)] / Z


def synthetic_tracks(ground_points, Z_prev, Z_cur, cam: CameraModel,
                     noise_px=0.0, rng=None) -> np.ndarray:
    """Tracks of the features visible in both frames, optional pixel noise."""
    if not (Z_prev > 0 and Z_cur > 0):
        raise ValueError("camera heights must be positive")
    pts = np.asarray(ground_points, dtype=float).reshape(-1, 2)
    keep = visible(pts, Z_prev, cam) & visible(pts, Z_cur, cam)
    pts = pts[keep]
    tracks = np.hstack([cam.f * pts / Z_prev, cam.f * pts / Z_cur])
    if noise_px > 0:
        if rng is None:
            raise ValueError("pixel noise needs an explicit generator")
        tracks = tracks + rng.normal(0.0, noise_px, size=tracks.shape)
    return tracks


def _pair_indices(n, max_pairs, rng):
    total = n * (n - 1) // 2
    i, j = np.triu_indices(n, k=1)
    if total <= max_pairs:
        return i, j
    if rng is None:
        rng = np.random.default_rng(0)
    pick = rng.choice(total, size=max_pairs, replace=False)
    return i[pick], j[pick]


def size_divergence(tracks, dt, rng=None, max_pairs=500) -> float:
    """Mean relative line-length change over feature pairs, in 1/s."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    arr = as_track_array(tracks)
    if len(arr) < 2:
        raise EstimationError("size divergence needs at least two tracks")
    i, j = _pair_indices(len(arr), max_pairs, rng)
    l_prev = np.hypot(arr[i, 0] - arr[j, 0], arr[i, 1] - arr[j, 1])
    l_cur = np.hypot(arr[i, 2] - arr[j, 2], arr[i, 3] - arr[j, 3])
    ok = l_prev > 0
    if not np.any(ok):
        raise EstimationError("all feature pairs are degenerate")
    return float(np.mean((l_prev[ok] - l_cur[ok]) / l_prev[ok]) / dt)


def rotational_flow(x, y, rates, focal, dt):
    """Image flow (pixels per frame) induced by body rates ``(p, q, r)``."""
    p, q, r = rates
    u = (x * y / focal) * p - (focal + x * x / focal) * q + y * r
    v = (focal + y * y / focal) * p - (x * y / focal) * q - x * r
    return u * dt, v * dt


def _designs(x, y, second_order):
    one = np.ones_like(x)
    if second_order:
        return (np.column_stack([one, x, y, x * x, x * y]),
                np.column_stack([one, x, y, y * y, x * y]))
    A = np.column_stack([one, x, y])
    return A, A


def _lstsq(A, b):
    coef, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    return coef, rank


def flow_field_divergence(tracks, dt, derotation_rates=(0.0, 0.0, 0.0),
                          options: FitOptions | None = None, rng=None):
    """Divergence from a RANSAC least-squares fit of the flow field.

    Returns ``(divergence, FlowFieldFit)``.  ``derotation_rates`` are body
    rates in rad/s; removing their flow needs ``options.focal``.
    """
    opts = options or FitOptions()
    if not dt > 0:
        raise ValueError("dt must be positive")
    arr = as_track_array(tracks)
    x, y = arr[:, 2], arr[:, 3]
    u = arr[:, 2] - arr[:, 0]
    v = arr[:, 3] - arr[:, 1]
    if any(derotation_rates):
        if opts.focal is None:
            raise ValueError("de-rotation needs the focal length")
        ur, vr = rotational_flow(x, y, derotation_rates, opts.focal, dt)
        u, v = u - ur, v - vr

    Au, Av = _designs(x, y, opts.second_order)
    ncol = Au.shape[1]
    n = len(arr)
    sample_size = max(opts.sample_size, ncol)
    if n < sample_size:
        raise EstimationError(f"need at least {sample_size} tracks, got {n}")
    if np.linalg.matrix_rank(Au) < ncol or np.linalg.matrix_rank(Av) < ncol:
        raise EstimationError("degenerate feature geometry")

    if rng is None:
        rng = np.random.default_rng(0)
    thr2 = opts.inlier_threshold ** 2
    best = None
    best_count = 0
    for _ in range(opts.iterations):
        idx = rng.choice(n, size=sample_size, replace=False)
        pu, ru = _lstsq(Au[idx], u[idx])
        pv, rv = _lstsq(Av[idx], v[idx])
        if ru < ncol or rv < ncol:
            continue
        res2 = (Au @ pu - u) ** 2 + (Av @ pv - v) ** 2
        inl = res2 <= thr2
        count = int(inl.sum())
        if count > best_count:
            best, best_count = inl, count
            if count == n:
                break

    need = max(sample_size, int(np.ceil(opts.min_inlier_fraction * n)))
    if best is None or best_count < need:
        raise EstimationError(f"only {best_count} inliers of {n}")
    pu, ru = _lstsq(Au[best], u[best])
    pv, rv = _lstsq(Av[best], v[best])
    if ru < ncol or rv < ncol:
        raise EstimationError("inlier set is degenerate")
    # flow expands on approach while D < 0, so the trace enters with a minus
    div = -0.5 * (pu[1] + pv[2]) / dt
    return float(div), FlowFieldFit(p_u=pu, p_v=pv, inlier_count=best_count,
                                    inliers=best)


class FeatureField:
    """Seeded ground features, re-detected when too few remain in view.

    Mimics a tracker that replenishes corners: when fewer than ``min_count``
    features lie inside the current footprint, a fresh uniform set of
    ``count`` features is drawn inside it.
    """

    def __init__(self, cam: CameraModel, rng, count=60, min_count=20):
        self.cam = cam
        self.rng = rng
        self.count = count
        self.min_count = min_count
        self.points = np.empty((0, 2))

    def _reseed(self, Z):
        half = self.cam.fov_half_width * Z
        self.points = self.rng.uniform(-half, half, size=(self.count, 2))

    def tracks(self, Z_prev, Z_cur, noise_px=0.0) -> np.ndarray:
        Z_lo = min(Z_prev, Z_cur)
        in_view = visible(self.points, Z_lo, self.cam)
        if in_view.sum() < self.min_count:
            self._reseed(Z_lo)
        return synthetic_tracks(self.points, Z_prev, Z_cur, self.cam,
                                noise_px=noise_px, rng=self.rng)


def as_tracks(arr: np.ndarray) -> list[FeatureTrack]:
    return [FeatureTrack(*row) for row in np.asarray(arr, dtype=float)]
