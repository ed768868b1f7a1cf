"""Discrete-time stability of divergence control around a frozen operating point.

The plant is the ZOH double integrator observed through ``D = V_Z / Z``,
linearised at ``(Z, V_Z)``.  With the trapezoidal PI controller the
closed-loop characteristic polynomial is the cubic

    D(s) = K_p dt [V dt^2 (s+1)^2 + 2 dt (kappa V - Z)(s^2 - 1) - 4 Z kappa (s-1)^2]
           - 4 kappa Z^2 (s-1)^3

which vanishes at ``s = -1`` exactly when ``K_p = 2 Z / dt``.  Polynomials
are stored lowest power first (``numpy.polynomial`` convention).  ``kappa``
may be ``inf`` for pure proportional control; polynomials are then divided
by ``kappa`` before taking the limit, which leaves every ratio unchanged.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

LOCUS_COLUMNS = ("K_p", "re1", "im1", "re2", "im2", "re3", "im3", "max_abs", "stable")


@dataclass(frozen=True)
class LinearizationPoint:
    Z: float
    V_Z: float = 0.0
    dt: float = 0.05

    def __post_init__(self):
        if not self.Z > 0:
            raise ValueError("Z must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def Phi(self) -> np.ndarray:
        return np.array([[1.0, self.dt], [0.0, 1.0]])

    @property
    def Gamma(self) -> np.ndarray:
        return np.array([[self.dt ** 2 / 2], [self.dt]])

    @property
    def C(self) -> np.ndarray:
        return np.array([[-self.V_Z / self.Z ** 2, 1.0 / self.Z]])


def _check_kappa(kappa):
    if not kappa > 0:
        raise ValueError("kappa must be positive")


def zeros(point: LinearizationPoint, kappa: float) -> tuple[float, float]:
    """The two finite closed-loop zeros ``(sigma_01, sigma_02)``."""
    _check_kappa(kappa)
    Z, V, dt = point.Z, point.V_Z, point.dt
    den1 = 2 * Z - dt * V
    if den1 == 0:
        raise ValueError("2 Z = dt V_Z: zero sigma_01 is undefined")
    s01 = (2 * Z + dt * V) / den1
    s02 = 1.0 if math.isinf(kappa) else (2 * kappa - dt) / (2 * kappa + dt)
    return s01, s02


def critical_gain(point: LinearizationPoint) -> float:
    """Proportional gain that puts a closed-loop pole at ``sigma = -1``."""
    return 2.0 * point.Z / point.dt


_S = Polynomial([0.0, 1.0])


def numerator_poly(point: LinearizationPoint, K_p: float, kappa: float) -> Polynomial:
    """Closed-loop numerator ``N(sigma)`` (divided by kappa if kappa is inf)."""
    _check_kappa(kappa)
    Z, V, dt = point.Z, point.V_Z, point.dt
    plant = (dt * V + 2 * Z) + (dt * V - 2 * Z) * _S
    if math.isinf(kappa):
        ctrl = -2.0 + 2.0 * _S
    else:
        ctrl = (dt - 2 * kappa) + (dt + 2 * kappa) * _S
    return K_p * dt * ctrl * plant


def characteristic_poly(point: LinearizationPoint, K_p: float, kappa: float) -> Polynomial:
    """Closed-loop denominator ``D(sigma)`` (divided by kappa if kappa is inf)."""
    _check_kappa(kappa)
    if K_p < 0:
        raise ValueError("K_p must be non-negative")
    Z, V, dt = point.Z, point.V_Z, point.dt
    sp, sm = _S + 1, _S - 1
    if math.isinf(kappa):
        return K_p * dt * (2 * dt * V * (_S ** 2 - 1) - 4 * Z * sm ** 2) - 4 * Z ** 2 * sm ** 3
    return (K_p * dt * (V * dt ** 2 * sp ** 2 + 2 * dt * (kappa * V - Z) * (_S ** 2 - 1)
                        - 4 * Z * kappa * sm ** 2)
            - 4 * kappa * Z ** 2 * sm ** 3)


def companion_roots(coef, rtol: float = 1e-14) -> np.ndarray:
    """Roots of ``sum coef[k] s^k`` from the companion-matrix eigenvalues.

    A vanishing leading coefficient lowers the degree; each lost root is
    reported as ``inf`` so the result always has ``len(coef) - 1`` entries.
    """
    c = np.asarray(coef, dtype=complex)
    n = len(c) - 1
    scale = np.max(np.abs(c)) if len(c) else 0.0
    if scale == 0:
        raise ValueError("zero polynomial has no roots")
    deg = n
    while deg > 0 and abs(c[deg]) <= rtol * scale:
        deg -= 1
    lost = np.full(n - deg, np.inf, dtype=complex)
    if deg == 0:
        return lost
    monic = c[:deg] / c[deg]
    comp = np.zeros((deg, deg), dtype=complex)
    comp[1:, :-1] = np.eye(deg - 1)
    comp[:, -1] = -monic
    roots = np.linalg.eigvals(comp)
    return np.concatenate([roots, lost])


def characteristic_roots(point: LinearizationPoint, K_p: float, kappa: float) -> np.ndarray:
    """The three closed-loop poles; ``inf`` marks a root lost to degree drop.

    ``K_p = 0`` returns the open-loop triple pole at 1 exactly (eigenvalue
    solvers smear a triple root by about the cube root of machine epsilon).
    """
    if K_p == 0:
        _check_kappa(kappa)
        return np.ones(3, dtype=complex)
    coef = characteristic_poly(point, K_p, kappa).coef
    coef = np.pad(coef, (0, max(0, 4 - len(coef))))
    return companion_roots(coef)


def open_loop(point: LinearizationPoint, sigma) -> np.ndarray:
    """Plant transfer function ``G(sigma)`` in closed form; NaN at the pole."""
    Z, V, dt = point.Z, point.V_Z, point.dt
    s = np.asarray(sigma, dtype=complex)
    den = 2 * Z ** 2 * (s - 1) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        g = dt * ((2 * Z - dt * V) * s - (2 * Z + dt * V)) / den
    return np.where(den == 0, np.nan + 0j, g)


def open_loop_state_space(point: LinearizationPoint, sigma) -> np.ndarray:
    """``C (sigma I - Phi)^-1 Gamma`` evaluated directly from the matrices."""
    s = np.atleast_1d(np.asarray(sigma, dtype=complex))
    out = np.empty(s.shape, dtype=complex)
    for idx, val in np.ndenumerate(s):
        M = val * np.eye(2) - point.Phi
        if abs(np.linalg.det(M)) < 1e-300:
            out[idx] = np.nan
        else:
            out[idx] = (point.C @ np.linalg.solve(M, point.Gamma))[0, 0]
    return out.reshape(np.shape(sigma))


def pi_transfer(K_p: float, kappa: float, dt: float, sigma) -> np.ndarray:
    """Trapezoidal PI controller ``F(sigma)``; NaN at ``sigma = 1``."""
    _check_kappa(kappa)
    s = np.asarray(sigma, dtype=complex)
    if math.isinf(kappa):
        return np.full(s.shape, K_p, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = K_p * (1 + dt / (2 * kappa) * (s + 1) / (s - 1))
    return np.where(s == 1, np.nan + 0j, f)


def closed_loop(point: LinearizationPoint, K_p: float, kappa: float, sigma) -> np.ndarray:
    """``N(sigma) / D(sigma)``; NaN where ``D`` vanishes."""
    s = np.asarray(sigma, dtype=complex)
    num = numerator_poly(point, K_p, kappa)(s)
    den = characteristic_poly(point, K_p, kappa)(s)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = num / den
    return np.where(den == 0, np.nan + 0j, h)


def closed_loop_from_parts(point: LinearizationPoint, K_p: float, kappa: float,
                           sigma) -> np.ndarray:
    """``G F / (1 + G F)`` assembled from the plant and controller."""
    gf = open_loop(point, sigma) * pi_transfer(K_p, kappa, point.dt, sigma)
    with np.errstate(divide="ignore", invalid="ignore"):
        return gf / (1 + gf)


@dataclass(frozen=True)
class StabilityReport:
    zeros: tuple[float, float]
    poles: np.ndarray
    K_cr: float
    stable: bool
    margin: float


def stability_report(point: LinearizationPoint, K_p: float, kappa: float) -> StabilityReport:
    poles = characteristic_roots(point, K_p, kappa)
    peak = float(np.max(np.abs(poles)))
    return StabilityReport(zeros=zeros(point, kappa), poles=poles,
                           K_cr=critical_gain(point), stable=peak < 1.0,
                           margin=1.0 - peak)


def max_pole_magnitude(point: LinearizationPoint, K_p: float, kappa: float) -> float:
    return float(np.max(np.abs(characteristic_roots(point, K_p, kappa))))


def _pair(prev, cur):
    best, best_cost = None, math.inf
    for perm in itertools.permutations(range(len(cur))):
        cand = cur[list(perm)]
        finite = np.isfinite(prev) & np.isfinite(cand)
        cost = float(np.sum(np.abs(prev[finite] - cand[finite])))
        if cost < best_cost:
            best, best_cost = cand, cost
    return best


def root_locus(point: LinearizationPoint, kappa: float, gains) -> np.ndarray:
    """Poles for each gain, columns ordered so each branch is continuous.

    Returns a complex array of shape ``(len(gains), 3)``.
    """
    K = np.asarray(gains, dtype=float)
    if np.any(K <= 0) or np.any(np.diff(K) <= 0):
        raise ValueError("gains must be positive and increasing")
    out = np.empty((len(K), 3), dtype=complex)
    prev = None
    for i, k in enumerate(K):
        r = characteristic_roots(point, k, kappa)
        if prev is None:
            r = r[np.lexsort((r.imag, r.real))]
        else:
            r = _pair(prev, r)
        out[i] = prev = r
    return out


def locus_rows(gains, poles) -> list[dict]:
    """Rows with the locus CSV columns."""
    rows = []
    for k, r in zip(gains, poles):
        row = {"K_p": float(k)}
        for j, p in enumerate(r, 1):
            row[f"re{j}"] = float(p.real)
            row[f"im{j}"] = float(p.imag)
        peak = float(np.max(np.abs(r)))
        row["max_abs"] = peak
        row["stable"] = int(peak < 1.0)
        rows.append(row)
    return rows


def write_locus_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOCUS_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def circle_gain(point: LinearizationPoint, K_p: float, kappa: float) -> float:
    """Loop gain of the two-pole/one-zero approximation for a physical ``K_p``.

    At hover (``V_Z = 0``) the cubic factors exactly as
    ``(s - 1) [(s - 1)^2 + K (s - sigma_02)]`` with this ``K``.
    """
    _check_kappa(kappa)
    return K_p * point.dt * (point.dt + 2 * kappa) / (2 * kappa * point.Z)


def approx_roots(K: float, sigma_02: float) -> np.ndarray:
    """Closed-form roots of ``(s - 1)^2 + K (s - sigma_02) = 0``."""
    b = K - 2.0
    c = 1.0 - K * sigma_02
    disc = complex(b * b - 4 * c)
    root = np.sqrt(disc)
    return np.array([(-b + root) / 2, (-b - root) / 2])


def circle_deviation(roots, sigma_02: float) -> float:
    """Largest distance of ``roots`` from the circle centred at ``sigma_02``."""
    r = np.asarray(roots, dtype=complex)
    if r.size == 0:
        return 0.0
    return float(np.max(np.abs(np.abs(r - sigma_02) - (1.0 - sigma_02))))


def circle_locus_check(point: LinearizationPoint, kappa: float, gains,
                       full: bool = False) -> float:
    """Max deviation of the complex-pair branch from the locus circle.

    By default the approximate characteristic equation is used with
    :func:`circle_gain`.  With ``full=True`` the complex poles of the full
    cubic are measured instead (reported, exact only at hover).  Gains with
    no complex pair contribute nothing.
    """
    _, s02 = zeros(point, kappa)
    worst = 0.0
    for k in np.asarray(gains, dtype=float):
        if full:
            r = characteristic_roots(point, k, kappa)
        else:
            r = approx_roots(circle_gain(point, k, kappa), s02)
        pair = r[np.abs(r.imag) > 1e-8 * np.maximum(1.0, np.abs(r))]
        worst = max(worst, circle_deviation(pair, s02))
    return worst


def instability_threshold(point: LinearizationPoint, kappa: float,
                          K_lo: float | None = None, K_hi: float | None = None,
                          n: int = 400, tol: float = 1e-9) -> float:
    """Upper edge of the stable gain range, refined by bisection.

    The scan runs over a geometric grid; the threshold is the first gain
    above a stable grid point at which some pole reaches the unit circle.
    On a descent the lowest gains can be marginally unstable (the
    divergence drifts as Z shrinks), so the lower edge is not used.
    Returns ``nan`` when the grid never becomes stable or never leaves it.
    """
    K_cr = critical_gain(point)
    lo = K_lo if K_lo is not None else 1e-4 * K_cr
    hi = K_hi if K_hi is not None else 10.0 * K_cr
    grid = np.geomspace(lo, hi, n)
    stable = [max_pole_magnitude(point, k, kappa) < 1.0 for k in grid]
    seen_stable = False
    for i, ok in enumerate(stable):
        if ok:
            seen_stable = True
        elif seen_stable:
            a, b = grid[i - 1], grid[i]
            while b - a > tol * b:
                mid = 0.5 * (a + b)
                if max_pole_magnitude(point, mid, kappa) < 1.0:
                    a = mid
                else:
                    b = mid
            return b
    return math.nan


def stability_map(point: LinearizationPoint, kappas, gains) -> np.ndarray:
    """Boolean grid ``stable[i, j]`` for ``kappas[i]`` and ``gains[j]``."""
    return np.array([[max_pole_magnitude(point, k, kp) < 1.0 for k in gains]
                     for kp in kappas], dtype=bool)
