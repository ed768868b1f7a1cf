"""Divergence-tracking controllers and the two-phase adaptive landing logic.

Phase one hovers (target divergence zero) while ramping the PI gains until
the oscillation detector fires, then backs off to the last stable gains.
Phase two tracks the landing divergence while both gains decay with
``exp(D* t)``, the same exponent as the height on an ideal constant-divergence
descent, so the gain-to-height ratio stays fixed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class PiGains:
    K_p: float
    K_i: float

    def __post_init__(self):
        if self.K_p < 0 or self.K_i < 0:
            raise ValueError("gains must be non-negative")

    @classmethod
    def from_kappa(cls, K_p: float, kappa: float) -> "PiGains":
        if not kappa > 0:
            raise ValueError("kappa must be positive")
        return cls(K_p, K_p / kappa)

    @property
    def kappa(self) -> float:
        """Integral time constant ``K_p / K_i`` (inf for pure P)."""
        return math.inf if self.K_i == 0 else self.K_p / self.K_i

    def scaled(self, factor: float) -> "PiGains":
        return PiGains(self.K_p * factor, self.K_i * factor)


@dataclass(frozen=True)
class ControllerState:
    integ: float = 0.0
    last_err: float | None = None
    mu: float = 0.0


@dataclass(frozen=True)
class ControlConfig:
    """Constants of the adaptive strategy (none are given by the method itself)."""

    kappa: float = 6.0
    start_K_p: float = 0.1
    ramp: float = 1.3               # gain growth per second in phase one
    backoff: float | None = 6.0     # None: ramp ** detector window duration
    mu_down: float = 0.6
    mu_up: float = 1.3
    track_band: float = 0.05
    dwell: float = 2.0
    gain_floor: float = 0.02
    integ_limit: float = 1.0
    mu_limit: float = 9.81          # +-1 g

    def backoff_for(self, window_seconds: float) -> float:
        if self.backoff is not None:
            return self.backoff
        return self.ramp ** window_seconds


def _clip(x, lim):
    return max(-lim, min(lim, x))


def p_command(K_p: float, D_star: float, D_hat: float) -> float:
    return K_p * (D_star - D_hat)


def pi_command(state: ControllerState, gains: PiGains, D_star: float,
               D_hat: float, dt: float, integ_limit: float = 1.0,
               mu_limit: float | None = None):
    """PI law with trapezoidal integration and integral clamp.

    The first call after a reset contributes no area, so after calls at
    ``t = 0, dt, ..., T`` the integral covers exactly ``[0, T]``.
    Returns ``(mu, new_state)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    err = D_star - D_hat
    integ = state.integ
    if state.last_err is not None:
        integ += 0.5 * dt * (err + state.last_err)
    integ = _clip(integ, integ_limit)
    if gains.K_i == 0:
        mu = gains.K_p * err
    else:
        mu = gains.K_p * err + gains.K_i * integ
    if mu_limit is not None:
        mu = _clip(mu, mu_limit)
    return mu, ControllerState(integ=integ, last_err=err, mu=mu)


def adaptive_gains(K0: PiGains, D_star: float, t_descend: float,
                   floor: float = 0.0) -> PiGains:
    """Both gains scaled by ``exp(D* t)``; ``K_p`` floored, ``kappa`` kept."""
    if t_descend < 0:
        raise ValueError("t_descend must be non-negative")
    factor = math.exp(D_star * t_descend)
    if floor > 0 and K0.K_p * factor < floor and K0.K_p > 0:
        factor = floor / K0.K_p
    return K0.scaled(factor)


class Phase(enum.Enum):
    GAIN_SEARCH = "gain-search"
    DESCEND = "descend"
    TOUCHED_DOWN = "touched-down"


@dataclass(frozen=True)
class LandingPhase:
    """State of the two-phase strategy.

    ``gains`` are the gains in force; ``K0`` anchors the decay law and
    ``t_phase`` is the decay clock (time since the last anchor).
    """

    phase: Phase
    gains: PiGains
    K0: PiGains
    t_phase: float = 0.0
    D_star: float = 0.0
    initial: PiGains | None = None
    off_track_time: float = 0.0
    resets_down: int = 0
    resets_up: int = 0
    reset_integrator: bool = False


def start_landing(D_star: float, cfg: ControlConfig = ControlConfig()) -> LandingPhase:
    if not D_star < 0:
        raise ValueError("landing divergence must be negative")
    g = PiGains.from_kappa(cfg.start_K_p, cfg.kappa)
    return LandingPhase(Phase.GAIN_SEARCH, gains=g, K0=g, D_star=D_star,
                        initial=g)


def gain_search_step(machine: LandingPhase, oscillating: bool, dt: float,
                     cfg: ControlConfig = ControlConfig(),
                     backoff: float | None = None) -> LandingPhase:
    """One phase-one tick: ramp gains, or freeze them and start descending."""
    if machine.phase is not Phase.GAIN_SEARCH:
        raise ValueError("not in gain search")
    if not oscillating:
        return replace(machine, gains=machine.gains.scaled(cfg.ramp ** dt),
                       t_phase=machine.t_phase + dt, reset_integrator=False)
    rho_b = backoff if backoff is not None else cfg.backoff_for(0.0)
    K0 = machine.gains.scaled(1.0 / rho_b)
    initial = machine.initial or machine.gains
    if K0.K_p < initial.K_p:
        K0 = initial
    return replace(machine, phase=Phase.DESCEND, gains=K0, K0=K0, t_phase=0.0,
                   off_track_time=0.0, reset_integrator=True)


def descend_step(machine: LandingPhase, oscillating: bool, tracking_error: float,
                 dt: float, cfg: ControlConfig = ControlConfig(),
                 touched_down: bool = False) -> LandingPhase:
    """One phase-two tick.

    ``tracking_error`` is a smoothed ``D_hat - D*``.  An oscillation verdict
    re-anchors the decay at ``mu_down`` times the current gains; staying
    outside ``track_band`` for ``dwell`` seconds without oscillation
    re-anchors at ``mu_up`` times the current gains.  Either way the decay
    clock restarts.
    """
    if machine.phase is not Phase.DESCEND:
        raise ValueError("not descending")
    if touched_down:
        return replace(machine, phase=Phase.TOUCHED_DOWN, reset_integrator=False)

    if oscillating:
        K0 = machine.gains.scaled(cfg.mu_down)
        return replace(machine, gains=K0, K0=K0, t_phase=0.0,
                       off_track_time=0.0, resets_down=machine.resets_down + 1,
                       reset_integrator=False)

    off = machine.off_track_time + dt if abs(tracking_error) > cfg.track_band else 0.0
    if off > cfg.dwell + 1e-12:
        K0 = machine.gains.scaled(cfg.mu_up)
        return replace(machine, gains=K0, K0=K0, t_phase=0.0,
                       off_track_time=0.0, resets_up=machine.resets_up + 1,
                       reset_integrator=False)

    t = machine.t_phase + dt
    gains = adaptive_gains(machine.K0, machine.D_star, t, floor=cfg.gain_floor)
    return replace(machine, gains=gains, t_phase=t, off_track_time=off,
                   reset_integrator=False)
