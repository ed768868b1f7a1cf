"""Vertical double-integrator plant and constant-divergence reference trajectories.

The plant state is height ``Z`` (m, positive above ground), vertical speed
``V_Z`` (m/s, negative while descending) and the last commanded acceleration
``mu``.  Stepping uses the exact zero-order-hold map of the double integrator,
so a constant command over one sample is integrated without truncation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import UndefinedDivergenceError


@dataclass(frozen=True)
class VerticalState:
    t: float
    Z: float
    V_Z: float
    mu: float = 0.0
    touched_down: bool = False
    touchdown_speed: float | None = None

    @property
    def airborne(self) -> bool:
        return not self.touched_down


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Closed-form constant-divergence descent ``Z = Z0 exp(-k t)``."""

    Z0: float
    k: float

    @property
    def converges(self) -> bool:
        # only positive k drives height and speed to zero
        return self.k > 0


def _check_finite(**values):
    for name, value in values.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")


def _first_ground_contact(Z, V, a, dt, ground):
    """Earliest tau in (0, dt] with Z + V tau + a tau^2 / 2 == ground, or None."""
    h = Z - ground
    if a == 0.0:
        if V >= 0.0:
            return None
        tau = -h / V
        return tau if tau <= dt else None
    # 0.5 a tau^2 + V tau + h = 0
    disc = V * V - 2.0 * a * h
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    # numerically stable pair of roots
    q = -0.5 * (V + math.copysign(sq, V)) if V != 0.0 else -0.5 * sq
    roots = []
    if q != 0.0:
        roots.append(h / q)
    roots.append(q / (0.5 * a))
    valid = [r for r in roots if 0.0 < r <= dt]
    return min(valid) if valid else None


def step(state: VerticalState, mu: float, dt: float,
         disturbance: float = 0.0, ground: float = 0.0) -> VerticalState:
    """Advance the plant by one zero-order-hold sample.

    ``disturbance`` is an additive acceleration (gusts) applied on top of the
    command.  ``ground`` is the height at which contact occurs; the default of
    zero is the ground plane itself.  When the continuous trajectory inside the
    step reaches ``ground`` the returned state is touched down, clamped to the
    contact height, timestamped at the contact instant, and frozen for all
    later calls.
    """
    _check_finite(mu=mu, dt=dt, disturbance=disturbance,
                  Z=state.Z, V_Z=state.V_Z)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.touched_down:
        return state

    a = mu + disturbance
    tau = _first_ground_contact(state.Z, state.V_Z, a, dt, ground)
    if tau is not None or state.Z <= ground:
        tau = 0.0 if tau is None else tau
        v_hit = state.V_Z + a * tau
        return VerticalState(t=state.t + tau, Z=ground, V_Z=v_hit, mu=mu,
                             touched_down=True, touchdown_speed=abs(v_hit))

    Z = state.Z + state.V_Z * dt + 0.5 * a * dt * dt
    V = state.V_Z + a * dt
    return replace(state, t=state.t + dt, Z=Z, V_Z=V, mu=mu)


def true_divergence(state: VerticalState) -> float:
    """Ground-truth flow divergence ``V_Z / Z`` (1/s)."""
    if not state.Z > 0:
        raise UndefinedDivergenceError(f"divergence undefined at Z={state.Z}")
    return state.V_Z / state.Z


def reference_at(traj: ReferenceTrajectory, t: float) -> tuple[float, float, float]:
    """Height, velocity and acceleration of the reference at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    Z = traj.Z0 * math.exp(-traj.k * t)
    return Z, -traj.k * Z, traj.k * traj.k * Z
