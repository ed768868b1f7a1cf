"""Closed-loop scenario runner.

Each tick runs sense -> detect -> control -> actuate -> integrate: the
divergence estimate taken at tick ``n`` produces a command that is held over
``[t_n, t_n + dt)``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import channel as ch
from . import control as ctl
from . import dynamics as dyn
from . import vision as vis
from .detect import CovarianceDetector, DetectorConfig
from .errors import ConfigError, EstimationError

SOURCES = ("truth", "channel", "vision")
MODES = ("fixed-P", "fixed-PI", "adaptive")
KINDS = ("size", "field-fit")
THRESHOLD_RULES = ("fixed", "noise")

LOG_COLUMNS = ("t", "Z", "V_Z", "D_true", "D_hat", "mu", "K_p", "K_i", "cov",
               "phase", "events")


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    # plant
    Z0: float = 3.0
    V0: float = 0.0
    contact_height: float = 0.03
    gust_mean: float = 0.0
    gust_std: float = 0.0
    # estimator source
    source: str = "truth"
    kind: str = "size"
    lag: int | None = None
    noise: bool = True
    heavy_tail: bool = False
    debias: bool = True             # invert the bias line of the noise model
    noise_px: float = 0.5
    focal: float = 300.0
    fov_half_width: float = 0.6
    n_features: int = 60
    # controller
    mode: str = "fixed-P"
    K_p: float = 1.0
    K_i: float = 0.0
    D_star: float = -0.3
    kappa: float = 6.0
    start_K_p: float = 0.1
    ramp: float = 1.3
    backoff: float | None = 6.0
    mu_down: float = 0.6
    mu_up: float = 1.3
    track_band: float = 0.05
    dwell: float = 2.0
    track_filter: float = 1.0
    gain_floor: float = 0.02
    integ_limit: float = 1.0
    mu_limit: float = 9.81
    # detector
    threshold: float = -3e-3
    threshold_rule: str = "noise"
    noise_factor: float = 5.0
    shift: int = 10
    refractory: float = 1.5
    auto_shift: bool = True
    min_window: int = 60
    # run
    dt: float = 0.05
    max_duration: float = 120.0
    settle_time: float = 3.0
    seed: int | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.source not in SOURCES:
            raise ConfigError(f"source must be one of {SOURCES}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        if not self.Z0 > self.contact_height:
            raise ConfigError("Z0 must lie above the contact height")
        if self.lag is not None and self.lag < 0:
            raise ConfigError("lag must be non-negative")
        if self.stochastic and self.seed is None:
            raise ConfigError("a seed is required for stochastic scenarios")
        if self.threshold_rule not in THRESHOLD_RULES:
            raise ConfigError(f"threshold_rule must be one of {THRESHOLD_RULES}")
        if self.mode == "adaptive" and not self.D_star < 0:
            raise ConfigError("adaptive landing needs D_star < 0")

    @property
    def stochastic(self) -> bool:
        return ((self.source == "channel" and self.noise)
                or self.source == "vision"
                or self.gust_std > 0)

    @property
    def effective_lag(self) -> int:
        if self.lag is not None:
            return self.lag
        return ch.DEFAULT_LAG[self.kind] if self.source == "channel" else 0

    def control_config(self) -> ctl.ControlConfig:
        return ctl.ControlConfig(
            kappa=self.kappa, start_K_p=self.start_K_p, ramp=self.ramp,
            backoff=self.backoff, mu_down=self.mu_down, mu_up=self.mu_up,
            track_band=self.track_band, dwell=self.dwell,
            gain_floor=self.gain_floor, integ_limit=self.integ_limit,
            mu_limit=self.mu_limit)

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(threshold=self.threshold, shift=self.shift,
                              refractory=self.refractory,
                              auto_shift=self.auto_shift,
                              min_window=self.min_window,
                              noise_factor=self.noise_factor)

    def noise_var(self, D: float) -> float | None:
        """Design-model variance of the estimate at ``D`` (threshold rule)."""
        if self.threshold_rule == "fixed":
            return None
        model = ch.make_noise_model(self.kind)
        sd = model.spread(D) * ch.SQRT_HALF_PI
        if self.debias and self.source == "channel":
            sd /= model.a
        return sd * sd


def _coerce(value: str, typ):
    text = value.strip()
    if "None" in str(typ) and text.lower() in ("", "none"):
        return None
    if "bool" in str(typ):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if "int" in str(typ) and "float" not in str(typ):
        return int(text)
    if "float" in str(typ):
        return float(text)
    return text


_FIELD_TYPES = {f.name: f.type for f in fields(Scenario)}


def scenario_from_mapping(values: dict, base: Scenario | None = None) -> Scenario:
    """Build a scenario from string (or typed) values over ``base``."""
    kw = {}
    for key, val in values.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown scenario key {key!r}")
        if isinstance(val, str):
            try:
                val = _coerce(val, _FIELD_TYPES[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        kw[key] = val
    return replace(base or Scenario(), **kw)


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def load_scenario(path, **overrides) -> Scenario:
    with open(path) as fh:
        values = parse_config(fh.read())
    values.update({k: v for k, v in overrides.items() if v is not None})
    return scenario_from_mapping(values)


def scenario_to_config(sc: Scenario) -> str:
    lines = []
    for key, val in asdict(sc).items():
        lines.append(f"{key} = {'none' if val is None else val}")
    return "\n".join(lines) + "\n"


@dataclass
class RunLog:
    rows: list = field(default_factory=list)

    def append(self, *row):
        self.rows.append(row)

    def column(self, name) -> np.ndarray:
        i = LOG_COLUMNS.index(name)
        if name in ("phase", "events"):
            return np.array([r[i] for r in self.rows], dtype=object)
        return np.array([np.nan if r[i] is None else r[i] for r in self.rows],
                        dtype=float)

    def __len__(self):
        return len(self.rows)

    def to_csv(self, fh=None) -> str | None:
        own = fh is None
        if own:
            fh = io.StringIO()
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.rows:
            w.writerow(_fmt(v) for v in r)
        return fh.getvalue() if own else None


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


@dataclass
class RunResult:
    scenario: Scenario
    log: RunLog
    summary: dict


class _Source:
    """Divergence estimator feeding the controller."""

    def __init__(self, sc: Scenario, rng):
        self.sc = sc
        self.delay = ch.DelayLine(sc.effective_lag)
        self.last = 0.0
        if sc.source == "channel":
            self.model = ch.make_noise_model(sc.kind)
            self.rng = rng
        elif sc.source == "vision":
            cam = vis.CameraModel(f=sc.focal, fov_half_width=sc.fov_half_width,
                                  dt=sc.dt)
            self.field = vis.FeatureField(cam, rng, count=sc.n_features,
                                          min_count=max(8, sc.n_features // 3))
            self.rng = rng

    def __call__(self, state: dyn.VerticalState, Z_prev: float) -> float:
        sc = self.sc
        D = dyn.true_divergence(state)
        if sc.source == "truth":
            est = D
        elif sc.source == "channel":
            est = ch.corrupt(self.model, D, self.rng, noise=sc.noise,
                             heavy_tail=sc.heavy_tail)
        else:
            tracks = self.field.tracks(Z_prev, state.Z, noise_px=sc.noise_px)
            try:
                if sc.kind == "size":
                    est = vis.size_divergence(tracks, sc.dt, rng=self.rng)
                else:
                    est, _ = vis.flow_field_divergence(tracks, sc.dt, rng=self.rng)
            except EstimationError:
                est = self.last
        self.last = est
        out = self.delay(est)
        # the controller is designed against the fitted bias line; without
        # this the true |D| exceeds |D*| and the gain/height ratio drifts up
        if sc.debias and sc.source == "channel":
            out = (out - self.model.b) / self.model.a
        return out


def run(sc: Scenario) -> RunResult:
    """Simulate one scenario until touchdown or ``max_duration``."""
    seq = np.random.SeedSequence(sc.seed if sc.seed is not None else 0)
    src_seq, gust_seq = seq.spawn(2)
    source = _Source(sc, np.random.default_rng(src_seq))
    gust_rng = np.random.default_rng(gust_seq)
    cfg = sc.control_config()
    det = CovarianceDetector(sc.dt, sc.detector_config())
    det.calibrate(sc.noise_var(0.0 if sc.mode == "adaptive" else sc.D_star))
    log = RunLog()

    state = dyn.VerticalState(t=0.0, Z=sc.Z0, V_Z=sc.V0)
    Z_prev = sc.Z0
    cstate = ctl.ControllerState()
    adaptive = sc.mode == "adaptive"
    machine = ctl.start_landing(sc.D_star, cfg) if adaptive else None
    if sc.mode == "fixed-P":
        gains = ctl.PiGains(sc.K_p, 0.0)
    elif sc.mode == "fixed-PI":
        gains = ctl.PiGains(sc.K_p, sc.K_i)
    else:
        gains = machine.gains
    track_err = 0.0
    alpha = min(1.0, sc.dt / sc.track_filter) if sc.track_filter > 0 else 1.0

    n_max = int(math.ceil(sc.max_duration / sc.dt - 1e-9))
    events_total = 0
    events_descent = 0
    t_descent = None if adaptive else 0.0
    K0_descent = None
    safety_violations = 0
    safety_checked = 0

    for n in range(n_max):
        t = n * sc.dt
        # sense
        D_true = dyn.true_divergence(state)
        D_hat = source(state, Z_prev)
        # detect
        cov, verdict = det.update(D_hat, t)
        events = []
        if verdict:
            events_total += 1
            events.append("oscillation")
        # control
        if adaptive:
            phase_before = machine.phase
            if machine.phase is ctl.Phase.GAIN_SEARCH:
                backoff = cfg.backoff_for(det.n_window * sc.dt)
                machine = ctl.gain_search_step(machine, verdict, sc.dt, cfg,
                                               backoff=backoff)
                if machine.phase is ctl.Phase.DESCEND:
                    events.append("descend")
                    cstate = ctl.ControllerState()
                    det.reset()
                    det.calibrate(sc.noise_var(sc.D_star))
                    t_descent = t
                    K0_descent = machine.K0
                    track_err = 0.0
            else:
                if verdict:
                    events_descent += 1
                track_err += alpha * ((D_hat - machine.D_star) - track_err)
                before = (machine.resets_down, machine.resets_up)
                machine = ctl.descend_step(machine, verdict, track_err, sc.dt, cfg)
                if machine.resets_down > before[0]:
                    events.append("gain-down")
                if machine.resets_up > before[1]:
                    events.append("gain-up")
            gains = machine.gains
            D_star = 0.0 if machine.phase is ctl.Phase.GAIN_SEARCH else machine.D_star
            if phase_before is ctl.Phase.DESCEND:
                safety_checked += 1
                if not gains.K_p < 2 * state.Z / sc.dt:
                    safety_violations += 1
        else:
            D_star = sc.D_star
        mu, cstate = ctl.pi_command(cstate, gains, D_star, D_hat, sc.dt,
                                    integ_limit=sc.integ_limit,
                                    mu_limit=sc.mu_limit)
        phase_name = machine.phase.value if adaptive else sc.mode
        log.append(t, state.Z, state.V_Z, D_true, D_hat, mu, gains.K_p,
                   gains.K_i, cov, phase_name, ";".join(events))
        # actuate + integrate
        gust = sc.gust_mean + (sc.gust_std * gust_rng.standard_normal()
                               if sc.gust_std > 0 else 0.0)
        Z_prev = state.Z
        state = dyn.step(state, mu, sc.dt, disturbance=gust,
                         ground=sc.contact_height)
        if state.touched_down:
            if adaptive:
                machine = replace(machine, phase=ctl.Phase.TOUCHED_DOWN)
            break

    summary = _summarize(sc, log, state, events_total, events_descent,
                         t_descent, K0_descent, gains, machine,
                         safety_violations, safety_checked)
    return RunResult(sc, log, summary)


def _summarize(sc, log, state, events_total, events_descent, t_descent,
               K0_descent, gains, machine, safety_violations, safety_checked):
    t = log.column("t")
    D_hat = log.column("D_hat")
    cov = log.column("cov")
    s = {
        "name": sc.name,
        "seed": sc.seed,
        "touched_down": bool(state.touched_down),
        "non_convergent": not state.touched_down,
        "touchdown_time": state.t if state.touched_down else None,
        "touchdown_speed": state.touchdown_speed,
        "detector_events": events_total,
        "post_phase1_events": events_descent if sc.mode == "adaptive" else None,
        "final_K_p": gains.K_p,
        "final_K_i": gains.K_i,
        "descent_start": t_descent,
        "K0_K_p": K0_descent.K_p if K0_descent else None,
        "gain_resets_down": machine.resets_down if machine else 0,
        "gain_resets_up": machine.resets_up if machine else 0,
        "safety_checked": safety_checked,
        "safety_violations": safety_violations,
    }
    if t_descent is not None:
        settled = t >= t_descent + sc.settle_time
        if np.any(settled):
            s["tracking_rmse"] = float(np.sqrt(np.mean((D_hat[settled] - sc.D_star) ** 2)))
        else:
            s["tracking_rmse"] = None
        desc = (t >= t_descent) & np.isfinite(cov)
        s["median_abs_cov"] = float(np.median(np.abs(cov[desc]))) if np.any(desc) else None
    else:
        s["tracking_rmse"] = None
        s["median_abs_cov"] = None
    return s


SUMMARY_COLUMNS = ("name", "seed", "touched_down", "non_convergent",
                   "touchdown_time", "touchdown_speed", "detector_events",
                   "post_phase1_events", "tracking_rmse", "median_abs_cov",
                   "descent_start", "K0_K_p", "final_K_p", "final_K_i",
                   "gain_resets_down", "gain_resets_up", "safety_checked",
                   "safety_violations", "error")


def _run_summary(sc: Scenario) -> dict:
    try:
        return run(sc).summary
    except Exception as exc:  # per-run failures are isolated
        return {"name": sc.name, "seed": sc.seed, "error": f"{type(exc).__name__}: {exc}"}


def batch(scenarios, workers: int = 1) -> list[dict]:
    """Run scenarios and return their summaries in input order."""
    scenarios = list(scenarios)
    if workers > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_summary, scenarios))
    return [_run_summary(sc) for sc in scenarios]


def seed_sweep(base: Scenario, seeds) -> list[Scenario]:
    return [replace(base, seed=int(s), name=f"{base.name}-s{int(s)}") for s in seeds]


def summaries_to_csv(summaries, fh) -> None:
    w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, extrasaction="ignore",
                       lineterminator="\n")
    w.writeheader()
    for s in summaries:
        w.writerow({k: _fmt(s.get(k)) for k in SUMMARY_COLUMNS})


def divergence_grows(Z0: float, K_p: float, dt: float = 0.05, ticks: int = 60,
                     V0_rel: float = -1e-3) -> bool:
    """Whether a hover P-loop on exact divergence amplifies a small kick.

    The plant starts at ``V_Z = V0_rel * Z0`` with ``D* = 0`` and an
    unclamped command; growth means ``|D|`` later exceeds 1.5 times its
    initial value (a stable loop only shrinks it); hitting the ground counts
    as growth.
    """
    sc = Scenario(name="grow", Z0=Z0, V0=V0_rel * Z0, mode="fixed-P", K_p=K_p,
                  D_star=0.0, source="truth", lag=0, dt=dt, mu_limit=math.inf,
                  max_duration=ticks * dt, contact_height=0.0)
    res = run(sc)
    if res.summary["touched_down"]:
        return True
    D = np.abs(res.log.column("D_true"))
    return bool(np.max(D[1:]) > 1.5 * D[0])


def simulated_critical_gain(Z0: float, dt: float = 0.05, iterations: int = 30) -> float:
    """Smallest P gain at which :func:`divergence_grows`, by bisection."""
    lo, hi = 0.2 * Z0 / dt, 20.0 * Z0 / dt
    if divergence_grows(Z0, lo, dt) or not divergence_grows(Z0, hi, dt):
        raise ValueError("bisection bracket does not straddle the onset")
    for _ in range(iterations):
        mid = math.sqrt(lo * hi)
        if divergence_grows(Z0, mid, dt):
            hi = mid
        else:
            lo = mid
    return hi


def stability_grid(heights, gain_factors, dt: float = 0.05) -> list[dict]:
    """Simulated growth against the analytic verdict on a (Z, K_p) grid.

    Gains are ``factor * 2 Z / dt``; the analytic verdict uses the hover
    linearisation with pure proportional control.
    """
    from . import analysis as an

    rows = []
    for Z in heights:
        point = an.LinearizationPoint(Z, 0.0, dt)
        K_cr = an.critical_gain(point)
        for f in gain_factors:
            K = f * K_cr
            poles = an.characteristic_roots(point, K, math.inf)
            # hover without integral action has a double pole at 1 (the
            # plant drift and the unused integrator); judge the remaining one
            rest = poles[np.abs(poles - 1.0) > 1e-6]
            peak = float(np.abs(rest).max()) if rest.size else 1.0
            rows.append({"Z": float(Z), "K_p": float(K), "K_over_Kcr": float(f),
                         "sim_grows": int(divergence_grows(Z, K, dt)),
                         "analysis_unstable": int(peak > 1.0)})
    return rows
