"""Fixed-step scenario engine for panel, buck converter and MPPT controller.

The converter is integrated with RK4 at ``dt`` while the controller runs
once per ``period``. Between integrator steps the panel is treated as
quasi-static: the current the converter draws from its input, u * i_L, fixes
the panel voltage through the single-diode model. That current is clamped at
zero, which is the blocking diode every panel-side converter carries; without
it a ringing inductor would drive the panel above its open-circuit voltage.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import controllers
from .buck import DEFAULT_DT, BuckParams, BuckState
from .buck import step as buck_step
from .controllers import ControllerKind, Measurement
from .errors import EmptyTrace, OutOfRange, SimulationError
from .io import csv_text, fmt
from .neural import LmOptions, MlpNetwork, estimate_mpp, train_estimators
from .pv_model import (
    EnvConditions,
    OperatingPoint,
    PanelParams,
    default_panel,
    mpp_oracle,
    open_circuit_voltage,
    solve_current,
    solve_voltage,
)

SETTLE_BAND = 0.02
SETTLE_SAMPLES = 50
TAIL_FRACTION = 0.2
_GRID_EPS = 1e-9


# profiles --------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """Conditions from ``start`` until the next segment, optionally ramped.

    With ``g_end``/``t_end`` given, values move linearly from the start
    values to the end values over the segment's span.
    """

    start: float
    g: float
    t: float
    g_end: float | None = None
    t_end: float | None = None

    @property
    def is_ramp(self) -> bool:
        return self.g_end is not None or self.t_end is not None


@dataclass(frozen=True)
class ScenarioProfile:
    duration: float
    segments: tuple[Segment, ...]
    name: str = "custom"

    def __post_init__(self):
        if not (math.isfinite(self.duration) and self.duration >= 0):
            raise ValueError(f"duration must be >= 0, got {self.duration}")
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("profile needs at least one segment")
        if segs[0].start != 0.0:
            raise ValueError("first segment must start at t = 0")
        starts = [s.start for s in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment start times must be strictly increasing")
        if len(segs) > 1 and starts[-1] >= self.duration:
            raise ValueError("every segment must start before the end of the profile")
        for s in segs:
            for value in (s.g, s.t, s.g_end, s.t_end):
                if value is not None and not (math.isfinite(value) and value > 0):
                    raise ValueError("irradiance and temperature must be finite and > 0")

    def segment_end(self, idx: int) -> float:
        return self.segments[idx + 1].start if idx + 1 < len(self.segments) else self.duration

    def segment_index(self, t: float) -> int:
        idx = 0
        for k, s in enumerate(self.segments):
            if t >= s.start:
                idx = k
        return idx

    @classmethod
    def constant(cls, duration: float, g: float, t: float, name: str = "custom") -> "ScenarioProfile":
        return cls(duration, (Segment(0.0, g, t),), name)

    @classmethod
    def preset(cls, name: str, duration: float | None = None) -> "ScenarioProfile":
        if name == "stc":
            return cls.constant(0.3 if duration is None else duration, 1000.0, 298.15, "stc")
        if name == "step_irradiance":
            return cls(
                1.0 if duration is None else duration,
                (Segment(0.0, 500.0, 298.15), Segment(0.5, 1000.0, 298.15)),
                "step_irradiance",
            )
        raise ValueError(f"unknown scenario preset {name!r}; expected 'stc' or 'step_irradiance'")


PRESETS = ("stc", "step_irradiance")


def profile_eval(p: ScenarioProfile, t: float) -> EnvConditions:
    """Conditions at time ``t``; a new segment applies from its start instant."""
    if not (0.0 <= t <= p.duration + _GRID_EPS):
        raise OutOfRange(f"t={t} s outside [0, {p.duration}] s")
    idx = p.segment_index(t)
    s = p.segments[idx]
    if not s.is_ramp:
        return EnvConditions(s.g, s.t)
    span = p.segment_end(idx) - s.start
    frac = 0.0 if span <= 0 else min((t - s.start) / span, 1.0)
    g_end = s.g if s.g_end is None else s.g_end
    t_end = s.t if s.t_end is None else s.t_end
    return EnvConditions(s.g + frac * (g_end - s.g), s.t + frac * (t_end - s.t))


# configuration ---------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    panel: PanelParams = field(default_factory=default_panel)
    buck: BuckParams = field(default_factory=BuckParams)
    dt: float = DEFAULT_DT
    period: float = controllers.DEFAULT_SAMPLE_PERIOD
    gamma: float = controllers.DEFAULT_GAMMA
    dead_band: float = controllers.DEFAULT_DEAD_BAND
    u0: float = 0.0
    hidden: int = 10
    lm: LmOptions = field(default_factory=LmOptions)
    seed: int = 42

    def __post_init__(self):
        if not (self.dt > 0 and self.period > 0):
            raise ValueError("dt and period must be > 0")
        ratio = self.period / self.dt
        if abs(ratio - round(ratio)) > 1e-6 * ratio or round(ratio) < 1:
            raise ValueError(f"controller period {self.period} must be a whole multiple of dt {self.dt}")

    @property
    def substeps(self) -> int:
        return int(round(self.period / self.dt))


# traces ----------------------------------------------------------------

TRACE_COLUMNS = ("t", "g", "t_cell", "v_pv", "i_pv", "p_pv", "duty", "v_out", "i_l", "p_mpp_oracle")


@dataclass(frozen=True)
class SimTrace:
    data: np.ndarray  # rows in TRACE_COLUMNS order
    controller: str = ""
    profile: str = ""

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=float).reshape(-1, len(TRACE_COLUMNS)))

    def __len__(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, TRACE_COLUMNS.index(name)]

    def to_csv(self) -> str:
        return csv_text(TRACE_COLUMNS, self.data.tolist())


def n_samples(duration: float, period: float) -> int:
    """Rows on the controller grid t = k * period covering [0, duration]."""
    if duration <= 0:
        return 0
    return int(math.floor(duration / period + _GRID_EPS)) + 1


class _OracleCache:
    def __init__(self, panel: PanelParams):
        self.panel = panel
        self._mpp: dict[tuple[float, float], OperatingPoint] = {}
        self._voc: dict[tuple[float, float], float] = {}

    def mpp(self, env: EnvConditions) -> OperatingPoint:
        key = (env.g, env.t)
        if key not in self._mpp:
            self._mpp[key] = mpp_oracle(self.panel, env)
        return self._mpp[key]

    def v_oc(self, env: EnvConditions) -> float:
        key = (env.g, env.t)
        if key not in self._voc:
            self._voc[key] = open_circuit_voltage(self.panel, env)
        return self._voc[key]


def ensure_networks(
    config: SimConfig, nets: tuple[MlpNetwork, MlpNetwork] | None
) -> tuple[MlpNetwork, MlpNetwork]:
    if nets is not None:
        return nets
    trained, _, _ = train_estimators(config.panel, config.hidden, config.seed, config.lm)
    return trained


def run_scenario(
    profile: ScenarioProfile,
    controller_kind: "ControllerKind | str",
    config: SimConfig | None = None,
    nets: tuple[MlpNetwork, MlpNetwork] | None = None,
    estimator: Callable[[EnvConditions], tuple[float, float]] | None = None,
) -> SimTrace:
    """Closed-loop run recorded once per controller period.

    Each row holds the measurement the controller saw at that instant and
    the duty it then applied for the following period. AMPO_ANN takes its
    MPP estimates from ``estimator`` when given, otherwise from ``nets``
    (trained on the fly when absent).
    """
    config = config or SimConfig()
    kind = ControllerKind.parse(controller_kind)
    n = n_samples(profile.duration, config.period)
    if n == 0:
        return SimTrace(np.empty((0, len(TRACE_COLUMNS))), kind.value, profile.name)
    if kind is ControllerKind.AMPO_ANN and estimator is None:
        nets = ensure_networks(config, nets)

        def estimator(env):
            return estimate_mpp(nets, env)

    panel, bp = config.panel, config.buck
    oracle = _OracleCache(panel)
    state = controllers.initial_state(kind, config.gamma, config.u0, config.dead_band, r_load=bp.r)
    bs = BuckState()
    u = state.u_ctrl
    v_guess = None
    rows = np.empty((n, len(TRACE_COLUMNS)))

    for k in range(n):
        t = k * config.period
        try:
            env = profile_eval(profile, min(t, profile.duration))
            v = solve_voltage(panel, env, max(u * bs.i_l, 0.0), v_guess)
            v_guess = v
            m = Measurement.from_vi(v, float(solve_current(panel, env, v)))
            if kind is ControllerKind.CPOA:
                u, state = controllers.cpoa_step(m, state)
            elif kind is ControllerKind.AMPO:
                u, state = controllers.ampo_step(m, state)
            else:
                u, state = controllers.ampo_ann_step(m, estimator(env), state, oracle.v_oc(env))
            rows[k] = (t, env.g, env.t, m.v_pv, m.i_pv, m.p_pv, u, bs.v_out, bs.i_l, oracle.mpp(env).p)
            if k + 1 < n:
                for _ in range(config.substeps):
                    v_guess = solve_voltage(panel, env, max(u * bs.i_l, 0.0), v_guess)
                    bs = buck_step(bs, u, v_guess, config.dt, bp)
        except SimulationError:
            raise
        except Exception as exc:
            raise SimulationError(t, exc) from exc
    return SimTrace(rows, kind.value, profile.name)


# metrics ---------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    controller: str
    settle_time: float | None  # None when the band is never held long enough
    tracking_efficiency: float
    steady_state_power: float  # final constant-conditions segment
    chatter: float  # largest per-segment value
    segment_steady_state: tuple[float, ...]
    segment_chatter: tuple[float, ...]

    CSV_HEADER = (
        "controller",
        "settle_time",
        "tracking_efficiency",
        "steady_state_power",
        "chatter",
        "segment_steady_state",
        "segment_chatter",
    )

    @property
    def settled(self) -> bool:
        return self.settle_time is not None

    def csv_row(self) -> list[str]:
        return [
            self.controller,
            "NotSettled" if self.settle_time is None else fmt(self.settle_time),
            fmt(self.tracking_efficiency),
            fmt(self.steady_state_power),
            fmt(self.chatter),
            ";".join(fmt(x) for x in self.segment_steady_state),
            ";".join(fmt(x) for x in self.segment_chatter),
        ]

    def to_text(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in zip(self.CSV_HEADER, self.csv_row())) + "\n"


def constant_segments(trace: SimTrace, min_rows: int = 2) -> list[tuple[int, int]]:
    """Row ranges [lo, hi) over which (g, t_cell) stay constant."""
    g, tc = trace.column("g"), trace.column("t_cell")
    change = np.flatnonzero((np.diff(g) != 0) | (np.diff(tc) != 0)) + 1
    bounds = np.concatenate([[0], change, [len(trace)]])
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b - a >= min_rows]


def settle_time(t: np.ndarray, p: np.ndarray, p_mpp: np.ndarray, window: int = SETTLE_SAMPLES) -> float | None:
    inside = np.abs(p - p_mpp) <= SETTLE_BAND * p_mpp
    run = 0
    for k, ok in enumerate(inside):
        run = run + 1 if ok else 0
        if run >= window:
            return float(t[k - window + 1])
    return None


def compute_metrics(trace: SimTrace) -> Metrics:
    if len(trace) == 0:
        raise EmptyTrace("cannot compute metrics of an empty trace")
    t, p, p_mpp = trace.column("t"), trace.column("p_pv"), trace.column("p_mpp_oracle")
    if len(trace) > 1:
        efficiency = float(np.trapezoid(p, t) / np.trapezoid(p_mpp, t))
    else:
        efficiency = float(p[0] / p_mpp[0])
    means, stds = [], []
    for lo, hi in constant_segments(trace) or [(0, len(trace))]:
        tail = p[lo + int(math.floor((1.0 - TAIL_FRACTION) * (hi - lo))) : hi]
        means.append(float(np.mean(tail)))
        stds.append(float(np.std(tail)))
    return Metrics(
        controller=trace.controller,
        settle_time=settle_time(t, p, p_mpp),
        tracking_efficiency=efficiency,
        steady_state_power=means[-1],
        chatter=max(stds),
        segment_steady_state=tuple(means),
        segment_chatter=tuple(stds),
    )


# comparisons -----------------------------------------------------------


@dataclass(frozen=True)
class Comparison:
    metrics: tuple[Metrics, ...]
    traces: tuple[SimTrace, ...]

    def to_csv(self) -> str:
        return csv_text(Metrics.CSV_HEADER, [m.csv_row() for m in self.metrics])

    def table(self) -> str:
        head = f"{'controller':<10} {'settle_s':>10} {'efficiency':>10} {'P_ss_W':>9} {'chatter_W':>10}"
        lines = [head]
        for m in self.metrics:
            settle = "NotSettled" if m.settle_time is None else f"{m.settle_time:.4f}"
            lines.append(
                f"{m.controller:<10} {settle:>10} {m.tracking_efficiency:>10.4f} "
                f"{m.steady_state_power:>9.3f} {m.chatter:>10.4f}"
            )
        return "\n".join(lines) + "\n"


def _run_one(args) -> SimTrace:
    profile, kind, config, nets = args
    return run_scenario(profile, kind, config, nets)


def run_comparison(
    profile: ScenarioProfile,
    kinds: Sequence["ControllerKind | str"],
    config: SimConfig | None = None,
    nets: tuple[MlpNetwork, MlpNetwork] | None = None,
    workers: int = 1,
) -> Comparison:
    """Run every controller on the same profile; results follow input order."""
    config = config or SimConfig()
    parsed = [ControllerKind.parse(k) for k in kinds]
    if not parsed:
        raise ValueError("need at least one controller kind")
    if ControllerKind.AMPO_ANN in parsed:
        # train once so every run sees the same networks
        nets = ensure_networks(config, nets)
    jobs = [(profile, k, config, nets) for k in parsed]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            traces = list(pool.map(_run_one, jobs))
    else:
        traces = [_run_one(j) for j in jobs]
    return Comparison(tuple(compute_metrics(tr) for tr in traces), tuple(traces))
