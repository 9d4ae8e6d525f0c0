"""Perturb-and-observe MPPT controllers.

Three strategies share one state record:

* ``CPOA``     classic P&O on the duty cycle: keep the perturbation
               direction while power rises, reverse it otherwise.
* ``AMPO``     adaptive modified P&O driven by the three-valued sign of
               dP * dV and the two-sample indicator ``delta`` (hold when
               consecutive signs disagree, i.e. the MPP was straddled).
* ``AMPO_ANN`` AMPO preceded by a feedforward duty jump computed from
               neural estimates of the MPP, then corrected with a finer step.

Duty-to-voltage orientation: the converter sits between panel and a
resistive load, so the panel sees R / u^2 and a larger duty means a lower
panel voltage. Voltage-direction decisions are therefore applied to the
duty with the opposite sign.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from .buck import saturate
from .errors import EstimateOutOfRange

DEFAULT_GAMMA = 0.01
DEFAULT_DEAD_BAND = 1e-6
DEFAULT_SAMPLE_PERIOD = 1e-3  # s
FINE_STEP_RATIO = 5.0
ESTIMATE_CHANGE_TOL = 0.01  # relative change of (v_hat, i_hat) that re-triggers the jump


class ControllerKind(str, enum.Enum):
    CPOA = "cpoa"
    AMPO = "ampo"
    AMPO_ANN = "ampo_ann"

    @classmethod
    def parse(cls, name: "str | ControllerKind") -> "ControllerKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown controller kind {name!r}; expected one of {[k.value for k in cls]}"
            ) from None


@dataclass(frozen=True)
class Measurement:
    v_pv: float
    i_pv: float
    p_pv: float

    def __post_init__(self):
        if not math.isclose(self.p_pv, self.v_pv * self.i_pv, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError("p_pv must equal v_pv * i_pv")

    @classmethod
    def from_vi(cls, v: float, i: float) -> "Measurement":
        return cls(float(v), float(i), float(v) * float(i))


@dataclass(frozen=True)
class ControllerState:
    kind: ControllerKind
    u_ctrl: float = 0.0
    gamma: float = DEFAULT_GAMMA
    prev_p: float | None = None
    prev_v: float | None = None
    prev_delta_sign: int = 0
    direction: int = 1  # CPOA duty perturbation direction
    dead_band_p: float = DEFAULT_DEAD_BAND
    dead_band_v: float = DEFAULT_DEAD_BAND
    r_load: float | None = None  # AMPO_ANN feedforward needs the load resistance
    last_estimate: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        object.__setattr__(self, "kind", ControllerKind.parse(self.kind))
        object.__setattr__(self, "u_ctrl", saturate(self.u_ctrl))

    @property
    def gamma_fine(self) -> float:
        return self.gamma / FINE_STEP_RATIO


def sign3(x: float, dead_band: float = DEFAULT_DEAD_BAND) -> int:
    """Three-valued sign with a symmetric dead-band."""
    if x > dead_band:
        return 1
    if x < -dead_band:
        return -1
    return 0


def ampo_delta(prev_sign: int, sign: int) -> int:
    """Two-sample MPP indicator in {-2, 0, +2}.

    Agreeing signs give +-2 (left / right of the MPP), opposite signs give 0
    (the MPP was straddled). A zero sign carries no information, so the
    other sample decides; two zeros give 0.
    """
    total = prev_sign + sign
    return 2 * (total > 0) - 2 * (total < 0)


def _slope_sign(m: Measurement, s: ControllerState) -> int:
    """sign(dP * dV) with each difference passed through the dead-band."""
    return sign3(m.p_pv - s.prev_p, s.dead_band_p) * sign3(m.v_pv - s.prev_v, s.dead_band_v)


def cpoa_step(m: Measurement, s: ControllerState) -> tuple[float, ControllerState]:
    if s.kind is not ControllerKind.CPOA:
        raise ValueError(f"cpoa_step called with {s.kind.value} state")
    if s.prev_p is None:
        u = saturate(s.u_ctrl + s.direction * s.gamma)
        return u, replace(s, u_ctrl=u, prev_p=m.p_pv, prev_v=m.v_pv)
    dp = sign3(m.p_pv - s.prev_p, s.dead_band_p)
    direction = s.direction if dp >= 0 else -s.direction
    u = s.u_ctrl if dp == 0 else saturate(s.u_ctrl + direction * s.gamma)
    return u, replace(s, u_ctrl=u, prev_p=m.p_pv, prev_v=m.v_pv, direction=direction)


def _ampo_update(m: Measurement, s: ControllerState, step: float) -> tuple[float, ControllerState]:
    sign = _slope_sign(m, s)
    delta = ampo_delta(s.prev_delta_sign, sign)
    u = s.u_ctrl
    if delta != 0 and sign != 0:
        # duty moves by delta * step; delta > 0 means power grows with
        # voltage, and the panel voltage rises when the duty falls
        u = saturate(u - step * delta)
    return u, replace(s, u_ctrl=u, prev_p=m.p_pv, prev_v=m.v_pv, prev_delta_sign=sign)


def ampo_step(m: Measurement, s: ControllerState) -> tuple[float, ControllerState]:
    if s.kind is not ControllerKind.AMPO:
        raise ValueError(f"ampo_step called with {s.kind.value} state")
    if s.prev_p is None:
        # no history yet: probe once so the next sample carries slope information
        u = saturate(s.u_ctrl + s.direction * s.gamma)
        return u, replace(s, u_ctrl=u, prev_p=m.p_pv, prev_v=m.v_pv)
    return _ampo_update(m, s, s.gamma)


def feedforward_duty(v_hat: float, i_hat: float, r_load: float) -> float:
    """Duty at which the converter presents R / u^2 = v_hat / i_hat to the panel."""
    if v_hat <= 0 or i_hat <= 0:
        return 0.0
    return saturate(math.sqrt(i_hat * r_load / v_hat))


def ampo_ann_step(
    m: Measurement,
    est: tuple[float, float],
    s: ControllerState,
    v_oc: float | None = None,
) -> tuple[float, ControllerState]:
    """AMPO with a neural feedforward jump.

    Whenever the MPP estimate changes (first call, or a relative move larger
    than ``ESTIMATE_CHANGE_TOL``), the duty jumps to the value that places
    the panel at the estimated MPP resistance. Otherwise AMPO runs around
    that point with the fine step gamma / 5.
    """
    if s.kind is not ControllerKind.AMPO_ANN:
        raise ValueError(f"ampo_ann_step called with {s.kind.value} state")
    v_hat, i_hat = float(est[0]), float(est[1])
    if not (v_hat >= 0 and (v_oc is None or v_hat <= v_oc)) or not math.isfinite(v_hat):
        raise EstimateOutOfRange(f"v_mpp estimate {v_hat:.4g} V outside [0, {v_oc}]")
    if s.r_load is None:
        raise ValueError("AMPO_ANN state needs r_load for the feedforward duty")

    if s.last_estimate is None or _estimate_moved(s.last_estimate, (v_hat, i_hat)):
        u = feedforward_duty(v_hat, i_hat, s.r_load)
        return u, replace(
            s, u_ctrl=u, prev_p=None, prev_v=None, prev_delta_sign=0, last_estimate=(v_hat, i_hat)
        )
    if s.prev_p is None:
        return s.u_ctrl, replace(s, prev_p=m.p_pv, prev_v=m.v_pv)
    return _ampo_update(m, s, s.gamma_fine)


def _estimate_moved(old: tuple[float, float], new: tuple[float, float]) -> bool:
    return any(abs(n - o) > ESTIMATE_CHANGE_TOL * max(abs(o), 1e-9) for o, n in zip(old, new))


def initial_state(
    kind: "ControllerKind | str",
    gamma: float = DEFAULT_GAMMA,
    u0: float = 0.0,
    dead_band: float = DEFAULT_DEAD_BAND,
    r_load: float | None = None,
) -> ControllerState:
    return ControllerState(
        kind=ControllerKind.parse(kind),
        u_ctrl=u0,
        gamma=gamma,
        dead_band_p=dead_band,
        dead_band_v=dead_band,
        r_load=r_load,
    )
