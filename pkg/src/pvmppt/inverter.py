"""Ideal three-phase voltage-source inverter algebra.

Each leg i has a switching function c_i in {0, 1}; the upper switch conducts
when c_i = 1 and the lower one is its complement. With the DC-bus midpoint O
as reference, leg voltages are (c_i - 1/2) u_dc. For a balanced star load the
neutral sits at the mean leg voltage and the phase voltages follow from

    [u_an, u_bn, u_cn]^T = (u_dc / 3) M [c_a, c_b, c_c]^T,
    M = [[2, -1, -1], [-1, 2, -1], [-1, -1, 2]].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

PHASE_MATRIX = np.array([[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]])


@dataclass(frozen=True)
class SwitchState:
    c_a: int
    c_b: int
    c_c: int

    def __post_init__(self):
        for name in ("c_a", "c_b", "c_c"):
            value = getattr(self, name)
            if isinstance(value, bool) or value not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1, got {value!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.c_a, self.c_b, self.c_c], dtype=float)

    @staticmethod
    def all_states() -> Iterator["SwitchState"]:
        for k in range(8):
            yield SwitchState((k >> 2) & 1, (k >> 1) & 1, k & 1)


@dataclass(frozen=True)
class PhaseVoltages:
    u_an: float
    u_bn: float
    u_cn: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.u_an, self.u_bn, self.u_cn)


def _check_dc(u_dc: float) -> None:
    if not u_dc >= 0:
        raise ValueError(f"u_dc must be >= 0, got {u_dc}")


def leg_voltages(s: SwitchState, u_dc: float) -> tuple[float, float, float]:
    """Leg-to-midpoint voltages u_ao, u_bo, u_co."""
    _check_dc(u_dc)
    return tuple((c - 0.5) * u_dc for c in (s.c_a, s.c_b, s.c_c))


def neutral_voltage(legs: tuple[float, float, float]) -> float:
    """Star-point voltage u_no of a balanced load."""
    return (legs[0] + legs[1] + legs[2]) / 3.0


def line_voltages(legs: tuple[float, float, float]) -> tuple[float, float, float]:
    a, b, c = legs
    return (a - b, b - c, c - a)


def phase_voltages(s: SwitchState, u_dc: float) -> PhaseVoltages:
    _check_dc(u_dc)
    u = (u_dc / 3.0) * (PHASE_MATRIX @ s.as_array())
    return PhaseVoltages(float(u[0]), float(u[1]), float(u[2]))


def triangle_carrier(t: float, f_carrier: float) -> float:
    """Symmetric triangle in [-1, 1], equal to -1 at multiples of the period."""
    x = (t * f_carrier) % 1.0
    return 4.0 * x - 1.0 if x < 0.5 else 3.0 - 4.0 * x


def sine_pwm_switch(t: float, m: float, f_out: float, f_carrier: float) -> SwitchState:
    """Naturally sampled sine-triangle PWM with 120 degree phase displacement."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"modulation index must lie in [0, 1], got {m}")
    if not (f_out > 0 and f_carrier >= 10.0 * f_out):
        raise ValueError("need f_out > 0 and f_carrier >= 10 f_out")
    carrier = triangle_carrier(t, f_carrier)
    theta = 2.0 * math.pi * f_out * t
    refs = (m * math.sin(theta - k * 2.0 * math.pi / 3.0) for k in range(3))
    return SwitchState(*(int(r >= carrier) for r in refs))


@dataclass(frozen=True)
class InverterTrace:
    t: np.ndarray
    u_phase: np.ndarray  # (n, 3)
    i_phase: np.ndarray  # (n, 3)

    COLUMNS = ("t", "u_an", "u_bn", "u_cn", "i_a", "i_b", "i_c")

    def rows(self) -> np.ndarray:
        return np.column_stack([self.t, self.u_phase, self.i_phase])


def simulate_open_loop(
    u_dc: float,
    m: float = 0.8,
    f_out: float = 50.0,
    f_carrier: float = 5000.0,
    r: float = 10.0,
    l: float = 10e-3,
    duration: float = 0.04,
    dt: float = 1e-6,
) -> InverterTrace:
    """Sine-PWM inverter feeding a balanced star R-L load.

    Phase currents follow L di/dt = u_n - R i and are advanced with the exact
    zero-order-hold update since the phase voltage is constant over a step.
    """
    _check_dc(u_dc)
    if not (r > 0 and l > 0 and dt > 0 and duration >= 0):
        raise ValueError("r, l, dt must be > 0 and duration >= 0")
    n = int(math.floor(duration / dt + 1e-9)) + 1
    decay = math.exp(-r * dt / l)
    t = np.arange(n) * dt
    u = np.empty((n, 3))
    i = np.zeros((n, 3))
    for k in range(n):
        u[k] = phase_voltages(sine_pwm_switch(t[k], m, f_out, f_carrier), u_dc).as_tuple()
        if k + 1 < n:
            i[k + 1] = i[k] * decay + (u[k] / r) * (1.0 - decay)
    return InverterTrace(t, u, i)
