"""Averaged state-space model of a DC-DC buck converter with resistive load.

States are the inductor current and the output (capacitor) voltage:

    d i_L / dt   = (u v_in - v_out) / L
    d v_out / dt = i_L / C - v_out / (R C)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping

from .errors import UnstableStep

DEFAULT_DT = 1e-5  # s


@dataclass(frozen=True)
class BuckParams:
    l: float = 1e-3  # H
    c: float = 470e-6  # F
    r: float = 6.0  # ohm

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"buck {f.name} must be > 0, got {value}")

    @property
    def k1(self) -> float:
        return 1.0 / self.l

    @property
    def k2(self) -> float:
        return 1.0 / self.c

    @property
    def k3(self) -> float:
        return 1.0 / (self.r * self.c)

    def max_stable_dt(self, r_equivalent: float | None = None) -> float:
        """Largest step allowed by the guard 0.1 * min(L / R_eq, R C)."""
        r_eq = self.r if r_equivalent is None else r_equivalent
        return 0.1 * min(self.l / r_eq, self.r * self.c)

    @classmethod
    def from_mapping(cls, data: Mapping[str, object]) -> "BuckParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise KeyError(f"unknown buck key(s): {', '.join(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class BuckState:
    i_l: float = 0.0
    v_out: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.i_l) and math.isfinite(self.v_out)):
            raise ValueError("buck state must be finite")


def saturate(u: float) -> float:
    """Clamp a duty cycle into [0, 1]."""
    return min(max(float(u), 0.0), 1.0)


def derivatives(state: BuckState, u: float, v_in: float, params: BuckParams) -> tuple[float, float]:
    u = saturate(u)
    return (
        params.k1 * u * v_in - params.k1 * state.v_out,
        params.k2 * state.i_l - params.k3 * state.v_out,
    )


def step(
    state: BuckState,
    u: float,
    v_in: float,
    dt: float,
    params: BuckParams,
    r_equivalent: float | None = None,
) -> BuckState:
    """One RK4 step with duty and input voltage held over ``dt``."""
    if not dt > 0:
        raise UnstableStep(f"dt must be > 0, got {dt}")
    limit = params.max_stable_dt(r_equivalent)
    if dt > limit:
        raise UnstableStep(f"dt={dt:g} s exceeds stability guard {limit:g} s")
    u = saturate(u)
    k1, k2, k3 = params.k1, params.k2, params.k3
    drive = k1 * u * v_in

    def f(i_l, v):
        return drive - k1 * v, k2 * i_l - k3 * v

    i0, v0 = state.i_l, state.v_out
    a1, b1 = f(i0, v0)
    a2, b2 = f(i0 + 0.5 * dt * a1, v0 + 0.5 * dt * b1)
    a3, b3 = f(i0 + 0.5 * dt * a2, v0 + 0.5 * dt * b2)
    a4, b4 = f(i0 + dt * a3, v0 + dt * b3)
    i_new = i0 + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
    v_new = v0 + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
    return BuckState(i_new, max(v_new, 0.0))


def equilibrium(u: float, v_in: float, params: BuckParams) -> BuckState:
    """Steady state of the averaged model for constant duty and input."""
    u = saturate(u)
    return BuckState(u * v_in / params.r, u * v_in)
