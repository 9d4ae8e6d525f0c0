"""Single-diode photovoltaic panel model.

The panel current satisfies the implicit relation

    I = I_ph - I_s * (exp((V + R_s I) / (a V_T)) - 1) - (V + R_s I) / R_sh

with V_T = n_s K T / q. Photo-current and saturation current are scaled to
the operating irradiance and cell temperature with the usual crystalline
silicon laws (see :func:`effective_sources`).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import brentq, least_squares

from .errors import CalibrationFailure, NonConvergence

BOLTZMANN = 1.380649e-23  # J/K
ELECTRON_CHARGE = 1.602176634e-19  # C

NEWTON_TOL = 1e-9  # A, accepted residual
NEWTON_STOP = 1e-12  # A, iteration target; quadratic convergence gets there cheaply
NEWTON_MAX_ITER = 100
_EXP_CAP = 700.0


@dataclass(frozen=True)
class PanelParams:
    i_ph_ref: float
    i_s_ref: float
    a: float
    r_s: float
    r_sh: float
    n_s: float = 36.0
    k_i: float = 0.0032
    g_ref: float = 1000.0
    t_ref: float = 298.15
    e_g: float = 1.12

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"{f.name} must be finite")
        if self.r_s < 0:
            raise ValueError(f"r_s must be >= 0, got {self.r_s}")
        if self.r_sh <= 0:
            raise ValueError(f"r_sh must be > 0, got {self.r_sh}")
        if self.a <= 0:
            raise ValueError(f"a must be > 0, got {self.a}")
        if self.n_s < 1:
            raise ValueError(f"n_s must be >= 1, got {self.n_s}")
        if self.i_ph_ref <= 0 or self.i_s_ref <= 0:
            raise ValueError("i_ph_ref and i_s_ref must be > 0")
        if self.g_ref <= 0 or self.t_ref <= 0:
            raise ValueError("g_ref and t_ref must be > 0")

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: Mapping[str, object]) -> "PanelParams":
        """Build from a ``[panel]`` config section; unknown keys are rejected."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise KeyError(f"unknown panel key(s): {', '.join(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class EnvConditions:
    g: float  # W/m^2
    t: float  # K

    def __post_init__(self):
        if not (self.g >= 0 and math.isfinite(self.g)):
            raise ValueError(f"irradiance must be >= 0, got {self.g}")
        if not (self.t > 0 and math.isfinite(self.t)):
            raise ValueError(f"temperature must be > 0 K, got {self.t}")

    @classmethod
    def from_celsius(cls, g: float, t_c: float) -> "EnvConditions":
        return cls(g, t_c + 273.15)


STC = EnvConditions(1000.0, 298.15)


@dataclass(frozen=True)
class OperatingPoint:
    v: float
    i: float
    p: float

    def __post_init__(self):
        if self.v < 0:
            raise ValueError(f"operating voltage must be >= 0, got {self.v}")
        if not math.isclose(self.p, self.v * self.i, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError(f"p={self.p} inconsistent with v*i={self.v * self.i}")

    @classmethod
    def from_vi(cls, v: float, i: float) -> "OperatingPoint":
        return cls(float(v), float(i), float(v) * float(i))


def thermal_voltage(params: PanelParams, t: float) -> float:
    """Panel thermal voltage n_s K t / q."""
    return params.n_s * BOLTZMANN * t / ELECTRON_CHARGE


def effective_sources(params: PanelParams, env: EnvConditions) -> tuple[float, float, float]:
    """Photo-current, saturation current and thermal voltage at ``env``."""
    i_ph = (env.g / params.g_ref) * (params.i_ph_ref + params.k_i * (env.t - params.t_ref))
    expo = (ELECTRON_CHARGE * params.e_g / (params.a * BOLTZMANN)) * (
        1.0 / params.t_ref - 1.0 / env.t
    )
    i_s = params.i_s_ref * (env.t / params.t_ref) ** 3 * math.exp(expo)
    return i_ph, i_s, thermal_voltage(params, env.t)


def current_residual(params: PanelParams, env: EnvConditions, v, i):
    """Right-hand side of the diode equation minus ``i``; zero on the curve."""
    i_ph, i_s, v_t = effective_sources(params, env)
    vd = np.asarray(v, dtype=float) + params.r_s * np.asarray(i, dtype=float)
    return i_ph - i_s * np.expm1(np.minimum(vd / (params.a * v_t), _EXP_CAP)) - vd / params.r_sh - i


def solve_current(params: PanelParams, env: EnvConditions, v):
    """Panel current at terminal voltage ``v`` (scalar or array).

    Damped Newton iteration on the implicit diode equation, started from
    I = i_ph. A step is halved while it increases the residual magnitude.
    """
    scalar = np.ndim(v) == 0
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if np.any(v < 0):
        raise ValueError("terminal voltage must be >= 0")
    i_ph, i_s, v_t = effective_sources(params, env)
    avt = params.a * v_t
    r_s, g_sh = params.r_s, 1.0 / params.r_sh

    def residual(i):
        vd = v + r_s * i
        return i_ph - i_s * np.expm1(np.minimum(vd / avt, _EXP_CAP)) - vd * g_sh - i

    i = np.full_like(v, i_ph)
    f = residual(i)
    for _ in range(NEWTON_MAX_ITER):
        if np.all(np.abs(f) < NEWTON_STOP):
            break
        e = np.exp(np.minimum((v + r_s * i) / avt, _EXP_CAP))
        df = -i_s * r_s / avt * e - r_s * g_sh - 1.0
        step = -f / df
        i_new = i + step
        f_new = residual(i_new)
        for _ in range(30):
            worse = np.abs(f_new) > np.abs(f)
            if not np.any(worse):
                break
            step = np.where(worse, 0.5 * step, step)
            i_new = i + step
            f_new = residual(i_new)
        i, f = i_new, f_new
    else:
        if not np.all(np.abs(f) < NEWTON_TOL):
            raise NonConvergence(
                f"diode equation residual {np.max(np.abs(f)):.3e} A after {NEWTON_MAX_ITER} iterations"
            )
    return float(i[0]) if scalar else i


def solve_voltage(params: PanelParams, env: EnvConditions, i: float, v_guess: float | None = None) -> float:
    """Terminal voltage at which the panel delivers current ``i``.

    Returns 0 when ``i`` exceeds the short-circuit current (the panel
    cannot be driven into reverse bias here). Safeguarded Newton on the
    diode voltage V + R_s I, which is bracketed by [R_s I, V_oc-bound].
    """
    i_ph, i_s, v_t = effective_sources(params, env)
    avt = params.a * v_t
    g_sh = 1.0 / params.r_sh

    def g(vd):
        return i_ph - i - i_s * math.expm1(min(vd / avt, _EXP_CAP)) - vd * g_sh

    lo = params.r_s * i
    if g(lo) <= 0.0:
        return 0.0
    hi = avt * math.log1p(i_ph / i_s) + 1e-9
    if v_guess is not None and lo < v_guess + params.r_s * i < hi:
        vd = v_guess + params.r_s * i
    else:
        vd = 0.5 * (lo + hi)
    for _ in range(NEWTON_MAX_ITER):
        gv = g(vd)
        if abs(gv) < NEWTON_TOL:
            return max(vd - params.r_s * i, 0.0)
        if gv > 0:
            lo = vd
        else:
            hi = vd
        dg = -i_s / avt * math.exp(min(vd / avt, _EXP_CAP)) - g_sh
        nxt = vd - gv / dg
        vd = nxt if lo < nxt < hi else 0.5 * (lo + hi)
    raise NonConvergence(f"inverse diode solve did not converge for i={i}")


def open_circuit_voltage(params: PanelParams, env: EnvConditions) -> float:
    """V_oc by bisection on the I = 0 residual."""
    i_ph, i_s, v_t = effective_sources(params, env)
    if i_ph <= 0:
        return 0.0
    avt = params.a * v_t
    lo, hi = 0.0, avt * math.log1p(i_ph / i_s)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if i_ph - i_s * math.expm1(mid / avt) - mid / params.r_sh > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def short_circuit_current(params: PanelParams, env: EnvConditions) -> float:
    return solve_current(params, env, 0.0)


def power_at(params: PanelParams, env: EnvConditions, v):
    if np.ndim(v):
        v = np.asarray(v, dtype=float)
    return v * solve_current(params, env, v)


INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(f: Callable[[float], float], a: float, b: float, tol: float = 1e-4) -> float:
    """Maximiser of a unimodal ``f`` on [a, b], located to within ``tol``."""
    a, b = min(a, b), max(a, b)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return c if fc >= fd else d


def mpp_oracle(
    params: PanelParams, env: EnvConditions, n_points: int = 2000, tol: float = 1e-4
) -> OperatingPoint:
    """Brute-force maximum power point.

    Uniform sweep of ``n_points`` voltages over [0, V_oc], then golden-section
    refinement on the interval bracketing the best sample.
    """
    if env.g <= 0:
        raise ValueError("mpp_oracle requires positive irradiance")
    v_oc = open_circuit_voltage(params, env)
    v = np.linspace(0.0, v_oc, n_points)
    p = v * solve_current(params, env, v)
    k = int(np.argmax(p))
    lo, hi = v[max(k - 1, 0)], v[min(k + 1, n_points - 1)]
    v_best = golden_section_max(lambda x: x * solve_current(params, env, x), lo, hi, tol)
    i_best = solve_current(params, env, v_best)
    if v_best * i_best < p[k]:
        v_best, i_best = float(v[k]), float(p[k] / v[k])
    return OperatingPoint.from_vi(v_best, i_best)


def iv_curve(params: PanelParams, env: EnvConditions, n_points: int = 200):
    """Arrays (v, i, p) over [0, V_oc]."""
    v = np.linspace(0.0, open_circuit_voltage(params, env), n_points)
    i = solve_current(params, env, v)
    return v, i, v * i


# --- calibration -----------------------------------------------------------

DEFAULT_TARGET = OperatingPoint(26.0, 111.0 / 26.0, 111.0)
DEFAULT_V_OC = 32.0
DEFAULT_I_SC = 5.86
DEFAULT_LOW_IRRADIANCE = (500.0, 38.0)  # (W/m^2, W) at reference temperature
DEFAULT_A_SEED = 1.3


def _sources_from_isc_voc(a, r_s, r_sh, v_oc, i_sc, v_t):
    """Photo- and saturation current that reproduce (V_oc, I_sc) exactly."""
    avt = a * v_t
    e_oc = math.exp(min(v_oc / avt, _EXP_CAP))
    e_sc = math.exp(min(r_s * i_sc / avt, _EXP_CAP))
    i_s = (i_sc - (v_oc - r_s * i_sc) / r_sh) / (e_oc - e_sc)
    i_ph = i_s * (e_oc - 1.0) + v_oc / r_sh
    return i_ph, i_s


def _mpp_power_smooth(params: PanelParams, env: EnvConditions) -> float:
    """MPP power via root of dP/dV; smooth in the parameters (used for fitting)."""
    v_oc = open_circuit_voltage(params, env)
    i_ph, i_s, v_t = effective_sources(params, env)
    avt = params.a * v_t

    def dp_dv(v):
        i = solve_current(params, env, v)
        gp = i_s / avt * math.exp(min((v + params.r_s * i) / avt, _EXP_CAP)) + 1.0 / params.r_sh
        return i - v * gp / (1.0 + params.r_s * gp)

    v_m = brentq(dp_dv, 0.0, v_oc, xtol=1e-13)
    return v_m * solve_current(params, env, v_m)


def calibrate(
    target: OperatingPoint = DEFAULT_TARGET,
    v_oc: float = DEFAULT_V_OC,
    i_sc: float = DEFAULT_I_SC,
    low_irradiance: tuple[float, float] | None = DEFAULT_LOW_IRRADIANCE,
    *,
    a_seed: float = DEFAULT_A_SEED,
    base: PanelParams | None = None,
    tol: float = 0.01,
) -> PanelParams:
    """Fit {i_ph_ref, i_s_ref, a, r_s, r_sh} to datasheet-style targets at STC.

    ``i_ph_ref`` and ``i_s_ref`` follow in closed form from (V_oc, I_sc) for
    any (a, r_s, r_sh). The remaining unknowns are fitted to the MPP
    conditions I(V_mpp) = I_mpp and dP/dV = 0, and, when ``low_irradiance``
    is given as (g, p_mpp), to the MPP power at that irradiance. Without it
    the ideality factor is held at ``a_seed``.
    """
    if not (0 < target.v < v_oc) or not (0 < target.i < i_sc):
        raise CalibrationFailure(
            f"infeasible target ({target.v} V, {target.i} A) for V_oc={v_oc}, I_sc={i_sc}"
        )
    if base is None:
        base = PanelParams(i_ph_ref=i_sc, i_s_ref=1e-9, a=a_seed, r_s=0.0, r_sh=1e3)
    ref = EnvConditions(base.g_ref, base.t_ref)
    v_t = thermal_voltage(base, base.t_ref)
    vm, im = target.v, target.i

    def build(a, r_s, r_sh):
        i_ph, i_s = _sources_from_isc_voc(a, r_s, r_sh, v_oc, i_sc, v_t)
        return replace(
            base, i_ph_ref=float(i_ph), i_s_ref=float(i_s), a=float(a), r_s=float(r_s), r_sh=float(r_sh)
        )

    def stc_residuals(a, r_s, r_sh):
        i_ph, i_s = _sources_from_isc_voc(a, r_s, r_sh, v_oc, i_sc, v_t)
        avt = a * v_t
        e = math.exp(min((vm + r_s * im) / avt, _EXP_CAP))
        r1 = (i_ph - i_s * (e - 1.0) - (vm + r_s * im) / r_sh - im) / im
        gp = i_s / avt * e + 1.0 / r_sh
        r2 = (im - vm * gp / (1.0 + r_s * gp)) / im
        return [r1, r2]

    if low_irradiance is None:
        def fun(x):
            return stc_residuals(a_seed, x[0], math.exp(x[1]))
        seeds = [[r_s, math.log(r_sh)] for r_s in (0.05, 0.3, 0.8) for r_sh in (20.0, 100.0, 500.0)]
        lower, upper = [0.0, math.log(0.5)], [10.0, math.log(1e6)]
    else:
        g_low, p_low = low_irradiance
        env_low = EnvConditions(g_low, base.t_ref)

        def fun(x):
            a, r_s, r_sh = x[0], x[1], math.exp(x[2])
            res = stc_residuals(a, r_s, r_sh)
            try:
                p = _mpp_power_smooth(build(a, r_s, r_sh), env_low)
            except (ValueError, NonConvergence):
                p = 0.0
            return res + [(p - p_low) / p_low]
        seeds = [[a_seed, r_s, math.log(r_sh)] for r_s in (0.1, 0.5) for r_sh in (15.0, 50.0, 200.0)]
        lower, upper = [0.3, 0.0, math.log(0.5)], [5.0, 10.0, math.log(1e6)]

    best = None
    for x0 in seeds:
        try:
            sol = least_squares(fun, x0, bounds=(lower, upper), xtol=1e-14, ftol=1e-14, gtol=1e-14)
        except (ValueError, OverflowError, ZeroDivisionError):
            continue
        if best is None or sol.cost < best.cost:
            best = sol
        if best.cost < 1e-20:
            break
    if best is None:
        raise CalibrationFailure("least-squares refinement failed from every seed")
    x = best.x
    try:
        params = build(a_seed, x[0], math.exp(x[1])) if low_irradiance is None else build(x[0], x[1], math.exp(x[2]))
    except ValueError as exc:
        raise CalibrationFailure(f"fitted parameters are unphysical: {exc}") from exc

    mpp = mpp_oracle(params, ref)
    checks = {
        "p_mpp": (mpp.p, target.p),
        "v_mpp": (mpp.v, target.v),
        "v_oc": (open_circuit_voltage(params, ref), v_oc),
        "i_sc": (short_circuit_current(params, ref), i_sc),
    }
    if low_irradiance is not None:
        checks["p_low"] = (mpp_oracle(params, env_low).p, low_irradiance[1])
    for name, (got, want) in checks.items():
        if abs(got - want) > tol * abs(want):
            raise CalibrationFailure(f"{name}: fitted {got:.6g} vs target {want:.6g} (> {tol:.0%})")
    return params


@lru_cache(maxsize=1)
def default_panel() -> PanelParams:
    """The shipped calibrated panel (26 V / 111 W at STC, 38 W at 500 W/m^2)."""
    return calibrate()
