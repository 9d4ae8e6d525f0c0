"""TOML run configuration with strict key checking.

Layout (every section and key is optional; unknown keys are errors)::

    seed = 42
    output_dir = "out"

    [panel]        # overrides on top of the calibrated default panel
    [buck]         # l, c, r, dt
    [controller]   # kind, gamma, sample_period_s, dead_band, u0
    [neural]       # hidden, max_epochs, lambda0, lambda_up, lambda_down, tol, model_dir
    [scenario]     # preset + duration, or duration + segments = [{start, g, t, g_end, t_end}]
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .buck import BuckParams
from .controllers import ControllerKind
from .errors import ConfigError
from .neural import LmOptions
from .pv_model import PanelParams, default_panel
from .sim import ScenarioProfile, Segment, SimConfig

CONFIG_ENV_VAR = "PVMPPT_CONFIG"

_TOP_KEYS = {"seed", "output_dir", "panel", "buck", "controller", "neural", "scenario"}
_CONTROLLER_KEYS = {"kind", "gamma", "sample_period_s", "dead_band", "u0"}
_BUCK_KEYS = {"l", "c", "r", "dt"}
_NEURAL_KEYS = {"hidden", "max_epochs", "lambda0", "lambda_up", "lambda_down", "tol", "model_dir"}
_SCENARIO_KEYS = {"preset", "duration", "segments"}
_SEGMENT_KEYS = {"start", "g", "t", "g_end", "t_end"}


@dataclass(frozen=True)
class ControllerSection:
    kind: ControllerKind = ControllerKind.AMPO
    gamma: float = 0.01
    dead_band: float = 1e-6
    sample_period_s: float = 1e-3
    u0: float = 0.0


@dataclass(frozen=True)
class NeuralSection:
    hidden: int = 10
    lm: LmOptions = field(default_factory=LmOptions)
    model_dir: Path = Path("models")


@dataclass(frozen=True)
class RunConfig:
    panel: PanelParams = field(default_factory=default_panel)
    buck: BuckParams = field(default_factory=BuckParams)
    dt: float = 1e-5
    controller: ControllerSection = field(default_factory=ControllerSection)
    neural: NeuralSection = field(default_factory=NeuralSection)
    scenario: ScenarioProfile = field(default_factory=lambda: ScenarioProfile.preset("stc"))
    output_dir: Path = Path("out")
    seed: int = 42

    def sim_config(self) -> SimConfig:
        c = self.controller
        return SimConfig(
            panel=self.panel,
            buck=self.buck,
            dt=self.dt,
            period=c.sample_period_s,
            gamma=c.gamma,
            dead_band=c.dead_band,
            u0=c.u0,
            hidden=self.neural.hidden,
            lm=self.neural.lm,
            seed=self.seed,
        )


def _check_keys(section: str, data: Any, allowed: set[str]) -> Mapping[str, Any]:
    if not isinstance(data, Mapping):
        raise ConfigError(f"[{section}] must be a table")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    return data


def _number(section: str, key: str, value: Any, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
    return kind(value)


def _scenario(data: Mapping[str, Any]) -> ScenarioProfile:
    data = _check_keys("scenario", data, _SCENARIO_KEYS)
    duration = data.get("duration")
    if duration is not None:
        duration = _number("scenario", "duration", duration)
    if "segments" in data:
        if "preset" in data:
            raise ConfigError("[scenario] takes either preset or segments, not both")
        if duration is None:
            raise ConfigError("[scenario] with segments needs a duration")
        segs = []
        for k, raw in enumerate(data["segments"]):
            raw = _check_keys(f"scenario.segments[{k}]", raw, _SEGMENT_KEYS)
            missing = {"start", "g", "t"} - set(raw)
            if missing:
                raise ConfigError(f"scenario.segments[{k}] missing {', '.join(sorted(missing))}")
            segs.append(Segment(**{key: _number("segment", key, v) for key, v in raw.items()}))
        return ScenarioProfile(duration, tuple(segs), "custom")
    return ScenarioProfile.preset(str(data.get("preset", "stc")), duration)


def from_mapping(data: Mapping[str, Any]) -> RunConfig:
    """Validate every section; raises ConfigError naming the offending entry."""
    data = _check_keys("top level", data, _TOP_KEYS)
    try:
        panel = default_panel()
        if "panel" in data:
            merged = {**panel.to_dict(), **_check_keys("panel", data["panel"], set(panel.to_dict()))}
            panel = PanelParams.from_mapping(merged)

        buck_raw = dict(_check_keys("buck", data.get("buck", {}), _BUCK_KEYS))
        dt = _number("buck", "dt", buck_raw.pop("dt", 1e-5))
        buck = BuckParams.from_mapping(buck_raw)

        ctrl_raw = _check_keys("controller", data.get("controller", {}), _CONTROLLER_KEYS)
        ctrl = ControllerSection()
        for key, value in ctrl_raw.items():
            if key == "kind":
                ctrl = replace(ctrl, kind=ControllerKind.parse(value))
            else:
                ctrl = replace(ctrl, **{key: _number("controller", key, value)})

        nn_raw = _check_keys("neural", data.get("neural", {}), _NEURAL_KEYS)
        lm = LmOptions()
        nn = NeuralSection()
        for key, value in nn_raw.items():
            if key == "model_dir":
                nn = replace(nn, model_dir=Path(str(value)))
            elif key == "hidden":
                nn = replace(nn, hidden=_number("neural", key, value, int))
            elif key == "max_epochs":
                lm = replace(lm, max_epochs=_number("neural", key, value, int))
            else:
                lm = replace(lm, **{key: _number("neural", key, value)})
        nn = replace(nn, lm=lm)
        if nn.hidden < 1:
            raise ConfigError("neural.hidden must be >= 1")

        scenario = _scenario(data.get("scenario", {}))
        seed = _number("top level", "seed", data.get("seed", 42), int)
        cfg = RunConfig(panel, buck, dt, ctrl, nn, scenario, Path(str(data.get("output_dir", "out"))), seed)
        cfg.sim_config()  # cross-field checks (period vs dt)
        return cfg
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc).strip("'\"")) from exc


def parse_value(text: str) -> Any:
    """TOML literal if it parses as one, otherwise the raw string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(data: dict, assignment: str) -> None:
    """Apply ``section.key=value`` (or ``key=value`` at top level) in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like section.key=value")
    path, text = assignment.split("=", 1)
    *sections, key = path.strip().split(".")
    node = data
    for name in sections:
        node = node.setdefault(name, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {assignment!r}: {name} is not a table")
    node[key] = parse_value(text.strip())


def load_mapping(path: "str | os.PathLike | None") -> dict:
    """Read a TOML file; ``None`` falls back to $PVMPPT_CONFIG, then to defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load(
    path: "str | os.PathLike | None" = None,
    overrides: list[str] | tuple[str, ...] = (),
    preset: str | None = None,
) -> RunConfig:
    """File, then ``section.key=value`` overrides, then a preset that replaces any inline segments."""
    data = load_mapping(path)
    for item in overrides:
        apply_override(data, item)
    if preset is not None:
        scenario = data.setdefault("scenario", {})
        scenario.pop("segments", None)
        scenario["preset"] = preset
    return from_mapping(data)
