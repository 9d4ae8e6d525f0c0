"""Command-line front end: ``simulate``, ``train``, ``compare`` and ``sweep``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .controllers import ControllerKind
from .errors import ConfigError, PvMpptError
from .io import atomic_write_text, csv_text
from .neural import MlpNetwork, train_estimators
from .pv_model import EnvConditions, iv_curve, mpp_oracle
from .sim import compute_metrics, run_comparison, run_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

MODEL_FILES = ("v_mpp.json", "i_mpp.json")


class _MissingModel(ConfigError):
    pass


def _load_config(args) -> cfgmod.RunConfig:
    overrides = list(args.set or [])
    # dedicated flags win over --set, which wins over the file
    if getattr(args, "controller", None):
        overrides.append(f"controller.kind={args.controller!r}")
    if getattr(args, "duration", None) is not None:
        overrides.append(f"scenario.duration={args.duration!r}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "output_dir", None):
        overrides.append(f"output_dir={str(args.output_dir)!r}")
    if getattr(args, "model_dir", None):
        overrides.append(f"neural.model_dir={str(args.model_dir)!r}")
    return cfgmod.load(args.config, overrides, getattr(args, "scenario", None))


def _train_and_save(cfg: cfgmod.RunConfig, quiet: bool = False):
    nets, reports, data = train_estimators(cfg.panel, cfg.neural.hidden, cfg.seed, cfg.neural.lm)
    model_dir = cfg.neural.model_dir
    for net, report, name in zip(nets, reports, MODEL_FILES):
        stem = name.removesuffix(".json")
        atomic_write_text(model_dir / name, net.dumps())
        atomic_write_text(model_dir / f"train_report_{stem}.csv", report.to_csv())
        if not quiet:
            print(
                f"{stem}: epochs={report.epochs} loss={report.losses[-1]:.3e} "
                f"train_max_rel_err={report.train_max_rel_error:.4%} "
                f"val_max_rel_err={report.val_max_rel_error:.4%}"
            )
    rows = zip(data.g, data.t, data.v_mpp, data.i_mpp)
    atomic_write_text(model_dir / "dataset.csv", csv_text(("g", "t", "v_mpp", "i_mpp"), rows))
    return nets


def _networks(cfg: cfgmod.RunConfig, train_if_missing: bool):
    paths = [cfg.neural.model_dir / name for name in MODEL_FILES]
    if all(p.exists() for p in paths):
        return tuple(MlpNetwork.loads(p.read_text(encoding="utf-8")) for p in paths)
    if not train_if_missing:
        raise _MissingModel(
            f"no trained model in {cfg.neural.model_dir}; run 'train' first or pass --train-if-missing"
        )
    return _train_and_save(cfg, quiet=True)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    kind = cfg.controller.kind
    nets = _networks(cfg, args.train_if_missing) if kind is ControllerKind.AMPO_ANN else None
    trace = run_scenario(cfg.scenario, kind, cfg.sim_config(), nets)
    atomic_write_text(cfg.output_dir / "trace.csv", trace.to_csv())
    if len(trace):
        metrics = compute_metrics(trace)
        atomic_write_text(cfg.output_dir / "metrics.txt", metrics.to_text())
        print(metrics.to_text(), end="")
    else:
        atomic_write_text(cfg.output_dir / "metrics.txt", "rows = 0\n")
        print("rows = 0")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    _train_and_save(cfg)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    names = [s for s in (x.strip() for x in args.controllers.split(",")) if s]
    if not names:
        raise ConfigError("--controllers needs at least one controller")
    try:
        kinds = [ControllerKind.parse(n) for n in names]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    nets = _networks(cfg, args.train_if_missing) if ControllerKind.AMPO_ANN in kinds else None
    result = run_comparison(cfg.scenario, kinds, cfg.sim_config(), nets, workers=args.workers)
    for trace in result.traces:
        atomic_write_text(cfg.output_dir / f"trace_{trace.controller}.csv", trace.to_csv())
    atomic_write_text(cfg.output_dir / "comparison.csv", result.to_csv())
    print(result.table(), end="")
    return EXIT_OK


def parse_grid(text: str) -> tuple[np.ndarray, np.ndarray]:
    """``g_min:g_max:n,t_min:t_max:n`` with temperatures in degrees Celsius."""
    try:
        g_part, t_part = text.split(",")
        axes = []
        for part in (g_part, t_part):
            lo, hi, n = part.split(":")
            n = int(n)
            if n < 1:
                raise ValueError
            axes.append(np.array([float(lo)]) if n == 1 else np.linspace(float(lo), float(hi), n))
    except ValueError:
        raise ConfigError(f"--grid {text!r} must look like g_min:g_max:n,t_min:t_max:n") from None
    if np.any(axes[0] <= 0):
        raise ConfigError("--grid irradiance values must be > 0")
    return axes[0], axes[1]


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    g_values, t_values = parse_grid(args.grid)
    out = cfg.output_dir / "sweep"
    locus = []
    for g in g_values:
        for t_c in t_values:
            env = EnvConditions.from_celsius(float(g), float(t_c))
            v, i, p = iv_curve(cfg.panel, env, args.points)
            name = f"curve_g{g:g}_t{t_c:g}C.csv"
            atomic_write_text(out / name, csv_text(("v", "i", "p"), zip(v, i, p)))
            mpp = mpp_oracle(cfg.panel, env)
            locus.append((float(g), float(t_c), env.t, mpp.v, mpp.i, mpp.p))
            print(f"G={g:g} W/m2 T={t_c:g} C: P_mpp={mpp.p:.3f} W at {mpp.v:.3f} V")
    atomic_write_text(out / "mpp_locus.csv", csv_text(("g", "t_c", "t", "v_mpp", "i_mpp", "p_mpp"), locus))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvmppt", description="PV MPPT simulation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help=f"TOML config (default: ${cfgmod.CONFIG_ENV_VAR})")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config entry")
        p.add_argument("--output-dir", type=Path, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--model-dir", type=Path, default=None)

    def scenario(p):
        p.add_argument("--scenario", choices=("stc", "step_irradiance"), default=None)
        p.add_argument("--duration", type=float, default=None)
        p.add_argument("--train-if-missing", action="store_true", help="train the estimators if no model exists")

    p = sub.add_parser("simulate", help="run one controller on one scenario")
    common(p)
    scenario(p)
    p.add_argument("--controller", choices=[k.value for k in ControllerKind], default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="generate the MPP dataset and train both estimators")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="run several controllers on the same scenario")
    common(p)
    scenario(p)
    p.add_argument("--controllers", default="cpoa,ampo,ampo_ann")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="emit I-V / P-V curve families and the MPP locus")
    common(p)
    p.add_argument("--grid", default="1000:1000:1,25:75:3")
    p.add_argument("--points", type=int, default=200)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PvMpptError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
