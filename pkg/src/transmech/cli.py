"""Command line front end.

Exit codes: 0 success, 2 configuration problem, 3 physicality/health
failure, 4 checkpoint or other I/O trouble.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .errors import (
    CheckpointError,
    ConfigError,
    HealthError,
    HermiticityError,
    PositivityError,
    TraceError,
)
from .fock import FockLayout
from .model import TWO_PI, SystemParams
from .scenarios import PARAM_KEYS, SCENARIOS, load_config, resume, run_scenario


def _dims(text: str):
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must be three integers t,m1,m2, got {text!r}")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"dims must be three integers t,m1,m2, got {text!r}")
    return parts


def _add_run_flags(p, with_workers=True):
    p.add_argument("--out-dir", help="override the output directory")
    p.add_argument("--horizon-tau", type=float, help="override the horizon, in units of tau")
    p.add_argument("--dims", type=_dims, metavar="t,m1,m2", help="override the Fock truncations")
    p.add_argument("--frame", choices=("rotating", "lab"), help="integration frame")
    if with_workers:
        p.add_argument("--workers", type=int, default=1, help="concurrent sweep points")


def _apply_flags(cfg, args):
    changes, noted = {}, {}
    if args.out_dir is not None:
        changes["out_dir"] = noted["out_dir"] = args.out_dir
    if args.horizon_tau is not None:
        if args.horizon_tau <= 0:
            raise ConfigError("--horizon-tau must be positive")
        changes["horizon_tau"] = noted["horizon_tau"] = args.horizon_tau
    if args.dims is not None:
        changes["layout"] = FockLayout(args.dims)
        noted["dims"] = list(args.dims)
    if args.frame is not None:
        changes["frame"] = noted["frame"] = args.frame
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
        cfg.integrator()
    return cfg, noted


def _print_manifest(manifest):
    print(f"scenario {manifest.scenario}  config {manifest.config_hash[:12]}")
    for label, _ in manifest.points:
        h = manifest.health[label]
        status = "ok" if h.get("passed") else "FAILED"
        extra = f"  {h.get('message')}" if h.get("message") else ""
        print(f"  {label}: {status}{extra}")
    for path in manifest.outputs:
        print(f"  wrote {path}")


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    cfg, noted = _apply_flags(cfg, args)
    manifest = run_scenario(cfg, workers=args.workers, cli_overrides=noted)
    _print_manifest(manifest)
    return 0 if manifest.passed else 3


def _cmd_resume(args) -> int:
    config_path = args.config or os.path.join(os.path.dirname(args.checkpoint) or ".", "config.toml")
    cfg = load_config(config_path)
    cfg, noted = _apply_flags(cfg, args)
    manifest = resume(args.checkpoint, cfg, cli_overrides=noted)
    _print_manifest(manifest)
    return 0 if manifest.passed else 3


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    npoints = max(1, len(cfg.sweep_values))
    print(f"ok: scenario {cfg.scenario}, {npoints} point(s), dims {cfg.layout.dims}, "
          f"horizon {cfg.horizon_tau:g} tau, frame {cfg.frame}")
    if cfg.sweep_parameter:
        print(f"  sweep {cfg.sweep_parameter} over {list(cfg.sweep_values)}")
    print(f"  config hash {cfg.config_hash()}")
    return 0


def _cmd_params(args) -> int:
    defaults = SystemParams.default().asdict()
    print("parameter keys (config [params] table and sweep axes):")
    for key in PARAM_KEYS:
        if key == "delta_g_hz":
            note = "coupling split g01 - g02, applied symmetrically about the mean [Hz]"
            print(f"  {key:<16} {note}")
        elif key == "n_th":
            note = "sets both mechanical bath occupations"
            print(f"  {key:<16} {note}")
        elif key.endswith("_hz"):
            val = defaults[key[:-3]] / TWO_PI
            print(f"  {key:<16} default {val:.6g} Hz")
        else:
            print(f"  {key:<16} default {defaults[key]:.6g}")
    print("  (gamma_t_hz without gamma_phi_hz keeps gamma_phi = 2 gamma_t)")
    print("  (bath occupations act through the dissipators; the run starts from")
    print("   the triple ground state unless initial_phonons is set)")
    print(f"scenarios: {', '.join(sorted(SCENARIOS))}")
    print("top-level keys: scenario, out_dir, horizon_tau, frame, checkpoint_every_tau,")
    print("                initial_phonons")
    print("tables: [dims] transmon/mr1/mr2, [integrator] method/rtol/atol/dt_init/dt_max/sample_stride,")
    print("        [sweep] parameter/values, [params] any key above")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="transmech",
        description="Mechanical entanglement experiments on a driven transmon-resonator system.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate a scenario config")
    p_run.add_argument("config")
    _add_run_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_res = sub.add_parser("resume", help="continue from a checkpoint")
    p_res.add_argument("checkpoint")
    p_res.add_argument("--config", help="scenario file (default: config.toml beside the checkpoint)")
    _add_run_flags(p_res, with_workers=False)
    p_res.set_defaults(func=_cmd_resume)

    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_par = sub.add_parser("params", help="print the parameter schema")
    p_par.set_defaults(func=_cmd_params)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (HealthError, PositivityError, TraceError, HermiticityError) as exc:
        print(f"health failure: {exc}", file=sys.stderr)
        return 3
    except (CheckpointError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
