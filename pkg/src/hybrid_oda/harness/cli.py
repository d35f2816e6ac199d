"""Command line entry point: ``hybrid-oda <command> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 non-finite
parameters during identification, 1 other I/O failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .. import hybrid
from .. import simulate as sim
from ..errors import ConfigError, ContractViolation, DivergenceError, InvalidInput
from ..hybrid import HybridIdentifier, IdentifierConfig
from . import experiment as ex

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

# identifier fields exposed as --flags (schedules and theta0 go through --config)
FLAG_FIELDS = {
    "lambda_max": float, "lambda_min": float, "gamma": float,
    "eps_n": float, "eps_s": float, "delta": float, "tol_conv": float,
    "K_max": int, "max_iters_per_level": int, "update_order": str,
    "slow_every": int, "slow_offset": int, "conv_window": int,
}


def _add_identifier_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("identifier overrides")
    for name, typ in FLAG_FIELDS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    g.add_argument("--no-normalize-gain", dest="normalize_gain", action="store_false", default=None)


def _overrides(args) -> dict:
    out = {k: getattr(args, k) for k in FLAG_FIELDS if getattr(args, k) is not None}
    if args.normalize_gain is not None:
        out["normalize_gain"] = args.normalize_gain
    return out


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path}: {exc}") from exc


def _system(args) -> sim.SwitchedSystemSpec:
    if getattr(args, "system", None):
        return sim.load_spec(args.system)
    return sim.preset(args.preset)


def _trajectory(args) -> sim.Trajectory:
    if getattr(args, "csv", None):
        return sim.Trajectory.from_csv(args.csv)
    spec = _system(args)
    N = args.N if args.N is not None else ex.PRESET_N.get(args.preset, 150)
    return sim.generate_trajectory(spec, N, args.seed)


def cmd_simulate(args) -> int:
    spec = _system(args)
    N = args.N if args.N is not None else ex.PRESET_N.get(args.preset, 150)
    traj = sim.generate_trajectory(spec, N, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out)
    print(f"wrote {len(traj)} samples to {out}")
    return EXIT_OK


def cmd_identify(args) -> int:
    traj = _trajectory(args)
    base = {}
    if args.preset and not args.system:
        base = ex.preset_identifier(args.preset, args.seed).to_dict()
    if args.config:
        base.update(_read_json(args.config))
    base.update(_overrides(args))
    base["seed"] = args.seed
    base.setdefault("max_iters_per_level", len(traj))
    cfg = IdentifierConfig.from_dict(base)
    ident = HybridIdentifier(cfg, traj.psi.shape[1], traj.phi.shape[1])
    model = ex.identify(ident, hybrid.ReplaySource(traj))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ex.write_samples(out / ex.SAMPLES_FILE, ident.records, ident.m, ident.d)
    ident.save(out / ex.CHECKPOINT_FILE)
    (out / ex.MODEL_FILE).write_text(json.dumps(model.to_dict(), indent=2))
    print(f"s_hat={model.s_hat} K={model.K}")
    return EXIT_OK


def cmd_run(args) -> int:
    data = _read_json(args.config) if args.config else {}
    if args.preset:
        data["system"] = args.preset
    elif args.system:
        data["system"] = sim.load_spec(args.system).to_dict()
    data["seed"] = args.seed
    data["output_dir"] = args.out
    if args.repeats is not None:
        data["repeats"] = args.repeats
    if args.N is not None:
        data["N"] = args.N
    if args.no_plots:
        data["plots"] = False
    overrides = _overrides(args)
    if overrides:
        ident = dict(data.get("identifier") or {})
        ident.update(overrides)
        data["identifier"] = ident
    if isinstance(data.get("system"), dict) and isinstance(data.get("identifier"), dict):
        data["identifier"] = IdentifierConfig.from_dict(data["identifier"])
    cfg = ex.ExperimentConfig.from_dict(data)
    reports, summary = ex.run_experiment(cfg, workers=args.workers)
    for r in reports:
        errs = ", ".join(f"{e:.3f}" for e in r.param_errors)
        print(f"seed={r.seed} s_hat={r.s_hat} K={r.K_final} mis={r.misclassification:.3f} "
              f"err=[{errs}] time={r.seconds:.2f}s")
    if len(reports) > 1:
        print(json.dumps(summary))
    return EXIT_OK


def cmd_pe_check(args) -> int:
    traj = _trajectory(args)
    a_min, b_max = sim.pe_check(traj, args.window)
    print(json.dumps({"window": args.window, "alpha_min": a_min, "beta_max": b_max,
                      "persistently_exciting": a_min > 0}))
    return EXIT_OK


def cmd_replay(args) -> int:
    traj = sim.Trajectory.from_csv(args.csv)
    ident, model = ex.resume(args.checkpoint, traj, Path(args.out), args.levels)
    state = f"lambda={ident.lam:.4f} K={ident.K} s_hat={ident.s_hat}"
    print(state if model is None else f"{state} (finalized)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybrid-oda", description="Identify switched affine systems from data.")
    sub = parser.add_subparsers(dest="command", required=True)

    def source_args(p, need_seed=True):
        src = p.add_mutually_exclusive_group()
        src.add_argument("--preset", choices=sorted(sim.PRESETS), default=None)
        src.add_argument("--system", help="system JSON file")
        p.add_argument("--N", type=int, default=None, help="number of samples")
        p.add_argument("--seed", type=int, required=need_seed, default=0)

    p = sub.add_parser("simulate", help="write a trajectory CSV")
    source_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("identify", help="identify a model from a CSV or a preset stream")
    source_args(p, need_seed=False)
    p.add_argument("--csv", help="trajectory CSV (t, phi_*, psi_*)")
    p.add_argument("--config", help="identifier JSON overriding defaults")
    p.add_argument("--out", required=True)
    _add_identifier_flags(p)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("run", help="full experiment with report and plots")
    source_args(p)
    p.add_argument("--config", help="experiment JSON overriding defaults")
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--out", required=True)
    _add_identifier_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("pe-check", help="windowed Gram eigenvalue bounds")
    source_args(p, need_seed=False)
    p.add_argument("--csv")
    p.add_argument("--window", type=int, required=True)
    p.set_defaults(func=cmd_pe_check)

    p = sub.add_parser("replay", help="resume identification from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--csv", required=True, help="trajectory the checkpoint was fed")
    p.add_argument("--levels", type=int, default=None, help="levels to run (default: all remaining)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "preset", None) is None and getattr(args, "system", None) is None \
            and args.command in ("simulate", "run"):
        args.preset = "exp1"
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ContractViolation, InvalidInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
