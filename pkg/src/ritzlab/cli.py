"""Command line entry point: ``ritzlab <subcommand> --config FILE [options]``.

Exit codes: 0 success, 2 usage or configuration error, 3 a checked
criterion failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .complexity import (ClassSpec, class_constants, covering_bound, entropy_bound, gsp_bounds,
                         net_class_report)
from .exact import Problem, manufacture_rhs, regularity_report, solve_problem
from .harness import StudyConfig, read_config, run_study, study_rng
from .net import Activation
from .ritz import TrainConfig, TrainingDiverged, train, write_training_log
from .spectral import CosineSeries

log = logging.getLogger("ritzlab")

EXIT_OK, EXIT_CONFIG, EXIT_CRITERIA = 0, 2, 3


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _read(path) -> dict:
    try:
        return read_config(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def _study(args, data: dict, kind: str) -> int:
    data = dict(data)
    if data.setdefault("kind", kind) != kind:
        raise ConfigError(f"config describes a {data['kind']!r} study, expected {kind!r}")
    if args.seed is not None:
        data["master_seed"] = args.seed
    data["out"] = str(args.out)
    try:
        cfg = StudyConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    result = run_study(cfg, threads=args.threads)
    if not args.quiet:
        for name, fit in sorted(result.fits.items()):
            print(f"{name}: slope {fit.slope:.4f} [{fit.ci_low:.4f}, {fit.ci_high:.4f}]")
        for name, ok in sorted(result.flags.items()):
            print(f"{name}: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if result.ok else EXIT_CRITERIA


def cmd_approx_study(args, data):
    return _study(args, data, "approximation")


def cmd_rademacher(args, data):
    return _study(args, data, "complexity")


def _problem_from(data: dict) -> tuple[CosineSeries, CosineSeries | None, CosineSeries | None]:
    """``(f, V, u_star)`` from either a problem block or a chosen solution."""
    V = None if data.get("V") is None else CosineSeries.from_dict(data["V"])
    if "solution" in data:
        u = CosineSeries.from_dict(data["solution"])
        return manufacture_rhs(u, V), V, u
    if "problem" in data:
        prob = Problem.from_dict(data["problem"])
        return prob.f, prob.V, None
    raise ConfigError("config needs a 'problem' block or a 'solution' series")


_TRAIN_KEYS = {"m", "n", "budget", "tau", "activation", "optimizer", "lr", "iterations",
               "projection_every", "momentum", "schedule", "sample_tag", "K", "log_every",
               "approx_proxy"}


def cmd_train_drm(args, data):
    if data.get("kind") == "generalization":
        return _study(args, data, "generalization")
    f, V, u_star = _problem_from(data)
    unknown = set(data) - _TRAIN_KEYS - {"problem", "solution", "V"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    rng = study_rng(args.seed or 0, ["train-drm"], "seeds")
    init_seed, sample_seed = (int(v) for v in rng.integers(0, 2 ** 63, size=2))
    try:
        cfg = TrainConfig(f=f, V=V, init_seed=init_seed, sample_seed=sample_seed,
                          **{k: data[k] for k in _TRAIN_KEYS if k in data})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    try:
        result = train(cfg, u_star=u_star)
    except TrainingDiverged as exc:
        _write_json(args.out / "report.json", {"diverged": True, **exc.report})
        log.error("%s", exc)
        return EXIT_CRITERIA
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "net.json").write_text(result.net.to_json() + "\n")
    write_training_log(result, args.out / "training_log.csv")
    report = {"best_iteration": result.best_iteration, **result.diagnostics}
    _write_json(args.out / "report.json", report)
    if not args.quiet:
        for key in ("best_loss", "excess", "relative_h1", "gen_proxy"):
            if key in report:
                print(f"{key}: {report[key]:.6e}")
    return EXIT_OK


def cmd_solve_exact(args, data):
    try:
        problem = Problem.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid problem: {exc}") from exc
    u, residual = solve_problem(problem)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "solution.json").write_text(u.to_json() + "\n")
    _write_json(args.out / "report.json", {"kind": problem.kind, "residual": residual,
                                           "modes": len(u)})
    if not args.quiet:
        print(f"residual: {residual:.3e}")
    return EXIT_OK


def cmd_regularity(args, data):
    if "f" not in data:
        return _study(args, data, "regularity")
    try:
        f = CosineSeries.from_dict(data["f"])
        V = None if data.get("V") is None else CosineSeries.from_dict(data["V"])
        rep = regularity_report(f, float(data.get("s", 0.0)), V, data.get("K"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    _write_json(args.out / "regularity.json", rep.to_dict())
    if not args.quiet:
        print(f"ratio: {rep['ratio']:.6e}")
    return EXIT_OK if rep.ok else EXIT_CRITERIA


def _class_spec(data: dict) -> ClassSpec:
    act = data.get("activation", "softplus")
    m, d = int(data["m"]), int(data["d"])
    F, V_max = data.get("F"), data.get("V_max")
    if "B" in data:
        return ClassSpec.for_budget(float(data["B"]), m, d, F, V_max, act)
    activation = (Activation.relu() if act == "relu"
                  else Activation.softplus(float(data.get("tau", m ** 0.5))))
    return ClassSpec(float(data["C"]), float(data["Gamma"]), float(data["W"]), float(data["T"]),
                     activation, m, d, F, V_max)


def cmd_complexity_bounds(args, data):
    try:
        spec = _class_spec(data)
        n = int(data["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid class spec: {exc}") from exc
    out = {"network": net_class_report(spec, n).to_dict()}
    if spec.activation.tag == "softplus":
        consts = class_constants(spec, [i for i, key in (("1", None), ("2", "F"), ("3", "V_max"))
                                        if key is None or getattr(spec, key) is not None])
        out["constants"] = consts.to_dict()
        delta = float(data.get("delta", 1e-3))
        out["covering_log"] = {
            i: covering_bound(delta, consts[f"Lambda{i}"], spec).log_value
            for i in "123" if f"Lambda{i}" in consts.values and consts[f"Lambda{i}"] > 0}
        out["entropy"] = {
            i: entropy_bound(consts[f"M{i}"], consts[f"Lambda{i}"], spec, n).to_dict()
            for i in "123" if f"M{i}" in consts.values and consts[f"M{i}"] > 0
            and consts[f"Lambda{i}"] > 0}
        if spec.F is not None:
            out["loss_classes"] = gsp_bounds(spec, n).to_dict()
    _write_json(args.out / "bounds.json", out)
    if not args.quiet:
        for name, value in sorted(out["network"]["values"].items()):
            print(f"network {name}: {value:.6e}")
        if "loss_classes" in out:
            for name in ("poisson", "schrodinger"):
                if name in out["loss_classes"]["values"]:
                    print(f"{name}: {out['loss_classes']['values'][name]:.6e}")
    return EXIT_OK


COMMANDS = {
    "approx-study": (cmd_approx_study, "approximation-rate study of sampled networks"),
    "train-drm": (cmd_train_drm, "train a network on the Ritz loss, or run the generalization study"),
    "solve-exact": (cmd_solve_exact, "spectral solution of a problem file"),
    "regularity": (cmd_regularity, "Barron-norm regularity ratio for one source or a study"),
    "complexity-bounds": (cmd_complexity_bounds, "analytic Rademacher and covering bounds"),
    "rademacher": (cmd_rademacher, "Monte Carlo Rademacher estimates against the bounds"),
}


def _threads(value) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("threads must be positive")
    return n


def _seed(value) -> int:
    n = int(value)
    if not 0 <= n < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="TOML or JSON file")
    common.add_argument("--seed", type=_seed, default=None, help="master seed")
    common.add_argument("--out", "--out-dir", dest="out", type=Path, default=Path("ritzlab-out"),
                        help="output directory")
    common.add_argument("--threads", type=_threads, default=None,
                        help="worker processes (default: $RITZ_LAB_THREADS or 1)")
    common.add_argument("--quiet", action="store_true", help="only warnings and errors")
    parser = argparse.ArgumentParser(prog="ritzlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    if args.threads is None:
        try:
            args.threads = _threads(os.environ.get("RITZ_LAB_THREADS", "1"))
        except (ValueError, argparse.ArgumentTypeError):
            parser.print_usage(sys.stderr)
            print("ritzlab: RITZ_LAB_THREADS must be a positive integer", file=sys.stderr)
            return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        data = _read(args.config)
        if not isinstance(data, dict):
            raise ConfigError("config must be a table/object")
        return COMMANDS[args.command][0](args, data)
    except ConfigError as exc:
        print(f"ritzlab: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
