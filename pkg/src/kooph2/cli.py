"""Command-line pipeline around the experiment stages.

Subcommands mirror the pipeline: ``collect``, ``fit``, ``polytope``,
``synthesize {robust|nominal|lqr}``, ``evaluate``, ``simulate``,
``report`` and ``reproduce {duffing|kdv}``.  Stages communicate through
files in the workspace directory given by ``--out``.

Configuration comes from a JSON file (``--config``); any field can be
overridden on the command line with ``--set field=value`` where the value
is parsed as JSON (falling back to a bare string).

Exit codes: 0 success, 2 synthesis infeasible, 3 configuration error,
1 other failures.
"""

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import dynamics, edmd, polytope as poly_mod, synthesis
from .experiments import (
    ConfigError,
    ExperimentConfig,
    StageError,
    build_dictionary,
    build_plant,
    duffing_config,
    kdv_config,
    load_dataset,
    load_gain,
    run_experiment,
    save_gain,
    _stage_collect,
    _stage_fit,
    _stage_polytope,
    _stage_report,
    _stage_simulate,
    _stage_synthesize,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INFEASIBLE = 2
EXIT_CONFIG = 3


class _Parser(argparse.ArgumentParser):
    # bad command lines are configuration errors (exit code 3)
    def error(self, message):
        raise ConfigError(message)


def _parse_set(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects field=value, got '{pair}'")
        key, raw = pair.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _load_config(args):
    overrides = _parse_set(getattr(args, "set", None))
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_json(args.config)
    else:
        preset = overrides.pop("preset", getattr(args, "preset", None))
        if preset == "duffing":
            cfg = duffing_config()
        elif preset == "kdv":
            cfg = kdv_config()
        else:
            raise ConfigError("need --config FILE or a preset")
    data = {**cfg.__dict__, **overrides}
    return ExperimentConfig.from_dict(data).validate()


def _load_predictors(out_dir):
    paths = sorted(glob.glob(os.path.join(out_dir, "predictors", "predictor_*.json")))
    if not paths:
        raise FileNotFoundError(f"no predictors under {out_dir}; run 'fit' first")
    return [edmd.load_predictor(p) for p in paths]


def _load_datasets(out_dir):
    paths = sorted(glob.glob(os.path.join(out_dir, "datasets", "dataset_*.npz")))
    if not paths:
        raise FileNotFoundError(f"no datasets under {out_dir}; run 'collect' first")
    return [load_dataset(p) for p in paths]


def _gain_path(out_dir, name):
    return os.path.join(out_dir, f"gain_{name}.json")


def cmd_collect(args):
    cfg = _load_config(args)
    datasets = _stage_collect(cfg, args.out)
    print(f"collected {len(datasets)} datasets "
          f"({datasets[0].num_samples} triples each) -> {args.out}/datasets")
    return EXIT_OK


def cmd_fit(args):
    cfg = _load_config(args)
    datasets = _load_datasets(args.out)
    predictors = _stage_fit(cfg, datasets, build_dictionary(cfg), args.out)
    for i, p in enumerate(predictors):
        print(f"predictor {i}: N={p.n_features} p={p.n_inputs} residual={p.residual:.6g}")
    return EXIT_OK


def cmd_polytope(args):
    cfg = _load_config(args)
    predictors = _load_predictors(args.out)
    poly = _stage_polytope(cfg, predictors, args.out)
    print(f"polytope: {poly.num_vertices} vertices, varied entries {poly.varied_entries}")
    return EXIT_OK


def cmd_synthesize(args):
    cfg = _load_config(args)
    predictors = _load_predictors(args.out)
    plant_weights = synthesis.GeneralizedPlant(C_z=cfg.C_z, D_zu=cfg.D_zu)
    opts = cfg.synthesis_options()
    if args.method == "robust":
        poly = poly_mod.load_polytope(os.path.join(args.out, "polytope.json"))
        res = synthesis.robust_synthesis(poly, plant_weights, opts)
        synthesis.save_synthesis(res, os.path.join(args.out, "synthesis_robust.json"))
        save_gain(res.S, _gain_path(args.out, "robust"), "robust", {"J_syn": res.J_syn})
        print(f"robust gain: J_syn={res.J_syn:.6g}")
    elif args.method == "nominal":
        res = synthesis.nominal_synthesis(predictors[0], plant_weights, opts)
        synthesis.save_synthesis(res, os.path.join(args.out, "synthesis_nominal.json"))
        save_gain(res.S, _gain_path(args.out, "nominal"), "nominal", {"J_syn": res.J_syn})
        print(f"nominal gain: J={res.J_syn:.6g}")
    else:
        S = synthesis.lqr_gain(predictors[0].A, predictors[0].B, cfg.Q, cfg.R)
        save_gain(S, _gain_path(args.out, "lqr"), "lqr")
        print("lqr gain computed")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = _load_config(args)
    predictors = _load_predictors(args.out)
    S, _ = load_gain(_gain_path(args.out, args.gain))
    plant_weights = synthesis.GeneralizedPlant(C_z=cfg.C_z, D_zu=cfg.D_zu)
    model = predictors[args.model]
    cert = synthesis.evaluate_h2_bound(model, plant_weights, S, cfg.synthesis_options())
    record = {"gain": args.gain, "model": args.model, "J": cert.J}
    path = os.path.join(args.out, f"evaluate_{args.gain}_model{args.model}.json")
    with open(path, "w") as f:
        json.dump(record, f, indent=1)
    print(f"J(model {args.model}, {args.gain} gain) = {cert.J:.6g}")
    return EXIT_OK


def cmd_simulate(args):
    cfg = _load_config(args)
    S, _ = load_gain(_gain_path(args.out, args.gain))
    gains = {args.gain: {"S": S, "result": None}}
    runs = _stage_simulate(cfg, gains, build_dictionary(cfg), args.out)
    n_div = sum(1 for _, t, _ in runs[args.gain] if t.diverged)
    print(f"simulated {len(runs[args.gain])} runs of '{args.gain}' "
          f"({n_div} diverged) -> {args.out}/trajectories")
    return EXIT_OK


def cmd_report(args):
    cfg = _load_config(args)
    datasets = _load_datasets(args.out)
    predictors = _load_predictors(args.out)
    poly = poly_mod.load_polytope(os.path.join(args.out, "polytope.json"))
    dict_obj = build_dictionary(cfg)
    gains = {}
    for name in ("robust", "nominal", "lqr"):
        path = _gain_path(args.out, name)
        if os.path.exists(path):
            S, record = load_gain(path)
            res = None
            spath = os.path.join(args.out, f"synthesis_{name}.json")
            if os.path.exists(spath):
                res = synthesis.load_synthesis(spath)
            gains[name] = {"S": S, "result": res}
    if "robust" not in gains or "nominal" not in gains:
        raise FileNotFoundError("report needs at least the robust and nominal gains")
    runs = _stage_simulate(cfg, gains, dict_obj, args.out)
    _stage_report(cfg, datasets, predictors, poly, gains, runs, dict_obj, args.out)
    with open(os.path.join(args.out, "summary.txt")) as f:
        print(f.read())
    return EXIT_OK


def cmd_reproduce(args):
    cfg = duffing_config() if args.benchmark == "duffing" else kdv_config()
    overrides = _parse_set(args.set)
    data = {**cfg.__dict__, **overrides}
    cfg = ExperimentConfig.from_dict(data).validate()
    report = run_experiment(cfg, args.out)
    with open(os.path.join(args.out, "summary.txt")) as f:
        print(f.read())
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="kooph2", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--out", required=True, help="workspace directory")
        if needs_config:
            p.add_argument("--config", help="JSON config file")
            p.add_argument("--preset", choices=["duffing", "kdv"],
                           help="built-in config when no --config is given")
        p.add_argument("--set", action="append", metavar="FIELD=VALUE",
                       help="override a config field (value parsed as JSON)")

    common(sub.add_parser("collect", help="collect datasets"))
    common(sub.add_parser("fit", help="fit one predictor per dataset"))
    common(sub.add_parser("polytope", help="build the vertex model set"))

    p = sub.add_parser("synthesize", help="design a feedback gain")
    p.add_argument("method", choices=["robust", "nominal", "lqr"])
    common(p)

    p = sub.add_parser("evaluate", help="certified bound of a gain on a model")
    p.add_argument("--gain", default="robust", choices=["robust", "nominal", "lqr"])
    p.add_argument("--model", type=int, default=0, help="predictor index")
    common(p)

    p = sub.add_parser("simulate", help="closed-loop runs on the true plant")
    p.add_argument("--gain", default="robust", choices=["robust", "nominal", "lqr"])
    common(p)

    common(sub.add_parser("report", help="recompute metrics and emit the report"))

    p = sub.add_parser("reproduce", help="run a full benchmark end to end")
    p.add_argument("benchmark", choices=["duffing", "kdv"])
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="FIELD=VALUE")

    return parser


_COMMANDS = {
    "collect": cmd_collect,
    "fit": cmd_fit,
    "polytope": cmd_polytope,
    "synthesize": cmd_synthesize,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "report": cmd_report,
    "reproduce": cmd_reproduce,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except synthesis.SynthesisInfeasibleError as err:
        print(f"synthesis infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except StageError as err:
        if isinstance(err.cause, synthesis.SynthesisInfeasibleError):
            print(f"synthesis infeasible: {err}", file=sys.stderr)
            return EXIT_INFEASIBLE
        if isinstance(err.cause, ConfigError):
            print(f"config error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as err:  # keep the CLI contract: fail with a message
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
