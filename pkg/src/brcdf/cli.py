"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
import argparse
from dataclasses import replace
import json
from pathlib import Path
import sys

from .errors import ConfigError, GraphError, NumericalError
from .experiment import (
    PRESETS,
    build_setup,
    design_from_state,
    format_artifact,
    load_config,
    preset,
    read_state,
    run_scenario,
    state_at_k0,
    write_outputs,
    write_state,
)
from .filtering import gamma_bound

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _simulate(args):
    cfg = load_config(args.config)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    out = run_scenario(cfg)
    path = write_outputs(out, cfg.out_dir)
    if args.state:
        write_state(state_at_k0(cfg), args.state)
    print(path)


def _reproduce(args):
    cfg = preset(args.figure)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    out = run_scenario(cfg)
    print(write_outputs(out, args.out))


def _design_attack(args):
    design = design_from_state(read_state(args.state), args.mode)
    text = format_artifact(design)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _gamma_bound(args):
    cfg = load_config(args.config)
    setup = build_setup(cfg)
    m = setup.model.m
    rows = {}
    for l in cfg.l:
        prof = gamma_bound(setup.graph, setup.P_inf, setup.model.H, setup.model.R, l / m)
        rows[str(l)] = {"gamma_star": prof.gamma_star, "lambda_min_I": prof.lambda_min_I,
                        "lambda_max_II": prof.lambda_max_II, "p_e": prof.p_e}
    print(json.dumps({"gamma": setup.gamma, "bounds": rows}, sort_keys=True, indent=2))


def _export_graph(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = preset("fig2")
        if args.seed is not None:
            cfg = replace(cfg, master_seed=args.seed)
    setup = build_setup(cfg)
    Path(args.dot).write_text(setup.graph.to_dot(), encoding="utf-8")


def build_parser():
    p = argparse.ArgumentParser(prog="brcdf", description="Partial-sharing consensus filter under Byzantine attacks.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the experiment described by a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="output directory (overrides output.dir)")
    s.add_argument("--state", help="also write the attacker state at k0 to this path")
    s.set_defaults(func=_simulate)

    s = sub.add_parser("reproduce", help="run a figure preset")
    s.add_argument("figure", choices=PRESETS)
    s.add_argument("--out", default="out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=_reproduce)

    s = sub.add_parser("design-attack", help="design Sigma and/or Byzantine patterns from a saved state")
    s.add_argument("--state", required=True)
    s.add_argument("--mode", choices=("cov", "select", "both"), default="both")
    s.add_argument("--out")
    s.set_defaults(func=_design_attack)

    s = sub.add_parser("gamma-bound", help="print gamma* for every l of a config")
    s.add_argument("--config", required=True)
    s.set_defaults(func=_gamma_bound)

    s = sub.add_parser("export-graph", help="write the network graph in DOT format")
    s.add_argument("--dot", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=_export_graph)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, GraphError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
