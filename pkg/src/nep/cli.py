"""Command line interface: ``nep rates | run | check | run-exp | generate``."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import diagnostics
from .files import game_to_dict, load_game, load_graph, make_topology, write_json
from .game import GameError
from .harness import ConfigError, ExperimentConfig, run_experiment
from .network import NetworkError
from .solvers import SolverConfig, SolverError, augmented_gradient_run, pppa_run
from .tuning import TuningError, tune


def _alpha(value: str) -> float | None:
    return None if value == "auto" else float(value)


def _setup(args):
    game = load_game(args.game)
    graph, weights = load_graph(args.graph)
    topo = make_topology(graph, weights, getattr(args, "mode", "doubly_stochastic"))
    return game, topo


def cmd_rates(args) -> int:
    game, topo = _setup(args)
    report = tune(game, topo, _alpha(args.alpha))
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.format_text())
    return 0


def cmd_run(args) -> int:
    game, topo = _setup(args)
    report = tune(game, topo, _alpha(args.alpha))
    config = SolverConfig(
        alpha=report.alpha,
        max_iters=args.iters,
        stop_tol=args.tol,
        mode=args.mode,
        force_alpha=args.force_alpha,
        record_time=not args.no_timing,
    )
    x0 = None
    if args.init == "random":
        x0 = np.random.default_rng(args.seed).standard_normal((game.N, game.n))
    try:
        if args.algo == "pppa":
            result = pppa_run(game, topo, config, x0=x0)
        else:
            gamma = report.gamma_theory if args.gamma == "auto" else float(args.gamma)
            if gamma is None:
                raise TuningError("no theoretical gamma for an inadmissible alpha; pass --gamma")
            result = augmented_gradient_run(game, topo, gamma, config, x0=x0)
    except SolverError as exc:
        if exc.trace is not None and args.out:
            exc.trace.to_csv(args.out)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.out:
        result.trace.to_csv(args.out)
    tr = result.trace
    print(
        f"{args.algo}: {result.iterations} iterations, converged={result.converged}, "
        f"dist_to_ne={tr.dist_to_ne[-1]:.3e}, alpha={report.alpha:.6g}"
    )
    return 0


def cmd_check(args) -> int:
    game, topo = _setup(args)
    alpha = tune(game, topo, _alpha(args.alpha)).alpha
    plain = diagnostics.probe_restricted_monotonicity(game, topo, alpha, args.samples, args.seed)
    phi = diagnostics.probe_phi_monotonicity(game, topo, alpha, args.samples, args.seed)
    ok = plain.passed and phi.passed
    if args.json:
        print(json.dumps({"alpha": alpha, "restricted": plain.to_dict(), "phi": phi.to_dict(), "passed": ok}, indent=2))
    else:
        print(f"alpha = {alpha:.6g}, rho = {plain.rho:.6e}")
        print(f"restricted monotonicity (NE lift): min margin {plain.min_margin:+.3e}  {'PASS' if plain.passed else 'FAIL'}")
        print(f"restricted monotonicity (random consensus, report only): min margin {plain.consensus_margins.min():+.3e}")
        print(f"Phi-weighted monotonicity: min margin {phi.min_margin:+.3e}  {'PASS' if phi.passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_run_exp(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if args.parallel:
        cfg.parallel = True
    bundle = run_experiment(cfg)
    for entry in bundle.manifest["runs"]:
        print(
            f"{entry['label']:<24} {entry['status']:<7} iterations={entry['iterations']}"
            f" to_tol={entry.get('iterations_to_tol')}"
        )
    print(f"bundle written to {bundle.output_dir}")
    return 1 if bundle.failures else 0


def cmd_generate(args) -> int:
    if args.game:
        write_json(args.out, game_to_dict(load_game(args.game)))
    else:
        graph, weights = load_graph(args.graph)
        data = graph.to_dict()
        if weights is not None:
            data["weights"] = weights.tolist()
        write_json(args.out, data)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nep", description="Distributed Nash equilibrium seeking by preconditioned proximal point")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, alpha_default="auto"):
        sp.add_argument("--game", required=True, help="game JSON file or connectivity:<N>:<seed>[:box]")
        sp.add_argument("--graph", required=True, help="graph JSON file or er:<N>:<p>:<seed>, path:<N>, ...")
        sp.add_argument("--alpha", default=alpha_default, help="step parameter or 'auto' (0.99 alpha_max)")
        sp.add_argument("--mode", default="doubly_stochastic", choices=["doubly_stochastic", "degree_variant"])

    sp = sub.add_parser("rates", help="print the tuning report")
    common(sp)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_rates)

    sp = sub.add_parser("run", help="run one solver and write its trace")
    common(sp)
    sp.add_argument("--algo", choices=["pppa", "agp"], default="pppa")
    sp.add_argument("--gamma", default="auto", help="agp step or 'auto' (rho / theta_Fa^2)")
    sp.add_argument("--iters", type=int, default=10_000)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--seed", type=int, default=0, help="seed for --init random")
    sp.add_argument("--init", choices=["zero", "random"], default="zero")
    sp.add_argument("--force-alpha", action="store_true", help="allow alpha >= alpha_max")
    sp.add_argument("--no-timing", action="store_true", help="write zeros in wall_time_us")
    sp.add_argument("--out", help="trace CSV path")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("check", help="probe the restricted monotonicity inequalities")
    common(sp)
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("run-exp", help="run an experiment config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--parallel", action="store_true")
    sp.set_defaults(func=cmd_run_exp)

    sp = sub.add_parser("generate", help="write a generated game or graph as JSON")
    grp = sp.add_mutually_exclusive_group(required=True)
    grp.add_argument("--game")
    grp.add_argument("--graph")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GameError, NetworkError, TuningError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
