#!/usr/bin/env python3
"""Main entry point for the FisherFlow experiment runner.

Usage:
    python main.py validate-mobility CONFIG
    python main.py distance CONFIG [--output-dir DIR] [--verbose]
    python main.py evolve CONFIG [--output-dir DIR] [--threads N] [--verbose]
    python main.py cascade CONFIG [--output-dir DIR] [--threads N] [--verbose]
    python main.py compare-oracle CONFIG [--output-dir DIR] [--verbose]

Exit codes: 0 success, 1 condition or invariant failure, 2 config error,
3 solver non-convergence.
"""

import argparse
import math
import sys
import traceback
from datetime import datetime

from fisherflow.config.run_config import RunConfig
from fisherflow.config.settings import MAX_WORKERS
from fisherflow.core.cascade import default_schedule, g_limit_check, run_cascade
from fisherflow.core.jko import JkoOptions, JkoScheme, check_estimates, holder_check
from fisherflow.errors import (
    ConfigError, FisherFlowError, InnerDivergence, MobilityError, NewtonFailure, NoConvergence
)
from fisherflow.model.grid import Grid1D, initial_profile
from fisherflow.model.mobility import Mobility, validate
from fisherflow.solvers.oracle import compare, oracle_run
from fisherflow.solvers.transport import TransportOptions, continuity_residual, solve_distance
from fisherflow.storage.file_storage import RunStorage

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3

LIPSCHITZ_PATH = 'Thm-1/LSC'
CASCADE_PATH = 'Thm-2/cascade'
ORACLE_TOLERANCE = 0.05


def build_mobility(cfg: RunConfig) -> Mobility:
    try:
        return Mobility.from_params(cfg.mobility_family, cfg.mobility_kwargs)
    except KeyError as e:
        raise ConfigError(f"[mobility] missing parameter {e} for family '{cfg.mobility_family}'")


def build_initial(cfg: RunConfig, m: Mobility, profile_params=None):
    grid = Grid1D(cfg.length, cfg.cells)
    params = dict(cfg.profile_kwargs if profile_params is None else profile_params)
    params.pop('shift', None)
    field, displacement = initial_profile(grid, cfg.profile, params, m.ceiling, cfg.mass)
    if displacement > 0.0:
        print(f"[INFO] initial profile projected onto the constraint set (displacement {displacement:.3e})")
    return field


def transport_options(cfg: RunConfig, strict: bool, verbose: bool = False) -> TransportOptions:
    return TransportOptions(tol=cfg.tol, max_iter=cfg.max_iter, time_slices=cfg.time_slices,
                            strict=strict, verbose=verbose)


def jko_options(cfg: RunConfig, verbose: bool) -> JkoOptions:
    return JkoOptions(tol_outer=cfg.tol_outer, preconditioner=cfg.preconditioner,
                      transport=transport_options(cfg, strict=False),
                      deterministic=cfg.deterministic, s0=cfg.s0, verbose=verbose)


def _step_summary(traj):
    return [{'step': r.index, 'accepted': r.accepted, 'outer_iterations': r.outer_iterations,
             'transport_iterations': r.transport_iterations, 'halvings': r.halvings,
             'transport_converged': r.transport_converged} for r in traj.records]


def unconverged_steps(traj) -> list:
    return [r.index for r in traj.records if not r.transport_converged]


def _report_unconverged(label: str, steps: list) -> int:
    print(f"[ERROR] transport solver did not converge{label} at steps {', '.join(map(str, steps))}")
    return EXIT_SOLVER


def cmd_validate_mobility(cfg: RunConfig, args) -> int:
    m = build_mobility(cfg)
    report = validate(m, strict=False)
    print(f"Mobility: {m.describe()}")
    for line in report.summary_lines():
        print(f"  {line}")
    failed = report.failed_label()
    if failed:
        print(f"[ERROR] condition failed: {failed}")
        return EXIT_FAILED
    if not report.lsc:
        print(f"[INFO] derivative is not Lipschitz: cascade required ({CASCADE_PATH} path)")
    return EXIT_OK


def cmd_distance(cfg: RunConfig, args) -> int:
    m = build_mobility(cfg)
    u0 = build_initial(cfg, m)
    params = cfg.profile_kwargs
    if 'shift' in params and 'center' in params:
        moved = dict(params)
        moved['center'] = params['center'] + params['shift']
        u1 = build_initial(cfg, m, moved)
    else:
        u1 = u0.with_values(u0.values[::-1].copy())
    distance2, path = solve_distance(u0, u1, m, transport_options(cfg, strict=False, verbose=args.verbose))
    residual = continuity_residual(path)
    print(f"[INFO] W^2 = {distance2:.17g} (W = {math.sqrt(max(distance2, 0.0)):.12g}), "
          f"{path.stats.iterations} iterations, continuity residual {residual:.3e}")

    run_dir = RunStorage.run_dir(args.output_dir or cfg.output_dir, 'distance', cfg.config_hash())
    RunStorage.write_path_dump(run_dir / 'path.csv', path)
    RunStorage.write_manifest(run_dir / 'manifest.json', cfg.to_text(), cfg.config_hash(), 'distance', {
        'distance2': distance2,
        'transport': path.stats.as_dict(),
        'continuity_residual': residual,
    })
    if not path.stats.converged:
        print(f"[ERROR] transport solver did not converge after {path.stats.iterations} iterations")
        return EXIT_SOLVER
    return EXIT_OK


def _run_cascade(cfg: RunConfig, args, command: str) -> int:
    m = build_mobility(cfg)
    u0 = build_initial(cfg, m)
    schedule = list(cfg.deltas) if cfg.deltas else default_schedule(m, u0)
    workers = args.threads or MAX_WORKERS
    result = run_cascade(u0, m, schedule, cfg.tau, cfg.horizon, jko_options(cfg, args.verbose), workers)
    limit = g_limit_check(m, schedule)

    run_dir = RunStorage.run_dir(args.output_dir or cfg.output_dir, command, cfg.config_hash())
    RunStorage.write_cascade_csv(run_dir / 'cascade.csv', result.rows())
    for k, level in enumerate(result.levels):
        RunStorage.write_run_csv(run_dir / f'run_level{k}.csv', level.trajectory.rows(cfg.deterministic))

    failure = result.first_failure()
    RunStorage.write_manifest(run_dir / 'manifest.json', cfg.to_text(), cfg.config_hash(), command, {
        'theorem_path': CASCADE_PATH,
        'step_kind': 'descent step',
        'schedule': schedule,
        'near_inadmissible': result.near_inadmissible,
        'gaps': result.gaps,
        'g_limit_sup_gaps': limit.sup_gaps,
        'g_limit_decreasing': limit.decreasing,
        'checks': result.checks,
        'levels': [{'delta': lv.delta, 'estimates': lv.estimates.checks, 'values': lv.estimates.values,
                    'steps': _step_summary(lv.trajectory)} for lv in result.levels],
    })
    for lv in result.levels:
        stalled = unconverged_steps(lv.trajectory)
        if stalled:
            return _report_unconverged(f" (delta = {lv.delta:g})", stalled)
    if failure:
        print(f"[ERROR] invariant failed: {failure}")
        return EXIT_FAILED
    if not limit.decreasing:
        print("[ERROR] invariant failed: g_limit_decreasing")
        return EXIT_FAILED
    return EXIT_OK


def cmd_evolve(cfg: RunConfig, args) -> int:
    m = build_mobility(cfg)
    report = validate(m, strict=False)
    failed = report.failed_label()
    if failed:
        print(f"[ERROR] condition failed: {failed}")
        return EXIT_FAILED
    if not report.lsc:
        if not cfg.has_schedule:
            print("[ERROR] the mobility derivative is not Lipschitz; add a [cascade] deltas schedule "
                  "(or deltas = auto) to evolve through the regularized cascade")
            return EXIT_FAILED
        return _run_cascade(cfg, args, 'evolve')

    u0 = build_initial(cfg, m)
    traj = JkoScheme(m, cfg.tau, jko_options(cfg, args.verbose)).run(u0, cfg.horizon)
    estimates = check_estimates(traj)
    holder = holder_check(traj, opts=transport_options(cfg, strict=False), seed=cfg.seed)
    run_dir = RunStorage.run_dir(args.output_dir or cfg.output_dir, 'evolve', cfg.config_hash())
    RunStorage.write_run_csv(run_dir / 'run.csv', traj.rows(cfg.deterministic))
    RunStorage.write_manifest(run_dir / 'manifest.json', cfg.to_text(), cfg.config_hash(), 'evolve', {
        'theorem_path': LIPSCHITZ_PATH,
        'step_kind': 'descent step',
        'eps_mono': traj.eps_mono,
        'checks': estimates.checks,
        'values': estimates.values,
        'dissipation_ratios': estimates.dissipation_ratios,
        'holder': {'seed': cfg.seed, 'passed': holder.passed, 'worst_ratio': holder.worst_ratio,
                   'pairs': holder.pairs},
        'steps': _step_summary(traj),
    })
    stalled = unconverged_steps(traj)
    if stalled:
        return _report_unconverged('', stalled)
    failure = estimates.first_failure()
    if failure:
        print(f"[ERROR] invariant failed: {failure}")
        return EXIT_FAILED
    return EXIT_OK


def cmd_cascade(cfg: RunConfig, args) -> int:
    if not cfg.has_schedule:
        print("[INFO] no [cascade] deltas given, using the default schedule")
    return _run_cascade(cfg, args, 'cascade')


def cmd_compare_oracle(cfg: RunConfig, args) -> int:
    m = build_mobility(cfg)
    u0 = build_initial(cfg, m)
    oracle_tau = cfg.oracle_tau or cfg.tau / 10.0
    traj = JkoScheme(m, cfg.tau, jko_options(cfg, args.verbose)).run(u0, cfg.horizon)
    reference = oracle_run(u0, oracle_tau, cfg.horizon, m, verbose=args.verbose)
    error = compare(traj, reference, cfg.horizon)
    print(f"[INFO] relative L2 difference at T = {cfg.horizon:g}: {error:.6e}")

    run_dir = RunStorage.run_dir(args.output_dir or cfg.output_dir, 'compare-oracle', cfg.config_hash())
    RunStorage.write_run_csv(run_dir / 'run.csv', traj.rows(cfg.deterministic), source='jko')
    RunStorage.write_run_csv(run_dir / 'oracle.csv', reference.rows(), source='oracle')
    RunStorage.write_manifest(run_dir / 'manifest.json', cfg.to_text(), cfg.config_hash(), 'compare-oracle', {
        'theorem_path': LIPSCHITZ_PATH,
        'oracle_tau': oracle_tau,
        'relative_l2_error': error,
        'tolerance': ORACLE_TOLERANCE,
        'steps': _step_summary(traj),
    })
    stalled = unconverged_steps(traj)
    if stalled:
        return _report_unconverged('', stalled)
    if error > ORACLE_TOLERANCE:
        print(f"[ERROR] invariant failed: oracle agreement ({error:.3e} > {ORACLE_TOLERANCE})")
        return EXIT_FAILED
    return EXIT_OK


COMMANDS = {
    'validate-mobility': cmd_validate_mobility,
    'distance': cmd_distance,
    'evolve': cmd_evolve,
    'cascade': cmd_cascade,
    'compare-oracle': cmd_compare_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='fisherflow', description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument('config', help='run configuration file (.ini)')
        cmd.add_argument('--output-dir', default=None, help='overrides [run] output_dir')
        cmd.add_argument('--threads', type=int, default=None, help='worker threads for cascade levels')
        cmd.add_argument('--verbose', action='store_true')
    return parser


def main(argv=None) -> int:
    """Parse arguments, run one subcommand and map errors to exit codes."""
    args = build_parser().parse_args(argv)
    start_time = datetime.now()
    print(f"====== FisherFlow {args.command} Started: {start_time} ======")

    try:
        cfg = RunConfig.load(args.config)
    except ConfigError as e:
        print(f"[ERROR] {e}")
        return EXIT_CONFIG

    try:
        code = COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"[ERROR] {e}")
        return EXIT_CONFIG
    except (NoConvergence, InnerDivergence, NewtonFailure) as e:
        print(f"[ERROR] solver failure: {e}")
        return EXIT_SOLVER
    except MobilityError as e:
        print(f"[ERROR] condition failed: {type(e).__name__}: {e}")
        return EXIT_FAILED
    except FisherFlowError as e:
        print(f"[ERROR] {type(e).__name__}: {e}")
        return EXIT_FAILED
    except Exception as e:
        print(f"[ERROR] FisherFlow failed with exception: {e}")
        print(traceback.format_exc())
        return EXIT_FAILED

    end_time = datetime.now()
    print(f"====== FisherFlow {args.command} Completed: {end_time} ======")
    print(f"====== Total Duration: {end_time - start_time} ======")
    return code


if __name__ == "__main__":
    sys.exit(main())
