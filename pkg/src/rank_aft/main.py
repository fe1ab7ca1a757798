"""Main entry point for the rank AFT toolkit"""

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .config import ToolkitConfig
from .data_model import CsvSchema, Dataset, load_csv, load_csv_groups, write_pic_csv
from .estimators import FitConfig, WeightSpec, residual_brackets
from .exceptions import USAGE_ERRORS, RankAftError, SchemaError, ValidationError
from .gehan_ranks import two_sample_test
from .manifest import RunManifest, to_json_text, write_csv, write_json
from .simgen import load_study_plan, relative_efficiency, run_mc_study
from .variance import ResampleConfig, fit_with_covariance, wald_table
from .workers import resolve_threads

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def setup_logging(config: ToolkitConfig, verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else getattr(logging, str(config.get_logging_level()).upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(config.get_logging_file()),
            logging.StreamHandler(sys.stderr)
        ],
        force=True,
    )


def _status(message: str) -> None:
    print(message, file=sys.stderr)


def _schema_from_args(args, layout: Optional[str] = None, require_covariates: bool = True) -> CsvSchema:
    covariates = tuple(c.strip() for c in args.covariates.split(",") if c.strip()) if args.covariates else ()
    return CsvSchema(
        layout=layout or args.layout,
        cluster=args.cluster_column,
        covariates=covariates,
        require_covariates=require_covariates,
    )


def _fit_config(args, config: ToolkitConfig) -> FitConfig:
    weight = WeightSpec.parse(args.weight or config.get_weight_kind(),
                              args.cluster_weight or config.get_cluster_weight())
    return FitConfig(
        weight=weight,
        big_m=args.big_m if args.big_m is not None else config.get_big_m(),
        max_outer_iter=args.max_outer_iter or config.get_max_outer_iter(),
        outer_tol=args.outer_tol or config.get_outer_tol(),
        seed=_seed(args, config),
        solver_tol=args.solver_tol or config.get_solver_tol(),
        solver_max_iter=config.get_solver_max_iter(),
        block_size=config.get_block_size(),
    )


def _seed(args, config: ToolkitConfig) -> int:
    return args.seed if args.seed is not None else config.get_seed()


def _emit(report: Dict, output: Optional[str], manifest: RunManifest) -> None:
    """Write the JSON report to ``output`` with its manifest, or to stdout"""
    if output:
        write_json(report, output)
        manifest.add_output(output)
        manifest.write(output)
        _status(f"💾 Report written to {output}")
    else:
        sys.stdout.write(to_json_text(report))


def cmd_fit(args, config: ToolkitConfig) -> int:
    started = time.perf_counter()
    schema = _schema_from_args(args)
    data = load_csv(args.input, schema)
    cfg = _fit_config(args, config)
    level = args.ci_level or config.get_ci_level()
    threads = resolve_threads(args.threads, config)
    rcfg = ResampleConfig(R=args.resamples or config.get_resamples(), seed=cfg.seed, k_scale=config.get_k_scale())

    _status(f"📈 Fitting {cfg.weight.kind.value} estimator on {data.n} subjects in {data.n_clusters} clusters")
    result, estimate = fit_with_covariance(data, cfg, rcfg, threads)

    names = list(schema.covariates) or [f"x{j + 1}" for j in range(data.p)]
    if result.covariance is not None:
        coefficients = wald_table(result, level, names)
    else:
        coefficients = [{'name': name, 'estimate': float(b), 'std_error': None}
                        for name, b in zip(names, result.beta)]

    report = {
        'command': "fit",
        'weight': result.weight.to_dict(),
        'n': data.n,
        'clusters': data.n_clusters,
        'p': data.p,
        'beta': result.beta,
        'covariance': result.covariance,
        'ci_level': level,
        'coefficients': coefficients,
        'censoring': data.summary(),
        'diagnostics': {
            'converged': result.converged,
            'outer_iterations': result.outer_iterations,
            'score_norm': result.score_norm,
            'objective': result.objective,
            'pairs_used': result.n_pairs_used,
            'subgradient_gap': result.solver.subgradient_gap if result.solver else None,
            'solver_iterations': result.solver.iterations if result.solver else None,
            'solver_message': result.solver.message if result.solver else "",
            'last_iterates': [list(b) for b in result.last_iterates],
            'resamples': rcfg.R,
            'slope_singular': estimate.condition_flag,
            'covariance_message': estimate.message,
        },
    }

    manifest = RunManifest.for_inputs("fit", vars_for_manifest(args), config.resolved(), cfg.seed, [args.input])
    if args.residuals:
        write_csv(residual_brackets(data, result.beta), args.residuals)
        manifest.add_output(args.residuals)
        _status(f"💾 Residual brackets written to {args.residuals}")
    manifest.wall_time = time.perf_counter() - started
    _emit(report, args.output, manifest)

    if not result.converged:
        _status("⚠️  Fit did not fully converge; see diagnostics")
    else:
        _status("✅ Fit completed")
    return EXIT_OK


def _load_test_groups(args) -> List[Dataset]:
    schema = _schema_from_args(args, require_covariates=False)
    if args.group_column:
        if len(args.inputs) != 1:
            raise SchemaError("--group-column takes exactly one input file")
        groups = load_csv_groups(args.inputs[0], schema, args.group_column)
        if len(groups) != 2:
            raise ValidationError(f"group column must take exactly two values, found {len(groups)}")
        return list(groups.values())
    if len(args.inputs) != 2:
        raise SchemaError("two input files are required without --group-column")
    return [load_csv(path, schema) for path in args.inputs]


def cmd_test(args, config: ToolkitConfig) -> int:
    started = time.perf_counter()
    group1, group2 = _load_test_groups(args)
    _status(f"🧪 Gehan two-sample test: {group1.n} vs {group2.n} subjects")
    result = two_sample_test(group1, group2)
    report = dict(command="test", **result.to_dict())
    manifest = RunManifest.for_inputs("test", vars_for_manifest(args), config.resolved(),
                                      _seed(args, config), args.inputs)
    manifest.wall_time = time.perf_counter() - started
    _emit(report, args.output, manifest)
    return EXIT_OK


def cmd_convert(args, config: ToolkitConfig) -> int:
    started = time.perf_counter()
    data = load_csv(args.input, _schema_from_args(args, layout="dc"))
    write_pic_csv(data, args.output)
    manifest = RunManifest.for_inputs("convert", vars_for_manifest(args), config.resolved(),
                                      _seed(args, config), [args.input])
    manifest.add_output(args.output)
    manifest.wall_time = time.perf_counter() - started
    manifest.write(args.output)
    _status(f"🔁 Converted {data.n} rows to {args.output}")
    return EXIT_OK


def cmd_simulate(args, config: ToolkitConfig) -> int:
    started = time.perf_counter()
    plan = load_study_plan(args.scenario)
    scenario = plan.scenario
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    replicates = args.replicates or plan.replicates
    resamples = args.resamples or plan.resamples
    threads = resolve_threads(args.threads, config)

    _status(f"🎲 Simulating {scenario.kind.value}: {replicates} replicates of n={scenario.n}, "
            f"{len(plan.fits)} fit(s), {threads} thread(s)")
    report = run_mc_study(scenario, plan.fits, replicates, resamples=resamples, level=plan.level,
                          threads=threads, keep_raw=bool(args.raw))

    body = report.to_dict()
    reference = plan.fits[0].label
    body['relative_efficiency'] = {
        option.label: relative_efficiency(report, option.label, reference) for option in plan.fits[1:]
    }

    prefix = Path(args.output)
    table_path = prefix.with_name(prefix.name + ".csv")
    json_path = prefix.with_name(prefix.name + ".json")
    write_csv(report.to_frame(), table_path)
    write_json(body, json_path)

    manifest = RunManifest.for_inputs("simulate", vars_for_manifest(args), config.resolved(),
                                      scenario.seed, [args.scenario])
    manifest.add_output(table_path)
    manifest.add_output(json_path)
    if args.raw:
        write_csv(report.raw_estimates, args.raw)
        manifest.add_output(args.raw)
    manifest.wall_time = time.perf_counter() - started
    manifest.write(json_path)

    _status(f"📊 {report.replicates} replicates, {report.failures} failures")
    _status(f"💾 Tables written to {table_path} and {json_path}")
    return EXIT_OK


def vars_for_manifest(args) -> Dict:
    return {k: v for k, v in vars(args).items() if k != 'handler'}


def _add_input_flags(parser: argparse.ArgumentParser, layout: bool = True) -> None:
    if layout:
        parser.add_argument('--layout', choices=["pic", "dc"], default="pic",
                            help='Input column layout (default: pic)')
    parser.add_argument('--covariates', help='Comma-separated covariate columns (default: x1..xp)')
    parser.add_argument('--cluster-column', default="cluster", help='Cluster id column (default: cluster)')


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--seed', type=int, help='Random seed')
    parser.add_argument('--threads', type=int, help='Worker threads (overrides RANK_AFT_THREADS)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Rank-based AFT regression for interval- and doubly-censored data')
    parser.add_argument('-c', '--config', help='Configuration file (default: config.yaml)')
    parser.add_argument('-v', '--verbose', action='store_true', help='Verbose logging')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', required=True)

    fit_parser = commands.add_parser('fit', help='Fit a Gehan or log-rank AFT model')
    fit_parser.add_argument('input', help='Input CSV')
    _add_input_flags(fit_parser)
    _add_common_flags(fit_parser)
    fit_parser.add_argument('--weight', choices=["gehan", "logrank"], help='Rank weight')
    fit_parser.add_argument('--cluster-weight', help='none | inverse | power:ALPHA')
    fit_parser.add_argument('--big-m', type=float, help='Override the adaptive big-M constant')
    fit_parser.add_argument('--outer-tol', type=float, help='Log-rank iteration tolerance')
    fit_parser.add_argument('--max-outer-iter', type=int, help='Log-rank iteration cap')
    fit_parser.add_argument('--solver-tol', type=float, help='LAD subgradient tolerance')
    fit_parser.add_argument('--resamples', type=int, help='Resamples R for the covariance')
    fit_parser.add_argument('--ci-level', type=float, help='Confidence level (default: 0.95)')
    fit_parser.add_argument('--residuals', help='Write residual brackets at the estimate to this CSV')
    fit_parser.add_argument('-o', '--output', help='JSON report path (default: stdout)')
    fit_parser.set_defaults(handler=cmd_fit)

    test_parser = commands.add_parser('test', help='Two-sample Gehan test')
    test_parser.add_argument('inputs', nargs='+', help='One CSV with --group-column, or two CSVs')
    test_parser.add_argument('--group-column', help='Column splitting one file into two groups')
    _add_input_flags(test_parser)
    _add_common_flags(test_parser)
    test_parser.add_argument('-o', '--output', help='JSON report path (default: stdout)')
    test_parser.set_defaults(handler=cmd_test)

    convert_parser = commands.add_parser('convert', help='Rewrite a doubly-censored CSV in the PIC layout')
    convert_parser.add_argument('input', help='DC CSV with time, d1, d2, d3 columns')
    convert_parser.add_argument('output', help='PIC CSV to write')
    _add_input_flags(convert_parser, layout=False)
    _add_common_flags(convert_parser)
    convert_parser.set_defaults(handler=cmd_convert)

    simulate_parser = commands.add_parser('simulate', help='Run a Monte Carlo study from a scenario file')
    simulate_parser.add_argument('scenario', help='Scenario YAML file')
    simulate_parser.add_argument('-o', '--output', default="study",
                                 help='Output prefix; writes PREFIX.csv and PREFIX.json (default: study)')
    simulate_parser.add_argument('--replicates', type=int, help='Override the scenario replicate count')
    simulate_parser.add_argument('--resamples', type=int, help='Override the scenario resample count')
    simulate_parser.add_argument('--raw', help='Write per-replicate estimates to this CSV')
    _add_common_flags(simulate_parser)
    simulate_parser.set_defaults(handler=cmd_simulate)

    return parser


def _error_report(error: RankAftError) -> Dict:
    return {
        'error': error.kind,
        'message': str(error),
        'rows': [row.to_dict() for row in getattr(error, 'rows', [])],
    }


def main(argv: Optional[List[str]] = None) -> int:
    """Main function"""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = ToolkitConfig(args.config)
        setup_logging(config, args.verbose)
        status = args.handler(args, config)
    except RankAftError as e:
        logger.error(f"{args.command} failed: {e}")
        sys.stdout.write(to_json_text(_error_report(e)))
        status = EXIT_USAGE if isinstance(e, USAGE_ERRORS) else EXIT_RUNTIME
        _status(f"💥 {args.command} failed: {e}")
    return status


if __name__ == "__main__":
    sys.exit(main())
