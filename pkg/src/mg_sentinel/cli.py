#!/usr/bin/env python3
"""Command-line entry point for scenario runs, validation and analysis."""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ScenarioConfig, parse_config, with_override
from .errors import ConfigError, MicrogridError
from .formatters import (
    EigenCsvFormatter,
    GainCsvFormatter,
    RunResults,
    SearchCsvFormatter,
    SummaryCsvFormatter,
    TextFormatter,
    TraceCsvFormatter,
    gain_entries,
)
from .opf import DispatchSettings, dispatch, opf_feasibility
from .scenarios import build_scenario, eigen_matrices, run, summarize
from .search import SearchFamily, worst_case_attack_search
from .stability import eigen_sets

logger = logging.getLogger(__name__)

OUTPUT_ENV = "MG_SENTINEL_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "outputs"
EXIT_OK, EXIT_SCENARIO, EXIT_USAGE = 0, 1, 2


def output_dir(args: argparse.Namespace, cfg: ScenarioConfig) -> Path:
    """--out, then the sim section, then the environment, then ./outputs."""
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg.sim.output:
        return Path(cfg.sim.output)
    return Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT_DIR))


def load_config(path: str) -> ScenarioConfig:
    """Read and parse a scenario file."""
    return parse_config(Path(path).read_text())


def run_scenario_files(cfg: ScenarioConfig, out: Path, eigen: bool) -> RunResults:
    """Run one scenario and write trace, summary and optional eigenvalue CSVs."""
    scenario = build_scenario(cfg)
    trace = run(scenario)
    results = RunResults(trace=trace, summary=summarize(scenario, trace))
    TraceCsvFormatter().format_results(results, str(out / "trace.csv"))
    SummaryCsvFormatter().format_results(results, str(out / "summary.csv"))
    if eigen:
        results.eigen = eigen_sets(eigen_matrices(scenario))
        EigenCsvFormatter().format_results(results, str(out / "eigen.csv"))
    logger.info("wrote results to %s", out)
    return results


def cmd_run(args: argparse.Namespace) -> int:
    """Run a scenario."""
    cfg = load_config(args.config)
    results = run_scenario_files(cfg, output_dir(args, cfg), args.eigen)
    TextFormatter().format_results(results)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    """Check a scenario file without running it."""
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"invalid: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(
        f"ok: {cfg.grid.n_dg} DGs, {len(cfg.grid.lines)} lines, "
        f"{len(cfg.grid.loads)} loads, attack {cfg.attack.kind}"
    )
    return EXIT_OK


def _sweep_one(
    job: tuple[str, str, str, str],
) -> tuple[str, RunResults]:
    text, param, value, out = job
    cfg = with_override(text, param, value)
    return value, run_scenario_files(cfg, Path(out), eigen=False)


def cmd_sweep(args: argparse.Namespace) -> int:
    """Run a scenario once per value of one parameter."""
    text = Path(args.config).read_text()
    base = parse_config(text)
    root = output_dir(args, base)
    jobs = [
        (text, args.param, value, str(root / f"{args.param}={value}"))
        for value in args.values
    ]
    # Validate every override before spending time on runs
    for _, param, value, _ in jobs:
        with_override(text, param, value)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(_sweep_one, jobs))
    else:
        done = [_sweep_one(job) for job in jobs]
    for value, results in done:
        print(f"{args.param} = {value}")
        TextFormatter().format_results(results)
    return EXIT_OK


def cmd_eigen(args: argparse.Namespace) -> int:
    """Export eigenvalues of the reduced model for every scenario tag."""
    cfg = load_config(args.config)
    scenario = build_scenario(cfg)
    results = RunResults(eigen=eigen_sets(eigen_matrices(scenario)))
    out = output_dir(args, cfg)
    EigenCsvFormatter().format_results(results, str(out / "eigen.csv"))
    TextFormatter().format_results(results)
    return EXIT_OK


def cmd_search(args: argparse.Namespace) -> int:
    """Rank stealthy attack parameters by damage."""
    cfg = load_config(args.config)
    family = SearchFamily(mode=args.mode)
    ranking = worst_case_attack_search(
        cfg, family, budget=args.budget, seed=cfg.sim.seed, jobs=args.jobs
    )
    results = RunResults(ranking=ranking)
    out = output_dir(args, cfg)
    SearchCsvFormatter().format_results(results, str(out / "search.csv"))
    TextFormatter().format_results(results)
    return EXIT_OK


def cmd_dispatch(args: argparse.Namespace) -> int:
    """Stability-constrained dispatch and its constraint report."""
    cfg = load_config(args.config)
    stab = cfg.stability
    settings = DispatchSettings(
        enforce_stability=stab.enforce, angle_scale=stab.angle_scale, seed=cfg.sim.seed
    )
    sp = dispatch(cfg.grid, stab.eta, settings)
    report = opf_feasibility(sp, cfg.grid, stab.eta, angle_scale=stab.angle_scale)
    for i, (p, q) in enumerate(zip(sp.p, sp.q, strict=True), start=1):
        print(f"DG{i}: P = {p:.6g} W, Q = {q:.6g} var")
    TextFormatter().format_results(RunResults(opf=report))
    return EXIT_OK


def cmd_gains(args: argparse.Namespace) -> int:
    """Export the designed observer gains."""
    cfg = load_config(args.config)
    scenario = build_scenario(cfg)
    if scenario.observers is None:
        print("observer disabled in this scenario", file=sys.stderr)
        return EXIT_SCENARIO
    results = RunResults(gains=gain_entries(scenario.observers))
    out = output_dir(args, cfg)
    GainCsvFormatter().format_results(results, str(out / "gains.csv"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per verb."""
    parser = argparse.ArgumentParser(
        prog="mg-sentinel",
        description="Microgrid attack detection, mitigation and stability toolkit",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0,
        help="More logging (-v info, -vv debug)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def verb(
        name: str, help_text: str, with_out: bool = True
    ) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="Scenario file")
        if with_out:
            p.add_argument(
                "--out", help=f"Output directory (default: ${OUTPUT_ENV} or ./outputs)"
            )
        return p

    p_run = verb("run", "Simulate a scenario and write trace and summary CSVs")
    p_run.add_argument(
        "--eigen", action="store_true", help="Also write eigenvalues of every tag"
    )
    p_run.set_defaults(handler=cmd_run)

    verb("validate", "Check a scenario file", with_out=False).set_defaults(
        handler=cmd_validate
    )

    p_sweep = verb("sweep", "Run once per value of one parameter")
    p_sweep.add_argument(
        "--param", required=True, help="Dotted key, e.g. attack.rate_b or dg.2.m_p"
    )
    p_sweep.add_argument("--values", nargs="+", required=True, help="Values to try")
    p_sweep.add_argument("--jobs", type=int, default=1, help="Worker processes")
    p_sweep.set_defaults(handler=cmd_sweep)

    verb("eigen", "Write reduced-model eigenvalues").set_defaults(handler=cmd_eigen)

    p_search = verb("search", "Rank stealthy attack parameters by damage")
    p_search.add_argument("--budget", type=int, default=8, help="Candidates to run")
    p_search.add_argument(
        "--mode", choices=["grid", "random"], default="grid", help="Sampling mode"
    )
    p_search.add_argument("--jobs", type=int, default=1, help="Worker processes")
    p_search.set_defaults(handler=cmd_search)

    verb("dispatch", "Stability-constrained dispatch", with_out=False).set_defaults(
        handler=cmd_dispatch
    )
    verb("gains", "Write observer gains").set_defaults(handler=cmd_gains)
    return parser


def main() -> None:
    """Run the mg-sentinel command line."""
    parser = build_parser()
    args = parser.parse_args()

    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(
        level=level, format="%(asctime)s [%(levelname)s] %(name)s: %(message)s"
    )

    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    if getattr(args, "budget", 1) < 1:
        parser.error("--budget must be at least 1")

    try:
        code = args.handler(args)
    except (MicrogridError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        code = EXIT_SCENARIO

    sys.exit(code)


if __name__ == "__main__":
    main()
