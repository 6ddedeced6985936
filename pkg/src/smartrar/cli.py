"""Command-line entry point: ``smartrar <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .estimators import METHODS, estimate_all, identify_optimal
from .harness import ExperimentPlan, report_from_dir, run_experiment
from .regimes import ScenarioSpec
from .simulator import PAPER_SCHEMES, TrialConfig, run_trial, substream
from .trial import Dataset


def _scenario(path: str) -> ScenarioSpec:
    """Load a scenario file, or a bundled one by name (``scenario3``)."""
    p = Path(path)
    if p.exists():
        return ScenarioSpec.load(p)
    bundled = resources.files("smartrar") / "scenarios" / f"{path}.json"
    if bundled.is_file():
        return ScenarioSpec.from_dict(json.loads(bundled.read_text()))
    raise SystemExit(f"scenario file not found: {path}")


def _config(path, scenario: ScenarioSpec) -> TrialConfig:
    if path is None:
        return TrialConfig(arms=scenario.arms)
    return TrialConfig.load(path, arms=scenario.arms)


def cmd_simulate(args) -> int:
    scenario = _scenario(args.scenario)
    config = _config(args.config, scenario)
    schemes = PAPER_SCHEMES if args.scheme == ["all"] else tuple(args.scheme or ("SR",))
    plan = ExperimentPlan(scenario, config, schemes=schemes, replicates=args.replicates,
                          seed=args.seed, methods=tuple(args.methods),
                          weighted_indicators=args.weighted_variance == "weighted")
    report = run_experiment(plan, workers=args.workers, out_dir=args.out)
    for label in schemes:
        cfg = config.with_scheme(label)
        for r in range(min(args.dump_datasets, args.replicates)):
            trial = run_trial(scenario, cfg, substream(args.seed, r))
            trial.dataset.to_csv(Path(args.out) / f"dataset_{cfg.scheme.slug}_r{r}.csv")
            trial.tables_csv(Path(args.out) / f"tables_{cfg.scheme.slug}_r{r}.csv")
    for label, sm in report.schemes.items():
        print(f"{label}: overall pCR {sm.overall_pcr_rate:.3f}; "
              + "; ".join(f"{m} mean {next(iter(mm.mc_mean_estimate.values())):.3f}"
                          for m, mm in sm.methods.items()))
    print(f"wrote outputs to {args.out}")
    return 0


def cmd_true_values(args) -> int:
    scenario = _scenario(args.scenario)
    v = scenario.true_values()
    opt = scenario.optimal()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["a1", "a2", "value", "is_optimal"])
    for r in scenario.arms.regimes():
        value = v[scenario.arms.index1(r.a1), scenario.arms.index2(r.a2)]
        w.writerow([r.a1, r.a2, f"{value:.6f}", r in opt])
    return 0


def cmd_estimate(args) -> int:
    ds = Dataset.from_csv(args.dataset)
    rng = np.random.default_rng(args.seed)
    methods = METHODS if args.method == "all" else (args.method,)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["method", "a1", "a2", "estimate", "se", "ci_lo", "ci_hi", "is_estimated_optimal"])
    for m in methods:
        ests = estimate_all(ds, m, M=args.draws, rng=rng, level=args.level,
                            weighted_indicators=args.weighted_variance == "weighted")
        best = identify_optimal(ests)
        for e in ests:
            w.writerow([m, e.regime.a1, e.regime.a2, f"{e.estimate:.6f}", f"{e.se:.6f}",
                        f"{e.ci_lo:.6f}", f"{e.ci_hi:.6f}", e.regime == best])
    return 0


def cmd_report(args) -> int:
    report_from_dir(args.input, args.out)
    print(f"wrote table2.csv, table3.csv, efficiency_vs_sr.csv to {args.out or args.input}")
    return 0


VARIANCE_HELP = ("whether the indicators in the weighted estimator's influence function "
                 "carry the subject weights (default) or not")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smartrar",
                                description="Thompson-sampling SMART simulation and estimation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run Monte Carlo replicates and write per-scheme outputs")
    s.add_argument("--scenario", required=True, help="scenario JSON file or bundled name")
    s.add_argument("--config", help="trial config JSON (defaults to the built-in design)")
    s.add_argument("--scheme", action="append",
                   help="randomization scheme label, repeatable; 'all' for every bundled scheme")
    s.add_argument("--replicates", type=int, default=1000)
    s.add_argument("--seed", type=int, default=20240101)
    s.add_argument("--methods", nargs="+", default=list(METHODS), choices=METHODS)
    s.add_argument("--weighted-variance", choices=("weighted", "unweighted"), default="weighted",
                   help=VARIANCE_HELP)
    s.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $SMARTRAR_WORKERS or 1)")
    s.add_argument("--dump-datasets", type=int, default=0, metavar="K",
                   help="also write subject-level data and weekly tables of the first K replicates per scheme")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("true-values", help="print true regime values as CSV")
    t.add_argument("--scenario", required=True)
    t.set_defaults(func=cmd_true_values)

    e = sub.add_parser("estimate", help="estimate every regime value from a dataset CSV")
    e.add_argument("--dataset", required=True)
    e.add_argument("--method", default="all", choices=METHODS + ("all",))
    e.add_argument("--draws", type=int, default=1000, help="posterior draws for bayes")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--level", type=float, default=0.95)
    e.add_argument("--weighted-variance", choices=("weighted", "unweighted"), default="weighted",
                   help=VARIANCE_HELP)
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("report", help="merge per-scheme outputs into summary tables")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out", default=None, help="output directory (default: --in)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
