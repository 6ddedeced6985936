"""Monte Carlo experiments: replicate trials, summarise, and tabulate.

Each replicate is reduced to a small :class:`ReplicateSummary` (in-trial
quantities plus every regime's estimate under each method). Metrics are
computed from those summaries in replicate order, so results do not depend
on how replicates were scheduled across worker processes.

Replicate ``r`` of every scheme uses the same seed, ``substream(seed, r)``,
so schemes are compared under common random numbers.
"""
from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .estimators import METHODS, EmptyCellError, RegimeEstimate, estimate_all, identify_optimal
from .regimes import ScenarioSpec
from .simulator import BAYES_STREAM, PAPER_SCHEMES, TrialConfig, parse_scheme, run_trial, substream
from .trial import Regime

WORKERS_ENV = "SMARTRAR_WORKERS"


@dataclass(frozen=True)
class ExperimentPlan:
    scenario: ScenarioSpec
    config: TrialConfig
    schemes: tuple[str, ...] = PAPER_SCHEMES
    replicates: int = 1000
    seed: int = 20240101
    methods: tuple[str, ...] = METHODS
    weighted_indicators: bool = True

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        for s in self.schemes:
            parse_scheme(s, self.config.T_end)
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")


@dataclass
class ReplicateSummary:
    replicate: int
    burn_in_week: int
    overall_pcr: float
    consist: np.ndarray          # per regime, lexicographic order
    final_pi1: np.ndarray        # (n1,)
    final_pi2: np.ndarray        # (n1, n2)
    pi1_trajectory: np.ndarray   # (T_end, n1)
    pi2_trajectory: np.ndarray   # (T_end, n1, n2)
    estimates: dict = field(default_factory=dict)   # method -> list[RegimeEstimate] | None
    errors: dict = field(default_factory=dict)      # method -> message for excluded ones


def run_replicate(scenario: ScenarioSpec, config: TrialConfig, seed: int, replicate: int,
                  methods: Sequence[str] = METHODS, weighted_indicators: bool = True) -> ReplicateSummary:
    rep_seed = substream(seed, replicate)
    trial = run_trial(scenario, config, rep_seed)
    ds = trial.dataset
    arms = ds.arms
    summary = ReplicateSummary(
        replicate=replicate,
        burn_in_week=trial.burn_in_week,
        overall_pcr=float(ds.outcome().mean()),
        consist=np.array([ds.consistent(r).mean() for r in arms.regimes()]),
        final_pi1=trial.final_table.pi1.copy(),
        final_pi2=trial.final_table.pi2.copy(),
        pi1_trajectory=trial.pi1_trajectory(config.T_end),
        pi2_trajectory=trial.pi2_trajectory(config.T_end),
    )
    for m in methods:
        rng = np.random.default_rng(substream(rep_seed, BAYES_STREAM)) if m == "bayes" else None
        try:
            summary.estimates[m] = estimate_all(ds, m, M=config.M, rng=rng,
                                                weighted_indicators=weighted_indicators)
        except EmptyCellError as exc:
            summary.estimates[m] = None
            summary.errors[m] = str(exc)
    return summary


def _worker_count(workers: Optional[int]) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, workers)


def _run_one(args):
    return run_replicate(*args)


def run_scheme(plan: ExperimentPlan, scheme: str, workers: Optional[int] = None) -> list[ReplicateSummary]:
    config = plan.config.with_scheme(scheme)
    jobs = [(plan.scenario, config, plan.seed, r, plan.methods, plan.weighted_indicators)
            for r in range(plan.replicates)]
    n = _worker_count(workers)
    if n == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (8 * n))))


# -- metrics -------------------------------------------------------------------

@dataclass
class MethodMetrics:
    """Post-trial metrics for one estimator, keyed by true-optimal regime."""

    mc_mean_estimate: dict
    coverage: dict
    ci_length: dict
    mse: dict
    mean_standardized: dict
    prop_correct: float
    rel_efficiency_vs_bayes: dict
    rel_efficiency_vs_SR: dict
    excluded_replicates: int
    included_replicates: int


@dataclass
class SchemeMetrics:
    scheme: str
    replicates: int
    overall_pcr_rate: float
    consist_opt: dict
    consist_worst: float
    final_pi1_opt: dict
    final_pi2_opt: dict
    pi1_opt_trajectory: np.ndarray
    pi2_opt_trajectory: np.ndarray
    methods: dict = field(default_factory=dict)


@dataclass
class MetricsReport:
    scenario: str
    truth: dict
    optimal: list
    worst: Regime
    schemes: dict

    def __getitem__(self, scheme: str) -> SchemeMetrics:
        return self.schemes[scheme]


def in_trial_metrics(summaries: Sequence[ReplicateSummary], scenario: ScenarioSpec) -> dict:
    """In-trial averages over replicates.

    ``final_pi2_opt`` for regime ``{a1, a2}`` is the final stage-2
    probability of ``a2`` in the row for non-responders to ``a1``.
    """
    arms = scenario.arms
    consist = np.array([s.consist for s in summaries])
    pi1 = np.array([s.final_pi1 for s in summaries])
    pi2 = np.array([s.final_pi2 for s in summaries])
    traj1 = np.array([s.pi1_trajectory for s in summaries])
    traj2 = np.array([s.pi2_trajectory for s in summaries])
    opt = scenario.optimal()
    first = opt[0]
    i1, i2 = arms.index1(first.a1), arms.index2(first.a2)
    return {
        "overall_pcr_rate": float(np.mean([s.overall_pcr for s in summaries])),
        "consist_opt": {r: float(consist[:, arms.regime_index(r)].mean()) for r in opt},
        "consist_worst": float(consist[:, arms.regime_index(scenario.worst())].mean()),
        "final_pi1_opt": {r: float(pi1[:, arms.index1(r.a1)].mean()) for r in opt},
        "final_pi2_opt": {r: float(pi2[:, arms.index1(r.a1), arms.index2(r.a2)].mean()) for r in opt},
        "pi1_opt_trajectory": traj1[:, :, i1].mean(axis=0),
        "pi2_opt_trajectory": traj2[:, :, i1, i2].mean(axis=0),
    }


def _mse(values: list, truth: float) -> float:
    return float(np.mean((np.asarray(values) - truth) ** 2)) if values else float("nan")


def _ratio(num: float, den: float) -> float:
    if not np.isfinite(num) or not np.isfinite(den) or den == 0:
        return float("nan")
    return num / den


def post_trial_metrics(estimates: dict, scenario: ScenarioSpec,
                       sr_reference: Optional[dict] = None) -> dict:
    """Post-trial estimator metrics for one scheme.

    ``estimates`` maps method -> per-replicate list whose entries are a
    list of RegimeEstimate (lexicographic regime order) or None for an
    excluded replicate. ``sr_reference`` maps method -> {regime: MSE} under
    SR; the weighted estimator is compared against the SR plugin MSE.
    Identification counts as correct if it picks any true-optimal regime.
    """
    arms = scenario.arms
    opt = scenario.optimal()
    truth = scenario.true_values()
    out = {}
    mses = {}
    for method, reps in estimates.items():
        kept = [e for e in reps if e is not None]
        per = {"mc_mean_estimate": {}, "coverage": {}, "ci_length": {}, "mse": {},
               "mean_standardized": {}}
        for r in opt:
            k = arms.regime_index(r)
            tv = float(truth[arms.index1(r.a1), arms.index2(r.a2)])
            est = [e[k].estimate for e in kept]
            per["mc_mean_estimate"][r] = float(np.mean(est)) if kept else float("nan")
            per["coverage"][r] = (float(np.mean([e[k].ci_lo <= tv <= e[k].ci_hi for e in kept]))
                                  if kept else float("nan"))
            per["ci_length"][r] = (float(np.mean([e[k].ci_hi - e[k].ci_lo for e in kept]))
                                   if kept else float("nan"))
            per["mse"][r] = _mse(est, tv)
            z = [(e[k].estimate - tv) / e[k].se for e in kept if e[k].se > 0]
            per["mean_standardized"][r] = float(np.mean(z)) if z else float("nan")
        correct = [identify_optimal(e) in opt for e in kept]
        per["prop_correct"] = float(np.mean(correct)) if kept else float("nan")
        per["excluded_replicates"] = len(reps) - len(kept)
        per["included_replicates"] = len(kept)
        mses[method] = per["mse"]
        out[method] = per
    for method, per in out.items():
        bayes = mses.get("bayes", {})
        per["rel_efficiency_vs_bayes"] = {r: _ratio(bayes.get(r, float("nan")), per["mse"][r])
                                          for r in opt}
        ref_method = "plugin" if method == "weighted" else method
        ref = (sr_reference or {}).get(ref_method, {})
        per["rel_efficiency_vs_SR"] = {r: _ratio(ref.get(r, float("nan")), per["mse"][r])
                                       for r in opt}
    return {m: MethodMetrics(**v) for m, v in out.items()}


def summarise(scenario: ScenarioSpec, by_scheme: dict) -> MetricsReport:
    """Build a report from per-scheme replicate summaries (in replicate order)."""
    schemes = {}
    estimates_by_scheme = {
        label: {m: [s.estimates.get(m) for s in sums]
                for m in (sums[0].estimates.keys() if sums else ())}
        for label, sums in by_scheme.items()
    }
    sr_label = next((lbl for lbl in by_scheme if lbl.strip().upper() == "SR"), None)
    sr_ref = None
    if sr_label is not None:
        sr_metrics = post_trial_metrics(estimates_by_scheme[sr_label], scenario)
        sr_ref = {m: v.mse for m, v in sr_metrics.items()}
    for label, sums in by_scheme.items():
        it = in_trial_metrics(sums, scenario)
        sm = SchemeMetrics(scheme=label, replicates=len(sums), **it)
        sm.methods = post_trial_metrics(estimates_by_scheme[label], scenario, sr_ref)
        schemes[label] = sm
    truth = {r: float(v) for r, v in zip(scenario.arms.regimes(), scenario.true_values().ravel())}
    return MetricsReport(scenario.name, truth, scenario.optimal(), scenario.worst(), schemes)


def run_experiment(plan: ExperimentPlan, workers: Optional[int] = None,
                   out_dir=None) -> MetricsReport:
    """Run every scheme of ``plan``; optionally write per-scheme files to ``out_dir``."""
    by_scheme = {}
    for scheme in plan.schemes:
        by_scheme[scheme] = run_scheme(plan, scheme, workers)
        if out_dir is not None:
            write_scheme_outputs(out_dir, plan, scheme, by_scheme[scheme])
    report = summarise(plan.scenario, by_scheme)
    if out_dir is not None:
        write_report(out_dir, report)
    return report


# -- files -----------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_scheme_outputs(out_dir, plan: ExperimentPlan, scheme: str,
                         summaries: Sequence[ReplicateSummary]) -> None:
    """Per-replicate files for one scheme, enough for :func:`load_outputs`.

    * ``replicates_<slug>.csv``: in-trial quantities per replicate;
    * ``estimates_<slug>.csv``: every regime's estimate per method;
    * ``zscores_<slug>.csv``: standardized estimates for the optimal regimes;
    * ``trajectory_<slug>.csv``: weekly mean probability of the optimal arms.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenario, arms = plan.scenario, plan.scenario.arms
    slug = parse_scheme(scheme, plan.config.T_end).slug
    meta = {"scheme": scheme, "scenario": scenario.to_dict(),
            "config": plan.config.with_scheme(scheme).to_dict(),
            "replicates": plan.replicates, "seed": int(plan.seed), "methods": list(plan.methods),
            "weighted_indicators": plan.weighted_indicators}
    (out / f"plan_{slug}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    regimes = arms.regimes()
    header = (["replicate", "burn_in_week", "overall_pcr"]
              + [f"consist_{r.a1}_{r.a2}" for r in regimes]
              + [f"final_pi1_{a}" for a in arms.stage1_arms]
              + [f"final_pi2_{r.a1}_{r.a2}" for r in regimes])
    _write_csv(out / f"replicates_{slug}.csv", header, (
        [s.replicate, s.burn_in_week, s.overall_pcr, *s.consist, *s.final_pi1, *s.final_pi2.ravel()]
        for s in summaries))

    truth = scenario.true_values().ravel()
    rows = []
    for s in summaries:
        for m in plan.methods:
            ests = s.estimates.get(m)
            for k, r in enumerate(regimes):
                if ests is None:
                    rows.append([s.replicate, m, r.a1, r.a2, None, None, None, None, truth[k],
                                 "excluded"])
                else:
                    e = ests[k]
                    rows.append([s.replicate, m, r.a1, r.a2, e.estimate, e.se, e.ci_lo, e.ci_hi,
                                 truth[k], "ok"])
    _write_csv(out / f"estimates_{slug}.csv",
               ["replicate", "method", "a1", "a2", "estimate", "se", "ci_lo", "ci_hi", "truth",
                "status"], rows)

    opt = scenario.optimal()
    zrows = []
    for s in summaries:
        for m in plan.methods:
            ests = s.estimates.get(m)
            if ests is None:
                continue
            for r in opt:
                k = arms.regime_index(r)
                e = ests[k]
                z = (e.estimate - truth[k]) / e.se if e.se > 0 else float("nan")
                zrows.append([s.replicate, m, r.a1, r.a2, z])
    _write_csv(out / f"zscores_{slug}.csv", ["replicate", "method", "a1", "a2", "z"], zrows)

    it = in_trial_metrics(summaries, scenario)
    _write_csv(out / f"trajectory_{slug}.csv", ["week", "mean_pi1_opt", "mean_pi2_opt"], (
        [w + 1, it["pi1_opt_trajectory"][w], it["pi2_opt_trajectory"][w]]
        for w in range(plan.config.T_end)))


def _scheme_order(label: str):
    order = {s: i for i, s in enumerate(PAPER_SCHEMES)}
    return order.get(label, len(order)), label


def _parse_label(text: str, labels: Sequence):
    """Map a CSV arm label back to the arm identifier it was written from."""
    for a in labels:
        if str(a) == text:
            return a
    raise ValueError(f"unknown arm label {text!r}")


def load_outputs(in_dir) -> tuple[ScenarioSpec, dict]:
    """Reload per-scheme files into (scenario, {scheme: [ReplicateSummary]}).

    Trajectories are stored only as weekly means, so every reloaded
    summary carries that mean trajectory for the optimal arms.
    """
    base = Path(in_dir)
    plans = sorted(base.glob("plan_*.json"))
    if not plans:
        raise FileNotFoundError(f"no plan_*.json files in {base}")
    scenario = None
    by_scheme = {}
    metas = [json.loads(p.read_text()) for p in plans]
    metas.sort(key=lambda m: _scheme_order(m["scheme"]))
    for meta in metas:
        sc = ScenarioSpec.from_dict(meta["scenario"])
        if scenario is None:
            scenario = sc
        elif sc.to_dict() != scenario.to_dict():
            raise ValueError("output directory mixes scenarios")
        arms = sc.arms
        config = TrialConfig.from_dict(meta["config"])
        slug = config.scheme.slug
        regimes = arms.regimes()
        traj = {int(r["week"]): (float(r["mean_pi1_opt"]), float(r["mean_pi2_opt"]))
                for r in _read_csv(base / f"trajectory_{slug}.csv")}
        i1 = arms.index1(sc.optimal()[0].a1)
        i2 = arms.index2(sc.optimal()[0].a2)
        t1 = np.full((config.T_end, arms.n1), np.nan)
        t2 = np.full((config.T_end, arms.n1, arms.n2), np.nan)
        for w, (p1, p2) in traj.items():
            t1[w - 1, i1] = p1
            t2[w - 1, i1, i2] = p2

        est_rows = _read_csv(base / f"estimates_{slug}.csv")
        ests: dict = {}
        for row in est_rows:
            key = (int(row["replicate"]), row["method"])
            ests.setdefault(key, []).append(row)

        sums = []
        for row in _read_csv(base / f"replicates_{slug}.csv"):
            rep = int(row["replicate"])
            s = ReplicateSummary(
                replicate=rep,
                burn_in_week=int(row["burn_in_week"]),
                overall_pcr=float(row["overall_pcr"]),
                consist=np.array([float(row[f"consist_{r.a1}_{r.a2}"]) for r in regimes]),
                final_pi1=np.array([float(row[f"final_pi1_{a}"]) for a in arms.stage1_arms]),
                final_pi2=np.array([float(row[f"final_pi2_{r.a1}_{r.a2}"])
                                    for r in regimes]).reshape(arms.n1, arms.n2),
                pi1_trajectory=t1, pi2_trajectory=t2,
            )
            for m in meta["methods"]:
                rows = ests.get((rep, m), [])
                if not rows or rows[0]["status"] == "excluded":
                    s.estimates[m] = None
                    continue
                s.estimates[m] = [
                    RegimeEstimate(Regime(_parse_label(r["a1"], arms.stage1_arms),
                                          _parse_label(r["a2"], arms.stage2_arms)),
                                   float(r["estimate"]), float(r["se"]),
                                   float(r["ci_lo"]), float(r["ci_hi"]), m)
                    for r in rows]
            sums.append(s)
        by_scheme[meta["scheme"]] = sums
    return scenario, by_scheme


def write_report(out_dir, report: MetricsReport) -> None:
    """In-trial, post-trial and efficiency-vs-SR CSVs, one column per scheme."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = sorted(report.schemes, key=_scheme_order)
    schemes = [report.schemes[s] for s in labels]

    def reg(r):
        return f"{{{r.a1},{r.a2}}}"

    t2 = [["overall_pcr_rate", ""] + [s.overall_pcr_rate for s in schemes]]
    for r in report.optimal:
        t2.append(["consist_opt", reg(r)] + [s.consist_opt[r] for s in schemes])
    t2.append(["consist_worst", reg(report.worst)] + [s.consist_worst for s in schemes])
    for r in report.optimal:
        t2.append(["final_pi1_opt", reg(r)] + [s.final_pi1_opt[r] for s in schemes])
    for r in report.optimal:
        t2.append(["final_pi2_opt", reg(r)] + [s.final_pi2_opt[r] for s in schemes])
    _write_csv(out / "table2.csv", ["metric", "regime"] + labels, t2)

    methods = list(schemes[0].methods) if schemes else []
    t3 = []
    for m in methods:
        for metric in ("mc_mean_estimate", "coverage", "ci_length", "mse", "mean_standardized",
                       "rel_efficiency_vs_bayes"):
            for r in report.optimal:
                t3.append([m, metric, reg(r)] + [getattr(s.methods[m], metric)[r] for s in schemes])
        t3.append([m, "prop_correct", ""] + [s.methods[m].prop_correct for s in schemes])
        t3.append([m, "excluded_replicates", ""] + [s.methods[m].excluded_replicates for s in schemes])
    _write_csv(out / "table3.csv", ["method", "metric", "regime"] + labels, t3)

    eff = []
    for m in methods:
        for r in report.optimal:
            eff.append([m, reg(r)] + [s.methods[m].rel_efficiency_vs_SR[r] for s in schemes])
    _write_csv(out / "efficiency_vs_sr.csv", ["method", "regime"] + labels, eff)

    truth = [[r.a1, r.a2, v, r in report.optimal] for r, v in report.truth.items()]
    _write_csv(out / "true_values.csv", ["a1", "a2", "value", "is_optimal"], truth)


def report_from_dir(in_dir, out_dir=None) -> MetricsReport:
    scenario, by_scheme = load_outputs(in_dir)
    report = summarise(scenario, by_scheme)
    write_report(out_dir or in_dir, report)
    return report
