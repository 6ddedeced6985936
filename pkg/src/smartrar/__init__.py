"""Simulation and analysis of SMARTs with Thompson-sampling randomization."""
from .estimators import (EmptyCellError, RegimeEstimate, estimate_all, estimate_bayes,
                         estimate_plugin, estimate_weighted, identify_optimal, wald_ci)
from .harness import ExperimentPlan, MetricsReport, run_experiment
from .posterior import PosteriorSet, ThetaDraw, posteriors_from_counts, sample_theta_draws
from .randomizer import (DampingSchedule, RandomizationTable, build_tables,
                         clip_and_renormalize, damp_and_normalize)
from .regimes import (ScenarioSpec, optimal_regime, regime_value, scenario_to_theta,
                      true_regime_value)
from .simulator import TrialConfig, draw_enrollment, parse_scheme, run_trial, simulate_stage
from .trial import ArmSets, CountTable, Dataset, Regime, SubjectRecord, counts_at_week

__version__ = "0.1.0"


def load_scenario(name: str) -> ScenarioSpec:
    """One of the bundled scenarios, ``"scenario0"`` to ``"scenario5"``."""
    import json
    from importlib import resources
    return ScenarioSpec.from_dict(json.loads(
        (resources.files(__name__) / "scenarios" / f"{name}.json").read_text()))
