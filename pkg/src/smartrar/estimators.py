"""Post-trial estimators of embedded-regime values.

Three estimators are provided:

* ``bayes`` -- mean and SD of regime values over joint posterior draws
  given the final data;
* ``plugin`` -- the value written as ratios of sample proportions, with an
  influence-function standard error;
* ``weighted`` -- the same ratios with each subject weighted by
  ``1/sqrt(pi)`` of its assignment probabilities, which stabilises the
  variance of the estimating equations under adaptive randomization.
"""
from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np

from .posterior import posteriors_from_counts, sample_theta_draws
from .regimes import value_grid
from .trial import ArmSets, Dataset, Regime, counts_at_week

METHODS = ("bayes", "plugin", "weighted")


class EmptyCellError(ValueError):
    """A denominator proportion of the ratio estimator is zero."""


@dataclass(frozen=True)
class RegimeEstimate:
    regime: Regime
    estimate: float
    se: float
    ci_lo: float
    ci_hi: float
    method: str


def wald_ci(estimate: float, se: float, level: float = 0.95) -> tuple[float, float]:
    if se < 0:
        raise ValueError("se must be non-negative")
    z = NormalDist().inv_cdf(0.5 + level / 2)
    return estimate - z * se, estimate + z * se


def _make(regime, est, se, method, level) -> RegimeEstimate:
    lo, hi = wald_ci(est, se, level)
    return RegimeEstimate(regime, float(est), float(se), float(lo), float(hi), method)


# -- Bayesian ----------------------------------------------------------------

def estimate_bayes_all(dataset: Dataset, M: int, rng: np.random.Generator,
                       level: float = 0.95) -> list[RegimeEstimate]:
    """Posterior mean/SD for every regime from one shared set of draws."""
    arms = dataset.arms
    posts = posteriors_from_counts(counts_at_week(dataset, np.inf), arms)
    values = value_grid(sample_theta_draws(posts, M, rng)).reshape(M, -1)
    means = values.mean(axis=0)
    sds = values.std(axis=0, ddof=1) if M > 1 else np.zeros(values.shape[1])
    return [_make(r, means[k], sds[k], "bayes", level) for k, r in enumerate(arms.regimes())]


def estimate_bayes(dataset: Dataset, regime: Regime, M: int, rng: np.random.Generator,
                   level: float = 0.95) -> RegimeEstimate:
    k = dataset.arms.regime_index(regime)
    return estimate_bayes_all(dataset, M, rng, level)[k]


# -- ratio-of-proportions estimators ---------------------------------------------

@dataclass(frozen=True)
class AlphaTable:
    """(Weighted) sample proportions for one regime.

    alpha1: A1=a1, R1=1, Y1=1      alpha2: A1=a1
    alpha3: ..., A2=a2, R2=1, Y2=1 alpha4: A1=a1, R1=0, A2=a2
    alpha5: ..., A2=a2, R2=0, Y3=1 alpha6: A1=a1, R1=0
    """

    alpha1: float
    alpha2: float
    alpha3: float
    alpha4: float
    alpha5: float
    alpha6: float

    @property
    def value(self) -> float:
        return (self.alpha1 / self.alpha2
                + self.alpha6 / self.alpha2 * (self.alpha3 + self.alpha5) / self.alpha4)


def _indicators(dataset: Dataset, regime: Regime) -> dict[str, np.ndarray]:
    i1, i2 = dataset.arms.index1(regime.a1), dataset.arms.index2(regime.a2)
    on_a1 = dataset.a1 == i1
    nonresp = on_a1 & (dataset.r1 == 0)
    on_cell = nonresp & (dataset.a2 == i2)
    return {
        "alpha1": on_a1 & (dataset.r1 == 1) & (dataset.y1 == 1),
        "alpha2": on_a1,
        "alpha3": on_cell & (dataset.r2 == 1) & (dataset.y2 == 1),
        "alpha4": on_cell,
        "alpha5": on_cell & (dataset.r2 == 0) & (dataset.y3 == 1),
        "alpha6": nonresp,
    }


def stage_weights(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-subject weights 1/sqrt(pi1) and 1/sqrt(pi1 * pi2).

    The stage-2 weight is NaN for stage-1 responders (it is never used for
    them).
    """
    w1 = 1.0 / np.sqrt(dataset.pi1)
    w2 = 1.0 / np.sqrt(dataset.pi1 * dataset.pi2)
    return w1, w2


def alpha_table(dataset: Dataset, regime: Regime, weighted: bool = False) -> AlphaTable:
    ind = _indicators(dataset, regime)
    n = len(dataset)
    if not weighted:
        return AlphaTable(**{k: v.sum() / n for k, v in ind.items()})
    w1, w2 = stage_weights(dataset)
    out = {}
    for k, v in ind.items():
        w = w2 if k in ("alpha3", "alpha4", "alpha5") else w1
        out[k] = np.where(v, w, 0.0).sum() / n
    return AlphaTable(**out)


def _check_denominators(alpha: AlphaTable, regime: Regime) -> None:
    if alpha.alpha2 == 0:
        raise EmptyCellError(f"no subjects received stage-1 arm {regime.a1!r} (alpha2 = 0)")
    if alpha.alpha4 == 0:
        raise EmptyCellError(
            f"no stage-1 non-responders to {regime.a1!r} received {regime.a2!r} (alpha4 = 0)")


def influence_values(dataset: Dataset, regime: Regime, alpha: AlphaTable, mu: float,
                     weighted_indicators: bool = False) -> np.ndarray:
    """Per-subject influence values of the ratio estimator at ``(alpha, mu)``.

    With ``weighted_indicators=False`` the indicators enter unweighted,
    whatever ``alpha`` holds; ``True`` multiplies each indicator by the
    same stage weight used in the weighted proportions.
    """
    ind = {k: v.astype(float) for k, v in _indicators(dataset, regime).items()}
    if weighted_indicators:
        w1, w2 = stage_weights(dataset)
        for k in ind:
            w = w2 if k in ("alpha3", "alpha4", "alpha5") else w1
            ind[k] = np.where(ind[k] > 0, w, 0.0)
    a = alpha
    b = (a.alpha3 + a.alpha5) / a.alpha4
    r = a.alpha6 / a.alpha4
    return (1.0 / a.alpha2) * (
        (ind["alpha1"] - a.alpha1) - mu * (ind["alpha2"] - a.alpha2)
        + b * (-r * (ind["alpha4"] - a.alpha4) + (ind["alpha6"] - a.alpha6))
        + r * (ind["alpha3"] + ind["alpha5"] - (a.alpha3 + a.alpha5))
    )


def estimate_plugin(dataset: Dataset, regime: Regime, level: float = 0.95) -> RegimeEstimate:
    alpha = alpha_table(dataset, regime)
    _check_denominators(alpha, regime)
    mu = alpha.value
    infl = influence_values(dataset, regime, alpha, mu)
    se = np.sqrt(np.mean(infl ** 2) / len(dataset))
    return _make(regime, mu, se, "plugin", level)


def estimate_weighted(dataset: Dataset, regime: Regime, level: float = 0.95,
                      weighted_indicators: bool = True) -> RegimeEstimate:
    """Weighted ratio estimator.

    The standard error comes from the influence function evaluated at the
    weighted proportions. By default the indicators inside it carry the
    same weights (the sandwich form of the weighted estimating equations),
    which reduces to the plugin standard error whenever all assignment
    probabilities are constant. ``weighted_indicators=False`` keeps the
    indicators unweighted; that variant understates the standard error by
    roughly the square root of the typical weight.
    """
    alpha = alpha_table(dataset, regime, weighted=True)
    _check_denominators(alpha, regime)
    mu = alpha.value
    infl = influence_values(dataset, regime, alpha, mu, weighted_indicators)
    se = np.sqrt(np.mean(infl ** 2) / len(dataset))
    return _make(regime, mu, se, "weighted", level)


def estimate_all(dataset: Dataset, method: str, *, M: int = 1000,
                 rng: Optional[np.random.Generator] = None, level: float = 0.95,
                 weighted_indicators: bool = True) -> list[RegimeEstimate]:
    """Estimates for every regime in lexicographic order."""
    if method == "bayes":
        if rng is None:
            raise ValueError("bayes estimation needs an rng")
        return estimate_bayes_all(dataset, M, rng, level)
    if method == "plugin":
        return [estimate_plugin(dataset, r, level) for r in dataset.arms.regimes()]
    if method == "weighted":
        return [estimate_weighted(dataset, r, level, weighted_indicators)
                for r in dataset.arms.regimes()]
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def identify_optimal(estimates: Sequence[RegimeEstimate]) -> Regime:
    """Regime with the largest estimate; the earliest one wins ties."""
    best = max(range(len(estimates)), key=lambda k: (estimates[k].estimate, -k))
    return estimates[best].regime
