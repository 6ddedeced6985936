"""Thompson-sampling randomization tables with damping and clipping."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .posterior import ThetaDraw, posteriors_from_counts, sample_theta_draws
from .regimes import optimal_regime_index, stage2_grid
from .trial import ArmSets, Dataset, counts_at_week


class InfeasibleBoundsError(ValueError):
    """Clipping bounds cannot be met by any probability vector."""


@dataclass(frozen=True)
class DampingSchedule:
    """psi_t = psi_max (constant) or psi_max * t / T_end (linear)."""

    kind: str = "constant"
    psi_max: float = 1.0
    T_end: int = 143

    def __post_init__(self):
        if self.kind not in ("constant", "linear"):
            raise ValueError(f"unknown damping kind {self.kind!r}")
        if not 0 <= self.psi_max <= 1:
            raise ValueError("psi_max must lie in [0, 1]")


def psi_at(schedule: DampingSchedule, t: int) -> float:
    if schedule.kind == "constant":
        return schedule.psi_max
    return schedule.psi_max * min(max(t, 0), schedule.T_end) / schedule.T_end


@dataclass(frozen=True)
class RandomizationTable:
    """Assignment probabilities in force during week ``[week, week + 1)``.

    ``pi1`` has shape ``(n1,)``; row ``pi2[i]`` is the stage-2 distribution
    for non-responders to stage-1 arm ``i``.
    """

    week: int
    pi1: np.ndarray
    pi2: np.ndarray
    adaptive: bool = True

    @classmethod
    def uniform(cls, week: int, arms: ArmSets) -> "RandomizationTable":
        return cls(week, np.full(arms.n1, 1.0 / arms.n1),
                   np.full((arms.n1, arms.n2), 1.0 / arms.n2), adaptive=False)


def stage1_optimality_probs(draws: ThetaDraw, arms: Optional[ArmSets] = None) -> np.ndarray:
    """Fraction of draws whose optimal regime starts with each stage-1 arm."""
    arms = arms or draws.arms
    a1_opt = optimal_regime_index(draws) // arms.n2
    return np.bincount(np.ravel(a1_opt), minlength=arms.n1) / np.size(a1_opt)


def stage2_optimality_probs(draws: ThetaDraw, a1, arms: Optional[ArmSets] = None) -> np.ndarray:
    """Fraction of draws in which each stage-2 arm is best after ``a1``."""
    arms = arms or draws.arms
    return _stage2_rho(draws, arms)[arms.index1(a1)]


def _stage2_rho(draws: ThetaDraw, arms: ArmSets) -> np.ndarray:
    best = np.argmax(stage2_grid(draws), axis=-1).reshape(-1, arms.n1)
    M = best.shape[0]
    return np.stack([np.bincount(best[:, i], minlength=arms.n2) for i in range(arms.n1)]) / M


def damp_and_normalize(rho, psi: float) -> np.ndarray:
    """rho^psi normalised to sum to one (0^0 taken as 1)."""
    rho = np.asarray(rho, dtype=float)
    powered = np.power(rho, psi)
    total = powered.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = powered / total
    return np.where(total > 0, out, 1.0 / rho.shape[-1])


def clip_and_renormalize(probs, lo: float, hi: float) -> np.ndarray:
    """Force every entry into ``[lo, hi]`` keeping the vector a distribution.

    Entries below ``lo`` are raised to ``lo``, entries above ``hi`` capped at
    ``hi``, and the residual mass is shared by the interior entries in
    proportion to their current size. The fixed point of that iteration is
    ``clip(c * probs, lo, hi)`` for the unique scale ``c`` making it sum to
    one; ``c`` is found exactly from the piecewise-linear breakpoints. If
    capping every positive entry still leaves mass over, the zero entries
    share it equally.
    """
    p = np.asarray(probs, dtype=float)
    k = p.size
    if lo * k > 1 + 1e-12 or hi * k < 1 - 1e-12 or lo > hi:
        raise InfeasibleBoundsError(f"bounds [{lo}, {hi}] infeasible for {k} arms")
    if np.all((p >= lo) & (p <= hi)):
        return p / p.sum()

    def total(c):
        return np.clip(c * p, lo, hi).sum()

    pos = p[p > 0]
    with np.errstate(divide="ignore", over="ignore"):
        knots = np.concatenate([[0.0], lo / pos, hi / pos])
    knots = np.unique(knots[np.isfinite(knots)])
    sums = np.array([total(c) for c in knots])
    j = np.searchsorted(sums, 1.0)
    if j == 0:
        c = knots[0]
    elif j == len(knots):
        c = knots[-1]
    else:
        c0, c1, s0, s1 = knots[j - 1], knots[j], sums[j - 1], sums[j]
        c = c1 if s1 == s0 else c0 + (1.0 - s0) * (c1 - c0) / (s1 - s0)
    out = np.clip(c * p, lo, hi)
    short = 1.0 - out.sum()
    if short > 1e-12 and np.any(p == 0):
        # every positive entry is capped; zero entries share what is left
        out[p == 0] += short / np.count_nonzero(p == 0)
        return out
    # absorb float residue into the interior entries
    interior = (out > lo) & (out < hi)
    if interior.any():
        out[interior] += (1.0 - out.sum()) * out[interior] / out[interior].sum()
    return out


def tables_from_draws(draws: ThetaDraw, week: int, psi: float, lo: float, hi: float) -> RandomizationTable:
    arms = draws.arms
    rho1 = stage1_optimality_probs(draws, arms)
    rho2 = _stage2_rho(draws, arms)
    pi1 = clip_and_renormalize(damp_and_normalize(rho1, psi), lo, hi)
    pi2 = np.stack([clip_and_renormalize(damp_and_normalize(r, psi), lo, hi) for r in rho2])
    return RandomizationTable(week, pi1, pi2)


def build_tables(dataset: Dataset, week: int, config, rng: np.random.Generator,
                 burn_in_week: Optional[int] = None) -> RandomizationTable:
    """Randomization table for ``[week, week + 1)`` from data seen before ``week``.

    ``config`` is a :class:`~smartrar.simulator.TrialConfig`. Weeks up to and
    including ``burn_in_week`` (and every week of an SR trial) get exact
    uniform tables.
    """
    arms = config.arms
    schedule = config.scheme.damping
    if schedule is None or (burn_in_week is not None and week <= burn_in_week):
        return RandomizationTable.uniform(week, arms)
    posts = posteriors_from_counts(counts_at_week(dataset, week), arms)
    draws = sample_theta_draws(posts, config.M, rng)
    return tables_from_draws(draws, week, psi_at(schedule, week), config.clip_lo, config.clip_hi)
