"""Regime values by g-computation, argmax helpers and the generative truth.

All argmaxes break ties by the lowest (a1-index, a2-index) pair, which is
what ``np.argmax`` does on the row-major flattened regime grid.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .posterior import ThetaDraw
from .trial import ArmSets, Regime


class DegenerateCellError(ValueError):
    """A conditioning probability needed to map a scenario to theta is zero."""


def regime_value(theta: ThetaDraw, regime: Regime):
    """Probability of pCR if everyone followed ``regime``.

    Works on batched draws, returning one value per draw.
    """
    i = theta.arms.index1(regime.a1)
    j = theta.arms.index2(regime.a2)
    t1 = theta.theta1[..., i]
    t2 = theta.theta2[..., i, j]
    return (t1 * theta.gamma1[..., i]
            + (1 - t1) * t2 * theta.gamma2[..., i, j]
            + (1 - t1) * (1 - t2) * theta.gamma3[..., i, j])


def stage2_value(theta: ThetaDraw, a1, a2):
    """Probability of pCR for a stage-1 non-responder to ``a1`` given ``a2``."""
    i = theta.arms.index1(a1)
    j = theta.arms.index2(a2)
    t2 = theta.theta2[..., i, j]
    return t2 * theta.gamma2[..., i, j] + (1 - t2) * theta.gamma3[..., i, j]


def value_grid(theta: ThetaDraw) -> np.ndarray:
    """All regime values, shape ``batch + (n1, n2)``."""
    t1 = theta.theta1[..., :, None]
    return t1 * theta.gamma1[..., :, None] + (1 - t1) * stage2_grid(theta)


def stage2_grid(theta: ThetaDraw) -> np.ndarray:
    t2 = theta.theta2
    return t2 * theta.gamma2 + (1 - t2) * theta.gamma3


def optimal_regime_index(theta: ThetaDraw) -> np.ndarray:
    """Flat index ``a1_idx * n2 + a2_idx`` of the optimal regime per draw."""
    grid = value_grid(theta)
    return np.argmax(grid.reshape(grid.shape[:-2] + (-1,)), axis=-1)


def optimal_regime(theta: ThetaDraw, arms: Optional[ArmSets] = None) -> Regime:
    arms = arms or theta.arms
    k = int(optimal_regime_index(theta))
    return Regime(arms.stage1_arms[k // arms.n2], arms.stage2_arms[k % arms.n2])


def optimal_stage2(theta: ThetaDraw, a1, arms: Optional[ArmSets] = None):
    arms = arms or theta.arms
    i = arms.index1(a1)
    return arms.stage2_arms[int(np.argmax(stage2_grid(theta)[..., i, :], axis=-1))]


@dataclass(frozen=True)
class ScenarioSpec:
    """Generative truth: stage-wise pCR rates and preRCB accuracy.

    ``p1`` has shape ``(n1,)``; ``p2`` and ``p3`` have shape ``(n1, n2)``,
    indexed in ``arms`` order. ``optimal_regimes`` optionally pins which
    regimes count as optimal for reporting (used by the null scenario,
    where every regime ties).
    """

    arms: ArmSets
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    lambda_sens: float
    lambda_spec: float
    name: str = ""
    optimal_regimes: Optional[tuple[Regime, ...]] = field(default=None)

    def __post_init__(self):
        for attr, shape in (("p1", (self.arms.n1,)), ("p2", (self.arms.n1, self.arms.n2)),
                            ("p3", (self.arms.n1, self.arms.n2))):
            v = np.broadcast_to(np.asarray(getattr(self, attr), dtype=float), shape).copy()
            if np.any((v < 0) | (v > 1)):
                raise ValueError(f"{attr} entries must lie in [0, 1]")
            object.__setattr__(self, attr, v)
        for attr in ("lambda_sens", "lambda_spec"):
            if not 0 <= getattr(self, attr) <= 1:
                raise ValueError(f"{attr} must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        arms = ArmSets(tuple(d["stage1_arms"]), tuple(d["stage2_arms"]))
        opt = d.get("optimal_regimes")
        return cls(
            arms=arms,
            p1=_grid(d["p1"], arms, stage=1),
            p2=_grid(d["p2"], arms, stage=2),
            p3=_grid(d["p3"], arms, stage=2),
            lambda_sens=float(d["lambda_sens"]),
            lambda_spec=float(d["lambda_spec"]),
            name=d.get("name", ""),
            optimal_regimes=None if opt is None else tuple(Regime(*r) for r in opt),
        )

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "stage1_arms": list(self.arms.stage1_arms),
            "stage2_arms": list(self.arms.stage2_arms),
            "p1": self.p1.tolist(),
            "p2": self.p2.tolist(),
            "p3": self.p3.tolist(),
            "lambda_sens": self.lambda_sens,
            "lambda_spec": self.lambda_spec,
        }
        if self.optimal_regimes is not None:
            d["optimal_regimes"] = [list(r) for r in self.optimal_regimes]
        return d

    def true_values(self) -> np.ndarray:
        """True regime values, shape ``(n1, n2)``."""
        p1 = self.p1[:, None]
        lam = self.lambda_spec
        return p1 + self.p2 * (1 - p1) * lam + self.p3 * (1 - self.p2) * (1 - p1) * lam ** 2

    def optimal(self) -> list[Regime]:
        """Regimes counted as optimal (all exact maximisers unless pinned)."""
        if self.optimal_regimes is not None:
            return list(self.optimal_regimes)
        v = self.true_values()
        return [r for r in self.arms.regimes()
                if v[self.arms.index1(r.a1), self.arms.index2(r.a2)] == v.max()]

    def worst(self) -> Regime:
        v = self.true_values()
        k = int(np.argmin(v))
        return self.arms.regimes()[k]


def _grid(value, arms: ArmSets, stage: int) -> np.ndarray:
    """Accept a scalar, a nested list, or a mapping keyed by arm / "a1,a2"."""
    if isinstance(value, dict):
        if stage == 1:
            return np.array([float(value[str(a)]) for a in arms.stage1_arms])
        return np.array([[float(value[f"{a1},{a2}"]) for a2 in arms.stage2_arms]
                         for a1 in arms.stage1_arms])
    shape = (arms.n1,) if stage == 1 else (arms.n1, arms.n2)
    return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()


def true_regime_value(scenario: ScenarioSpec, regime: Regime) -> float:
    """Closed-form value of ``regime`` under the generative model.

    Depends on the preRCB specificity but not on its sensitivity.
    """
    i = scenario.arms.index1(regime.a1)
    j = scenario.arms.index2(regime.a2)
    p1, p2, p3 = scenario.p1[i], scenario.p2[i, j], scenario.p3[i, j]
    lam = scenario.lambda_spec
    return float(p1 + p2 * (1 - p1) * lam + p3 * (1 - p2) * (1 - p1) * lam ** 2)


def scenario_to_theta(scenario: ScenarioSpec, arms: Optional[ArmSets] = None) -> ThetaDraw:
    """Response/pCR probabilities induced by a generative scenario.

    Accounts for preRCB misclassification and pCR durability, so that
    ``regime_value(scenario_to_theta(s), r) == true_regime_value(s, r)``.
    """
    arms = arms or scenario.arms
    sens, spec = scenario.lambda_sens, scenario.lambda_spec
    p1 = scenario.p1
    p2, p3 = scenario.p2, scenario.p3

    theta1 = sens * p1 + (1 - spec) * (1 - p1)
    if np.any(theta1 <= 0) or np.any(theta1 >= 1):
        raise DegenerateCellError("stage-1 response probability is 0 or 1")
    gamma1 = sens * p1 / theta1
    # pCR status of stage-1 non-responders
    y0 = (spec * (1 - p1) / (1 - theta1))[:, None]
    y1 = ((1 - sens) * p1 / (1 - theta1))[:, None]

    q2 = p2 * y0 + y1
    theta2 = sens * q2 + (1 - spec) * (1 - q2)
    if np.any(theta2 <= 0) or np.any(theta2 >= 1):
        raise DegenerateCellError("stage-2 response probability is 0 or 1")
    gamma2 = sens * q2 / theta2
    gamma3 = (p3 * (1 - p2) * y0 * spec + p2 * y0 * (1 - sens) + y1 * (1 - sens)) / (1 - theta2)
    return ThetaDraw(arms, theta1, gamma1, theta2, gamma2, gamma3)
