"""Conjugate Beta posteriors for the stage-wise response and pCR probabilities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trial import ArmSets, CountTable

COMPONENTS = ("theta1", "gamma1", "theta2", "gamma2", "gamma3")


@dataclass(frozen=True)
class PosteriorSet:
    """Beta(alpha, beta) parameters for every component.

    ``theta1``/``gamma1`` are indexed by stage-1 arm; ``theta2``, ``gamma2``
    and ``gamma3`` by (stage-1 arm, stage-2 arm). Each entry is an
    ``(alpha, beta)`` pair of integer arrays.
    """

    arms: ArmSets
    theta1: tuple[np.ndarray, np.ndarray]
    gamma1: tuple[np.ndarray, np.ndarray]
    theta2: tuple[np.ndarray, np.ndarray]
    gamma2: tuple[np.ndarray, np.ndarray]
    gamma3: tuple[np.ndarray, np.ndarray]

    def mean(self, component: str) -> np.ndarray:
        a, b = getattr(self, component)
        return a / (a + b)


def posteriors_from_counts(counts: CountTable, arms: ArmSets) -> PosteriorSet:
    """Update independent Beta(1, 1) priors with the week's tallies."""

    def beta(successes, trials):
        return (1 + successes, 1 + trials - successes)

    return PosteriorSet(
        arms=arms,
        theta1=beta(counts.r1_plus, counts.n1),
        gamma1=beta(counts.y1_plus, counts.n1_star),
        theta2=beta(counts.r2_plus, counts.n2),
        gamma2=beta(counts.y2_plus, counts.n2_star),
        gamma3=beta(counts.y3_plus, counts.n3_star),
    )


@dataclass(frozen=True)
class ThetaDraw:
    """A realisation of every response/pCR probability.

    Arrays may carry leading batch dimensions: a batch of ``M`` posterior
    draws has ``theta1.shape == (M, n1)`` and ``theta2.shape == (M, n1, n2)``.
    Indexing a batch returns a single draw.
    """

    arms: ArmSets
    theta1: np.ndarray
    gamma1: np.ndarray
    theta2: np.ndarray
    gamma2: np.ndarray
    gamma3: np.ndarray

    @property
    def batch_shape(self) -> tuple:
        return self.theta1.shape[:-1]

    def __len__(self) -> int:
        if not self.batch_shape:
            raise TypeError("single ThetaDraw has no length")
        return self.batch_shape[0]

    def __getitem__(self, m) -> "ThetaDraw":
        return ThetaDraw(self.arms, *(getattr(self, c)[m] for c in COMPONENTS))

    def __iter__(self):
        for m in range(len(self)):
            yield self[m]


def sample_theta_draws(posteriors: PosteriorSet, M: int, rng: np.random.Generator) -> ThetaDraw:
    """Draw ``M`` independent joint posterior samples (a batched ThetaDraw).

    Components are drawn in the fixed order theta1, gamma1, theta2, gamma2,
    gamma3, so the output is a deterministic function of the generator state.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    out = {}
    for c in COMPONENTS:
        a, b = getattr(posteriors, c)
        out[c] = rng.beta(a, b, size=(M,) + np.shape(a))
    return ThetaDraw(posteriors.arms, **out)
