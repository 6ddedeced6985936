"""Two-stage SMART simulation with weekly Thompson-sampling updates.

Event timing (weeks after enrollment): Y1 and R1 are realised at +12 and a
non-responder is assigned a stage-2 arm that same week; a responder's Y1 is
recorded at +13. Y2 and R2 are realised at +25, Y2 recorded at +26, and
rescue-therapy pCR Y3 at +38. Outcomes are drawn when the subject is
assigned, but only enter the weekly tallies once their recorded week has
passed.
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .randomizer import DampingSchedule, RandomizationTable, build_tables
from .regimes import ScenarioSpec
from .trial import MISSING, ArmSets, Dataset, PAPER_ARMS

_TS_LABEL = re.compile(r"^TS\(\s*([0-9.]*)\s*(\*?\s*t\s*/\s*T_?end)?\s*\)$")


@dataclass(frozen=True)
class Scheme:
    """SR (``damping is None``) or Thompson sampling with a damping schedule."""

    label: str
    damping: Optional[DampingSchedule] = None

    @property
    def adaptive(self) -> bool:
        return self.damping is not None

    @property
    def slug(self) -> str:
        return re.sub(r"[^A-Za-z0-9.]+", "_", self.label).strip("_")


def parse_scheme(label: str, T_end: int = 143) -> Scheme:
    """Parse ``SR``, ``TS(0.5)``, ``TS(0.5t/T_end)`` or ``TS(t/T_end)``."""
    text = label.strip()
    if text.upper() == "SR":
        return Scheme("SR")
    m = _TS_LABEL.match(text.replace(" ", ""))
    if not m:
        raise ValueError(f"unrecognised scheme label {label!r}")
    psi = float(m.group(1)) if m.group(1) else 1.0
    kind = "linear" if m.group(2) else "constant"
    if kind == "constant" and not m.group(1):
        raise ValueError(f"unrecognised scheme label {label!r}")
    return Scheme(text, DampingSchedule(kind, psi, T_end))


PAPER_SCHEMES = ("SR", "TS(0.25)", "TS(0.5)", "TS(0.75)", "TS(1)", "TS(0.5t/T_end)", "TS(t/T_end)")


@dataclass(frozen=True)
class EventOffsets:
    stage2: int = 12
    y1_record: int = 13
    y2: int = 25
    y2_record: int = 26
    y3: int = 38


@dataclass(frozen=True)
class TrialConfig:
    arms: ArmSets = PAPER_ARMS
    n_s: int = 200
    T_enroll: int = 130
    T_end: int = 143
    burn_in_count: int = 20
    M: int = 1000
    scheme: Scheme = field(default_factory=lambda: Scheme("SR"))
    clip_lo: float = 0.05
    clip_hi: float = 0.95
    offsets: EventOffsets = field(default_factory=EventOffsets)

    def __post_init__(self):
        o = self.offsets
        if not (0 < o.stage2 < o.y1_record and o.stage2 < o.y2 < o.y2_record and o.y2 < o.y3):
            raise ValueError("event offsets must increase along the trajectory")
        if self.T_end < self.T_enroll + o.stage2:
            raise ValueError("T_end must cover the last stage-2 assignment")
        if self.n_s < 1 or self.T_enroll < 1 or self.M < 1:
            raise ValueError("n_s, T_enroll and M must be positive")

    def with_scheme(self, label: str) -> "TrialConfig":
        return replace(self, scheme=parse_scheme(label, self.T_end))

    @classmethod
    def from_dict(cls, d: dict, arms: Optional[ArmSets] = None) -> "TrialConfig":
        d = dict(d)
        kw = {k: d.pop(k) for k in ("n_s", "T_enroll", "T_end", "burn_in_count", "M",
                                    "clip_lo", "clip_hi") if k in d}
        if "offsets" in d:
            kw["offsets"] = EventOffsets(**d.pop("offsets"))
        T_end = kw.get("T_end", 143)
        if "scheme" in d:
            kw["scheme"] = parse_scheme(d.pop("scheme"), T_end)
        if "stage1_arms" in d:
            arms = ArmSets(tuple(d.pop("stage1_arms")), tuple(d.pop("stage2_arms")))
        if arms is not None:
            kw["arms"] = arms
        if d:
            raise ValueError(f"unknown config fields: {sorted(d)}")
        return cls(**kw)

    @classmethod
    def load(cls, path, arms: Optional[ArmSets] = None) -> "TrialConfig":
        return cls.from_dict(json.loads(Path(path).read_text()), arms)

    def to_dict(self) -> dict:
        return {
            "stage1_arms": list(self.arms.stage1_arms),
            "stage2_arms": list(self.arms.stage2_arms),
            "n_s": self.n_s, "T_enroll": self.T_enroll, "T_end": self.T_end,
            "burn_in_count": self.burn_in_count, "M": self.M,
            "scheme": self.scheme.label,
            "clip_lo": self.clip_lo, "clip_hi": self.clip_hi,
            "offsets": asdict(self.offsets),
        }


def substream(seed, *keys: int) -> np.random.SeedSequence:
    """Deterministic child stream of ``seed`` addressed by integer ``keys``."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + keys)
    return np.random.SeedSequence(int(seed), spawn_key=keys)


# substream keys under one replicate
OUTCOME_STREAM, TABLE_STREAM, BAYES_STREAM = 0, 1, 2


def draw_enrollment(n_s: int, T_enroll: int, rng: np.random.Generator):
    """Uniform enrollment weeks on ``1..T_enroll``.

    Returns ``(ids, weeks)`` sorted by week; ``ids`` are the original draw
    indices (stable within a week).
    """
    weeks = rng.integers(1, T_enroll + 1, size=n_s)
    order = np.argsort(weeks, kind="stable")
    return order, weeks[order]


def responder_prob(y, scenario: ScenarioSpec):
    """P(R = 1 | Y = y): sensitivity if y = 1, 1 - specificity otherwise."""
    return np.where(np.asarray(y) == 1, scenario.lambda_sens, 1 - scenario.lambda_spec)


def simulate_stage(scenario: ScenarioSpec, stage: int, a1, a2, prior_pcr, rng: np.random.Generator):
    """Draw (Y, R) for one stage; arms are indices and may be arrays.

    pCR is durable: a subject with ``prior_pcr == 1`` keeps Y = 1. Stage 3
    (rescue) has no responder assessment and returns ``R = None``.
    """
    a1 = np.asarray(a1)
    prior = np.asarray(prior_pcr)
    if stage == 1:
        if np.any(prior != 0):
            raise ValueError("stage 1 has no prior pCR")
        p = scenario.p1[a1]
    else:
        if a2 is None:
            raise ValueError(f"stage {stage} requires a stage-2 arm")
        p = (scenario.p2 if stage == 2 else scenario.p3)[a1, np.asarray(a2)]
    y = np.where(prior == 1, 1, (rng.random(p.shape) < p).astype(np.int64))
    if stage == 3:
        return y, None
    r = (rng.random(y.shape) < responder_prob(y, scenario)).astype(np.int64)
    return y, r


@dataclass
class Trial:
    """A completed simulated trial.

    ``latent`` holds the full pCR path ``y1, y2, y3`` drawn for each subject
    (MISSING where a stage was never reached), including values the
    observed data hide.
    """

    dataset: Dataset
    tables: list[RandomizationTable]
    burn_in_week: int
    scheme: Scheme
    latent: dict = field(default_factory=dict)

    @property
    def final_table(self) -> RandomizationTable:
        """Table of the last week in which any assignment was made."""
        return self.tables[-1]

    def pi1_trajectory(self, T_end: int) -> np.ndarray:
        """pi1 in force at each week ``1..T_end`` (carried forward between updates)."""
        arms = self.dataset.arms
        out = np.empty((T_end, arms.n1))
        current = RandomizationTable.uniform(0, arms).pi1
        by_week = {t.week: t for t in self.tables}
        for w in range(1, T_end + 1):
            if w in by_week:
                current = by_week[w].pi1
            out[w - 1] = current
        return out

    def pi2_trajectory(self, T_end: int) -> np.ndarray:
        arms = self.dataset.arms
        out = np.empty((T_end, arms.n1, arms.n2))
        current = RandomizationTable.uniform(0, arms).pi2
        by_week = {t.week: t for t in self.tables}
        for w in range(1, T_end + 1):
            if w in by_week:
                current = by_week[w].pi2
            out[w - 1] = current
        return out


    def tables_csv(self, path=None) -> str:
        """Long-form dump of every computed table: week, stage, a1, a2, prob."""
        arms = self.dataset.arms
        lines = ["week,stage,a1,a2,prob"]
        for t in self.tables:
            for i, a1 in enumerate(arms.stage1_arms):
                lines.append(f"{t.week},1,{a1},,{float(t.pi1[i])!r}")
            for i, a1 in enumerate(arms.stage1_arms):
                for j, a2 in enumerate(arms.stage2_arms):
                    lines.append(f"{t.week},2,{a1},{a2},{float(t.pi2[i, j])!r}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw: one category per row of ``probs`` (or shared vector)."""
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = 1.0
    if cdf.ndim == 1:
        return np.searchsorted(cdf, u, side="right")
    return (u[:, None] >= cdf).sum(axis=1)


def run_trial(scenario: ScenarioSpec, config: TrialConfig, seed) -> Trial:
    """Simulate one complete trial.

    ``seed`` is an int or ``SeedSequence`` for this replicate; outcomes and
    each week's posterior draws use separate deterministic substreams.
    Subjects enrolling no later than the burn-in week (the week of the
    ``burn_in_count``-th enrollment) are randomized uniformly at both stages.
    """
    arms = config.arms
    if arms != scenario.arms:
        raise ValueError("config and scenario arm sets differ")
    off = config.offsets
    rng = np.random.default_rng(substream(seed, OUTCOME_STREAM))

    ids, weeks = draw_enrollment(config.n_s, config.T_enroll, rng)
    n = config.n_s
    ds = Dataset.empty(arms, n)
    ds.id[:] = ids
    ds.enroll_week[:] = weeks
    latent = {k: np.full(n, MISSING, dtype=np.int64) for k in ("y1", "y2", "y3")}
    latent_y1 = latent["y1"]

    if config.scheme.adaptive and n >= config.burn_in_count:
        burn_in_week = int(weeks[config.burn_in_count - 1])
    else:
        # SR, or too few subjects to ever leave burn-in
        burn_in_week = config.T_end
    in_burn_in = weeks <= burn_in_week

    starts = np.searchsorted(weeks, np.arange(1, config.T_end + 2))
    uniform = RandomizationTable.uniform(0, arms)
    tables: list[RandomizationTable] = []

    for t in range(1, config.T_end + 1):
        new = np.arange(starts[t - 1], starts[t]) if t <= config.T_enroll else np.empty(0, int)
        e2 = t - off.stage2
        stage2 = np.empty(0, int)
        if 1 <= e2 <= config.T_enroll:
            cohort = np.arange(starts[e2 - 1], starts[e2])
            stage2 = cohort[ds.r1[cohort] == 0]
        if new.size == 0 and stage2.size == 0:
            continue

        needs_table = (new.size and not in_burn_in[new[0]]) or (
            stage2.size and not in_burn_in[stage2].all())
        if needs_table:
            table_rng = np.random.default_rng(substream(seed, TABLE_STREAM, t))
            table = build_tables(ds, t, config, table_rng, burn_in_week)
        else:
            table = RandomizationTable.uniform(t, arms)
        tables.append(table)

        if new.size:
            pi1 = uniform.pi1 if in_burn_in[new[0]] else table.pi1
            a1 = _categorical(pi1, rng.random(new.size))
            y1, r1 = simulate_stage(scenario, 1, a1, None, np.zeros(new.size, int), rng)
            ds.a1[new], ds.pi1[new] = a1, pi1[a1]
            ds.r1[new], ds.r1_week[new] = r1, weeks[new] + off.stage2
            latent_y1[new] = y1
            resp = new[r1 == 1]
            ds.y1[resp] = y1[r1 == 1]
            ds.y1_week[resp] = weeks[resp] + off.y1_record

        if stage2.size:
            a1 = ds.a1[stage2]
            pi2_rows = np.where(in_burn_in[stage2][:, None], uniform.pi2[a1], table.pi2[a1])
            a2 = _categorical(pi2_rows, rng.random(stage2.size))
            y2, r2 = simulate_stage(scenario, 2, a1, a2, latent_y1[stage2], rng)
            y3, _ = simulate_stage(scenario, 3, a1, a2, y2, rng)
            latent["y2"][stage2], latent["y3"][stage2] = y2, y3
            ew = weeks[stage2]
            ds.a2[stage2], ds.pi2[stage2], ds.a2_week[stage2] = a2, pi2_rows[np.arange(a2.size), a2], t
            ds.r2[stage2], ds.r2_week[stage2] = r2, ew + off.y2
            resp = r2 == 1
            ds.y2[stage2[resp]] = y2[resp]
            ds.y2_week[stage2[resp]] = ew[resp] + off.y2_record
            ds.y3[stage2[~resp]] = y3[~resp]
            ds.y3_week[stage2[~resp]] = ew[~resp] + off.y3

    return Trial(ds, tables, burn_in_week, config.scheme, latent)
