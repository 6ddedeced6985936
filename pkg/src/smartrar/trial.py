"""Trial data model: arms, regimes, subject trajectories and week-t counts.

Subject data are held column-wise in :class:`Dataset` (one numpy array per
field) so that weekly tallies stay cheap inside the simulation loop.
:class:`SubjectRecord` is the row view used for I/O and for per-subject
predicates.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Hashable, Iterable, Iterator, NamedTuple, Optional, Sequence

import numpy as np

MISSING = -1

EVENTS = ("r1", "y1", "a2", "r2", "y2", "y3")
CSV_COLUMNS = (
    "id", "enroll_week", "a1", "pi1", "r1", "y1", "a2", "pi2", "r2", "y2", "y3",
    "r1_week", "y1_week", "a2_week", "r2_week", "y2_week", "y3_week",
)


class IncompleteTrajectoryError(ValueError):
    """Raised when a record has no terminal pCR indicator."""


@dataclass(frozen=True)
class ArmSets:
    """Ordered stage-1 and stage-2 option sets for one subtype."""

    stage1_arms: tuple[Hashable, ...]
    stage2_arms: tuple[Hashable, ...]

    def __post_init__(self):
        object.__setattr__(self, "stage1_arms", tuple(self.stage1_arms))
        object.__setattr__(self, "stage2_arms", tuple(self.stage2_arms))
        for name in ("stage1_arms", "stage2_arms"):
            arms = getattr(self, name)
            if not arms:
                raise ValueError(f"{name} must be non-empty")
            if len(set(arms)) != len(arms):
                raise ValueError(f"{name} contains duplicate identifiers: {arms}")

    @property
    def n1(self) -> int:
        return len(self.stage1_arms)

    @property
    def n2(self) -> int:
        return len(self.stage2_arms)

    def index1(self, arm) -> int:
        return self.stage1_arms.index(arm)

    def index2(self, arm) -> int:
        return self.stage2_arms.index(arm)

    def regimes(self) -> list["Regime"]:
        """All embedded regimes in lexicographic (a1-index, a2-index) order."""
        return [Regime(a1, a2) for a1 in self.stage1_arms for a2 in self.stage2_arms]

    def regime_index(self, regime: "Regime") -> int:
        return self.index1(regime.a1) * self.n2 + self.index2(regime.a2)


PAPER_ARMS = ArmSets((0, 1), (0, 1, 2))


class Regime(NamedTuple):
    """Embedded regime {a1, a2}: give a1, then a2 to stage-1 non-responders."""

    a1: Hashable
    a2: Hashable


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's observed trajectory plus assignment-time probabilities.

    Arms are stored as identifiers from the owning :class:`ArmSets`.
    ``event_weeks`` maps each of ``r1, y1, a2, r2, y2, y3`` to the week it
    was observed (absent keys were never observed).
    """

    id: int
    enroll_week: int
    a1: Hashable
    pi1_at_assignment: float
    r1: int
    y1: Optional[int] = None
    a2: Optional[Hashable] = None
    pi2_at_assignment: Optional[float] = None
    r2: Optional[int] = None
    y2: Optional[int] = None
    y3: Optional[int] = None
    event_weeks: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.r1 == 1:
            ok = self.a2 is None and self.r2 is None and self.y2 is None and self.y3 is None
        else:
            ok = self.a2 is not None and self.y1 is None and (
                (self.r2 == 1 and self.y3 is None) or (self.r2 == 0 and self.y2 is None)
                or self.r2 is None
            )
        if not ok:
            raise ValueError(f"record {self.id}: fields inconsistent with r1/r2 branch structure")


def subject_outcome(record: SubjectRecord) -> int:
    """Overall pCR indicator Y: the single terminal pCR actually observed."""
    if record.r1 == 1:
        y = record.y1
    elif record.r2 == 1:
        y = record.y2
    elif record.r2 == 0:
        y = record.y3
    else:
        y = None
    if y is None:
        raise IncompleteTrajectoryError(f"record {record.id} has no terminal pCR observed")
    return int(y)


def consistent_with_regime(record: SubjectRecord, regime: Regime) -> bool:
    """Whether the subject's experience matches following ``regime``.

    A stage-1 responder is consistent with every regime sharing its a1.
    """
    return record.a1 == regime.a1 and (record.r1 == 1 or record.a2 == regime.a2)


@dataclass
class Dataset:
    """Column store of subject trajectories for one trial.

    Arm columns hold indices into ``arms``; missing binaries, arms and weeks
    are ``MISSING`` (-1) and missing probabilities are NaN.
    """

    arms: ArmSets
    id: np.ndarray
    enroll_week: np.ndarray
    a1: np.ndarray
    pi1: np.ndarray
    r1: np.ndarray
    y1: np.ndarray
    a2: np.ndarray
    pi2: np.ndarray
    r2: np.ndarray
    y2: np.ndarray
    y3: np.ndarray
    r1_week: np.ndarray
    y1_week: np.ndarray
    a2_week: np.ndarray
    r2_week: np.ndarray
    y2_week: np.ndarray
    y3_week: np.ndarray

    @classmethod
    def empty(cls, arms: ArmSets, n: int = 0) -> "Dataset":
        kw = {}
        for f in fields(cls):
            if f.name == "arms":
                continue
            if f.name in ("pi1", "pi2"):
                kw[f.name] = np.full(n, np.nan)
            else:
                kw[f.name] = np.full(n, MISSING, dtype=np.int64)
        kw["id"] = np.arange(n, dtype=np.int64)
        return cls(arms=arms, **kw)

    def __len__(self) -> int:
        return len(self.id)

    def __iter__(self) -> Iterator[SubjectRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def _columns(self):
        return [f.name for f in fields(self) if f.name != "arms"]

    def take(self, mask) -> "Dataset":
        return Dataset(self.arms, **{c: getattr(self, c)[mask] for c in self._columns()})

    def outcome(self) -> np.ndarray:
        """Vectorised :func:`subject_outcome` (raises if any trajectory is open)."""
        y = np.where(self.r1 == 1, self.y1, np.where(self.r2 == 1, self.y2, self.y3))
        if np.any(y == MISSING):
            bad = int(self.id[np.argmax(y == MISSING)])
            raise IncompleteTrajectoryError(f"record {bad} has no terminal pCR observed")
        return y

    def consistent(self, regime: Regime) -> np.ndarray:
        """Vectorised :func:`consistent_with_regime`."""
        i1, i2 = self.arms.index1(regime.a1), self.arms.index2(regime.a2)
        return (self.a1 == i1) & ((self.r1 == 1) | (self.a2 == i2))

    def record(self, i: int) -> SubjectRecord:
        s1, s2 = self.arms.stage1_arms, self.arms.stage2_arms

        def opt(col):
            v = int(getattr(self, col)[i])
            return None if v == MISSING else v

        weeks = {e: int(getattr(self, e + "_week")[i]) for e in EVENTS
                 if getattr(self, e + "_week")[i] != MISSING}
        a2 = opt("a2")
        return SubjectRecord(
            id=int(self.id[i]),
            enroll_week=int(self.enroll_week[i]),
            a1=s1[int(self.a1[i])],
            pi1_at_assignment=float(self.pi1[i]),
            r1=int(self.r1[i]),
            y1=opt("y1"),
            a2=None if a2 is None else s2[a2],
            pi2_at_assignment=None if np.isnan(self.pi2[i]) else float(self.pi2[i]),
            r2=opt("r2"),
            y2=opt("y2"),
            y3=opt("y3"),
            event_weeks=weeks,
        )

    @classmethod
    def from_records(cls, records: Iterable[SubjectRecord], arms: ArmSets) -> "Dataset":
        records = list(records)
        ds = cls.empty(arms, len(records))
        for i, r in enumerate(records):
            ds.id[i] = r.id
            ds.enroll_week[i] = r.enroll_week
            ds.a1[i] = arms.index1(r.a1)
            ds.pi1[i] = r.pi1_at_assignment
            ds.r1[i] = r.r1
            for col in ("y1", "r2", "y2", "y3"):
                v = getattr(r, col)
                if v is not None:
                    getattr(ds, col)[i] = v
            if r.a2 is not None:
                ds.a2[i] = arms.index2(r.a2)
            if r.pi2_at_assignment is not None:
                ds.pi2[i] = r.pi2_at_assignment
            for e, w in r.event_weeks.items():
                getattr(ds, e + "_week")[i] = w
        return ds

    # -- CSV ---------------------------------------------------------------

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        s1, s2 = self.arms.stage1_arms, self.arms.stage2_arms
        for i in range(len(self)):
            row = []
            for col in CSV_COLUMNS:
                v = getattr(self, col)[i]
                if col in ("pi1", "pi2"):
                    row.append("" if np.isnan(v) else repr(float(v)))
                elif v == MISSING:
                    row.append("")
                elif col == "a1":
                    row.append(s1[int(v)])
                elif col == "a2":
                    row.append(s2[int(v)])
                else:
                    row.append(int(v))
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, arms: Optional[ArmSets] = None) -> "Dataset":
        """Read a dataset CSV; arms are inferred from the data when not given."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if arms is None:
            arms = ArmSets(
                _sorted_labels(r["a1"] for r in rows),
                _sorted_labels(r["a2"] for r in rows if r["a2"] != ""),
            )
        lookup1 = {str(a): k for k, a in enumerate(arms.stage1_arms)}
        lookup2 = {str(a): k for k, a in enumerate(arms.stage2_arms)}
        ds = cls.empty(arms, len(rows))
        for i, row in enumerate(rows):
            for col in CSV_COLUMNS:
                v = row[col]
                if v == "":
                    continue
                if col in ("pi1", "pi2"):
                    getattr(ds, col)[i] = float(v)
                elif col == "a1":
                    ds.a1[i] = lookup1[v]
                elif col == "a2":
                    ds.a2[i] = lookup2[v]
                else:
                    getattr(ds, col)[i] = int(v)
        return ds


def _sorted_labels(values: Iterable[str]) -> tuple:
    labels = set(values)
    if all(v.lstrip("-").isdigit() for v in labels):
        return tuple(sorted(int(v) for v in labels))
    return tuple(sorted(labels))


@dataclass
class CountTable:
    """Sufficient statistics of the data observed strictly before a week.

    Stage-1 arrays have shape ``(n_stage1,)``; stage-2/3 arrays have shape
    ``(n_stage1, n_stage2)``.
    """

    n1: np.ndarray
    r1_plus: np.ndarray
    n1_star: np.ndarray
    y1_plus: np.ndarray
    n2: np.ndarray
    r2_plus: np.ndarray
    n2_star: np.ndarray
    y2_plus: np.ndarray
    n3_star: np.ndarray
    y3_plus: np.ndarray

    def check(self) -> None:
        assert np.all(self.r1_plus <= self.n1)
        assert np.all((self.y1_plus <= self.n1_star) & (self.n1_star <= self.r1_plus))
        assert np.all(self.r2_plus <= self.n2)
        assert np.all((self.y2_plus <= self.n2_star) & (self.n2_star <= self.r2_plus))
        assert np.all((self.y3_plus <= self.n3_star) & (self.n3_star <= self.n2 - self.r2_plus))


def _seen(weeks: np.ndarray, week: float) -> np.ndarray:
    return (weeks != MISSING) & (weeks < week)


def counts_at_week(dataset: Dataset, week: float) -> CountTable:
    """Tally events whose observation week is strictly before ``week``.

    Pass ``week=np.inf`` for the final-data tallies.
    """
    k1, k2 = dataset.arms.n1, dataset.arms.n2
    a1 = dataset.a1

    def c1(mask):
        return np.bincount(a1[mask], minlength=k1)

    seen_r1 = _seen(dataset.r1_week, week)
    seen_y1 = _seen(dataset.y1_week, week) & (dataset.r1 == 1)
    cell = a1 * k2 + dataset.a2

    def c2(mask):
        return np.bincount(cell[mask], minlength=k1 * k2).reshape(k1, k2)

    seen_r2 = _seen(dataset.r2_week, week) & (dataset.r1 == 0)
    seen_y2 = _seen(dataset.y2_week, week) & (dataset.r2 == 1)
    seen_y3 = _seen(dataset.y3_week, week) & (dataset.r2 == 0)
    return CountTable(
        n1=c1(seen_r1),
        r1_plus=c1(seen_r1 & (dataset.r1 == 1)),
        n1_star=c1(seen_y1),
        y1_plus=c1(seen_y1 & (dataset.y1 == 1)),
        n2=c2(seen_r2),
        r2_plus=c2(seen_r2 & (dataset.r2 == 1)),
        n2_star=c2(seen_y2),
        y2_plus=c2(seen_y2 & (dataset.y2 == 1)),
        n3_star=c2(seen_y3),
        y3_plus=c2(seen_y3 & (dataset.y3 == 1)),
    )


def counts_from_records(records: Sequence[SubjectRecord], arms: ArmSets, week: float) -> CountTable:
    return counts_at_week(Dataset.from_records(records, arms), week)
