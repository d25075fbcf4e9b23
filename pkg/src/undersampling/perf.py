"""Fixed-target anytime performance: first hitting times, ECDF, AUC and AOC.

A run is summarised by the evaluation count at which its best-so-far
precision first reaches each target. The ECDF at evaluation ``t`` is the
fraction of (run, target) pairs already hit, and AUC sums that fraction over
the integer evaluation grid ``1..B``. AOC is ``B - AUC`` so that smaller is
better.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ParameterError

NEVER = math.inf
DEFAULT_BUDGET = 10_000


@dataclass(frozen=True)
class RunTrajectory:
    """Best-so-far precision of one run, recorded at improvement events."""

    config_id: str
    function_id: str
    run_id: str
    evaluations: tuple[int, ...]
    precisions: tuple[float, ...]

    def __post_init__(self):
        evals = tuple(int(e) for e in self.evaluations)
        precs = tuple(float(p) for p in self.precisions)
        object.__setattr__(self, "evaluations", evals)
        object.__setattr__(self, "precisions", precs)
        if len(evals) != len(precs):
            raise DataError("evaluations and precisions differ in length")
        if not evals:
            raise DataError(f"run {self.run_id!r} has no points")
        if evals[0] < 1:
            raise DataError(f"run {self.run_id!r}: first evaluation count must be >= 1")
        for prev, cur in zip(evals, evals[1:]):
            if cur <= prev:
                raise DataError(f"run {self.run_id!r}: evaluation counts must strictly increase")
        for p in precs:
            if not (p >= 0.0) or math.isinf(p):
                raise DataError(f"run {self.run_id!r}: precision {p!r} is not a finite nonnegative number")
        for prev, cur in zip(precs, precs[1:]):
            if cur > prev:
                raise DataError(f"run {self.run_id!r}: best-so-far precision increased")

    @classmethod
    def from_points(cls, points: Iterable[tuple[int, float]], config_id="c0",
                    function_id="f0", run_id="0") -> "RunTrajectory":
        pts = list(points)
        return cls(config_id, function_id, run_id,
                   tuple(p[0] for p in pts), tuple(p[1] for p in pts))

    @property
    def points(self) -> list[tuple[int, float]]:
        return list(zip(self.evaluations, self.precisions))


@dataclass(frozen=True)
class TargetSet:
    """Precision targets, strictly descending (easiest first)."""

    targets: tuple[float, ...]

    def __post_init__(self):
        ts = tuple(float(t) for t in self.targets)
        object.__setattr__(self, "targets", ts)
        if not ts:
            raise ParameterError("target set is empty")
        if any(not (t > 0.0) or math.isinf(t) for t in ts):
            raise ParameterError("targets must be finite and positive")
        if any(b >= a for a, b in zip(ts, ts[1:])):
            raise ParameterError("targets must be strictly descending")

    def __len__(self):
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)


def default_target_set(count: int = 51, upper: float = 1e2, lower: float = 1e-8) -> TargetSet:
    """Return ``count`` targets spaced evenly in log10 from ``upper`` down to ``lower``."""
    if int(count) != count or count < 2:
        raise ParameterError(f"count must be an integer >= 2, got {count!r}")
    if not (upper > lower > 0.0):
        raise ParameterError(f"need upper > lower > 0, got upper={upper!r}, lower={lower!r}")
    exponents = np.linspace(math.log10(upper), math.log10(lower), int(count))
    targets = [10.0 ** e for e in exponents]
    # pin the endpoints so they are exact rather than 10**log10(x)
    targets[0], targets[-1] = float(upper), float(lower)
    return TargetSet(tuple(targets))


@dataclass(frozen=True)
class HittingTimeMatrix:
    """First hitting times, one row per run and one column per target.

    Entries are evaluation counts in ``[1, budget]`` stored as floats, with
    ``NEVER`` (``inf``) marking targets that were not reached.
    """

    budget: int
    times: np.ndarray

    def __post_init__(self):
        if int(self.budget) != self.budget or self.budget < 1:
            raise ParameterError(f"budget must be a positive integer, got {self.budget!r}")
        times = np.array(self.times, dtype=float)
        if times.ndim != 2 or times.shape[0] < 1 or times.shape[1] < 1:
            raise DataError("hitting times must be a nonempty 2-d array (runs x targets)")
        finite = np.isfinite(times)
        if np.isnan(times).any() or np.any(np.isneginf(times)):
            raise DataError("hitting times must be integers or NEVER")
        vals = times[finite]
        if vals.size and (vals.min() < 1 or vals.max() > self.budget or np.any(vals != np.round(vals))):
            raise DataError("finite hitting times must be integers in [1, budget]")
        if np.any(times[:, 1:] < times[:, :-1]):
            raise DataError("hitting times must not decrease for harder targets")
        times.setflags(write=False)
        object.__setattr__(self, "budget", int(self.budget))
        object.__setattr__(self, "times", times)

    @property
    def n_runs(self) -> int:
        return self.times.shape[0]

    @property
    def n_targets(self) -> int:
        return self.times.shape[1]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]], budget: int) -> "HittingTimeMatrix":
        return cls(budget, np.array(rows, dtype=float))

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[RunTrajectory], targets: TargetSet,
                          budget: int = DEFAULT_BUDGET) -> "HittingTimeMatrix":
        if not trajectories:
            raise DataError("no trajectories given")
        rows = [first_hitting_times(tr, targets, budget) for tr in trajectories]
        return cls(budget, np.array(rows, dtype=float))


def first_hitting_times(traj: RunTrajectory, targets: TargetSet, budget: int) -> np.ndarray:
    """Smallest recorded evaluation count whose precision is at or below each target.

    Trajectories are best-so-far, so values persist past the last record; a
    target never reached yields ``NEVER``.
    """
    if not isinstance(traj, RunTrajectory) or not traj.evaluations:
        raise DataError("empty trajectory")
    if budget < traj.evaluations[-1]:
        raise ParameterError(
            f"budget {budget} is smaller than the last evaluation count {traj.evaluations[-1]}")
    evals = np.asarray(traj.evaluations, dtype=float)
    # precisions are non-increasing; negate to get an ascending array for searchsorted
    neg = -np.asarray(traj.precisions, dtype=float)
    idx = np.searchsorted(neg, -np.asarray(targets.targets), side="left")
    out = np.full(len(targets), NEVER)
    hit = idx < len(evals)
    out[hit] = evals[idx[hit]]
    return out


def ecdf_value(hits: HittingTimeMatrix, t: int) -> float:
    """Fraction of (run, target) pairs whose hitting time is at most ``t``."""
    if not 1 <= t <= hits.budget:
        raise ParameterError(f"t={t} outside [1, {hits.budget}]")
    return float(np.count_nonzero(hits.times <= t)) / hits.times.size


def auc(hits: HittingTimeMatrix) -> float:
    """Sum of the ECDF over ``t = 1..B``, evaluated as a step function.

    Between consecutive distinct hitting times the ECDF is constant, so each
    step contributes its height times its width on the integer grid.
    """
    finite = hits.times[np.isfinite(hits.times)]
    if finite.size == 0:
        return 0.0
    steps, counts = np.unique(finite, return_counts=True)
    heights = np.cumsum(counts) / hits.times.size
    edges = np.append(steps, hits.budget + 1)
    widths = np.diff(edges)
    return float(np.dot(heights, widths))


def aoc(hits: HittingTimeMatrix) -> float:
    """``budget - auc``; lower is better."""
    return hits.budget - auc(hits)


def trajectory_aoc(traj: RunTrajectory, targets: TargetSet, budget: int = DEFAULT_BUDGET) -> float:
    """AOC of a single run."""
    return aoc(HittingTimeMatrix(budget, first_hitting_times(traj, targets, budget)[None, :]))
