"""Simulated configuration selection over a :class:`PerformanceTable`.

Every procedure draws AOC values with replacement from the stored samples of
the configurations it is still considering, and reports the true-mean loss of
the configuration it finally recommends.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import stats
from .errors import ConfigError, ParameterError
from .store import PerformanceTable, as_generator, relative_loss, true_means


class TestKind(str, enum.Enum):
    __test__ = False

    T_TEST = "T_TEST"
    FRIEDMAN = "FRIEDMAN"
    SAMPLING_ONLY = "SAMPLING_ONLY"
    SHA = "SHA"


@dataclass(frozen=True)
class RaceSpec:
    test_kind: TestKind
    first_test: int
    each_test: int = 1
    max_elites: int = 5
    budget_samples: int = 10_000
    alpha: float = 0.05
    reduction_factor: int = 2

    def __post_init__(self):
        try:
            object.__setattr__(self, "test_kind", TestKind(self.test_kind))
        except ValueError:
            raise ParameterError(f"unknown test kind {self.test_kind!r}") from None
        for name in ("first_test", "each_test", "max_elites", "budget_samples"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError("alpha must be in (0, 1)")
        if int(self.reduction_factor) != self.reduction_factor or self.reduction_factor < 2:
            raise ParameterError("reduction_factor must be an integer >= 2")

    @property
    def label(self) -> str:
        if self.test_kind is TestKind.SHA:
            return f"SHA-{self.reduction_factor}"
        return self.test_kind.value

    def to_dict(self) -> dict:
        d = asdict(self)
        d["test_kind"] = self.test_kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RaceSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown race spec keys: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class RaceOutcome:
    survivors: list
    samples_used: dict
    total_samples: int
    selected: str
    selected_true_mean: float
    loss: float
    rounds: int = 0


class _Sampler:
    """Draw buffer for a table: row i holds the samples drawn so far for config i."""

    def __init__(self, table: PerformanceTable, rng):
        self.table = table
        self.ids = table.config_ids
        vecs = [table.samples(c) for c in self.ids]
        self.lengths = np.array([v.size for v in vecs])
        self.padded = np.zeros((len(vecs), self.lengths.max()))
        for i, v in enumerate(vecs):
            self.padded[i, : v.size] = v
        self.gen = as_generator(rng)
        self.drawn = np.zeros((len(vecs), 16))
        self.counts = np.zeros(len(vecs), dtype=int)

    def draw(self, rows: np.ndarray, k: int):
        """Append ``k`` fresh draws to each config in ``rows`` (all at equal counts)."""
        idx = self.gen.integers(0, self.lengths[rows][:, None], size=(rows.size, k))
        values = self.padded[rows[:, None], idx]
        start = int(self.counts[rows[0]])
        need = start + k
        if need > self.drawn.shape[1]:
            grown = np.zeros((self.drawn.shape[0], max(need, 2 * self.drawn.shape[1])))
            grown[:, : self.drawn.shape[1]] = self.drawn
            self.drawn = grown
        self.drawn[rows, start:need] = values
        self.counts[rows] += k

    def values(self, rows: np.ndarray) -> np.ndarray:
        n = int(self.counts[rows[0]])
        return self.drawn[rows, :n]

    def means(self, rows: np.ndarray) -> np.ndarray:
        return self.values(rows).mean(axis=1)


def _outcome(table: PerformanceTable, sampler: _Sampler, survivors: np.ndarray,
             selected: int, rounds: int) -> RaceOutcome:
    mu = true_means(table)
    ids = sampler.ids
    used = {ids[i]: int(sampler.counts[i]) for i in range(len(ids))}
    sel_mean = float(mu[selected])
    return RaceOutcome(
        survivors=[ids[i] for i in survivors],
        samples_used=used,
        total_samples=int(sampler.counts.sum()),
        selected=ids[selected],
        selected_true_mean=sel_mean,
        loss=relative_loss(sel_mean, float(mu.min())),
        rounds=rounds,
    )


def _lowest_mean(sampler: _Sampler, rows: np.ndarray) -> int:
    # rows are ascending, argmin keeps the first of equal means -> lexicographic tie-break
    return int(rows[int(np.argmin(sampler.means(rows)))])


# one-sided normal critical value; a t statistic above -z can never reject
_Z_CACHE: dict = {}


def _z_crit(alpha: float) -> float:
    if alpha not in _Z_CACHE:
        _Z_CACHE[alpha] = stats.normal_ppf(1.0 - alpha)
    return _Z_CACHE[alpha]


def _t_race_keep(sampler: _Sampler, alive: np.ndarray, alpha: float) -> np.ndarray:
    """Keep-mask over ``alive``: drop configs the incumbent beats by a one-sided Welch test."""
    inc = _lowest_mean(sampler, alive)
    others = alive[alive != inc]
    vals = sampler.values(others)
    inc_vals = sampler.values(np.array([inc]))
    n = inc_vals.shape[1]
    ma = inc_vals.mean()
    va = inc_vals.var(ddof=1) / n
    mb = vals.mean(axis=1)
    vb = vals.var(axis=1, ddof=1) / n
    se2 = va + vb
    reject = np.zeros(others.size, dtype=bool)
    # zero variance on both sides: decided by direct comparison
    degenerate = se2 <= 0
    reject[degenerate] = ma < mb[degenerate]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ma - mb) / np.sqrt(se2)
    # |t| quantiles dominate normal ones, so only these rows can reach p < alpha
    cand = ~degenerate & (t <= -_z_crit(alpha)) if alpha < 0.5 else ~degenerate
    if np.any(cand):
        rows = np.flatnonzero(cand)
        _, _, pa, _ = stats.welch_batch(np.broadcast_to(inc_vals, (rows.size, n)), vals[rows])
        reject[rows] = pa < alpha
    keep = np.ones(alive.size, dtype=bool)
    pos = {c: i for i, c in enumerate(alive)}
    for c, r in zip(others, reject):
        if r:
            keep[pos[c]] = False
    return keep


def _friedman_keep(sampler: _Sampler, alive: np.ndarray, alpha: float) -> np.ndarray:
    blocks = sampler.values(alive).T
    _, keep = stats.friedman_step(blocks, alpha)
    return keep


def run_race(table: PerformanceTable, spec: RaceSpec, rng) -> RaceOutcome:
    """Statistical race with t-test or Friedman elimination.

    Every alive configuration gets ``first_test`` draws, then rounds of
    ``each_test`` draws each, testing after every round. The race stops once
    at most ``max_elites`` remain or the next round would exceed
    ``budget_samples``; the survivor with the lowest sample mean is selected.
    """
    if spec.test_kind not in (TestKind.T_TEST, TestKind.FRIEDMAN):
        raise ParameterError(f"run_race handles T_TEST and FRIEDMAN, not {spec.test_kind.value}")
    n_cfg = len(table)
    if n_cfg < 2:
        raise ParameterError("a race needs at least 2 configurations")
    first = min(spec.first_test, spec.budget_samples // n_cfg)
    if first < 1:
        raise ParameterError(
            f"budget of {spec.budget_samples} samples cannot give each of {n_cfg} configurations one run")
    keep_fn = _t_race_keep if spec.test_kind is TestKind.T_TEST else _friedman_keep
    sampler = _Sampler(table, rng)
    alive = np.arange(n_cfg)
    sampler.draw(alive, first)
    total = first * n_cfg
    rounds = 0
    while len(alive) > spec.max_elites:
        if sampler.counts[alive[0]] >= 2:
            alive = alive[keep_fn(sampler, alive, spec.alpha)]
            rounds += 1
            if len(alive) <= spec.max_elites:
                break
        step = spec.each_test * len(alive)
        if total + step > spec.budget_samples:
            break
        sampler.draw(alive, spec.each_test)
        total += step
    return _outcome(table, sampler, alive, _lowest_mean(sampler, alive), rounds)


def run_sampling_only(table: PerformanceTable, k: int, rng) -> RaceOutcome:
    """Draw ``k`` values per configuration and pick the lowest sample mean."""
    if int(k) != k or k < 1:
        raise ParameterError("k must be a positive integer")
    if len(table) < 1:
        raise ParameterError("empty table")
    sampler = _Sampler(table, rng)
    rows = np.arange(len(table))
    sampler.draw(rows, int(k))
    return _outcome(table, sampler, rows, _lowest_mean(sampler, rows), 0)


def sha_cohorts(n: int, reduction_factor: int) -> list[int]:
    """Sizes of the cohorts that receive runs, ending before the single winner."""
    if n < 1 or reduction_factor < 2:
        raise ParameterError("need n >= 1 and reduction_factor >= 2")
    sizes = [n]
    while sizes[-1] > 1:
        nxt = math.ceil(sizes[-1] / reduction_factor)
        if nxt == 1:
            break
        sizes.append(nxt)
    return sizes


def sha_total_samples(n: int, reduction_factor: int, first_test: int) -> int:
    return sum(size * 2**r * first_test for r, size in enumerate(sha_cohorts(n, reduction_factor)))


def run_sha(table: PerformanceTable, first_test: int, reduction_factor: int, rng) -> RaceOutcome:
    """Successive halving on cumulative sample means.

    Round 0 gives ``first_test`` runs to everyone; each later round gives
    ``2**r * first_test`` additional runs to the ``ceil(n/R)`` survivors of
    the previous cut, until a single configuration is left.
    """
    if int(first_test) != first_test or first_test < 1:
        raise ParameterError("first_test must be a positive integer")
    if int(reduction_factor) != reduction_factor or reduction_factor < 2:
        raise ParameterError("reduction_factor must be an integer >= 2")
    if len(table) < 1:
        raise ParameterError("empty table")
    sampler = _Sampler(table, rng)
    cohort = np.arange(len(table))
    r = 0
    while True:
        sampler.draw(cohort, 2**r * int(first_test))
        keep = math.ceil(cohort.size / reduction_factor)
        order = np.argsort(sampler.means(cohort), kind="stable")
        cohort = np.sort(cohort[order[:keep]])
        if cohort.size == 1:
            break
        r += 1
    return _outcome(table, sampler, cohort, int(cohort[0]), r + 1)


def run_selection(table: PerformanceTable, spec: RaceSpec, rng) -> RaceOutcome:
    """Dispatch on ``spec.test_kind``; sampling-only uses ``first_test`` samples."""
    if spec.test_kind is TestKind.SAMPLING_ONLY:
        return run_sampling_only(table, spec.first_test, rng)
    if spec.test_kind is TestKind.SHA:
        return run_sha(table, spec.first_test, spec.reduction_factor, rng)
    return run_race(table, spec, rng)
