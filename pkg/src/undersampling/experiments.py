"""Monte-Carlo drivers measuring how undersampling distorts decisions.

Repetition ``r`` of an experiment always draws from ``RngSeed(seed, r)``
(pair experiments use stream 0 to pick the pairs and ``1 + i`` for pair
``i``), so a run is reproducible from its master seed alone and independent
of how repetitions are spread over workers.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import partial
from typing import Iterable, Sequence

import numpy as np

from . import stats
from .errors import DataError, ParameterError
from .parallel import map_reps
from .selection import RaceSpec, run_selection
from .store import PerformanceTable, RngSeed, normal_surrogate, relative_loss, true_means

DEFAULT_SIZES = (2, 5, 10, 15, 25, 50)


def _seed(rng) -> RngSeed:
    if isinstance(rng, RngSeed):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngSeed(int(rng))
    raise ParameterError("experiments need an RngSeed or an integer master seed")


def _padded(table: PerformanceTable) -> tuple[np.ndarray, np.ndarray]:
    vecs = [table.samples(c) for c in table.config_ids]
    lengths = np.array([v.size for v in vecs])
    out = np.zeros((len(vecs), lengths.max()))
    for i, v in enumerate(vecs):
        out[i, : v.size] = v
    return out, lengths


def _check_sizes(sizes, reps):
    sizes = sorted({int(s) for s in sizes})
    if not sizes or sizes[0] < 1:
        raise ParameterError("sizes must be a nonempty set of positive integers")
    if int(reps) != reps or reps < 1:
        raise ParameterError("reps must be a positive integer")
    return sizes


# --------------------------------------------------------------------------
# best-by-mean selection

@dataclass(frozen=True)
class LossDistribution:
    sample_size: int
    losses: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.losses))


@dataclass(frozen=True)
class Underestimation:
    sample_size: int
    errors: np.ndarray
    excluded: int = 0


@dataclass(frozen=True)
class SelectionRecord:
    """Winner of one repetition at one sample size."""

    rep: int
    sample_size: int
    selected: str
    sample_mean: float
    true_mean: float
    loss: float


def _selection_rep(rep: int, padded, lengths, sizes, seed: RngSeed):
    gen = seed.child(rep).generator()
    k_max = sizes[-1]
    # nested draws: size s uses the first s columns, pairing all sizes within a repetition
    idx = gen.integers(0, lengths[:, None], size=(lengths.size, k_max))
    draws = np.take_along_axis(padded, idx, axis=1)
    csum = np.cumsum(draws, axis=1)
    out = []
    for s in sizes:
        means = csum[:, s - 1] / s
        w = int(np.argmin(means))
        out.append((w, float(means[w])))
    return out


def selection_records(table: PerformanceTable, sizes: Iterable[int], reps: int, rng,
                      workers: int = 1) -> list[SelectionRecord]:
    """Resample ``size`` values per config and pick the lowest sample mean, ``reps`` times."""
    sizes = _check_sizes(sizes, reps)
    if len(table) < 1:
        raise DataError("empty performance table")
    seed = _seed(rng)
    padded, lengths = _padded(table)
    mu = true_means(table)
    best = float(mu.min())
    ids = table.config_ids
    job = partial(_selection_rep, padded=padded, lengths=lengths, sizes=sizes, seed=seed)
    rows = map_reps(job, int(reps), workers)
    out = []
    for rep, per_size in enumerate(rows):
        for s, (w, m) in zip(sizes, per_size):
            out.append(SelectionRecord(rep, s, ids[w], m, float(mu[w]), relative_loss(float(mu[w]), best)))
    return out


def best_by_mean_loss(table: PerformanceTable, sizes: Iterable[int] = DEFAULT_SIZES, reps: int = 5000,
                      rng=0, workers: int = 1) -> dict[int, LossDistribution]:
    recs = selection_records(table, sizes, reps, rng, workers)
    return _group(recs, lambda s, rs: LossDistribution(s, np.array([r.loss for r in rs])))


def underestimation_from_records(recs: Sequence[SelectionRecord]) -> dict[int, Underestimation]:
    def build(s, rs):
        kept = [r for r in rs if r.true_mean != 0]
        errs = np.array([(r.true_mean - r.sample_mean) / r.true_mean for r in kept])
        return Underestimation(s, errs, len(rs) - len(kept))
    return _group(recs, build)


def underestimation_error(table: PerformanceTable, sizes: Iterable[int] = DEFAULT_SIZES, reps: int = 5000,
                          rng=0, workers: int = 1) -> dict[int, Underestimation]:
    """Relative amount by which each winner's sample mean beats its own true mean.

    Positive values mean the sample looked better (lower) than the truth.
    Repetitions whose winner has a true mean of zero are counted in
    ``excluded`` instead.
    """
    return underestimation_from_records(selection_records(table, sizes, reps, rng, workers))


def _group(recs, build):
    by: dict[int, list] = {}
    for r in recs:
        by.setdefault(r.sample_size, []).append(r)
    return {s: build(s, by[s]) for s in sorted(by)}


# --------------------------------------------------------------------------
# pairwise comparisons

class Source(str, enum.Enum):
    EMPIRICAL = "EMPIRICAL"
    NORMAL = "NORMAL"


class Method(str, enum.Enum):
    MEANS = "MEANS"
    T_TEST = "T_TEST"
    WILCOXON = "WILCOXON"


@dataclass(frozen=True)
class PairwiseRecord:
    config_a: str
    config_b: str
    true_mean_gap: float
    incorrect_fraction: float
    inconclusive_fraction: float = 0.0

    @property
    def correct_fraction(self) -> float:
        return 1.0 - self.incorrect_fraction - self.inconclusive_fraction


@dataclass(frozen=True)
class PairwiseStudy:
    records: list
    excluded_pairs: int

    def incorrect_fractions(self) -> np.ndarray:
        return np.array([r.incorrect_fraction for r in self.records])

    def gaps(self) -> np.ndarray:
        return np.array([r.true_mean_gap for r in self.records])


def normalized_gap(mu_a: float, mu_b: float) -> float:
    """``|mu_a - mu_b| / max(mu_a, mu_b)``; 0 when both are 0."""
    top = max(mu_a, mu_b)
    return abs(mu_a - mu_b) / top if top > 0 else 0.0


def draw_pairs(n_configs: int, n_pairs: int, gen: np.random.Generator) -> np.ndarray:
    """``n_pairs`` ordered pairs of distinct config indices, uniformly at random."""
    if n_configs < 2:
        raise ParameterError("pairwise experiments need at least 2 configurations")
    a = gen.integers(0, n_configs, size=n_pairs)
    b = gen.integers(0, n_configs - 1, size=n_pairs)
    b = b + (b >= a)
    return np.stack([a, b], axis=1)


def _draw_block(gen, padded, lengths, i, reps, k, source, surrogates):
    if source is Source.NORMAL:
        m, sd = surrogates[i]
        return m + sd * gen.standard_normal((reps, k))
    idx = gen.integers(0, lengths[i], size=(reps, k))
    return padded[i][idx]


def verdict_codes(xa: np.ndarray, xb: np.ndarray, method: Method, alpha: float) -> np.ndarray:
    """Per-row decision codes (+1 A better, -1 B better, 0 inconclusive).

    MEANS never abstains; exactly equal sample means go to A, the
    lexicographically smaller config of a sorted pair.
    """
    method = Method(method)
    if method is Method.MEANS:
        return np.where(xa.mean(axis=1) <= xb.mean(axis=1), 1, -1)
    if method is Method.T_TEST:
        _, _, pa, pb = stats.welch_batch(xa, xb)
    else:
        _, pa, pb = stats.wilcoxon_batch(xa, xb)
    return stats.decide(pa, pb, alpha)


def _pair_job(i, pairs, padded, lengths, surrogates, mu, k, reps, source, method, alpha, seed):
    a, b = int(pairs[i, 0]), int(pairs[i, 1])
    # keep A as the smaller index so sample-mean ties resolve like config selection
    if b < a:
        a, b = b, a
    gen = seed.child(1 + i).generator()
    xa = _draw_block(gen, padded, lengths, a, reps, k, source, surrogates)
    xb = _draw_block(gen, padded, lengths, b, reps, k, source, surrogates)
    codes = verdict_codes(xa, xb, method, alpha)
    truth = 1 if mu[a] < mu[b] else -1
    incorrect = float(np.mean(codes == -truth))
    inconclusive = float(np.mean(codes == 0))
    return a, b, incorrect, inconclusive


def _pair_study(table, n_pairs, k, reps, source, method, alpha, rng, workers) -> PairwiseStudy:
    for name, v in (("n_pairs", n_pairs), ("k", k), ("reps", reps)):
        if int(v) != v or v < 1:
            raise ParameterError(f"{name} must be a positive integer")
    if Method(method) is Method.T_TEST and k < 2:
        raise ParameterError("the t-test needs k >= 2")
    stats._check_alpha(alpha)
    seed = _seed(rng)
    source = Source(source)
    ids = table.config_ids
    mu = true_means(table)
    padded, lengths = _padded(table)
    surrogates = [(s.mean, s.stddev) for s in (normal_surrogate(table, c) for c in ids)]
    pairs = draw_pairs(len(ids), int(n_pairs), seed.child(0).generator())
    keep = np.flatnonzero(mu[pairs[:, 0]] != mu[pairs[:, 1]])
    job = partial(_pair_job, pairs=pairs, padded=padded, lengths=lengths, surrogates=surrogates,
                  mu=mu, k=int(k), reps=int(reps), source=source, method=Method(method),
                  alpha=alpha, seed=seed)
    results = map_reps(job, keep.tolist(), workers)
    records = [PairwiseRecord(ids[a], ids[b], normalized_gap(mu[a], mu[b]), inc, incl)
               for a, b, inc, incl in results]
    return PairwiseStudy(records, int(n_pairs) - keep.size)


def pairwise_decisions(table: PerformanceTable, n_pairs: int = 10_000, k: int = 15, reps: int = 500,
                       source: Source = Source.EMPIRICAL, rng=0, workers: int = 1) -> PairwiseStudy:
    """Fraction of wrong sample-mean decisions for random config pairs.

    Pairs whose true means are exactly equal have no correct answer; they are
    skipped and counted in ``excluded_pairs``.
    """
    return _pair_study(table, n_pairs, k, reps, source, Method.MEANS, 0.05, rng, workers)


@dataclass(frozen=True)
class BinnedVerdicts:
    gap_bin_edges: np.ndarray
    counts: np.ndarray
    correct: np.ndarray
    incorrect: np.ndarray
    inconclusive: np.ndarray


@dataclass(frozen=True)
class CorrectnessStudy:
    method: Method
    alpha: float
    records: list
    binned: BinnedVerdicts
    excluded_pairs: int
    extra: dict = field(default_factory=dict)

    @property
    def fraction_pairs_above_alpha(self) -> float:
        """Share of pairs whose incorrect rate exceeds ``alpha``."""
        if not self.records:
            return 0.0
        return float(np.mean([r.incorrect_fraction > self.alpha for r in self.records]))

    @property
    def mean_inconclusive(self) -> float:
        return float(np.mean([r.inconclusive_fraction for r in self.records])) if self.records else 0.0

    @property
    def mean_incorrect(self) -> float:
        return float(np.mean([r.incorrect_fraction for r in self.records])) if self.records else 0.0


def bin_verdicts(records: Sequence[PairwiseRecord], n_bins: int = 20, upper: float = 1.0) -> BinnedVerdicts:
    """Average verdict fractions of the pairs falling into equal-width gap bins.

    Empty bins hold NaN fractions.
    """
    edges = np.linspace(0.0, upper, n_bins + 1)
    gaps = np.array([r.true_mean_gap for r in records])
    which = np.clip(np.searchsorted(edges, gaps, side="right") - 1, 0, n_bins - 1)
    counts = np.zeros(n_bins, dtype=int)
    sums = np.zeros((3, n_bins))
    for r, b in zip(records, which):
        counts[b] += 1
        sums[:, b] += (r.correct_fraction, r.incorrect_fraction, r.inconclusive_fraction)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = sums / counts
    return BinnedVerdicts(edges, counts, frac[0], frac[1], frac[2])


def test_correctness(table: PerformanceTable, method: Method = Method.T_TEST, n_pairs: int = 10_000,
                     k: int = 15, reps: int = 500, alpha: float = 0.05, rng=0, workers: int = 1,
                     n_bins: int = 20, source: Source = Source.EMPIRICAL) -> CorrectnessStudy:
    """Correct / incorrect / inconclusive rates of a comparison procedure over random pairs.

    A verdict is incorrect when it names the config with the higher true mean
    as better; means comparison is never inconclusive.
    """
    study = _pair_study(table, n_pairs, k, reps, source, Method(method), alpha, rng, workers)
    return CorrectnessStudy(Method(method), alpha, study.records, bin_verdicts(study.records, n_bins),
                            study.excluded_pairs)


test_correctness.__test__ = False


# --------------------------------------------------------------------------
# races

@dataclass(frozen=True)
class VariantResult:
    spec: RaceSpec
    losses: np.ndarray
    total_samples: np.ndarray
    selected: list

    @property
    def label(self) -> str:
        return self.spec.label

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.losses))

    @property
    def mean_total_samples(self) -> float:
        return float(np.mean(self.total_samples))

    @property
    def sum_total_samples(self) -> int:
        return int(np.sum(self.total_samples))


@dataclass(frozen=True)
class RaceStudy:
    variants: list
    loss_grid_max: float

    def auc(self, variant: VariantResult) -> float:
        return loss_curve_auc(variant.losses, self.loss_grid_max)

    def by_label(self) -> dict:
        return {v.label: v for v in self.variants}


def _race_rep(rep, table, specs, seed):
    rs = seed.child(rep)
    out = []
    for spec in specs:
        o = run_selection(table, spec, rs)
        out.append((o.loss, o.total_samples, o.selected))
    return out


def race_loss_study(table: PerformanceTable, variants: Sequence[RaceSpec], reps: int = 1000, rng=0,
                    workers: int = 1, loss_grid_max: float | None = None) -> RaceStudy:
    """Run every variant ``reps`` times; all variants share the streams of a repetition.

    ``loss_grid_max`` defaults to the largest loss seen across all variants,
    so the loss-curve AUCs of one study share an axis.
    """
    if not variants:
        raise ParameterError("need at least one variant")
    if int(reps) != reps or reps < 1:
        raise ParameterError("reps must be a positive integer")
    labels = [v.label for v in variants]
    if len(set(labels)) != len(labels):
        raise ParameterError(f"duplicate variants: {labels}")
    seed = _seed(rng)
    job = partial(_race_rep, table=table, specs=list(variants), seed=seed)
    rows = map_reps(job, int(reps), workers)
    results = []
    for j, spec in enumerate(variants):
        col = [row[j] for row in rows]
        results.append(VariantResult(spec, np.array([c[0] for c in col]),
                                     np.array([c[1] for c in col], dtype=int), [c[2] for c in col]))
    if loss_grid_max is None:
        loss_grid_max = max(float(v.losses.max()) for v in results)
    return RaceStudy(results, float(loss_grid_max))


def loss_ecdf(losses) -> tuple[np.ndarray, np.ndarray]:
    """Distinct loss values and the empirical CDF at each of them."""
    x = np.asarray(losses, dtype=float)
    if x.size == 0:
        raise ParameterError("no losses")
    vals, counts = np.unique(x, return_counts=True)
    return vals, np.cumsum(counts) / x.size


def loss_curve_auc(losses, loss_grid_max: float) -> float:
    """Area under the loss ECDF on ``[0, loss_grid_max]``, divided by ``loss_grid_max``.

    1.0 means every loss was zero. A grid of zero width (all losses zero and
    no explicit bound) is treated as the perfect score.
    """
    x = np.asarray(losses, dtype=float)
    if x.size == 0:
        raise ParameterError("no losses")
    if loss_grid_max < 0:
        raise ParameterError("loss_grid_max must be positive")
    if loss_grid_max == 0:
        if np.any(x > 0):
            raise ParameterError("loss_grid_max must be positive")
        return 1.0
    # integral of 1{l <= x} over [0, g] is g - min(l, g)
    return float(np.mean(1.0 - np.minimum(x, loss_grid_max) / loss_grid_max))


# --------------------------------------------------------------------------
# small exports

def rank_change(table: PerformanceTable, k: int, rng) -> list[dict]:
    """Rank of every config by true mean and by the mean of ``k`` resampled values."""
    seed = _seed(rng)
    padded, lengths = _padded(table)
    gen = seed.generator()
    idx = gen.integers(0, lengths[:, None], size=(lengths.size, int(k)))
    sampled = np.take_along_axis(padded, idx, axis=1).mean(axis=1)
    mu = true_means(table)
    orig = np.argsort(np.argsort(mu, kind="stable"), kind="stable") + 1
    new = np.argsort(np.argsort(sampled, kind="stable"), kind="stable") + 1
    return [{"config_id": c, "true_mean": float(mu[i]), "original_rank": int(orig[i]),
             "resampled_mean": float(sampled[i]), "resampled_rank": int(new[i])}
            for i, c in enumerate(table.config_ids)]


def cumulative_means(table: PerformanceTable, config, length: int, rng) -> np.ndarray:
    """Running mean of ``length`` values resampled from one config."""
    vec = table.samples(config)
    gen = _seed(rng).generator()
    draws = vec[gen.integers(0, vec.size, size=int(length))]
    return np.cumsum(draws) / np.arange(1, draws.size + 1)
