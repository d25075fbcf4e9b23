"""Per-configuration AOC samples ("verification runs") and how to draw from them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DataError, ParameterError, UnknownConfigError


@dataclass(frozen=True)
class RngSeed:
    """Identifies one independent random stream.

    ``(seed, stream_id)`` is fed to a :class:`numpy.random.SeedSequence` as
    entropy plus spawn key, so streams for different ids never overlap and do
    not depend on how work is split between processes.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        if int(self.stream_id) < 0:
            raise ParameterError("stream_id must be nonnegative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id: int) -> "RngSeed":
        """Stream ``stream_id`` of the same master seed."""
        return RngSeed(self.seed, stream_id)


def as_generator(rng) -> np.random.Generator:
    """Accept an :class:`RngSeed`, a ``Generator`` or an int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSeed):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngSeed(int(rng)).generator()
    raise ParameterError(f"cannot derive a random stream from {rng!r}")


@dataclass(frozen=True)
class NormalSurrogate:
    mean: float
    stddev: float

    def __post_init__(self):
        if not self.stddev >= 0:
            raise ParameterError("stddev must be nonnegative")


@dataclass(frozen=True)
class PerformanceTable:
    """AOC samples for each configuration on one function.

    Config ids are kept in sorted order; every helper that needs a
    deterministic ordering (tie-breaks, vectorised draws) relies on it.
    """

    function_id: str
    entries: Mapping[str, np.ndarray]
    nominal_sample_count: int = 200
    _means: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        clean = {}
        for cid in sorted(self.entries, key=str):
            vec = np.array(self.entries[cid], dtype=float).ravel()
            if vec.size == 0:
                raise DataError(f"config {cid!r} has no samples")
            if not np.all(np.isfinite(vec)) or np.any(vec < 0):
                raise DataError(f"config {cid!r} has negative or non-finite samples")
            vec.setflags(write=False)
            clean[str(cid)] = vec
        if int(self.nominal_sample_count) < 1:
            raise ParameterError("nominal_sample_count must be positive")
        object.__setattr__(self, "entries", clean)
        object.__setattr__(self, "_means", {c: float(np.mean(v)) for c, v in clean.items()})

    @property
    def config_ids(self) -> list[str]:
        return list(self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, config):
        return config in self.entries

    def samples(self, config) -> np.ndarray:
        try:
            return self.entries[config]
        except KeyError:
            raise UnknownConfigError(config) from None

    def subset(self, configs) -> "PerformanceTable":
        return PerformanceTable(self.function_id, {c: self.samples(c) for c in configs},
                                self.nominal_sample_count)


def true_mean(table: PerformanceTable, config) -> float:
    """Mean over every stored sample of ``config``."""
    if config not in table.entries:
        raise UnknownConfigError(config)
    return table._means[config]


def true_means(table: PerformanceTable) -> np.ndarray:
    """True means in ``table.config_ids`` order."""
    return np.array([table._means[c] for c in table.config_ids])


def resample(table: PerformanceTable, config, k: int, rng) -> np.ndarray:
    """``k`` draws with replacement from the stored samples of ``config``."""
    vec = table.samples(config)
    if int(k) < 1:
        raise ParameterError("k must be >= 1")
    gen = as_generator(rng)
    return vec[gen.integers(0, vec.size, size=int(k))]


def normal_surrogate(table: PerformanceTable, config) -> NormalSurrogate:
    vec = table.samples(config)
    sd = float(np.std(vec, ddof=1)) if vec.size > 1 else 0.0
    return NormalSurrogate(float(np.mean(vec)), sd)


def sample_surrogate(s: NormalSurrogate, k: int, rng) -> np.ndarray:
    if int(k) < 1:
        raise ParameterError("k must be >= 1")
    gen = as_generator(rng)
    return s.mean + s.stddev * gen.standard_normal(int(k))


def best_by_true_mean(table: PerformanceTable) -> str:
    """Config with the lowest true mean; ties go to the smallest id."""
    if len(table) == 0:
        raise DataError("empty performance table")
    # config_ids are sorted, and min() keeps the first of equal keys
    return min(table.config_ids, key=lambda c: table._means[c])


def relative_loss(selected_mean: float, best_mean: float) -> float:
    """Relative true-mean gap of a selection to the best participant.

    Falls back to the absolute gap when the best mean is exactly zero, where
    the relative form is undefined.
    """
    gap = selected_mean - best_mean
    if gap <= 0:
        return 0.0
    if best_mean == 0:
        return gap
    return gap / best_mean


def lowest_mean_index(means: np.ndarray) -> int:
    """Index of the smallest entry, first one on ties (ids are sorted)."""
    return int(np.argmin(means))
