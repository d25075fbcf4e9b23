"""Synthetic data at desk scale.

Two sources: parametric mixtures that produce AOC-like samples directly
(bimodal and heavy-tailed shapes on demand), and toy benchmark functions run
by two toy optimizers, whose trajectories go through the AOC pipeline.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ParameterError
from .perf import DEFAULT_BUDGET, RunTrajectory, TargetSet, default_target_set, trajectory_aoc
from .store import PerformanceTable, RngSeed, as_generator


# --------------------------------------------------------------------------
# mixtures

class Family(str, enum.Enum):
    NORMAL = "NORMAL"
    LOGNORMAL = "LOGNORMAL"
    POINT_MASS = "POINT_MASS"


_PARAMS = {
    Family.NORMAL: ("mean", "sd"),
    Family.LOGNORMAL: ("mu", "sigma"),
    Family.POINT_MASS: ("value",),
}


@dataclass(frozen=True)
class MixtureComponent:
    """One mixture component.

    NORMAL takes ``mean``/``sd``; LOGNORMAL takes the log-space ``mu``/``sigma``
    plus an optional ``shift`` added after exponentiation; POINT_MASS takes
    ``value``.
    """

    weight: float
    family: Family
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        try:
            fam = Family(self.family)
        except ValueError:
            raise ParameterError(f"unknown family {self.family!r}") from None
        object.__setattr__(self, "family", fam)
        if not 0.0 < self.weight <= 1.0:
            raise ParameterError(f"component weight must be in (0, 1], got {self.weight!r}")
        params = {k: float(v) for k, v in dict(self.params).items()}
        missing = [p for p in _PARAMS[fam] if p not in params]
        if missing:
            raise ParameterError(f"{fam.value} component is missing {missing}")
        allowed = set(_PARAMS[fam]) | ({"shift"} if fam is Family.LOGNORMAL else set())
        if set(params) - allowed:
            raise ParameterError(f"unexpected {fam.value} parameters {sorted(set(params) - allowed)}")
        if fam is Family.NORMAL and params["sd"] < 0:
            raise ParameterError("sd must be nonnegative")
        if fam is Family.LOGNORMAL and params["sigma"] < 0:
            raise ParameterError("sigma must be nonnegative")
        object.__setattr__(self, "params", params)

    def mean(self) -> float:
        p = self.params
        if self.family is Family.NORMAL:
            return p["mean"]
        if self.family is Family.LOGNORMAL:
            return math.exp(p["mu"] + p["sigma"] ** 2 / 2) + p.get("shift", 0.0)
        return p["value"]

    def draw(self, gen: np.random.Generator, n: int) -> np.ndarray:
        p = self.params
        if self.family is Family.NORMAL:
            return gen.normal(p["mean"], p["sd"], n) if p["sd"] > 0 else np.full(n, p["mean"])
        if self.family is Family.LOGNORMAL:
            return gen.lognormal(p["mu"], p["sigma"], n) + p.get("shift", 0.0)
        return np.full(n, p["value"])


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple
    lower: float = 0.0
    upper: float = float(DEFAULT_BUDGET)

    def __post_init__(self):
        comps = tuple(c if isinstance(c, MixtureComponent) else MixtureComponent(**c)
                      for c in self.components)
        if not comps:
            raise ParameterError("mixture needs at least one component")
        total = sum(c.weight for c in comps)
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
            raise ParameterError(f"mixture weights sum to {total}, not 1")
        if not self.lower <= self.upper:
            raise ParameterError("lower clamp exceeds upper clamp")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_dict(cls, d: Mapping) -> "MixtureSpec":
        try:
            comps = [MixtureComponent(c["weight"], c["family"], c.get("params", {}))
                     for c in d["components"]]
            return cls(tuple(comps), float(d.get("lower", 0.0)), float(d.get("upper", DEFAULT_BUDGET)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad mixture spec: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "components": [{"weight": c.weight, "family": c.family.value, "params": dict(c.params)}
                           for c in self.components],
            "lower": self.lower,
            "upper": self.upper,
        }

    def mean(self) -> float:
        """Mean before clamping."""
        return sum(c.weight * c.mean() for c in self.components)


def point_mass(value: float, upper: float = float(DEFAULT_BUDGET)) -> MixtureSpec:
    return MixtureSpec((MixtureComponent(1.0, Family.POINT_MASS, {"value": value}),), upper=upper)


def _stratified_labels(weights: np.ndarray, n: int, gen: np.random.Generator) -> np.ndarray:
    # largest-remainder rounding of n * weights, then shuffled
    raw = weights * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    if short:
        counts[np.argsort(-(raw - counts), kind="stable")[:short]] += 1
    labels = np.repeat(np.arange(weights.size), counts)
    gen.shuffle(labels)
    return labels


def sample_mixture(spec: MixtureSpec, n: int, rng, stratified: bool = False) -> np.ndarray:
    """``n`` draws from the mixture, clamped to ``[lower, upper]``.

    By default draws are i.i.d. With ``stratified=True`` the number of draws
    per component is fixed at ``n * weight`` (rounded), so a component with
    5% weight contributes exactly 5% of the values.
    """
    if int(n) != n or n < 0:
        raise ParameterError("n must be a nonnegative integer")
    gen = as_generator(rng)
    weights = np.array([c.weight for c in spec.components])
    weights = weights / weights.sum()
    if stratified:
        which = _stratified_labels(weights, int(n), gen)
    else:
        which = gen.choice(len(weights), size=int(n), p=weights)
    out = np.empty(int(n))
    for i, comp in enumerate(spec.components):
        mask = which == i
        cnt = int(mask.sum())
        if cnt:
            out[mask] = comp.draw(gen, cnt)
    return np.clip(out, spec.lower, spec.upper)


def table_from_mixtures(specs: Mapping[str, MixtureSpec], n_samples: int, rng,
                        function_id: str = "synthetic", stratified: bool = False) -> PerformanceTable:
    """One table column per mixture; config ``i`` (sorted) uses stream ``i``."""
    seed = rng if isinstance(rng, RngSeed) else RngSeed(int(rng))
    entries = {cid: sample_mixture(specs[cid], n_samples, seed.child(i), stratified)
               for i, cid in enumerate(sorted(specs))}
    return PerformanceTable(function_id, entries, n_samples)


def heavy_tail_specs(n_configs: int = 33, tail_range=(0.10, 0.20), tail_value: float = 400.0,
                     seed: int = 0, upper: float = float(DEFAULT_BUDGET),
                     body_range=(140.0, 170.0)) -> dict[str, MixtureSpec]:
    """Configs whose runs fail badly with probability drawn from ``tail_range``.

    The body of config ``c00`` is clearly best and its failure rate sits at the
    bottom of the range, so at large sample sizes it is the unambiguous winner,
    while a handful of lucky failure-free draws can hide any config's tail.
    """
    if n_configs < 1:
        raise ParameterError("n_configs must be >= 1")
    lo, hi = tail_range
    if not 0.0 < lo <= hi < 1.0:
        raise ParameterError("tail_range must satisfy 0 < lo <= hi < 1")
    b_lo, b_hi = body_range
    if not 0.0 < b_lo <= b_hi:
        raise ParameterError("body_range must satisfy 0 < lo <= hi")
    gen = RngSeed(seed, 0).generator()
    specs = {}
    width = len(str(n_configs - 1))
    for i in range(n_configs):
        if i == 0:
            body, p = b_lo, lo
        else:
            body = float(gen.uniform(b_lo, b_hi))
            p = float(gen.uniform(lo + 0.8 * (hi - lo), hi))
        specs[f"c{i:0{max(2, width)}d}"] = MixtureSpec((
            MixtureComponent(1.0 - p, Family.NORMAL, {"mean": body, "sd": 0.1 * body}),
            MixtureComponent(p, Family.NORMAL, {"mean": tail_value, "sd": 0.1 * tail_value}),
        ), upper=upper)
    return specs


def heavy_tail_table(n_configs: int = 33, n_samples: int = 200, seed: int = 0,
                     **kwargs) -> PerformanceTable:
    specs = heavy_tail_specs(n_configs, seed=seed, **kwargs)
    return table_from_mixtures(specs, n_samples, RngSeed(seed, 1), function_id="heavy_tail",
                               stratified=True)


def bimodal_specs(n_configs: int = 33, seed: int = 0,
                  upper: float = float(DEFAULT_BUDGET)) -> dict[str, MixtureSpec]:
    """Two-mode configs: a good mode near 100-200 and a stalled mode near 500-800."""
    gen = RngSeed(seed, 0).generator()
    specs = {}
    width = max(2, len(str(n_configs - 1)))
    for i in range(n_configs):
        good = float(gen.uniform(100.0, 200.0))
        bad = float(gen.uniform(500.0, 800.0))
        w_bad = float(gen.uniform(0.1, 0.5))
        specs[f"c{i:0{width}d}"] = MixtureSpec((
            MixtureComponent(1.0 - w_bad, Family.NORMAL, {"mean": good, "sd": 15.0}),
            MixtureComponent(w_bad, Family.NORMAL, {"mean": bad, "sd": 30.0}),
        ), upper=upper)
    return specs


def bimodal_table(n_configs: int = 33, n_samples: int = 200, seed: int = 0) -> PerformanceTable:
    return table_from_mixtures(bimodal_specs(n_configs, seed), n_samples, RngSeed(seed, 1),
                               function_id="bimodal")


def normal_table(moments: Mapping[str, tuple[float, float]], n_samples: int = 200, seed: int = 0,
                 exact: bool = True) -> PerformanceTable:
    """Normal samples per config; ``exact`` rescales them to the requested mean and sd."""
    entries = {}
    for i, cid in enumerate(sorted(moments)):
        mean, sd = moments[cid]
        z = RngSeed(seed, i).generator().standard_normal(n_samples)
        if exact and n_samples > 1:
            z = (z - z.mean()) / z.std(ddof=1)
        vals = mean + sd * z
        if np.any(vals < 0):
            raise ParameterError(f"config {cid!r} produced negative samples; raise its mean")
        entries[cid] = vals
    return PerformanceTable("normal", entries, n_samples)


# --------------------------------------------------------------------------
# toy problems

class FunctionKind(str, enum.Enum):
    SPHERE = "SPHERE"
    RASTRIGIN = "RASTRIGIN"
    STEP_PLATEAU = "STEP_PLATEAU"


@dataclass(frozen=True)
class ToyProblem:
    """A box-constrained toy function whose optimum value is 0.

    STEP_PLATEAU is flat at ``plateau_level`` except in a small corner box
    (the first ``funnel_dims`` coordinates all within ``funnel_width`` of the
    upper bound). Inside the corner it drops by a factor of at least
    ``1 / funnel_depth`` and descends to 0 at the corner's centre. A uniform
    sample lands in the corner with probability :meth:`funnel_probability`,
    so random search stays on the plateau for ``B`` evaluations with
    probability ``(1 - p) ** B``; runs either finish near the optimum or
    never leave the plateau.
    """

    function: FunctionKind = FunctionKind.SPHERE
    dimension: int = 5
    lower: float = -5.0
    upper: float = 5.0
    plateau_level: float = 10.0
    funnel_width: float = 0.9
    funnel_dims: int = 3
    funnel_depth: float = 1e-10

    def __post_init__(self):
        try:
            object.__setattr__(self, "function", FunctionKind(self.function))
        except ValueError:
            raise ParameterError(f"unknown function {self.function!r}") from None
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ParameterError("dimension must be a positive integer")
        if not self.lower < self.upper:
            raise ParameterError("empty search box")
        if self.function is FunctionKind.STEP_PLATEAU:
            if not 0 < self.funnel_width <= self.upper - self.lower:
                raise ParameterError("funnel_width must fit in the box")
            if not 1 <= self.funnel_dims <= self.dimension:
                raise ParameterError("funnel_dims must be in [1, dimension]")
            if not 0 < self.funnel_depth <= 1:
                raise ParameterError("funnel_depth must be in (0, 1]")

    def funnel_probability(self) -> float:
        return (self.funnel_width / (self.upper - self.lower)) ** self.funnel_dims

    def _funnel_centre(self) -> np.ndarray:
        c = np.zeros(self.dimension)
        c[: self.funnel_dims] = self.upper - self.funnel_width / 2.0
        return c

    def __call__(self, x) -> np.ndarray:
        """Objective precision ``f(x) - f_opt`` for a point or a batch of points (rows)."""
        x = np.asarray(x, dtype=float)
        if self.function is FunctionKind.SPHERE:
            return (x * x).sum(axis=-1)
        if self.function is FunctionKind.RASTRIGIN:
            return 10.0 * self.dimension + (x * x - 10.0 * np.cos(2 * np.pi * x)).sum(axis=-1)
        inside = np.all(x[..., : self.funnel_dims] >= self.upper - self.funnel_width, axis=-1)
        c = self._funnel_centre()
        d2 = ((x - c) ** 2).sum(axis=-1)
        span = max(abs(self.lower), abs(self.upper))
        max_d2 = self.funnel_dims * (self.funnel_width / 2.0) ** 2 + (self.dimension - self.funnel_dims) * span ** 2
        low = self.plateau_level * self.funnel_depth * np.minimum(d2 / max_d2, 1.0)
        return np.where(inside, low, self.plateau_level)

    def to_dict(self) -> dict:
        return {"function": self.function.value, "dimension": self.dimension, "lower": self.lower,
                "upper": self.upper, "plateau_level": self.plateau_level,
                "funnel_width": self.funnel_width, "funnel_dims": self.funnel_dims,
                "funnel_depth": self.funnel_depth}


class OptimizerKind(str, enum.Enum):
    RANDOM_SEARCH = "RANDOM_SEARCH"
    STEP_SIZE_ES = "STEP_SIZE_ES"


_ES_DEFAULTS = {"sigma0": 1.0, "adapt": 1.5, "min_sigma": 1e-300}


@dataclass(frozen=True)
class OptimizerConfig:
    """A named optimizer setting.

    STEP_SIZE_ES is a (1+1)-ES: the step size is multiplied by ``adapt`` on a
    strict improvement and by ``adapt ** -0.25`` otherwise, which settles at a
    1/5 success rate. ``adapt = 1`` freezes the step size.
    """

    config_id: str
    kind: OptimizerKind = OptimizerKind.STEP_SIZE_ES
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        try:
            kind = OptimizerKind(self.kind)
        except ValueError:
            raise ParameterError(f"unknown optimizer {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        params = {k: float(v) for k, v in dict(self.params).items()}
        if kind is OptimizerKind.RANDOM_SEARCH and params:
            raise ParameterError("random search takes no parameters")
        if kind is OptimizerKind.STEP_SIZE_ES:
            unknown = set(params) - set(_ES_DEFAULTS)
            if unknown:
                raise ParameterError(f"unknown ES parameters {sorted(unknown)}")
            merged = {**_ES_DEFAULTS, **params}
            if merged["sigma0"] <= 0 or merged["adapt"] < 1.0 or merged["min_sigma"] <= 0:
                raise ParameterError("ES needs sigma0 > 0, adapt >= 1 and min_sigma > 0")
            params = merged
        object.__setattr__(self, "params", params)

    def to_dict(self) -> dict:
        return {"config_id": self.config_id, "kind": self.kind.value, "params": dict(self.params)}


def _improvements(values: np.ndarray) -> tuple[tuple[int, ...], tuple[float, ...]]:
    best = np.minimum.accumulate(values)
    keep = np.ones(best.size, dtype=bool)
    keep[1:] = best[1:] < best[:-1]
    idx = np.flatnonzero(keep)
    return tuple(int(i) + 1 for i in idx), tuple(float(v) for v in best[idx])


def run_toy_optimizer(problem: ToyProblem, optimizer: OptimizerConfig, budget: int, rng,
                      config_id: str | None = None, run_id: str = "0") -> RunTrajectory:
    """One run of ``budget`` evaluations, logged at improvements of the best-so-far."""
    if int(budget) != budget or budget < 1:
        raise ParameterError("budget must be a positive integer")
    if not isinstance(optimizer, OptimizerConfig):
        raise ParameterError("optimizer must be an OptimizerConfig")
    gen = as_generator(rng)
    budget = int(budget)
    d = problem.dimension
    if optimizer.kind is OptimizerKind.RANDOM_SEARCH:
        xs = gen.uniform(problem.lower, problem.upper, size=(budget, d))
        values = problem(xs)
    else:
        values = _es_values(problem, optimizer.params, budget, gen)
    evals, precs = _improvements(np.asarray(values, dtype=float))
    return RunTrajectory(config_id or optimizer.config_id, problem.function.value, str(run_id), evals, precs)


def _es_values(problem: ToyProblem, params, budget: int, gen: np.random.Generator) -> np.ndarray:
    d = problem.dimension
    sigma = params["sigma0"]
    up = params["adapt"]
    down = up ** -0.25
    min_sigma = params["min_sigma"]
    lo, hi = problem.lower, problem.upper
    x = gen.uniform(lo, hi, size=d)
    fx = float(problem(x))
    values = np.empty(budget)
    values[0] = fx
    steps = gen.standard_normal((budget, d))
    for t in range(1, budget):
        y = np.clip(x + sigma * steps[t], lo, hi)
        fy = float(problem(y))
        values[t] = fy
        if fy < fx:
            x, fx = y, fy
            sigma *= up
        else:
            if fy == fx:
                x = y  # drift across plateaus
            sigma = max(sigma * down, min_sigma)
    return values


def generate_runs(problem: ToyProblem, optimizers: Sequence[OptimizerConfig], runs_per_config: int,
                  budget: int, rng) -> list[RunTrajectory]:
    """``runs_per_config`` runs of every optimizer; run ``r`` of config ``c`` uses stream ``c*runs + r``."""
    if not optimizers:
        raise ParameterError("need at least one optimizer configuration")
    if int(runs_per_config) != runs_per_config or runs_per_config < 1:
        raise ParameterError("runs_per_config must be a positive integer")
    seed = rng if isinstance(rng, RngSeed) else RngSeed(int(rng))
    ids = [o.config_id for o in optimizers]
    if len(set(ids)) != len(ids):
        raise ParameterError("optimizer config ids must be unique")
    out = []
    for c, opt in enumerate(optimizers):
        for r in range(int(runs_per_config)):
            out.append(run_toy_optimizer(problem, opt, budget, seed.child(c * runs_per_config + r),
                                         run_id=str(r)))
    return out


def build_table_from_runs(problem: ToyProblem, optimizers: Sequence[OptimizerConfig],
                          runs_per_config: int = 200, targets: TargetSet | None = None,
                          budget: int = DEFAULT_BUDGET, rng=0) -> PerformanceTable:
    """Run every optimizer and store the AOC of each run."""
    targets = targets or default_target_set()
    runs = generate_runs(problem, optimizers, runs_per_config, budget, rng)
    entries: dict[str, list[float]] = {o.config_id: [] for o in optimizers}
    for tr in runs:
        entries[tr.config_id].append(trajectory_aoc(tr, targets, budget))
    return PerformanceTable(problem.function.value, entries, int(runs_per_config))
