import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from undersampling.errors import ConfigError, ParameterError
from undersampling.perf import default_target_set, first_hitting_times
from undersampling.store import RngSeed, true_means
from undersampling.synth import (Family, FunctionKind, MixtureComponent, MixtureSpec, OptimizerConfig,
                                 OptimizerKind, ToyProblem, build_table_from_runs, generate_runs,
                                 heavy_tail_specs, heavy_tail_table, normal_table, point_mass,
                                 run_toy_optimizer, sample_mixture, table_from_mixtures)


def mix(*parts, **kw):
    return MixtureSpec(tuple(MixtureComponent(w, f, p) for w, f, p in parts), **kw)


# mixtures

def test_point_mass():
    assert np.all(sample_mixture(point_mass(7), 50, RngSeed(0)) == 7)


def test_mixture_mean():
    spec = mix((0.8, "NORMAL", {"mean": 100, "sd": 10}), (0.2, "NORMAL", {"mean": 500, "sd": 20}))
    x = sample_mixture(spec, 100_000, RngSeed(1))
    assert abs(x.mean() - 180) < 2
    assert spec.mean() == pytest.approx(180)


def test_clamp_at_zero():
    x = sample_mixture(mix((1.0, "NORMAL", {"mean": -50, "sd": 1})), 100, RngSeed(0))
    assert np.all(x == 0)


def test_clamp_at_budget():
    x = sample_mixture(mix((1.0, "POINT_MASS", {"value": 5e4})), 3, RngSeed(0))
    assert np.all(x == 10_000)


@pytest.mark.parametrize("parts", [
    [(0.5, "NORMAL", {"mean": 1, "sd": 1})],
    [(0.0, "NORMAL", {"mean": 1, "sd": 1}), (1.0, "POINT_MASS", {"value": 1})],
    [(1.0, "NORMAL", {"mean": 1})],
    [(1.0, "NORMAL", {"mean": 1, "sd": -1})],
    [(1.0, "GAMMA", {"k": 1})],
])
def test_invalid_mixtures(parts):
    with pytest.raises(ParameterError):
        mix(*parts)


def test_mixture_dict_roundtrip():
    spec = mix((0.3, "LOGNORMAL", {"mu": 1, "sigma": 0.5, "shift": 2}), (0.7, "POINT_MASS", {"value": 3}))
    assert MixtureSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError):
        MixtureSpec.from_dict({"parts": []})


@pytest.mark.parametrize("spec, var", [
    (mix((1.0, "NORMAL", {"mean": 50, "sd": 5})), 25.0),
    (mix((0.5, "POINT_MASS", {"value": 10}), (0.5, "POINT_MASS", {"value": 30})), 100.0),
    (mix((1.0, "LOGNORMAL", {"mu": 2, "sigma": 0.4})), (math.exp(0.16) - 1) * math.exp(4 + 0.16)),
])
def test_mixture_moments_converge(spec, var):
    n = 100_000
    x = sample_mixture(spec, n, RngSeed(11))
    assert abs(x.mean() - spec.mean()) <= 3 * math.sqrt(var / n)


def test_stratified_counts_exact():
    spec = mix((0.15, "POINT_MASS", {"value": 1}), (0.85, "POINT_MASS", {"value": 0}))
    x = sample_mixture(spec, 200, RngSeed(0), stratified=True)
    assert x.sum() == 30


def test_sampling_deterministic():
    spec = mix((1.0, "NORMAL", {"mean": 5, "sd": 1}))
    assert np.array_equal(sample_mixture(spec, 10, RngSeed(4)), sample_mixture(spec, 10, RngSeed(4)))


def test_heavy_tail_table_shape():
    t = heavy_tail_table()
    assert len(t) == 33 and all(t.samples(c).size == 200 for c in t.config_ids)
    # every config has a 10-20% share of large values
    for c in t.config_ids:
        share = np.mean(t.samples(c) > 300)
        assert 0.10 <= share <= 0.20
    assert t.config_ids[int(np.argmin(true_means(t)))] == "c00"


def test_heavy_tail_rejects():
    with pytest.raises(ParameterError):
        heavy_tail_specs(tail_range=(0.3, 0.2))


def test_table_from_mixtures_point_masses():
    t = table_from_mixtures({"a": point_mass(3), "b": point_mass(4)}, 5, RngSeed(0))
    assert t.samples("a").tolist() == [3] * 5


def test_normal_table_exact_moments():
    t = normal_table({"a": (100, 10)})
    assert t.samples("a").mean() == pytest.approx(100)
    assert t.samples("a").std(ddof=1) == pytest.approx(10)


# toy problems and optimizers

def test_problem_optima():
    for fn in FunctionKind:
        p = ToyProblem(fn)
        x = np.zeros(5)
        if fn is FunctionKind.STEP_PLATEAU:
            x = p._funnel_centre()
        assert p(x) == 0


def test_random_search_single_eval():
    p = ToyProblem("SPHERE")
    tr = run_toy_optimizer(p, OptimizerConfig("rs", "RANDOM_SEARCH"), 1, RngSeed(2))
    x = RngSeed(2).generator().uniform(-5, 5, size=(1, 5))
    assert tr.points == [(1, float(p(x)[0]))]


def test_es_solves_sphere():
    p = ToyProblem("SPHERE")
    es = OptimizerConfig("es", "STEP_SIZE_ES")
    finals = [run_toy_optimizer(p, es, 10_000, RngSeed(0, r)).precisions[-1] for r in range(100)]
    assert np.mean(np.array(finals) <= 1e-8) >= 0.9


def test_random_search_on_plateau_is_bimodal():
    p = ToyProblem("STEP_PLATEAU")
    t = build_table_from_runs(p, [OptimizerConfig("rs", "RANDOM_SEARCH")], 200, budget=3000, rng=3)
    x = t.samples("rs")
    hist, _ = np.histogram(x, bins=10, range=(0, x.max()))
    # peaks at both ends (early successes, stalled runs) with a valley between them
    valley = hist[1:-1].min()
    assert hist[0] >= 2 * valley and hist[-1] >= 2 * valley and valley < hist[1:-1].max()


def test_optimizer_validation():
    with pytest.raises(ParameterError):
        OptimizerConfig("x", "RANDOM_SEARCH", {"sigma0": 1})
    with pytest.raises(ParameterError):
        OptimizerConfig("x", "STEP_SIZE_ES", {"sigma0": -1})
    with pytest.raises(ParameterError):
        OptimizerConfig("x", "STEP_SIZE_ES", {"speed": 1})
    with pytest.raises(ParameterError):
        run_toy_optimizer(ToyProblem(), OptimizerConfig("x"), 0, RngSeed(0))
    with pytest.raises(ParameterError):
        ToyProblem(dimension=0)


@settings(max_examples=30)
@given(st.integers(0, 2**32), st.sampled_from(list(FunctionKind)), st.sampled_from(list(OptimizerKind)),
       st.integers(1, 300))
def test_trajectories_valid(seed, fn, kind, budget):
    tr = run_toy_optimizer(ToyProblem(fn, dimension=3), OptimizerConfig("c", kind), budget, RngSeed(seed))
    assert tr.evaluations[0] == 1 and tr.evaluations[-1] <= budget
    assert all(b > a for a, b in zip(tr.evaluations, tr.evaluations[1:]))
    assert all(b < a for a, b in zip(tr.precisions, tr.precisions[1:]))
    first_hitting_times(tr, default_target_set(), budget)


def test_build_table_shapes():
    p = ToyProblem("SPHERE", dimension=2)
    one = build_table_from_runs(p, [OptimizerConfig("a", "RANDOM_SEARCH")], 1, budget=20, rng=0)
    assert one.samples("a").size == 1
    opts = [OptimizerConfig(f"c{i:02d}", "RANDOM_SEARCH") for i in range(33)]
    t = build_table_from_runs(p, opts, 200, budget=5, rng=0)
    assert len(t) == 33 and {t.samples(c).size for c in t.config_ids} == {200}


def test_better_step_policy_lower_aoc():
    p = ToyProblem("SPHERE")
    opts = [OptimizerConfig("adaptive", "STEP_SIZE_ES"),
            OptimizerConfig("frozen", "STEP_SIZE_ES", {"adapt": 1.0, "sigma0": 0.3}),
            OptimizerConfig("random", "RANDOM_SEARCH")]
    t = build_table_from_runs(p, opts, 10, budget=2000, rng=1)
    m = dict(zip(t.config_ids, true_means(t)))
    assert m["adaptive"] < m["frozen"] < m["random"]


def test_generate_runs_ids_and_determinism():
    p = ToyProblem("RASTRIGIN", dimension=2)
    opts = [OptimizerConfig("a", "RANDOM_SEARCH"), OptimizerConfig("b")]
    runs = generate_runs(p, opts, 3, 50, RngSeed(7))
    assert [(r.config_id, r.run_id) for r in runs] == [(c, str(i)) for c in "ab" for i in range(3)]
    assert runs == generate_runs(p, opts, 3, 50, RngSeed(7))
    with pytest.raises(ParameterError):
        generate_runs(p, [opts[0], opts[0]], 1, 5, RngSeed(0))
