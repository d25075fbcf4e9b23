"""Command-line entry point: ``undersampling {aoc,generate,experiment}``.

Exit codes: 0 success, 1 internal error, 2 bad config or parameters,
3 bad input data.
"""
from __future__ import annotations

import argparse
import hashlib
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import experiments as ex
from . import io
from . import synth
from .errors import ConfigError, DataError, ParameterError, UnknownConfigError
from .perf import DEFAULT_BUDGET, HittingTimeMatrix, TargetSet, aoc, default_target_set, first_hitting_times
from .selection import RaceSpec, TestKind
from .store import PerformanceTable, RngSeed

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


# --------------------------------------------------------------------------
# config helpers

def _params(given, defaults: dict, where: str) -> dict:
    """Merge ``given`` over ``defaults``, rejecting unknown keys."""
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}; allowed {sorted(defaults)}")
    return {**defaults, **given}


def _pos_int(d: dict, key: str, where: str, minimum: int = 1) -> int:
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v or v < minimum:
        raise ConfigError(f"{where}.{key} must be an integer >= {minimum}, got {v!r}")
    return int(v)


def parse_targets(spec: str) -> TargetSet:
    """``"count:upper:lower"`` (log-spaced) or a comma-separated descending list."""
    try:
        if ":" in spec:
            count, upper, lower = spec.split(":")
            return default_target_set(int(count), float(upper), float(lower))
        return TargetSet(tuple(float(t) for t in spec.split(",")))
    except (ValueError, ParameterError) as exc:
        raise ConfigError(f"bad target spec {spec!r}: {exc}") from None


def _resolve(base: Path | None, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base is None else base / p


# --------------------------------------------------------------------------
# generators

@dataclass
class Plan:
    """A validated unit of work: everything is checked before ``run`` samples anything."""

    kind: str
    params: dict
    run: Callable
    inputs: list = field(default_factory=list)


_TABLE_GENERATORS = {
    "mixture_table": {"configs": None, "n_samples": 200, "stratified": False, "function_id": "synthetic"},
    "heavy_tail_table": {"n_configs": 33, "n_samples": 200, "tail_range": [0.10, 0.20],
                         "tail_value": 400.0, "body_range": [140.0, 170.0], "upper": float(DEFAULT_BUDGET)},
    "bimodal_table": {"n_configs": 33, "n_samples": 200},
    "normal_table": {"moments": None, "n_samples": 200, "exact": True},
    "toy_table": {"problem": {}, "optimizers": None, "runs_per_config": 200, "budget": DEFAULT_BUDGET,
                  "targets": "51:1e2:1e-8"},
}
_RUN_GENERATORS = {
    "toy_runs": {"problem": {}, "optimizers": None, "runs_per_config": 200, "budget": DEFAULT_BUDGET},
}
GENERATOR_KINDS = sorted(set(_TABLE_GENERATORS) | set(_RUN_GENERATORS))


def _toy_parts(p: dict, where: str):
    try:
        problem = synth.ToyProblem(**p["problem"])
    except TypeError as exc:
        raise ConfigError(f"{where}.problem: {exc}") from None
    opts = p["optimizers"]
    if not isinstance(opts, list) or not opts:
        raise ConfigError(f"{where}.optimizers must be a nonempty list")
    try:
        optimizers = [synth.OptimizerConfig(**o) for o in opts]
    except TypeError as exc:
        raise ConfigError(f"{where}.optimizers: {exc}") from None
    return problem, optimizers


def plan_generator(cfg: dict, seed: int, where: str = "generator") -> Plan:
    """Validate a generator config; the plan's ``run()`` returns a table or a list of runs."""
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError(f"{where} needs a 'kind' (one of {GENERATOR_KINDS})")
    kind = cfg["kind"]
    defaults = _TABLE_GENERATORS.get(kind, _RUN_GENERATORS.get(kind))
    if defaults is None:
        raise ConfigError(f"{where}: unknown kind {kind!r}; expected one of {GENERATOR_KINDS}")
    p = _params({k: v for k, v in cfg.items() if k != "kind"}, defaults, where)
    try:
        if kind == "mixture_table":
            if not isinstance(p["configs"], dict) or not p["configs"]:
                raise ConfigError(f"{where}.configs must map config ids to mixture specs")
            specs = {str(c): synth.MixtureSpec.from_dict(s) for c, s in p["configs"].items()}
            n = _pos_int(p, "n_samples", where)
            p["configs"] = {c: s.to_dict() for c, s in specs.items()}
            run = lambda: synth.table_from_mixtures(specs, n, RngSeed(seed), str(p["function_id"]),
                                                    bool(p["stratified"]))
        elif kind == "heavy_tail_table":
            n_cfg, n = _pos_int(p, "n_configs", where), _pos_int(p, "n_samples", where)
            synth.heavy_tail_specs(n_cfg, tuple(p["tail_range"]), float(p["tail_value"]), seed,
                                   float(p["upper"]), tuple(p["body_range"]))
            run = lambda: synth.heavy_tail_table(n_cfg, n, seed, tail_range=tuple(p["tail_range"]),
                                                 tail_value=float(p["tail_value"]), upper=float(p["upper"]),
                                                 body_range=tuple(p["body_range"]))
        elif kind == "bimodal_table":
            n_cfg, n = _pos_int(p, "n_configs", where), _pos_int(p, "n_samples", where)
            run = lambda: synth.bimodal_table(n_cfg, n, seed)
        elif kind == "normal_table":
            if not isinstance(p["moments"], dict) or not p["moments"]:
                raise ConfigError(f"{where}.moments must map config ids to [mean, sd]")
            moments = {str(c): (float(m), float(s)) for c, (m, s) in p["moments"].items()}
            n = _pos_int(p, "n_samples", where)
            run = lambda: synth.normal_table(moments, n, seed, bool(p["exact"]))
        else:
            problem, optimizers = _toy_parts(p, where)
            runs_per = _pos_int(p, "runs_per_config", where)
            budget = _pos_int(p, "budget", where)
            p["problem"] = problem.to_dict()
            p["optimizers"] = [o.to_dict() for o in optimizers]
            if kind == "toy_runs":
                run = lambda: synth.generate_runs(problem, optimizers, runs_per, budget, RngSeed(seed))
            else:
                targets = parse_targets(str(p["targets"]))
                run = lambda: synth.build_table_from_runs(problem, optimizers, runs_per, targets, budget,
                                                          RngSeed(seed))
    except (ParameterError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None
    return Plan(kind, p, run)


# --------------------------------------------------------------------------
# experiments

_SIZES = list(ex.DEFAULT_SIZES)
_EXPERIMENTS = {
    "best_by_mean_loss": {"sizes": _SIZES, "reps": 5000},
    "underestimation_error": {"sizes": _SIZES, "reps": 5000},
    "pairwise_decisions": {"n_pairs": 10_000, "k": 15, "reps": 500, "source": "EMPIRICAL"},
    "test_correctness": {"method": "T_TEST", "n_pairs": 10_000, "k": 15, "reps": 500, "alpha": 0.05,
                         "source": "EMPIRICAL", "n_bins": 20},
    "race_loss_study": {"variants": ["T_TEST", "FRIEDMAN", "SAMPLING_ONLY", "SHA-2", "SHA-3"],
                        "first_test": 2, "each_test": 1, "max_elites": 5, "budget_samples": 10_000,
                        "alpha": 0.05, "reps": 1000, "loss_grid_max": None},
    "rank_change": {"k": 15},
    "cumulative_means": {"config": None, "length": 200},
}
EXPERIMENT_KINDS = sorted(_EXPERIMENTS)


def parse_variant(v, shared: dict) -> RaceSpec:
    """A variant is a label (``T_TEST``, ``SHA-3`` ...) using shared settings, or a full spec object."""
    if isinstance(v, dict):
        return RaceSpec.from_dict({**shared, **v})
    if not isinstance(v, str):
        raise ConfigError(f"bad variant {v!r}")
    d = dict(shared)
    name = v.upper()
    if name.startswith("SHA"):
        d["test_kind"] = TestKind.SHA
        if name != "SHA":
            try:
                d["reduction_factor"] = int(name.split("-", 1)[1])
            except (IndexError, ValueError):
                raise ConfigError(f"bad SHA variant {v!r}; use e.g. SHA-2") from None
    else:
        try:
            d["test_kind"] = TestKind(name)
        except ValueError:
            raise ConfigError(f"unknown variant {v!r}") from None
    return RaceSpec.from_dict(d)


def _table_source(cfg: dict, seed: int, base: Path | None):
    src = cfg.get("table")
    if not isinstance(src, dict) or len(src) != 1 or not ({"csv", "generator"} & set(src)):
        raise ConfigError("config.table must be {\"csv\": path} or {\"generator\": {...}}")
    if "csv" in src:
        path = _resolve(base, str(src["csv"]))
        return (lambda: io.read_table(path)), {"csv": Path(path).name}, [path]
    plan = plan_generator(src["generator"], seed, "table.generator")
    if plan.kind not in _TABLE_GENERATORS:
        raise ConfigError(f"table.generator kind {plan.kind!r} does not produce a table")
    return plan.run, {"generator": {"kind": plan.kind, **plan.params}}, []


def plan_experiment(cfg: dict, seed: int, workers: int = 1, base: Path | None = None) -> Plan:
    kind = cfg.get("kind")
    if kind not in _EXPERIMENTS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {EXPERIMENT_KINDS}")
    extra = set(cfg) - {"kind", "seed", "table", "params"}
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    p = _params(cfg.get("params"), _EXPERIMENTS[kind], "params")
    load_table, table_desc, inputs = _table_source(cfg, seed, base)
    try:
        run = _experiment_runner(kind, p, seed, workers)
    except ParameterError as exc:
        raise ConfigError(f"params: {exc}") from None
    p["table"] = table_desc
    return Plan(kind, p, lambda: run(load_table()), inputs)


def _experiment_runner(kind: str, p: dict, seed: int, workers: int):
    rng = RngSeed(seed)
    if kind in ("best_by_mean_loss", "underestimation_error"):
        if not isinstance(p["sizes"], list) or not p["sizes"]:
            raise ConfigError("params.sizes must be a nonempty list")
        sizes = sorted({_pos_int({"s": s}, "s", "params.sizes") for s in p["sizes"]})
        reps = _pos_int(p, "reps", "params")
        p["sizes"] = sizes
        return lambda t: _selection_outputs(t, ex.selection_records(t, sizes, reps, rng, workers))
    if kind in ("pairwise_decisions", "test_correctness"):
        n_pairs, k, reps = (_pos_int(p, key, "params") for key in ("n_pairs", "k", "reps"))
        try:
            source = ex.Source(p["source"])
        except ValueError:
            raise ConfigError(f"params.source must be EMPIRICAL or NORMAL, got {p['source']!r}") from None
        if kind == "pairwise_decisions":
            return lambda t: _pair_outputs(ex.pairwise_decisions(t, n_pairs, k, reps, source, rng, workers))
        try:
            method = ex.Method(p["method"])
        except ValueError:
            raise ConfigError(f"params.method must be one of MEANS, T_TEST, WILCOXON, got {p['method']!r}") from None
        alpha = float(p["alpha"])
        if not 0 < alpha < 1:
            raise ConfigError("params.alpha must be in (0, 1)")
        if method is ex.Method.T_TEST and k < 2:
            raise ConfigError("params.k must be >= 2 for the t-test")
        n_bins = _pos_int(p, "n_bins", "params")
        return lambda t: _correctness_outputs(
            ex.test_correctness(t, method, n_pairs, k, reps, alpha, rng, workers, n_bins, source))
    if kind == "race_loss_study":
        shared = {key: p[key] for key in ("first_test", "each_test", "max_elites", "budget_samples", "alpha")}
        if not isinstance(p["variants"], list) or not p["variants"]:
            raise ConfigError("params.variants must be a nonempty list")
        specs = [parse_variant(v, shared) for v in p["variants"]]
        labels = [s.label for s in specs]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate variants {labels}")
        reps = _pos_int(p, "reps", "params")
        gmax = p["loss_grid_max"]
        if gmax is not None and not (isinstance(gmax, (int, float)) and gmax > 0):
            raise ConfigError("params.loss_grid_max must be a positive number or null")
        p["variants"] = [s.to_dict() for s in specs]
        return lambda t: _race_outputs(ex.race_loss_study(t, specs, reps, rng, workers, gmax))
    if kind == "rank_change":
        k = _pos_int(p, "k", "params")
        return lambda t: {"ranks.csv": (("config_id", "true_mean", "original_rank", "resampled_mean",
                                         "resampled_rank"),
                                        [tuple(r.values()) for r in ex.rank_change(t, k, rng)])}
    length = _pos_int(p, "length", "params")
    if p["config"] is None:
        raise ConfigError("params.config must name a configuration")
    config = str(p["config"])

    def cumulative(t):
        if config not in t:
            raise ConfigError(f"params.config {config!r} is not in the table")
        trace = ex.cumulative_means(t, config, length, rng)
        return {"cumulative_means.csv": (("config_id", "step", "cumulative_mean"),
                                         [(config, i + 1, v) for i, v in enumerate(trace)])}
    return cumulative


def _selection_outputs(table: PerformanceTable, recs) -> dict:
    rows = []
    for r in recs:
        under = (r.true_mean - r.sample_mean) / r.true_mean if r.true_mean != 0 else ""
        rows.append((r.rep, r.sample_size, r.selected, r.sample_mean, r.true_mean, r.loss, under))
    losses = ex._group(recs, lambda s, rs: np.array([r.loss for r in rs]))
    under = ex.underestimation_from_records(recs)
    summary = []
    for s, ls in losses.items():
        u = under[s]
        summary.append((s, ls.size, float(ls.mean()), float(np.median(ls)),
                        float(u.errors.mean()) if u.errors.size else "",
                        float(np.median(u.errors)) if u.errors.size else "", u.excluded))
    return {
        "selections.csv": (("rep", "sample_size", "selected", "sample_mean", "true_mean", "loss",
                            "underestimation"), rows),
        "summary.csv": (("sample_size", "reps", "mean_loss", "median_loss", "mean_underestimation",
                         "median_underestimation", "excluded"), summary),
    }


_PAIR_HEADER = ("config_a", "config_b", "true_mean_gap", "correct_fraction", "incorrect_fraction",
                "inconclusive_fraction")


def _pair_rows(records):
    return [(r.config_a, r.config_b, r.true_mean_gap, r.correct_fraction, r.incorrect_fraction,
             r.inconclusive_fraction) for r in records]


def _pair_outputs(study: ex.PairwiseStudy) -> dict:
    inc = study.incorrect_fractions()
    summary = [("pairs", len(study.records)), ("excluded_pairs", study.excluded_pairs),
               ("mean_incorrect_fraction", float(inc.mean()) if inc.size else "")]
    return {"pairs.csv": (_PAIR_HEADER, _pair_rows(study.records)),
            "summary.csv": (("statistic", "value"), summary)}


def _correctness_outputs(study: ex.CorrectnessStudy) -> dict:
    b = study.binned
    bins = [(b.gap_bin_edges[i], b.gap_bin_edges[i + 1], b.counts[i], b.correct[i], b.incorrect[i],
             b.inconclusive[i]) for i in range(b.counts.size)]
    summary = [("method", study.method.value), ("alpha", study.alpha), ("pairs", len(study.records)),
               ("excluded_pairs", study.excluded_pairs),
               ("fraction_pairs_incorrect_above_alpha", study.fraction_pairs_above_alpha),
               ("mean_incorrect_fraction", study.mean_incorrect),
               ("mean_inconclusive_fraction", study.mean_inconclusive)]
    return {"pairs.csv": (_PAIR_HEADER, _pair_rows(study.records)),
            "bins.csv": (("gap_lower", "gap_upper", "pairs", "correct", "incorrect", "inconclusive"), bins),
            "summary.csv": (("statistic", "value"), summary)}


def _race_outputs(study: ex.RaceStudy) -> dict:
    outcomes, ecdf, summary = [], [], []
    for v in study.variants:
        for rep, (loss, total, sel) in enumerate(zip(v.losses, v.total_samples, v.selected)):
            outcomes.append((rep, v.label, sel, loss, total))
        xs, fs = ex.loss_ecdf(v.losses)
        ecdf.extend((v.label, x, f) for x, f in zip(xs, fs))
        summary.append((v.label, v.spec.first_test, v.losses.size, v.mean_loss, float(np.median(v.losses)),
                        v.mean_total_samples, v.sum_total_samples, study.auc(v), study.loss_grid_max))
    return {
        "outcomes.csv": (("rep", "variant", "selected", "loss", "total_samples"), outcomes),
        "loss_ecdf.csv": (("variant", "loss", "ecdf"), ecdf),
        "summary.csv": (("variant", "first_test", "reps", "mean_loss", "median_loss", "mean_total_samples",
                         "sum_total_samples", "loss_auc", "loss_grid_max"), summary),
    }


# --------------------------------------------------------------------------
# output

def _write_outputs(out_dir: Path, files: dict, manifest: dict) -> dict:
    """Write every CSV, then the manifest naming them with their digests."""
    out_dir.mkdir(parents=True, exist_ok=True)
    listed = []
    for name in sorted(files):
        header, rows = files[name]
        data = io.csv_bytes(header, rows)
        io.atomic_write_bytes(out_dir / name, data)
        listed.append({"file": name, "sha256": hashlib.sha256(data).hexdigest()})
    manifest = {**manifest, "outputs": listed}
    io.write_manifest(out_dir / "manifest.json", manifest)
    return manifest


def _manifest(command: str, kind: str, seed, params: dict, inputs) -> dict:
    return {
        "tool": "undersampling",
        "version": __version__,
        "command": command,
        "kind": kind,
        "seed": seed,
        "params": params,
        "inputs": [{"file": Path(p).name, "sha256": io.sha256_file(p)} for p in inputs],
    }


def _seed_from(args, cfg: dict) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return seed


def cmd_aoc(args) -> int:
    targets = parse_targets(args.targets)
    if args.budget < 1:
        raise ConfigError("--budget must be positive")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", io.RunCountWarning)
        runs = io.read_run_log(args.run_log)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if args.function:
        runs = [r for r in runs if r.function_id == args.function]
        if not runs:
            raise DataError(f"no runs for function {args.function!r}")
    files = {}
    by_fn: dict[str, dict[str, list]] = {}
    for r in runs:
        if r.evaluations[-1] > args.budget:
            raise DataError(f"run {r.run_id!r} of {r.config_id!r} logs evaluation {r.evaluations[-1]} "
                            f"beyond the budget {args.budget}")
        row = first_hitting_times(r, targets, args.budget)
        value = aoc(HittingTimeMatrix(args.budget, row[None, :]))
        by_fn.setdefault(r.function_id, {}).setdefault(r.config_id, []).append((r.run_id, value))
    for fid, per_cfg in by_fn.items():
        rows = [(cid, i, v) for cid in sorted(per_cfg) for i, (_, v) in enumerate(per_cfg[cid])]
        files[f"aoc_{fid}.csv"] = (io.TABLE_COLUMNS, rows)
    params = {"targets": list(targets.targets), "budget": args.budget, "function": args.function}
    _write_outputs(Path(args.out_dir), files, _manifest("aoc", "aoc", None, params, [args.run_log]))
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = io.load_json(args.config)
    seed = _seed_from(args, cfg)
    plan = plan_generator({k: v for k, v in cfg.items() if k != "seed"}, seed)
    result = plan.run()
    if isinstance(result, PerformanceTable):
        files = {"table.csv": (io.TABLE_COLUMNS, list(io.table_rows(result)))}
    else:
        files = {"runs.csv": (io.RUN_LOG_COLUMNS, [(r.config_id, r.function_id, r.run_id, e, p)
                                                   for r in result
                                                   for e, p in zip(r.evaluations, r.precisions)])}
    _write_outputs(Path(args.out_dir), files, _manifest("generate", plan.kind, seed, plan.params, []))
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = io.load_json(args.config)
    seed = _seed_from(args, cfg)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    plan = plan_experiment(cfg, seed, args.workers, Path(args.config).parent)
    files = plan.run()
    _write_outputs(Path(args.out_dir), files, _manifest("experiment", plan.kind, seed, plan.params, plan.inputs))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="undersampling", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=".", help="directory for result files (default: .)")
    common.add_argument("--seed", type=int, default=None, help="master seed; overrides the config's seed")
    common.add_argument("--workers", type=int, default=1, help="worker processes (default: 1)")

    p = sub.add_parser("aoc", parents=[common], help="AOC table from a run-log CSV")
    p.add_argument("run_log", help="CSV with columns " + ",".join(io.RUN_LOG_COLUMNS))
    p.add_argument("--targets", default="51:1e2:1e-8",
                   help="count:upper:lower (log-spaced) or a descending comma list (default: 51:1e2:1e-8)")
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="evaluation budget B (default: 10000)")
    p.add_argument("--function", default=None, help="only this function_id")
    p.set_defaults(func=cmd_aoc)

    p = sub.add_parser("generate", parents=[common], help="synthetic table or run log from a JSON config")
    p.add_argument("--config", required=True, help="generator config (JSON)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("experiment", parents=[common], help="run an experiment from a JSON config")
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError, UnknownConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
