import csv
import json

import numpy as np
import pytest

from oracles import brute_force_auc
from undersampling import cli, io
from undersampling.errors import DataError
from undersampling.perf import RunTrajectory, default_target_set, first_hitting_times
from undersampling.store import PerformanceTable

LOG_HEADER = "config_id,function_id,run_id,evaluations,best_precision\n"


def write(path, text):
    path.write_text(text)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(argv):
    return cli.main([str(a) for a in argv])


# io module

def test_run_log_roundtrip(tmp_path):
    runs = [RunTrajectory.from_points([(1, 5.0), (7, 0.1 + 0.2)], "a", "f", "0"),
            RunTrajectory.from_points([(2, 1e-9)], "b", "f", "0")]
    io.write_run_log(tmp_path / "log.csv", runs)
    assert io.read_run_log(tmp_path / "log.csv") == runs


def test_run_log_line_numbers(tmp_path):
    p = write(tmp_path / "log.csv", LOG_HEADER + "a,f,0,1,5\na,f,0,2\n")
    with pytest.raises(DataError, match=r"log.csv:3"):
        io.read_run_log(p)
    p = write(tmp_path / "log2.csv", LOG_HEADER + "a,f,0,1,5\na,f,0,3,7\n")
    with pytest.raises(DataError, match=r":3: best_precision increased"):
        io.read_run_log(p)


def test_run_log_header_and_empty(tmp_path):
    with pytest.raises(DataError, match="empty file"):
        io.read_run_log(write(tmp_path / "e.csv", ""))
    with pytest.raises(DataError, match="expected header"):
        io.read_run_log(write(tmp_path / "h.csv", "a,b\n1,2\n"))
    with pytest.raises(DataError, match="no data rows"):
        io.read_run_log(write(tmp_path / "n.csv", LOG_HEADER))


def test_unequal_run_counts_warn(tmp_path):
    p = write(tmp_path / "log.csv", LOG_HEADER + "a,f,0,1,5\na,f,1,1,5\nb,f,0,1,5\n")
    with pytest.warns(io.RunCountWarning, match="a=2, b=1"):
        io.read_run_log(p)


def test_table_roundtrip_and_completeness(tmp_path):
    t = PerformanceTable("f", {"a": [0.1, 2.5, 1 / 3], "b": [7.0]})
    io.write_table(tmp_path / "t.csv", t)
    back = io.read_table(tmp_path / "t.csv", "f")
    assert back.config_ids == t.config_ids
    assert all(np.array_equal(back.samples(c), t.samples(c)) for c in t.config_ids)
    bad = write(tmp_path / "gap.csv", "config_id,sample_index,aoc_value\na,0,1\na,2,1\n")
    with pytest.raises(DataError, match="missing sample indices"):
        io.read_table(bad)
    dup = write(tmp_path / "dup.csv", "config_id,sample_index,aoc_value\na,0,1\na,0,2\n")
    with pytest.raises(DataError, match=":3: duplicate"):
        io.read_table(dup)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    io.write_csv(tmp_path / "x.csv", ["a"], [[1]])
    assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]


# aoc command

def test_aoc_minimal_log(tmp_path):
    log = write(tmp_path / "log.csv", LOG_HEADER + "a,f,0,1,50\na,f,0,10,0.5\n")
    assert run(["aoc", log, "--budget", 20, "--out-dir", tmp_path / "out"]) == 0
    rows = read_csv(tmp_path / "out" / "aoc_f.csv")
    assert [(r["config_id"], r["sample_index"]) for r in rows] == [("a", "0")]
    tr = RunTrajectory.from_points([(1, 50.0), (10, 0.5)])
    times = first_hitting_times(tr, default_target_set(), 20)
    assert float(rows[0]["aoc_value"]) == pytest.approx(20 - brute_force_auc(times[None, :], 20), abs=1e-9)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["inputs"][0]["sha256"] == io.sha256_file(log)


def test_aoc_idempotent(tmp_path):
    log = write(tmp_path / "log.csv", LOG_HEADER + "a,f,0,1,50\na,f,0,10,0.5\nb,f,0,3,1e-9\n")
    run(["aoc", log, "--out-dir", tmp_path / "o1"])
    run(["aoc", log, "--out-dir", tmp_path / "o2"])
    for name in ("aoc_f.csv", "manifest.json"):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()


def test_aoc_empty_file_exit_code(tmp_path, capsys):
    assert run(["aoc", write(tmp_path / "e.csv", ""), "--out-dir", tmp_path]) == cli.EXIT_DATA
    assert "empty file" in capsys.readouterr().err


def test_aoc_warns_on_missing_runs(tmp_path, capsys):
    log = write(tmp_path / "log.csv", LOG_HEADER + "a,f,0,1,5\na,f,1,1,5\nb,f,0,1,5\n")
    assert run(["aoc", log, "--out-dir", tmp_path / "o"]) == 0
    assert "unequal run counts" in capsys.readouterr().err


def test_aoc_bad_targets(tmp_path):
    log = write(tmp_path / "log.csv", LOG_HEADER + "a,f,0,1,5\n")
    assert run(["aoc", log, "--targets", "3:1:10", "--out-dir", tmp_path]) == cli.EXIT_CONFIG


def test_parse_targets():
    assert cli.parse_targets("3:1:1e-4").targets == pytest.approx((1, 1e-2, 1e-4))
    assert cli.parse_targets("10,1,0.5").targets == (10, 1, 0.5)


# generate command

def gen_config(tmp_path, cfg, name="gen.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_generate_point_mass(tmp_path):
    cfg = gen_config(tmp_path, {"kind": "mixture_table", "n_samples": 4, "configs": {
        "a": {"components": [{"weight": 1.0, "family": "POINT_MASS", "params": {"value": 7}}]}}})
    assert run(["generate", "--config", cfg, "--out-dir", tmp_path / "o"]) == 0
    t = io.read_table(tmp_path / "o" / "table.csv")
    assert t.samples("a").tolist() == [7.0] * 4


def test_generate_heavy_tail_and_determinism(tmp_path):
    cfg = gen_config(tmp_path, {"kind": "heavy_tail_table", "seed": 4})
    run(["generate", "--config", cfg, "--out-dir", tmp_path / "a"])
    run(["generate", "--config", cfg, "--out-dir", tmp_path / "b"])
    t = io.read_table(tmp_path / "a" / "table.csv")
    assert len(t) == 33 and {t.samples(c).size for c in t.config_ids} == {200}
    assert (tmp_path / "a" / "table.csv").read_bytes() == (tmp_path / "b" / "table.csv").read_bytes()
    run(["generate", "--config", cfg, "--out-dir", tmp_path / "c", "--seed", 5])
    assert (tmp_path / "a" / "table.csv").read_bytes() != (tmp_path / "c" / "table.csv").read_bytes()


def test_generate_toy_runs_feed_aoc(tmp_path):
    cfg = gen_config(tmp_path, {"kind": "toy_runs", "problem": {"function": "SPHERE", "dimension": 2},
                                "optimizers": [{"config_id": "es"}, {"config_id": "rs", "kind": "RANDOM_SEARCH"}],
                                "runs_per_config": 3, "budget": 200})
    assert run(["generate", "--config", cfg, "--out-dir", tmp_path / "g"]) == 0
    assert run(["aoc", tmp_path / "g" / "runs.csv", "--budget", 200, "--out-dir", tmp_path / "a"]) == 0
    assert len(read_csv(tmp_path / "a" / "aoc_SPHERE.csv")) == 6


@pytest.mark.parametrize("cfg", [
    {"kind": "nope"},
    {"kind": "heavy_tail_table", "n_configs": 0},
    {"kind": "heavy_tail_table", "colour": "red"},
    {"kind": "mixture_table", "configs": {"a": {"components": [{"weight": 0.5, "family": "NORMAL",
                                                                "params": {"mean": 1, "sd": 1}}]}}},
    {"kind": "toy_runs", "optimizers": [{"config_id": "x", "kind": "HILL_CLIMB"}]},
])
def test_generate_config_errors(tmp_path, cfg):
    assert run(["generate", "--config", gen_config(tmp_path, cfg), "--out-dir", tmp_path / "o"]) == cli.EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    assert run(["generate", "--config", p]) == cli.EXIT_CONFIG


# experiment command

def exp_config(tmp_path, kind, params=None, table=None, seed=1):
    table = table or {"generator": {"kind": "mixture_table", "n_samples": 5, "configs": {
        c: {"components": [{"weight": 1.0, "family": "POINT_MASS", "params": {"value": v}}]}
        for c, v in (("a", 3), ("b", 1), ("c", 2))}}}
    return gen_config(tmp_path, {"kind": kind, "seed": seed, "table": table, "params": params or {}}, "exp.json")


def test_experiment_constants_loss_zero(tmp_path):
    cfg = exp_config(tmp_path, "best_by_mean_loss", {"sizes": [2, 5], "reps": 30})
    assert run(["experiment", "--config", cfg, "--out-dir", tmp_path / "o"]) == 0
    rows = read_csv(tmp_path / "o" / "selections.csv")
    assert len(rows) == 60 and {r["loss"] for r in rows} == {"0.0"}


def test_experiment_repeatable_digests(tmp_path):
    cfg = exp_config(tmp_path, "test_correctness", {"n_pairs": 30, "reps": 20, "method": "WILCOXON"},
                     table={"generator": {"kind": "bimodal_table", "n_configs": 6, "n_samples": 40}})
    run(["experiment", "--config", cfg, "--out-dir", tmp_path / "a"])
    run(["experiment", "--config", cfg, "--out-dir", tmp_path / "b", "--workers", 2])
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"]
    assert {o["file"] for o in ma["outputs"]} == {"pairs.csv", "bins.csv", "summary.csv"}
    for o in ma["outputs"]:
        assert io.sha256_file(tmp_path / "a" / o["file"]) == o["sha256"]


def test_experiment_race_five_variants(tmp_path):
    table_cfg = gen_config(tmp_path, {"kind": "heavy_tail_table", "n_configs": 9, "n_samples": 50}, "t.json")
    run(["generate", "--config", table_cfg, "--out-dir", tmp_path / "t"])
    cfg = exp_config(tmp_path, "race_loss_study", {"reps": 10}, table={"csv": "t/table.csv"})
    assert run(["experiment", "--config", cfg, "--out-dir", tmp_path / "o"]) == 0
    summary = read_csv(tmp_path / "o" / "summary.csv")
    assert [r["variant"] for r in summary] == ["T_TEST", "FRIEDMAN", "SAMPLING_ONLY", "SHA-2", "SHA-3"]
    assert all(r["first_test"] == "2" for r in summary)
    assert len(read_csv(tmp_path / "o" / "outcomes.csv")) == 50
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["inputs"][0]["file"] == "table.csv"


@pytest.mark.parametrize("kind, params", [
    ("pairwise_decisions", {"n_pairs": 10, "reps": 5}),
    ("underestimation_error", {"sizes": [3], "reps": 5}),
    ("rank_change", {"k": 3}),
    ("cumulative_means", {"config": "a", "length": 7}),
])
def test_other_experiment_kinds(tmp_path, kind, params):
    assert run(["experiment", "--config", exp_config(tmp_path, kind, params), "--out-dir", tmp_path / "o"]) == 0


@pytest.mark.parametrize("kind, params", [
    ("no_such_kind", {}),
    ("best_by_mean_loss", {"sizes": [0]}),
    ("best_by_mean_loss", {"repetitions": 3}),
    ("race_loss_study", {"variants": ["T_TEST", "BOGUS"]}),
    ("race_loss_study", {"variants": ["SHA-1"]}),
    ("test_correctness", {"method": "KS"}),
    ("test_correctness", {"k": 1}),
    ("cumulative_means", {"config": "zzz"}),
])
def test_experiment_config_errors(tmp_path, kind, params):
    cfg = exp_config(tmp_path, kind, params)
    assert run(["experiment", "--config", cfg, "--out-dir", tmp_path / "o"]) == cli.EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_experiment_missing_table_is_data_error(tmp_path):
    cfg = exp_config(tmp_path, "rank_change", table={"csv": "missing.csv"})
    assert run(["experiment", "--config", cfg, "--out-dir", tmp_path / "o"]) == cli.EXIT_DATA


def test_internal_error_code(tmp_path, monkeypatch):
    def boom(args):
        raise RuntimeError("unexpected")
    monkeypatch.setattr(cli, "cmd_generate", boom)
    monkeypatch.setattr(cli, "build_parser", _parser_with(boom))
    assert run(["generate", "--config", "x"]) == cli.EXIT_INTERNAL


def _parser_with(fn):
    original = cli.build_parser

    def build():
        parser = original()
        parser.set_defaults(func=fn)
        for action in parser._subparsers._group_actions:
            for sub in action.choices.values():
                sub.set_defaults(func=fn)
        return parser
    return build


def test_module_entry_point():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "undersampling", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "undersampling" in out.stdout
