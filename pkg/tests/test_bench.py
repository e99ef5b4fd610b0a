import csv
import io

import numpy as np
import pytest
from click.testing import CliRunner

from mementofilter import bench
from mementofilter.cli import main
from mementofilter.oracle import ranges_nonempty


def test_dataset_is_deterministic_distinct_and_sorted():
    for kind in bench.DATASETS:
        a = bench.make_dataset(kind, 1000, np.random.default_rng(5))
        b = bench.make_dataset(kind, 1000, np.random.default_rng(5))
        assert np.array_equal(a, b)
        assert a.size == 1000 and np.all(np.diff(a) > 0)


def test_dataset_from_file(tmp_path):
    path = tmp_path / "keys.bin"
    np.arange(0, 5000, 3, dtype="<u8").tofile(path)
    keys = bench.make_dataset("uniform", 100, np.random.default_rng(0), path)
    assert keys.size == 100 and np.all(keys % 3 == 0)
    with pytest.raises(ValueError):
        bench.make_dataset("uniform", 10**5, np.random.default_rng(0), path)


@pytest.mark.parametrize("kind,corr", [("uncorrelated", 0.0), ("correlated", 0.0), ("correlated", 0.5), ("correlated", 1.0)])
def test_queries_are_empty(kind, corr):
    rng = np.random.default_rng(1)
    keys = bench.make_dataset("uniform", 5000, rng)
    lefts, rights = bench.make_queries(keys, 3000, 32, rng, kind, corr)
    assert lefts.size == 3000
    assert np.all(rights - lefts == 31)
    assert not ranges_nonempty(keys, lefts, rights).any()


@pytest.mark.parametrize("corr,window", [(1.0, 1), (0.5, 2**15), (0.0, 2**30)])
def test_correlated_window(corr, window):
    rng = np.random.default_rng(2)
    keys = bench.make_dataset("uniform", 2000, rng)
    lefts, _ = bench.make_queries(keys, 2000, 1, rng, "correlated", corr)
    below = keys[np.searchsorted(keys, lefts, side="right") - 1]
    assert np.all(lefts - below <= np.uint64(window))
    if window > 1:
        assert (lefts - below).max() > window // 4


def test_correlated_window_clamps_at_top():
    keys = np.array([2**64 - 10], np.uint64)
    lefts, rights = bench.make_queries(keys, 50, 4, np.random.default_rng(0), "correlated", 0.9)
    assert np.all(rights >= lefts)
    assert not ranges_nonempty(keys, lefts, rights).any()


def test_real_queries_use_removed_keys():
    rng = np.random.default_rng(3)
    keys = bench.make_dataset("normal", 4000, rng)
    rest, anchors = bench.split_real(keys, 500, rng)
    assert rest.size + anchors.size == keys.size
    assert not np.isin(anchors, rest).any()
    lefts, _ = bench.make_queries(rest, 300, 1, rng, "real", anchors=anchors)
    assert np.isin(lefts, anchors).all()


def test_bounds():
    assert bench.range_fpr_bound(0.95, 1.0, 12) == pytest.approx(2 * bench.point_fpr_bound(0.95, 1.0, 12))
    assert bench.expandable_fpr_bound(0, 0.95, 1.0, 12) == pytest.approx(bench.range_fpr_bound(0.95, 1.0, 12))
    assert bench.memory_formula(0.95, 12, 5) == pytest.approx(20.125 / 0.95)
    assert bench.memory_formula(0.95, 11, 5, expandable=True) == pytest.approx(20.125 / 0.95)


def test_cluster_bound_values():
    assert bench.cluster_length_bound(0.95, 1, 12, 5) == pytest.approx(619.64, abs=0.01)
    assert bench.cluster_length_bound(0.95, 7, 5, 5) == pytest.approx(51.75, abs=0.01)


def test_small_fuzz_run():
    report = bench.fuzz(300, seed=1)
    assert report.sequences == 300
    assert report.checks > 0
    assert report.false_negatives == 0


def _rows(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def test_cli_fpr_row_below_bound():
    res = CliRunner().invoke(main, ["fpr", "--n-keys", "20000", "--queries", "20000", "--correlation", "0.8", "--seed", "7"])
    assert res.exit_code == 0, res.output
    (row,) = _rows(res.output)
    assert row["query_kind"] == "correlated"
    assert float(row["fpr"]) <= float(row["fpr_bound"]) + 3 * float(row["fpr_std_error"])


def test_cli_is_deterministic_apart_from_timings():
    args = ["sweep", "--n-keys", "5000", "--queries", "5000", "--seed", "3"]
    a, b = (_rows(CliRunner().invoke(main, args).output) for _ in range(2))
    strip = lambda rows: [{k: v for k, v in r.items() if k not in bench.TIMING_COLUMNS} for r in rows]
    assert strip(a) == strip(b)
    assert [int(r["r"]) for r in a] == list(range(1, 9))


def test_cli_other_commands(tmp_path):
    runner = CliRunner()
    out = tmp_path / "expand.csv"
    res = runner.invoke(main, ["expand", "--n-keys", "8000", "--queries", "2000", "--output", str(out)])
    assert res.exit_code == 0, res.output
    rows = _rows(out.read_text())
    assert [int(r["expansions"]) for r in rows] == list(range(1, len(rows) + 1))
    res = runner.invoke(main, ["bulkbench", "--n-keys", "3000"])
    assert res.exit_code == 0 and _rows(res.output)[0]["identical"] == "True"
    res = runner.invoke(main, ["fpr", "--expandable", "--n-keys", "3000", "--queries", "1000", "--range-len", "1"])
    assert res.exit_code == 0 and _rows(res.output)[0]["expandable"] == "True"


def test_cli_fuzz_exit_code():
    res = CliRunner().invoke(main, ["fuzz", "--seed", "7", "--sequences", "500"])
    assert res.exit_code == 0
    assert _rows(res.output)[0]["false_negatives"] == "0"


def test_cli_usage_errors():
    runner = CliRunner()
    assert runner.invoke(main, ["fpr", "--n-keys"]).exit_code == 2
    assert runner.invoke(main, ["fpr", "--correlation", "2"]).exit_code == 2
    assert runner.invoke(main, ["nope"]).exit_code == 2


def test_cli_runtime_error(tmp_path):
    path = tmp_path / "few.bin"
    np.arange(10, dtype="<u8").tofile(path)
    res = CliRunner().invoke(main, ["fpr", "--data-file", str(path), "--n-keys", "100"])
    assert res.exit_code == 1
    assert "error:" in res.output
