"""Benchmark scenarios emit well-formed CSV with the advertised columns."""

import csv

import pytest

from logstore import bench


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestScenarios:
    def test_registry_is_complete(self):
        assert set(bench.SCENARIOS) == {
            "write-scaling", "cache-hitratio", "freshness",
            "recovery", "batchget-crossover",
        }

    def test_unknown_scenario_rejected(self, tmp_path):
        with pytest.raises(SystemExit):
            bench.run_scenario("nope", str(tmp_path / "x.csv"))

    def test_write_scaling_schema(self, tmp_path):
        out = str(tmp_path / "ws.csv")
        bench.write_scaling(out, seed=1, ops=400)
        data = rows(out)
        assert [r["partitions"] for r in data] == ["1", "2", "4"]
        assert all(float(r["ops_per_sec"]) > 0 for r in data)

    def test_freshness_schema(self, tmp_path):
        out = str(tmp_path / "fr.csv")
        bench.freshness(out, seed=1, duration=0.5)
        data = rows(out)
        assert set(data[0]) == {"time", "node", "partition", "freshness"}
        assert all(0.0 <= float(r["freshness"]) <= 1.0 for r in data)
        # sampled every 20 ms for two followers
        assert len(data) == 2 * len({r["time"] for r in data})

    def test_recovery_schema(self, tmp_path):
        out = str(tmp_path / "rec.csv")
        bench.recovery(out, seed=1, records=5000)
        data = {r["mode"]: r for r in rows(out)}
        assert set(data) == {"checkpointed", "full-replay"}
        assert int(data["checkpointed"]["replayed"]) == 0
        assert int(data["full-replay"]["replayed"]) == 5000

    def test_batchget_crossover_schema(self, tmp_path):
        out = str(tmp_path / "bg.csv")
        bench.batchget_crossover(out, seed=1, live_keys=2000)
        data = rows(out)
        strategies = {float(r["batch_fraction"]): r["strategy"] for r in data}
        assert strategies[0.09] == "point"
        assert strategies[0.11] == "scan"

    def test_cache_hitratio_schema(self, tmp_path):
        out = str(tmp_path / "ch.csv")
        bench.cache_hitratio(out, seed=1, ops=4000)
        data = rows(out)
        assert {r["policy"] for r in data} == {"twostage", "lru", "fifo"}
        assert {r["distribution"] for r in data} == {"uniform", "zipfian"}
        assert len(data) == 2 * 5 * 3
