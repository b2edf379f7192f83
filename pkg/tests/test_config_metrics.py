import json

import pytest

from pimsim.config import (
    ConfigError, SimConfig, apply_override, load_config, resolve_config_path, shipped_configs,
)
from pimsim.metrics import CSV_COLUMNS, Metrics, compare, overhead_report, report


class TestConfig:
    def test_defaults_validate(self):
        cfg = SimConfig().validate()
        assert (cfg.signature.bits, cfg.signature.segments, cfg.signature.capacity) == (2048, 4, 250)
        assert cfg.kernel.instruction_cap == 1_000_000 and cfg.kernel.rollback_threshold == 3
        assert cfg.dbi.interval_cycles == 800_000

    def test_overrides_coerce_strings(self):
        cfg = SimConfig()
        apply_override(cfg, "signature.bits", "0x2000")
        apply_override(cfg, "kernel.partial_commits", "false")
        apply_override(cfg, "energy.dram_pj_per_bit", "7")
        apply_override(cfg, "seed", "5")
        assert cfg.signature.bits == 8192 and cfg.kernel.partial_commits is False
        assert cfg.energy.dram_pj_per_bit == 7.0 and cfg.seed == 5

    @pytest.mark.parametrize("key,value", [
        ("nope", 1), ("timing.nope", 1), ("bogus.bits", 1), ("kernel.partial_commits", "maybe"),
    ])
    def test_bad_overrides(self, key, value):
        with pytest.raises(ConfigError):
            apply_override(SimConfig(), key, value)

    @pytest.mark.parametrize("overrides", [
        {"protocol": "mesi"}, {"signature.bits": 2000}, {"signature.bits": 96, "signature.segments": 4},
        {"timing.pim_dram_access_cycles": 999}, {"caches.pim_cores": 0}, {"timing.cpu_ipc": 0},
    ])
    def test_invalid_configs(self, overrides):
        with pytest.raises(ConfigError):
            SimConfig().replace(**overrides)

    def test_replace_leaves_original(self):
        base = SimConfig()
        other = base.replace(signature__bits=8192)
        assert base.signature.bits == 2048 and other.signature.bits == 8192

    def test_load_file_and_relative_trace(self, tmp_path):
        (tmp_path / "t.trc").write_text("0 R 40\n")
        path = tmp_path / "c.toml"
        path.write_text('protocol = "fg"\n[signature]\nbits = 8192\n[workload]\ntrace = "t.trc"\n')
        cfg = load_config(path, {"seed": 3})
        assert cfg.protocol == "fg" and cfg.signature.bits == 8192 and cfg.seed == 3
        assert cfg.workload["trace"] == str(tmp_path / "t.trc")

    def test_bad_toml(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("protocol = \n")
        with pytest.raises(ConfigError):
            load_config(path)
        path.write_text("signature = 3\n")
        with pytest.raises(ConfigError, match="table"):
            load_config(path)

    def test_shipped_names(self):
        assert {"high-sharing", "no-sharing", "fig3-timeline", "conflict-heavy"} <= set(shipped_configs())
        assert resolve_config_path("no-sharing").name == "no-sharing.toml"
        with pytest.raises(ConfigError, match="shipped configs"):
            resolve_config_path("missing")


class TestOverhead:
    def test_computable_figures(self):
        r = overhead_report(SimConfig())
        core = r["per_pim_core"]
        assert core["signature_bytes"] == 512
        assert core["speculative_bits_pct_of_l1"] == 0.2
        assert core["dirty_mask_pct_of_l1"] == 1.6
        assert r["dbi"]["bytes"] == 224

    def test_ambiguous_totals_are_flagged(self):
        r = overhead_report(SimConfig())
        cpu = r["processor"]
        assert cpu["published_bytes"] == 8192
        assert cpu["received_pim_signatures_bytes"] == 8192
        assert cpu["cpu_write_set_bytes"] == 4096
        assert cpu["flag"]
        total = r["per_pim_core_total"]
        assert total["published_bytes"] == 596
        assert total["residual_a"] != 0 and total["residual_b"] != 0 and total["flag"]

    def test_scales_with_geometry(self):
        r = overhead_report(SimConfig().replace(signature__bits=8192))
        assert r["per_pim_core"]["signature_bytes"] == 2048


def sample(protocol="lazypim", cycles=100, traffic=40):
    m = Metrics(protocol=protocol, seed=2, total_cycles=cycles)
    m.offchip_bytes["data"] = traffic
    m.counters["conflicts"] = 2
    m.counters["rollbacks"] = 1
    m.counters["commit_attempts"] = 8
    m.energy_pj["dram"] = 5.0
    return m


class TestMetrics:
    def test_derived(self):
        m = sample()
        assert m.offchip_total == 40 and m.conflict_rate == 0.25 and m.energy_total == 5.0

    def test_json_round_trip(self):
        m = sample()
        m.params = {"signature.bits": "8192"}
        back = Metrics.from_dict(json.loads(report(m)))
        assert back == m

    def test_schema_checked(self):
        with pytest.raises(ValueError):
            Metrics.from_dict({"schema": 99})

    def test_check_catches_inconsistency(self):
        m = sample()
        m.counters["rollbacks"] = 5
        with pytest.raises(AssertionError):
            m.check()

    def test_csv_and_baseline(self):
        base = sample("cpu-only", cycles=200, traffic=80)
        text = report([sample(), base], "csv", baseline=base)
        header, first, second = text.strip().split("\n")
        assert header.split(",") == CSV_COLUMNS
        row = dict(zip(CSV_COLUMNS, first.split(",")))
        assert float(row["speedup_vs_baseline"]) == 2.0
        assert float(row["traffic_vs_baseline"]) == 0.5

    def test_table(self):
        text = report([sample(), sample("fg")], "table")
        assert text.splitlines()[0].startswith("protocol")
        with pytest.raises(ValueError):
            report(sample(), "xml")

    def test_compare_identity(self):
        runs = [sample(), sample("fg", 300)]
        rows = compare(runs, runs)
        assert all(r[k] == 1.0 for r in rows for k in ("total_cycles", "offchip_total", "conflicts"))

    def test_compare_ratio(self):
        rows = compare([sample(cycles=100)], [sample(cycles=50)])
        assert rows[0]["total_cycles"] == 0.5
