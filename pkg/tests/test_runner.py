"""Run orchestration: reports, self-verification, comparison, sweeps."""

from __future__ import annotations

import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from conftest import band_synth
from roamsim.agent import PromptConfig
from roamsim.errors import ConfigError, DataError, EndpointError
from roamsim.gateway import EndpointConfig, MockRule
from roamsim.runner import (
    ExperimentConfig,
    PolicySpec,
    compare,
    emit_plot_data,
    read_report,
    recompute_metrics,
    run_experiment,
    strip_volatile,
    sweep,
    trace_content_hash,
    verify_report,
    write_report,
)
from roamsim.trace import SynthConfig, generate_synthetic, trace_to_jsonl


def cfg_for(policy: PolicySpec, seed=71, duration=150, **kw) -> ExperimentConfig:
    return ExperimentConfig(policy=policy, synth=band_synth(seed=seed, duration=duration), **kw)


class TestValidateConfig:
    def test_requires_exactly_one_trace_source(self):
        with pytest.raises(ConfigError, match="exactly one"):
            run_experiment(ExperimentConfig(policy=PolicySpec(kind="legacy")))

    def test_interval_conflicts_with_ap_select(self):
        cfg = cfg_for(PolicySpec(kind="legacy"), interval=30)
        with pytest.raises(ConfigError, match="interval only applies"):
            run_experiment(cfg)

    def test_threshold_task_restricts_policies(self):
        cfg = cfg_for(PolicySpec(kind="legacy"), task="threshold")
        with pytest.raises(ConfigError, match="threshold task supports"):
            run_experiment(cfg)

    def test_llm_needs_exactly_one_client(self):
        cfg = cfg_for(PolicySpec(kind="llm"))
        with pytest.raises(ConfigError, match="mock or endpoint"):
            run_experiment(cfg)

    def test_fixed_needs_value(self):
        cfg = cfg_for(PolicySpec(kind="fixed"))
        with pytest.raises(ConfigError, match="fixed_dbm"):
            run_experiment(cfg)

    def test_threshold_task_rejects_shots(self):
        cfg = cfg_for(
            PolicySpec(kind="llm", mock=MockRule.fixed_threshold(-70.0),
                       prompt=PromptConfig(task="threshold", shots=1)),
            task="threshold",
        )
        with pytest.raises(ConfigError, match="ap_select"):
            run_experiment(cfg)


class TestRunExperiment:
    def test_single_ap_legacy_baseline(self):
        synth = SynthConfig(num_aps=1, duration=50, base_dbm=-63.0, step_stddev=0.0)
        report = run_experiment(ExperimentConfig(policy=PolicySpec(kind="legacy"), synth=synth))
        assert report.metrics["handovers"] == 0
        assert report.metrics["avg_rssi_dbm"] == -63.0
        assert report.metrics["error_rate"] is None

    def test_reports_are_self_verifying(self):
        for kind in ("legacy", "heuristic", "opt_ho", "opt_rssi"):
            report = run_experiment(cfg_for(PolicySpec(kind=kind)))
            assert verify_report(report), kind

    def test_llm_report_is_self_verifying(self):
        report = run_experiment(cfg_for(PolicySpec(kind="llm", mock=MockRule.argmax_rssi())))
        assert verify_report(report)
        assert report.latency["count"] + report.latency["failures"] == len(
            report.completion_records
        )

    def test_opt_ho_dominates_legacy_over_seeds(self):
        for seed in range(0, 100, 10):
            base = dict(validity_floor=-100.0)
            opt = run_experiment(cfg_for(PolicySpec(kind="opt_ho"), seed=seed, **base))
            leg = run_experiment(cfg_for(PolicySpec(kind="legacy"), seed=seed, **base))
            assert opt.metrics["handovers"] <= leg.metrics["handovers"]

    def test_oracle_accuracy_metric(self):
        report = run_experiment(
            cfg_for(PolicySpec(kind="opt_ho"), score_against="opt_ho")
        )
        assert report.metrics["oracle_accuracy_pct"] == 100.0

    def test_deterministic_reports_modulo_wall_clock(self):
        cfg = cfg_for(PolicySpec(kind="llm", mock=MockRule.argmax_rssi()))
        a = run_experiment(cfg).to_dict()
        b = run_experiment(cfg).to_dict()
        assert strip_volatile(a) == strip_volatile(b)

    def test_threshold_run_records_adjustments(self):
        cfg = cfg_for(
            PolicySpec(kind="llm", mock=MockRule.fixed_threshold(-70.0)),
            task="threshold",
            interval=30,
            duration=120,
        )
        report = run_experiment(cfg)
        assert len(report.threshold_log) == 1 + (120 - 1) // 30
        assert all(e["value"] == -70.0 for e in report.threshold_log)

    def test_shots_require_holdout_split(self):
        cfg = cfg_for(
            PolicySpec(
                kind="llm",
                mock=MockRule.argmax_rssi(),
                prompt=PromptConfig(shots=1),
            ),
            duration=100,
        )
        report = run_experiment(cfg)
        assert report.scenario.endswith(":test")
        assert len(report.decision_log) == 20  # evaluated on the 20% block

    def test_report_write_and_read_roundtrip(self, tmp_path):
        cfg = cfg_for(PolicySpec(kind="legacy"), out_dir=str(tmp_path))
        report = run_experiment(cfg)
        path = tmp_path / "report_legacy.json"
        assert path.exists()
        loaded = read_report(str(path))
        assert loaded == report.to_dict()
        assert verify_report(loaded)


class _ConstantReplyHandler(BaseHTTPRequestHandler):
    reply_text = "ANSWER: AA:00:00:00:00:99"

    def do_POST(self):
        self.rfile.read(int(self.headers["Content-Length"]))
        data = json.dumps({"choices": [{"message": {"content": self.reply_text}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


class TestLiveEndpointIntegration:
    def test_llm_policy_over_real_http(self):
        server = ThreadingHTTPServer(("127.0.0.1", 0), _ConstantReplyHandler)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        try:
            endpoint = EndpointConfig(
                base_url=f"http://127.0.0.1:{server.server_address[1]}",
                model="m", timeout_ms=2000.0, backoff_ms=5.0,
            )
            report = run_experiment(
                cfg_for(PolicySpec(kind="llm", endpoint=endpoint), duration=60)
            )
            # every consulted step named an absent AP: all invalid, legacy fallback
            assert report.metrics["error_rate"] in (None, 1.0)
            assert report.latency["failures"] == 0
            assert verify_report(report)
        finally:
            server.shutdown()

    def test_dead_endpoint_raises_endpoint_error(self):
        endpoint = EndpointConfig(
            base_url="http://127.0.0.1:1", model="m",
            timeout_ms=200.0, max_retries=0, backoff_ms=1.0,
        )
        cfg = cfg_for(PolicySpec(kind="llm", endpoint=endpoint), duration=40)
        with pytest.raises(EndpointError):
            run_experiment(cfg)

    def test_external_policy_degrades_without_endpoint(self):
        cfg = cfg_for(
            PolicySpec(kind="external", external_url="http://127.0.0.1:1/decide"),
            duration=30,
        )
        report = run_experiment(cfg)
        assert report.metrics["handovers"] == 0
        assert verify_report(report)


class TestRecomputeMetrics:
    def test_matches_report_metrics(self):
        report = run_experiment(cfg_for(PolicySpec(kind="heuristic", seed=4)))
        rec = recompute_metrics(report.decision_log)
        assert rec["handovers"] == report.metrics["handovers"]
        assert rec["avg_rssi_dbm"] == report.metrics["avg_rssi_dbm"]
        assert rec["error_rate"] == report.metrics["error_rate"]

    def test_detects_tampering(self):
        report = run_experiment(cfg_for(PolicySpec(kind="legacy")))
        d = report.to_dict()
        d["metrics"] = dict(d["metrics"], handovers=d["metrics"]["handovers"] + 1)
        assert not verify_report(d)


class TestCompare:
    def test_three_policies_align(self):
        reports = [
            run_experiment(cfg_for(PolicySpec(kind=k), validity_floor=-100.0))
            for k in ("legacy", "opt_ho", "opt_rssi")
        ]
        table = compare(reports)
        assert len(table.rows) == 3
        by_policy = {r["policy"]: r for r in table.rows}
        assert by_policy["opt-ho"]["handovers"] == min(r["handovers"] for r in table.rows)
        assert by_policy["opt-rssi"]["avg_rssi_dbm"] == max(
            r["avg_rssi_dbm"] for r in table.rows
        )

    def test_single_report_rejected(self):
        report = run_experiment(cfg_for(PolicySpec(kind="legacy")))
        with pytest.raises(DataError, match="need >= 2"):
            compare([report])

    def test_cross_trace_comparison_rejected(self):
        a = run_experiment(cfg_for(PolicySpec(kind="legacy"), seed=1))
        b = run_experiment(cfg_for(PolicySpec(kind="legacy"), seed=2))
        with pytest.raises(DataError, match="trace hash mismatch"):
            compare([a, b])

    def test_metric_values_preserved_bit_exactly(self):
        a = run_experiment(cfg_for(PolicySpec(kind="legacy")))
        b = run_experiment(cfg_for(PolicySpec(kind="opt_rssi")))
        table = compare([a, b])
        assert table.rows[0]["avg_rssi_dbm"] == a.metrics["avg_rssi_dbm"]
        assert table.rows[1]["avg_rssi_dbm"] == b.metrics["avg_rssi_dbm"]
        csv_text = table.to_csv()
        cell = csv_text.splitlines()[1].split(",")[2]
        assert float(cell) == a.metrics["avg_rssi_dbm"]


class TestPlotData:
    def test_two_metric_csvs_plus_error_rate(self, tmp_path):
        reports = [
            run_experiment(cfg_for(PolicySpec(kind=k), validity_floor=-100.0))
            for k in ("legacy", "heuristic")
        ]
        table = compare(reports)
        paths = emit_plot_data(table, str(tmp_path))
        names = sorted(os.path.basename(p) for p in paths)
        assert "ho.csv" in names and "avg_rssi.csv" in names
        body = (tmp_path / "ho.csv").read_text()
        assert body.splitlines()[0] == "policy,scenario,value"

    def test_error_rate_csv_only_when_present(self, tmp_path):
        synth = SynthConfig(num_aps=1, duration=30, base_dbm=-60.0, step_stddev=0.0)
        report = run_experiment(ExperimentConfig(policy=PolicySpec(kind="legacy"), synth=synth))
        paths = emit_plot_data(report, str(tmp_path))
        names = {os.path.basename(p) for p in paths}
        assert names == {"ho.csv", "avg_rssi.csv"}  # no roams -> no error rate

    def test_reemit_is_byte_identical(self, tmp_path):
        report = run_experiment(cfg_for(PolicySpec(kind="legacy")))
        emit_plot_data(report, str(tmp_path / "a"))
        emit_plot_data(report, str(tmp_path / "b"))
        assert (tmp_path / "a" / "ho.csv").read_bytes() == (
            tmp_path / "b" / "ho.csv"
        ).read_bytes()


class TestSweep:
    def test_threshold_axis_runs_four_fixed_policies(self):
        template = cfg_for(PolicySpec(kind="legacy"))
        reports = sweep(template, "threshold")
        assert len(reports) == 4
        assert [r.axis["value"] for r in reports] == [-50.0, -60.0, -70.0, -80.0]
        assert all(r.policy.startswith("fixed(") for r in reports)
        hashes = {r.trace_hash for r in reports}
        assert len(hashes) == 1

    def test_interval_axis_invocation_counts(self):
        template = cfg_for(
            PolicySpec(kind="llm", mock=MockRule.fixed_threshold(-70.0)),
            task="threshold",
            duration=300,
        )
        reports = sweep(template, "interval")
        for report in reports:
            interval = report.axis["value"]
            assert report.latency["count"] == 1 + (300 - 1) // interval

    def test_context_axis_covers_all_rows(self):
        template = cfg_for(
            PolicySpec(kind="llm", mock=MockRule.argmax_rssi()), duration=60
        )
        reports = sweep(template, "context_fields")
        assert len(reports) == 5
        values = [tuple(sorted(r.axis["value"])) for r in reports]
        assert values[0] == ()
        assert values[-1] == ("battery", "location", "time")

    def test_shots_axis_shares_the_holdout_span(self):
        template = cfg_for(
            PolicySpec(kind="llm", mock=MockRule.argmax_rssi()), duration=100
        )
        reports = sweep(template, "shots")
        assert [r.axis["value"] for r in reports] == [0, 1, 5]
        assert len({r.trace_hash for r in reports}) == 1
        assert all(r.scenario.endswith(":test") for r in reports)

    def test_unknown_axis_rejected(self):
        with pytest.raises(ConfigError, match="unknown sweep axis"):
            sweep(cfg_for(PolicySpec(kind="legacy")), "nonsense")

    def test_axis_policy_conflicts_rejected(self):
        with pytest.raises(ConfigError, match="needs an llm policy"):
            sweep(cfg_for(PolicySpec(kind="legacy")), "shots")


class TestTraceHash:
    def test_hash_tracks_content(self):
        a = generate_synthetic(band_synth(seed=1, duration=20))
        b = generate_synthetic(band_synth(seed=2, duration=20))
        assert trace_content_hash(a) == trace_content_hash(a)
        assert trace_content_hash(a) != trace_content_hash(b)

    def test_gen_trace_bytes_are_stable(self):
        cfg = band_synth(seed=9, duration=30)
        assert trace_to_jsonl(generate_synthetic(cfg)) == trace_to_jsonl(
            generate_synthetic(cfg)
        )
