"""Run orchestration: configuration, trace replay, reports, comparisons,
sweeps, and plot-data emission.

A run report embeds the full decision log, not just aggregates, so its
headline metrics can be recomputed from the log (reports are
self-verifying). Reports carry a content hash of the evaluated trace;
comparisons across different traces are refused. Everything except
wall-clock timing is deterministic for a fixed config with a mock client.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace

from .agent import (
    TASK_AP_SELECT,
    TASK_THRESHOLD,
    FewShotExample,
    PromptConfig,
    ap_select_decide,
    build_shot_pool,
    load_template,
    threshold_schedule_step,
)
from .errors import ConfigError, DataError, EndpointError
from .export import label_accuracy, split_trace
from .gateway import EndpointConfig, HttpClient, MockRule, latency_stats, mock_model
from .policies import (
    AssociationPlan,
    ExternalPolicy,
    HeuristicPolicy,
    LegacyPolicy,
    OracleConstraints,
    PlanPolicy,
    fixed_threshold_policy,
    oracle_opt_ho,
    oracle_opt_rssi,
)
from .roaming import (
    DEFAULT_SCAN_RSSI_DBM,
    HYSTERESIS_PRESETS,
    RunTimeline,
    avg_rssi,
    error_rate,
    handover_count,
    run_policy,
)
from .trace import SynthConfig, Trace, generate_synthetic, parse_trace, trace_to_jsonl

POLICY_KINDS = ("heuristic", "legacy", "fixed", "opt_ho", "opt_rssi", "llm", "external")

SWEEP_AXES: dict[str, list] = {
    "threshold": [-50.0, -60.0, -70.0, -80.0],
    "interval": [10, 30, 60, 120, 300],
    "shots": [0, 1, 5],
    "context_fields": [
        frozenset(),
        frozenset({"time", "battery"}),
        frozenset({"location", "battery"}),
        frozenset({"location", "time"}),
        frozenset({"location", "time", "battery"}),
    ],
}

VOLATILE_REPORT_FIELDS = ("wall_clock_ms",)


@dataclass(frozen=True)
class PolicySpec:
    """Which policy to evaluate and how to reach it."""

    kind: str
    seed: int = 0
    fixed_dbm: float | None = None
    prompt: PromptConfig | None = None
    mock: MockRule | None = None
    endpoint: EndpointConfig | None = None
    external_url: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; exactly one trace source must be set."""

    policy: PolicySpec
    trace_path: str | None = None
    synth: SynthConfig | None = None
    task: str = TASK_AP_SELECT
    scan_rssi: float = DEFAULT_SCAN_RSSI_DBM
    hysteresis: str = "off"
    validity_floor: float = DEFAULT_SCAN_RSSI_DBM
    window_k: int = 10
    interval: int | None = None
    score_against: str | None = None
    holdout: bool | None = None
    template_path: str | None = None
    out_dir: str | None = None
    label: str | None = None


@dataclass
class RunReport:
    """One run's config echo, metrics, latency summary, and decision log."""

    config: dict
    scenario: str
    task: str
    policy: str
    trace_hash: str
    seedprint: str
    metrics: dict
    latency: dict
    decision_log: list
    threshold_log: list
    wall_clock_ms: float
    axis: dict | None = None
    completion_records: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "scenario": self.scenario,
            "task": self.task,
            "policy": self.policy,
            "trace_hash": self.trace_hash,
            "seedprint": self.seedprint,
            "axis": self.axis,
            "metrics": self.metrics,
            "latency": self.latency,
            "decision_log": self.decision_log,
            "threshold_log": self.threshold_log,
            "wall_clock_ms": self.wall_clock_ms,
        }


def validate_config(cfg: ExperimentConfig) -> None:
    if (cfg.trace_path is None) == (cfg.synth is None):
        raise ConfigError("exactly one of trace_path or synth must be set")
    if cfg.task not in (TASK_AP_SELECT, TASK_THRESHOLD):
        raise ConfigError(f"unknown task {cfg.task!r}")
    if cfg.policy.kind not in POLICY_KINDS:
        raise ConfigError(f"unknown policy {cfg.policy.kind!r}")
    if cfg.hysteresis not in HYSTERESIS_PRESETS:
        raise ConfigError(f"unknown hysteresis preset {cfg.hysteresis!r}")
    if not -100.0 <= cfg.scan_rssi <= 0.0:
        raise ConfigError(f"scan_rssi out of range: {cfg.scan_rssi}")
    if not -100.0 <= cfg.validity_floor <= 0.0:
        raise ConfigError(f"validity_floor out of range: {cfg.validity_floor}")
    if cfg.window_k < 1:
        raise ConfigError("window_k must be >= 1")
    if cfg.task == TASK_AP_SELECT and cfg.interval is not None:
        raise ConfigError("interval only applies to the threshold task")
    if cfg.task == TASK_THRESHOLD:
        if cfg.policy.kind not in ("fixed", "llm"):
            raise ConfigError("threshold task supports only fixed and llm policies")
        if cfg.interval is not None and cfg.interval < 1:
            raise ConfigError("interval must be >= 1")
        if cfg.policy.prompt is not None and cfg.policy.prompt.shots > 0:
            raise ConfigError("worked examples are only available for the ap_select task")
    if cfg.policy.kind == "fixed":
        if cfg.policy.fixed_dbm is None:
            raise ConfigError("fixed policy needs fixed_dbm")
        if not -100.0 <= cfg.policy.fixed_dbm <= 0.0:
            raise ConfigError(f"fixed_dbm out of range: {cfg.policy.fixed_dbm}")
    if cfg.policy.kind == "llm":
        if (cfg.policy.mock is None) == (cfg.policy.endpoint is None):
            raise ConfigError("llm policy needs exactly one of mock or endpoint")
    if cfg.policy.kind == "external" and not cfg.policy.external_url:
        raise ConfigError("external policy needs external_url")
    if cfg.score_against not in (None, "opt_ho", "opt_rssi"):
        raise ConfigError(f"bad score_against {cfg.score_against!r}")


def load_trace_source(cfg: ExperimentConfig) -> tuple[Trace, str]:
    if cfg.synth is not None:
        return generate_synthetic(cfg.synth), f"synthetic-{cfg.synth.seed}"
    path = cfg.trace_path
    fmt = "csv" if str(path).endswith(".csv") else "jsonl"
    with open(path, "rb") as fh:
        trace = parse_trace(fh.read(), fmt)
    stem = os.path.splitext(os.path.basename(str(path)))[0]
    return trace, stem


def trace_content_hash(trace: Trace) -> str:
    return hashlib.sha256(trace_to_jsonl(trace).encode("utf-8")).hexdigest()


def _jsonable(value):
    if isinstance(value, frozenset):
        return sorted(value)
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    return value


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _jsonable(asdict(cfg))


def _seedprint(config_dict: dict, trace_hash: str) -> str:
    blob = json.dumps(config_dict, sort_keys=True) + trace_hash
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _policy_label(cfg: ExperimentConfig) -> str:
    spec = cfg.policy
    if spec.kind == "fixed":
        return f"fixed({spec.fixed_dbm:g})"
    if spec.kind == "heuristic":
        return f"heuristic(seed={spec.seed})"
    if spec.kind in ("opt_ho", "opt_rssi"):
        return spec.kind.replace("_", "-")
    return spec.kind


def _build_client(spec: PolicySpec):
    if spec.mock is not None:
        return mock_model(spec.mock)
    return HttpClient(spec.endpoint)


def _timeline_log(timeline: RunTimeline) -> list[dict]:
    out = []
    for s in timeline.steps:
        d = s.decision
        out.append(
            {
                "t": s.t,
                "bssid": s.bssid,
                "rssi": s.rssi,
                "action": d.action.value,
                "target": d.target,
                "value": d.value,
                "source": d.source,
                "valid": d.valid,
                "handover": s.handover,
                "fault": d.fault,
            }
        )
    return out


def recompute_metrics(decision_log: list[dict]) -> dict:
    """Headline metrics recomputed from a report's embedded decision log."""
    if not decision_log:
        raise DataError("empty decision log")
    bssids = [e["bssid"] for e in decision_log]
    ho = sum(1 for a, b in zip(bssids, bssids[1:]) if a != b)
    avg = sum(e["rssi"] for e in decision_log) / len(decision_log)
    attempts = [
        e
        for e in decision_log
        if e["action"] == "roam" or (e["valid"] is False and e["action"] == "stay")
    ]
    err = None
    if attempts:
        err = sum(1 for e in attempts if e["valid"] is False) / len(attempts)
    return {"handovers": ho, "avg_rssi_dbm": avg, "error_rate": err}


def verify_report(report: dict | RunReport) -> bool:
    """True when the report's metrics match a recomputation from its log."""
    d = report.to_dict() if isinstance(report, RunReport) else report
    rec = recompute_metrics(d["decision_log"])
    m = d["metrics"]
    return (
        rec["handovers"] == m["handovers"]
        and rec["avg_rssi_dbm"] == m["avg_rssi_dbm"]
        and rec["error_rate"] == m["error_rate"]
    )


def strip_volatile(report_dict: dict) -> dict:
    """Report view with wall-clock-derived data removed, for determinism checks."""
    out = {k: v for k, v in report_dict.items() if k not in VOLATILE_REPORT_FIELDS}
    lat = out.get("latency") or {}
    out["latency"] = {"count": lat.get("count"), "failures": lat.get("failures")}
    return out


def _oracle_plan(trace: Trace, objective: str, floor: float) -> AssociationPlan:
    constraints = OracleConstraints(validity_floor=floor)
    if objective == "opt_ho":
        return oracle_opt_ho(trace, constraints)
    return oracle_opt_rssi(trace, constraints)


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Replay the configured trace through the configured policy."""
    validate_config(cfg)
    start = time.perf_counter()
    full_trace, scenario = load_trace_source(cfg)

    spec = cfg.policy
    prompt_cfg = spec.prompt or PromptConfig(task=cfg.task, window_k=cfg.window_k)
    if prompt_cfg.task != cfg.task:
        prompt_cfg = replace(prompt_cfg, task=cfg.task)
    template = load_template(cfg.template_path) if cfg.template_path else None

    wants_shots = spec.kind == "llm" and prompt_cfg.shots > 0
    holdout = cfg.holdout if cfg.holdout is not None else wants_shots
    shots: tuple[FewShotExample, ...] = ()
    if holdout:
        train, eval_trace = split_trace(full_trace)
        if wants_shots:
            train_plan = _oracle_plan(train, "opt_ho", cfg.validity_floor)
            shots = build_shot_pool(
                train, train_plan, prompt_cfg, prompt_cfg.shots, spec.seed, template
            )
        scenario = f"{scenario}:test"
    else:
        if wants_shots:
            raise ConfigError("shots > 0 requires holdout evaluation")
        eval_trace = full_trace

    hysteresis = HYSTERESIS_PRESETS[cfg.hysteresis]
    client = None
    threshold_log: list[dict] = []
    interval = cfg.interval if cfg.interval is not None else 30

    if cfg.task == TASK_THRESHOLD and spec.kind == "llm":
        client = _build_client(spec)
        last_adjust: dict = {"t": None}

        def scheduler(t, win, state):
            now = win.latest.context.timestamp
            decision = threshold_schedule_step(
                now, last_adjust["t"], interval, win, state, prompt_cfg, client,
                template=template,
            )
            if decision is None:
                return state
            last_adjust["t"] = now
            threshold_log.append(
                {
                    "t": now,
                    "value": decision.value,
                    "valid": decision.valid is not False,
                    "fault": decision.fault,
                }
            )
            return replace(state, threshold=decision.value)

        timeline = run_policy(
            eval_trace,
            LegacyPolicy().decide,
            k=cfg.window_k,
            scan_rssi=cfg.scan_rssi,
            hysteresis=hysteresis,
            validity_floor=cfg.validity_floor,
            pre_decide=scheduler,
        )
    else:
        replay_floor = cfg.validity_floor
        initial = None
        if spec.kind == "heuristic":
            policy = HeuristicPolicy(spec.seed)
        elif spec.kind == "legacy":
            policy = LegacyPolicy()
        elif spec.kind == "fixed":
            policy = fixed_threshold_policy(spec.fixed_dbm)
        elif spec.kind in ("opt_ho", "opt_rssi"):
            plan = _oracle_plan(eval_trace, spec.kind, cfg.validity_floor)
            policy = PlanPolicy(eval_trace, plan, spec.kind.replace("_", "-"))
            # plan entries may sit below the floor on relaxed steps; replay
            # must still follow the plan
            replay_floor = -100.0
            initial = plan.plan[0]
        elif spec.kind == "llm":
            client = _build_client(spec)

            class _Llm:
                name = "llm"

                @staticmethod
                def decide(win, state):
                    return ap_select_decide(
                        win, state, prompt_cfg, client, shots, cfg.validity_floor,
                        template=template,
                    )

            policy = _Llm()
        else:
            policy = ExternalPolicy(spec.external_url)
        timeline = run_policy(
            eval_trace,
            policy.decide,
            k=cfg.window_k,
            scan_rssi=cfg.scan_rssi,
            hysteresis=hysteresis,
            validity_floor=replay_floor,
            initial=initial,
        )

    if client is not None and isinstance(client, HttpClient):
        summary = latency_stats(client.records)
        if summary.count == 0 and summary.failures > 0:
            raise EndpointError("completion endpoint never answered")

    metrics = {
        "handovers": handover_count(timeline),
        "avg_rssi_dbm": avg_rssi(timeline),
        "error_rate": error_rate(timeline),
    }
    if cfg.score_against is not None:
        ref = _oracle_plan(eval_trace, cfg.score_against, cfg.validity_floor)
        metrics["oracle_accuracy_pct"] = label_accuracy(
            [s.bssid for s in timeline.steps], ref
        )

    records = list(client.records) if client is not None else []
    config_dict = config_to_dict(cfg)
    trace_hash = trace_content_hash(eval_trace)
    report = RunReport(
        config=config_dict,
        scenario=scenario,
        task=cfg.task,
        policy=_policy_label(cfg),
        trace_hash=trace_hash,
        seedprint=_seedprint(config_dict, trace_hash),
        metrics=metrics,
        latency=latency_stats(records).to_dict(),
        decision_log=_timeline_log(timeline),
        threshold_log=threshold_log,
        wall_clock_ms=(time.perf_counter() - start) * 1000.0,
        completion_records=records,
    )
    if cfg.out_dir:
        write_report(report, cfg.out_dir)
    return report


def _safe_name(label: str) -> str:
    return re.sub(r"[^\w.+-]", "_", label)


def write_report(report: RunReport, out_dir: str) -> str:
    """Atomic JSON write (temp file + rename); returns the path."""
    os.makedirs(out_dir, exist_ok=True)
    suffix = ""
    if report.axis:
        suffix = f"_{_safe_name(str(report.axis['name']))}_{_safe_name(str(report.axis['value']))}"
    path = os.path.join(out_dir, f"report_{_safe_name(report.policy)}{suffix}.json")
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_report(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Comparison and plot data

@dataclass(frozen=True)
class ComparisonTable:
    """Aligned per-policy metrics over one shared trace."""

    trace_hash: str
    scenario: str
    rows: tuple[dict, ...]

    def to_csv(self) -> str:
        lines = ["policy,handovers,avg_rssi_dbm,error_rate,mean_latency_ms"]
        for r in self.rows:
            err = "" if r["error_rate"] is None else repr(r["error_rate"])
            lat = "" if r["mean_latency_ms"] is None else repr(r["mean_latency_ms"])
            lines.append(
                f"{r['policy']},{r['handovers']},{r['avg_rssi_dbm']!r},{err},{lat}"
            )
        return "\n".join(lines) + "\n"

    def render(self) -> str:
        headers = ("policy", "#HO", "AvgRSSI (dBm)", "ErrorRate", "mean latency (ms)")
        body = []
        for r in self.rows:
            body.append(
                (
                    r["policy"],
                    str(r["handovers"]),
                    f"{r['avg_rssi_dbm']:.2f}",
                    "-" if r["error_rate"] is None else f"{r['error_rate']:.4f}",
                    "-" if r["mean_latency_ms"] is None else f"{r['mean_latency_ms']:.1f}",
                )
            )
        widths = [max(len(h), *(len(row[i]) for row in body)) for i, h in enumerate(headers)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        lines = [fmt.format(*headers), fmt.format(*("-" * w for w in widths))]
        lines += [fmt.format(*row) for row in body]
        return "\n".join(lines)


def _table_rows(dicts) -> tuple[dict, ...]:
    return tuple(
        {
            "policy": d["policy"],
            "scenario": d["scenario"],
            "handovers": d["metrics"]["handovers"],
            "avg_rssi_dbm": d["metrics"]["avg_rssi_dbm"],
            "error_rate": d["metrics"]["error_rate"],
            "mean_latency_ms": (d.get("latency") or {}).get("mean_ms"),
        }
        for d in dicts
    )


def compare(reports) -> ComparisonTable:
    """Align reports over one trace; refuses mixed traces or fewer than 2."""
    dicts = [r.to_dict() if isinstance(r, RunReport) else r for r in reports]
    if len(dicts) < 2:
        raise DataError("need >= 2 reports to compare")
    hashes = {d["trace_hash"] for d in dicts}
    if len(hashes) > 1:
        raise DataError("trace hash mismatch: reports come from different traces")
    return ComparisonTable(
        trace_hash=dicts[0]["trace_hash"],
        scenario=dicts[0]["scenario"],
        rows=_table_rows(dicts),
    )


def emit_plot_data(obj, out_dir: str) -> list[str]:
    """Write tidy per-metric CSVs (policy,scenario,value); returns the paths."""
    if isinstance(obj, (RunReport, dict)):
        d = obj.to_dict() if isinstance(obj, RunReport) else obj
        obj = ComparisonTable(
            trace_hash=d["trace_hash"], scenario=d["scenario"], rows=_table_rows([d])
        )
    os.makedirs(out_dir, exist_ok=True)
    metric_files = [("handovers", "ho.csv"), ("avg_rssi_dbm", "avg_rssi.csv")]
    if any(r["error_rate"] is not None for r in obj.rows):
        metric_files.append(("error_rate", "error_rate.csv"))
    paths = []
    for metric, fname in metric_files:
        path = os.path.join(out_dir, fname)
        lines = ["policy,scenario,value"]
        for r in obj.rows:
            value = r[metric]
            if value is None:
                continue
            lines.append(f"{r['policy']},{r['scenario']},{value!r}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# Sweeps

def sweep(template: ExperimentConfig, axis: str, values=None) -> list[RunReport]:
    """One run per axis value over a shared trace and seed."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; known: {sorted(SWEEP_AXES)}")
    values = list(SWEEP_AXES[axis]) if values is None else list(values)
    if not values:
        raise ConfigError("sweep needs at least one axis value")
    reports = []
    for value in values:
        cfg = _apply_axis(template, axis, value)
        report = run_experiment(replace(cfg, out_dir=None))
        report.axis = {"name": axis, "value": _jsonable(value)}
        if cfg.out_dir:
            write_report(report, cfg.out_dir)
        reports.append(report)
    return reports


def _apply_axis(template: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    spec = template.policy
    if axis == "threshold":
        return replace(
            template, policy=replace(spec, kind="fixed", fixed_dbm=float(value))
        )
    if axis == "interval":
        if template.task != TASK_THRESHOLD or spec.kind != "llm":
            raise ConfigError("interval sweep needs task=threshold and an llm policy")
        return replace(template, interval=int(value))
    prompt = spec.prompt or PromptConfig(task=template.task, window_k=template.window_k)
    if spec.kind != "llm":
        raise ConfigError(f"{axis} sweep needs an llm policy")
    if axis == "shots":
        cfg = replace(template, policy=replace(spec, prompt=replace(prompt, shots=int(value))))
        # all runs share the held-out evaluation span so they stay comparable
        return replace(cfg, holdout=True)
    if axis == "context_fields":
        fields = frozenset(value)
        return replace(
            template, policy=replace(spec, prompt=replace(prompt, context_fields=fields))
        )
    raise ConfigError(f"unknown sweep axis {axis!r}")
