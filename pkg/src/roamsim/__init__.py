"""Trace-driven Wi-Fi roaming simulator and policy evaluation harness."""

from .agent import (
    FewShotExample,
    PromptConfig,
    ap_select_decide,
    build_prompt,
    build_shot_pool,
    parse_ap_response,
    parse_threshold_response,
    threshold_schedule_step,
)
from .errors import (
    ConfigError,
    DataError,
    EndpointError,
    OracleInfeasibleError,
    RoamsimError,
    SearchSpaceError,
    TraceFormatError,
)
from .export import export_preferences, export_sft, label_accuracy, split_trace
from .gateway import (
    CompletionRecord,
    EndpointConfig,
    HttpClient,
    LatencySummary,
    MockRule,
    complete,
    latency_stats,
    mock_model,
)
from .policies import (
    AssociationPlan,
    OracleConstraints,
    brute_force_plan,
    external_policy_adapter,
    fixed_threshold_policy,
    heuristic_decide,
    legacy_decide,
    oracle_opt_ho,
    oracle_opt_rssi,
    solve_plan,
)
from .roaming import (
    Action,
    AssociationState,
    PolicyDecision,
    RunTimeline,
    StepRecord,
    apply_decision,
    avg_rssi,
    error_rate,
    handover_count,
    passes_hysteresis,
    run_policy,
    should_scan,
)
from .runner import (
    ComparisonTable,
    ExperimentConfig,
    PolicySpec,
    RunReport,
    compare,
    emit_plot_data,
    run_experiment,
    sweep,
    verify_report,
)
from .trace import (
    ApObservation,
    ContextWindow,
    DeviceContext,
    ScanSample,
    SynthConfig,
    Trace,
    Violation,
    canonical_mac,
    generate_synthetic,
    parse_trace,
    trace_to_csv,
    trace_to_jsonl,
    validate_trace,
    window,
)

__version__ = "0.1.0"
