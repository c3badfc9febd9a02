"""Adaptive conformal prediction intervals for multivariate demand streams."""

__version__ = "0.1.0"

from .adaptation import (
    AdaptHyperParams,
    RegionAdaptState,
    alpha_drift_bounds,
    coverage_error,
    per_flow_error,
    update_alpha_adaptive,
    update_alpha_fixed,
    update_moment,
)
from .errors import (
    ConfigError,
    ContinaError,
    DataFormatError,
    EmptyCalibrationError,
    LedgerError,
    MissingForecastError,
    NotFittedError,
)
from .harness import (
    ExperimentConfig,
    RunResult,
    ingest_csv,
    report_from_dir,
    run_replay,
    verify_audit,
    write_report,
)
from .intervals import (
    PredictionInterval,
    QuantileForecast,
    build_interval_cp,
    build_interval_qcp,
    conformity_score,
    contains,
    interval_length,
)
from .metrics import (
    BoundParams,
    RunLedger,
    average_coverage,
    coverage_gap_constant,
    daily_regional_stats,
    mean_length,
    min_regional_coverage,
    worst_region_bound,
)
from .predictors import (
    FileBackedForecasts,
    OnlinePinballLinearPredictor,
    PredictorSpec,
    SeasonalWindowPredictor,
    make_predictor,
    pinball_loss_high,
    pinball_loss_low,
)
from .streams import (
    DemandStream,
    Observation,
    StreamSpec,
    generate,
    read_demand_csv,
    region_filter,
    split,
    write_demand_csv,
)
from .tracker import ConformalIntervalTracker, StepOutcome
from .windows import CalibrationWindow, QuantileResult, quantile_rank

__all__ = [
    "AdaptHyperParams",
    "BoundParams",
    "CalibrationWindow",
    "ConfigError",
    "ConformalIntervalTracker",
    "ContinaError",
    "DataFormatError",
    "DemandStream",
    "EmptyCalibrationError",
    "ExperimentConfig",
    "FileBackedForecasts",
    "LedgerError",
    "MissingForecastError",
    "NotFittedError",
    "Observation",
    "OnlinePinballLinearPredictor",
    "PredictionInterval",
    "PredictorSpec",
    "QuantileForecast",
    "QuantileResult",
    "RegionAdaptState",
    "RunLedger",
    "RunResult",
    "SeasonalWindowPredictor",
    "StepOutcome",
    "StreamSpec",
    "alpha_drift_bounds",
    "average_coverage",
    "build_interval_cp",
    "build_interval_qcp",
    "conformity_score",
    "contains",
    "coverage_error",
    "coverage_gap_constant",
    "daily_regional_stats",
    "generate",
    "ingest_csv",
    "interval_length",
    "make_predictor",
    "mean_length",
    "min_regional_coverage",
    "per_flow_error",
    "pinball_loss_high",
    "pinball_loss_low",
    "quantile_rank",
    "read_demand_csv",
    "region_filter",
    "report_from_dir",
    "run_replay",
    "split",
    "update_alpha_adaptive",
    "update_alpha_fixed",
    "update_moment",
    "verify_audit",
    "worst_region_bound",
    "write_demand_csv",
    "write_report",
]
