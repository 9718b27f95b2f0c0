//! Latency measurement, cost accounting and result reports.

mod cost;
mod latency;
mod report;

use thiserror::Error;

pub use cost::{
    api_cost, api_cost_from_means, cost_ratio, self_hosted_cost, CostMode, CostModel, TokenUsage,
};
pub use latency::{measure_full_pass, measure_latency, quantile, LatencyConfig, LatencyReport};
pub use report::{
    emit_report, read_results_csv, render_report_md, render_scatter_svg, scatter_axes,
    write_results_csv, BenchReport, LogAxis, RESULTS_HEADER,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cost model is in {got:?} mode, expected {expected:?}")]
    ModeMismatch { expected: CostMode, got: CostMode },
    #[error("api mode requires input and output token prices")]
    MissingPricing,
    #[error("KT cost must be positive to form a ratio")]
    DivideByZero,
    #[error("no results to report")]
    EmptyResults,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
