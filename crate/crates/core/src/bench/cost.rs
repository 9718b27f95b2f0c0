//! Annual serving-cost models.

use serde::{Deserialize, Serialize};

use super::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    SelfHosted,
    Api,
}

impl CostMode {
    pub fn name(self) -> &'static str {
        match self {
            CostMode::SelfHosted => "self_hosted",
            CostMode::Api => "api",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub mode: CostMode,
    /// Instance price, USD per hour.
    pub hourly_rate: f64,
    pub students: u64,
    pub predictions_per_student: u64,
    /// USD per million input tokens.
    pub input_price_per_m: Option<f64>,
    /// USD per million output tokens.
    pub output_price_per_m: Option<f64>,
    /// Mean tokens per request, used when no measured sample is available.
    pub mean_input_tokens: Option<f64>,
    pub mean_output_tokens: Option<f64>,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            mode: CostMode::SelfHosted,
            hourly_rate: 0.27,
            students: 100_000,
            predictions_per_student: 40,
            input_price_per_m: None,
            output_price_per_m: None,
            mean_input_tokens: None,
            mean_output_tokens: None,
        }
    }
}

impl CostModel {
    pub fn api(input_price_per_m: f64, output_price_per_m: f64) -> Self {
        Self {
            mode: CostMode::Api,
            input_price_per_m: Some(input_price_per_m),
            output_price_per_m: Some(output_price_per_m),
            ..Self::default()
        }
    }

    /// Requests a year under this model.
    pub fn annual_requests(&self) -> u64 {
        self.students * self.predictions_per_student
    }

    fn expect(&self, mode: CostMode) -> Result<(), BenchError> {
        if self.mode != mode {
            return Err(BenchError::ModeMismatch {
                expected: mode,
                got: self.mode,
            });
        }
        Ok(())
    }
}

/// `students × latency / 3600 × hourly_rate`.
pub fn self_hosted_cost(latency_per_student_s: f64, m: &CostModel) -> Result<f64, BenchError> {
    m.expect(CostMode::SelfHosted)?;
    if !(latency_per_student_s >= 0.0 && m.hourly_rate >= 0.0) {
        return Err(BenchError::Invalid(
            "latency and hourly rate must be non-negative".into(),
        ));
    }
    Ok(m.students as f64 * latency_per_student_s / 3600.0 * m.hourly_rate)
}

/// Token totals from a measured sample of requests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub requests: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Set when any count was estimated rather than reported.
    pub approximate: bool,
}

/// Cost of the sample, scaled linearly to the model's annual request count.
pub fn api_cost(usage: &TokenUsage, m: &CostModel) -> Result<f64, BenchError> {
    m.expect(CostMode::Api)?;
    let (pin, pout) = match (m.input_price_per_m, m.output_price_per_m) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(BenchError::MissingPricing),
    };
    if usage.requests == 0 {
        return Ok(0.0);
    }
    let sample = (usage.input_tokens as f64 * pin + usage.output_tokens as f64 * pout) / 1e6;
    Ok(sample / usage.requests as f64 * m.annual_requests() as f64)
}

/// Annual API cost from the configured per-request token means.
pub fn api_cost_from_means(m: &CostModel) -> Result<f64, BenchError> {
    m.expect(CostMode::Api)?;
    let (pin, pout) = match (m.input_price_per_m, m.output_price_per_m) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(BenchError::MissingPricing),
    };
    let (tin, tout) = match (m.mean_input_tokens, m.mean_output_tokens) {
        (Some(a), Some(b)) if a >= 0.0 && b >= 0.0 => (a, b),
        _ => {
            return Err(BenchError::Invalid(
                "mean token counts must be set and non-negative".into(),
            ))
        }
    };
    Ok((tin * pin + tout * pout) / 1e6 * m.annual_requests() as f64)
}

/// How many times cheaper the KT model is.
pub fn cost_ratio(kt_cost: f64, llm_cost: f64) -> Result<f64, BenchError> {
    if !(kt_cost > 0.0) {
        return Err(BenchError::DivideByZero);
    }
    Ok(llm_cost / kt_cost)
}
