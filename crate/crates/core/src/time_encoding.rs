//! Functional time encoding.
//!
//! A period `ω` and non-negative Fourier weights `c_0, c_1, …, c_J` map a
//! time `t` to
//!
//! ```text
//! [√c_0, √c_1 cos(πt/ω), √c_1 sin(πt/ω), …, √c_J cos(Jπt/ω), √c_J sin(Jπt/ω)]
//! ```
//!
//! The cosine and sine entries of each harmonic share one weight, so
//! `⟨Φ(t1), Φ(t2)⟩ = c_0 + Σ_j c_j cos(jπ(t1 − t2)/ω)` depends only on
//! `t1 − t2`. Several periods are concatenated into one vector of length
//! `d · k`, where `d = 2J + 1` entries per period and `k` periods.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Constraint, Graph, NodeId, ParamId, ParamStore, Tensor};

pub const HOUR: f64 = 3600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeEncodingConfig {
    /// Periods `ω_1..ω_k` in seconds.
    pub periods: Vec<f64>,
    /// Entries per period; must be odd so that every harmonic is complete.
    pub d: usize,
    /// Optional `k × (d+1)/2` weights `c_j`; defaults to `1/(J+1)` each.
    pub coefficients: Option<Vec<Vec<f64>>>,
    pub learnable: bool,
}

impl Default for TimeEncodingConfig {
    fn default() -> Self {
        Self {
            periods: vec![HOUR, 6.0 * HOUR, 24.0 * HOUR, 168.0 * HOUR],
            d: 5,
            coefficients: None,
            learnable: true,
        }
    }
}

impl TimeEncodingConfig {
    pub fn k(&self) -> usize {
        self.periods.len()
    }

    pub fn harmonics(&self) -> usize {
        (self.d - 1) / 2
    }

    pub fn dim(&self) -> usize {
        self.d * self.k()
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods.is_empty() {
            return Err(Error::Config("time encoding needs at least one period".into()));
        }
        if let Some(bad) = self.periods.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("time encoding period must be positive, got {bad}")));
        }
        if self.d == 0 || self.d.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "time encoding d must be odd (constant plus complete cos/sin pairs), got {}",
                self.d
            )));
        }
        if let Some(c) = &self.coefficients {
            if c.len() != self.k() || c.iter().any(|row| row.len() != self.harmonics() + 1) {
                return Err(Error::Config(format!(
                    "time encoding coefficients must be {} rows of {} weights",
                    self.k(),
                    self.harmonics() + 1
                )));
            }
            if c.iter().flatten().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::Config("time encoding coefficients must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Weights per period, filling in the default when none are configured.
    pub fn coefficient_rows(&self) -> Vec<Vec<f64>> {
        match &self.coefficients {
            Some(c) => c.clone(),
            None => {
                let n = self.harmonics() + 1;
                vec![vec![1.0 / n as f64; n]; self.k()]
            }
        }
    }
}

/// Encoding of a single period. The output has `2·coeffs.len() − 1` entries.
pub fn encode_frequency(t: f64, period: f64, coeffs: &[f64]) -> Result<Vec<f64>> {
    if !(period > 0.0) {
        return Err(Error::contract(format!("period must be positive, got {period}")));
    }
    if coeffs.is_empty() {
        return Err(Error::contract("at least the constant coefficient is required"));
    }
    let mut out = Vec::with_capacity(2 * coeffs.len() - 1);
    out.push(coeffs[0].sqrt());
    for (j, &c) in coeffs.iter().enumerate().skip(1) {
        let arg = j as f64 * PI * t / period;
        let a = c.sqrt();
        out.push(a * arg.cos());
        out.push(a * arg.sin());
    }
    Ok(out)
}

/// Concatenated encoding over every configured period.
pub fn encode(t: f64, config: &TimeEncodingConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let rows = config.coefficient_rows();
    let mut out = Vec::with_capacity(config.dim());
    for (&w, c) in config.periods.iter().zip(&rows) {
        out.extend(encode_frequency(t, w, c)?);
    }
    Ok(out)
}

/// `⟨Φ(t1), Φ(t2)⟩` evaluated as an inner product of the two encodings.
pub fn kernel_value(t1: f64, t2: f64, config: &TimeEncodingConfig) -> Result<f64> {
    let a = encode(t1, config)?;
    let b = encode(t2, config)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x * y).sum())
}

/// The same kernel in closed form, `Σ_ω [c_0 + Σ_j c_j cos(jπ(t1−t2)/ω)]`.
pub fn kernel_closed_form(t1: f64, t2: f64, config: &TimeEncodingConfig) -> Result<f64> {
    config.validate()?;
    let mut total = 0.0;
    for (&w, c) in config.periods.iter().zip(config.coefficient_rows()) {
        total += c[0];
        for (j, &cj) in c.iter().enumerate().skip(1) {
            total += cj * (j as f64 * PI * (t1 - t2) / w).cos();
        }
    }
    Ok(total)
}

/// Graph-side time encoder. Learnable encoders keep `ln ω` (free) and the
/// amplitudes `√c` (non-negative) in the parameter store; fixed encoders
/// feed them as constants.
#[derive(Debug, Clone)]
pub enum TimeEncoder {
    Learnable { log_period: ParamId, amplitude: ParamId },
    Fixed { log_period: Tensor, amplitude: Tensor },
}

impl TimeEncoder {
    pub fn new(config: &TimeEncodingConfig, params: &mut ParamStore, prefix: &str) -> Result<Self> {
        config.validate()?;
        let (log_period, amplitude) = Self::tensors(config);
        Ok(if config.learnable {
            TimeEncoder::Learnable {
                log_period: params.insert(format!("{prefix}.log_period"), log_period, Constraint::Free),
                amplitude: params.insert(format!("{prefix}.amplitude"), amplitude, Constraint::NonNegative),
            }
        } else {
            TimeEncoder::Fixed { log_period, amplitude }
        })
    }

    /// Rebinds to parameters already present in a loaded store.
    pub fn bind(config: &TimeEncodingConfig, params: &ParamStore, prefix: &str) -> Result<Self> {
        config.validate()?;
        if !config.learnable {
            let (log_period, amplitude) = Self::tensors(config);
            return Ok(TimeEncoder::Fixed { log_period, amplitude });
        }
        let find = |n: &str| {
            params
                .id(&format!("{prefix}.{n}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {prefix}.{n}")))
        };
        Ok(TimeEncoder::Learnable {
            log_period: find("log_period")?,
            amplitude: find("amplitude")?,
        })
    }

    fn tensors(config: &TimeEncodingConfig) -> (Tensor, Tensor) {
        let lp = Tensor::vector(config.periods.iter().map(|w| w.ln()).collect());
        let rows = config.coefficient_rows();
        let width = config.harmonics() + 1;
        let amp = Tensor::matrix(config.k(), width, rows.iter().flatten().map(|c| c.sqrt()).collect());
        (lp, amp)
    }

    /// `n × (d·k)` matrix encoding each interval.
    pub fn encode_graph(&self, g: &mut Graph<'_>, intervals: &[f64]) -> NodeId {
        let (lp, amp) = match self {
            TimeEncoder::Learnable { log_period, amplitude } => (g.param(*log_period), g.param(*amplitude)),
            TimeEncoder::Fixed { log_period, amplitude } => (g.input(log_period.clone()), g.input(amplitude.clone())),
        };
        g.time_encode(intervals, lp, amp)
    }

    /// The current periods and weights as a plain configuration.
    pub fn effective_config(&self, params: &ParamStore) -> TimeEncodingConfig {
        let (lp, amp) = match self {
            TimeEncoder::Learnable { log_period, amplitude } => (params.value(*log_period), params.value(*amplitude)),
            TimeEncoder::Fixed { log_period, amplitude } => (log_period, amplitude),
        };
        let width = amp.cols();
        TimeEncodingConfig {
            periods: lp.data().iter().map(|v| v.exp()).collect(),
            d: 2 * width - 1,
            coefficients: Some((0..amp.rows()).map(|r| amp.row(r).iter().map(|a| a * a).collect()).collect()),
            learnable: matches!(self, TimeEncoder::Learnable { .. }),
        }
    }
}

/// Random positive periods and weights, for property tests and examples.
pub fn random_config<R: Rng>(rng: &mut R, k: usize, d: usize) -> TimeEncodingConfig {
    let width = (d - 1) / 2 + 1;
    TimeEncodingConfig {
        periods: (0..k).map(|_| rng.gen_range(0.1..200.0)).collect(),
        d,
        coefficients: Some((0..k).map(|_| (0..width).map(|_| rng.gen_range(0.0..2.0)).collect()).collect()),
        learnable: false,
    }
}
