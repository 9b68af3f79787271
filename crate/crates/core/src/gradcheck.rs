//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    /// Denominator floor: errors are `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Entries checked per parameter tensor; `None` checks all of them.
    pub per_tensor: Option<usize>,
    /// Step-`h` and step-`h/2` slopes, or second differences rescaled to the
    /// same step, that disagree by more than this (relative, with the same
    /// floor) straddle a kink. The step is then divided by ten up to
    /// `retries` times before the entry is skipped.
    /// `None` keeps every entry at the first step.
    pub kink_tolerance: Option<f64>,
    pub retries: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-5,
            per_tensor: None,
            kink_tolerance: None,
            retries: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Entries left out because every step straddled a kink.
    pub skipped: usize,
    pub max_error: f64,
    pub worst: Option<Mismatch>,
}

/// Compares `analytic` against central differences of `loss` around
/// `params`.
pub fn check_gradients<F>(params: &ParamStore, analytic: &Gradients, mut loss: F, opts: &GradCheck) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut work = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let base = loss(params)?;
    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = params.value(id).len();
        let indices: Vec<usize> = match opts.per_tensor {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for i in indices {
            let orig = params.value(id).data()[i];
            let scale = |a: f64, b: f64| a.abs().max(b.abs()).max(opts.floor);
            let mut numeric = None;
            for shrink in 0..=opts.retries {
                let h = opts.step / 10f64.powi(shrink as i32);
                let mut at = |x: f64| {
                    work.get_mut(id).value.data_mut()[i] = x;
                    loss(&work)
                };
                let (wu, wd) = (at(orig + h)?, at(orig - h)?);
                let (nu, nd) = (at(orig + h / 2.0)?, at(orig - h / 2.0)?);
                let (dw, dn) = ((wu - wd) / (2.0 * h), (nu - nd) / h);
                // a smooth function has matching slopes and second differences
                // that scale with h²; a kink near `orig` breaks one or the other
                let curvature = ((wu - 2.0 * base + wd) - 4.0 * (nu - 2.0 * base + nd)).abs() / h;
                let smooth = |tol: f64| (dw - dn).abs().max(curvature) <= tol * scale(dw, dn);
                if opts.kink_tolerance.is_none_or(smooth) {
                    // fourth-order central difference
                    numeric = Some((8.0 * (nu - nd) - (wu - wd)) / (6.0 * h));
                    break;
                }
            }
            work.get_mut(id).value.data_mut()[i] = orig;
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            let a = analytic.get(id).data()[i];
            let error = (a - numeric).abs() / scale(a, numeric);
            report.checked += 1;
            if error > report.max_error || report.worst.is_none() {
                report.max_error = report.max_error.max(error);
                report.worst = Some(Mismatch {
                    parameter: params.get(id).name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    error,
                });
            }
        }
    }
    Ok(report)
}
