//! Forecast accuracy metrics and the persistence baseline.
//!
//! Predictions and truths are row-major `S × n` slices (one row per sample).
//!
//! * RSE: `sqrt(Σ(y − ŷ)²) / sqrt(Σ(y − ȳ)²)` with `ȳ` the grand mean of truth.
//! * RAE: `Σ|y − ŷ| / Σ|y − ȳ|`.
//! * CORR: Pearson correlation per variable across samples, averaged over
//!   the variables whose truth varies. A variable whose truth is constant is
//!   excluded (reported as NaN); a constant prediction against varying truth
//!   contributes 0.

use alloc::format;
use alloc::vec::Vec;

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::math;

fn check(pred: &[f64], truth: &[f64], n: usize) -> Result<usize> {
    if n == 0 || truth.len() % n != 0 {
        return Err(Error::Dimension(format!(
            "{} truth values do not form rows of {n}",
            truth.len()
        )));
    }
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} truth values",
            pred.len(),
            truth.len()
        )));
    }
    let samples = truth.len() / n;
    if samples < 2 {
        return Err(Error::UndefinedMetric("at least two samples are required"));
    }
    Ok(samples)
}

fn grand_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn metric_rse(pred: &[f64], truth: &[f64], n: usize) -> Result<f64> {
    check(pred, truth, n)?;
    let mean = grand_mean(truth);
    let spread: f64 = truth.iter().map(|y| (y - mean) * (y - mean)).sum();
    if spread == 0.0 {
        return Err(Error::UndefinedMetric("rse: truth is constant"));
    }
    let err: f64 = pred.iter().zip(truth).map(|(p, y)| (y - p) * (y - p)).sum();
    Ok(math::sqrt(err) / math::sqrt(spread))
}

pub fn metric_rae(pred: &[f64], truth: &[f64], n: usize) -> Result<f64> {
    check(pred, truth, n)?;
    let mean = grand_mean(truth);
    let spread: f64 = truth.iter().map(|y| math::abs(y - mean)).sum();
    if spread == 0.0 {
        return Err(Error::UndefinedMetric("rae: truth is constant"));
    }
    let err: f64 = pred.iter().zip(truth).map(|(p, y)| math::abs(y - p)).sum();
    Ok(err / spread)
}

/// Mean correlation and the per-variable correlations (NaN where excluded).
pub fn metric_corr(pred: &[f64], truth: &[f64], n: usize) -> Result<(f64, Vec<f64>)> {
    let samples = check(pred, truth, n)?;
    let mut per_variable = Vec::with_capacity(n);
    let (mut total, mut included) = (0.0, 0usize);
    for j in 0..n {
        let column = |v: &[f64]| (0..samples).map(move |s| v[s * n + j]).collect::<Vec<f64>>();
        let (p, y) = (column(pred), column(truth));
        let (mp, my) = (grand_mean(&p), grand_mean(&y));
        let (mut cov, mut vp, mut vy) = (0.0, 0.0, 0.0);
        for (a, b) in p.iter().zip(&y) {
            cov += (a - mp) * (b - my);
            vp += (a - mp) * (a - mp);
            vy += (b - my) * (b - my);
        }
        let r = if vy == 0.0 {
            f64::NAN
        } else if vp == 0.0 {
            0.0
        } else {
            (cov / (math::sqrt(vp) * math::sqrt(vy))).clamp(-1.0, 1.0)
        };
        if !r.is_nan() {
            total += r;
            included += 1;
        }
        per_variable.push(r);
    }
    if included == 0 {
        return Err(Error::UndefinedMetric("corr: every variable's truth is constant"));
    }
    Ok((total / included as f64, per_variable))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rse: f64,
    pub rae: f64,
    pub corr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastReport {
    pub horizon: usize,
    pub rse: f64,
    pub rae: f64,
    pub corr: f64,
    pub per_variable_corr: Vec<f64>,
    pub n_samples: usize,
}

impl ForecastReport {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            rse: self.rse,
            rae: self.rae,
            corr: self.corr,
        }
    }
}

/// Scores `S × n` predictions against truth.
pub fn score(pred: &[f64], truth: &[f64], n: usize, horizon: usize) -> Result<ForecastReport> {
    let rse = metric_rse(pred, truth, n)?;
    let rae = metric_rae(pred, truth, n)?;
    let (corr, per_variable_corr) = metric_corr(pred, truth, n)?;
    Ok(ForecastReport {
        horizon,
        rse,
        rae,
        corr,
        per_variable_corr,
        n_samples: truth.len() / n,
    })
}

/// Stacks sample targets into a row-major `S × n` buffer.
pub fn targets(samples: &[WindowSample]) -> Vec<f64> {
    samples.iter().flat_map(|s| s.target.iter().copied()).collect()
}

/// Multiplies each column of a row-major `S × n` buffer by its scale.
pub fn rescale_rows(values: &mut [f64], scales: &[f64]) {
    for row in values.chunks_mut(scales.len()) {
        for (v, s) in row.iter_mut().zip(scales) {
            *v *= s;
        }
    }
}

/// Forecasts `x_{t+h} = x_t` and scores it in original units.
pub fn persistence_baseline(
    samples: &[WindowSample],
    n: usize,
    horizon: usize,
    scales: &[f64],
) -> Result<ForecastReport> {
    if samples.is_empty() {
        return Err(Error::Contract("persistence baseline needs at least one sample".into()));
    }
    if scales.len() != n {
        return Err(Error::Dimension(format!("{} scales for {n} variables", scales.len())));
    }
    let mut pred: Vec<f64> = samples.iter().flat_map(|s| s.last_observed(n)).collect();
    let mut truth = targets(samples);
    rescale_rows(&mut pred, scales);
    rescale_rows(&mut truth, scales);
    score(&pred, &truth, n, horizon)
}
